use std::collections::VecDeque;

use super::PEnergy;
use crate::error::{Error, Result};
use crate::fields::CompensatedSum;

/// Weighted graph with node measures and edge conductances.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub measures: Vec<f64>,
    pub edges: Vec<(usize, usize, f64)>,
}

impl Graph {
    pub fn new(measures: Vec<f64>, edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        let graph = Self { measures, edges };
        graph.validate()?;
        Ok(graph)
    }

    pub fn len(&self) -> usize {
        self.measures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measures.is_empty()
    }

    /// Cycle on `n` nodes with unit measures and conductances.
    pub fn cycle(n: usize) -> Result<Self> {
        let edges = (0..n).map(|i| (i, (i + 1) % n, 1.0)).collect();
        Self::new(vec![1.0; n], edges)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n < 2 {
            return Err(Error::Graph(format!("need at least 2 nodes, got {n}")));
        }
        if let Some(m) = self.measures.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
            return Err(Error::Graph(format!("node measure {m} must be positive")));
        }
        for &(i, j, w) in &self.edges {
            if i >= n || j >= n {
                return Err(Error::Graph(format!("edge ({i}, {j}) references a node outside 0..{n}")));
            }
            if i == j {
                return Err(Error::Graph(format!("self-loop at node {i}")));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::Graph(format!("edge ({i}, {j}) weight {w} must be positive")));
            }
        }
        let mut adj = vec![Vec::new(); n];
        for &(i, j, _) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(Error::Graph(format!("graph is disconnected (node {k} unreachable from 0)")));
        }
        Ok(())
    }

    /// Parses the plain-text format: node count, a line of node measures,
    /// then one `i j weight` line per edge. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(k, l)| (k + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (ln, first) = lines.next().ok_or_else(|| Error::Graph("empty graph file".into()))?;
        let n: usize = first
            .parse()
            .map_err(|_| Error::Graph(format!("line {ln}: expected node count, got {first:?}")))?;
        let (ln, mline) = lines
            .next()
            .ok_or_else(|| Error::Graph("missing line of node measures".into()))?;
        let measures = mline
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Graph(format!("line {ln}: bad node measure ({e})")))?;
        if measures.len() != n {
            return Err(Error::Graph(format!(
                "line {ln}: {} measures for {n} nodes",
                measures.len()
            )));
        }
        let mut edges = Vec::new();
        for (ln, l) in lines {
            let toks: Vec<&str> = l.split_whitespace().collect();
            if toks.len() != 3 {
                return Err(Error::Graph(format!("line {ln}: expected \"i j weight\", got {l:?}")));
            }
            let bad = |what: &str| Error::Graph(format!("line {ln}: bad {what} in {l:?}"));
            let i: usize = toks[0].parse().map_err(|_| bad("node index"))?;
            let j: usize = toks[1].parse().map_err(|_| bad("node index"))?;
            let w: f64 = toks[2].parse().map_err(|_| bad("weight"))?;
            edges.push((i, j, w));
        }
        Self::new(measures, edges)
    }
}

/// `E(f) = Σ_e w_e (|f_i - f_j|² + ε²)^{p/2}` on a graph.
#[derive(Debug, Clone)]
pub struct GraphEnergy {
    graph: Graph,
    p: f64,
    eps: f64,
}

impl GraphEnergy {
    pub fn new(graph: &Graph, p: f64, epsilon: f64) -> Result<Self> {
        graph.validate()?;
        if !(p.is_finite() && p > 1.0) {
            return Err(Error::InvalidParameter(format!("p = {p} must be finite and > 1")));
        }
        Ok(Self {
            graph: graph.clone(),
            p,
            eps: epsilon,
        })
    }
}

impl PEnergy for GraphEnergy {
    fn len(&self) -> usize {
        self.graph.len()
    }

    fn p(&self) -> f64 {
        self.p
    }

    fn epsilon(&self) -> f64 {
        self.eps
    }

    fn measures(&self) -> &[f64] {
        &self.graph.measures
    }

    fn energy(&self, f: &[f64]) -> f64 {
        let mut acc = CompensatedSum::new();
        for &(i, j, w) in &self.graph.edges {
            let d = f[i] - f[j];
            acc.add(w * (d * d + self.eps * self.eps).powf(0.5 * self.p));
        }
        acc.value()
    }

    fn energy_grad(&self, f: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut acc = CompensatedSum::new();
        for &(i, j, w) in &self.graph.edges {
            let d = f[i] - f[j];
            let q = d * d + self.eps * self.eps;
            if q == 0.0 {
                continue;
            }
            let dens = q.powf(0.5 * self.p);
            acc.add(w * dens);
            let g = w * self.p * dens / q * d;
            grad[i] += g;
            grad[j] -= g;
        }
        acc.value()
    }

    fn with_p(&self, p: f64) -> Self {
        Self { p, ..self.clone() }
    }
}

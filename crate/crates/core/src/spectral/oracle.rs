//! Independent reference values: dense symmetric eigendecompositions for
//! `p = 2` and a multi-start Nelder-Mead search of the graph p-Rayleigh
//! quotient. Nothing here shares code with the eigensolver.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::Graph;
use crate::error::{Error, Result};
use crate::fields::TorusGeometry;

const MAX_ORACLE_NODES: usize = 6;
const STARTS: usize = 48;

fn sorted_eigenvalues(a: DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(a).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Second-smallest eigenvalue of `K v = λ M v` for a graph at `p = 2`.
pub fn dense_p2_eigenvalue(graph: &Graph) -> Result<f64> {
    graph.validate()?;
    let n = graph.len();
    let mut k = DMatrix::<f64>::zeros(n, n);
    for &(i, j, w) in &graph.edges {
        k[(i, i)] += w;
        k[(j, j)] += w;
        k[(i, j)] -= w;
        k[(j, i)] -= w;
    }
    let s: Vec<f64> = graph.measures.iter().map(|m| 1.0 / m.sqrt()).collect();
    let c = DMatrix::from_fn(n, n, |i, j| s[i] * k[(i, j)] * s[j]);
    Ok(sorted_eigenvalues(c)[1])
}

/// First nonzero eigenvalue of the flat 5-point Laplacian on an
/// `nx × ny` torus, from dense eigendecompositions of the two 1D circulant
/// factors (the 2D operator is their Kronecker sum).
pub fn flat_torus_dense_eigenvalue(nx: usize, ny: usize, lx: f64, ly: f64) -> f64 {
    let circulant = |n: usize, h: f64| {
        let mut a = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            a[(i, i)] += 2.0 / (h * h);
            a[(i, (i + 1) % n)] -= 1.0 / (h * h);
            a[(i, (i + n - 1) % n)] -= 1.0 / (h * h);
        }
        sorted_eigenvalues(a)
    };
    let ex = circulant(nx, lx / nx as f64);
    let ey = circulant(ny, ly / ny as f64);
    let mut best = f64::INFINITY;
    for a in &ex {
        for b in &ey {
            let s = a + b;
            if s > 1e-9 && s < best {
                best = s;
            }
        }
    }
    best
}

/// Dense `p = 2` eigenvalue of a small weighted torus, assembled edge by
/// edge from the conservative stencil (each edge carries the mean of the
/// two adjacent cells' `e^{-φ_c}`).
pub fn dense_torus_p2_eigenvalue(geom: &TorusGeometry) -> Result<f64> {
    geom.validate()?;
    let (nx, ny) = (geom.nx(), geom.ny());
    let (hx, hy) = (geom.hx(), geom.hy());
    let n = nx * ny;
    let id = |i: isize, j: isize| (j.rem_euclid(ny as isize) as usize) * nx + i.rem_euclid(nx as isize) as usize;
    let cell = |i: isize, j: isize| {
        let phi = 0.25
            * (geom.phi.at(i, j) + geom.phi.at(i + 1, j) + geom.phi.at(i, j + 1) + geom.phi.at(i + 1, j + 1));
        (-phi).exp()
    };
    let mut k = DMatrix::<f64>::zeros(n, n);
    let mut add = |a: usize, b: usize, w: f64| {
        k[(a, a)] += w;
        k[(b, b)] += w;
        k[(a, b)] -= w;
        k[(b, a)] -= w;
    };
    for j in 0..ny as isize {
        for i in 0..nx as isize {
            let wx = 0.5 * (cell(i, j) + cell(i, j - 1)) * hy / hx;
            add(id(i, j), id(i + 1, j), wx);
            let wy = 0.5 * (cell(i, j) + cell(i - 1, j)) * hx / hy;
            add(id(i, j), id(i, j + 1), wy);
        }
    }
    let m: Vec<f64> = (0..n)
        .map(|q| {
            let (i, j) = ((q % nx) as isize, (q / nx) as isize);
            (2.0 * geom.u.at(i, j) - geom.phi.at(i, j)).exp() * hx * hy
        })
        .collect();
    let c = DMatrix::from_fn(n, n, |a, b| k[(a, b)] / (m[a] * m[b]).sqrt());
    Ok(sorted_eigenvalues(c)[1])
}

/// `min_c Σ m_i |g_i - c|^p` by golden-section search (convex in `c`).
fn min_shifted_norm(measures: &[f64], g: &[f64], p: f64) -> f64 {
    let obj = |c: f64| -> f64 { g.iter().zip(measures).map(|(v, m)| m * (v - c).abs().powf(p)).sum() };
    let mut a = g.iter().copied().fold(f64::INFINITY, f64::min);
    let mut b = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut f1, mut f2) = (obj(x1), obj(x2));
    for _ in 0..200 {
        if b - a <= 1e-15 * (a.abs() + b.abs()) {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = obj(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = obj(x2);
        }
    }
    f1.min(f2).min(obj(0.5 * (a + b)))
}

fn graph_quotient(graph: &Graph, p: f64, x: &[f64]) -> f64 {
    // node 0 pinned at zero removes the shift invariance
    let mut g = Vec::with_capacity(x.len() + 1);
    g.push(0.0);
    g.extend_from_slice(x);
    let num: f64 = graph
        .edges
        .iter()
        .map(|&(i, j, w)| w * (g[i] - g[j]).abs().powf(p))
        .sum();
    let den = min_shifted_norm(&graph.measures, &g, p);
    if den > 1e-300 {
        num / den
    } else {
        f64::INFINITY
    }
}

fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], scale: f64, max_evals: usize) -> (Vec<f64>, f64) {
    let d = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for k in 0..d {
        let mut v = x0.to_vec();
        v[k] += scale;
        simplex.push(v);
    }
    let mut vals: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut evals = d + 1;
    while evals < max_evals {
        let mut idx: Vec<usize> = (0..=d).collect();
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
        vals = idx.iter().map(|&i| vals[i]).collect();
        let spread = vals[d] - vals[0];
        let size = simplex[1..]
            .iter()
            .map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread <= 1e-16 * vals[0].abs() && size <= 1e-12 {
            break;
        }
        let centroid: Vec<f64> = (0..d)
            .map(|k| simplex[..d].iter().map(|v| v[k]).sum::<f64>() / d as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[d])
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let xr = along(-1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            evals += 1;
            if fe < fr {
                simplex[d] = xe;
                vals[d] = fe;
            } else {
                simplex[d] = xr;
                vals[d] = fr;
            }
        } else if fr < vals[d - 1] {
            simplex[d] = xr;
            vals[d] = fr;
        } else {
            let (xc, fc) = if fr < vals[d] {
                let xc = along(-0.5);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = f(&xc);
                (xc, fc)
            };
            evals += 1;
            if fc < vals[d].min(fr) {
                simplex[d] = xc;
                vals[d] = fc;
            } else {
                for k in 1..=d {
                    let shrunk: Vec<f64> = simplex[k]
                        .iter()
                        .zip(&simplex[0])
                        .map(|(a, b)| b + 0.5 * (a - b))
                        .collect();
                    vals[k] = f(&shrunk);
                    simplex[k] = shrunk;
                }
                evals += d;
            }
        }
    }
    let best = (0..=d).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap_or(0);
    (simplex[best].clone(), vals[best])
}

/// Global minimum of the graph p-Rayleigh quotient over the zero-p-median
/// constraint set by multi-start Nelder-Mead.
fn nelder_mead_eigenvalue(graph: &Graph, p: f64, seed: u64) -> f64 {
    let d = graph.len() - 1;
    let objective = |x: &[f64]| graph_quotient(graph, p, x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::INFINITY;
    for _ in 0..STARTS {
        let mut x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut fx = objective(&x);
        let mut scale = 0.5;
        // restart from the incumbent with a fresh simplex until no progress
        for _ in 0..20 {
            let (xn, fnew) = nelder_mead(&objective, &x, scale, 4000);
            let improved = fx - fnew;
            x = xn;
            fx = fnew;
            let norm = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            scale = 0.1 * norm.max(1e-3);
            if improved <= 1e-15 * fx.abs() {
                break;
            }
        }
        best = best.min(fx);
    }
    best
}

/// Brute-force first nonzero p-eigenvalue of a graph with at most six nodes.
/// Exact dense value for `p = 2`, Nelder-Mead search otherwise.
pub fn brute_force_small_eigen(graph: &Graph, p: f64, seed: u64) -> Result<f64> {
    graph.validate()?;
    if graph.len() > MAX_ORACLE_NODES {
        return Err(Error::Graph(format!(
            "brute-force oracle accepts at most {MAX_ORACLE_NODES} nodes, got {}",
            graph.len()
        )));
    }
    if !(p.is_finite() && p > 1.0) {
        return Err(Error::InvalidParameter(format!("p = {p} must be finite and > 1")));
    }
    if p == 2.0 {
        return dense_p2_eigenvalue(graph);
    }
    Ok(nelder_mead_eigenvalue(graph, p, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_cycle_spectrum() {
        let g = Graph::cycle(4).unwrap();
        assert!((dense_p2_eigenvalue(&g).unwrap() - 2.0).abs() < 1e-12);
        assert!((nelder_mead_eigenvalue(&g, 2.0, 1) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn two_node_closed_form() {
        let g = Graph::new(vec![1.0, 1.0], vec![(0, 1, 1.0)]).unwrap();
        for p in [1.5, 2.0, 3.0, 4.0] {
            let lam = brute_force_small_eigen(&g, p, 3).unwrap();
            assert!((lam - 2f64.powf(p - 1.0)).abs() < 1e-9 * lam, "p={p}: {lam}");
        }
    }

    #[test]
    fn measure_scaling() {
        let g = Graph::new(vec![1.0, 2.0, 1.5, 0.5], vec![(0, 1, 1.0), (1, 2, 2.0), (2, 3, 0.5), (3, 0, 1.0)]).unwrap();
        let c = 3.0;
        let gc = Graph::new(g.measures.iter().map(|m| c * m).collect(), g.edges.clone()).unwrap();
        let a = dense_p2_eigenvalue(&g).unwrap();
        let b = dense_p2_eigenvalue(&gc).unwrap();
        assert!((b - a / c).abs() < 1e-12);
    }

    #[test]
    fn flat_torus_dense_matches_dispersion() {
        let h = 2.0 * std::f64::consts::PI / 16.0;
        let lam = flat_torus_dense_eigenvalue(16, 16, 16.0 * h, 16.0 * h);
        assert!((lam - (2.0 - 2.0 * h.cos()) / (h * h)).abs() < 1e-10);
    }
}

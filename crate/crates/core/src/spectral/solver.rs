//! First nonzero eigenpair by constrained Rayleigh-quotient minimization.
//!
//! On the constraint set `{N(f) = 1, median_p(f) = 0}` the energy equals
//! `F(g) = E(g) / min_c N(g - c)`, which is invariant under shifts and
//! positive scalings of `g`. Each iterate is therefore moved along a
//! descent direction of `F` and projected back (shift to zero p-median,
//! scale to unit p-norm) without changing `F`. The Euclidean gradient of
//! `F` at a projected point is `∂E - μ p M |f|^{p-2} f` with
//! `μ = ⟨∂E, f⟩ / p`; the p-median multiplier vanishes because `Σ ∂E = 0`.
//!
//! For `p = 2` a block inverse iteration with Rayleigh-Ritz replaces the
//! descent.

use std::collections::VecDeque;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::energy::{p_power, TorusEnergy};
use super::graph::{Graph, GraphEnergy};
use super::linear::{apply_stiffness, dot, pcg};
use super::{Eigenpair, PEnergy, SolverOptions};
use crate::error::{Error, Result};
use crate::fields::TorusGeometry;

const BLOCK: usize = 8;
const MEMORY: usize = 12;

#[inline]
fn signed_pow(x: f64, e: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum() * x.abs().powf(e)
    }
}

/// The unique `c` with `Σ_i m_i |f_i - c|^{p-2}(f_i - c) = 0`.
pub fn p_median(measures: &[f64], f: &[f64], p: f64) -> f64 {
    let total: f64 = measures.iter().sum();
    let mean = dot(measures, f) / total;
    if p == 2.0 {
        return mean;
    }
    let mut lo = f.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return lo;
    }
    let mut c = mean.clamp(lo, hi);
    for _ in 0..200 {
        let mut h = 0.0;
        let mut dh = 0.0;
        let mut scale = 0.0;
        for (&v, &m) in f.iter().zip(measures) {
            let d = v - c;
            let a = d.abs();
            if a > 0.0 {
                let ap = a.powf(p - 2.0);
                h += m * ap * d;
                dh += m * ap;
                scale += m * ap * a;
            } else if p < 2.0 {
                dh = f64::INFINITY;
            }
        }
        if h.abs() <= 1e-15 * scale {
            return c;
        }
        if h > 0.0 {
            lo = c;
        } else {
            hi = c;
        }
        let newton = c + h / ((p - 1.0) * dh);
        let next = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if next == c || hi - lo <= 4.0 * f64::EPSILON * (lo.abs() + hi.abs()) {
            return next;
        }
        c = next;
    }
    c
}

/// Shifts `f` to zero p-median and scales it to `∫|f|^p dμ = 1`.
/// Returns `None` for (numerically) constant input.
pub fn project(measures: &[f64], f: &[f64], p: f64) -> Option<Vec<f64>> {
    let c = p_median(measures, f, p);
    let mut g: Vec<f64> = f.iter().map(|v| v - c).collect();
    let norm = p_power(measures, &g, p).powf(1.0 / p);
    if !(norm.is_finite() && norm > 0.0) {
        return None;
    }
    g.iter_mut().for_each(|v| *v /= norm);
    Some(g)
}

/// Gradient of `F` at a projected `f`, the Lagrange multiplier `μ` and the
/// certificate `‖(∂E/(p m)) - μ|f|^{p-2}f‖_M = ‖Δ_{p,φ}f + μ|f|^{p-2}f‖_M`.
fn constrained_gradient<E: PEnergy>(energy: &E, f: &[f64], grad: &mut [f64]) -> (f64, f64, f64) {
    let p = energy.p();
    let e = energy.energy_grad(f, grad);
    let mu = dot(grad, f) / p;
    let mut res = 0.0;
    for ((g, &v), &m) in grad.iter_mut().zip(f).zip(energy.measures()) {
        *g -= mu * p * m * signed_pow(v, p - 1.0);
        let r = *g / (p * m);
        res += m * r * r;
    }
    (e, mu, res.sqrt())
}

struct Candidate {
    f: Vec<f64>,
    lambda: f64,
    residual: f64,
    iterations: usize,
}

fn random_start<E: PEnergy>(energy: &E, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..energy.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut once = vec![0.0; noise.len()];
    energy.precondition(&noise, &mut once);
    let mut twice = vec![0.0; noise.len()];
    energy.precondition(&once, &mut twice);
    if twice.iter().all(|v| *v == twice[0]) {
        noise
    } else {
        twice
    }
}

/// Removes the M-weighted mean and M-orthonormalizes the columns, refilling
/// dependent ones from `rng`.
fn orthonormalize<E: PEnergy>(energy: &E, cols: &mut [Vec<f64>], seed: u64) {
    let m = energy.measures();
    let total: f64 = m.iter().sum();
    let mut refill = 0u64;
    let mut k = 0;
    while k < cols.len() {
        let (done, rest) = cols.split_at_mut(k);
        let col = &mut rest[0];
        let before = dot_m(m, col, col).sqrt();
        for _ in 0..2 {
            let mean = dot(m, col) / total;
            col.iter_mut().for_each(|v| *v -= mean);
            for q in done.iter() {
                let c = dot_m(m, q, col);
                col.iter_mut().zip(q).for_each(|(v, w)| *v -= c * w);
            }
        }
        let after = dot_m(m, col, col).sqrt();
        if !(after > 1e-10 * before && after > 0.0) {
            refill += 1;
            *col = random_start(energy, seed.wrapping_add(1_000_003 * refill));
            continue;
        }
        col.iter_mut().for_each(|v| *v /= after);
        k += 1;
    }
}

fn dot_m(m: &[f64], a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).zip(m).map(|((x, y), w)| x * y * w).sum()
}

/// Block inverse iteration for the `p = 2` problem `K f = λ M f`.
fn block_inverse_iteration<E: PEnergy>(
    energy: &E,
    opts: &SolverOptions,
    warm: Option<&[f64]>,
) -> std::result::Result<Candidate, Candidate> {
    let n = energy.len();
    let m = energy.measures();
    let k = BLOCK.min(n - 1);
    let mut cols: Vec<Vec<f64>> = (0..k)
        .map(|j| match (j, warm) {
            (0, Some(w)) => w.to_vec(),
            _ => random_start(energy, opts.seed.wrapping_add(j as u64)),
        })
        .collect();
    let mut kx = vec![0.0; n];
    let mut best = Candidate {
        f: Vec::new(),
        lambda: f64::NAN,
        residual: f64::INFINITY,
        iterations: 0,
    };
    let pcg_iters = 4 * n + 100;
    for it in 1..=opts.max_iter {
        orthonormalize(energy, &mut cols, opts.seed.wrapping_add(7919 * it as u64));
        let kcols: Vec<Vec<f64>> = cols
            .iter()
            .map(|c| {
                let mut out = vec![0.0; n];
                apply_stiffness(energy, c, &mut out);
                out
            })
            .collect();
        let a = DMatrix::from_fn(k, k, |i, j| 0.5 * (dot(&cols[i], &kcols[j]) + dot(&cols[j], &kcols[i])));
        let eig = SymmetricEigen::new(a);
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let ritz: Vec<(f64, Vec<f64>)> = order
            .iter()
            .map(|&o| {
                let mut v = vec![0.0; n];
                for (j, c) in cols.iter().enumerate() {
                    let w = eig.eigenvectors[(j, o)];
                    v.iter_mut().zip(c).for_each(|(a, b)| *a += w * b);
                }
                (eig.eigenvalues[o], v)
            })
            .collect();
        let (lambda, f0) = &ritz[0];
        apply_stiffness(energy, f0, &mut kx);
        let res = kx
            .iter()
            .zip(f0)
            .zip(m)
            .map(|((kv, fv), mv)| {
                let r = kv / mv - lambda * fv;
                mv * r * r
            })
            .sum::<f64>()
            .sqrt();
        if res < best.residual {
            best = Candidate {
                f: f0.clone(),
                lambda: *lambda,
                residual: res,
                iterations: it,
            };
        }
        if res <= opts.tol_eig {
            best.iterations = it;
            return Ok(best);
        }
        cols = ritz
            .into_iter()
            .map(|(lam, v)| {
                let b: Vec<f64> = v.iter().zip(m).map(|(a, w)| a * w).collect();
                let mut x: Vec<f64> = if lam > 0.0 { v.iter().map(|a| a / lam).collect() } else { v };
                pcg(energy, &b, &mut x, 1e-13, pcg_iters);
                x
            })
            .collect();
    }
    best.iterations = opts.max_iter;
    Err(best)
}

/// Preconditioned projected L-BFGS with Armijo backtracking on `F`. The
/// preconditioner seeds the inverse Hessian; pairs with `sᵀy ≤ 0` are
/// skipped.
fn projected_descent<E: PEnergy>(
    energy: &E,
    opts: &SolverOptions,
    init: &[f64],
) -> std::result::Result<Candidate, Candidate> {
    let n = energy.len();
    let p = energy.p();
    let m = energy.measures();
    let Some(mut f) = project(m, init, p) else {
        return Err(Candidate {
            f: init.to_vec(),
            lambda: f64::NAN,
            residual: f64::INFINITY,
            iterations: 0,
        });
    };
    let mut grad = vec![0.0; n];
    let (mut e, _, mut res) = constrained_gradient(energy, &f, &mut grad);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(MEMORY);
    let mut gamma = 1.0;
    let mut d = vec![0.0; n];
    let mut trial_grad = vec![0.0; n];
    let mut new_grad = vec![0.0; n];
    for it in 1..=opts.max_iter {
        if res <= opts.tol_eig {
            return Ok(Candidate {
                f,
                lambda: e,
                residual: res,
                iterations: it - 1,
            });
        }
        lbfgs_direction(energy, &history, gamma, &grad, &mut d);
        let mut slope = dot(&grad, &d);
        if !(slope < 0.0) {
            history.clear();
            lbfgs_direction(energy, &history, 1.0, &grad, &mut d);
            slope = dot(&grad, &d);
        }
        // Below this energy gap Armijo cannot resolve the decrease; the
        // residual decides instead.
        let noise = 64.0 * f64::EPSILON * e.abs();
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = f.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            if let Some(ft) = project(m, &trial, p) {
                let et = energy.energy(&ft);
                if et.is_finite() {
                    if et <= e + 1e-4 * step * slope && e - et > noise {
                        accepted = Some(ft);
                        break;
                    }
                    if (et - e).abs() <= noise {
                        let (_, _, rt) = constrained_gradient(energy, &ft, &mut trial_grad);
                        if rt < res {
                            accepted = Some(ft);
                            break;
                        }
                    }
                }
            }
            step *= 0.5;
        }
        let Some(ft) = accepted else {
            if !history.is_empty() {
                history.clear();
                continue;
            }
            return Err(Candidate {
                f,
                lambda: e,
                residual: res,
                iterations: it,
            });
        };
        let (en, _, rn) = constrained_gradient(energy, &ft, &mut new_grad);
        let s: Vec<f64> = ft.iter().zip(&f).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = new_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            let mut py = vec![0.0; n];
            energy.precondition(&y, &mut py);
            let ypy = dot(&y, &py);
            if ypy > 0.0 {
                gamma = sy / ypy;
            }
            if history.len() == MEMORY {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        f = ft;
        std::mem::swap(&mut grad, &mut new_grad);
        e = en;
        res = rn;
    }
    if res <= opts.tol_eig {
        return Ok(Candidate {
            f,
            lambda: e,
            residual: res,
            iterations: opts.max_iter,
        });
    }
    Err(Candidate {
        f,
        lambda: e,
        residual: res,
        iterations: opts.max_iter,
    })
}

/// Two-loop recursion: `d = -H g` with `H₀ = γ P`.
fn lbfgs_direction<E: PEnergy>(
    energy: &E,
    history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    gamma: f64,
    grad: &[f64],
    d: &mut [f64],
) {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qv, yv)| *qv -= a * yv);
        alphas.push(a);
    }
    energy.precondition(&q, d);
    d.iter_mut().for_each(|v| *v *= gamma);
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, d);
        d.iter_mut().zip(s).for_each(|(dv, sv)| *dv += (a - b) * sv);
    }
    d.iter_mut().for_each(|v| *v = -*v);
}

fn finalize<E: PEnergy>(energy: &E, mut f: Vec<f64>, iterations: usize, restarts_used: usize) -> Eigenpair {
    let k = f
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if v.abs() > f[best].abs() { i } else { best });
    if f[k] < 0.0 {
        f.iter_mut().for_each(|v| *v = -*v);
    }
    let mut grad = vec![0.0; f.len()];
    let (_, _, residual) = constrained_gradient(energy, &f, &mut grad);
    let lambda = energy.energy(&f) / p_power(energy.measures(), &f, energy.p());
    Eigenpair {
        lambda,
        f,
        residual,
        iterations,
        restarts_used,
    }
}

/// Warm start (if any) followed by `cold` seeded random starts; the
/// smallest certified eigenvalue wins, ties going to the lower residual.
pub(crate) fn solve<E: PEnergy>(
    energy: &E,
    opts: &SolverOptions,
    warm: Option<&[f64]>,
    cold: usize,
) -> Result<Eigenpair> {
    opts.validate()?;
    if energy.len() < 2 {
        return Err(Error::InvalidParameter("need at least two nodes".into()));
    }
    if let Some(w) = warm {
        if w.len() != energy.len() || w.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("warm start does not match the geometry".into()));
        }
    }
    let p = energy.p();
    if p == 2.0 && energy.epsilon() == 0.0 {
        return match block_inverse_iteration(energy, opts, warm) {
            Ok(c) => Ok(finalize(energy, c.f, c.iterations, 1)),
            Err(c) => Err(Error::NotConverged {
                best_residual: c.residual,
                lambda: c.lambda,
                iterations: c.iterations,
            }),
        };
    }
    let mut starts: Vec<Vec<f64>> = Vec::new();
    match warm {
        Some(w) => starts.push(w.to_vec()),
        None => {
            let quadratic = energy.with_p(2.0);
            let seed_opts = SolverOptions {
                tol_eig: opts.tol_eig.max(1e-6),
                ..opts.clone()
            };
            match block_inverse_iteration(&quadratic, &seed_opts, None) {
                Ok(c) | Err(c) if !c.f.is_empty() => starts.push(c.f),
                _ => {}
            }
        }
    }
    for r in 0..cold {
        starts.push(random_start(energy, opts.seed.wrapping_add(0x9e37_79b9 * (r as u64 + 1))));
    }
    let mut best: Option<Candidate> = None;
    let mut best_failed: Option<Candidate> = None;
    let mut total_iters = 0;
    for start in &starts {
        match projected_descent(energy, opts, start) {
            Ok(c) => {
                total_iters += c.iterations;
                let better = match &best {
                    None => true,
                    Some(b) => {
                        let tie = (c.lambda - b.lambda).abs() <= 1e-12 * b.lambda.abs().max(1e-300);
                        if tie {
                            c.residual < b.residual
                        } else {
                            c.lambda < b.lambda
                        }
                    }
                };
                if better {
                    best = Some(c);
                }
            }
            Err(c) => {
                total_iters += c.iterations;
                if best_failed.as_ref().is_none_or(|b| c.residual < b.residual) {
                    best_failed = Some(c);
                }
            }
        }
    }
    match best {
        Some(c) => Ok(finalize(energy, c.f, total_iters, starts.len())),
        None => {
            let b = best_failed.unwrap_or(Candidate {
                f: Vec::new(),
                lambda: f64::NAN,
                residual: f64::INFINITY,
                iterations: 0,
            });
            Err(Error::NotConverged {
                best_residual: b.residual,
                lambda: b.lambda,
                iterations: total_iters,
            })
        }
    }
}

/// First nonzero eigenpair on a torus with `opts.restarts` cold starts.
pub fn first_eigenpair(geom: &TorusGeometry, p: f64, opts: &SolverOptions) -> Result<Eigenpair> {
    let energy = TorusEnergy::new(geom, p, opts.epsilon_reg)?;
    solve(&energy, opts, None, opts.restarts)
}

/// Warm-started solve with `cold` additional random starts.
pub fn first_eigenpair_from(
    geom: &TorusGeometry,
    p: f64,
    opts: &SolverOptions,
    warm: Option<&[f64]>,
    cold: usize,
) -> Result<Eigenpair> {
    let energy = TorusEnergy::new(geom, p, opts.epsilon_reg)?;
    solve(&energy, opts, warm, cold)
}

/// First nonzero eigenpair of a weighted graph.
pub fn first_eigenpair_graph(graph: &Graph, p: f64, opts: &SolverOptions) -> Result<Eigenpair> {
    let energy = GraphEnergy::new(graph, p, opts.epsilon_reg)?;
    solve(&energy, opts, None, opts.restarts)
}

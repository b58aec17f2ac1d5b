use super::precond::FlatPoissonPrecond;
use super::PEnergy;
use crate::error::{Error, Result};
use crate::fields::{cell_weights, flat_gradient_sq, measure_weights, CompensatedSum, ScalarField, TorusGeometry};

/// `E(f) = Σ_c (|∇f|²_g + ε²)^{p/2} w_c` on a torus snapshot.
///
/// Cell quantities are precomputed so repeated evaluations inside the
/// eigensolver only touch `f`.
#[derive(Debug, Clone)]
pub struct TorusEnergy {
    nx: usize,
    ny: usize,
    hx: f64,
    hy: f64,
    p: f64,
    eps: f64,
    measures: Vec<f64>,
    cell_w: Vec<f64>,
    cell_metric: Vec<f64>,
    precond: FlatPoissonPrecond,
}

impl TorusEnergy {
    pub fn new(geom: &TorusGeometry, p: f64, epsilon: f64) -> Result<Self> {
        if !(p.is_finite() && p > 1.0) {
            return Err(Error::InvalidParameter(format!("p = {p} must be finite and > 1")));
        }
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::InvalidParameter(format!("epsilon_reg = {epsilon} must be >= 0")));
        }
        let measures = measure_weights(geom)?.into_values();
        let cell_w = cell_weights(geom);
        let cell_metric: Vec<f64> = geom.u.cell_average().iter().map(|&u| (-2.0 * u).exp()).collect();
        // p = 2 stiffness per cell is e^{-φ_c} hx hy; its mean sets the scale
        let mean_k = cell_w.iter().zip(&cell_metric).map(|(w, e)| w * e).sum::<f64>() / cell_w.len() as f64;
        let precond = FlatPoissonPrecond::new(geom.nx(), geom.ny(), geom.hx(), geom.hy(), 2.0 * mean_k);
        Ok(Self {
            nx: geom.nx(),
            ny: geom.ny(),
            hx: geom.hx(),
            hy: geom.hy(),
            p,
            eps: epsilon,
            measures,
            cell_w,
            cell_metric,
            precond,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    /// `|∇f|²_g` per cell.
    pub fn cell_grad_sq(&self, f: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; self.nx * self.ny];
        flat_gradient_sq(self.nx, self.ny, self.hx, self.hy, f, &mut s);
        for (v, e) in s.iter_mut().zip(&self.cell_metric) {
            *v *= e;
        }
        s
    }

    /// Cell measures `w_c`.
    pub fn cell_measures(&self) -> &[f64] {
        &self.cell_w
    }

    #[inline]
    fn density(&self, s: f64) -> f64 {
        let q = s + self.eps * self.eps;
        if self.p == 2.0 {
            q
        } else {
            q.powf(0.5 * self.p)
        }
    }
}

impl PEnergy for TorusEnergy {
    fn len(&self) -> usize {
        self.measures.len()
    }

    fn p(&self) -> f64 {
        self.p
    }

    fn epsilon(&self) -> f64 {
        self.eps
    }

    fn measures(&self) -> &[f64] {
        &self.measures
    }

    fn energy(&self, f: &[f64]) -> f64 {
        let s = self.cell_grad_sq(f);
        let mut acc = CompensatedSum::new();
        for (sc, w) in s.iter().zip(&self.cell_w) {
            acc.add(self.density(*sc) * w);
        }
        acc.value()
    }

    fn energy_grad(&self, f: &[f64], grad: &mut [f64]) -> f64 {
        let (nx, ny) = (self.nx, self.ny);
        let (ihx2, ihy2) = (1.0 / (self.hx * self.hx), 1.0 / (self.hy * self.hy));
        let half_p = 0.5 * self.p;
        let eps2 = self.eps * self.eps;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut acc = CompensatedSum::new();
        for j in 0..ny {
            let j1 = (j + 1) % ny;
            for i in 0..nx {
                let i1 = (i + 1) % nx;
                let c = j * nx + i;
                let (n00, n10, n01, n11) = (c, j * nx + i1, j1 * nx + i, j1 * nx + i1);
                let (bx, tx) = (f[n10] - f[n00], f[n11] - f[n01]);
                let (ly, ry) = (f[n01] - f[n00], f[n11] - f[n10]);
                let flat = 0.5 * (bx * bx + tx * tx) * ihx2 + 0.5 * (ly * ly + ry * ry) * ihy2;
                let q = flat * self.cell_metric[c] + eps2;
                let w = self.cell_w[c];
                let (dens, slope) = if self.p == 2.0 {
                    (q, 1.0)
                } else if q > 0.0 {
                    let d = q.powf(half_p);
                    (d, d / q)
                } else {
                    (0.0, 0.0)
                };
                acc.add(dens * w);
                let k = half_p * slope * w * self.cell_metric[c];
                if k == 0.0 {
                    continue;
                }
                let (gx_b, gx_t) = (k * bx * ihx2, k * tx * ihx2);
                let (gy_l, gy_r) = (k * ly * ihy2, k * ry * ihy2);
                grad[n00] -= gx_b + gy_l;
                grad[n10] += gx_b - gy_r;
                grad[n01] += gy_l - gx_t;
                grad[n11] += gx_t + gy_r;
            }
        }
        acc.value()
    }

    fn precondition(&self, r: &[f64], out: &mut [f64]) {
        self.precond.apply(r, out);
    }

    fn with_p(&self, p: f64) -> Self {
        Self { p, ..self.clone() }
    }
}

/// `∫ (|∇f|²_g + ε²)^{p/2} dμ` with the midpoint cell quadrature.
pub fn p_energy(geom: &TorusGeometry, f: &ScalarField, p: f64, epsilon: f64) -> Result<f64> {
    geom.check_compatible(f)?;
    Ok(TorusEnergy::new(geom, p, epsilon)?.energy(f.values()))
}

/// `(Δ_{p,φ} f)_i = -(1/(p dμ_i)) ∂E/∂f_i`.
pub fn apply_weighted_p_laplacian(
    geom: &TorusGeometry,
    f: &ScalarField,
    p: f64,
    epsilon: f64,
) -> Result<ScalarField> {
    geom.check_compatible(f)?;
    let energy = TorusEnergy::new(geom, p, epsilon)?;
    let mut grad = vec![0.0; f.len()];
    energy.energy_grad(f.values(), &mut grad);
    let values = grad
        .iter()
        .zip(energy.measures())
        .map(|(g, m)| -g / (p * m))
        .collect();
    ScalarField::new(geom.nx(), geom.ny(), values)
}

/// `∫|f|^p dμ` against node measures.
pub fn p_power(measures: &[f64], f: &[f64], p: f64) -> f64 {
    let mut acc = CompensatedSum::new();
    for (v, m) in f.iter().zip(measures) {
        acc.add(v.abs().powf(p) * m);
    }
    acc.value()
}

/// `(∫|f|^p dμ)^{1/p}`.
pub fn p_norm(measures: &[f64], f: &[f64], p: f64) -> f64 {
    p_power(measures, f, p).powf(1.0 / p)
}

/// `E(f) / ∫|f|^p dμ` on a torus.
pub fn rayleigh_quotient(geom: &TorusGeometry, f: &ScalarField, p: f64, epsilon: f64) -> Result<f64> {
    geom.check_compatible(f)?;
    let energy = TorusEnergy::new(geom, p, epsilon)?;
    let den = p_power(energy.measures(), f.values(), p);
    if den <= 0.0 {
        return Err(Error::InvalidParameter("Rayleigh quotient of the zero field".into()));
    }
    Ok(energy.energy(f.values()) / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const TAU: f64 = 2.0 * PI;

    #[test]
    fn constant_has_zero_energy_and_operator() {
        let g = TorusGeometry::from_fns(12, 10, TAU, 5.0, |x, y| 0.2 * x.cos() + 0.1 * y.sin(), |x, _| 0.3 * x.sin())
            .unwrap();
        let f = ScalarField::constant(12, 10, 1.7);
        for p in [2.0, 3.0, 1.5] {
            assert_eq!(p_energy(&g, &f, p, 0.0).unwrap(), 0.0);
            let lap = apply_weighted_p_laplacian(&g, &f, p, 0.0).unwrap();
            assert!(lap.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn dirichlet_energy_of_sine() {
        let mut errs = Vec::new();
        for n in [32usize, 64] {
            let g = TorusGeometry::flat(n, n, TAU, TAU).unwrap();
            let f = g.sample(|x, _| x.sin());
            let e = p_energy(&g, &f, 2.0, 0.0).unwrap();
            errs.push((e - 2.0 * PI * PI).abs());
        }
        assert!(errs[0] < 0.1 && errs[1] < errs[0] / 3.5, "{errs:?}");
    }

    #[test]
    fn p4_energy_of_sine_matches_fine_quadrature() {
        // Golden value: dense summation of the same discrete energy at N = 256.
        let golden = {
            let n = 256;
            let h = TAU / n as f64;
            let mut acc = 0.0;
            for i in 0..n {
                let d = ((i as f64 + 1.0) * h).sin() - (i as f64 * h).sin();
                acc += (d / h).powi(4) * h * TAU;
            }
            acc
        };
        // continuum value (3/8)·4π²
        assert!((golden - 1.5 * PI * PI).abs() < 5e-3);
        let g = TorusGeometry::flat(256, 256, TAU, TAU).unwrap();
        let f = g.sample(|x, _| x.sin());
        let e = p_energy(&g, &f, 4.0, 0.0).unwrap();
        assert!((e - golden).abs() < 1e-10 * golden, "{e} vs {golden}");
    }

    #[test]
    fn p2_flat_operator_is_five_point_stencil() {
        let g = TorusGeometry::flat(16, 12, TAU, 3.0).unwrap();
        let f = g.sample(|x, y| x.sin() * (1.0 + 0.3 * (TAU * y / 3.0).cos()) + 0.1 * (2.0 * x).cos());
        let lap = apply_weighted_p_laplacian(&g, &f, 2.0, 0.0).unwrap();
        let mut stencil = vec![0.0; f.len()];
        crate::flow::flat_laplacian(16, 12, g.hx(), g.hy(), f.values(), &mut stencil);
        for (a, b) in lap.values().iter().zip(&stencil) {
            assert!((a - b).abs() < 1e-11 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn sine_mode_is_eigenfunction_of_flat_stencil() {
        let g = TorusGeometry::flat(32, 32, TAU, TAU).unwrap();
        let f = g.sample(|x, _| x.sin());
        let lap = apply_weighted_p_laplacian(&g, &f, 2.0, 0.0).unwrap();
        let h = g.hx();
        let symbol = (2.0 - 2.0 * h.cos()) / (h * h);
        for (l, v) in lap.values().iter().zip(f.values()) {
            assert!((l + symbol * v).abs() < 1e-12);
        }
    }

    /// Weighted 5-point stencil in conservative form:
    /// `e^{φ_i}/h² Σ_edges e^{-φ_edge}(f_nb - f_i)`, with the edge weight
    /// averaged from the two cells sharing that edge.
    fn conservative_drift_laplacian(g: &TorusGeometry, f: &ScalarField) -> Vec<f64> {
        let (nx, ny) = (g.nx() as isize, g.ny() as isize);
        let (hx, hy) = (g.hx(), g.hy());
        let cell = |i: isize, j: isize| {
            0.25 * (g.phi.at(i, j) + g.phi.at(i + 1, j) + g.phi.at(i, j + 1) + g.phi.at(i + 1, j + 1))
        };
        let mut out = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                let fi = f.at(i, j);
                let wx_p = 0.5 * ((-cell(i, j)).exp() + (-cell(i, j - 1)).exp());
                let wx_m = 0.5 * ((-cell(i - 1, j)).exp() + (-cell(i - 1, j - 1)).exp());
                let wy_p = 0.5 * ((-cell(i, j)).exp() + (-cell(i - 1, j)).exp());
                let wy_m = 0.5 * ((-cell(i, j - 1)).exp() + (-cell(i - 1, j - 1)).exp());
                let v = (wx_p * (f.at(i + 1, j) - fi) + wx_m * (f.at(i - 1, j) - fi)) / (hx * hx)
                    + (wy_p * (f.at(i, j + 1) - fi) + wy_m * (f.at(i, j - 1) - fi)) / (hy * hy);
                out.push(v * (g.phi.at(i, j) - 2.0 * g.u.at(i, j)).exp());
            }
        }
        out
    }

    #[test]
    fn weighted_p2_operator_matches_conservative_stencil() {
        let g = TorusGeometry::from_fns(24, 24, TAU, TAU, |_, _| 0.0, |x, _| (2.0 + x.sin()).ln()).unwrap();
        let f = g.sample(|x, y| x.cos() + 0.5 * y.sin());
        let lap = apply_weighted_p_laplacian(&g, &f, 2.0, 0.0).unwrap();
        let direct = conservative_drift_laplacian(&g, &f);
        for (a, b) in lap.values().iter().zip(&direct) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn weighted_p2_operator_converges_to_drift_laplacian() {
        // Δf − ∇φ·∇f with φ = ln(2 + sin x), f = cos x + ½ sin y:
        // −cos x − ½ sin y + sin x · cos x / (2 + sin x).
        let exact = |x: f64, y: f64| -x.cos() - 0.5 * y.sin() + x.sin() * x.cos() / (2.0 + x.sin());
        let mut errs = Vec::new();
        for n in [32usize, 64] {
            let g = TorusGeometry::from_fns(n, n, TAU, TAU, |_, _| 0.0, |x, _| (2.0 + x.sin()).ln()).unwrap();
            let f = g.sample(|x, y| x.cos() + 0.5 * y.sin());
            let lap = apply_weighted_p_laplacian(&g, &f, 2.0, 0.0).unwrap();
            let h = g.hx();
            let err = (0..n * n)
                .map(|k| {
                    let (i, j) = (k % n, k / n);
                    (lap.values()[k] - exact(i as f64 * h, j as f64 * h)).abs()
                })
                .fold(0.0, f64::max);
            errs.push(err);
        }
        assert!(errs[0] < 2e-2 && errs[1] < errs[0] / 3.5, "{errs:?}");
    }

    #[test]
    fn energy_homogeneity_and_conformal_scaling() {
        let g = TorusGeometry::from_fns(16, 16, TAU, TAU, |x, _| 0.2 * x.cos(), |_, y| 0.1 * y.cos()).unwrap();
        let c = 0.35;
        let gc = TorusGeometry::new(g.lx, g.ly, g.u.map(|u| u + c), g.phi.clone()).unwrap();
        let f = g.sample(|x, y| (x + 0.3).sin() * (0.5 + y.cos().powi(2)));
        for p in [2.0, 2.5, 3.0, 4.0] {
            let e = p_energy(&g, &f, p, 0.0).unwrap();
            let e2 = p_energy(&g, &f.map(|v| 2.0 * v), p, 0.0).unwrap();
            assert!((e2 - 2f64.powf(p) * e).abs() < 1e-12 * e2);
            let rq = rayleigh_quotient(&g, &f, p, 0.0).unwrap();
            let rqc = rayleigh_quotient(&gc, &f, p, 0.0).unwrap();
            assert!((rqc - (-p * c).exp() * rq).abs() < 1e-13 * rq);
        }
    }
}

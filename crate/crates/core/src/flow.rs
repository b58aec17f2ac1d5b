//! Ricci-Bourguignon flow coupled with heat flow of the weight.
//!
//! On a conformal torus `g = e^{2u} g₀` we have `Ric = (R/2) g` and
//! `R = -2 e^{-2u} Δ₀u`, so the metric equation reduces to the scalar
//! PDE `∂u/∂t = -(1-2ρ) R / 2 = (1-2ρ) e^{-2u} Δ₀u`. The weight obeys
//! `∂φ/∂t = Δ_g φ = e^{-2u} Δ₀φ`.
//!
//! Einstein metrics evolve by homothety `g(t) = u(t) g₀` with `u` affine in
//! `t`. The product `S² × S¹` with metric `a g_{S²} + b dθ²` reduces to
//! `a' = 4ρ - 2`, `b' = 4ρ b / a`.

use crate::error::{Error, Result};
use crate::fields::{ScalarField, TorusGeometry};

/// Real-axis stability interval of classical RK4.
const RK4_REAL_STABILITY: f64 = 2.785;

/// Flow coefficients shared by every formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    pub rho: f64,
    pub p: f64,
    pub n: usize,
}

impl FlowParams {
    pub fn new(rho: f64, p: f64, n: usize) -> Result<Self> {
        let params = Self { rho, p, n };
        params.validate()?;
        Ok(params)
    }

    /// `1 / (2(n-1))`, the short-time existence threshold for `ρ`.
    pub fn rho_limit(n: usize) -> f64 {
        1.0 / (2.0 * (n as f64 - 1.0))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.n == 2 || self.n == 3) {
            return Err(Error::InvalidParameter(format!(
                "dimension n = {} is not implemented (n must be 2 or 3)",
                self.n
            )));
        }
        if !self.rho.is_finite() || self.rho >= Self::rho_limit(self.n) {
            return Err(Error::InvalidParameter(format!(
                "rho = {} violates rho < 1/(2(n-1)) = {} for n = {}",
                self.rho,
                Self::rho_limit(self.n),
                self.n
            )));
        }
        if !self.p.is_finite() || self.p < 1.1 {
            return Err(Error::InvalidParameter(format!(
                "p = {} must be finite and >= 1.1",
                self.p
            )));
        }
        Ok(())
    }

    fn n_f(&self) -> f64 {
        self.n as f64
    }
}

/// Flat 5-point Laplacian `Δ₀f` on the periodic grid.
pub(crate) fn flat_laplacian(nx: usize, ny: usize, hx: f64, hy: f64, f: &[f64], out: &mut [f64]) {
    let (ihx2, ihy2) = (1.0 / (hx * hx), 1.0 / (hy * hy));
    for j in 0..ny {
        let jp = (j + 1) % ny;
        let jm = (j + ny - 1) % ny;
        for i in 0..nx {
            let ip = (i + 1) % nx;
            let im = (i + nx - 1) % nx;
            let c = f[j * nx + i];
            out[j * nx + i] = (f[j * nx + ip] - 2.0 * c + f[j * nx + im]) * ihx2
                + (f[jp * nx + i] - 2.0 * c + f[jm * nx + i]) * ihy2;
        }
    }
}

/// `Δ_g f = e^{-2u} Δ₀f` at the nodes.
pub fn laplace_beltrami(geom: &TorusGeometry, f: &ScalarField) -> Result<ScalarField> {
    geom.check_compatible(f)?;
    let mut out = vec![0.0; geom.len()];
    flat_laplacian(geom.nx(), geom.ny(), geom.hx(), geom.hy(), f.values(), &mut out);
    for (o, &u) in out.iter_mut().zip(geom.u.values()) {
        *o *= (-2.0 * u).exp();
    }
    ScalarField::new(geom.nx(), geom.ny(), out)
}

/// Scalar curvature `R = -2 e^{-2u} Δ₀u` of the conformal torus.
pub fn scalar_curvature(geom: &TorusGeometry) -> ScalarField {
    let mut out = vec![0.0; geom.len()];
    flat_laplacian(geom.nx(), geom.ny(), geom.hx(), geom.hy(), geom.u.values(), &mut out);
    for (o, &u) in out.iter_mut().zip(geom.u.values()) {
        *o *= -2.0 * (-2.0 * u).exp();
    }
    ScalarField::new(geom.nx(), geom.ny(), out).expect("same grid")
}

/// Largest `dt` for which RK4 stays stable on the diffusive part of the
/// coupled system.
pub fn stability_limit(geom: &TorusGeometry, rho: f64, evolve_phi: bool) -> f64 {
    let (hx, hy) = (geom.hx(), geom.hy());
    let spectral_radius = 4.0 / (hx * hx) + 4.0 / (hy * hy);
    let mut coeff = (1.0 - 2.0 * rho).abs();
    if evolve_phi {
        coeff = coeff.max(1.0);
    }
    let kappa = (-2.0 * geom.u.min()).exp() * coeff;
    if kappa == 0.0 {
        return f64::INFINITY;
    }
    RK4_REAL_STABILITY / (kappa * spectral_radius)
}

/// Default fixed step `0.2 h² e^{2 min u} / max(1-2ρ, 1)`.
pub fn auto_dt(geom: &TorusGeometry, rho: f64) -> f64 {
    let h = geom.hx().min(geom.hy());
    0.2 * h * h * (2.0 * geom.u.min()).exp() / (1.0 - 2.0 * rho).max(1.0)
}

fn check_step(geom: &TorusGeometry, rho: f64, dt: f64, evolve_phi: bool) -> Result<()> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidParameter(format!("time step must be positive, got {dt}")));
    }
    let limit = stability_limit(geom, rho, evolve_phi);
    if dt > limit {
        return Err(Error::Cfl { dt, limit });
    }
    Ok(())
}

/// Right-hand side of the coupled system at one stage.
#[allow(clippy::too_many_arguments)]
fn coupled_rhs(
    nx: usize,
    ny: usize,
    hx: f64,
    hy: f64,
    rho: f64,
    u: &[f64],
    phi: Option<&[f64]>,
    du: &mut [f64],
    dphi: &mut [f64],
) {
    flat_laplacian(nx, ny, hx, hy, u, du);
    if let Some(phi) = phi {
        flat_laplacian(nx, ny, hx, hy, phi, dphi);
    }
    let c = 1.0 - 2.0 * rho;
    for k in 0..u.len() {
        let w = (-2.0 * u[k]).exp();
        du[k] *= c * w;
        if phi.is_some() {
            dphi[k] *= w;
        }
    }
}

fn rk4_coupled(
    geom: &TorusGeometry,
    rho: f64,
    dt: f64,
    evolve_u: bool,
    evolve_phi: bool,
) -> Result<TorusGeometry> {
    let (nx, ny, hx, hy) = (geom.nx(), geom.ny(), geom.hx(), geom.hy());
    let n = nx * ny;
    let u0 = geom.u.values();
    let p0 = geom.phi.values();
    let mut ku = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut kp = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut us = u0.to_vec();
    let mut ps = p0.to_vec();
    let weights = [0.5, 0.5, 1.0];
    for stage in 0..4 {
        let (du, dp) = (&mut ku[stage], &mut kp[stage]);
        coupled_rhs(
            nx,
            ny,
            hx,
            hy,
            rho,
            &us,
            evolve_phi.then_some(ps.as_slice()),
            du,
            dp,
        );
        if !evolve_u {
            du.iter_mut().for_each(|v| *v = 0.0);
        }
        if stage < 3 {
            let a = weights[stage] * dt;
            for k in 0..n {
                us[k] = u0[k] + a * ku[stage][k];
                ps[k] = p0[k] + a * kp[stage][k];
            }
        }
    }
    let mut u1 = Vec::with_capacity(n);
    let mut p1 = Vec::with_capacity(n);
    for k in 0..n {
        u1.push(u0[k] + dt / 6.0 * (ku[0][k] + 2.0 * ku[1][k] + 2.0 * ku[2][k] + ku[3][k]));
        p1.push(p0[k] + dt / 6.0 * (kp[0][k] + 2.0 * kp[1][k] + 2.0 * kp[2][k] + kp[3][k]));
    }
    if let Some(k) = u1.iter().chain(&p1).position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            module: "flow_engine",
            detail: format!("state entry {k} after RK4 step with dt = {dt:e}"),
        });
    }
    Ok(TorusGeometry {
        lx: geom.lx,
        ly: geom.ly,
        u: ScalarField::new(nx, ny, u1)?,
        phi: ScalarField::new(nx, ny, p1)?,
    })
}

/// One RK4 step of the conformal factor; `phi` is left untouched.
pub fn surface_flow_step(geom: &TorusGeometry, params: &FlowParams, dt: f64) -> Result<TorusGeometry> {
    if params.n != 2 {
        return Err(Error::InvalidParameter("surface flow requires n = 2".into()));
    }
    params.validate()?;
    check_step(geom, params.rho, dt, false)?;
    rk4_coupled(geom, params.rho, dt, true, false)
}

/// One RK4 step of `∂φ/∂t = Δ_g φ` under the current (frozen) metric.
pub fn phi_heat_step(geom: &TorusGeometry, dt: f64) -> Result<TorusGeometry> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidParameter(format!("time step must be positive, got {dt}")));
    }
    let limit = {
        let (hx, hy) = (geom.hx(), geom.hy());
        RK4_REAL_STABILITY / ((-2.0 * geom.u.min()).exp() * (4.0 / (hx * hx) + 4.0 / (hy * hy)))
    };
    if dt > limit {
        return Err(Error::Cfl { dt, limit });
    }
    rk4_coupled(geom, 0.0, dt, false, true)
}

/// One RK4 step of the coupled `(u, φ)` system; every stage evaluates both
/// right-hand sides on the same stage state.
pub fn coupled_flow_step(
    geom: &TorusGeometry,
    params: &FlowParams,
    dt: f64,
    evolve_phi: bool,
) -> Result<TorusGeometry> {
    if params.n != 2 {
        return Err(Error::InvalidParameter("surface flow requires n = 2".into()));
    }
    check_step(geom, params.rho, dt, evolve_phi)?;
    rk4_coupled(geom, params.rho, dt, true, evolve_phi)
}

/// Integrates the coupled system over a signed `duration` in equal substeps
/// no longer than `dt_max`. Negative durations run the flow backward and are
/// only meaningful over spans short against the diffusion time of the grid.
pub fn advance(
    geom: &TorusGeometry,
    params: &FlowParams,
    evolve_phi: bool,
    duration: f64,
    dt_max: f64,
) -> Result<TorusGeometry> {
    if params.n != 2 {
        return Err(Error::InvalidParameter("surface flow requires n = 2".into()));
    }
    if duration == 0.0 {
        return Ok(geom.clone());
    }
    if !(duration.is_finite() && dt_max > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "cannot advance by {duration} with dt_max = {dt_max}"
        )));
    }
    let steps = (duration.abs() / dt_max).ceil().max(1.0) as usize;
    let dt = duration / steps as f64;
    check_step(geom, params.rho, dt.abs(), evolve_phi)?;
    let mut cur = geom.clone();
    for _ in 0..steps {
        cur = rk4_coupled(&cur, params.rho, dt, true, evolve_phi)?;
    }
    Ok(cur)
}

/// Homothety state `g(t) = u(t) g₀` of an Einstein manifold with `Ric(g₀) = a g₀`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EinsteinState {
    pub a: f64,
    pub n: usize,
    /// First eigenvalue of `g₀`.
    pub lambda0: f64,
    pub u: f64,
}

/// `S² × S¹` with metric `a g_{S²} + b dθ²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductState {
    pub a: f64,
    pub b: f64,
    /// Initial circle scale and the circle length it gives.
    pub b0: f64,
    pub circle_length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClosedFormGeometry {
    Einstein(EinsteinState),
    Product(ProductState),
}

impl ClosedFormGeometry {
    pub fn dimension(&self) -> usize {
        match self {
            ClosedFormGeometry::Einstein(s) => s.n,
            ClosedFormGeometry::Product(_) => 3,
        }
    }

    /// Constant scalar curvature.
    pub fn scalar_curvature(&self) -> f64 {
        match self {
            ClosedFormGeometry::Einstein(s) => s.a * s.n as f64 / s.u,
            ClosedFormGeometry::Product(s) => 2.0 / s.a,
        }
    }

    /// Smallest and largest Ricci eigenvalues (w.r.t. the current metric).
    pub fn ricci_range(&self) -> (f64, f64) {
        match self {
            ClosedFormGeometry::Einstein(s) => (s.a / s.u, s.a / s.u),
            ClosedFormGeometry::Product(s) => (0.0_f64.min(1.0 / s.a), 0.0_f64.max(1.0 / s.a)),
        }
    }
}

/// `u(t) = (-2a + 2ρan) t + 1`.
pub fn einstein_scale(a: f64, n: usize, rho: f64, t: f64) -> Result<f64> {
    let rate = -2.0 * a + 2.0 * rho * a * n as f64;
    let u = rate * t + 1.0;
    if u <= 0.0 {
        return Err(Error::Extinction {
            what: "einstein homothety",
            t_extinct: -1.0 / rate,
        });
    }
    Ok(u)
}

/// Exact Einstein flow: returns `(u(t), λ(t))` with `λ = λ₀ u^{-p/2}`.
pub fn einstein_flow(t: f64, state: &EinsteinState, params: &FlowParams) -> Result<(f64, f64)> {
    let u = einstein_scale(state.a, state.n, params.rho, t)?;
    Ok((u, state.lambda0 * u.powf(-params.p / 2.0)))
}

impl EinsteinState {
    /// State at time `t` after `self`; `u` evolves linearly from `self.u`.
    pub fn at(&self, t: f64, params: &FlowParams) -> Result<EinsteinState> {
        let rate = -2.0 * self.a + 2.0 * params.rho * self.a * self.n as f64;
        let u = self.u + rate * t;
        if u <= 0.0 {
            return Err(Error::Extinction {
                what: "einstein homothety",
                t_extinct: -self.u / rate,
            });
        }
        Ok(EinsteinState { u, ..*self })
    }

    pub fn eigenvalue(&self, p: f64) -> f64 {
        self.lambda0 * self.u.powf(-p / 2.0)
    }
}

/// Which factor carries the first `p = 2` eigenfunction of the product.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProductMode {
    Sphere,
    Circle,
}

impl ProductState {
    pub fn new(a: f64, b: f64, circle_length: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && circle_length > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "product needs a > 0, b > 0, circle length > 0 (got {a}, {b}, {circle_length})"
            )));
        }
        Ok(Self {
            a,
            b,
            b0: b,
            circle_length,
        })
    }

    /// First nonzero `p = 2` eigenvalue: `min(2/a, (2π/ℓ)² b₀/b)`. Ties go to the sphere.
    pub fn first_eigenvalue(&self) -> (f64, ProductMode) {
        let sphere = 2.0 / self.a;
        let k = 2.0 * std::f64::consts::PI / self.circle_length;
        let circle = k * k * self.b0 / self.b;
        if sphere <= circle {
            (sphere, ProductMode::Sphere)
        } else {
            (circle, ProductMode::Circle)
        }
    }
}

/// RK4 step of `a' = 4ρ - 2`, `b' = 4ρ b / a`.
pub fn product_flow_step(state: &ProductState, rho: f64, dt: f64) -> Result<ProductState> {
    if rho >= 0.25 {
        return Err(Error::InvalidParameter(format!(
            "rho = {rho} violates rho < 1/4 for the 3-dimensional product"
        )));
    }
    let da = 4.0 * rho - 2.0;
    let extinct = |a: f64| Error::Extinction {
        what: "product sphere factor",
        t_extinct: a / -da,
    };
    if state.a <= 0.0 {
        return Err(extinct(state.a));
    }
    let f = |a: f64, b: f64| -> Result<(f64, f64)> {
        if a <= 0.0 {
            return Err(extinct(state.a));
        }
        Ok((da, 4.0 * rho * b / a))
    };
    let (a0, b0) = (state.a, state.b);
    let k1 = f(a0, b0)?;
    let k2 = f(a0 + 0.5 * dt * k1.0, b0 + 0.5 * dt * k1.1)?;
    let k3 = f(a0 + 0.5 * dt * k2.0, b0 + 0.5 * dt * k2.1)?;
    let k4 = f(a0 + dt * k3.0, b0 + dt * k3.1)?;
    let a = a0 + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
    let b = b0 + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
    if a <= 0.0 {
        return Err(extinct(state.a));
    }
    Ok(ProductState { a, b, ..*state })
}

impl ClosedFormGeometry {
    /// State at time `t` of a run started from `self` at `t = 0`. The product
    /// factor `b` is integrated by RK4 with steps no longer than `dt_max`.
    pub fn at(&self, t: f64, params: &FlowParams, dt_max: f64) -> Result<ClosedFormGeometry> {
        match self {
            ClosedFormGeometry::Einstein(s) => Ok(ClosedFormGeometry::Einstein(s.at(t, params)?)),
            ClosedFormGeometry::Product(s) => {
                if t == 0.0 {
                    return Ok(*self);
                }
                let steps = (t.abs() / dt_max).ceil().max(1.0) as usize;
                let dt = t / steps as f64;
                let mut cur = *s;
                for _ in 0..steps {
                    cur = product_flow_step(&cur, params.rho, dt)?;
                }
                Ok(ClosedFormGeometry::Product(cur))
            }
        }
    }

    /// First nonzero eigenvalue; the product is restricted to `p = 2`.
    pub fn eigenvalue(&self, p: f64) -> Result<f64> {
        match self {
            ClosedFormGeometry::Einstein(s) => Ok(s.eigenvalue(p)),
            ClosedFormGeometry::Product(s) => {
                if p != 2.0 {
                    return Err(Error::InvalidParameter(format!(
                        "product spectrum is only available for p = 2 (got p = {p})"
                    )));
                }
                Ok(s.first_eigenvalue().0)
            }
        }
    }
}

/// Initial curvature extrema feeding the comparison functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureBoundState {
    /// `R_min(0)`
    pub c: f64,
    /// `R_max(0)`
    pub big_c: f64,
    pub n: usize,
    pub rho: f64,
    pub p: f64,
}

impl CurvatureBoundState {
    pub fn new(c: f64, big_c: f64, params: &FlowParams) -> Result<Self> {
        if c > big_c {
            return Err(Error::InvalidParameter(format!("R_min(0) = {c} exceeds R_max(0) = {big_c}")));
        }
        Ok(Self {
            c,
            big_c,
            n: params.n,
            rho: params.rho,
            p: params.p,
        })
    }

    /// Rate `A = 2(n((1-(n-p)ρ)/p)² - ρ)` of the upper comparison ODE.
    pub fn upper_rate(&self) -> f64 {
        let n = self.n as f64;
        let k = (1.0 - (n - self.p) * self.rho) / self.p;
        2.0 * (n * k * k - self.rho)
    }

    /// End of the validity window of `σ` (infinite when `c ≤ 0`).
    pub fn sigma_window(&self) -> f64 {
        let n = self.n as f64;
        let rate = 2.0 * (1.0 - n * self.rho) * self.c;
        if rate > 0.0 {
            n / rate
        } else {
            f64::INFINITY
        }
    }

    /// End of the validity window of `γ` (infinite when `CA ≤ 0`).
    pub fn gamma_window(&self) -> f64 {
        let ca = self.big_c * self.upper_rate();
        if ca > 0.0 {
            1.0 / ca
        } else {
            f64::INFINITY
        }
    }
}

/// Lower comparison function `σ(t) = nc / (n - 2(1-nρ)ct)`.
pub fn sigma_bound(t: f64, state: &CurvatureBoundState) -> Result<f64> {
    let n = state.n as f64;
    let den = n - 2.0 * (1.0 - n * state.rho) * state.c * t;
    if den <= 0.0 {
        return Err(Error::Domain {
            what: "sigma(t)",
            t,
            t_prime: state.sigma_window(),
        });
    }
    Ok(n * state.c / den)
}

/// Upper comparison function `γ(t) = C / (1 - CAt)`.
pub fn gamma_bound(t: f64, state: &CurvatureBoundState) -> Result<f64> {
    if state.big_c <= 0.0 {
        return Err(Error::Domain {
            what: "gamma(t) (requires R_max(0) > 0)",
            t,
            t_prime: 0.0,
        });
    }
    let den = 1.0 - state.big_c * state.upper_rate() * t;
    if den <= 0.0 {
        return Err(Error::Domain {
            what: "gamma(t)",
            t,
            t_prime: state.gamma_window(),
        });
    }
    Ok(state.big_c / den)
}

impl FlowParams {
    /// `1 - nρ`
    pub fn one_minus_n_rho(&self) -> f64 {
        1.0 - self.n_f() * self.rho
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const TAU: f64 = 2.0 * PI;

    fn params(rho: f64, p: f64, n: usize) -> FlowParams {
        FlowParams::new(rho, p, n).unwrap()
    }

    #[test]
    fn advance_forward_then_backward_returns() {
        let g = TorusGeometry::from_fns(16, 16, TAU, TAU, |x, _| 0.1 * x.cos(), |_, y| 0.2 * y.sin()).unwrap();
        let pr = params(0.1, 2.0, 2);
        let dt = auto_dt(&g, 0.1);
        let there = advance(&g, &pr, true, 0.01, dt).unwrap();
        let back = advance(&there, &pr, true, -0.01, dt).unwrap();
        for (a, b) in back.u.values().iter().zip(g.u.values()) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in back.phi.values().iter().zip(g.phi.values()) {
            assert!((a - b).abs() < 1e-10);
        }
        assert_eq!(advance(&g, &pr, true, 0.0, dt).unwrap(), g);
    }

    #[test]
    fn einstein_at_composes() {
        let pr = params(0.1, 3.0, 3);
        let s = EinsteinState { a: 0.8, n: 3, lambda0: 2.0, u: 1.0 };
        let two = s.at(0.1, &pr).unwrap().at(0.15, &pr).unwrap();
        let one = s.at(0.25, &pr).unwrap();
        assert!((two.u - one.u).abs() < 1e-15);
    }

    #[test]
    fn flow_params_reject_rho_at_threshold() {
        assert!(FlowParams::new(0.5, 2.0, 2).is_err());
        assert!(FlowParams::new(0.25, 2.0, 3).is_err());
        assert!(FlowParams::new(0.2, 2.0, 3).is_ok());
        assert!(FlowParams::new(0.0, 1.0, 2).is_err());
        assert!(FlowParams::new(0.0, 2.0, 4).is_err());
    }

    #[test]
    fn flat_and_homothetic_tori_have_zero_curvature() {
        let g = TorusGeometry::flat(16, 16, TAU, TAU).unwrap();
        assert!(scalar_curvature(&g).values().iter().all(|&r| r == 0.0));
        let g = TorusGeometry::from_fns(16, 16, TAU, TAU, |_, _| 3.0, |_, _| 0.0).unwrap();
        assert!(scalar_curvature(&g).values().iter().all(|&r| r == 0.0));
    }

    #[test]
    fn curvature_of_small_mode_matches_linearization() {
        // R = -2 e^{-2u} Δ₀u; for u = ε cos x the 5-point symbol gives
        // Δ₀u = -ε cos x (2 - 2cos h)/h², so R ≈ 2ε cos x to first order.
        let eps = 1e-4;
        let g = TorusGeometry::from_fns(64, 64, TAU, TAU, |x, _| eps * x.cos(), |_, _| 0.0).unwrap();
        let r = scalar_curvature(&g);
        let h = g.hx();
        let symbol = (2.0 - 2.0 * h.cos()) / (h * h);
        for i in 0..64 {
            let x = i as f64 * h;
            let oracle = 2.0 * eps * symbol * x.cos() * (-2.0 * eps * x.cos()).exp();
            assert!((r.at(i as isize, 0) - oracle).abs() < 1e-15);
            assert!((r.at(i as isize, 0) - 2.0 * eps * x.cos()).abs() < eps * h * h / 5.0 + eps * eps * 4.0);
        }
    }

    #[test]
    fn flat_torus_is_a_fixed_point() {
        let g = TorusGeometry::flat(16, 16, TAU, TAU).unwrap();
        let p = params(0.1, 2.0, 2);
        let dt = auto_dt(&g, p.rho);
        let g1 = surface_flow_step(&g, &p, dt).unwrap();
        assert_eq!(g1, g);
    }

    fn mode_amplitude(f: &ScalarField) -> f64 {
        let n = f.nx();
        let h = TAU / n as f64;
        let s: f64 = (0..n).map(|i| f.at(i as isize, 0) * (i as f64 * h).cos()).sum();
        2.0 * s / n as f64
    }

    fn decay_rate(rho: f64) -> f64 {
        let eps = 1e-5;
        let g = TorusGeometry::from_fns(64, 64, TAU, TAU, |x, _| eps * x.cos(), |_, _| 0.0).unwrap();
        let p = params(rho, 2.0, 2);
        let dt = 1e-4;
        let g1 = surface_flow_step(&g, &p, dt).unwrap();
        (mode_amplitude(&g1.u) / mode_amplitude(&g.u)).ln() / dt
    }

    #[test]
    fn linearized_decay_rate_scales_with_one_minus_two_rho() {
        let h = TAU / 64.0;
        let symbol = (2.0 - 2.0 * h.cos()) / (h * h);
        let r0 = decay_rate(0.0);
        let r1 = decay_rate(0.25);
        // spectral solution of u_t = (1-2ρ) Δ₀u
        assert!((r0 + symbol).abs() < 1e-4, "{r0}");
        assert!((r1 + 0.5 * symbol).abs() < 1e-4, "{r1}");
        assert!((r1 / r0 - 0.5).abs() < 1e-4);
    }

    #[test]
    fn cfl_violation_is_rejected_before_stepping() {
        let g = TorusGeometry::flat(32, 32, TAU, TAU).unwrap();
        let p = params(0.0, 2.0, 2);
        let limit = stability_limit(&g, 0.0, true);
        assert!(matches!(
            coupled_flow_step(&g, &p, 1.01 * limit, true),
            Err(Error::Cfl { .. })
        ));
        assert!(auto_dt(&g, 0.0) < limit);
        assert!(auto_dt(&g, 0.45) < stability_limit(&g, 0.45, true));
    }

    #[test]
    fn phi_heat_mode_decays_exactly() {
        let eps = 0.1;
        let n = 64;
        let g = TorusGeometry::from_fns(n, n, TAU, TAU, |_, _| 0.0, |x, _| eps * x.cos()).unwrap();
        let dt = 0.01;
        // split into stable substeps
        let steps = (dt / (0.2 * stability_limit(&g, 0.0, true))).ceil() as usize;
        let mut cur = g.clone();
        for _ in 0..steps {
            cur = phi_heat_step(&cur, dt / steps as f64).unwrap();
        }
        let h = TAU / n as f64;
        let symbol = (2.0 - 2.0 * h.cos()) / (h * h);
        let amp = mode_amplitude(&cur.phi);
        assert!((amp / (eps * (-symbol * dt).exp()) - 1.0).abs() < 1e-8);
        // the continuum rate e^{-t} up to the stencil's O(h²) dispersion
        assert!((amp / (eps * (-dt).exp()) - 1.0).abs() < 1e-5);
        assert_eq!(cur.u, g.u);
    }

    #[test]
    fn phi_decay_rate_scales_conformally() {
        let eps = 0.1;
        let c = 0.3;
        let dt = 1e-4;
        let g0 = TorusGeometry::from_fns(64, 64, TAU, TAU, |_, _| 0.0, |x, _| eps * x.cos()).unwrap();
        let gc = TorusGeometry::from_fns(64, 64, TAU, TAU, |_, _| c, |x, _| eps * x.cos()).unwrap();
        let r0 = (mode_amplitude(&phi_heat_step(&g0, dt).unwrap().phi) / eps).ln() / dt;
        let rc = (mode_amplitude(&phi_heat_step(&gc, dt).unwrap().phi) / eps).ln() / dt;
        assert!((rc / r0 - (-2.0 * c).exp()).abs() < 1e-9);
    }

    #[test]
    fn einstein_examples() {
        let p = params(0.0, 2.0, 2);
        let (u, lam) = einstein_flow(
            0.25,
            &EinsteinState {
                a: 1.0,
                n: 2,
                lambda0: 1.0,
                u: 1.0,
            },
            &p,
        )
        .unwrap();
        assert_eq!(u, 0.5);
        assert_eq!(lam, 2.0);
        assert_eq!(einstein_scale(0.0, 3, 0.1, 7.0).unwrap(), 1.0);
        assert!((einstein_scale(1.0, 3, 1.0 / 6.0, 0.5).unwrap() - 0.5).abs() < 1e-15);
        match einstein_scale(1.0, 3, 1.0 / 6.0, 1.0) {
            Err(Error::Extinction { t_extinct, .. }) => assert!((t_extinct - 1.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn product_sphere_factor_is_affine() {
        let mut s = ProductState::new(1.0, 2.0, TAU).unwrap();
        let dt = 0.01;
        for _ in 0..25 {
            s = product_flow_step(&s, 0.0, dt).unwrap();
        }
        assert!((s.a - 0.5).abs() < 1e-12);
        assert!((s.b - 2.0).abs() < 1e-15);
        for rho in [-0.3, 0.0, 0.1, 0.24] {
            let s0 = ProductState::new(1.0, 1.0, TAU).unwrap();
            let s1 = product_flow_step(&s0, rho, 1e-3).unwrap();
            assert!(s1.a < s0.a);
            assert!((s1.a - (1.0 + (4.0 * rho - 2.0) * 1e-3)).abs() < 1e-14);
        }
    }

    #[test]
    fn product_circle_factor_matches_closed_form() {
        // With a(t) = a0 + kt, b' = 4ρ b / a integrates to b0 (a/a0)^{4ρ/k}.
        let rho = 0.2;
        let k = 4.0 * rho - 2.0;
        let mut s = ProductState::new(1.0, 1.5, TAU).unwrap();
        let dt = 1e-3;
        for _ in 0..200 {
            s = product_flow_step(&s, rho, dt).unwrap();
        }
        let exact = 1.5 * (s.a / 1.0).powf(4.0 * rho / k);
        assert!((s.b - exact).abs() < 1e-10);
    }

    #[test]
    fn product_extinction_is_reported() {
        let s = ProductState::new(0.001, 1.0, TAU).unwrap();
        assert!(matches!(product_flow_step(&s, 0.0, 0.01), Err(Error::Extinction { .. })));
    }

    #[test]
    fn sigma_examples() {
        let st = |c, n, rho| CurvatureBoundState {
            c,
            big_c: c.max(0.0),
            n,
            rho,
            p: 2.0,
        };
        assert_eq!(sigma_bound(3.0, &st(0.0, 2, 0.0)).unwrap(), 0.0);
        assert_eq!(sigma_bound(0.25, &st(1.0, 2, 0.0)).unwrap(), 4.0 / 3.0);
        assert!((sigma_bound(1.0, &st(-1.0, 3, 1.0 / 6.0)).unwrap() + 0.75).abs() < 1e-15);
        match sigma_bound(1.0, &st(1.0, 2, 0.0)) {
            Err(Error::Domain { t_prime, .. }) => assert_eq!(t_prime, 1.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gamma_examples() {
        let st = |big_c, n| CurvatureBoundState {
            c: 0.0,
            big_c,
            n,
            rho: 0.0,
            p: 2.0,
        };
        assert_eq!(gamma_bound(0.0, &st(1.0, 3)).unwrap(), 1.0);
        assert_eq!(st(1.0, 3).upper_rate(), 1.5);
        assert_eq!(gamma_bound(0.5, &st(1.0, 3)).unwrap(), 4.0);
        assert_eq!(st(2.0, 2).upper_rate(), 1.0);
        assert_eq!(gamma_bound(0.25, &st(2.0, 2)).unwrap(), 4.0);
        match gamma_bound(0.5, &st(2.0, 2)) {
            Err(Error::Domain { t_prime, .. }) => assert_eq!(t_prime, 0.5),
            other => panic!("{other:?}"),
        }
        assert!(gamma_bound(0.0, &st(0.0, 2)).is_err());
    }
}

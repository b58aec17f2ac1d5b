//! Variation of the first eigenvalue along the flow.
//!
//! Along `∂g/∂t = -2(Ric - ρRg)`, `∂φ/∂t = Δφ` the derivative of `λ` is
//!
//! ```text
//! dλ/dt = λ(1-nρ)∫R|f|^p - (1+ρp-ρn)∫R|∇f|^p + p∫|∇f|^{p-2}Ric(∇f,∇f)
//!       + λ∫(Δφ)|f|^p - ∫(Δφ)|∇f|^p
//! ```
//!
//! with every integral against `dμ` and `f` the normalized eigenfunction.
//! On the torus the integrals use the solver's own quadrature: node
//! integrals with nodal `R`, `Δφ` and cell integrals with their 4-point
//! cell averages. That makes the right-hand side the exact derivative of
//! the discrete eigenvalue along the semi-discrete flow.

use crate::error::{Error, Result};
use crate::fields::{CompensatedSum, ScalarField, TorusGeometry};
use crate::flow::{advance, laplace_beltrami, scalar_curvature, ClosedFormGeometry, FlowParams, ProductMode};
use crate::spectral::{first_eigenpair_from, p_power, Eigenpair, PEnergy, SolverOptions, TorusEnergy};

/// Denominator floor of relative errors.
pub const REL_FLOOR: f64 = 1e-12;

/// The integrals entering the variation formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariationIntegrals {
    pub lambda: f64,
    /// `∫R|f|^p dμ`
    pub r_fp: f64,
    /// `∫R|∇f|^p dμ`
    pub r_grad: f64,
    /// `∫|∇f|^{p-2} Ric(∇f, ∇f) dμ`
    pub ric_form: f64,
    /// `∫(∂φ/∂t)|f|^p dμ`
    pub lap_phi_fp: f64,
    /// `∫(∂φ/∂t)|∇f|^p dμ`
    pub lap_phi_grad: f64,
}

/// One comparison of the finite-difference `dλ/dt` with the formulas.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationReport {
    pub t0: f64,
    pub lambda: f64,
    pub fd_dlambda: f64,
    pub rhs_e2: f64,
    pub rhs_surface: Option<f64>,
    pub rhs_homogeneous: Option<f64>,
    pub rel_error: f64,
    pub h: f64,
    pub dt: f64,
    pub fd_step: f64,
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// General right-hand side for dimension `n`.
pub fn variation_rhs_e2(i: &VariationIntegrals, params: &FlowParams) -> f64 {
    let (n, rho, p) = (params.n as f64, params.rho, params.p);
    i.lambda * (1.0 - n * rho) * i.r_fp - (1.0 + rho * p - rho * n) * i.r_grad + p * i.ric_form
        + i.lambda * i.lap_phi_fp
        - i.lap_phi_grad
}

/// Surface form, with `Ric = (R/2)g` already substituted.
pub fn variation_rhs_surface(i: &VariationIntegrals, params: &FlowParams) -> Result<f64> {
    if params.n != 2 {
        return Err(Error::InvalidParameter(format!(
            "surface variation formula needs n = 2, got n = {}",
            params.n
        )));
    }
    let (rho, p) = (params.rho, params.p);
    Ok((1.0 - 2.0 * rho) * i.lambda * i.r_fp - (1.0 + rho * p - 2.0 * rho - 0.5 * p) * i.r_grad
        + i.lambda * i.lap_phi_fp
        - i.lap_phi_grad)
}

/// Constant-curvature form `-ρpRλ + p∫|∇f|^{p-2}Ric(∇f,∇f)dμ`.
pub fn variation_rhs_homogeneous(
    state: &ClosedFormGeometry,
    i: &VariationIntegrals,
    params: &FlowParams,
) -> f64 {
    -params.rho * params.p * state.scalar_curvature() * i.lambda + params.p * i.ric_form
}

/// Integrals on a closed-form geometry, where `R` is constant, `φ` is
/// constant and `∫|∇f|^p dμ = λ`.
pub fn closed_form_integrals(state: &ClosedFormGeometry, params: &FlowParams) -> Result<VariationIntegrals> {
    let lambda = state.eigenvalue(params.p)?;
    let r = state.scalar_curvature();
    let ric_form = match state {
        ClosedFormGeometry::Einstein(s) => (s.a / s.u) * lambda,
        ClosedFormGeometry::Product(s) => match s.first_eigenvalue().1 {
            ProductMode::Sphere => lambda / s.a,
            ProductMode::Circle => 0.0,
        },
    };
    Ok(VariationIntegrals {
        lambda,
        r_fp: r,
        r_grad: r * lambda,
        ric_form,
        lap_phi_fp: 0.0,
        lap_phi_grad: 0.0,
    })
}

/// Integrals on a torus for a certified eigenpair. With a static weight
/// (`evolve_phi = false`) the `∂φ/∂t` integrals vanish.
pub fn torus_integrals(
    geom: &TorusGeometry,
    pair: &Eigenpair,
    params: &FlowParams,
    evolve_phi: bool,
    tol_eig: f64,
) -> Result<VariationIntegrals> {
    if !(pair.residual <= tol_eig) {
        return Err(Error::Uncertified {
            residual: pair.residual,
            tol: tol_eig,
        });
    }
    let energy = TorusEnergy::new(geom, params.p, 0.0)?;
    if pair.f.len() != energy.len() {
        return Err(Error::InvalidGeometry("eigenfunction does not match the grid".into()));
    }
    let r = scalar_curvature(geom);
    let phi_rate = if evolve_phi {
        laplace_beltrami(geom, &geom.phi)?
    } else {
        geom.zeros()
    };
    let p = params.p;
    let m = energy.measures();
    let f = &pair.f;
    let node = |w: &ScalarField| {
        let mut acc = CompensatedSum::new();
        for ((v, mi), wi) in f.iter().zip(m).zip(w.values()) {
            acc.add(wi * v.abs().powf(p) * mi);
        }
        acc.value()
    };
    let s = energy.cell_grad_sq(f);
    let cell_w = energy.cell_measures();
    let grad_p: Vec<f64> = s.iter().zip(cell_w).map(|(sc, w)| sc.powf(0.5 * p) * w).collect();
    let cell = |w: &ScalarField| {
        let mut acc = CompensatedSum::new();
        for (wc, g) in w.cell_average().iter().zip(&grad_p) {
            acc.add(wc * g);
        }
        acc.value()
    };
    let r_grad = cell(&r);
    Ok(VariationIntegrals {
        lambda: pair.lambda,
        r_fp: node(&r),
        r_grad,
        ric_form: 0.5 * r_grad,
        lap_phi_fp: node(&phi_rate),
        lap_phi_grad: cell(&phi_rate),
    })
}

/// `(λ(t₀+δ) - λ(t₀-δ)) / (2δ)`.
pub fn fd_dlambda(lambda_minus: f64, lambda_plus: f64, fd_step: f64) -> f64 {
    (lambda_plus - lambda_minus) / (2.0 * fd_step)
}

/// Solves at `t₀ ± fd_step` warm-started from the `t₀` eigenfunction (no
/// cold restarts, so both ends stay on the same branch) and compares the
/// central difference with the formulas.
#[allow(clippy::too_many_arguments)]
pub fn verify_torus_variation(
    geom: &TorusGeometry,
    t0: f64,
    pair: &Eigenpair,
    params: &FlowParams,
    evolve_phi: bool,
    opts: &SolverOptions,
    fd_step: f64,
    dt_max: f64,
) -> Result<VariationReport> {
    let integrals = torus_integrals(geom, pair, params, evolve_phi, opts.tol_eig)?;
    let minus = advance(geom, params, evolve_phi, -fd_step, dt_max)?;
    let plus = advance(geom, params, evolve_phi, fd_step, dt_max)?;
    let lm = first_eigenpair_from(&minus, params.p, opts, Some(&pair.f), 0)?;
    let lp = first_eigenpair_from(&plus, params.p, opts, Some(&pair.f), 0)?;
    let fd = fd_dlambda(lm.lambda, lp.lambda, fd_step);
    let rhs = variation_rhs_e2(&integrals, params);
    Ok(VariationReport {
        t0,
        lambda: pair.lambda,
        fd_dlambda: fd,
        rhs_e2: rhs,
        rhs_surface: Some(variation_rhs_surface(&integrals, params)?),
        rhs_homogeneous: None,
        rel_error: relative_error(fd, rhs),
        h: geom.hx().max(geom.hy()),
        dt: dt_max,
        fd_step,
    })
}

/// Same comparison on a closed-form path started at `initial` (`t = 0`).
pub fn verify_closed_form_variation(
    initial: &ClosedFormGeometry,
    t0: f64,
    params: &FlowParams,
    fd_step: f64,
    dt_max: f64,
) -> Result<VariationReport> {
    let state = initial.at(t0, params, dt_max)?;
    let integrals = closed_form_integrals(&state, params)?;
    let lm = state.at(-fd_step, params, fd_step)?.eigenvalue(params.p)?;
    let lp = state.at(fd_step, params, fd_step)?.eigenvalue(params.p)?;
    let fd = fd_dlambda(lm, lp, fd_step);
    let rhs = variation_rhs_e2(&integrals, params);
    let surface = if params.n == 2 {
        Some(variation_rhs_surface(&integrals, params)?)
    } else {
        None
    };
    Ok(VariationReport {
        t0,
        lambda: integrals.lambda,
        fd_dlambda: fd,
        rhs_e2: rhs,
        rhs_surface: surface,
        rhs_homogeneous: Some(variation_rhs_homogeneous(&state, &integrals, params)),
        rel_error: relative_error(fd, rhs),
        h: 0.0,
        dt: dt_max,
        fd_step,
    })
}

/// Transports `f₀` from `geom_t0` to `geom_t` by
/// `h = f₀ [det g(t₀) / det g(t)]^{1/(2(p-1))} = f₀ e^{-2(u_t - u_{t₀})/(p-1)}`
/// and normalizes to `∫|h|^p dμ_t = 1`.
pub fn transport_test_function(
    f0: &ScalarField,
    geom_t0: &TorusGeometry,
    geom_t: &TorusGeometry,
    p: f64,
) -> Result<ScalarField> {
    geom_t0.check_compatible(f0)?;
    geom_t.check_compatible(f0)?;
    let h: Vec<f64> = f0
        .values()
        .iter()
        .zip(geom_t.u.values().iter().zip(geom_t0.u.values()))
        .map(|(f, (ut, u0))| f * (-2.0 * (ut - u0) / (p - 1.0)).exp())
        .collect();
    let m = crate::fields::measure_weights(geom_t)?;
    let norm = p_power(m.values(), &h, p).powf(1.0 / p);
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::InvalidParameter("cannot normalize a zero test function".into()));
    }
    ScalarField::new(geom_t.nx(), geom_t.ny(), h.iter().map(|v| v / norm).collect())
}

/// Pointwise relative error `max|a - b| / max(max|b|, floor)`.
fn sup_relative(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = b.iter().chain(a).map(|v| v.abs()).fold(0.0, f64::max).max(REL_FLOOR);
    num / den
}

/// Time-frozen `f`: central difference of `|∇f|²_g` per cell against
/// `(1-2ρ)R|∇f|²_g`. Returns the sup-norm relative error.
pub fn lemma_el1_check(
    geom: &TorusGeometry,
    f: &ScalarField,
    params: &FlowParams,
    evolve_phi: bool,
    fd_step: f64,
    dt_max: f64,
) -> Result<f64> {
    let minus = advance(geom, params, evolve_phi, -fd_step, dt_max)?;
    let plus = advance(geom, params, evolve_phi, fd_step, dt_max)?;
    let grad = |g: &TorusGeometry| -> Result<Vec<f64>> { Ok(crate::fields::gradient_sq(g, f)?.norm_sq) };
    let (sm, s0, sp) = (grad(&minus)?, grad(geom)?, grad(&plus)?);
    let fd: Vec<f64> = sp.iter().zip(&sm).map(|(a, b)| (a - b) / (2.0 * fd_step)).collect();
    let rc = scalar_curvature(geom).cell_average();
    let c = 1.0 - 2.0 * params.rho;
    let rhs: Vec<f64> = rc.iter().zip(&s0).map(|(r, s)| c * r * s).collect();
    Ok(sup_relative(&fd, &rhs))
}

/// Time-frozen `f`: central difference of `Δ_g f` per node against
/// `(1-2ρ)RΔ_g f`. Returns the sup-norm relative error.
pub fn lemma_el3_check(
    geom: &TorusGeometry,
    f: &ScalarField,
    params: &FlowParams,
    evolve_phi: bool,
    fd_step: f64,
    dt_max: f64,
) -> Result<f64> {
    let minus = advance(geom, params, evolve_phi, -fd_step, dt_max)?;
    let plus = advance(geom, params, evolve_phi, fd_step, dt_max)?;
    let (lm, l0, lp) = (
        laplace_beltrami(&minus, f)?,
        laplace_beltrami(geom, f)?,
        laplace_beltrami(&plus, f)?,
    );
    let fd: Vec<f64> = lp
        .values()
        .iter()
        .zip(lm.values())
        .map(|(a, b)| (a - b) / (2.0 * fd_step))
        .collect();
    let r = scalar_curvature(geom);
    let c = 1.0 - 2.0 * params.rho;
    let rhs: Vec<f64> = r.values().iter().zip(l0.values()).map(|(r, l)| c * r * l).collect();
    Ok(sup_relative(&fd, &rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{EinsteinState, ProductState};
    use crate::spectral::first_eigenpair;
    use std::f64::consts::PI;

    const TAU: f64 = 2.0 * PI;

    fn opts() -> SolverOptions {
        SolverOptions {
            tol_eig: 1e-10,
            restarts: 1,
            ..SolverOptions::default()
        }
    }

    fn einstein(a: f64, n: usize) -> ClosedFormGeometry {
        ClosedFormGeometry::Einstein(EinsteinState {
            a,
            n,
            lambda0: 1.0,
            u: 1.0,
        })
    }

    #[test]
    fn flat_torus_rhs_vanishes() {
        let g = TorusGeometry::flat(16, 16, TAU, TAU).unwrap();
        let params = FlowParams::new(0.1, 3.0, 2).unwrap();
        let pair = first_eigenpair(&g, 3.0, &opts()).unwrap();
        let i = torus_integrals(&g, &pair, &params, true, 1e-10).unwrap();
        assert_eq!(variation_rhs_e2(&i, &params), 0.0);
        let rep = verify_torus_variation(&g, 0.0, &pair, &params, true, &opts(), 1e-3, 1e-3).unwrap();
        assert!(rep.fd_dlambda.abs() < 1e-10);
    }

    #[test]
    fn uncertified_pair_is_rejected() {
        let g = TorusGeometry::flat(8, 8, TAU, TAU).unwrap();
        let params = FlowParams::new(0.0, 2.0, 2).unwrap();
        let mut pair = first_eigenpair(&g, 2.0, &opts()).unwrap();
        pair.residual = 1.0;
        assert!(matches!(
            torus_integrals(&g, &pair, &params, true, 1e-8),
            Err(Error::Uncertified { .. })
        ));
    }

    #[test]
    fn einstein_surface_rhs() {
        // a = 1, n = 2, ρ = 0, p = 2: rhs = p a (1 - nρ) λ₀ / u = 2λ₀
        let params = FlowParams::new(0.0, 2.0, 2).unwrap();
        let state = einstein(1.0, 2);
        let i = closed_form_integrals(&state, &params).unwrap();
        assert_eq!(variation_rhs_e2(&i, &params), 2.0);
        assert_eq!(variation_rhs_surface(&i, &params).unwrap(), 2.0);
        assert_eq!(variation_rhs_homogeneous(&state, &i, &params), 2.0);
    }

    #[test]
    fn einstein_consistency_chain() {
        for (a, n, rho, p) in [(1.0, 2, 0.0, 2.0), (0.7, 3, 0.1, 3.0), (-0.5, 3, -0.2, 2.5), (1.0, 2, 0.3, 4.0)] {
            let params = FlowParams::new(rho, p, n).unwrap();
            let rep = verify_closed_form_variation(&einstein(a, n), 0.05, &params, 1e-4, 1e-3).unwrap();
            let state = einstein(a, n).at(0.05, &params, 1e-3).unwrap();
            let u = match state {
                ClosedFormGeometry::Einstein(s) => s.u,
                _ => unreachable!(),
            };
            let closed = p * a * (1.0 - n as f64 * rho) * rep.lambda / u;
            assert!(relative_error(rep.fd_dlambda, closed) < 1e-6);
            assert!(relative_error(rep.rhs_e2, closed) < 1e-12);
            assert!(relative_error(rep.rhs_homogeneous.unwrap(), closed) < 1e-12);
        }
    }

    #[test]
    fn product_sphere_mode_derivative() {
        let params = FlowParams::new(0.0, 2.0, 3).unwrap();
        let state = ClosedFormGeometry::Product(ProductState::new(1.0, 1.0, 0.5).unwrap());
        let rep = verify_closed_form_variation(&state, 0.0, &params, 1e-4, 1e-4).unwrap();
        assert_eq!(rep.lambda, 2.0);
        assert_eq!(rep.rhs_homogeneous.unwrap(), 4.0);
        assert!((rep.fd_dlambda - 4.0).abs() < 1e-6);
        assert!((rep.rhs_e2 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn product_circle_mode_derivative() {
        let params = FlowParams::new(0.2, 2.0, 3).unwrap();
        let state = ClosedFormGeometry::Product(ProductState::new(1.0, 1.0, 10.0).unwrap());
        let rep = verify_closed_form_variation(&state, 0.1, &params, 1e-4, 1e-3).unwrap();
        assert!(rep.rel_error < 1e-6, "{rep:?}");
        assert!(relative_error(rep.rhs_homogeneous.unwrap(), rep.rhs_e2) < 1e-12);
    }

    #[test]
    fn surface_formula_equals_general_formula() {
        let g = TorusGeometry::from_fns(24, 24, TAU, TAU, |x, _| 0.2 * x.cos(), |_, y| 0.1 * y.cos()).unwrap();
        for (rho, p) in [(0.0, 2.0), (0.2, 3.0), (-0.3, 2.5)] {
            let params = FlowParams::new(rho, p, 2).unwrap();
            let pair = first_eigenpair(&g, p, &opts()).unwrap();
            let i = torus_integrals(&g, &pair, &params, true, 1e-10).unwrap();
            let a = variation_rhs_e2(&i, &params);
            let b = variation_rhs_surface(&i, &params).unwrap();
            assert!(relative_error(a, b) < 1e-12);
        }
    }

    #[test]
    fn torus_variation_matches_central_difference() {
        let g = TorusGeometry::from_fns(32, 32, TAU, TAU, |x, _| 0.2 * x.cos(), |_, y| 0.1 * y.cos()).unwrap();
        for (rho, p) in [(0.0, 2.0), (0.2, 3.0)] {
            let params = FlowParams::new(rho, p, 2).unwrap();
            let pair = first_eigenpair(&g, p, &opts()).unwrap();
            let dt = crate::flow::auto_dt(&g, rho);
            let rep = verify_torus_variation(&g, 0.0, &pair, &params, true, &opts(), 1e-3, dt).unwrap();
            assert!(rep.rel_error < 1e-3, "{rep:?}");
        }
    }

    #[test]
    fn identity_transport() {
        let g = TorusGeometry::from_fns(8, 8, TAU, TAU, |x, _| 0.1 * x.sin(), |_, _| 0.0).unwrap();
        let f = g.sample(|x, y| x.cos() + y.sin());
        let m = crate::fields::measure_weights(&g).unwrap();
        let norm = p_power(m.values(), f.values(), 3.0).powf(1.0 / 3.0);
        let f = f.map(|v| v / norm);
        let t = transport_test_function(&f, &g, &g, 3.0).unwrap();
        for (a, b) in t.values().iter().zip(f.values()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn homothety_transport_renormalizes() {
        let g = TorusGeometry::from_fns(8, 8, TAU, TAU, |x, _| 0.1 * x.sin(), |_, _| 0.0).unwrap();
        let gc = TorusGeometry::new(g.lx, g.ly, g.u.map(|u| u + 0.4), g.phi.clone()).unwrap();
        let f = g.sample(|x, y| x.cos() + y.sin());
        let t = transport_test_function(&f, &g, &gc, 3.0).unwrap();
        let m = crate::fields::measure_weights(&gc).unwrap();
        assert!((p_power(m.values(), t.values(), 3.0) - 1.0).abs() < 1e-13);
        let ratio = t.values()[1] / f.values()[1];
        for (a, b) in t.values().iter().zip(f.values()) {
            assert!((a - ratio * b).abs() < 1e-14);
        }
    }

    #[test]
    fn lemma_checks_on_flat_torus_are_exact() {
        let g = TorusGeometry::flat(16, 16, TAU, TAU).unwrap();
        let f = g.sample(|_, y| y.sin());
        let params = FlowParams::new(0.0, 2.0, 2).unwrap();
        assert_eq!(lemma_el1_check(&g, &f, &params, true, 1e-4, 1e-3).unwrap(), 0.0);
        assert_eq!(lemma_el3_check(&g, &f, &params, true, 1e-4, 1e-3).unwrap(), 0.0);
    }

    #[test]
    fn lemma_checks_on_perturbed_torus() {
        let g = TorusGeometry::from_fns(64, 64, TAU, TAU, |x, _| 0.1 * x.cos(), |_, _| 0.0).unwrap();
        for rho in [0.0, 0.25] {
            let params = FlowParams::new(rho, 2.0, 2).unwrap();
            let dt = crate::flow::auto_dt(&g, rho);
            let e1 = lemma_el1_check(&g, &g.sample(|_, y| y.sin()), &params, true, 1e-4, dt).unwrap();
            let e3 = lemma_el3_check(&g, &g.sample(|x, _| x.sin()), &params, true, 1e-4, dt).unwrap();
            assert!(e1 < 1e-4 && e3 < 1e-4, "rho={rho}: {e1} {e3}");
        }
    }
}

//! Weighted p-Laplacian: discrete energy and operator, the first nonzero
//! eigenpair, and an independent brute-force oracle on tiny graphs.
//!
//! The first nonzero eigenvalue is characterized variationally as the
//! minimum of `∫|∇f|^p dμ` over `∫|f|^p dμ = 1` and the zero-p-median
//! constraint `∫|f|^{p-2} f dμ = 0`.

mod energy;
mod graph;
mod linear;
mod oracle;
mod precond;
mod solver;

pub use energy::{
    apply_weighted_p_laplacian, p_energy, p_norm, p_power, rayleigh_quotient, TorusEnergy,
};
pub use graph::{Graph, GraphEnergy};
pub use oracle::{
    brute_force_small_eigen, dense_p2_eigenvalue, dense_torus_p2_eigenvalue, flat_torus_dense_eigenvalue,
};
pub use solver::{
    first_eigenpair, first_eigenpair_from, first_eigenpair_graph, p_median, project,
};

/// Discrete p-Dirichlet energy on a finite set of nodes with measures.
///
/// `energy` must be invariant under adding a constant to `f`; the solver
/// relies on `Σ_i ∂E/∂f_i = 0`.
pub trait PEnergy {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn p(&self) -> f64;

    fn epsilon(&self) -> f64;

    /// Node measures `dμ_i`.
    fn measures(&self) -> &[f64];

    fn energy(&self, f: &[f64]) -> f64;

    /// Writes `∂E/∂f` into `grad` and returns `E(f)`.
    fn energy_grad(&self, f: &[f64], grad: &mut [f64]) -> f64;

    /// Approximate inverse of the `p = 2` stiffness; identity by default.
    fn precondition(&self, r: &[f64], out: &mut [f64]) {
        out.copy_from_slice(r);
    }

    /// Same geometry at another exponent.
    fn with_p(&self, p: f64) -> Self
    where
        Self: Sized;
}

/// Eigensolver controls.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Bound on the measure-weighted 2-norm of `Δ_{p,φ}f + λ|f|^{p-2}f`.
    pub tol_eig: f64,
    /// Iterations allowed per restart.
    pub max_iter: usize,
    /// Seeded random initializations.
    pub restarts: usize,
    pub seed: u64,
    pub epsilon_reg: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_eig: 1e-8,
            max_iter: 20000,
            restarts: 4,
            seed: 0,
            epsilon_reg: 0.0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> crate::Result<()> {
        let mut bad = Vec::new();
        if !(self.tol_eig > 0.0 && self.tol_eig.is_finite()) {
            bad.push(format!("tol_eig = {} must be positive", self.tol_eig));
        }
        if self.max_iter == 0 {
            bad.push("max_iter must be positive".to_string());
        }
        if !(self.epsilon_reg >= 0.0 && self.epsilon_reg.is_finite()) {
            bad.push(format!("epsilon_reg = {} must be >= 0", self.epsilon_reg));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(crate::Error::InvalidParameter(bad.join("; ")))
        }
    }
}

/// Certified first nonzero eigenpair.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigenpair {
    pub lambda: f64,
    /// Node values, normalized to `∫|f|^p dμ = 1` with zero p-median.
    pub f: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub restarts_used: usize,
}

impl Eigenpair {
    /// Eigenfunction as a field on `geom`'s grid.
    pub fn field(&self, geom: &crate::TorusGeometry) -> crate::ScalarField {
        crate::ScalarField::new(geom.nx(), geom.ny(), self.f.clone()).expect("eigenfunction matches grid")
    }
}

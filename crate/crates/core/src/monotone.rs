//! Monotone quantities, their pinching hypotheses, and trend verdicts.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fields::TorusGeometry;
use crate::flow::{laplace_beltrami, scalar_curvature, ClosedFormGeometry, FlowParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QuantityId {
    T33Proof,
    T33Statement,
    T37,
    T38Raw,
    SurfLower,
    Cor35,
    Prop312A,
    EinsteinQ,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectedTrend {
    Nondecreasing,
    Nonincreasing,
    ConstantOrIncreasing,
}

/// How a quantity enters the run verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Armed trend must match the expected trend.
    Gating,
    /// Reported next to its gating sibling, never decides the exit status.
    Audit,
    /// `λ(t)` must stay above the quantity.
    LowerBound,
}

impl QuantityId {
    pub const ALL: [QuantityId; 8] = [
        QuantityId::T33Proof,
        QuantityId::T33Statement,
        QuantityId::T37,
        QuantityId::T38Raw,
        QuantityId::SurfLower,
        QuantityId::Cor35,
        QuantityId::Prop312A,
        QuantityId::EinsteinQ,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QuantityId::T33Proof => "T33_proof",
            QuantityId::T33Statement => "T33_statement",
            QuantityId::T37 => "T37",
            QuantityId::T38Raw => "T38_raw",
            QuantityId::SurfLower => "Surf_lower",
            QuantityId::Cor35 => "Cor35",
            QuantityId::Prop312A => "Prop312_A",
            QuantityId::EinsteinQ => "Einstein_Q",
        }
    }

    pub fn expected_trend(self) -> ExpectedTrend {
        match self {
            QuantityId::T37 => ExpectedTrend::Nonincreasing,
            QuantityId::EinsteinQ => ExpectedTrend::ConstantOrIncreasing,
            _ => ExpectedTrend::Nondecreasing,
        }
    }

    pub fn role(self) -> Role {
        match self {
            QuantityId::T33Statement => Role::Audit,
            QuantityId::SurfLower => Role::LowerBound,
            _ => Role::Gating,
        }
    }
}

impl fmt::Display for QuantityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QuantityId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        QuantityId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown quantity id '{s}'")))
    }
}

impl fmt::Display for ExpectedTrend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExpectedTrend::Nondecreasing => "nondecreasing",
            ExpectedTrend::Nonincreasing => "nonincreasing",
            ExpectedTrend::ConstantOrIncreasing => "constant_or_increasing",
        })
    }
}

/// Constants shared by the catalog.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantityConstants {
    /// `R_min(0)`
    pub c: f64,
    /// `R_max(0)`
    pub big_c: f64,
    pub n: usize,
    pub p: f64,
    pub rho: f64,
    /// Coefficient of `R` in the lower Ricci pinching.
    pub beta: f64,
    /// Coefficient of `Δφ` in the lower Ricci pinching.
    pub gamma: f64,
    /// Shift `a ≥ 0` in `Ric - ((1-(n-p)ρ)/p)Rg ≥ -ag`.
    pub a_pinch: f64,
    /// `ε` in `Ric ≥ εRg`.
    pub epsilon: f64,
    /// Einstein constant of the initial metric, if it is Einstein.
    pub a_einstein: Option<f64>,
    pub lambda0: f64,
}

impl QuantityConstants {
    /// `A = 2(n((1-(n-p)ρ)/p)² - ρ)`
    pub fn upper_rate(&self) -> f64 {
        let n = self.n as f64;
        let k = (1.0 - (n - self.p) * self.rho) / self.p;
        2.0 * (n * k * k - self.rho)
    }

    /// `A₃ = p(β+γ) - ρ(p+2n)`
    pub fn t33_rate(&self) -> f64 {
        self.p * (self.beta + self.gamma) - self.rho * (self.p + 2.0 * self.n as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantitySpec {
    pub id: QuantityId,
    pub constants: QuantityConstants,
    pub expected_trend: ExpectedTrend,
}

impl QuantitySpec {
    pub fn new(id: QuantityId, constants: QuantityConstants) -> Self {
        Self {
            id,
            constants,
            expected_trend: id.expected_trend(),
        }
    }

    /// End `T′` of the validity window; infinite when unbounded.
    pub fn window(&self) -> f64 {
        let k = &self.constants;
        let n = k.n as f64;
        // Each factor has the form `x₀ - s·t`; it vanishes at `x₀/s` when `s > 0`.
        let end = |x0: f64, s: f64| if s > 0.0 { x0 / s } else { f64::INFINITY };
        match self.id {
            QuantityId::T33Proof => end(n, 2.0 * (1.0 - n * k.rho) * k.c),
            QuantityId::T33Statement => end(n, 2.0 * k.c),
            QuantityId::T37 => end(1.0, k.big_c * k.upper_rate()),
            QuantityId::T38Raw => f64::INFINITY,
            QuantityId::SurfLower => end(1.0, k.c * (1.0 - 2.0 * k.rho)),
            QuantityId::Cor35 => end(3.0, 2.0 * (1.0 - 3.0 * k.rho) * k.c),
            QuantityId::Prop312A => end(3.0, 2.0 * (1.0 - 3.0 * k.rho) * k.c)
                .min(end(1.0, 2.0 * (1.0 - k.rho) * k.big_c)),
            QuantityId::EinsteinQ => end(1.0, 2.0 * k.a_einstein.unwrap_or(0.0) * (1.0 - n * k.rho)),
        }
    }
}

/// `∫₀ᵗ A(τ)dτ` for the 3-manifold rate
/// `A(t) = 3c(1-3ρ)/(3-2(1-3ρ)ct) + K/(1/C - 2(1-ρ)t)`, `K = 3ρ+pε-1-ρp`.
pub fn prop312_integral(k: &QuantityConstants, t: f64) -> f64 {
    let first = -1.5 * (1.0 - 2.0 * (1.0 - 3.0 * k.rho) * k.c * t / 3.0).ln();
    let kk = 3.0 * k.rho + k.p * k.epsilon - 1.0 - k.rho * k.p;
    let second = if k.big_c == 0.0 {
        0.0
    } else {
        -kk / (2.0 * (1.0 - k.rho)) * (1.0 - 2.0 * (1.0 - k.rho) * k.big_c * t).ln()
    };
    first + second
}

/// Evaluates the quantity at time `t` from the eigenvalue `λ(t)`.
pub fn quantity_value(spec: &QuantitySpec, t: f64, lambda: f64) -> Result<f64> {
    let t_prime = spec.window();
    if !(t < t_prime) || t < 0.0 {
        return Err(Error::Domain {
            what: spec.id.name(),
            t,
            t_prime,
        });
    }
    let k = &spec.constants;
    let n = k.n as f64;
    let one_minus_n_rho = 1.0 - n * k.rho;
    let v = match spec.id {
        QuantityId::T33Proof => {
            let base = n - 2.0 * one_minus_n_rho * k.c * t;
            lambda * base.powf(n * k.t33_rate() / (2.0 * one_minus_n_rho))
        }
        QuantityId::T33Statement => lambda * (n - 2.0 * k.c * t).powf(1.0 / n),
        QuantityId::T37 => {
            let a = k.upper_rate();
            if a == 0.0 {
                return Err(Error::InvalidParameter("T37 exponent needs A != 0".into()));
            }
            lambda * (1.0 - k.big_c * a * t).powf((n * k.rho - 1.0) / a)
        }
        QuantityId::T38Raw => lambda,
        QuantityId::SurfLower => k.lambda0 / (1.0 - k.c * (1.0 - 2.0 * k.rho) * t).powf(0.5 * k.p),
        QuantityId::Cor35 => lambda * (3.0 - 2.0 * (1.0 - 3.0 * k.rho) * k.c * t).powf(1.5),
        QuantityId::Prop312A => (-prop312_integral(k, t)).exp() * lambda,
        QuantityId::EinsteinQ => {
            let a = k
                .a_einstein
                .ok_or_else(|| Error::InvalidParameter("Einstein_Q needs an Einstein initial metric".into()))?;
            lambda * (1.0 - 2.0 * a * one_minus_n_rho * t).powf(0.5 * k.p)
        }
    };
    Ok(v)
}

/// Pointwise curvature data: per node `R`, the extreme Ricci eigenvalues
/// and `Δφ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureSample {
    pub r: Vec<f64>,
    pub ric_min: Vec<f64>,
    pub ric_max: Vec<f64>,
    pub lap_phi: Vec<f64>,
}

impl CurvatureSample {
    /// On a surface `Ric = (R/2)g`.
    pub fn torus(geom: &TorusGeometry) -> Result<Self> {
        let r = scalar_curvature(geom).into_values();
        let half: Vec<f64> = r.iter().map(|v| 0.5 * v).collect();
        Ok(Self {
            lap_phi: laplace_beltrami(geom, &geom.phi)?.into_values(),
            ric_min: half.clone(),
            ric_max: half,
            r,
        })
    }

    /// Homogeneous geometry with constant weight.
    pub fn closed_form(state: &ClosedFormGeometry) -> Self {
        let (lo, hi) = state.ricci_range();
        Self {
            r: vec![state.scalar_curvature()],
            ric_min: vec![lo],
            ric_max: vec![hi],
            lap_phi: vec![0.0],
        }
    }

    pub fn r_min(&self) -> f64 {
        self.r.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn r_max(&self) -> f64 {
        self.r.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisVerdict {
    pub id: QuantityId,
    pub holds: bool,
    /// Most violated pointwise slack.
    pub margin: f64,
    /// Node of the worst slack.
    pub location: Option<usize>,
    /// Violated conditions on the constants, if any.
    pub side_failures: Vec<String>,
}

impl HypothesisVerdict {
    /// Joins verdicts from successive samples.
    pub fn merge(&self, other: &HypothesisVerdict) -> HypothesisVerdict {
        let (margin, location) = if other.margin < self.margin {
            (other.margin, other.location)
        } else {
            (self.margin, self.location)
        };
        let mut side = self.side_failures.clone();
        for s in &other.side_failures {
            if !side.contains(s) {
                side.push(s.clone());
            }
        }
        HypothesisVerdict {
            id: self.id,
            holds: self.holds && other.holds,
            margin,
            location,
            side_failures: side,
        }
    }
}

struct Scan {
    holds: bool,
    margin: f64,
    location: Option<usize>,
}

impl Scan {
    fn new() -> Self {
        Self {
            holds: true,
            margin: f64::INFINITY,
            location: None,
        }
    }

    fn check(&mut self, strict: bool, slack: impl Iterator<Item = f64>) {
        for (i, s) in slack.enumerate() {
            if s < self.margin {
                self.margin = s;
                self.location = Some(i);
            }
            if (strict && !(s > 0.0)) || !(s >= 0.0) {
                self.holds = false;
            }
        }
    }
}

/// Scans one sample. `initial` selects the conditions imposed at `t = 0`
/// only; `phi_static` records whether `φ` is frozen along the run.
pub fn hypothesis_check(
    spec: &QuantitySpec,
    sample: &CurvatureSample,
    params: &FlowParams,
    phi_static: bool,
    initial: bool,
) -> HypothesisVerdict {
    let k = &spec.constants;
    let n = params.n as f64;
    let (p, rho) = (params.p, params.rho);
    let mut side = Vec::new();
    let mut require = |ok: bool, what: &str| {
        if !ok {
            side.push(what.to_string());
        }
    };
    let mut scan = Scan::new();
    let r = &sample.r;
    let nodes = || 0..r.len();
    match spec.id {
        QuantityId::T33Proof | QuantityId::T33Statement => {
            require(k.beta >= (1.0 + rho * (p - n)) / p, "beta >= (1+rho(p-n))/p");
            require(k.gamma >= 1.0 / p, "gamma >= 1/p");
            scan.check(
                false,
                nodes().map(|i| sample.ric_min[i] - (k.beta * r[i] + k.gamma * sample.lap_phi[i])),
            );
            scan.check(true, nodes().map(|i| sample.lap_phi[i] - r[i]));
        }
        QuantityId::T37 => {
            require(k.big_c > 0.0, "R_max(0) > 0");
            require(k.upper_rate() != 0.0, "A != 0");
            scan.check(true, sample.ric_min.iter().copied());
            let top = (1.0 + p * rho - n * rho) / p;
            scan.check(true, nodes().map(|i| top * r[i] - sample.ric_max[i]));
            scan.check(true, nodes().map(|i| sample.lap_phi[i] - r[i]));
        }
        QuantityId::T38Raw => {
            require(k.a_pinch >= 0.0, "a >= 0");
            require(phi_static, "phi independent of t");
            let kk = (1.0 - (n - p) * rho) / p;
            scan.check(false, nodes().map(|i| sample.ric_min[i] - kk * r[i] + k.a_pinch));
            if initial {
                let floor = p * k.a_pinch / (1.0 - n * rho);
                scan.check(false, r.iter().map(|v| v - floor));
            }
        }
        QuantityId::SurfLower => {
            require(params.n == 2, "n = 2");
            require(p >= 2.0, "p >= 2");
            require(phi_static, "phi independent of t");
            scan.check(false, r.iter().copied());
        }
        QuantityId::Cor35 => {
            require(params.n == 3, "n = 3");
            require(rho > 1.0 / 6.0 && rho < 0.25, "1/6 < rho < 1/4");
            require(p >= 3.0, "p >= 3");
            require(phi_static, "phi independent of t");
            let kk = (1.0 + rho * p - 3.0 * rho) / p;
            scan.check(true, nodes().map(|i| sample.ric_min[i] - kk * r[i]));
            scan.check(false, r.iter().copied());
        }
        QuantityId::Prop312A => {
            require(params.n == 3, "n = 3");
            require(rho < 0.25, "rho < 1/4");
            require((0.0..=1.0 / 3.0).contains(&k.epsilon), "0 <= epsilon <= 1/3");
            require(p <= 3.0, "p <= 3");
            require(k.big_c > 0.0, "R_max(0) > 0");
            require(phi_static, "phi independent of t");
            scan.check(false, nodes().map(|i| sample.ric_min[i] - k.epsilon * r[i]));
            if initial {
                scan.check(true, sample.ric_min.iter().copied());
            }
        }
        QuantityId::EinsteinQ => {
            require(k.a_einstein.is_some(), "Einstein initial metric");
            let spread = |v: &[f64]| {
                v.iter().copied().fold(f64::NEG_INFINITY, f64::max) - v.iter().copied().fold(f64::INFINITY, f64::min)
            };
            let ric_spread = nodes()
                .map(|i| sample.ric_max[i] - sample.ric_min[i])
                .fold(0.0, f64::max);
            scan.check(false, std::iter::once(-spread(r)).chain(std::iter::once(-ric_spread)));
            scan.location = None;
        }
    }
    HypothesisVerdict {
        id: spec.id,
        holds: scan.holds && side.is_empty(),
        margin: scan.margin + 0.0,
        location: scan.location,
        side_failures: side,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrendVerdict {
    Nondecreasing,
    Nonincreasing,
    /// First step `(t_k, t_{k+1})` breaking the checked direction, reported
    /// at `t_{k+1}` with the relative size of the break.
    Violated { first_t: f64, magnitude: f64 },
}

impl TrendVerdict {
    pub fn matches(&self, expected: ExpectedTrend) -> bool {
        matches!(
            (self, expected),
            (TrendVerdict::Nondecreasing, ExpectedTrend::Nondecreasing)
                | (TrendVerdict::Nondecreasing, ExpectedTrend::ConstantOrIncreasing)
                | (TrendVerdict::Nonincreasing, ExpectedTrend::Nonincreasing)
        )
    }
}

impl fmt::Display for TrendVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrendVerdict::Nondecreasing => f.write_str("nondecreasing"),
            TrendVerdict::Nonincreasing => f.write_str("nonincreasing"),
            TrendVerdict::Violated { first_t, magnitude } => {
                write!(f, "violated(t = {first_t}, magnitude = {magnitude:e})")
            }
        }
    }
}

fn first_break(series: &[(f64, f64)], tol_rel: f64, up: bool) -> Option<(f64, f64)> {
    series.windows(2).find_map(|w| {
        let (v0, (t1, v1)) = (w[0].1, w[1]);
        let drop = if up { v0 - v1 } else { v1 - v0 };
        (drop > tol_rel * v0.abs() || !v1.is_finite()).then(|| (t1, drop / v0.abs().max(f64::MIN_POSITIVE)))
    })
}

/// Fewest samples a trend verdict is drawn from.
pub const MIN_TREND_SAMPLES: usize = 3;

/// Checks the direction implied by `expected`: step `k → k+1` passes when
/// `v_{k+1} ≥ v_k - tol_rel·|v_k|` (or the mirror image for
/// nonincreasing).
pub fn trend_verdict(series: &[(f64, f64)], tol_rel: f64, expected: ExpectedTrend) -> TrendVerdict {
    let up = expected != ExpectedTrend::Nonincreasing;
    match first_break(series, tol_rel, up) {
        None if up => TrendVerdict::Nondecreasing,
        None => TrendVerdict::Nonincreasing,
        Some((first_t, magnitude)) => TrendVerdict::Violated { first_t, magnitude },
    }
}

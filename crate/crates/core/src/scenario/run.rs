//! End-to-end runs: flow, eigenpair at every sample, quantities,
//! hypotheses and optional verification, written to CSV and a report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fields::{ScalarField, TorusGeometry};
use crate::flow::{
    coupled_flow_step, gamma_bound, scalar_curvature, sigma_bound, stability_limit, ClosedFormGeometry,
    CurvatureBoundState, EinsteinState, FlowParams, ProductState,
};
use crate::monotone::{
    hypothesis_check, quantity_value, trend_verdict, CurvatureSample, ExpectedTrend, HypothesisVerdict,
    QuantityConstants, QuantityId, QuantitySpec, Role, TrendVerdict, MIN_TREND_SAMPLES,
};
use crate::scenario::config::{GeometryConfig, ScenarioConfig};
use crate::scenario::expr::torus_from_exprs;
use crate::scenario::record::{quantity_index, CsvSink, RunRecord};
use crate::spectral::{first_eigenpair, first_eigenpair_from, rayleigh_quotient};
use crate::variation::{
    lemma_el1_check, lemma_el3_check, transport_test_function, verify_closed_form_variation, verify_torus_variation,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATED: i32 = 2;
pub const EXIT_FAILED: i32 = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    /// Stopped before `t_end` because a validity window closes at `t_prime`.
    Truncated { t_prime: f64, reason: String },
    Failed { t: f64, module: &'static str, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantityVerdict {
    pub id: QuantityId,
    pub role: Role,
    pub expected: ExpectedTrend,
    /// Hypotheses and side conditions held at every sample.
    pub armed: bool,
    pub hypothesis: HypothesisVerdict,
    pub trend: Option<TrendVerdict>,
    /// `λ(t) ≥ q(t) - tol` at every sample, for lower bounds.
    pub bound_ok: Option<bool>,
    /// Armed and contradicted.
    pub red_flag: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub status: RunStatus,
    pub rows: Vec<RunRecord>,
    pub verdicts: Vec<QuantityVerdict>,
    pub checks: Vec<CheckResult>,
    pub csv_path: PathBuf,
    pub report_path: PathBuf,
    pub report: String,
}

/// Joins a relative output path onto `out_dir`.
pub fn resolve_output(path: &Path, out_dir: Option<&Path>) -> PathBuf {
    match out_dir {
        Some(dir) if path.is_relative() => dir.join(path),
        _ => path.to_path_buf(),
    }
}

/// Restricts a scenario to the variation and lemma checks.
pub fn verification_only(cfg: &ScenarioConfig) -> ScenarioConfig {
    let mut c = cfg.clone();
    c.verify.variation = true;
    c.verify.lemmas = !c.geometry.is_closed_form();
    c.verify.bounds = false;
    c.quantities.ids.clear();
    c
}

struct Failure {
    t: f64,
    module: &'static str,
    error: Error,
}

#[allow(clippy::large_enum_variant)]
enum PathState {
    Torus {
        geom: TorusGeometry,
        geom0: TorusGeometry,
        f0: Option<ScalarField>,
        prev_f: Option<Vec<f64>>,
    },
    Closed(ClosedFormGeometry),
}

struct Runner<'a> {
    cfg: &'a ScenarioConfig,
    params: FlowParams,
    dt: f64,
    state: PathState,
    specs: Vec<QuantitySpec>,
    bound_state: Option<CurvatureBoundState>,
    hypotheses: Vec<Option<HypothesisVerdict>>,
    rows: Vec<RunRecord>,
}

fn initial_state(cfg: &ScenarioConfig) -> Result<PathState> {
    Ok(match &cfg.geometry {
        GeometryConfig::Torus { nx, ny, lx, ly, u0, phi0 } => {
            let geom = torus_from_exprs(*nx, *ny, *lx, *ly, u0, phi0)?;
            PathState::Torus {
                geom0: geom.clone(),
                geom,
                f0: None,
                prev_f: None,
            }
        }
        GeometryConfig::Einstein { a, n, lambda0 } => PathState::Closed(ClosedFormGeometry::Einstein(EinsteinState {
            a: *a,
            n: *n,
            lambda0: *lambda0,
            u: 1.0,
        })),
        GeometryConfig::Product { a0, b0, circle_length } => {
            PathState::Closed(ClosedFormGeometry::Product(ProductState::new(*a0, *b0, *circle_length)?))
        }
    })
}

/// Time at which a closed-form path collapses, if it does.
fn extinction_time(state: &PathState, rho: f64) -> Option<(f64, &'static str)> {
    match state {
        PathState::Closed(ClosedFormGeometry::Einstein(s)) => {
            let rate = 2.0 * s.a * (1.0 - s.n as f64 * rho);
            (rate > 0.0).then(|| (s.u / rate, "einstein homothety reaches u = 0"))
        }
        PathState::Closed(ClosedFormGeometry::Product(s)) => {
            let rate = 2.0 - 4.0 * rho;
            (rate > 0.0).then(|| (s.a / rate, "sphere factor of the product collapses"))
        }
        PathState::Torus { .. } => None,
    }
}

impl<'a> Runner<'a> {
    fn new(cfg: &'a ScenarioConfig) -> Result<Self> {
        Ok(Self {
            cfg,
            params: cfg.params()?,
            dt: cfg.resolved_dt()?,
            state: initial_state(cfg)?,
            specs: Vec::new(),
            bound_state: None,
            hypotheses: vec![None; cfg.quantities.ids.len()],
            rows: Vec::new(),
        })
    }

    fn grid_h(&self) -> f64 {
        match &self.state {
            PathState::Torus { geom, .. } => geom.hx().max(geom.hy()),
            PathState::Closed(_) => 0.0,
        }
    }

    fn advance(&mut self, t: f64) -> std::result::Result<(), Failure> {
        let steps = self.cfg.output.sample_every;
        let span = steps as f64 * self.dt;
        let fail = |error| Failure {
            t,
            module: "flow_engine",
            error,
        };
        match &mut self.state {
            PathState::Torus { geom, .. } => {
                for _ in 0..steps {
                    *geom = coupled_flow_step(geom, &self.params, self.dt, self.cfg.flow.evolve_phi).map_err(fail)?;
                }
            }
            PathState::Closed(s) => {
                *s = s.at(span, &self.params, self.dt).map_err(fail)?;
            }
        }
        Ok(())
    }

    fn arm(&mut self, c: f64, big_c: f64, lambda0: f64, a_einstein: Option<f64>) -> Result<()> {
        let q = &self.cfg.quantities;
        let constants = QuantityConstants {
            c,
            big_c,
            n: self.params.n,
            p: self.params.p,
            rho: self.params.rho,
            beta: q.beta,
            gamma: q.gamma,
            a_pinch: q.a_pinch,
            epsilon: q.epsilon,
            a_einstein,
            lambda0,
        };
        self.specs = q.ids.iter().map(|id| QuantitySpec::new(*id, constants)).collect();
        self.bound_state = Some(CurvatureBoundState::new(c, big_c, &self.params)?);
        Ok(())
    }

    /// Earliest window end among the tracked formulas.
    /// Rejects a fixed step above the RK4 stability limit of the initial torus.
    fn check_step(&self) -> std::result::Result<(), Failure> {
        if let PathState::Torus { geom, .. } = &self.state {
            let limit = stability_limit(geom, self.params.rho, self.cfg.flow.evolve_phi);
            if self.dt > limit {
                return Err(Failure {
                    t: 0.0,
                    module: "flow_engine",
                    error: Error::Cfl { dt: self.dt, limit },
                });
            }
        }
        Ok(())
    }

    fn window(&self) -> Option<(f64, String)> {
        let mut best: Option<(f64, String)> = None;
        let mut consider = |t: f64, why: String| {
            if t.is_finite() && best.as_ref().is_none_or(|(b, _)| t < *b) {
                best = Some((t, why));
            }
        };
        for spec in &self.specs {
            consider(spec.window(), format!("{} validity window", spec.id));
        }
        if self.cfg.verify.bounds {
            if let Some(b) = &self.bound_state {
                consider(b.sigma_window(), "sigma(t) validity window".into());
            }
        }
        best
    }

    fn evaluate_quantities(&mut self, t: f64, lambda: f64, sample: &CurvatureSample, initial: bool, rec: &mut RunRecord) {
        let phi_static = !self.cfg.flow.evolve_phi || self.cfg.geometry.is_closed_form();
        for (k, spec) in self.specs.iter().enumerate() {
            let idx = quantity_index(spec.id);
            rec.quantities[idx] = quantity_value(spec, t, lambda).ok();
            let v = hypothesis_check(spec, sample, &self.params, phi_static, initial);
            rec.margins[idx] = Some(v.margin);
            self.hypotheses[k] = Some(match &self.hypotheses[k] {
                Some(prev) => prev.merge(&v),
                None => v,
            });
        }
    }

    fn sample(&mut self, k: usize, t: f64) -> std::result::Result<RunRecord, Failure> {
        let fail = |module: &'static str| move |error| Failure { t, module, error };
        let cfg = self.cfg;
        let verify_now = k.is_multiple_of(cfg.verify.every);
        let mut rec = RunRecord {
            t,
            ..RunRecord::default()
        };
        let sample = match &mut self.state {
            PathState::Torus { geom, geom0, f0, prev_f } => {
                let r = scalar_curvature(geom);
                rec.r_min = r.min();
                rec.r_max = r.max();
                let pair = match prev_f.as_deref() {
                    None => first_eigenpair(geom, self.params.p, &cfg.solver),
                    Some(prev) => first_eigenpair_from(geom, self.params.p, &cfg.solver, Some(prev), cfg.solver.restarts),
                }
                .map_err(fail("spectral"))?;
                rec.lambda = pair.lambda;
                rec.residual = Some(pair.residual);
                let field = pair.field(geom);
                if f0.is_none() {
                    *f0 = Some(field.clone());
                }
                let h = transport_test_function(f0.as_ref().expect("set above"), geom0, geom, self.params.p)
                    .map_err(fail("variation"))?;
                rec.lambda_tf =
                    Some(rayleigh_quotient(geom, &h, self.params.p, cfg.solver.epsilon_reg).map_err(fail("spectral"))?);
                if verify_now && cfg.verify.variation {
                    let rep = verify_torus_variation(
                        geom,
                        t,
                        &pair,
                        &self.params,
                        cfg.flow.evolve_phi,
                        &cfg.solver,
                        cfg.verify.fd_step,
                        self.dt,
                    )
                    .map_err(fail("variation"))?;
                    rec.fd_dlambda = Some(rep.fd_dlambda);
                    rec.rhs_e2 = Some(rep.rhs_e2);
                    rec.rel_error = Some(rep.rel_error);
                }
                if verify_now && cfg.verify.lemmas {
                    let (step, evolve) = (cfg.verify.lemma_fd_step, cfg.flow.evolve_phi);
                    rec.el1_err = Some(
                        lemma_el1_check(geom, &field, &self.params, evolve, step, self.dt).map_err(fail("variation"))?,
                    );
                    rec.el3_err = Some(
                        lemma_el3_check(geom, &field, &self.params, evolve, step, self.dt).map_err(fail("variation"))?,
                    );
                }
                *prev_f = Some(pair.f);
                CurvatureSample::torus(geom).map_err(fail("monotone"))?
            }
            PathState::Closed(state) => {
                rec.lambda = state.eigenvalue(self.params.p).map_err(fail("flow_engine"))?;
                let r = state.scalar_curvature();
                rec.r_min = r;
                rec.r_max = r;
                if verify_now && cfg.verify.variation {
                    let rep = verify_closed_form_variation(state, 0.0, &self.params, cfg.verify.fd_step, self.dt)
                        .map_err(fail("variation"))?;
                    rec.fd_dlambda = Some(rep.fd_dlambda);
                    rec.rhs_e2 = Some(rep.rhs_e2);
                    rec.rel_error = Some(rep.rel_error);
                }
                CurvatureSample::closed_form(state)
            }
        };
        if k == 0 {
            let a_einstein = match &self.state {
                PathState::Closed(ClosedFormGeometry::Einstein(s)) => Some(s.a / s.u),
                PathState::Closed(ClosedFormGeometry::Product(_)) => None,
                PathState::Torus { .. } => (rec.r_min == 0.0 && rec.r_max == 0.0).then_some(0.0),
            };
            self.arm(rec.r_min, rec.r_max, rec.lambda, a_einstein)
                .map_err(fail("monotone"))?;
        }
        if let Some(b) = &self.bound_state {
            rec.sigma = sigma_bound(t, b).ok();
            rec.gamma = gamma_bound(t, b).ok();
        }
        self.evaluate_quantities(t, rec.lambda, &sample, k == 0, &mut rec);
        Ok(rec)
    }

    fn execute(&mut self, sink: &mut CsvSink) -> std::result::Result<RunStatus, Failure> {
        let span = self.cfg.output.sample_every as f64 * self.dt;
        let k_max = (self.cfg.flow.t_end / span + 1e-9).floor() as usize;
        let mut limit = extinction_time(&self.state, self.params.rho).map(|(t, why)| (t, why.to_string()));
        for k in 0..=k_max {
            let t = k as f64 * span;
            if let Some((t_prime, why)) = &limit {
                if t >= *t_prime {
                    return Ok(RunStatus::Truncated {
                        t_prime: *t_prime,
                        reason: why.clone(),
                    });
                }
            }
            if k > 0 {
                self.advance(t)?;
            }
            let rec = self.sample(k, t)?;
            sink.write(&[], &rec).map_err(|error| Failure {
                t,
                module: "cli_io",
                error,
            })?;
            self.rows.push(rec);
            if k == 0 {
                self.check_step()?;
                if let Some((t_w, why)) = self.window() {
                    if limit.as_ref().is_none_or(|(l, _)| t_w < *l) {
                        limit = Some((t_w, why));
                    }
                }
            }
        }
        Ok(RunStatus::Completed)
    }
}

fn quantity_verdicts(cfg: &ScenarioConfig, runner: &Runner) -> Vec<QuantityVerdict> {
    let tol_rel = cfg.tol_rel();
    let tol_abs = if cfg.geometry.is_closed_form() { 0.0 } else { cfg.solver.tol_eig };
    runner
        .specs
        .iter()
        .zip(&runner.hypotheses)
        .filter_map(|(spec, hyp)| {
            let hyp = hyp.clone()?;
            let idx = quantity_index(spec.id);
            let series: Vec<(f64, f64)> = runner
                .rows
                .iter()
                .filter_map(|r| r.quantities[idx].map(|q| (r.t, q)))
                .collect();
            let complete = series.len() == runner.rows.len() && series.len() >= MIN_TREND_SAMPLES;
            let armed = hyp.holds && complete;
            let role = spec.id.role();
            let trend = complete.then(|| trend_verdict(&series, tol_rel, spec.expected_trend));
            let bound_ok = (role == Role::LowerBound && complete).then(|| {
                runner
                    .rows
                    .iter()
                    .zip(&series)
                    .all(|(r, (_, q))| r.lambda >= q - (tol_rel * q.abs() + tol_abs))
            });
            let red_flag = armed
                && match role {
                    Role::Gating => !trend.is_some_and(|v| v.matches(spec.expected_trend)),
                    Role::LowerBound => bound_ok == Some(false),
                    Role::Audit => false,
                };
            Some(QuantityVerdict {
                id: spec.id,
                role,
                expected: spec.expected_trend,
                armed,
                hypothesis: hyp,
                trend,
                bound_ok,
                red_flag,
            })
        })
        .collect()
}

fn max_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    values.fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
}

fn checks(cfg: &ScenarioConfig, runner: &Runner) -> Vec<CheckResult> {
    let rows = &runner.rows;
    let mut out = Vec::new();
    if cfg.verify.bounds {
        let h = runner.grid_h();
        let tol = 10.0 * h * h + 10.0 * runner.dt;
        let worst = rows
            .iter()
            .filter_map(|r| r.sigma.map(|s| (r.t, r.r_min - (s - tol))))
            .fold(None, |acc: Option<(f64, f64)>, x| match acc {
                Some(a) if a.1 <= x.1 => Some(a),
                _ => Some(x),
            });
        out.push(match worst {
            Some((t, slack)) => CheckResult {
                name: "curvature_lower_bound",
                passed: slack >= 0.0,
                detail: format!("min over samples of R_min - (sigma - {tol:e}) = {slack:e} at t = {t}"),
            },
            None => CheckResult {
                name: "curvature_lower_bound",
                passed: true,
                detail: "no sample inside the sigma window".into(),
            },
        });
        if !cfg.geometry.is_closed_form() && !rows.is_empty() {
            let tol = cfg.solver.tol_eig;
            let gap = rows
                .iter()
                .filter_map(|r| r.lambda_tf.map(|tf| tf - r.lambda))
                .fold(f64::INFINITY, f64::min);
            let start = rows[0].lambda_tf.map(|tf| (tf - rows[0].lambda).abs()).unwrap_or(f64::INFINITY);
            out.push(CheckResult {
                name: "test_function_bound",
                passed: gap >= -tol && start <= tol,
                detail: format!("min lambda_tf - lambda = {gap:e}, |lambda_tf(0) - lambda(0)| = {start:e}, tol = {tol:e}"),
            });
        }
    }
    if cfg.verify.variation {
        let worst = max_of(rows.iter().filter_map(|r| r.rel_error));
        out.push(CheckResult {
            name: "variation_formula",
            passed: worst.is_some_and(|w| w <= cfg.verify.variation_tol),
            detail: match worst {
                Some(w) => format!("max rel_error = {w:e} (limit {})", cfg.verify.variation_tol),
                None => "no verification sample".into(),
            },
        });
    }
    if cfg.verify.lemmas {
        let worst = max_of(rows.iter().flat_map(|r| [r.el1_err, r.el3_err]).flatten());
        out.push(CheckResult {
            name: "lemma_identities",
            passed: worst.is_some_and(|w| w <= cfg.verify.lemma_tol),
            detail: match worst {
                Some(w) => format!("max relative error = {w:e} (limit {})", cfg.verify.lemma_tol),
                None => "no verification sample".into(),
            },
        });
    }
    out
}

fn describe_geometry(cfg: &ScenarioConfig) -> String {
    match &cfg.geometry {
        GeometryConfig::Torus { nx, ny, lx, ly, u0, phi0 } => {
            format!("torus {nx}x{ny}, Lx = {lx}, Ly = {ly}, u0 = {u0}, phi0 = {phi0}")
        }
        GeometryConfig::Einstein { a, n, lambda0 } => format!("einstein a = {a}, n = {n}, lambda0 = {lambda0}"),
        GeometryConfig::Product { a0, b0, circle_length } => {
            format!("product S2 x S1, a0 = {a0}, b0 = {b0}, circle length = {circle_length}")
        }
    }
}

fn render_report(
    cfg: &ScenarioConfig,
    dt: f64,
    status: &RunStatus,
    rows: &[RunRecord],
    verdicts: &[QuantityVerdict],
    checks: &[CheckResult],
    exit_code: i32,
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "geometry: {}", describe_geometry(cfg));
    let _ = writeln!(
        s,
        "flow: rho = {}, p = {}, t_end = {}, dt = {dt:e}, evolve_phi = {}",
        cfg.flow.rho, cfg.flow.p, cfg.flow.t_end, cfg.flow.evolve_phi
    );
    let _ = writeln!(s, "samples: {}", rows.len());
    match status {
        RunStatus::Completed => {
            let _ = writeln!(s, "status: completed");
        }
        RunStatus::Truncated { t_prime, reason } => {
            let _ = writeln!(s, "status: truncated before T' = {t_prime} ({reason})");
        }
        RunStatus::Failed { t, module, message } => {
            let _ = writeln!(s, "status: failed at t = {t} in {module}: {message}");
        }
    }
    if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
        let _ = writeln!(s, "lambda: {} at t = {} -> {} at t = {}", first.lambda, first.t, last.lambda, last.t);
    }
    if !verdicts.is_empty() {
        let _ = writeln!(s, "quantities (tol_rel = {:e}):", cfg.tol_rel());
        for v in verdicts {
            let role = match v.role {
                Role::Gating => "gating",
                Role::Audit => "audit",
                Role::LowerBound => "lower bound",
            };
            let hyp = if v.hypothesis.side_failures.is_empty() {
                format!("margin {:e}", v.hypothesis.margin)
            } else {
                format!("margin {:e}; side conditions fail: {}", v.hypothesis.margin, v.hypothesis.side_failures.join(", "))
            };
            let outcome = match (v.role, v.trend, v.bound_ok) {
                (Role::LowerBound, _, Some(ok)) => format!("bound {}", if ok { "holds" } else { "violated" }),
                (_, Some(trend), _) => format!("trend {trend}"),
                _ if rows.len() < MIN_TREND_SAMPLES => format!("not evaluated (fewer than {MIN_TREND_SAMPLES} samples)"),
                _ => "not evaluated".into(),
            };
            let flag = if v.red_flag { "  RED FLAG" } else { "" };
            let _ = writeln!(
                s,
                "  {:<14} {:<11} expected {:<22} armed {:<3} ({hyp}) {outcome}{flag}",
                v.id.name(),
                role,
                v.expected.to_string(),
                if v.armed { "yes" } else { "no" },
            );
        }
    }
    if !checks.is_empty() {
        let _ = writeln!(s, "checks:");
        for c in checks {
            let _ = writeln!(s, "  {:<22} {}  {}", c.name, if c.passed { "pass" } else { "FAIL" }, c.detail);
        }
    }
    let _ = writeln!(s, "exit code: {exit_code}");
    s
}

/// Runs one scenario. Relative output paths are placed under `out_dir`
/// when given. Errors are returned only when the output files cannot be
/// created; run failures are reported through the outcome.
pub fn run_scenario(cfg: &ScenarioConfig, out_dir: Option<&Path>) -> Result<RunOutcome> {
    cfg.validate()?;
    let csv_path = resolve_output(&cfg.output.csv_path, out_dir);
    let report_path = resolve_output(&cfg.output.report_path, out_dir);
    let mut sink = CsvSink::create(&csv_path, &[])?;
    let mut runner = Runner::new(cfg)?;
    let status = match runner.execute(&mut sink) {
        Ok(s) => s,
        Err(f) => RunStatus::Failed {
            t: f.t,
            module: f.module,
            message: f.error.to_string(),
        },
    };
    let verdicts = quantity_verdicts(cfg, &runner);
    let checks = checks(cfg, &runner);
    let exit_code = if matches!(status, RunStatus::Failed { .. }) {
        EXIT_FAILED
    } else if verdicts.iter().any(|v| v.red_flag) || checks.iter().any(|c| !c.passed) {
        EXIT_VIOLATED
    } else {
        EXIT_OK
    };
    let report = render_report(cfg, runner.dt, &status, &runner.rows, &verdicts, &checks, exit_code);
    if let Some(dir) = report_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(&report_path, &report)?;
    Ok(RunOutcome {
        exit_code,
        status,
        rows: runner.rows,
        verdicts,
        checks,
        csv_path,
        report_path,
        report,
    })
}

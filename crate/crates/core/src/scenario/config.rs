//! Scenario files: a sectioned `key = value` grammar.
//!
//! ```text
//! file    := line*
//! line    := blank | comment | section | pair
//! comment := ws* '#' any*
//! section := ws* '[' name ']' ws* comment?
//! pair    := ws* key ws* '=' ws* value ws* comment?
//! ```
//!
//! Sections are `geometry`, `flow`, `solver`, `output`, `quantities` and
//! `verify`. Every key belongs to exactly one section; unknown keys,
//! repeated keys and keys outside a section are errors. All problems in a
//! file are reported together, each with its line number.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::flow::{auto_dt, FlowParams};
use crate::monotone::QuantityId;
use crate::scenario::expr::{torus_from_exprs, Expr};
use crate::spectral::SolverOptions;

#[derive(Debug, Clone, PartialEq)]
pub enum GeometryConfig {
    Torus {
        nx: usize,
        ny: usize,
        lx: f64,
        ly: f64,
        u0: Expr,
        phi0: Expr,
    },
    Einstein {
        a: f64,
        n: usize,
        lambda0: f64,
    },
    Product {
        a0: f64,
        b0: f64,
        circle_length: f64,
    },
}

impl GeometryConfig {
    pub fn dimension(&self) -> usize {
        match self {
            GeometryConfig::Torus { .. } => 2,
            GeometryConfig::Einstein { n, .. } => *n,
            GeometryConfig::Product { .. } => 3,
        }
    }

    pub fn is_closed_form(&self) -> bool {
        !matches!(self, GeometryConfig::Torus { .. })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            GeometryConfig::Torus { .. } => "torus",
            GeometryConfig::Einstein { .. } => "einstein",
            GeometryConfig::Product { .. } => "product",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub rho: f64,
    pub p: f64,
    pub t_end: f64,
    /// `None` selects the automatic step.
    pub dt: Option<f64>,
    pub evolve_phi: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    /// Flow steps between samples.
    pub sample_every: usize,
    pub csv_path: PathBuf,
    pub report_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantityConfig {
    pub ids: Vec<QuantityId>,
    pub beta: f64,
    pub gamma: f64,
    pub a_pinch: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub variation: bool,
    pub lemmas: bool,
    pub bounds: bool,
    /// Central-difference half step for `dλ/dt`.
    pub fd_step: f64,
    /// Central-difference half step for the pointwise identities.
    pub lemma_fd_step: f64,
    pub variation_tol: f64,
    pub lemma_tol: f64,
    /// Trend tolerance; `None` picks 1e-4 on the torus and 1e-9 on closed forms.
    pub tol_rel: Option<f64>,
    /// Verify at every `every`-th sample.
    pub every: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub geometry: GeometryConfig,
    pub flow: FlowConfig,
    pub solver: SolverOptions,
    pub output: OutputConfig,
    pub quantities: QuantityConfig,
    pub verify: VerifyConfig,
}

/// Step used on closed-form paths when `dt = auto`.
pub const CLOSED_FORM_AUTO_DT: f64 = 1e-3;

impl ScenarioConfig {
    pub fn params(&self) -> Result<FlowParams> {
        FlowParams::new(self.flow.rho, self.flow.p, self.geometry.dimension())
    }

    /// Time step, resolving `auto` against the initial geometry.
    pub fn resolved_dt(&self) -> Result<f64> {
        if let Some(dt) = self.flow.dt {
            return Ok(dt);
        }
        match &self.geometry {
            GeometryConfig::Torus { nx, ny, lx, ly, u0, phi0 } => {
                let g = torus_from_exprs(*nx, *ny, *lx, *ly, u0, phi0)?;
                Ok(auto_dt(&g, self.flow.rho))
            }
            _ => Ok(CLOSED_FORM_AUTO_DT),
        }
    }

    pub fn tol_rel(&self) -> f64 {
        self.verify
            .tol_rel
            .unwrap_or(if self.geometry.is_closed_form() { 1e-9 } else { 1e-4 })
    }

    /// Checks every cross-field invariant, collecting all violations.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        collect_violations(self, &mut bad);
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

fn collect_violations(c: &ScenarioConfig, bad: &mut Vec<String>) {
    let n = c.geometry.dimension();
    match &c.geometry {
        GeometryConfig::Torus { nx, ny, lx, ly, .. } => {
            if *nx < 4 || *ny < 4 {
                bad.push(format!("torus grid {nx}x{ny} must be at least 4x4"));
            }
            if !(*lx > 0.0 && *ly > 0.0 && lx.is_finite() && ly.is_finite()) {
                bad.push(format!("torus side lengths {lx}, {ly} must be positive"));
            }
        }
        GeometryConfig::Einstein { n, lambda0, .. } => {
            if *n < 2 {
                bad.push(format!("einstein dimension n = {n} must be >= 2"));
            }
            if !(*lambda0 > 0.0) {
                bad.push(format!("lambda0 = {lambda0} must be positive"));
            }
        }
        GeometryConfig::Product { a0, b0, circle_length } => {
            if !(*a0 > 0.0 && *b0 > 0.0 && *circle_length > 0.0) {
                bad.push(format!("product needs a0, b0, circle_length > 0 (got {a0}, {b0}, {circle_length})"));
            }
            if c.flow.p != 2.0 {
                bad.push(format!("product geometry requires p = 2 (got p = {})", c.flow.p));
            }
        }
    }
    if n >= 2 && !(c.flow.rho < FlowParams::rho_limit(n)) {
        bad.push(format!(
            "rho = {} violates rho < 1/(2(n-1)) = {} for n = {n}",
            c.flow.rho,
            FlowParams::rho_limit(n)
        ));
    }
    if !(c.flow.p > 1.0 && c.flow.p.is_finite()) {
        bad.push(format!("p = {} must satisfy p > 1", c.flow.p));
    }
    if !(c.flow.t_end >= 0.0 && c.flow.t_end.is_finite()) {
        bad.push(format!("t_end = {} must be >= 0", c.flow.t_end));
    }
    if let Some(dt) = c.flow.dt {
        if !(dt > 0.0 && dt.is_finite()) {
            bad.push(format!("dt = {dt} must be positive"));
        }
    }
    if let Err(e) = c.solver.validate() {
        bad.push(e.to_string());
    }
    if c.output.sample_every == 0 {
        bad.push("sample_every must be positive".into());
    }
    let v = &c.verify;
    for (name, x) in [
        ("fd_step", v.fd_step),
        ("lemma_fd_step", v.lemma_fd_step),
        ("variation_tol", v.variation_tol),
        ("lemma_tol", v.lemma_tol),
    ] {
        if !(x > 0.0 && x.is_finite()) {
            bad.push(format!("{name} = {x} must be positive"));
        }
    }
    if let Some(t) = v.tol_rel {
        if !(t >= 0.0 && t.is_finite()) {
            bad.push(format!("tol_rel = {t} must be >= 0"));
        }
    }
    if v.every == 0 {
        bad.push("verify every must be positive".into());
    }
    if c.geometry.is_closed_form() && v.lemmas {
        bad.push("lemma checks need a torus geometry".into());
    }
}

struct Entry {
    line: usize,
    value: String,
}

type Sections = BTreeMap<String, BTreeMap<String, Entry>>;

const KEYS: &[(&str, &[&str])] = &[
    (
        "geometry",
        &["kind", "n_grid", "nx", "ny", "lx", "ly", "u0", "phi0", "a", "n", "lambda0", "a0", "b0", "circle_length"],
    ),
    ("flow", &["rho", "p", "t_end", "dt", "evolve_phi"]),
    ("solver", &["tol_eig", "max_iter", "restarts", "seed", "epsilon_reg"]),
    ("output", &["sample_every", "csv", "report"]),
    ("quantities", &["ids", "beta", "gamma", "a_pinch", "epsilon"]),
    (
        "verify",
        &["variation", "lemmas", "bounds", "fd_step", "lemma_fd_step", "variation_tol", "lemma_tol", "tol_rel", "every"],
    ),
];

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn lex(text: &str, errors: &mut Vec<String>) -> Sections {
    let mut sections: Sections = BTreeMap::new();
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let Some(name) = rest.strip_suffix(']') else {
                errors.push(format!("line {line_no}: malformed section header '{line}'"));
                current = None;
                continue;
            };
            let name = name.trim();
            if !KEYS.iter().any(|(s, _)| *s == name) {
                errors.push(format!("line {line_no}: unknown section [{name}]"));
                current = None;
                continue;
            }
            sections.entry(name.to_string()).or_default();
            current = Some(name.to_string());
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            errors.push(format!("line {line_no}: expected 'key = value', found '{line}'"));
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        let Some(section) = current.as_ref() else {
            errors.push(format!("line {line_no}: key '{key}' appears before any [section]"));
            continue;
        };
        let allowed = KEYS.iter().find(|(s, _)| s == section).map(|(_, k)| *k).unwrap_or(&[]);
        if !allowed.contains(&key) {
            errors.push(format!("line {line_no}: unknown key '{key}' in [{section}]"));
            continue;
        }
        if value.is_empty() {
            errors.push(format!("line {line_no}: key '{key}' has an empty value"));
            continue;
        }
        let table = sections.entry(section.clone()).or_default();
        if let Some(prev) = table.get(key) {
            errors.push(format!(
                "line {line_no}: key '{key}' in [{section}] repeats line {}",
                prev.line
            ));
            continue;
        }
        table.insert(
            key.to_string(),
            Entry {
                line: line_no,
                value: value.to_string(),
            },
        );
    }
    sections
}

struct Reader<'a> {
    sections: &'a Sections,
    errors: &'a mut Vec<String>,
}

impl Reader<'_> {
    fn raw(&self, section: &str, key: &str) -> Option<&Entry> {
        self.sections.get(section).and_then(|t| t.get(key))
    }

    fn get<T>(&mut self, section: &str, key: &str, default: T, parse: impl Fn(&str) -> std::result::Result<T, String>) -> T {
        match self.raw(section, key) {
            None => default,
            Some(e) => match parse(&e.value) {
                Ok(v) => v,
                Err(msg) => {
                    self.errors.push(format!("line {}: {key}: {msg}", e.line));
                    default
                }
            },
        }
    }

    fn f64(&mut self, section: &str, key: &str, default: f64) -> f64 {
        self.get(section, key, default, parse_f64)
    }

    fn usize(&mut self, section: &str, key: &str, default: usize) -> usize {
        self.get(section, key, default, |s| {
            s.parse::<usize>().map_err(|_| format!("expected a nonnegative integer, found '{s}'"))
        })
    }

    fn bool(&mut self, section: &str, key: &str, default: bool) -> bool {
        self.get(section, key, default, |s| match s {
            "true" | "yes" | "on" => Ok(true),
            "false" | "no" | "off" => Ok(false),
            _ => Err(format!("expected true or false, found '{s}'")),
        })
    }

    /// Records keys that do not apply to the chosen geometry.
    fn reject(&mut self, section: &str, keys: &[&str], why: &str) {
        for key in keys {
            if let Some(e) = self.raw(section, key) {
                self.errors.push(format!("line {}: key '{key}' does not apply to {why}", e.line));
            }
        }
    }
}

/// Accepts plain numbers plus `pi`, `2pi` and `a/b` fractions.
fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    let atom = |t: &str| -> std::result::Result<f64, String> {
        let t = t.trim();
        match t {
            "pi" => Ok(PI),
            "2pi" => Ok(2.0 * PI),
            _ => t.parse::<f64>().map_err(|_| format!("expected a number, found '{s}'")),
        }
    };
    let v = match s.split_once('/') {
        Some((a, b)) => atom(a)? / atom(b)?,
        None => atom(s)?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("'{s}' is not finite"))
    }
}

/// Parses and validates a scenario file.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let mut errors = Vec::new();
    let sections = lex(text, &mut errors);
    let mut r = Reader {
        sections: &sections,
        errors: &mut errors,
    };

    let kind = r.get("geometry", "kind", "torus".to_string(), |s| match s {
        "torus" | "einstein" | "product" => Ok(s.to_string()),
        _ => Err(format!("unknown geometry kind '{s}' (torus, einstein, product)")),
    });
    const TORUS_KEYS: &[&str] = &["n_grid", "nx", "ny", "lx", "ly", "u0", "phi0"];
    const EINSTEIN_KEYS: &[&str] = &["a", "n", "lambda0"];
    const PRODUCT_KEYS: &[&str] = &["a0", "b0", "circle_length"];
    let geometry = match kind.as_str() {
        "einstein" => {
            r.reject("geometry", TORUS_KEYS, "an einstein geometry");
            r.reject("geometry", PRODUCT_KEYS, "an einstein geometry");
            GeometryConfig::Einstein {
                a: r.f64("geometry", "a", 1.0),
                n: r.usize("geometry", "n", 2),
                lambda0: r.f64("geometry", "lambda0", 1.0),
            }
        }
        "product" => {
            r.reject("geometry", TORUS_KEYS, "a product geometry");
            r.reject("geometry", EINSTEIN_KEYS, "a product geometry");
            GeometryConfig::Product {
                a0: r.f64("geometry", "a0", 1.0),
                b0: r.f64("geometry", "b0", 1.0),
                circle_length: r.f64("geometry", "circle_length", 2.0 * PI),
            }
        }
        _ => {
            r.reject("geometry", EINSTEIN_KEYS, "a torus geometry");
            r.reject("geometry", PRODUCT_KEYS, "a torus geometry");
            let n_grid = r.usize("geometry", "n_grid", 64);
            let expr = |s: &str| Expr::parse(s).map_err(|e| e.to_string());
            GeometryConfig::Torus {
                nx: r.usize("geometry", "nx", n_grid),
                ny: r.usize("geometry", "ny", n_grid),
                lx: r.f64("geometry", "lx", 2.0 * PI),
                ly: r.f64("geometry", "ly", 2.0 * PI),
                u0: r.get("geometry", "u0", Expr::Zero, expr),
                phi0: r.get("geometry", "phi0", Expr::Zero, expr),
            }
        }
    };

    let flow = FlowConfig {
        rho: r.f64("flow", "rho", 0.0),
        p: r.f64("flow", "p", 2.0),
        t_end: r.f64("flow", "t_end", 0.1),
        dt: r.get("flow", "dt", None, |s| if s == "auto" { Ok(None) } else { parse_f64(s).map(Some) }),
        evolve_phi: r.bool("flow", "evolve_phi", true),
    };

    let d = SolverOptions::default();
    let solver = SolverOptions {
        tol_eig: r.f64("solver", "tol_eig", d.tol_eig),
        max_iter: r.usize("solver", "max_iter", d.max_iter),
        restarts: r.usize("solver", "restarts", d.restarts),
        seed: r.get("solver", "seed", d.seed, |s| {
            s.parse::<u64>().map_err(|_| format!("expected an unsigned integer, found '{s}'"))
        }),
        epsilon_reg: r.f64("solver", "epsilon_reg", d.epsilon_reg),
    };

    let output = OutputConfig {
        sample_every: r.usize("output", "sample_every", 10),
        csv_path: PathBuf::from(r.get("output", "csv", "run.csv".to_string(), |s| Ok(s.to_string()))),
        report_path: PathBuf::from(r.get("output", "report", "run_report.txt".to_string(), |s| Ok(s.to_string()))),
    };

    let ids = r.get("quantities", "ids", Vec::new(), |s| {
        if s == "all" {
            return Ok(QuantityId::ALL.to_vec());
        }
        if s == "none" {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for part in s.split(',') {
            let id = part.trim().parse::<QuantityId>().map_err(|e| e.to_string())?;
            if out.contains(&id) {
                return Err(format!("quantity '{id}' listed twice"));
            }
            out.push(id);
        }
        Ok(out)
    });
    let quantities = QuantityConfig {
        ids,
        beta: r.f64("quantities", "beta", 0.5),
        gamma: r.f64("quantities", "gamma", 0.5),
        a_pinch: r.f64("quantities", "a_pinch", 0.0),
        epsilon: r.f64("quantities", "epsilon", 0.0),
    };

    let verify = VerifyConfig {
        variation: r.bool("verify", "variation", false),
        lemmas: r.bool("verify", "lemmas", false),
        bounds: r.bool("verify", "bounds", true),
        fd_step: r.f64("verify", "fd_step", 1e-3),
        lemma_fd_step: r.f64("verify", "lemma_fd_step", 1e-4),
        variation_tol: r.f64("verify", "variation_tol", 0.02),
        lemma_tol: r.f64("verify", "lemma_tol", 0.05),
        tol_rel: r.get("verify", "tol_rel", None, |s| parse_f64(s).map(Some)),
        every: r.usize("verify", "every", 1),
    };

    let config = ScenarioConfig {
        geometry,
        flow,
        solver,
        output,
        quantities,
        verify,
    };
    collect_violations(&config, &mut errors);
    if errors.is_empty() {
        Ok(config)
    } else {
        Err(Error::Config(errors))
    }
}

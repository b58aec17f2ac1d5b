//! Closed library of initial-condition expressions, selected by id.
//!
//! Coordinates enter through the phases `X = 2πx/Lx`, `Y = 2πy/Ly`, so
//! every expression is periodic on the torus.

use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};
use crate::fields::{ScalarField, TorusGeometry};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Expr {
    Zero,
    Constant(f64),
    /// `a cos(kX)`
    CosX { amp: f64, k: f64 },
    /// `a sin(kX)`
    SinX { amp: f64, k: f64 },
    /// `a cos(kY)`
    CosY { amp: f64, k: f64 },
    /// `a sin(kY)`
    SinY { amp: f64, k: f64 },
    /// `a cos(X) cos(Y)`
    CosXCosY { amp: f64 },
    /// `a cos(X + Y)`
    CosXPlusY { amp: f64 },
    /// `a cos(X) + b cos(Y)`
    TwoMode { a: f64, b: f64 },
}

/// Expression ids with their parameter lists.
pub const EXPRESSION_IDS: &[(&str, &str)] = &[
    ("zero", ""),
    ("constant", "c"),
    ("cos_x", "amp[, k]"),
    ("sin_x", "amp[, k]"),
    ("cos_y", "amp[, k]"),
    ("sin_y", "amp[, k]"),
    ("cos_x_cos_y", "amp"),
    ("cos_x_plus_y", "amp"),
    ("two_mode", "a, b"),
];

impl Expr {
    /// Parses `id` or `id(v1, v2, ...)`.
    pub fn parse(text: &str) -> Result<Expr> {
        let text = text.trim();
        let (name, args) = match text.find('(') {
            Some(open) => {
                let inner = text[open + 1..]
                    .strip_suffix(')')
                    .ok_or_else(|| Error::InvalidParameter(format!("unbalanced parentheses in '{text}'")))?;
                let args = inner
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::InvalidParameter(format!("bad number '{}' in '{text}'", s.trim())))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                (text[..open].trim(), args)
            }
            None => (text, Vec::new()),
        };
        if let Some(bad) = args.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite parameter {bad} in '{text}'")));
        }
        let arity = |lo: usize, hi: usize| -> Result<()> {
            if args.len() < lo || args.len() > hi {
                Err(Error::InvalidParameter(format!(
                    "'{name}' takes {} parameter(s), got {}",
                    if lo == hi { lo.to_string() } else { format!("{lo}..{hi}") },
                    args.len()
                )))
            } else {
                Ok(())
            }
        };
        let k = || args.get(1).copied().unwrap_or(1.0);
        let e = match name {
            "zero" => {
                arity(0, 0)?;
                Expr::Zero
            }
            "constant" => {
                arity(1, 1)?;
                Expr::Constant(args[0])
            }
            "cos_x" => {
                arity(1, 2)?;
                Expr::CosX { amp: args[0], k: k() }
            }
            "sin_x" => {
                arity(1, 2)?;
                Expr::SinX { amp: args[0], k: k() }
            }
            "cos_y" => {
                arity(1, 2)?;
                Expr::CosY { amp: args[0], k: k() }
            }
            "sin_y" => {
                arity(1, 2)?;
                Expr::SinY { amp: args[0], k: k() }
            }
            "cos_x_cos_y" => {
                arity(1, 1)?;
                Expr::CosXCosY { amp: args[0] }
            }
            "cos_x_plus_y" => {
                arity(1, 1)?;
                Expr::CosXPlusY { amp: args[0] }
            }
            "two_mode" => {
                arity(2, 2)?;
                Expr::TwoMode { a: args[0], b: args[1] }
            }
            other => {
                let known: Vec<&str> = EXPRESSION_IDS.iter().map(|(id, _)| *id).collect();
                return Err(Error::InvalidParameter(format!(
                    "unknown expression id '{other}' (known: {})",
                    known.join(", ")
                )));
            }
        };
        if let Expr::CosX { k, .. } | Expr::SinX { k, .. } | Expr::CosY { k, .. } | Expr::SinY { k, .. } = e {
            if k.fract() != 0.0 {
                return Err(Error::InvalidParameter(format!("wavenumber {k} in '{text}' must be an integer")));
            }
        }
        Ok(e)
    }

    /// Value at phases `(X, Y)`.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match *self {
            Expr::Zero => 0.0,
            Expr::Constant(c) => c,
            Expr::CosX { amp, k } => amp * (k * x).cos(),
            Expr::SinX { amp, k } => amp * (k * x).sin(),
            Expr::CosY { amp, k } => amp * (k * y).cos(),
            Expr::SinY { amp, k } => amp * (k * y).sin(),
            Expr::CosXCosY { amp } => amp * x.cos() * y.cos(),
            Expr::CosXPlusY { amp } => amp * (x + y).cos(),
            Expr::TwoMode { a, b } => a * x.cos() + b * y.cos(),
        }
    }

    /// Samples on an `nx × ny` grid of an `lx × ly` torus.
    pub fn sample(&self, nx: usize, ny: usize, lx: f64, ly: f64) -> ScalarField {
        let (sx, sy) = (2.0 * PI / lx, 2.0 * PI / ly);
        ScalarField::from_fn(nx, ny, lx / nx as f64, ly / ny as f64, |x, y| self.eval(sx * x, sy * y))
    }

    /// Same expression with its leading amplitude replaced.
    pub fn with_amplitude(&self, v: f64) -> Result<Expr> {
        Ok(match *self {
            Expr::Zero => return Err(Error::InvalidParameter("'zero' has no amplitude".into())),
            Expr::Constant(_) => Expr::Constant(v),
            Expr::CosX { k, .. } => Expr::CosX { amp: v, k },
            Expr::SinX { k, .. } => Expr::SinX { amp: v, k },
            Expr::CosY { k, .. } => Expr::CosY { amp: v, k },
            Expr::SinY { k, .. } => Expr::SinY { amp: v, k },
            Expr::CosXCosY { .. } => Expr::CosXCosY { amp: v },
            Expr::CosXPlusY { .. } => Expr::CosXPlusY { amp: v },
            Expr::TwoMode { b, .. } => Expr::TwoMode { a: v, b },
        })
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Expr::Zero => write!(f, "zero"),
            Expr::Constant(c) => write!(f, "constant({c})"),
            Expr::CosX { amp, k } => write!(f, "cos_x({amp}, {k})"),
            Expr::SinX { amp, k } => write!(f, "sin_x({amp}, {k})"),
            Expr::CosY { amp, k } => write!(f, "cos_y({amp}, {k})"),
            Expr::SinY { amp, k } => write!(f, "sin_y({amp}, {k})"),
            Expr::CosXCosY { amp } => write!(f, "cos_x_cos_y({amp})"),
            Expr::CosXPlusY { amp } => write!(f, "cos_x_plus_y({amp})"),
            Expr::TwoMode { a, b } => write!(f, "two_mode({a}, {b})"),
        }
    }
}

/// Torus geometry from a pair of expressions.
pub fn torus_from_exprs(nx: usize, ny: usize, lx: f64, ly: f64, u0: &Expr, phi0: &Expr) -> Result<TorusGeometry> {
    TorusGeometry::new(lx, ly, u0.sample(nx, ny, lx, ly), phi0.sample(nx, ny, lx, ly))
}

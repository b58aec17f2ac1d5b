//! Periodic staggered grids on the conformally flat torus.
//!
//! Scalars (`f`, `u`, `phi`) live on nodes `(i, j)` at `(i hx, j hy)`.
//! Gradients and gradient densities live on cell centers; cell `(i, j)`
//! has corners `(i, j)`, `(i+1, j)`, `(i, j+1)`, `(i+1, j+1)` and samples
//! `u`, `phi` by 4-point averaging. The metric is `g = e^{2u}(dx² + dy²)`
//! and the weighted measure is `dμ = e^{-phi} dA_g`.

use crate::error::{Error, Result};

/// Neumaier-compensated accumulator. Summation order is the caller's
/// iteration order, so results are bit-reproducible.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated `Σ values[i] * weights[i]` in index order.
pub fn weighted_sum(values: &[f64], weights: &[f64]) -> f64 {
    debug_assert_eq!(values.len(), weights.len());
    let mut acc = CompensatedSum::new();
    for (v, w) in values.iter().zip(weights) {
        acc.add(v * w);
    }
    acc.value()
}

/// Node-centered scalar on an `nx × ny` periodic grid, stored row-major in `i`
/// (index `j * nx + i`).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    nx: usize,
    ny: usize,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(nx: usize, ny: usize, values: Vec<f64>) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidGeometry("grid counts must be positive".into()));
        }
        if values.len() != nx * ny {
            return Err(Error::InvalidGeometry(format!(
                "field has {} values, grid needs {}",
                values.len(),
                nx * ny
            )));
        }
        Ok(Self { nx, ny, values })
    }

    pub fn constant(nx: usize, ny: usize, value: f64) -> Self {
        Self {
            nx,
            ny,
            values: vec![value; nx * ny],
        }
    }

    /// Samples `f(x, y)` at the nodes of a grid with spacings `hx`, `hy`.
    pub fn from_fn(nx: usize, ny: usize, hx: f64, hy: f64, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                values.push(f(i as f64 * hx, j as f64 * hy));
            }
        }
        Self { nx, ny, values }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Periodic access; any integer offsets wrap.
    #[inline]
    pub fn at(&self, i: isize, j: isize) -> f64 {
        let ii = i.rem_euclid(self.nx as isize) as usize;
        let jj = j.rem_euclid(self.ny as isize) as usize;
        self.values[jj * self.nx + ii]
    }

    /// Field translated so that `shifted.at(i, j) == self.at(i - di, j - dj)`.
    pub fn shifted(&self, di: isize, dj: isize) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for j in 0..self.ny as isize {
            for i in 0..self.nx as isize {
                values.push(self.at(i - di, j - dj));
            }
        }
        Self {
            nx: self.nx,
            ny: self.ny,
            values,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            nx: self.nx,
            ny: self.ny,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the minimum (first occurrence).
    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for (k, &v) in self.values.iter().enumerate() {
            if v < self.values[best] {
                best = k;
            }
        }
        best
    }

    /// Cell-center 4-point average.
    pub fn cell_average(&self) -> Vec<f64> {
        let (nx, ny) = (self.nx, self.ny);
        let mut out = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            let j1 = (j + 1) % ny;
            for i in 0..nx {
                let i1 = (i + 1) % nx;
                let v = self.values[j * nx + i]
                    + self.values[j * nx + i1]
                    + self.values[j1 * nx + i]
                    + self.values[j1 * nx + i1];
                out.push(0.25 * v);
            }
        }
        out
    }
}

/// Conformally flat torus `[0, lx) × [0, ly)` carrying the conformal factor
/// `u` and the weight `phi` at the nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusGeometry {
    pub lx: f64,
    pub ly: f64,
    pub u: ScalarField,
    pub phi: ScalarField,
}

impl TorusGeometry {
    pub fn new(lx: f64, ly: f64, u: ScalarField, phi: ScalarField) -> Result<Self> {
        let geom = Self { lx, ly, u, phi };
        geom.validate()?;
        Ok(geom)
    }

    /// Flat, unweighted torus (`u = phi = 0`).
    pub fn flat(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        Self::new(
            lx,
            ly,
            ScalarField::constant(nx, ny, 0.0),
            ScalarField::constant(nx, ny, 0.0),
        )
    }

    /// Builds `u` and `phi` from closures of `(x, y)`.
    pub fn from_fns(
        nx: usize,
        ny: usize,
        lx: f64,
        ly: f64,
        u: impl Fn(f64, f64) -> f64,
        phi: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidGeometry("grid counts must be positive".into()));
        }
        let (hx, hy) = (lx / nx as f64, ly / ny as f64);
        Self::new(
            lx,
            ly,
            ScalarField::from_fn(nx, ny, hx, hy, u),
            ScalarField::from_fn(nx, ny, hx, hy, phi),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lx > 0.0 && self.ly > 0.0 && self.lx.is_finite() && self.ly.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "side lengths must be positive and finite (lx = {}, ly = {})",
                self.lx, self.ly
            )));
        }
        if self.u.nx() != self.phi.nx() || self.u.ny() != self.phi.ny() {
            return Err(Error::InvalidGeometry("u and phi grids differ".into()));
        }
        if let Some(k) = self.u.values().iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidGeometry(format!("u is not finite at node {k}")));
        }
        if let Some(k) = self.phi.values().iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidGeometry(format!("phi is not finite at node {k}")));
        }
        Ok(())
    }

    pub fn nx(&self) -> usize {
        self.u.nx()
    }

    pub fn ny(&self) -> usize {
        self.u.ny()
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn hx(&self) -> f64 {
        self.lx / self.nx() as f64
    }

    pub fn hy(&self) -> f64 {
        self.ly / self.ny() as f64
    }

    /// Field of zeros on this grid.
    pub fn zeros(&self) -> ScalarField {
        ScalarField::constant(self.nx(), self.ny(), 0.0)
    }

    /// Samples `f(x, y)` on this grid's nodes.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        ScalarField::from_fn(self.nx(), self.ny(), self.hx(), self.hy(), f)
    }

    pub fn check_compatible(&self, f: &ScalarField) -> Result<()> {
        if f.nx() != self.nx() || f.ny() != self.ny() {
            return Err(Error::InvalidGeometry(format!(
                "field grid {}x{} does not match geometry grid {}x{}",
                f.nx(),
                f.ny(),
                self.nx(),
                self.ny()
            )));
        }
        if let Some(k) = f.values().iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidGeometry(format!("field is not finite at node {k}")));
        }
        Ok(())
    }
}

/// Per-cell gradient of a node field with respect to `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGradient {
    /// `|∇f|²_g`: edge-averaged squared differences scaled by `e^{-2u_c}`.
    pub norm_sq: Vec<f64>,
    /// Gradient components in the `g`-orthonormal frame `e^{-u}∂_x`, `e^{-u}∂_y`.
    pub ex: Vec<f64>,
    pub ey: Vec<f64>,
}

/// Node measure `dμ_i = e^{-phi_i} e^{2u_i} hx hy`.
pub fn measure_weights(geom: &TorusGeometry) -> Result<ScalarField> {
    geom.validate()?;
    let cell = geom.hx() * geom.hy();
    let values = geom
        .u
        .values()
        .iter()
        .zip(geom.phi.values())
        .map(|(&u, &phi)| (2.0 * u - phi).exp() * cell)
        .collect();
    ScalarField::new(geom.nx(), geom.ny(), values)
}

/// Cell measure `e^{2u_c - phi_c} hx hy` (midpoint rule, averaged samples).
pub fn cell_weights(geom: &TorusGeometry) -> Vec<f64> {
    let cell = geom.hx() * geom.hy();
    let uc = geom.u.cell_average();
    let pc = geom.phi.cell_average();
    uc.iter()
        .zip(&pc)
        .map(|(&u, &phi)| (2.0 * u - phi).exp() * cell)
        .collect()
}

/// Flat squared gradient `|∇₀f|²` per cell, edge-averaged:
/// `½[(Δx f)²_bottom + (Δx f)²_top]/hx² + ½[(Δy f)²_left + (Δy f)²_right]/hy²`.
///
/// For `p = 2` summing this over cells reproduces the 5-point stencil exactly.
pub(crate) fn flat_gradient_sq(nx: usize, ny: usize, hx: f64, hy: f64, f: &[f64], out: &mut [f64]) {
    let (ihx2, ihy2) = (0.5 / (hx * hx), 0.5 / (hy * hy));
    for j in 0..ny {
        let j1 = (j + 1) % ny;
        for i in 0..nx {
            let i1 = (i + 1) % nx;
            let f00 = f[j * nx + i];
            let f10 = f[j * nx + i1];
            let f01 = f[j1 * nx + i];
            let f11 = f[j1 * nx + i1];
            let (bx, tx) = (f10 - f00, f11 - f01);
            let (ly, ry) = (f01 - f00, f11 - f10);
            out[j * nx + i] = (bx * bx + tx * tx) * ihx2 + (ly * ly + ry * ry) * ihy2;
        }
    }
}

/// `|∇f|²_g = e^{-2u}|∇₀f|²` on cell centers.
pub fn gradient_sq(geom: &TorusGeometry, f: &ScalarField) -> Result<CellGradient> {
    geom.check_compatible(f)?;
    let (nx, ny, hx, hy) = (geom.nx(), geom.ny(), geom.hx(), geom.hy());
    let uc = geom.u.cell_average();
    let fv = f.values();
    let mut norm_sq = vec![0.0; nx * ny];
    flat_gradient_sq(nx, ny, hx, hy, fv, &mut norm_sq);
    let mut ex = Vec::with_capacity(nx * ny);
    let mut ey = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        let j1 = (j + 1) % ny;
        for i in 0..nx {
            let i1 = (i + 1) % nx;
            let c = j * nx + i;
            let f00 = fv[c];
            let f10 = fv[j * nx + i1];
            let f01 = fv[j1 * nx + i];
            let f11 = fv[j1 * nx + i1];
            let scale = (-uc[c]).exp();
            ex.push(scale * 0.5 * ((f10 - f00) + (f11 - f01)) / hx);
            ey.push(scale * 0.5 * ((f01 - f00) + (f11 - f10)) / hy);
            norm_sq[c] *= (-2.0 * uc[c]).exp();
        }
    }
    Ok(CellGradient { norm_sq, ex, ey })
}

/// `∫ v dμ` for a node field (node measure).
pub fn integrate_nodes(geom: &TorusGeometry, values: &[f64]) -> Result<f64> {
    let mu = measure_weights(geom)?;
    if values.len() != mu.len() {
        return Err(Error::InvalidGeometry("node field length mismatch".into()));
    }
    Ok(weighted_sum(values, mu.values()))
}

/// `∫ v dμ` for a cell field (midpoint cell measure).
pub fn integrate_cells(geom: &TorusGeometry, values: &[f64]) -> Result<f64> {
    geom.validate()?;
    let w = cell_weights(geom);
    if values.len() != w.len() {
        return Err(Error::InvalidGeometry("cell field length mismatch".into()));
    }
    Ok(weighted_sum(values, &w))
}

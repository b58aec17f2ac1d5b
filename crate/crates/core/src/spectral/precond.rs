use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

/// Pseudo-inverse of `scale · (-Δ₀)` for the periodic 5-point stencil,
/// applied by 2D FFT. The constant mode is projected out.
#[derive(Clone)]
pub(crate) struct FlatPoissonPrecond {
    nx: usize,
    ny: usize,
    inv_symbol: Vec<f64>,
    fft_x: Arc<dyn Fft<f64>>,
    ifft_x: Arc<dyn Fft<f64>>,
    fft_y: Arc<dyn Fft<f64>>,
    ifft_y: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for FlatPoissonPrecond {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FlatPoissonPrecond")
            .field("nx", &self.nx)
            .field("ny", &self.ny)
            .finish()
    }
}

impl FlatPoissonPrecond {
    pub(crate) fn new(nx: usize, ny: usize, hx: f64, hy: f64, scale: f64) -> Self {
        let mut planner = FftPlanner::new();
        let tau = 2.0 * std::f64::consts::PI;
        let mut inv_symbol = vec![0.0; nx * ny];
        for ky in 0..ny {
            let sy = (2.0 - 2.0 * (tau * ky as f64 / ny as f64).cos()) / (hy * hy);
            for kx in 0..nx {
                let sx = (2.0 - 2.0 * (tau * kx as f64 / nx as f64).cos()) / (hx * hx);
                let s = sx + sy;
                // 1/(nx ny) undoes the unnormalized inverse transform
                inv_symbol[ky * nx + kx] = if s > 1e-300 { 1.0 / (scale * s * (nx * ny) as f64) } else { 0.0 };
            }
        }
        Self {
            nx,
            ny,
            inv_symbol,
            fft_x: planner.plan_fft_forward(nx),
            ifft_x: planner.plan_fft_inverse(nx),
            fft_y: planner.plan_fft_forward(ny),
            ifft_y: planner.plan_fft_inverse(ny),
        }
    }

    fn transform_columns(&self, data: &mut [Complex<f64>], fft: &Arc<dyn Fft<f64>>) {
        let (nx, ny) = (self.nx, self.ny);
        let mut col = vec![Complex::new(0.0, 0.0); ny];
        for i in 0..nx {
            for j in 0..ny {
                col[j] = data[j * nx + i];
            }
            fft.process(&mut col);
            for j in 0..ny {
                data[j * nx + i] = col[j];
            }
        }
    }

    pub(crate) fn apply(&self, r: &[f64], out: &mut [f64]) {
        let mut data: Vec<Complex<f64>> = r.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.fft_x.process(&mut data);
        self.transform_columns(&mut data, &self.fft_y);
        for (d, s) in data.iter_mut().zip(&self.inv_symbol) {
            *d *= *s;
        }
        self.transform_columns(&mut data, &self.ifft_y);
        self.ifft_x.process(&mut data);
        for (o, d) in out.iter_mut().zip(&data) {
            *o = d.re;
        }
    }
}

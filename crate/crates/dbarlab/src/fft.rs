//! Cached square 2-D FFT plans and linear convolution.

use crate::grid::C64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

#[derive(Clone)]
pub struct Fft2 {
    pub n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2({})", self.n)
    }
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    /// In-place transform of a row-major n×n buffer, unnormalized.
    pub fn process(&self, buf: &mut [C64], inverse: bool) {
        let n = self.n;
        let fft = if inverse { &self.inv } else { &self.fwd };
        fft.process(buf);
        let mut col = vec![C64::new(0.0, 0.0); n];
        for ix in 0..n {
            for iy in 0..n {
                col[iy] = buf[iy * n + ix];
            }
            fft.process(&mut col);
            for iy in 0..n {
                buf[iy * n + ix] = col[iy];
            }
        }
    }
}

/// Kernel samples on the doubled grid, prepared for linear convolution with
/// fields on the n×n grid.
#[derive(Clone, Debug)]
pub struct Convolver {
    pub n: usize,
    plan: Fft2,
    spectrum: Vec<C64>,
}

impl Convolver {
    /// `samples[jj*2n + ii]` is the kernel at offset (d(ii) h, d(jj) h) with
    /// d(i) = i for i < n and i - 2n otherwise. `scale` multiplies the sum.
    pub fn new(n: usize, samples: &[C64], scale: f64, plan: Fft2) -> Self {
        assert_eq!(plan.n, 2 * n);
        let mut spectrum = samples.to_vec();
        plan.process(&mut spectrum, false);
        let norm = scale / (4 * n * n) as f64;
        for s in spectrum.iter_mut() {
            *s *= norm;
        }
        Convolver { n, plan, spectrum }
    }

    /// out_a = scale Σ_b K(x_a - x_b) f_b.
    pub fn apply(&self, f: &[C64]) -> Vec<C64> {
        let n = self.n;
        let m = 2 * n;
        let mut buf = vec![C64::new(0.0, 0.0); m * m];
        for iy in 0..n {
            buf[iy * m..iy * m + n].copy_from_slice(&f[iy * n..iy * n + n]);
        }
        self.plan.process(&mut buf, false);
        for (b, s) in buf.iter_mut().zip(&self.spectrum) {
            *b *= s;
        }
        self.plan.process(&mut buf, true);
        let mut out = vec![C64::new(0.0, 0.0); n * n];
        for iy in 0..n {
            out[iy * n..iy * n + n].copy_from_slice(&buf[iy * m..iy * m + n]);
        }
        out
    }
}

/// Signed offset index on a wrap-ordered axis of length 2n.
pub fn wrap_offset(i: usize, n: usize) -> isize {
    if i < n {
        i as isize
    } else {
        i as isize - 2 * n as isize
    }
}

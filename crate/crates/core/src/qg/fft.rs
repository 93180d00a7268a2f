use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Square 2-D complex FFT over row-major `n * n` buffers.
///
/// The forward transform is unnormalized; the inverse divides by `n²`, so
/// `inverse(forward(x)) == x` up to rounding.
#[derive(Clone)]
pub struct Fft2 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("n", &self.n).finish()
    }
}

/// Per-call work buffers, so one `Fft2` can be shared across threads.
#[derive(Debug, Clone)]
pub struct FftScratch {
    scratch: Vec<Complex64>,
    transpose: Vec<Complex64>,
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn scratch(&self) -> FftScratch {
        let len = self
            .forward
            .get_inplace_scratch_len()
            .max(self.inverse.get_inplace_scratch_len());
        FftScratch {
            scratch: vec![Complex64::new(0.0, 0.0); len],
            transpose: vec![Complex64::new(0.0, 0.0); self.n * self.n],
        }
    }

    pub fn forward(&self, buf: &mut [Complex64], work: &mut FftScratch) {
        self.apply(&*self.forward, buf, work);
    }

    pub fn inverse(&self, buf: &mut [Complex64], work: &mut FftScratch) {
        self.apply(&*self.inverse, buf, work);
        let scale = 1.0 / (self.n * self.n) as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }

    fn apply(&self, plan: &dyn Fft<f64>, buf: &mut [Complex64], work: &mut FftScratch) {
        let n = self.n;
        debug_assert_eq!(buf.len(), n * n);
        // Rows, transpose, rows again (now columns), transpose back.
        plan.process_with_scratch(buf, &mut work.scratch);
        transpose(buf, &mut work.transpose, n);
        plan.process_with_scratch(&mut work.transpose, &mut work.scratch);
        transpose(&work.transpose, buf, n);
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], n: usize) {
    const TILE: usize = 16;
    for by in (0..n).step_by(TILE) {
        for bx in (0..n).step_by(TILE) {
            for y in by..(by + TILE).min(n) {
                for x in bx..(bx + TILE).min(n) {
                    dst[x * n + y] = src[y * n + x];
                }
            }
        }
    }
}

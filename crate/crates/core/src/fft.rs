//! Unnormalized multi-dimensional FFT on row-major cubic lattices.

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Forward and inverse plans for an `n^d` lattice. Both directions are
/// unnormalized; `inverse(forward(x)) = n^d x`.
#[derive(Clone)]
pub struct FftNd {
    n: usize,
    d: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FftNd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftNd").field("n", &self.n).field("d", &self.d).finish()
    }
}

/// Reusable buffers for one worker.
#[derive(Debug, Default)]
pub struct Scratch {
    line: Vec<Complex64>,
    work: Vec<Complex64>,
}

impl FftNd {
    pub fn new(n: usize, d: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { n, d, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) }
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn forward(&self, data: &mut [Complex64], scratch: &mut Scratch) {
        self.run(&*self.fwd, data, scratch);
    }

    pub fn inverse(&self, data: &mut [Complex64], scratch: &mut Scratch) {
        self.run(&*self.inv, data, scratch);
    }

    fn run(&self, plan: &dyn Fft<f64>, data: &mut [Complex64], scratch: &mut Scratch) {
        debug_assert_eq!(data.len(), self.len());
        let n = self.n;
        let need = plan.get_inplace_scratch_len();
        if scratch.work.len() < need {
            scratch.work.resize(need, Complex64::default());
        }
        // last axis is contiguous
        plan.process_with_scratch(data, &mut scratch.work[..need]);
        if self.d == 1 {
            return;
        }
        scratch.line.resize(n, Complex64::default());
        for axis in 0..self.d - 1 {
            let stride = n.pow((self.d - 1 - axis) as u32);
            let block = stride * n;
            for base in (0..data.len()).step_by(block) {
                for off in 0..stride {
                    let start = base + off;
                    for (j, v) in scratch.line.iter_mut().enumerate() {
                        *v = data[start + j * stride];
                    }
                    plan.process_with_scratch(&mut scratch.line, &mut scratch.work[..need]);
                    for (j, v) in scratch.line.iter().enumerate() {
                        data[start + j * stride] = *v;
                    }
                }
            }
        }
    }
}

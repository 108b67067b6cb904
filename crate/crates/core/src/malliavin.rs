//! First-order Malliavin derivatives of the discrete scheme by one reverse
//! sweep, and Malliavin matrices.
//!
//! Write one step as `u^{n+1} = A(u^n + Δt b(u^n)) + B(σ(u^n) X^n)` with the
//! symmetric circulants `A`, `B` of symbols `E_k`, `G_k`. For the probe
//! `P = u_i^N(x₀)` the cotangent `λ^N = e_i δ_{x₀}` is pulled back by
//!
//! ```text
//! a = Aλ^{n+1},  c = Bλ^{n+1},
//! ∂P/∂X_j^n(z) = Σ_i c_i(z) σ_ij(u^n(z)),
//! λ_l^n(z) = a_l(z) + Δt Σ_i a_i(z) ∂_l b_i(u^n(z)) + Σ_i c_i(z) Σ_j ∂_l σ_ij(u^n(z)) X_j^n(z).
//! ```
//!
//! The derivative field is `D^n_j(z) = ∂P/∂X_j^n(z) / h^d`, so that
//! `Σ_n Δt ⟨D^n, D^n⟩` is the Malliavin norm under the covariance inner
//! product.

use crate::covariance::KernelSpec;
use crate::error::{Error, Result};
use crate::fft::Scratch;
use crate::grid::GridSpec;
use crate::model::Model;
use crate::noise::LatticeSpectrum;
use crate::par::{self, Execution};
use crate::phi::compute_phi;
use crate::solver::{GridProbe, NoiseSource, Probe, Solver, Trajectory, Workspace};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Largest accepted spread `max/min` of the windowed derivative ratios.
pub const DERIVATIVE_RATIO_SPREAD: f64 = 3.0;

/// `D^{(j)}_{r_n, z} u_i(t, x)` for all `n, i, j, z`, laid out `[n][i][j][z]`.
#[derive(Debug, Clone)]
pub struct DerivativeField {
    grid: GridSpec,
    target: GridProbe,
    m: usize,
    q: usize,
    data: Vec<f64>,
}

impl DerivativeField {
    pub fn zeros(grid: &GridSpec, target: GridProbe, m: usize, q: usize) -> Self {
        Self { grid: grid.clone(), target, m, q, data: vec![0.0; grid.steps() * m * q * grid.cells()] }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }
    pub fn target(&self) -> GridProbe {
        self.target
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn q(&self) -> usize {
        self.q
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn offset(&self, n: usize, i: usize, j: usize) -> usize {
        ((n * self.m + i) * self.q + j) * self.grid.cells()
    }

    pub fn value(&self, n: usize, z: usize, i: usize, j: usize) -> f64 {
        self.data[self.offset(n, i, j) + z]
    }

    /// `∂u_i(t,x)/∂X^n_j(z)`, the sensitivity to the stored increment.
    pub fn increment_sensitivity(&self, n: usize, z: usize, i: usize, j: usize) -> f64 {
        self.value(n, z, i, j) * self.grid.cell_volume()
    }

    /// The `q`-channel field `D_{r_n,·} u_i`.
    pub fn slice(&self, n: usize, i: usize) -> &[f64] {
        let start = self.offset(n, i, 0);
        &self.data[start..start + self.q * self.grid.cells()]
    }

    /// Grid format with extra axes `[steps, m]`.
    pub fn write_bin(&self, path: &Path) -> Result<()> {
        crate::noise::write_grid_file(
            path,
            &self.grid,
            self.q as u64,
            &[self.grid.steps() as u64, self.m as u64],
            &self.data,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MalliavinMatrix {
    pub m: usize,
    /// Row-major `m × m`.
    pub entries: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub target: Probe,
}

impl MalliavinMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.m + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.m).map(|i| self.get(i, i)).sum()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn from_entries(m: usize, entries: Vec<f64>, target: Probe) -> Self {
        let mat = nalgebra::DMatrix::from_row_slice(m, m, &entries);
        let mut eigenvalues: Vec<f64> = mat.symmetric_eigenvalues().iter().copied().collect();
        eigenvalues.sort_by(f64::total_cmp);
        Self { m, entries, eigenvalues, target }
    }
}

/// Per-worker buffers for the reverse sweep.
#[derive(Debug, Default)]
pub struct AdjointScratch {
    buf: Vec<Complex64>,
    fft: Scratch,
}

impl Solver {
    /// `a = Aλ`, `c = Bλ` for one real field `λ`, with one forward and one
    /// inverse FFT.
    pub fn apply_step_operators(&self, lambda: &[f64], a: &mut [f64], c: &mut [f64], s: &mut AdjointScratch) {
        let cells = lambda.len();
        let fft = self.spectrum().fft();
        s.buf.resize(cells, Complex64::default());
        for (b, v) in s.buf.iter_mut().zip(lambda) {
            *b = Complex64::new(*v, 0.0);
        }
        fft.forward(&mut s.buf, &mut s.fft);
        let e = self.semigroup_symbol();
        let g = self.noise_symbol();
        // both products are Hermitian, so one inverse transform returns a + ic
        for k in 0..cells {
            let v = s.buf[k];
            s.buf[k] = v * e[k] + Complex64::i() * v * g[k];
        }
        fft.inverse(&mut s.buf, &mut s.fft);
        let scale = 1.0 / cells as f64;
        for k in 0..cells {
            a[k] = s.buf[k].re * scale;
            c[k] = s.buf[k].im * scale;
        }
    }

    /// `A^{N-n}` applied to a field, for `N-n` steps.
    pub fn apply_semigroup(&self, field: &mut [f64], steps: usize, s: &mut AdjointScratch) {
        let cells = field.len();
        let fft = self.spectrum().fft();
        s.buf.resize(cells, Complex64::default());
        for (b, v) in s.buf.iter_mut().zip(field.iter()) {
            *b = Complex64::new(*v, 0.0);
        }
        fft.forward(&mut s.buf, &mut s.fft);
        for (b, e) in s.buf.iter_mut().zip(self.semigroup_symbol()) {
            *b *= e.powi(steps as i32);
        }
        fft.inverse(&mut s.buf, &mut s.fft);
        for (v, b) in field.iter_mut().zip(&s.buf) {
            *v = b.re / cells as f64;
        }
    }
}

/// Reverse-mode derivative of every component of `u(t, x)` with respect to
/// all increments before `t`.
pub fn derivative_field(
    solver: &Solver,
    trajectory: Option<&Trajectory>,
    target: GridProbe,
) -> Result<DerivativeField> {
    let traj = trajectory.ok_or(Error::TrajectoryNotStored)?;
    let grid = solver.grid();
    let model = solver.model();
    let (m, q, cells) = (model.m(), model.q(), grid.cells());
    if traj.states.len() != grid.steps() || traj.noise.len() != grid.steps() {
        return Err(Error::ShapeMismatch("trajectory does not cover the time grid".into()));
    }
    if target.step > grid.steps() || target.cell >= cells {
        return Err(Error::GridMismatch(format!("target {target:?} lies outside the grid")));
    }
    let dt = grid.dt();
    let inv_hd = 1.0 / grid.cell_volume();
    let mut out = DerivativeField::zeros(grid, target, m, q);
    let mut s = AdjointScratch::default();
    let mut lambda = vec![0.0; m * cells];
    let mut next = vec![0.0; m * cells];
    let mut a = vec![0.0; m * cells];
    let mut c = vec![0.0; m * cells];
    let mut point = vec![0.0; m];
    let mut grad = vec![0.0; m];
    for i0 in 0..m {
        lambda.iter_mut().for_each(|v| *v = 0.0);
        lambda[i0 * cells + target.cell] = 1.0;
        for n in (0..target.step).rev() {
            for l in 0..m {
                let r = l * cells..(l + 1) * cells;
                solver.apply_step_operators(&lambda[r.clone()], &mut a[r.clone()], &mut c[r], &mut s);
            }
            let u = &traj.states[n];
            let x = &traj.noise[n];
            next.iter_mut().for_each(|v| *v = 0.0);
            for z in 0..cells {
                for l in 0..m {
                    point[l] = u[l * cells + z];
                }
                for l in 0..m {
                    next[l * cells + z] = a[l * cells + z];
                }
                for i in 0..m {
                    let ai = a[i * cells + z];
                    let ci = c[i * cells + z];
                    if ai != 0.0 {
                        model.drift(i).eval_grad(&point, &mut grad);
                        for l in 0..m {
                            next[l * cells + z] += dt * ai * grad[l];
                        }
                    }
                    for j in 0..q {
                        let sij = model.sigma(i, j).eval_grad(&point, &mut grad);
                        let off = out.offset(n, i0, j) + z;
                        out.data[off] += ci * sij * inv_hd;
                        let xj = x[j * cells + z];
                        for l in 0..m {
                            next[l * cells + z] += ci * grad[l] * xj;
                        }
                    }
                }
            }
            std::mem::swap(&mut lambda, &mut next);
        }
    }
    if out.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Instability { step: 0, path: None });
    }
    Ok(out)
}

/// Per-step Gram matrices `Δt ⟨D^n_i, D^n_{i'}⟩`, row-major per step.
fn step_grams(d: &DerivativeField, spectrum: &LatticeSpectrum) -> Result<Vec<Vec<f64>>> {
    d.grid.ensure_same(spectrum.grid())?;
    let (m, q, cells) = (d.m, d.q, d.grid.cells());
    let fft = spectrum.fft();
    let w = spectrum.weights();
    let hd = d.grid.cell_volume();
    let dt = d.grid.dt();
    let mut s = Scratch::default();
    let mut hats = vec![vec![Complex64::default(); cells]; m * q];
    let mut out = Vec::with_capacity(d.grid.steps());
    for n in 0..d.grid.steps() {
        let mut g = vec![0.0; m * m];
        if n < d.target.step {
            for i in 0..m {
                for j in 0..q {
                    let src = &d.data[d.offset(n, i, j)..d.offset(n, i, j) + cells];
                    let h = &mut hats[i * q + j];
                    for (z, v) in h.iter_mut().zip(src) {
                        *z = Complex64::new(*v, 0.0);
                    }
                    fft.forward(h, &mut s);
                }
            }
            for i in 0..m {
                for i2 in i..m {
                    let mut acc = 0.0;
                    for j in 0..q {
                        let (x, y) = (&hats[i * q + j], &hats[i2 * q + j]);
                        for k in 0..cells {
                            acc += w[k] * (x[k].re * y[k].re + x[k].im * y[k].im);
                        }
                    }
                    let v = dt * acc * hd * hd;
                    g[i * m + i2] = v;
                    g[i2 * m + i] = v;
                }
            }
        }
        out.push(g);
    }
    Ok(out)
}

/// `M_{ii'} = Σ_n Δt ⟨D_{r_n} u_i, D_{r_n} u_{i'}⟩` over steps `n ≥ from_step`.
pub fn malliavin_matrix_window(
    d: &DerivativeField,
    spectrum: &LatticeSpectrum,
    from_step: usize,
) -> Result<MalliavinMatrix> {
    let grams = step_grams(d, spectrum)?;
    let mut entries = vec![0.0; d.m * d.m];
    for g in grams.iter().skip(from_step) {
        for (e, v) in entries.iter_mut().zip(g) {
            *e += v;
        }
    }
    let target = Probe::new(d.target.step as f64 * d.grid.dt(), d.grid.point(d.target.cell));
    Ok(MalliavinMatrix::from_entries(d.m, entries, target))
}

pub fn malliavin_matrix(d: &DerivativeField, spectrum: &LatticeSpectrum) -> Result<MalliavinMatrix> {
    malliavin_matrix_window(d, spectrum, 0)
}

/// Windowed derivative norms against `Φ(δ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeScalingReport {
    pub deltas: Vec<f64>,
    /// Monte Carlo mean of `trace Σ_{t_n ≥ t-δ} Δt ⟨D^n u, D^n u⟩`.
    pub mean_norms: Vec<f64>,
    pub phi: Vec<f64>,
    pub ratios: Vec<f64>,
    /// Fitted upper constant `max ratio`.
    pub bound: f64,
    pub spread: f64,
    pub paths: u64,
    pub pass: bool,
}

/// Monte Carlo estimate of `E‖Du(t,x)‖²` restricted to `r ∈ [t-δ, t]`,
/// compared with `Φ(δ)`; passes when all ratios are finite and positive and
/// their spread `max/min` is at most [`DERIVATIVE_RATIO_SPREAD`].
#[allow(clippy::too_many_arguments)]
pub fn check_derivative_scaling(
    model: &Model,
    kernel: &KernelSpec,
    grid: &GridSpec,
    target: &Probe,
    deltas: &[f64],
    paths: u64,
    seed: u64,
    exec: Execution,
) -> Result<DerivativeScalingReport> {
    if !model.elliptic() {
        return Err(Error::invalid("derivative scaling check needs a model carrying the ellipticity flag"));
    }
    if deltas.is_empty() || paths == 0 {
        return Err(Error::InsufficientData("derivative scaling needs windows and paths".into()));
    }
    let solver = Solver::new(model, kernel, grid)?;
    let tp = solver.resolve_probes(std::slice::from_ref(target))?[0];
    let from: Vec<usize> = deltas
        .iter()
        .map(|&dl| {
            let k = grid.step_index(dl)?;
            if k == 0 || k > tp.step {
                return Err(Error::invalid(format!("window δ = {dl} must lie in (0, t]")));
            }
            Ok(tp.step - k)
        })
        .collect::<Result<_>>()?;
    let norms = par::map_indexed_with(paths as usize, exec, Workspace::default, |ws, p| -> Result<Vec<f64>> {
        let out = solver
            .solve(NoiseSource::Stream { master: seed, path: p as u64 }, &[], true, ws)
            .map_err(|e| e.on_path(p as u64))?;
        let d = derivative_field(&solver, out.trajectory.as_ref(), tp)?;
        let grams = step_grams(&d, solver.spectrum())?;
        let m = model.m();
        let per_step: Vec<f64> = grams.iter().map(|g| (0..m).map(|i| g[i * m + i]).sum()).collect();
        Ok(from.iter().map(|&f| per_step[f..].iter().sum()).collect())
    });
    let mut mean = vec![0.0; deltas.len()];
    for r in norms {
        for (a, v) in mean.iter_mut().zip(r?) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= paths as f64);
    let phi = deltas.iter().map(|&dl| compute_phi(kernel, dl)).collect::<Result<Vec<_>>>()?;
    let ratios: Vec<f64> = mean.iter().zip(&phi).map(|(a, b)| a / b).collect();
    let bound = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let low = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = bound / low;
    let pass = low > 0.0 && bound.is_finite() && spread <= DERIVATIVE_RATIO_SPREAD;
    Ok(DerivativeScalingReport { deltas: deltas.to_vec(), mean_norms: mean, phi, ratios, bound, spread, paths, pass })
}

/// Probe value `u_i(t, x)` re-solved with `X^n_j(z)` shifted by `eps`.
#[allow(clippy::too_many_arguments)]
pub fn perturbed_probe(
    solver: &Solver,
    noise: &[Vec<f64>],
    target: GridProbe,
    i: usize,
    n: usize,
    z: usize,
    j: usize,
    eps: f64,
) -> Result<f64> {
    let cells = solver.grid().cells();
    let mut x = noise.to_vec();
    x[n][j * cells + z] += eps;
    let out = solver.solve(NoiseSource::Stored(&x), &[target], false, &mut Workspace::default())?;
    Ok(out.probes[i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CatalogFn, Nonlinearity};

    fn setup(model: Model) -> (Solver, Trajectory, GridProbe) {
        let g = GridSpec::new(1, 32, 15.0, 1.0 / 16.0, 16).unwrap();
        let s = Solver::new(&model, &KernelSpec::riesz(1, 0.5).unwrap(), &g).unwrap();
        let t = s.solve_path(5, 1, &[], true).unwrap().trajectory.unwrap();
        let target = s.resolve_probes(&[Probe::new(1.0, vec![0.0])]).unwrap()[0];
        (s, t, target)
    }

    #[test]
    fn constant_sigma_gives_discrete_heat_kernel() {
        let (s, t, target) = setup(Model::additive(1, 1.5));
        let d = derivative_field(&s, Some(&t), target).unwrap();
        let cells = s.grid().cells();
        let mut s2 = AdjointScratch::default();
        for n in [0, 7, 15] {
            let mut delta = vec![0.0; cells];
            delta[target.cell] = 1.0;
            s.apply_semigroup(&mut delta, target.step - 1 - n, &mut s2);
            let mut a = vec![0.0; cells];
            let mut c = vec![0.0; cells];
            s.apply_step_operators(&delta, &mut a, &mut c, &mut s2);
            for (z, cz) in c.iter().enumerate() {
                let expect = 1.5 * cz / s.grid().cell_volume();
                assert!((d.value(n, z, 0, 0) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn entries_vanish_after_target_time() {
        let (s, t, _) = setup(Model::scalar_benchmark());
        let target = GridProbe { step: 8, cell: 16 };
        let d = derivative_field(&s, Some(&t), target).unwrap();
        for n in 8..16 {
            assert!(d.slice(n, 0).iter().all(|v| *v == 0.0));
        }
        assert!(d.slice(7, 0).iter().any(|v| *v != 0.0));
    }

    #[test]
    fn missing_trajectory_is_an_error() {
        let (s, _, target) = setup(Model::scalar_benchmark());
        assert!(matches!(derivative_field(&s, None, target), Err(Error::TrajectoryNotStored)));
    }

    #[test]
    fn adjoint_matches_central_differences() {
        let model = Model::new(
            1,
            1,
            vec![CatalogFn::of_component(Nonlinearity::Sin, 0, 1, 1.0, 2.0)],
            vec![CatalogFn::of_component(Nonlinearity::Cos, 0, 1, 1.0, 0.0)],
            true,
        )
        .unwrap();
        let (s, t, target) = setup(model);
        let d = derivative_field(&s, Some(&t), target).unwrap();
        for (n, z) in [(3, 16), (10, 15), (15, 16)] {
            let eps = 1e-6;
            let up = perturbed_probe(&s, &t.noise, target, 0, n, z, 0, eps).unwrap();
            let dn = perturbed_probe(&s, &t.noise, target, 0, n, z, 0, -eps).unwrap();
            let fd = (up - dn) / (2.0 * eps);
            let rev = d.increment_sensitivity(n, z, 0, 0);
            assert!((fd - rev).abs() <= 1e-4 * rev.abs(), "{n},{z}: {fd} vs {rev}");
        }
    }

    #[test]
    fn gram_is_symmetric_psd() {
        let g = GridSpec::new(1, 32, 15.0, 1.0 / 16.0, 16).unwrap();
        let s = Solver::new(&Model::system_benchmark(), &KernelSpec::riesz(1, 0.5).unwrap(), &g).unwrap();
        let t = s.solve_path(5, 1, &[], true).unwrap().trajectory.unwrap();
        let d = derivative_field(&s, Some(&t), GridProbe { step: 16, cell: 16 }).unwrap();
        let mm = malliavin_matrix(&d, s.spectrum()).unwrap();
        assert_eq!(mm.get(0, 1), mm.get(1, 0));
        assert!(mm.min_eigenvalue() >= -1e-12 * mm.trace());
    }
}

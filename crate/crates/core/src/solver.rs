//! Exponential-Euler spectral integrator of the mild equation
//!
//! ```text
//! u(t,x) = ∫₀ᵗ∫ Γ(t-s, x-y) σ(u(s,y)) W(ds,dy) + ∫₀ᵗ∫ Γ(t-s, x-y) b(u(s,y)) dy ds
//! ```
//!
//! on the periodic lattice. Per Fourier mode, with `E_k = e^{-Δt|ξ_k|²/2}`,
//!
//! ```text
//! û^{n+1}_k = E_k (û^n_k + Δt F[b(u^n)]_k) + G_k F[σ(u^n) X^n]_k,
//! G_k = ((1 - e^{-Δt|ξ_k|²}) / (Δt|ξ_k|²))^{1/2},
//! ```
//!
//! where `X^n` is the noise increment density of step `n` (left-point rule).
//! `G_k` makes the additive case exact in law per mode: the variance of mode
//! `k` at time `T` is `m_L(k) ∫₀ᵀ e^{-(T-s)|ξ_k|²} ds`.

use crate::covariance::KernelSpec;
use crate::error::{Error, Result};
use crate::fft::Scratch;
use crate::grid::GridSpec;
use crate::model::Model;
use crate::noise::{LatticeSpectrum, NoiseIncrementField, NoiseSampler, SamplerScratch};
use crate::par::{self, Execution};
use crate::rng::{Domain, StreamKey};
use rand::Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Magnitude beyond which a field is treated as blown up.
const BLOWUP: f64 = 1e150;

/// A requested observation point `u(t, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Probe {
    pub t: f64,
    pub x: Vec<f64>,
}

impl Probe {
    pub fn new(t: f64, x: Vec<f64>) -> Self {
        Self { t, x }
    }
}

/// A probe mapped onto the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridProbe {
    pub step: usize,
    pub cell: usize,
}

/// The `m` components of `u(t_n, ·)`, component-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionField {
    grid: GridSpec,
    step: usize,
    m: usize,
    data: Vec<f64>,
}

impl SolutionField {
    pub fn zeros(grid: &GridSpec, m: usize) -> Self {
        Self { grid: grid.clone(), step: 0, m, data: vec![0.0; m * grid.cells()] }
    }

    pub fn from_data(grid: &GridSpec, step: usize, m: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != m * grid.cells() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {m} components of {} cells",
                data.len(),
                grid.cells()
            )));
        }
        Ok(Self { grid: grid.clone(), step, m, data })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }
    pub fn step(&self) -> usize {
        self.step
    }
    pub fn time(&self) -> f64 {
        self.step as f64 * self.grid.dt()
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn component(&self, i: usize) -> &[f64] {
        let c = self.grid.cells();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn write_bin(&self, path: &std::path::Path) -> Result<()> {
        crate::noise::write_grid_file(path, &self.grid, self.m as u64, &[], &self.data)
    }
}

/// Where the increments of a path come from.
#[derive(Debug, Clone, Copy)]
pub enum NoiseSource<'a> {
    /// Fresh draws from the streams of `(master, path)`.
    Stream { master: u64, path: u64 },
    /// Previously recorded increments, one `q·N^d` field per step.
    Stored(&'a [Vec<f64>]),
}

/// Stored states `u^0 … u^{N-1}` and increments `X^0 … X^{N-1}` of a path.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub noise: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct PathOutput {
    /// `probe × m` values.
    pub probes: Vec<f64>,
    pub terminal: SolutionField,
    pub trajectory: Option<Trajectory>,
}

/// Per-worker buffers.
#[derive(Debug, Default)]
pub struct Workspace {
    u: Vec<f64>,
    u_hat: Vec<Complex64>,
    z: Vec<Complex64>,
    noise: Vec<f64>,
    point: Vec<f64>,
    sig: Vec<f64>,
    drift: Vec<f64>,
    fft: Scratch,
    sampler: SamplerScratch,
}

/// Integrator for a fixed model, kernel and grid.
#[derive(Debug, Clone)]
pub struct Solver {
    model: Model,
    grid: GridSpec,
    sampler: NoiseSampler,
    semigroup: Vec<f64>,
    noise_gain: Vec<f64>,
    alpha: Vec<Complex64>,
    beta: Vec<Complex64>,
}

impl Solver {
    pub fn new(model: &Model, kernel: &KernelSpec, grid: &GridSpec) -> Result<Self> {
        let spectrum = Arc::new(LatticeSpectrum::new(kernel, grid)?);
        Ok(Self::with_spectrum(model, spectrum))
    }

    pub fn with_spectrum(model: &Model, spectrum: Arc<LatticeSpectrum>) -> Self {
        let grid = spectrum.grid().clone();
        let dt = grid.dt();
        let semigroup: Vec<f64> = spectrum.xi_squared().iter().map(|x| (-0.5 * dt * x).exp()).collect();
        let noise_gain: Vec<f64> = spectrum
            .xi_squared()
            .iter()
            .map(|&x| if x == 0.0 { 1.0 } else { (-(-dt * x).exp_m1() / (dt * x)).sqrt() })
            .collect();
        // Z = Δt b + i σX packs two real fields; with FZ the transform of Z,
        // E·F[Δt b] + G·F[σX] = α·FZ_k + β·conj(FZ_{-k})
        let alpha = semigroup.iter().zip(&noise_gain).map(|(e, g)| Complex64::new(0.5 * e, -0.5 * g)).collect();
        let beta = semigroup.iter().zip(&noise_gain).map(|(e, g)| Complex64::new(0.5 * e, 0.5 * g)).collect();
        Self { model: model.clone(), grid, sampler: NoiseSampler::new(spectrum), semigroup, noise_gain, alpha, beta }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }
    pub fn spectrum(&self) -> &Arc<LatticeSpectrum> {
        self.sampler.spectrum()
    }
    pub fn sampler(&self) -> &NoiseSampler {
        &self.sampler
    }
    /// Symbol `E_k` of the one-step heat semigroup.
    pub fn semigroup_symbol(&self) -> &[f64] {
        &self.semigroup
    }
    /// Symbol `G_k` of the noise injection.
    pub fn noise_symbol(&self) -> &[f64] {
        &self.noise_gain
    }

    pub fn resolve_probes(&self, probes: &[Probe]) -> Result<Vec<GridProbe>> {
        probes
            .iter()
            .map(|p| Ok(GridProbe { step: self.grid.step_index(p.t)?, cell: self.grid.cell_index(&p.x)? }))
            .collect()
    }

    /// One step from `u` with increments `dw`.
    pub fn step(&self, u: &SolutionField, dw: &NoiseIncrementField) -> Result<SolutionField> {
        self.grid.ensure_same(u.grid())?;
        self.grid.ensure_same(dw.grid())?;
        if u.m() != self.model.m() || dw.q() != self.model.q() {
            return Err(Error::ShapeMismatch(format!(
                "model is m={}, q={}; got m={}, q={}",
                self.model.m(),
                self.model.q(),
                u.m(),
                dw.q()
            )));
        }
        let mut ws = Workspace::default();
        self.prepare(&mut ws);
        ws.u.copy_from_slice(u.data());
        let cells = self.grid.cells();
        for i in 0..self.model.m() {
            let hat = &mut ws.u_hat[i * cells..(i + 1) * cells];
            for (h, v) in hat.iter_mut().zip(&ws.u[i * cells..(i + 1) * cells]) {
                *h = Complex64::new(*v, 0.0);
            }
            self.spectrum().fft().forward(hat, &mut ws.fft);
        }
        ws.noise.copy_from_slice(dw.data());
        self.advance(&mut ws, u.step())?;
        SolutionField::from_data(&self.grid, u.step() + 1, self.model.m(), ws.u.clone())
    }

    fn prepare(&self, ws: &mut Workspace) {
        let cells = self.grid.cells();
        let (m, q) = (self.model.m(), self.model.q());
        ws.u.clear();
        ws.u.resize(m * cells, 0.0);
        ws.u_hat.clear();
        ws.u_hat.resize(m * cells, Complex64::default());
        ws.z.resize(cells, Complex64::default());
        ws.noise.resize(q * cells, 0.0);
        ws.point.resize(m, 0.0);
        ws.sig.resize(m * q, 0.0);
        ws.drift.resize(m, 0.0);
    }

    /// `u^n, û^n, X^n` in the workspace → `u^{n+1}, û^{n+1}`.
    fn advance(&self, ws: &mut Workspace, n: usize) -> Result<()> {
        let cells = self.grid.cells();
        let (m, q) = (self.model.m(), self.model.q());
        let dt = self.grid.dt();
        let fft = self.spectrum().fft();
        let neg = self.spectrum().negated_bins();
        for i in 0..m {
            for z in 0..cells {
                for l in 0..m {
                    ws.point[l] = ws.u[l * cells + z];
                }
                let b = self.model.drift(i).eval(&ws.point);
                let mut s = 0.0;
                for j in 0..q {
                    s += self.model.sigma(i, j).eval(&ws.point) * ws.noise[j * cells + z];
                }
                ws.z[z] = Complex64::new(dt * b, s);
            }
            fft.forward(&mut ws.z, &mut ws.fft);
            let hat = &mut ws.u_hat[i * cells..(i + 1) * cells];
            for k in 0..cells {
                hat[k] = hat[k] * self.semigroup[k] + self.alpha[k] * ws.z[k] + self.beta[k] * ws.z[neg[k]].conj();
            }
        }
        let scale = 1.0 / cells as f64;
        let mut i = 0;
        while i < m {
            let pair = i + 1 < m;
            for k in 0..cells {
                let a = ws.u_hat[i * cells + k];
                ws.z[k] = if pair { a + Complex64::i() * ws.u_hat[(i + 1) * cells + k] } else { a };
            }
            fft.inverse(&mut ws.z, &mut ws.fft);
            for z in 0..cells {
                ws.u[i * cells + z] = ws.z[z].re * scale;
                if pair {
                    ws.u[(i + 1) * cells + z] = ws.z[z].im * scale;
                }
            }
            i += 2;
        }
        if ws.u.iter().any(|v| !(v.abs() < BLOWUP)) {
            return Err(Error::Instability { step: n + 1, path: None });
        }
        Ok(())
    }

    /// Integrates one path from the zero field and records the probes.
    pub fn solve(
        &self,
        source: NoiseSource<'_>,
        probes: &[GridProbe],
        store: bool,
        ws: &mut Workspace,
    ) -> Result<PathOutput> {
        let steps = self.grid.steps();
        let cells = self.grid.cells();
        let (m, q) = (self.model.m(), self.model.q());
        if let NoiseSource::Stored(x) = source {
            if x.len() != steps || x.iter().any(|f| f.len() != q * cells) {
                return Err(Error::ShapeMismatch("stored increments do not match the grid".into()));
            }
        }
        if let Some(p) = probes.iter().find(|p| p.step > steps || p.cell >= cells) {
            return Err(Error::GridMismatch(format!("probe {p:?} lies outside the grid")));
        }
        self.prepare(ws);
        let mut out = vec![0.0; probes.len() * m];
        let record = |ws: &Workspace, n: usize, out: &mut [f64]| {
            for (k, p) in probes.iter().enumerate() {
                if p.step == n {
                    for i in 0..m {
                        out[k * m + i] = ws.u[i * cells + p.cell];
                    }
                }
            }
        };
        let mut traj =
            store.then(|| Trajectory { states: Vec::with_capacity(steps), noise: Vec::with_capacity(steps) });
        record(ws, 0, &mut out);
        for n in 0..steps {
            match source {
                NoiseSource::Stream { master, path } => {
                    self.sampler.fill(StreamKey::noise(master, path, 0, 0), n, &mut ws.noise, &mut ws.sampler)
                }
                NoiseSource::Stored(x) => ws.noise.copy_from_slice(&x[n]),
            }
            if let Some(t) = traj.as_mut() {
                t.states.push(ws.u.clone());
                t.noise.push(ws.noise.clone());
            }
            self.advance(ws, n)?;
            record(ws, n + 1, &mut out);
        }
        let terminal = SolutionField { grid: self.grid.clone(), step: steps, m, data: ws.u.clone() };
        Ok(PathOutput { probes: out, terminal, trajectory: traj })
    }

    /// Convenience wrapper drawing path `path` of `master`.
    pub fn solve_path(&self, master: u64, path: u64, probes: &[GridProbe], store: bool) -> Result<PathOutput> {
        self.solve(NoiseSource::Stream { master, path }, probes, store, &mut Workspace::default())
            .map_err(|e| e.on_path(path))
    }
}

/// Two-sided quadratic-form bounds of `σ(a)σ(b)ᵀ` over sampled pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipticityReport {
    pub c1_hat: f64,
    pub c2_hat: f64,
    pub pass: bool,
    pub sample_size: usize,
}

/// Half-width of the box the arguments `a, b ∈ R^m` are drawn from.
pub const ELLIPTICITY_BOX: f64 = 10.0;
const ELLIPTICITY_CHUNK: usize = 4096;

/// Samples pairs `(a, b)` uniformly from `[-10, 10]^m` and records the
/// extreme eigenvalues of the symmetric part of `σ(a)σ(b)ᵀ`, i.e. the exact
/// min and max of `Q(ξ) = Σ σ_ik(a) σ_jk(b) ξ_i ξ_j` over unit `ξ`.
pub fn check_ellipticity(model: &Model, sample: usize, seed: u64, exec: Execution) -> Result<EllipticityReport> {
    if !model.elliptic() {
        return Err(Error::invalid("ellipticity check needs a model carrying the ellipticity flag"));
    }
    if sample == 0 {
        return Err(Error::InsufficientData("ellipticity check needs at least one sample".into()));
    }
    let (m, q) = (model.m(), model.q());
    let chunks = sample.div_ceil(ELLIPTICITY_CHUNK);
    let parts = par::map_indexed(chunks, exec, |c| {
        let mut rng = StreamKey::new(seed, Domain::Ellipticity, c as u64).rng();
        let count = ELLIPTICITY_CHUNK.min(sample - c * ELLIPTICITY_CHUNK);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut a = vec![0.0; m];
        let mut b = vec![0.0; m];
        let mut sa = vec![0.0; m * q];
        let mut sb = vec![0.0; m * q];
        for _ in 0..count {
            for v in a.iter_mut().chain(b.iter_mut()) {
                *v = rng.random_range(-ELLIPTICITY_BOX..ELLIPTICITY_BOX);
            }
            model.eval_sigma(&a, &mut sa);
            model.eval_sigma(&b, &mut sb);
            let prod =
                nalgebra::DMatrix::from_fn(m, m, |i, j| (0..q).map(|k| sa[i * q + k] * sb[j * q + k]).sum::<f64>());
            let (l0, l1) = if m == 1 {
                (prod[(0, 0)], prod[(0, 0)])
            } else {
                let sym = (&prod + prod.transpose()) * 0.5;
                let ev = sym.symmetric_eigenvalues();
                (ev.min(), ev.max())
            };
            lo = lo.min(l0);
            hi = hi.max(l1);
        }
        (lo, hi)
    });
    let c1 = parts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let c2 = parts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(EllipticityReport { c1_hat: c1, c2_hat: c2, pass: c1 > 0.0 && c2.is_finite(), sample_size: sample })
}

/// `max_probe E|u(t,x)|^p` by Monte Carlo, a finiteness diagnostic.
#[allow(clippy::too_many_arguments)]
pub fn check_moment_bound(
    model: &Model,
    kernel: &KernelSpec,
    grid: &GridSpec,
    probes: &[Probe],
    p: u32,
    paths: u64,
    seed: u64,
    exec: Execution,
) -> Result<f64> {
    if !matches!(p, 2 | 4 | 6) {
        return Err(Error::invalid(format!("moment order must be 2, 4 or 6, got {p}")));
    }
    let spec = crate::ensemble::EnsembleSpec {
        model: model.clone(),
        kernel: kernel.clone(),
        grid: grid.clone(),
        probes: probes.to_vec(),
        paths,
        master_seed: seed,
    };
    let ens = spec.run(exec)?;
    let m = model.m();
    let mut best = 0.0f64;
    for k in 0..probes.len() {
        let s = ens.probe_samples(k);
        let mean = s.chunks(m).map(|u| u.iter().map(|v| v * v).sum::<f64>().powf(p as f64 / 2.0)).sum::<f64>()
            / paths.max(1) as f64;
        best = best.max(mean);
    }
    Ok(best)
}

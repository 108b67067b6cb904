//! Noise increments on the periodic lattice.
//!
//! The increment of channel `j` over step `n` is stored as a density
//! `X^n_j(z) = W^j((t_n, t_{n+1}] × cell_z) / h^d`, so that a Walsh integral
//! is the Riemann sum `Σ_n Σ_z h^d g(t_n, z) X^n(z)`. Its covariance is
//! `E[X^n_j(z) X^n_j(z')] = Δt · f_L(z - z')` with the band-limited,
//! periodized covariance `f_L(x) = Σ_k m_L(k) e^{iξ_k·x}`; for white noise
//! this is `Δt/h^d` on the diagonal.

use crate::covariance::{Family, KernelSpec};
use crate::error::{Error, Result};
use crate::fft::{FftNd, Scratch};
use crate::grid::GridSpec;
use crate::rng::StreamKey;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

/// Spectral weights `m_L(k)` of a kernel on a lattice.
#[derive(Debug, Clone)]
pub struct LatticeSpectrum {
    grid: GridSpec,
    kernel: KernelSpec,
    weights: Vec<f64>,
    xi_sq: Vec<f64>,
    neg: Vec<usize>,
    plan: FftNd,
}

impl LatticeSpectrum {
    pub fn new(kernel: &KernelSpec, grid: &GridSpec) -> Result<Self> {
        kernel.require_integrable()?;
        if kernel.dim() != grid.dim() {
            return Err(Error::GridMismatch(format!("kernel has d = {}, grid has d = {}", kernel.dim(), grid.dim())));
        }
        Ok(Self {
            weights: kernel.lattice_weights(grid.n(), grid.box_len())?,
            xi_sq: grid.xi_squared(),
            neg: grid.negated_bins(),
            plan: FftNd::new(grid.n(), grid.dim()),
            grid: grid.clone(),
            kernel: kernel.clone(),
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }
    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn xi_squared(&self) -> &[f64] {
        &self.xi_sq
    }
    pub fn negated_bins(&self) -> &[usize] {
        &self.neg
    }
    pub fn fft(&self) -> &FftNd {
        &self.plan
    }
    pub fn is_white(&self) -> bool {
        matches!(self.kernel.family(), Family::White)
    }

    /// `Σ_k m_L(k) = f_L(0)`.
    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `f_L` at the lattice lag with per-axis offsets `lag` (in cells).
    pub fn lag_covariance(&self, lag: &[i64]) -> f64 {
        let n = self.grid.n();
        let two_pi_over_n = 2.0 * std::f64::consts::PI / n as f64;
        let d = self.grid.dim();
        self.weights
            .iter()
            .enumerate()
            .map(|(idx, w)| {
                let mut rem = idx;
                let mut phase = 0.0;
                for a in (0..d).rev() {
                    phase += self.grid.wavenumber(rem % n) as f64 * lag[a] as f64 * two_pi_over_n;
                    rem /= n;
                }
                w * phase.cos()
            })
            .sum()
    }

    /// Band-limited `Φ`: `Σ_k m_L(k) (1 - e^{-t|ξ_k|²})/|ξ_k|²`.
    pub fn phi_grid(&self, t: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.xi_sq)
            .map(|(w, &x)| if x == 0.0 { w * t } else { w * -(-t * x).exp_m1() / x })
            .sum()
    }

    /// Covariance inner product `Σ_l Σ_k m_L(k) Re(Fφ_l(k) conj Fψ_l(k))`
    /// with `Fφ = h^d · DFT(φ)`. Fields are channel-major, `q·N^d` long.
    pub fn inner_product(&self, phi: &[f64], psi: &[f64]) -> Result<f64> {
        let cells = self.grid.cells();
        if phi.len() != psi.len() || !phi.len().is_multiple_of(cells) {
            return Err(Error::ShapeMismatch(format!(
                "fields of length {} and {} on a lattice of {cells} cells",
                phi.len(),
                psi.len()
            )));
        }
        let mut scratch = Scratch::default();
        let mut a = vec![Complex64::default(); cells];
        let mut b = vec![Complex64::default(); cells];
        let mut sum = 0.0;
        for (pc, qc) in phi.chunks(cells).zip(psi.chunks(cells)) {
            for (z, v) in a.iter_mut().zip(pc) {
                *z = Complex64::new(*v, 0.0);
            }
            for (z, v) in b.iter_mut().zip(qc) {
                *z = Complex64::new(*v, 0.0);
            }
            self.plan.forward(&mut a, &mut scratch);
            self.plan.forward(&mut b, &mut scratch);
            for ((x, y), w) in a.iter().zip(&b).zip(&self.weights) {
                sum += w * (x.re * y.re + x.im * y.im);
            }
        }
        let hd = self.grid.cell_volume();
        Ok(sum * hd * hd)
    }
}

/// `q` channels of noise increments for one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseIncrementField {
    grid: GridSpec,
    q: usize,
    data: Vec<f64>,
}

impl NoiseIncrementField {
    pub fn zeros(grid: &GridSpec, q: usize) -> Self {
        Self { grid: grid.clone(), q, data: vec![0.0; q * grid.cells()] }
    }

    pub fn from_data(grid: &GridSpec, q: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != q * grid.cells() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {q} channels of {} cells",
                data.len(),
                grid.cells()
            )));
        }
        Ok(Self { grid: grid.clone(), q, data })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }
    pub fn q(&self) -> usize {
        self.q
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn channel(&self, j: usize) -> &[f64] {
        let c = self.grid.cells();
        &self.data[j * c..(j + 1) * c]
    }

    pub fn write_bin(&self, path: &Path) -> Result<()> {
        write_grid_file(path, &self.grid, self.q as u64, &[], &self.data)
    }
}

/// Draws [`NoiseIncrementField`]s from counter-based streams.
///
/// Colored channels come in pairs: one complex inverse FFT of Hermitian-free
/// coefficients `c_k (U_k + iV_k)`, `c_k = (Δt m_L(k))^{1/2}`, yields two
/// independent real fields (real and imaginary parts), each with lag
/// covariance `Δt Σ_k m_L(k) cos(ξ_k·lag)`. Channel pair `p` reads the stream
/// `(step, 2p)`; white channels read `(step, j)`.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    spectrum: Arc<LatticeSpectrum>,
    amplitudes: Vec<f64>,
    white_sd: f64,
}

impl NoiseSampler {
    pub fn new(spectrum: Arc<LatticeSpectrum>) -> Self {
        let dt = spectrum.grid.dt();
        let amplitudes = spectrum.weights.iter().map(|w| (dt * w).sqrt()).collect();
        let white_sd = (dt / spectrum.grid.cell_volume()).sqrt();
        Self { spectrum, amplitudes, white_sd }
    }

    pub fn spectrum(&self) -> &Arc<LatticeSpectrum> {
        &self.spectrum
    }

    pub fn sample_increment(&self, key: StreamKey, step: usize, q: usize) -> NoiseIncrementField {
        let mut field = NoiseIncrementField::zeros(&self.spectrum.grid, q);
        self.fill(key, step, &mut field.data, &mut SamplerScratch::default());
        field
    }

    /// Writes the `q = out.len() / N^d` channels of step `step` into `out`.
    pub fn fill(&self, key: StreamKey, step: usize, out: &mut [f64], scratch: &mut SamplerScratch) {
        let cells = self.spectrum.grid.cells();
        let q = out.len() / cells;
        if self.spectrum.is_white() {
            for j in 0..q {
                let mut rng = key.at(step, j).rng();
                for v in &mut out[j * cells..(j + 1) * cells] {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = self.white_sd * z;
                }
            }
            return;
        }
        scratch.buf.resize(cells, Complex64::default());
        for p in 0..q.div_ceil(2) {
            let mut rng = key.at(step, 2 * p).rng();
            for (c, a) in scratch.buf.iter_mut().zip(&self.amplitudes) {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                *c = Complex64::new(a * re, a * im);
            }
            self.spectrum.plan.inverse(&mut scratch.buf, &mut scratch.fft);
            let first = 2 * p;
            for (v, c) in out[first * cells..(first + 1) * cells].iter_mut().zip(&scratch.buf) {
                *v = c.re;
            }
            if first + 1 < q {
                for (v, c) in out[(first + 1) * cells..(first + 2) * cells].iter_mut().zip(&scratch.buf) {
                    *v = c.im;
                }
            }
        }
    }
}

#[derive(Debug, Default)]
pub struct SamplerScratch {
    buf: Vec<Complex64>,
    fft: Scratch,
}

/// Walsh integral `Σ_n Σ_z h^d g^n(z)·X^n(z)` of a deterministic integrand
/// (one channel-major field per step) against a sequence of increments.
pub fn walsh_integral(g: &[Vec<f64>], increments: &[NoiseIncrementField]) -> Result<f64> {
    if g.len() != increments.len() {
        return Err(Error::ShapeMismatch(format!("{} integrand steps vs {} increments", g.len(), increments.len())));
    }
    let mut sum = 0.0;
    for (gn, x) in g.iter().zip(increments) {
        if gn.len() != x.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "integrand has {} values, increment has {}",
                gn.len(),
                x.data.len()
            )));
        }
        sum += gn.iter().zip(&x.data).map(|(a, b)| a * b).sum::<f64>() * x.grid.cell_volume();
    }
    Ok(sum)
}

/// Header of the flat binary grid format.
#[derive(Debug, Clone, PartialEq)]
pub struct GridHeader {
    pub d: u64,
    pub n: u64,
    pub box_len: f64,
    pub q: u64,
    pub dt: f64,
    /// Extra leading axes (for example the time axis of a derivative dump).
    pub extra: Vec<u64>,
}

/// Writes `d, N, L, q, Δt` (little-endian 64-bit), then `extra` as `u64`,
/// then `data` as little-endian `f64`.
pub fn write_grid_file(path: &Path, grid: &GridSpec, q: u64, extra: &[u64], data: &[f64]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(&(grid.dim() as u64).to_le_bytes())?;
    w.write_all(&(grid.n() as u64).to_le_bytes())?;
    w.write_all(&grid.box_len().to_le_bytes())?;
    w.write_all(&q.to_le_bytes())?;
    w.write_all(&grid.dt().to_le_bytes())?;
    for e in extra {
        w.write_all(&e.to_le_bytes())?;
    }
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_grid_file`] with `extra_len` extra axes.
pub fn read_grid_file(path: &Path, extra_len: usize) -> Result<(GridHeader, Vec<f64>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let head = 5 + extra_len;
    if bytes.len() < head * 8 || bytes.len() % 8 != 0 {
        return Err(Error::ShapeMismatch(format!("grid file of {} bytes is truncated", bytes.len())));
    }
    let word = |i: usize| -> [u8; 8] { bytes[i * 8..i * 8 + 8].try_into().expect("8 bytes") };
    let header = GridHeader {
        d: u64::from_le_bytes(word(0)),
        n: u64::from_le_bytes(word(1)),
        box_len: f64::from_le_bytes(word(2)),
        q: u64::from_le_bytes(word(3)),
        dt: f64::from_le_bytes(word(4)),
        extra: (0..extra_len).map(|k| u64::from_le_bytes(word(5 + k))).collect(),
    };
    let data = (head..bytes.len() / 8).map(|i| f64::from_le_bytes(word(i))).collect();
    Ok((header, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::mean_var;

    fn grid(n: usize) -> GridSpec {
        GridSpec::new(1, n, 15.0, 1.0 / 64.0, 64).unwrap()
    }

    #[test]
    fn deterministic_streams() {
        let s =
            NoiseSampler::new(Arc::new(LatticeSpectrum::new(&KernelSpec::riesz(1, 0.5).unwrap(), &grid(32)).unwrap()));
        let key = StreamKey::noise(5, 2, 0, 0);
        assert_eq!(s.sample_increment(key, 3, 3), s.sample_increment(key, 3, 3));
        assert_ne!(s.sample_increment(key, 3, 1), s.sample_increment(key, 4, 1));
    }

    #[test]
    fn white_inner_product_is_l2() {
        let g = grid(16);
        let sp = LatticeSpectrum::new(&KernelSpec::white(1).unwrap(), &g).unwrap();
        let mut phi = vec![0.0; 16];
        phi[3] = 1.0;
        let ip = sp.inner_product(&phi, &phi).unwrap();
        assert!((ip - g.spacing()).abs() < 1e-14);
        assert_eq!(sp.inner_product(&[0.0; 16], &[0.0; 16]).unwrap(), 0.0);
    }

    #[test]
    fn inner_product_is_exactly_symmetric() {
        let g = grid(32);
        let sp = LatticeSpectrum::new(&KernelSpec::riesz(1, 0.5).unwrap(), &g).unwrap();
        let a: Vec<f64> = (0..32).map(|i| (i as f64 * 0.3).sin()).collect();
        let b: Vec<f64> = (0..32).map(|i| (i as f64 * 0.7).cos() + 0.1).collect();
        assert_eq!(sp.inner_product(&a, &b).unwrap(), sp.inner_product(&b, &a).unwrap());
    }

    #[test]
    fn white_cell_variance() {
        let g = grid(16);
        let s = NoiseSampler::new(Arc::new(LatticeSpectrum::new(&KernelSpec::white(1).unwrap(), &g).unwrap()));
        let draws: Vec<f64> =
            (0..10_000).map(|p| s.sample_increment(StreamKey::noise(1, p, 0, 0), 0, 1).data()[5]).collect();
        let (_, var, n) = mean_var(draws);
        let expected = g.dt() / g.spacing();
        let se = expected * (2.0 / n as f64).sqrt();
        assert!((var - expected).abs() < 4.0 * se, "{var} vs {expected}");
    }

    #[test]
    fn colored_lag_zero_variance_and_pairing() {
        let g = grid(32);
        let sp = Arc::new(LatticeSpectrum::new(&KernelSpec::riesz(1, 0.5).unwrap(), &g).unwrap());
        let s = NoiseSampler::new(sp.clone());
        let mut a = Vec::new();
        let mut cross = Vec::new();
        for p in 0..10_000 {
            let f = s.sample_increment(StreamKey::noise(9, p, 0, 0), 0, 2);
            a.push(f.channel(0)[7]);
            cross.push(f.channel(0)[7] * f.channel(1)[7]);
        }
        let expected = g.dt() * sp.total_mass();
        let (_, var, n) = mean_var(a);
        let se = expected * (2.0 / n as f64).sqrt();
        assert!((var - expected).abs() < 4.0 * se, "{var} vs {expected}");
        let (m, _, _) = mean_var(cross);
        assert!(m.abs() < 4.0 * expected / (n as f64).sqrt());
    }

    #[test]
    fn phi_grid_limits() {
        let g = grid(128);
        let sp = LatticeSpectrum::new(&KernelSpec::white(1).unwrap(), &g).unwrap();
        let exact = (1.0 / std::f64::consts::PI).sqrt();
        let r = sp.phi_grid(1.0) / exact;
        assert!(r > 0.97 && r < 1.0, "{r}");
    }

    #[test]
    fn grid_file_round_trip() {
        let g = grid(8);
        let f = NoiseIncrementField::from_data(&g, 2, (0..16).map(|i| i as f64 * 0.5).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        f.write_bin(&path).unwrap();
        let (h, data) = read_grid_file(&path, 0).unwrap();
        assert_eq!((h.d, h.n, h.q), (1, 8, 2));
        assert_eq!(h.box_len, 15.0);
        assert_eq!(data, f.data());
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 8 * (5 + 16));
    }
}

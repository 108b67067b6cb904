//! Periodic space lattice and uniform time grid.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Largest accepted value of `Γ(T, L/2)·L^d`.
pub const LEAKAGE_BOUND: f64 = 1e-10;
pub const MAX_DIM: usize = 3;

/// `N^d` points `x_j = (j - N/2) h`, `h = L/N`, on the torus of side `L`,
/// and `steps` time steps of length `dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRaw", into = "GridRaw")]
pub struct GridSpec {
    d: usize,
    n: usize,
    box_len: f64,
    dt: f64,
    steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridRaw {
    pub d: usize,
    pub n: usize,
    pub box_len: f64,
    pub dt: f64,
    pub steps: usize,
}

impl TryFrom<GridRaw> for GridSpec {
    type Error = Error;
    fn try_from(r: GridRaw) -> Result<Self> {
        GridSpec::new(r.d, r.n, r.box_len, r.dt, r.steps)
    }
}

impl From<GridSpec> for GridRaw {
    fn from(g: GridSpec) -> Self {
        GridRaw { d: g.d, n: g.n, box_len: g.box_len, dt: g.dt, steps: g.steps }
    }
}

/// `Γ(t, r) = (2πt)^{-d/2} exp(-r²/2t)`.
pub fn heat_kernel(d: usize, t: f64, r: f64) -> f64 {
    (2.0 * PI * t).powf(-(d as f64) / 2.0) * (-r * r / (2.0 * t)).exp()
}

/// `Γ(T, L/2)·L^d`: heat-kernel mass that wraps around the torus.
pub fn leakage(d: usize, box_len: f64, t_final: f64) -> f64 {
    if t_final <= 0.0 {
        return 0.0;
    }
    heat_kernel(d, t_final, box_len / 2.0) * box_len.powi(d as i32)
}

/// Box length `2·window + 12√T`, enlarged if needed until the leakage bound
/// holds.
pub fn box_rule(d: usize, window: f64, t_final: f64) -> f64 {
    let mut len = 2.0 * window + 12.0 * t_final.max(0.0).sqrt();
    if t_final <= 0.0 {
        return len.max(1.0);
    }
    while leakage(d, len, t_final) >= LEAKAGE_BOUND {
        len *= 1.01;
    }
    len
}

impl GridSpec {
    pub fn new(d: usize, n: usize, box_len: f64, dt: f64, steps: usize) -> Result<Self> {
        if d == 0 || d > MAX_DIM {
            return Err(Error::invalid(format!("grid dimension must be 1..={MAX_DIM}, got {d}")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::invalid(format!("points per axis must be a power of two ≥ 8, got {n}")));
        }
        if !(box_len > 0.0 && box_len.is_finite()) {
            return Err(Error::invalid(format!("box length must be positive, got {box_len}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("time step must be positive, got {dt}")));
        }
        let g = Self { d, n, box_len, dt, steps };
        let leak = leakage(d, box_len, g.t_final());
        if leak >= LEAKAGE_BOUND {
            return Err(Error::invalid(format!(
                "box length {box_len} too small for T = {}: leakage Γ(T, L/2)·L^d = {leak:e} ≥ {LEAKAGE_BOUND:e} (need L ≥ {:.4})",
                g.t_final(),
                box_rule(d, 0.0, g.t_final())
            )));
        }
        Ok(g)
    }

    /// Grid whose box follows [`box_rule`] for the given probe window.
    pub fn with_box_rule(d: usize, n: usize, window: f64, t_final: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("box rule needs at least one step"));
        }
        Self::new(d, n, box_rule(d, window, t_final), t_final / steps as f64, steps)
    }

    pub fn dim(&self) -> usize {
        self.d
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn box_len(&self) -> f64 {
        self.box_len
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn steps(&self) -> usize {
        self.steps
    }
    pub fn t_final(&self) -> f64 {
        self.dt * self.steps as f64
    }
    pub fn spacing(&self) -> f64 {
        self.box_len / self.n as f64
    }
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.d as i32)
    }
    pub fn cells(&self) -> usize {
        self.n.pow(self.d as u32)
    }
    pub fn leakage(&self) -> f64 {
        leakage(self.d, self.box_len, self.t_final())
    }

    /// Same lattice with a different time discretization.
    pub fn with_time(&self, dt: f64, steps: usize) -> Result<Self> {
        Self::new(self.d, self.n, self.box_len, dt, steps)
    }

    /// Signed lattice frequency index of FFT bin `j` (fftfreq order).
    pub fn wavenumber(&self, j: usize) -> i64 {
        if j < self.n / 2 {
            j as i64
        } else {
            j as i64 - self.n as i64
        }
    }

    fn axes(&self, mut idx: usize) -> [usize; MAX_DIM] {
        let mut out = [0; MAX_DIM];
        for a in (0..self.d).rev() {
            out[a] = idx % self.n;
            idx /= self.n;
        }
        out
    }

    /// `|ξ_k|²` for every FFT bin in row-major order.
    pub fn xi_squared(&self) -> Vec<f64> {
        let dk = 2.0 * PI / self.box_len;
        (0..self.cells())
            .map(|idx| {
                let ax = self.axes(idx);
                (0..self.d).map(|a| (self.wavenumber(ax[a]) as f64 * dk).powi(2)).sum()
            })
            .collect()
    }

    /// Index of the bin holding frequency `-ξ_k`.
    pub fn negated_bins(&self) -> Vec<usize> {
        (0..self.cells())
            .map(|idx| {
                let ax = self.axes(idx);
                (0..self.d).fold(0, |acc, a| acc * self.n + (self.n - ax[a]) % self.n)
            })
            .collect()
    }

    /// Physical coordinates of lattice point `idx`.
    pub fn point(&self, idx: usize) -> Vec<f64> {
        let ax = self.axes(idx);
        let h = self.spacing();
        (0..self.d).map(|a| (ax[a] as f64 - (self.n / 2) as f64) * h).collect()
    }

    /// Lattice index of a point that lies on the grid.
    pub fn cell_index(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.d {
            return Err(Error::ShapeMismatch(format!("point has dimension {}, grid has d = {}", x.len(), self.d)));
        }
        let h = self.spacing();
        let mut idx = 0;
        for &v in x {
            let j = v / h + (self.n / 2) as f64;
            let jr = j.round();
            if (j - jr).abs() > 1e-6 || jr < 0.0 || jr >= self.n as f64 {
                return Err(Error::GridMismatch(format!(
                    "coordinate {v} is not a lattice point (h = {h}, N = {})",
                    self.n
                )));
            }
            idx = idx * self.n + jr as usize;
        }
        Ok(idx)
    }

    /// Step index `n` with `t = n·dt`.
    pub fn step_index(&self, t: f64) -> Result<usize> {
        let s = t / self.dt;
        let sr = s.round();
        if (s - sr).abs() > 1e-6 || sr < 0.0 || sr > self.steps as f64 {
            return Err(Error::GridMismatch(format!(
                "time {t} is not on the grid (dt = {}, steps = {})",
                self.dt, self.steps
            )));
        }
        Ok(sr as usize)
    }

    pub fn ensure_same(&self, other: &GridSpec) -> Result<()> {
        if self.d != other.d || self.n != other.n || self.box_len != other.box_len {
            return Err(Error::GridMismatch(format!(
                "lattices differ: (d={}, N={}, L={}) vs (d={}, N={}, L={})",
                self.d, self.n, self.box_len, other.d, other.n, other.box_len
            )));
        }
        Ok(())
    }
}

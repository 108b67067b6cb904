//! Coefficient catalog: `f(u) = shift + scale · g(w·u + offset)` with
//! `g ∈ {identity, sin, cos, tanh}`, each carrying its exact gradient.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    Identity,
    Sin,
    Cos,
    Tanh,
}

impl Nonlinearity {
    #[inline]
    fn value_and_slope(self, z: f64) -> (f64, f64) {
        match self {
            Nonlinearity::Identity => (z, 1.0),
            Nonlinearity::Sin => {
                let (s, c) = z.sin_cos();
                (s, c)
            }
            Nonlinearity::Cos => {
                let (s, c) = z.sin_cos();
                (c, -s)
            }
            Nonlinearity::Tanh => {
                let t = z.tanh();
                (t, 1.0 - t * t)
            }
        }
    }

    fn is_bounded(self) -> bool {
        !matches!(self, Nonlinearity::Identity)
    }
}

/// Scalar catalog entry on `R^m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogFn {
    pub func: Nonlinearity,
    #[serde(default = "one")]
    pub scale: f64,
    pub weights: Vec<f64>,
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub shift: f64,
}

fn one() -> f64 {
    1.0
}

impl CatalogFn {
    pub fn new(func: Nonlinearity, scale: f64, weights: Vec<f64>, offset: f64, shift: f64) -> Self {
        Self { func, scale, weights, offset, shift }
    }

    pub fn constant(c: f64, m: usize) -> Self {
        Self::new(Nonlinearity::Identity, 0.0, vec![0.0; m], 0.0, c)
    }

    /// `shift + scale · g(u_k)`.
    pub fn of_component(func: Nonlinearity, k: usize, m: usize, scale: f64, shift: f64) -> Self {
        let mut w = vec![0.0; m];
        w[k] = 1.0;
        Self::new(func, scale, w, 0.0, shift)
    }

    #[inline]
    fn argument(&self, u: &[f64]) -> f64 {
        self.offset + self.weights.iter().zip(u).map(|(w, x)| w * x).sum::<f64>()
    }

    #[inline]
    pub fn eval(&self, u: &[f64]) -> f64 {
        if self.is_constant() {
            return self.shift;
        }
        self.shift + self.scale * self.func.value_and_slope(self.argument(u)).0
    }

    /// Value and gradient; the gradient is written into `grad`.
    #[inline]
    pub fn eval_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        if self.is_constant() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return self.shift;
        }
        let (v, s) = self.func.value_and_slope(self.argument(u));
        for (g, w) in grad.iter_mut().zip(&self.weights) {
            *g = self.scale * s * w;
        }
        self.shift + self.scale * v
    }

    pub fn is_constant(&self) -> bool {
        self.scale == 0.0 || self.weights.iter().all(|w| *w == 0.0)
    }

    /// Global Lipschitz constant `|scale|·|w|`.
    pub fn lipschitz(&self) -> f64 {
        self.scale.abs() * self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    /// `sup |f|`, infinite for unbounded entries.
    pub fn sup_abs(&self) -> f64 {
        if self.is_constant() {
            self.shift.abs()
        } else if self.func.is_bounded() {
            self.shift.abs() + self.scale.abs()
        } else {
            f64::INFINITY
        }
    }
}

/// Coefficients `σ: R^m → R^{m×q}` (row-major) and `b: R^m → R^m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRaw", into = "ModelRaw")]
pub struct Model {
    m: usize,
    q: usize,
    sigma: Vec<CatalogFn>,
    drift: Vec<CatalogFn>,
    elliptic: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRaw {
    pub m: usize,
    pub q: usize,
    /// `m` rows of `q` entries.
    pub sigma: Vec<Vec<CatalogFn>>,
    pub b: Vec<CatalogFn>,
    #[serde(default)]
    pub h3: bool,
}

impl TryFrom<ModelRaw> for Model {
    type Error = Error;
    fn try_from(r: ModelRaw) -> Result<Self> {
        if r.sigma.len() != r.m || r.sigma.iter().any(|row| row.len() != r.q) {
            return Err(Error::ShapeMismatch(format!("sigma must be {}×{}", r.m, r.q)));
        }
        Model::new(r.m, r.q, r.sigma.into_iter().flatten().collect(), r.b, r.h3)
    }
}

impl From<Model> for ModelRaw {
    fn from(m: Model) -> Self {
        let sigma = m.sigma.chunks(m.q).map(|c| c.to_vec()).collect();
        ModelRaw { m: m.m, q: m.q, sigma, b: m.drift, h3: m.elliptic }
    }
}

impl Model {
    pub fn new(m: usize, q: usize, sigma: Vec<CatalogFn>, drift: Vec<CatalogFn>, elliptic: bool) -> Result<Self> {
        if m == 0 || q == 0 {
            return Err(Error::invalid("m and q must be positive"));
        }
        if sigma.len() != m * q || drift.len() != m {
            return Err(Error::ShapeMismatch(format!("expected {} σ entries and {m} b entries", m * q)));
        }
        if let Some(f) = sigma.iter().chain(&drift).find(|f| f.weights.len() != m) {
            return Err(Error::ShapeMismatch(format!("catalog entry has {} weights, m = {m}", f.weights.len())));
        }
        if let Some(f) =
            sigma.iter().chain(&drift).find(|f| !(f.scale.is_finite() && f.shift.is_finite() && f.offset.is_finite()))
        {
            return Err(Error::invalid(format!("catalog entry has non-finite parameters: {f:?}")));
        }
        let model = Self { m, q, sigma, drift, elliptic };
        if elliptic && !model.drift_bound().is_finite() {
            return Err(Error::invalid("the ellipticity flag requires a bounded drift"));
        }
        Ok(model)
    }

    /// `σ ≡ c·I` (requires `m = q`) and `b ≡ 0`.
    pub fn additive(m: usize, c: f64) -> Self {
        let sigma = (0..m * m).map(|k| CatalogFn::constant(if k / m == k % m { c } else { 0.0 }, m)).collect();
        let drift = (0..m).map(|_| CatalogFn::constant(0.0, m)).collect();
        Self { m, q: m, sigma, drift, elliptic: c != 0.0 }
    }

    /// Scalar model `σ(u) = 2 + sin u`, `b(u) = ½ cos u`.
    pub fn scalar_benchmark() -> Self {
        Self::new(
            1,
            1,
            vec![CatalogFn::of_component(Nonlinearity::Sin, 0, 1, 1.0, 2.0)],
            vec![CatalogFn::of_component(Nonlinearity::Cos, 0, 1, 0.5, 0.0)],
            true,
        )
        .expect("valid catalog model")
    }

    /// Two-component elliptic model: diagonal `2 + sin u₁`, `2 + cos u₂`,
    /// small `tanh` off-diagonals, drift `½ cos`, `½ sin`.
    pub fn system_benchmark() -> Self {
        use Nonlinearity::*;
        let m = 2;
        let sigma = vec![
            CatalogFn::of_component(Sin, 0, m, 1.0, 2.0),
            CatalogFn::new(Tanh, 0.2, vec![0.5, 0.5], 0.0, 0.0),
            CatalogFn::new(Tanh, 0.2, vec![0.5, -0.5], 0.0, 0.0),
            CatalogFn::of_component(Cos, 1, m, 1.0, 2.0),
        ];
        let drift = vec![CatalogFn::of_component(Cos, 0, m, 0.5, 0.0), CatalogFn::of_component(Sin, 1, m, 0.5, 0.0)];
        Self::new(m, m, sigma, drift, true).expect("valid catalog model")
    }

    pub fn m(&self) -> usize {
        self.m
    }
    pub fn q(&self) -> usize {
        self.q
    }
    pub fn elliptic(&self) -> bool {
        self.elliptic
    }
    pub fn sigma(&self, i: usize, j: usize) -> &CatalogFn {
        &self.sigma[i * self.q + j]
    }
    pub fn drift(&self, i: usize) -> &CatalogFn {
        &self.drift[i]
    }

    pub fn is_zero(&self) -> bool {
        self.sigma.iter().chain(&self.drift).all(|f| f.is_constant() && f.shift == 0.0)
    }

    pub fn drift_is_zero(&self) -> bool {
        self.drift.iter().all(|f| f.is_constant() && f.shift == 0.0)
    }

    /// `sup_u |b(u)|`, the Euclidean norm bound `(Σ sup|b_i|²)^{1/2}`.
    pub fn drift_bound(&self) -> f64 {
        self.drift.iter().map(|f| f.sup_abs().powi(2)).sum::<f64>().sqrt()
    }

    /// Largest per-component `sup |b_i|`.
    pub fn drift_sup(&self) -> f64 {
        self.drift.iter().map(CatalogFn::sup_abs).fold(0.0, f64::max)
    }

    /// Lipschitz constants `(σ, b)` in Frobenius / Euclidean norm.
    pub fn lipschitz(&self) -> (f64, f64) {
        let ls = self.sigma.iter().map(|f| f.lipschitz().powi(2)).sum::<f64>().sqrt();
        let lb = self.drift.iter().map(|f| f.lipschitz().powi(2)).sum::<f64>().sqrt();
        (ls, lb)
    }

    /// `σ(u)` into `out` (row-major `m×q`).
    pub fn eval_sigma(&self, u: &[f64], out: &mut [f64]) {
        for (o, f) in out.iter_mut().zip(&self.sigma) {
            *o = f.eval(u);
        }
    }

    pub fn eval_drift(&self, u: &[f64], out: &mut [f64]) {
        for (o, f) in out.iter_mut().zip(&self.drift) {
            *o = f.eval(u);
        }
    }
}

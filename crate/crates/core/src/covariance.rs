//! Spatially homogeneous covariance kernels and their spectral measures.
//!
//! Fourier convention: `Fφ(ξ) = ∫ φ(x) e^{-iξ·x} dx`, and a kernel `f` has
//! spectral density `s` when `∫ f φ dx = ∫ Fφ(ξ) s(ξ) dξ` for Schwartz `φ`.
//! Under this convention white noise has the flat density `(2π)^{-d}`.
//!
//! | family     | `f(x)`                                     | `s(ξ)`                        |
//! |------------|--------------------------------------------|-------------------------------|
//! | white      | `δ(x)`                                     | `(2π)^{-d}`                   |
//! | Riesz      | `\|x\|^{-γ}`                               | `C \|ξ\|^{γ-d}`               |
//! | Bessel     | `∫₀^∞ u^{(α-d-2)/2} e^{-u} e^{-\|x\|²/4u} du` | `C (1+\|ξ\|²)^{-α/2}`     |
//! | fractional | `∏ \|x_j\|^{2H_j-2}`                       | `C ∏ \|ξ_j\|^{1-2H_j}`        |

use crate::error::{Error, Result};
use crate::quad::{self, Tolerance};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use std::f64::consts::PI;

/// Relative tolerance for the Bessel covariance integral.
pub const BESSEL_F_TOL: f64 = 1e-8;
/// Largest accepted relative mismatch in [`KernelSpec::validate_normalization`].
pub const NORMALIZATION_TOL: f64 = 1e-4;
/// Widths `s` of the Gaussian test functions `exp(-|x|²/2s²)`.
pub const NORMALIZATION_WIDTHS: [f64; 3] = [0.5, 1.0, 2.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Family {
    White,
    Riesz { gamma: f64 },
    Bessel { alpha: f64 },
    Fractional { hurst: Vec<f64> },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::White => "white",
            Family::Riesz { .. } => "riesz",
            Family::Bessel { .. } => "bessel",
            Family::Fractional { .. } => "fractional",
        }
    }
}

/// A validated covariance kernel. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelSpecRaw", into = "KernelSpecRaw")]
pub struct KernelSpec {
    family: Family,
    d: usize,
    norm_constant: f64,
}

/// Serialized form: a family tag plus the numeric parameters of that family.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpecRaw {
    pub family: String,
    pub d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hurst: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm_constant: Option<f64>,
}

impl TryFrom<KernelSpecRaw> for KernelSpec {
    type Error = Error;

    fn try_from(raw: KernelSpecRaw) -> Result<Self> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Error::invalid(format!("family `{}` requires `{name}`", raw.family)))
        };
        let extra = |present: bool, name: &str| -> Result<()> {
            if present {
                Err(Error::invalid(format!("family `{}` does not take `{name}`", raw.family)))
            } else {
                Ok(())
            }
        };
        let spec = match raw.family.as_str() {
            "white" => {
                extra(raw.gamma.is_some(), "gamma")?;
                extra(raw.alpha.is_some(), "alpha")?;
                extra(raw.hurst.is_some(), "hurst")?;
                KernelSpec::white(raw.d)?
            }
            "riesz" => {
                extra(raw.alpha.is_some(), "alpha")?;
                extra(raw.hurst.is_some(), "hurst")?;
                KernelSpec::riesz(raw.d, need(raw.gamma, "gamma")?)?
            }
            "bessel" => {
                extra(raw.gamma.is_some(), "gamma")?;
                extra(raw.hurst.is_some(), "hurst")?;
                KernelSpec::bessel(raw.d, need(raw.alpha, "alpha")?)?
            }
            "fractional" => {
                extra(raw.gamma.is_some(), "gamma")?;
                extra(raw.alpha.is_some(), "alpha")?;
                let hurst = raw.hurst.clone().ok_or_else(|| Error::invalid("family `fractional` requires `hurst`"))?;
                if hurst.len() != raw.d {
                    return Err(Error::invalid(format!("`hurst` has {} entries but d = {}", hurst.len(), raw.d)));
                }
                KernelSpec::fractional(hurst)?
            }
            other => {
                return Err(Error::invalid(format!(
                    "unknown kernel family `{other}` (expected white, riesz, bessel or fractional)"
                )))
            }
        };
        match raw.norm_constant {
            Some(c) => spec.with_norm_constant(c),
            None => Ok(spec),
        }
    }
}

impl From<KernelSpec> for KernelSpecRaw {
    fn from(k: KernelSpec) -> Self {
        let mut raw = KernelSpecRaw {
            family: k.family.name().to_string(),
            d: k.d,
            gamma: None,
            alpha: None,
            hurst: None,
            norm_constant: Some(k.norm_constant),
        };
        match k.family {
            Family::White => {}
            Family::Riesz { gamma } => raw.gamma = Some(gamma),
            Family::Bessel { alpha } => raw.alpha = Some(alpha),
            Family::Fractional { hurst } => raw.hurst = Some(hurst),
        }
        raw
    }
}

/// Which integrability hypothesis a [`ConditionReport`] decides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConditionKind {
    /// `∫ (1+|ξ|²)^{-1} μ(dξ) < ∞`
    Eq23,
    /// `∫ (1+|ξ|²)^{-η} μ(dξ) < ∞`
    HEta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: ConditionKind,
    /// `η` for [`ConditionKind::HEta`], absent for [`ConditionKind::Eq23`].
    pub parameter: Option<f64>,
    /// The integral converges iff the exponent exceeds this threshold.
    pub threshold: f64,
    pub holds: bool,
    /// `None` stands for `+∞`.
    pub integral_value: Option<f64>,
    pub quadrature_error: Option<f64>,
}

fn sphere_area(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    2.0 * PI.powf(h) / gamma(h)
}

fn riesz_constant(d: usize, gamma_: f64) -> f64 {
    let df = d as f64;
    gamma((df - gamma_) / 2.0) / (PI.powf(df / 2.0) * 2f64.powf(gamma_) * gamma(gamma_ / 2.0))
}

fn bessel_constant(d: usize, alpha: f64) -> f64 {
    gamma(alpha / 2.0) / PI.powf(d as f64 / 2.0)
}

fn fractional_constant(hurst: &[f64]) -> f64 {
    hurst.iter().map(|h| riesz_constant(1, 2.0 - 2.0 * h)).product()
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl KernelSpec {
    pub fn white(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("dimension d must be positive"));
        }
        Ok(Self { family: Family::White, d, norm_constant: (2.0 * PI).powi(-(d as i32)) })
    }

    /// `f(x) = |x|^{-γ}` with `0 < γ < min(2, d)`.
    pub fn riesz(d: usize, gamma_: f64) -> Result<Self> {
        let bound = (d as f64).min(2.0);
        if d == 0 || !(gamma_ > 0.0 && gamma_ < bound) {
            return Err(Error::invalid(format!("Riesz kernel needs 0 < γ < min(2, d) = {bound}, got γ = {gamma_}")));
        }
        Ok(Self { family: Family::Riesz { gamma: gamma_ }, d, norm_constant: riesz_constant(d, gamma_) })
    }

    /// Bessel kernel with `max(d-2, 0) < α < d`.
    pub fn bessel(d: usize, alpha: f64) -> Result<Self> {
        let df = d as f64;
        let lo = (df - 2.0).max(0.0);
        if d == 0 || !(alpha > lo && alpha < df) {
            return Err(Error::invalid(format!("Bessel kernel needs max(d-2, 0) < α < d, got α = {alpha}, d = {d}")));
        }
        Ok(Self { family: Family::Bessel { alpha }, d, norm_constant: bessel_constant(d, alpha) })
    }

    /// `f(x) = ∏ |x_j|^{2H_j-2}` with `1/2 < H_j < 1` and `Σ H_j > d - 1`.
    pub fn fractional(hurst: Vec<f64>) -> Result<Self> {
        let d = hurst.len();
        if d == 0 {
            return Err(Error::invalid("fractional kernel needs at least one Hurst index"));
        }
        if let Some(h) = hurst.iter().find(|h| !(**h > 0.5 && **h < 1.0)) {
            return Err(Error::invalid(format!("fractional kernel needs 1/2 < H_j < 1, got {h}")));
        }
        let sum: f64 = hurst.iter().sum();
        if sum <= d as f64 - 1.0 {
            return Err(Error::invalid(format!("fractional kernel needs Σ H_j > d - 1, got {sum}")));
        }
        let c = fractional_constant(&hurst);
        Ok(Self { family: Family::Fractional { hurst }, d, norm_constant: c })
    }

    /// Replaces the spectral normalization. Mostly useful to test
    /// [`validate_normalization`](Self::validate_normalization).
    pub fn with_norm_constant(mut self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::invalid(format!("norm_constant must be positive, got {c}")));
        }
        self.norm_constant = c;
        Ok(self)
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn norm_constant(&self) -> f64 {
        self.norm_constant
    }

    pub fn is_isotropic(&self) -> bool {
        !matches!(self.family, Family::Fractional { .. })
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::ShapeMismatch(format!("point has dimension {}, kernel has d = {}", x.len(), self.d)));
        }
        Ok(())
    }

    /// Covariance `f(x)`. Singular at the origin for every family (and on the
    /// coordinate hyperplanes for the fractional kernel); white noise returns
    /// 0 away from the origin.
    pub fn evaluate_f(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let r = norm(x);
        match &self.family {
            Family::White => {
                if r == 0.0 {
                    Err(Error::SingularPoint("x = 0 (white noise covariance is δ)".into()))
                } else {
                    Ok(0.0)
                }
            }
            Family::Riesz { gamma } => {
                if r == 0.0 {
                    return Err(Error::SingularPoint("x = 0".into()));
                }
                Ok(r.powf(-gamma))
            }
            Family::Bessel { alpha } => {
                if r == 0.0 {
                    return Err(Error::SingularPoint("x = 0".into()));
                }
                bessel_f(self.d, *alpha, r)
            }
            Family::Fractional { hurst } => {
                if x.contains(&0.0) {
                    return Err(Error::SingularPoint("a coordinate of x is 0".into()));
                }
                Ok(x.iter().zip(hurst).map(|(v, h)| v.abs().powf(2.0 * h - 2.0)).product())
            }
        }
    }

    /// Spectral density `s(ξ) = dμ/dξ`, including the normalization.
    pub fn spectral_density(&self, xi: &[f64]) -> Result<f64> {
        self.check_dim(xi)?;
        match &self.family {
            Family::Fractional { hurst } => {
                if xi.contains(&0.0) {
                    return Err(Error::SingularPoint("a coordinate of ξ is 0".into()));
                }
                Ok(self.norm_constant * xi.iter().zip(hurst).map(|(v, h)| v.abs().powf(1.0 - 2.0 * h)).product::<f64>())
            }
            _ => {
                let rho = norm(xi);
                if rho == 0.0 && matches!(self.family, Family::Riesz { .. }) {
                    return Err(Error::SingularPoint("ξ = 0".into()));
                }
                Ok(self.radial_density(rho))
            }
        }
    }

    /// Spectral density as a function of `|ξ|` for the isotropic families.
    pub(crate) fn radial_density(&self, rho: f64) -> f64 {
        let df = self.d as f64;
        match &self.family {
            Family::White => self.norm_constant,
            Family::Riesz { gamma } => self.norm_constant * rho.powf(gamma - df),
            Family::Bessel { alpha } => self.norm_constant * (1.0 + rho * rho).powf(-alpha / 2.0),
            Family::Fractional { .. } => unreachable!("fractional kernel is not isotropic"),
        }
    }

    /// `∫ g(|ξ|) μ(dξ)` for radial `g`, isotropic families only.
    fn radial_integral<G: Fn(f64) -> f64>(&self, g: G, tol: Tolerance) -> Result<quad::Quad> {
        let area = sphere_area(self.d);
        let dm1 = self.d as i32 - 1;
        let q = quad::half_line(|rho| g(rho) * self.radial_density(rho) * rho.powi(dm1), tol)?;
        Ok(quad::Quad { value: area * q.value, error: area * q.error, evals: q.evals })
    }

    /// Per-axis `∫_R g(ξ) C_j |ξ|^{1-2H_j} dξ` for the fractional family
    /// (without the overall constant).
    fn axis_integral<G: Fn(f64) -> f64>(h: f64, g: G, tol: Tolerance) -> Result<quad::Quad> {
        let q = quad::half_line(|x| g(x) * x.powf(1.0 - 2.0 * h), tol)?;
        Ok(quad::Quad { value: 2.0 * q.value, error: 2.0 * q.error, evals: q.evals })
    }

    /// `S(r) = ∫ e^{-r|ξ|²} μ(dξ)` in closed form where one exists.
    pub fn spectral_heat(&self, r: f64) -> Result<f64> {
        if !(r > 0.0) {
            return Err(Error::invalid(format!("spectral heat needs r > 0, got {r}")));
        }
        let df = self.d as f64;
        Ok(match &self.family {
            Family::White => (4.0 * PI * r).powf(-df / 2.0),
            Family::Riesz { gamma: g } => {
                self.norm_constant * sphere_area(self.d) * gamma(g / 2.0) / 2.0 * r.powf(-g / 2.0)
            }
            Family::Fractional { hurst } => {
                self.norm_constant * hurst.iter().map(|h| gamma(1.0 - h) * r.powf(h - 1.0)).product::<f64>()
            }
            Family::Bessel { .. } => return self.spectral_heat_quadrature(r),
        })
    }

    /// `S(r)` by one-dimensional quadrature (radial, or per axis for the
    /// fractional family).
    pub fn spectral_heat_quadrature(&self, r: f64) -> Result<f64> {
        let tol = Tolerance::rel(1e-11);
        match &self.family {
            Family::Fractional { hurst } => {
                let mut p = self.norm_constant;
                for h in hurst {
                    p *= Self::axis_integral(*h, |x| (-r * x * x).exp(), tol)?.value;
                }
                Ok(p)
            }
            _ => Ok(self.radial_integral(|rho| (-r * rho * rho).exp(), tol)?.value),
        }
    }

    /// Exponent threshold `η₀`: `∫(1+|ξ|²)^{-η}μ(dξ) < ∞ ⇔ η > η₀`.
    pub fn eta_threshold(&self) -> f64 {
        let df = self.d as f64;
        match &self.family {
            Family::White => df / 2.0,
            Family::Riesz { gamma } => gamma / 2.0,
            Family::Bessel { alpha } => (df - alpha) / 2.0,
            Family::Fractional { hurst } => df - hurst.iter().sum::<f64>(),
        }
    }

    /// Small-time exponent `β` of `Φ(ε) ≍ ε^β` (equals `1 - η₀`).
    pub fn beta(&self) -> f64 {
        1.0 - self.eta_threshold()
    }

    /// Critical Hölder exponents `(time, space)` of the solution; admissible
    /// exponents are strictly below these.
    pub fn holder_exponents(&self) -> (f64, f64) {
        let b = self.beta();
        (b / 2.0, b)
    }

    fn condition(&self, kind: ConditionKind, eta: f64) -> Result<ConditionReport> {
        let threshold = self.eta_threshold();
        let holds = eta > threshold;
        let parameter = matches!(kind, ConditionKind::HEta).then_some(eta);
        if !holds {
            return Ok(ConditionReport {
                condition: kind,
                parameter,
                threshold,
                holds,
                integral_value: None,
                quadrature_error: None,
            });
        }
        // (1+|ξ|²)^{-η} = Γ(η)^{-1} ∫₀^∞ u^{η-1} e^{-u} e^{-u|ξ|²} du
        let mut inner_err = None;
        let q = quad::half_line(
            |u| match self.spectral_heat(u) {
                Ok(s) => (((eta - 1.0) * u.ln() - u).exp()) * s,
                Err(e) => {
                    inner_err.get_or_insert(e);
                    0.0
                }
            },
            Tolerance::rel(1e-9),
        )?;
        if let Some(e) = inner_err {
            return Err(e);
        }
        let g = gamma(eta);
        Ok(ConditionReport {
            condition: kind,
            parameter,
            threshold,
            holds,
            integral_value: Some(q.value / g),
            quadrature_error: Some(q.error / g),
        })
    }

    /// Decides `∫(1+|ξ|²)^{-1}μ(dξ) < ∞` by power counting; reports the
    /// integral by quadrature when finite.
    pub fn check_integrability(&self) -> ConditionReport {
        // quadrature of a convergent integral; failure here is a bug
        self.condition(ConditionKind::Eq23, 1.0).unwrap_or_else(|_| ConditionReport {
            condition: ConditionKind::Eq23,
            parameter: None,
            threshold: self.eta_threshold(),
            holds: true,
            integral_value: None,
            quadrature_error: None,
        })
    }

    pub fn check_h_eta(&self, eta: f64) -> Result<ConditionReport> {
        if !(eta > 0.0 && eta < 1.0) {
            return Err(Error::invalid(format!("η must lie in (0, 1), got {eta}")));
        }
        self.condition(ConditionKind::HEta, eta)
    }

    pub fn require_integrable(&self) -> Result<()> {
        if self.eta_threshold() < 1.0 {
            Ok(())
        } else {
            Err(Error::NotIntegrable(format!("{} kernel in d = {}", self.family.name(), self.d)))
        }
    }

    /// Both sides of `∫ f φ dx = ∫ Fφ dμ` for `φ = exp(-|x|²/2s²)`.
    pub fn duality_sides(&self, s: f64) -> Result<(f64, f64)> {
        let tol = Tolerance::rel(1e-10);
        let df = self.d as f64;
        let phi_hat_scale = (2.0 * PI * s * s).powf(df / 2.0);
        match &self.family {
            Family::White => {
                let rhs = self.radial_integral(|rho| phi_hat_scale * (-s * s * rho * rho / 2.0).exp(), tol)?.value;
                Ok((1.0, rhs))
            }
            Family::Fractional { hurst } => {
                let mut lhs = 1.0;
                let mut rhs = self.norm_constant;
                for h in hurst {
                    lhs *=
                        2.0 * quad::half_line(|x| x.powf(2.0 * h - 2.0) * (-x * x / (2.0 * s * s)).exp(), tol)?.value;
                    rhs *= Self::axis_integral(*h, |x| (2.0 * PI * s * s).sqrt() * (-s * s * x * x / 2.0).exp(), tol)?
                        .value;
                }
                Ok((lhs, rhs))
            }
            _ => {
                let area = sphere_area(self.d);
                let dm1 = self.d as i32 - 1;
                let mut inner_err = None;
                let lhs = quad::half_line(
                    |r| {
                        let f = match &self.family {
                            Family::Riesz { gamma } => r.powf(-gamma),
                            Family::Bessel { alpha } => match bessel_f(self.d, *alpha, r) {
                                Ok(v) => v,
                                Err(e) => {
                                    inner_err.get_or_insert(e);
                                    0.0
                                }
                            },
                            _ => unreachable!(),
                        };
                        f * (-r * r / (2.0 * s * s)).exp() * r.powi(dm1)
                    },
                    Tolerance::rel(1e-9),
                )?;
                if let Some(e) = inner_err {
                    return Err(e);
                }
                let rhs = self.radial_integral(|rho| phi_hat_scale * (-s * s * rho * rho / 2.0).exp(), tol)?.value;
                Ok((area * lhs.value, rhs))
            }
        }
    }

    /// Largest relative mismatch between the two sides of the Fourier
    /// duality over the Gaussian test battery.
    pub fn validate_normalization(&self) -> Result<f64> {
        let mut worst = (0.0, NORMALIZATION_WIDTHS[0]);
        for s in NORMALIZATION_WIDTHS {
            let (lhs, rhs) = self.duality_sides(s)?;
            let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs());
            if rel > worst.0 {
                worst = (rel, s);
            }
        }
        if worst.0 > NORMALIZATION_TOL {
            return Err(Error::Normalization { residual: worst.0, worst_width: worst.1 });
        }
        Ok(worst.0)
    }

    /// μ-mass assigned to the lattice frequency `2πk/L`: the pointwise density
    /// times the cell volume `(2π/L)^d`, or the exact integral over the
    /// Brillouin cell for modes where the density is singular.
    pub fn lattice_weights(&self, n: usize, box_len: f64) -> Result<Vec<f64>> {
        let d = self.d;
        let dk = 2.0 * PI / box_len;
        let half = PI / box_len;
        let freq = |j: usize| -> f64 {
            let k = if j < n / 2 { j as f64 } else { j as f64 - n as f64 };
            k * dk
        };
        let total = n.pow(d as u32);
        let mut out = vec![0.0; total];
        match &self.family {
            Family::Fractional { hurst } => {
                // per-axis factors; zero components get the singular cell integral
                let mut axes = Vec::with_capacity(d);
                for h in hurst {
                    let g = 2.0 - 2.0 * h;
                    let cj = riesz_constant(1, g);
                    let origin = cj * half.powf(g) * unit_cube_power_integral(1, g)?;
                    let w: Vec<f64> = (0..n)
                        .map(|j| if j == 0 { origin } else { dk * cj * freq(j).abs().powf(1.0 - 2.0 * h) })
                        .collect();
                    axes.push(w);
                }
                for (idx, o) in out.iter_mut().enumerate() {
                    let mut rem = idx;
                    let mut p = 1.0;
                    for a in (0..d).rev() {
                        p *= axes[a][rem % n];
                        rem /= n;
                    }
                    *o = p;
                }
            }
            _ => {
                let cell = dk.powi(d as i32);
                let mut xi = vec![0.0; d];
                for (idx, o) in out.iter_mut().enumerate() {
                    let mut rem = idx;
                    for a in (0..d).rev() {
                        xi[a] = freq(rem % n);
                        rem /= n;
                    }
                    *o = cell * self.radial_density(norm(&xi).max(f64::MIN_POSITIVE));
                }
                if let Family::Riesz { gamma } = self.family {
                    out[0] = self.norm_constant * half.powf(gamma) * unit_cube_power_integral(d, gamma)?;
                }
            }
        }
        Ok(out)
    }
}

/// Bessel covariance `∫₀^∞ u^{(α-d-2)/2} e^{-u} e^{-r²/(4u)} du` by
/// quadrature in `ln u`.
fn bessel_f(d: usize, alpha: f64, r: f64) -> Result<f64> {
    let p = (alpha - d as f64 - 2.0) / 2.0;
    let z = r * r / 4.0;
    let q = quad::half_line(|u| (p * u.ln() - u - z / u).exp(), Tolerance::rel(BESSEL_F_TOL))?;
    Ok(q.value)
}

/// `∫_{[-1,1]^d} |ξ|^{γ-d} dξ`, by summing the dyadic shells
/// `[-2^{-k}, 2^{-k}]^d \ [-2^{-k-1}, 2^{-k-1}]^d`, each a scaled copy of the
/// first one (homogeneity of degree `γ - d`).
pub(crate) fn unit_cube_power_integral(d: usize, gamma_: f64) -> Result<f64> {
    let segments = [(-1.0, -0.5), (-0.5, 0.5), (0.5, 1.0)];
    let boxes = 3usize.pow(d as u32);
    let exponent = gamma_ - d as f64;
    let f = |p: &[f64]| norm(p).powf(exponent);
    let mut shell = 0.0;
    for b in 0..boxes {
        let mut rem = b;
        let mut lo = vec![0.0; d];
        let mut hi = vec![0.0; d];
        let mut all_middle = true;
        for a in 0..d {
            let s = segments[rem % 3];
            all_middle &= rem % 3 == 1;
            rem /= 3;
            lo[a] = s.0;
            hi[a] = s.1;
        }
        if all_middle {
            continue;
        }
        shell += quad::integrate_box(&f, &lo, &hi, Tolerance::rel(1e-12))?.value;
    }
    Ok(shell / (1.0 - 2f64.powf(-gamma_)))
}

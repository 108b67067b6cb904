//! The variance functional `Φ(t) = ∫₀ᵗ ∫ e^{-r|ξ|²} μ(dξ) dr` and its
//! small-time scaling.
//!
//! `e^{-r|ξ|²}` is `|FΓ(r)(ξ)|²` for the heat kernel
//! `Γ(t, x) = (2πt)^{-d/2} e^{-|x|²/2t}`, so `Φ(t)` is the variance of the
//! additive solution at time `t`.

use crate::covariance::{Family, KernelSpec};
use crate::error::{Error, Result};
use crate::fit;
use crate::quad::{self, Tolerance};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use std::f64::consts::PI;

/// Tolerance on fitted exponents.
pub const EXPONENT_TOL: f64 = 0.02;
/// Minimum coefficient of determination of a scaling fit.
pub const R_SQUARED_MIN: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhiMethod {
    ClosedForm,
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hypothesis {
    H1,
    H2i,
    H2ii,
    LowerLinear,
    UpperOneMinusEta,
}

impl Hypothesis {
    pub fn label(&self) -> &'static str {
        match self {
            Hypothesis::H1 => "H1",
            Hypothesis::H2i => "H2i",
            Hypothesis::H2ii => "H2ii",
            Hypothesis::LowerLinear => "LowerLinear",
            Hypothesis::UpperOneMinusEta => "UpperOneMinusEta",
        }
    }
}

/// Outcome of a scaling or bound check.
///
/// For exponent fits `fitted_exponent` is the log-log slope. For
/// [`Hypothesis::LowerLinear`] it is the fitted constant
/// `inf (Φ(t)-Φ(s))/(t-s)` (reference 0), and for
/// [`Hypothesis::UpperOneMinusEta`] it is `sup Φ(t)/t^{1-η}` (reference `1-η`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub hypothesis: Hypothesis,
    pub fitted_exponent: f64,
    pub reference_exponent: f64,
    pub tolerance: f64,
    pub r_squared: Option<f64>,
    pub pass: bool,
}

impl ScalingReport {
    pub fn exponent(hypothesis: Hypothesis, fitted: fit::LineFit, reference: f64, tolerance: f64) -> Self {
        let pass = (fitted.slope - reference).abs() <= tolerance && fitted.r_squared >= R_SQUARED_MIN;
        Self {
            hypothesis,
            fitted_exponent: fitted.slope,
            reference_exponent: reference,
            tolerance,
            r_squared: Some(fitted.r_squared),
            pass,
        }
    }
}

/// `Φ(t)` in closed form where available (white, Riesz, fractional),
/// otherwise by quadrature.
pub fn compute_phi(kernel: &KernelSpec, t: f64) -> Result<f64> {
    let method =
        if matches!(kernel.family(), Family::Bessel { .. }) { PhiMethod::Quadrature } else { PhiMethod::ClosedForm };
    compute_phi_with(kernel, t, method)
}

pub fn compute_phi_with(kernel: &KernelSpec, t: f64, method: PhiMethod) -> Result<f64> {
    kernel.require_integrable()?;
    if t < 0.0 || !t.is_finite() {
        return Err(Error::invalid(format!("Φ(t) needs t ≥ 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    match method {
        PhiMethod::ClosedForm => closed_form(kernel, t),
        PhiMethod::Quadrature => quadrature(kernel, t),
    }
}

fn closed_form(kernel: &KernelSpec, t: f64) -> Result<f64> {
    let beta = kernel.beta();
    match kernel.family() {
        Family::Bessel { .. } => Err(Error::invalid("Bessel kernel has no closed-form Φ")),
        // S(r) = S(1)·r^{β-1} for the power-law families
        _ => Ok(kernel.spectral_heat(1.0)? * t.powf(beta) / beta),
    }
}

fn quadrature(kernel: &KernelSpec, t: f64) -> Result<f64> {
    let tol = Tolerance::rel(1e-10);
    match kernel.family() {
        Family::Fractional { .. } => {
            let mut inner = None;
            let q = quad::finite_singular(
                |_, r| match kernel.spectral_heat_quadrature(r) {
                    Ok(v) => v,
                    Err(e) => {
                        inner.get_or_insert(e);
                        0.0
                    }
                },
                0.0,
                t,
                tol,
            )?;
            match inner {
                Some(e) => Err(e),
                None => Ok(q.value),
            }
        }
        _ => {
            // ∫ (1 - e^{-tρ²})/ρ² s(ρ) |S^{d-1}| ρ^{d-1} dρ
            let d = kernel.dim();
            let area = 2.0 * PI.powf(d as f64 / 2.0) / gamma(d as f64 / 2.0);
            let q = quad::half_line(
                |rho| {
                    let g = -(-t * rho * rho).exp_m1() / (rho * rho);
                    g * kernel.radial_density(rho) * rho.powi(d as i32 - 1)
                },
                tol,
            )?;
            Ok(area * q.value)
        }
    }
}

/// `∫₀ᵗ ‖Γ(r, ·)‖²_{L²} dr` with the spatial norm computed by quadrature in
/// physical space. Equals `Φ(t)` for white noise.
pub fn phi_white_physical(d: usize, t: f64) -> Result<f64> {
    if t <= 0.0 {
        return Ok(0.0);
    }
    let area = 2.0 * PI.powf(d as f64 / 2.0) / gamma(d as f64 / 2.0);
    let mut inner = None;
    let q = quad::finite_singular(
        |_, r| {
            let norm_sq = quad::half_line(
                |x| {
                    let g = crate::grid::heat_kernel(d, r, x);
                    g * g * x.powi(d as i32 - 1)
                },
                Tolerance::rel(1e-12),
            );
            match norm_sq {
                Ok(v) => area * v.value,
                Err(e) => {
                    inner.get_or_insert(e);
                    0.0
                }
            }
        },
        0.0,
        t,
        Tolerance::rel(1e-10),
    )?;
    match inner {
        Some(e) => Err(e),
        None => Ok(q.value),
    }
}

/// `Φ` tabulated on an increasing time grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhiProfile {
    pub kernel: KernelSpec,
    pub t_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub method: PhiMethod,
}

impl PhiProfile {
    pub fn compute(kernel: &KernelSpec, t_grid: &[f64], method: PhiMethod) -> Result<Self> {
        if t_grid.is_empty() {
            return Err(Error::InsufficientData("Φ profile needs a non-empty t-grid".into()));
        }
        if t_grid[0] <= 0.0 || t_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("t-grid must be positive and strictly increasing"));
        }
        let values = t_grid.iter().map(|&t| compute_phi_with(kernel, t, method)).collect::<Result<Vec<_>>>()?;
        Ok(Self { kernel: kernel.clone(), t_grid: t_grid.to_vec(), values, method })
    }

    pub fn is_strictly_increasing(&self) -> bool {
        self.values.windows(2).all(|w| w[1] > w[0])
    }
}

/// Window endpoints `ε_k = 10^{-6 + k/8}`, `k = 0..=16`. Deep enough that
/// the Bessel correction `O(ε^{1/4})` relative to the leading term is small.
pub fn scaling_windows() -> Vec<f64> {
    (0..=16).map(|k| 10f64.powf(-6.0 + k as f64 / 8.0)).collect()
}

/// Fits `Φ(ε) ≍ ε^β` and compares with the family's exponent.
pub fn check_h1(kernel: &KernelSpec) -> Result<ScalingReport> {
    let eps = scaling_windows();
    let vals = eps.iter().map(|&e| compute_phi(kernel, e)).collect::<Result<Vec<_>>>()?;
    let f = fit::log_log(&eps, &vals)?;
    Ok(ScalingReport::exponent(Hypothesis::H1, f, kernel.beta(), EXPONENT_TOL))
}

/// Cumulative `∫₀^{ε_k} g(r) dr` over the scaling windows; `g` may have an
/// integrable singularity at 0.
fn cumulative<G: FnMut(f64) -> Result<f64>>(eps: &[f64], mut g: G, tol: Tolerance) -> Result<Vec<f64>> {
    let mut err = None;
    let mut call = |r: f64| match g(r) {
        Ok(v) => v,
        Err(e) => {
            err.get_or_insert(e);
            0.0
        }
    };
    let mut acc = quad::finite_singular(|_, r| call(r), 0.0, eps[0], tol)?.value;
    let mut out = vec![acc];
    for w in eps.windows(2) {
        acc += quad::integrate(&mut call, w[0], w[1], tol)?.value;
        out.push(acc);
    }
    match err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// `⟨Ψ(r,·), Γ(r,·)⟩_H` for `Ψ(r, x) = |x|^{γ₂} Γ(r, x)`.
///
/// With `a = γ₂/2`, `|x|^{2a} = a/Γ(1-a) ∫₀^∞ u^{-1-a}(1 - e^{-u|x|²}) du`
/// and `e^{-u|x|²}Γ(r,x) = (1+2ru)^{-d/2} Γ(r/(1+2ru), x)`, which turns the
/// pairing into a one-dimensional integral over `u` of values of
/// `S(r) = ∫ e^{-r|ξ|²} μ(dξ)`.
pub fn weighted_heat_pairing(kernel: &KernelSpec, r: f64, gamma2: f64) -> Result<f64> {
    let a = gamma2 / 2.0;
    let half_d = kernel.dim() as f64 / 2.0;
    let s_r = kernel.spectral_heat(r)?;
    let mut err = None;
    let mut s = |x: f64| match kernel.spectral_heat(x) {
        Ok(v) => v,
        Err(e) => {
            err.get_or_insert(e);
            0.0
        }
    };
    // below u0 the bracket is replaced by its first-order expansion
    let u0 = 1e-5 / (2.0 * r);
    let dr = 1e-4 * r;
    let s_prime = (s(r + dr) - s(r - dr)) / (2.0 * dr);
    let slope = 2.0 * half_d * r * s_r + r * r * s_prime;
    let head = slope * u0.powf(1.0 - a) / (1.0 - a);
    let tail = quad::half_line(
        |v| {
            let u = u0 + v;
            let w = 1.0 + 2.0 * r * u;
            let g = w.powf(-half_d) * s(r / 2.0 + r / (2.0 * w));
            u.powf(-1.0 - a) * (s_r - g)
        },
        Tolerance::rel(1e-10),
    )?;
    if let Some(e) = err {
        return Err(e);
    }
    Ok(a / gamma(1.0 - a) * (head + tail.value))
}

/// Exponents of `∫₀^ε ⟨Ψ(r),Γ(r)⟩_H dr` (reference `β + γ₂/2`) and of
/// `∫₀^ε r^{γ₁} S(r) dr` (reference `β + γ₁`). A fit that does not exceed
/// `γ₂ ∨ β` (resp. `γ₁ ∨ β`) fails.
pub fn check_h2(kernel: &KernelSpec, gamma1: f64, gamma2: f64) -> Result<(ScalingReport, ScalingReport)> {
    kernel.require_integrable()?;
    let beta = kernel.beta();
    if !(gamma1 > 0.0 && gamma1 < beta / 2.0) {
        return Err(Error::invalid(format!("γ₁ must lie in (0, {}), got {gamma1}", beta / 2.0)));
    }
    if !(gamma2 > 0.0 && gamma2 < beta) {
        return Err(Error::invalid(format!("γ₂ must lie in (0, {beta}), got {gamma2}")));
    }
    let eps = scaling_windows();
    let tol = Tolerance::rel(1e-8);

    let i_vals = cumulative(&eps, |r| weighted_heat_pairing(kernel, r, gamma2), tol)?;
    let fi = fit::log_log(&eps, &i_vals)?;
    let mut ri = ScalingReport::exponent(Hypothesis::H2i, fi, beta + gamma2 / 2.0, EXPONENT_TOL);
    ri.pass &= fi.slope > gamma2.max(beta);

    let ii_vals = cumulative(&eps, |r| Ok(r.powf(gamma1) * kernel.spectral_heat(r)?), tol)?;
    let fii = fit::log_log(&eps, &ii_vals)?;
    let mut rii = ScalingReport::exponent(Hypothesis::H2ii, fii, beta + gamma1, EXPONENT_TOL);
    rii.pass &= fii.slope > gamma1.max(beta);
    Ok((ri, rii))
}

/// Two-sided bounds on `Φ` over `(0, T]`: a positive lower bound on the
/// secant slopes `(Φ(t)-Φ(s))/(t-s)`, and boundedness of `Φ(t)/t^{1-η}`.
pub fn check_two_sided(kernel: &KernelSpec, eta: f64, t_final: f64) -> Result<(ScalingReport, ScalingReport)> {
    let cond = kernel.check_h_eta(eta)?;
    if !cond.holds {
        return Err(Error::invalid(format!("η = {eta} does not exceed the kernel threshold {}", cond.threshold)));
    }
    if !(t_final > 0.0) {
        return Err(Error::invalid(format!("T must be positive, got {t_final}")));
    }
    const K: usize = 64;
    let ts: Vec<f64> = (0..=K).map(|k| t_final * k as f64 / K as f64).collect();
    let phis = ts.iter().map(|&t| compute_phi(kernel, t)).collect::<Result<Vec<_>>>()?;
    let mut lower = f64::INFINITY;
    for j in 1..=K {
        for i in 0..j {
            lower = lower.min((phis[j] - phis[i]) / (ts[j] - ts[i]));
        }
    }
    let lower_report = ScalingReport {
        hypothesis: Hypothesis::LowerLinear,
        fitted_exponent: lower,
        reference_exponent: 0.0,
        tolerance: 0.0,
        r_squared: None,
        pass: lower.is_finite() && lower > 0.0,
    };

    // log-spaced grid down to 1e-6·T; a supremum attained at the smallest
    // point signals growth towards t = 0
    let ratios: Vec<f64> = (0..=60)
        .map(|k| {
            let t = t_final * 10f64.powf(-6.0 + k as f64 / 10.0);
            compute_phi(kernel, t).map(|p| p / t.powf(1.0 - eta))
        })
        .collect::<Result<_>>()?;
    let (arg, sup) =
        ratios.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
    let upper_report = ScalingReport {
        hypothesis: Hypothesis::UpperOneMinusEta,
        fitted_exponent: sup,
        reference_exponent: 1.0 - eta,
        tolerance: 0.0,
        r_squared: None,
        pass: sup.is_finite() && arg > 0,
    };
    Ok((lower_report, upper_report))
}

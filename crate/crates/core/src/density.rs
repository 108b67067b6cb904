//! Density estimation for `u(t, x)` and the checks built on Monte Carlo
//! ensembles: the Gaussian envelope, Hölder exponents and the drift bound.

use crate::covariance::KernelSpec;
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::fit;
use crate::grid::GridSpec;
use crate::malliavin::AdjointScratch;
use crate::model::Model;
use crate::par::{self, Execution};
use crate::quad::{self, Tolerance};
use crate::rng::{Domain, StreamKey};
use crate::solver::{NoiseSource, Probe, Solver, Workspace};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Minimum sample size for a density estimate.
pub const MIN_SAMPLES: usize = 10_000;
pub const BOOTSTRAP_RESAMPLES: usize = 200;
/// Fraction of samples the evaluation window must contain.
pub const WINDOW_COVERAGE: f64 = 0.99;
/// Points with a larger bootstrap relative error are not used.
pub const ADMISSIBLE_REL_ERR: f64 = 0.1;

/// Evaluation lattice `[-R, R]^m` with `points` cell centres per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalWindow {
    pub points: usize,
    /// `None`: the smallest `R` containing [`WINDOW_COVERAGE`] of the samples.
    pub radius: Option<f64>,
}

impl EvalWindow {
    pub fn for_dim(m: usize) -> Self {
        Self { points: if m == 1 { 61 } else { 31 }, radius: None }
    }
}

/// Product-Gaussian kernel density estimate on a lattice.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub probe: Probe,
    pub m: usize,
    pub radius: f64,
    /// Cell centres along each axis (shared by all axes).
    pub axis: Vec<f64>,
    /// Row-major over the `m` axes.
    pub values: Vec<f64>,
    pub bandwidth: Vec<f64>,
    pub bootstrap_sd: Vec<f64>,
    pub mc_rel_err: Vec<f64>,
    /// Sample variance per axis.
    pub variance: Vec<f64>,
    pub sample_size: usize,
    /// `Σ p̂ · cell volume`.
    pub mass: f64,
}

impl DensityEstimate {
    pub fn point(&self, idx: usize) -> Vec<f64> {
        let p = self.axis.len();
        let mut rem = idx;
        let mut out = vec![0.0; self.m];
        for a in (0..self.m).rev() {
            out[a] = self.axis[rem % p];
            rem /= p;
        }
        out
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn admissible(&self, idx: usize) -> bool {
        self.values[idx] > 0.0 && self.mc_rel_err[idx] < ADMISSIBLE_REL_ERR
    }
}

fn quantile(mut v: Vec<f64>, q: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
    v[k]
}

/// Density of probe `k` of an ensemble.
pub fn estimate_density(ens: &Ensemble, k: usize, window: EvalWindow, exec: Execution) -> Result<DensityEstimate> {
    let seed = ens.spec.master_seed;
    estimate_density_from(ens.probe_samples(k), ens.m(), ens.probes()[k].clone(), window, seed ^ k as u64, exec)
}

/// Density from `n × m` samples (row-major); bootstrap streams derive from
/// `seed`.
pub fn estimate_density_from(
    samples: &[f64],
    m: usize,
    probe: Probe,
    window: EvalWindow,
    seed: u64,
    exec: Execution,
) -> Result<DensityEstimate> {
    if m == 0 || !samples.len().is_multiple_of(m) {
        return Err(Error::ShapeMismatch(format!("{} values are not a whole number of {m}-vectors", samples.len())));
    }
    let n = samples.len() / m;
    if n < MIN_SAMPLES {
        return Err(Error::InsufficientData(format!("density estimate needs ≥ {MIN_SAMPLES} samples, got {n}")));
    }
    if window.points < 2 {
        return Err(Error::invalid("evaluation window needs at least 2 points per axis"));
    }
    let mut variance = Vec::with_capacity(m);
    let mut bandwidth = Vec::with_capacity(m);
    for a in 0..m {
        let (_, var, _) = fit::mean_var(samples.iter().skip(a).step_by(m).copied());
        if !(var > 0.0) {
            return Err(Error::DegenerateAxis(a));
        }
        variance.push(var);
        bandwidth.push(1.06 * var.sqrt() * (n as f64).powf(-1.0 / (m as f64 + 4.0)));
    }
    let radius = match window.radius {
        Some(r) if r > 0.0 => r,
        Some(r) => return Err(Error::invalid(format!("window radius must be positive, got {r}"))),
        None => quantile(
            samples.chunks(m).map(|y| y.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))).collect(),
            WINDOW_COVERAGE,
        ),
    };
    let p = window.points;
    let cell = 2.0 * radius / p as f64;
    let axis: Vec<f64> = (0..p).map(|j| -radius + (j as f64 + 0.5) * cell).collect();
    let total = p.pow(m as u32);

    // per-axis kernel tables K_a[j][s] = φ((y_j - x_{s,a})/h_a)/h_a
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let tables: Vec<Vec<f64>> = (0..m)
        .map(|a| {
            let h = bandwidth[a];
            let mut t = vec![0.0; p * n];
            for (j, y) in axis.iter().enumerate() {
                for s in 0..n {
                    let z = (y - samples[s * m + a]) / h;
                    t[j * n + s] = norm * (-0.5 * z * z).exp() / h;
                }
            }
            t
        })
        .collect();
    let kernel_row = |idx: usize, row: &mut Vec<f64>| {
        row.clear();
        row.resize(n, 1.0);
        let mut rem = idx;
        for a in (0..m).rev() {
            let j = rem % p;
            rem /= p;
            for (r, k) in row.iter_mut().zip(&tables[a][j * n..(j + 1) * n]) {
                *r *= k;
            }
        }
    };
    let values: Vec<f64> = par::map_indexed_with(total, exec, Vec::new, |row, idx| {
        kernel_row(idx, row);
        row.iter().sum::<f64>() / n as f64
    });

    // bootstrap: multinomial resample counts against the same kernel rows
    let counts: Vec<Vec<u32>> = par::map_indexed(BOOTSTRAP_RESAMPLES, exec, |b| {
        let mut rng = StreamKey { master: seed, domain: Domain::Bootstrap, path: b as u64, step: 0, channel: 0 }.rng();
        let mut c = vec![0u32; n];
        for _ in 0..n {
            c[rng.random_range(0..n)] += 1;
        }
        c
    });
    let sds: Vec<f64> = par::map_indexed_with(total, exec, Vec::new, |row, idx| {
        kernel_row(idx, row);
        let est: Vec<f64> = counts
            .iter()
            .map(|c| c.iter().zip(row.iter()).map(|(k, v)| *k as f64 * v).sum::<f64>() / n as f64)
            .collect();
        let (_, var, _) = fit::mean_var(est);
        var.sqrt()
    });
    let mc_rel_err = values.iter().zip(&sds).map(|(v, s)| if *v > 0.0 { s / v } else { f64::INFINITY }).collect();
    let mass = values.iter().sum::<f64>() * cell.powi(m as i32);
    Ok(DensityEstimate {
        probe,
        m,
        radius,
        axis,
        values,
        bandwidth,
        bootstrap_sd: sds,
        mc_rel_err,
        variance,
        sample_size: n,
        mass,
    })
}

/// Acceptance gates of the envelope fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeGates {
    pub c1_min: f64,
    pub c3_max: f64,
}

impl EnvelopeGates {
    pub fn for_dim(m: usize) -> Self {
        Self { c1_min: if m >= 2 { 1e-4 } else { 1e-3 }, c3_max: 1e3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopePoint {
    pub t: f64,
    pub y: Vec<f64>,
}

/// One constant set `C1…C5` shared by all times:
/// `C1 Φ^{-m/2} e^{-|y|²/(C2Φ)} ≤ p̂ ≤ C3 Φ^{-m/2} e^{-(|y|-C4T)₊²/(C5Φ)}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub pass: bool,
    /// Admissible point that attains `C1`.
    pub worst_point: EnvelopePoint,
    /// `min(C1/c1_min, c3_max/C3)`; at least 1 when passing.
    pub margin: f64,
    pub candidates: Vec<f64>,
    pub admissible_points: usize,
    /// Largest admissible `|y|` per time.
    pub admissible_radius: Vec<f64>,
    pub gates: EnvelopeGates,
}

/// Fits the envelope over estimates at `≥ 3` times. `C4` is the drift bound
/// `sup|b|`; `C2`, `C5` are searched over `2^j · 2Ĉ`, `j = -2..=4`, with
/// `Ĉ = max_t (mean sample variance)/Φ(t)`. Among candidates meeting the
/// gates, `C2` maximizes the lower envelope mass `C1 (πC2)^{m/2}` and `C5`
/// minimizes the upper one `C3 (πC5)^{m/2}`.
pub fn check_envelope(
    estimates: &[DensityEstimate],
    phis: &[f64],
    t_final: f64,
    c4: f64,
    gates: EnvelopeGates,
) -> Result<EnvelopeReport> {
    if estimates.len() != phis.len() {
        return Err(Error::ShapeMismatch(format!("{} estimates but {} Φ values", estimates.len(), phis.len())));
    }
    let usable: Vec<usize> =
        (0..estimates.len()).filter(|&k| (0..estimates[k].len()).any(|i| estimates[k].admissible(i))).collect();
    if usable.len() < 3 {
        return Err(Error::InsufficientData(format!("envelope needs ≥ 3 usable times, got {}", usable.len())));
    }
    let m = estimates[0].m;
    let c_hat = usable
        .iter()
        .map(|&k| estimates[k].variance.iter().sum::<f64>() / m as f64 / phis[k])
        .fold(f64::NEG_INFINITY, f64::max);
    let candidates: Vec<f64> = (-2..=4).map(|j| 2f64.powi(j) * 2.0 * c_hat).collect();
    let half_m = m as f64 / 2.0;

    // (t-index, point index, |y|, p̂ Φ^{m/2}, Φ)
    let mut pts = Vec::new();
    let mut admissible_radius = Vec::new();
    for &k in &usable {
        let e = &estimates[k];
        let mut rmax = 0.0f64;
        for i in 0..e.len() {
            if e.admissible(i) {
                let r = e.point(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                rmax = rmax.max(r);
                pts.push((k, i, r, e.values[i] * phis[k].powf(half_m), phis[k]));
            }
        }
        admissible_radius.push(rmax);
    }
    let lower = |c2: f64| {
        pts.iter()
            .map(|&(k, i, r, s, phi)| (s * (r * r / (c2 * phi)).exp(), k, i))
            .fold((f64::INFINITY, 0, 0), |b, x| if x.0 < b.0 { x } else { b })
    };
    let upper = |c5: f64| {
        pts.iter()
            .map(|&(_, _, r, s, phi)| {
                let excess = (r - c4 * t_final).max(0.0);
                s * (excess * excess / (c5 * phi)).exp()
            })
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let mass = |c: f64, cc: f64| c * (std::f64::consts::PI * cc).powf(half_m);

    let mut best_lower: Option<(f64, f64, usize, usize)> = None;
    let mut fallback_lower = (f64::NEG_INFINITY, candidates[0], 0, 0);
    for &c2 in &candidates {
        let (c1, k, i) = lower(c2);
        if c1 > fallback_lower.0 {
            fallback_lower = (c1, c2, k, i);
        }
        if c1 >= gates.c1_min && best_lower.is_none_or(|b| mass(c1, c2) > mass(b.0, b.1)) {
            best_lower = Some((c1, c2, k, i));
        }
    }
    let mut best_upper: Option<(f64, f64)> = None;
    let mut fallback_upper = (f64::INFINITY, candidates[0]);
    for &c5 in &candidates {
        let c3 = upper(c5);
        if c3 < fallback_upper.0 {
            fallback_upper = (c3, c5);
        }
        if c3 <= gates.c3_max && best_upper.is_none_or(|b| mass(c3, c5) < mass(b.0, b.1)) {
            best_upper = Some((c3, c5));
        }
    }
    let pass = best_lower.is_some() && best_upper.is_some();
    let (c1, c2, wk, wi) = best_lower.unwrap_or(fallback_lower);
    let (c3, c5) = best_upper.unwrap_or(fallback_upper);
    let worst_point = EnvelopePoint { t: estimates[wk].probe.t, y: estimates[wk].point(wi) };
    Ok(EnvelopeReport {
        c1,
        c2,
        c3,
        c4,
        c5,
        pass,
        worst_point,
        margin: (c1 / gates.c1_min).min(gates.c3_max / c3),
        candidates,
        admissible_points: pts.len(),
        admissible_radius,
        gates,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HolderAxis {
    Time,
    Space,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderReport {
    pub axis: HolderAxis,
    pub p: u32,
    pub lags: Vec<f64>,
    /// `E|Δu|^p` per lag.
    pub moments: Vec<f64>,
    pub fitted_exponent: f64,
    pub r_squared: f64,
    /// Critical exponent: `(1-η₀)/2` in time, `1-η₀` in space.
    pub critical_exponent: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Fits `E|u(a) - u(b)|^p ≈ C lag^{γ p}` over probe pairs `(a, b)`.
pub fn estimate_holder(
    ens: &Ensemble,
    pairs: &[(usize, usize)],
    axis: HolderAxis,
    p: u32,
    critical_exponent: f64,
    tolerance: f64,
) -> Result<HolderReport> {
    if p == 0 || !p.is_multiple_of(2) {
        return Err(Error::invalid(format!("moment order must be a positive even integer, got {p}")));
    }
    let m = ens.m();
    let probes = ens.probes();
    let mut lags = Vec::with_capacity(pairs.len());
    let mut moments = Vec::with_capacity(pairs.len());
    for &(a, b) in pairs {
        let (pa, pb) = (&probes[a], &probes[b]);
        let lag = match axis {
            HolderAxis::Time => {
                if pa.x != pb.x {
                    return Err(Error::invalid("time increments need probes at the same x"));
                }
                (pa.t - pb.t).abs()
            }
            HolderAxis::Space => {
                if pa.t != pb.t {
                    return Err(Error::invalid("space increments need probes at the same t"));
                }
                pa.x.iter().zip(&pb.x).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt()
            }
        };
        let (sa, sb) = (ens.probe_samples(a), ens.probe_samples(b));
        let mom = sa
            .chunks(m)
            .zip(sb.chunks(m))
            .map(|(u, v)| u.iter().zip(v).map(|(x, y)| (x - y).powi(2)).sum::<f64>().powf(p as f64 / 2.0))
            .sum::<f64>()
            / ens.paths().max(1) as f64;
        lags.push(lag);
        moments.push(mom);
    }
    let mut distinct = lags.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 4 {
        return Err(Error::InsufficientData(format!("Hölder fit needs ≥ 4 distinct lags, got {}", distinct.len())));
    }
    if moments.iter().all(|v| *v == 0.0) {
        return Err(Error::InsufficientData("all increments vanish; regression rejected".into()));
    }
    let f = fit::log_log(&lags, &moments)?;
    let gamma = f.slope / p as f64;
    Ok(HolderReport {
        axis,
        p,
        lags,
        moments,
        fitted_exponent: gamma,
        r_squared: f.r_squared,
        critical_exponent,
        tolerance,
        pass: (gamma - critical_exponent).abs() <= tolerance,
    })
}

/// `E|u(s+δ,x) - u(s,x)|²` for the additive equation `σ = 1, b = 0`:
/// `∫ [(1-e^{-δ|ξ|²/2})²(1-e^{-s|ξ|²}) + (1-e^{-δ|ξ|²})] / |ξ|² μ(dξ)`.
pub fn increment_variance_time(kernel: &KernelSpec, s: f64, delta: f64) -> Result<f64> {
    radial_mu_integral(kernel, |x| {
        let a = -(-delta * x / 2.0).exp_m1();
        (a * a * -(-s * x).exp_m1() - (-delta * x).exp_m1()) / x
    })
}

/// `E|u(t,x+h) - u(t,x)|²` for the additive equation in `d = 1`:
/// `2 ∫ (1 - cos(ξh))(1 - e^{-t ξ²}) / ξ² μ(dξ)`.
pub fn increment_variance_space(kernel: &KernelSpec, t: f64, lag: f64) -> Result<f64> {
    if kernel.dim() != 1 || !kernel.is_isotropic() {
        return Err(Error::invalid("space increment oracle is implemented for isotropic kernels in d = 1"));
    }
    let g = |xi: f64| {
        let x = xi * xi;
        if x == 0.0 {
            return 0.0;
        }
        let one_minus_cos = 2.0 * (xi * lag / 2.0).sin().powi(2);
        4.0 * one_minus_cos * -(-t * x).exp_m1() / x * kernel.radial_density(xi)
    };
    // oscillatory part period by period, then the averaged tail
    let period = 2.0 * std::f64::consts::PI / lag;
    let chunks = (400.0f64).max((50.0 / (t.sqrt() * period)).ceil()) as usize;
    let cutoff = period * chunks as f64;
    let tol = Tolerance::rel(1e-10);
    let mut acc = quad::finite_singular(|x, _| g(x), 0.0, period, tol)?.value;
    for c in 1..chunks {
        acc += quad::integrate(g, period * c as f64, period * (c + 1) as f64, tol)?.value;
    }
    let tail = quad::half_line(
        |v| {
            let xi = cutoff + v;
            4.0 * kernel.radial_density(xi) / (xi * xi)
        },
        tol,
    )?;
    Ok(acc + tail.value)
}

fn radial_mu_integral<G: Fn(f64) -> f64>(kernel: &KernelSpec, g: G) -> Result<f64> {
    if !kernel.is_isotropic() {
        return Err(Error::invalid("increment oracle is implemented for isotropic kernels"));
    }
    kernel.require_integrable()?;
    let d = kernel.dim();
    let area = 2.0 * std::f64::consts::PI.powf(d as f64 / 2.0) / statrs::function::gamma::gamma(d as f64 / 2.0);
    let q = quad::half_line(
        |rho| if rho * rho == 0.0 { 0.0 } else { g(rho * rho) * kernel.radial_density(rho) * rho.powi(d as i32 - 1) },
        Tolerance::rel(1e-10),
    )?;
    Ok(area * q.value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    /// `max_{path, i} |Σ_n Δt Σ_z h^d Γ_grid(t - t_n, x - z) b_i(u(t_n, z))|`.
    pub max_abs: f64,
    /// `sup|b| · t`.
    pub bound: f64,
    pub paths: u64,
    pub pass: bool,
}

/// Relative slack of the drift bound.
pub const DRIFT_SLACK: f64 = 1e-6;

/// Maximum over paths of the drift convolution at `target`, computed by the
/// recursion `D^{n+1} = A(D^n + Δt b(u^n))`.
#[allow(clippy::too_many_arguments)]
pub fn check_drift_bound(
    model: &Model,
    kernel: &KernelSpec,
    grid: &GridSpec,
    target: &Probe,
    paths: u64,
    seed: u64,
    exec: Execution,
) -> Result<DriftReport> {
    if !model.elliptic() {
        return Err(Error::invalid("drift bound check needs a model carrying the ellipticity flag"));
    }
    let solver = Solver::new(model, kernel, grid)?;
    let tp = solver.resolve_probes(std::slice::from_ref(target))?[0];
    let (m, cells) = (model.m(), grid.cells());
    let dt = grid.dt();
    let maxima = par::map_indexed_with(
        paths as usize,
        exec,
        || (Workspace::default(), AdjointScratch::default()),
        |(ws, scratch), p| -> Result<f64> {
            let out = solver
                .solve(NoiseSource::Stream { master: seed, path: p as u64 }, &[], true, ws)
                .map_err(|e| e.on_path(p as u64))?;
            let traj = out.trajectory.expect("stored");
            let mut worst = 0.0f64;
            let mut point = vec![0.0; m];
            let mut acc = vec![0.0; cells];
            for i in 0..m {
                acc.iter_mut().for_each(|v| *v = 0.0);
                for n in 0..tp.step {
                    let u = &traj.states[n];
                    for z in 0..cells {
                        for l in 0..m {
                            point[l] = u[l * cells + z];
                        }
                        acc[z] += dt * model.drift(i).eval(&point);
                    }
                    solver.apply_semigroup(&mut acc, 1, scratch);
                }
                worst = worst.max(acc[tp.cell].abs());
            }
            Ok(worst)
        },
    );
    let mut max_abs = 0.0f64;
    for r in maxima {
        max_abs = max_abs.max(r?);
    }
    let bound = model.drift_sup() * target.t;
    Ok(DriftReport { max_abs, bound, paths, pass: max_abs <= bound * (1.0 + DRIFT_SLACK) })
}

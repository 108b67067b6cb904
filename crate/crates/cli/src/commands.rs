use crate::config::{ConfigError, ExperimentConfig, HolderConfig};
use anyhow::{Context, Result};
use serde::Serialize;
use shelab::density::{self, EnvelopeGates, HolderAxis};
use shelab::phi::{check_h1, check_h2, check_two_sided, compute_phi};
use shelab::{solver, DensityEstimate, EnsembleSpec, Execution, PhiProfile, Probe, Solver};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Whether every requested check held.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
}

impl Outcome {
    fn from_pass(pass: bool) -> Self {
        if pass {
            Outcome::Pass
        } else {
            Outcome::Fail
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct KernelOutput {
    kernel: shelab::KernelSpec,
    eta_threshold: f64,
    beta: f64,
    holder_exponents: (f64, f64),
    normalization_residual: Option<f64>,
    normalization_pass: bool,
    conditions: Vec<shelab::ConditionReport>,
    pass: bool,
}

pub fn kernel(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let k = &cfg.kernel;
    let mut conditions = vec![k.check_integrability()];
    for &eta in cfg.conditions.as_ref().map(|c| c.eta.as_slice()).unwrap_or_default() {
        conditions.push(k.check_h_eta(eta)?);
    }
    let (normalization_residual, normalization_pass) = match k.validate_normalization() {
        Ok(r) => (Some(r), true),
        Err(shelab::Error::Normalization { residual, .. }) => (Some(residual), false),
        Err(e) => return Err(e.into()),
    };
    let pass = normalization_pass && conditions.iter().all(|c| c.holds);
    write_json(
        &out.join("conditions.json"),
        &KernelOutput {
            kernel: k.clone(),
            eta_threshold: k.eta_threshold(),
            beta: k.beta(),
            holder_exponents: k.holder_exponents(),
            normalization_residual,
            normalization_pass,
            conditions,
            pass,
        },
    )?;
    Ok(Outcome::from_pass(pass))
}

pub fn phi(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let p = cfg.phi.as_ref().ok_or_else(|| ConfigError("missing `[phi]` section".into()))?;
    let profile = PhiProfile::compute(&cfg.kernel, &p.t_grid, p.method.into())?;
    let mut w = csv_writer(&out.join("phi_profile.csv"))?;
    w.write_record(["t", "phi"])?;
    for (t, v) in profile.t_grid.iter().zip(&profile.values) {
        w.write_record([t.to_string(), v.to_string()])?;
    }
    w.flush()?;

    let mut reports = vec![check_h1(&cfg.kernel)?];
    match (p.gamma1, p.gamma2) {
        (Some(g1), Some(g2)) => {
            let (a, b) = check_h2(&cfg.kernel, g1, g2)?;
            reports.extend([a, b]);
        }
        (None, None) => {}
        _ => return Err(ConfigError("`phi.gamma1` and `phi.gamma2` must be given together".into()).into()),
    }
    if let Some(eta) = p.eta {
        let t_final = p.t_final.unwrap_or(*p.t_grid.last().expect("non-empty"));
        let (a, b) = check_two_sided(&cfg.kernel, eta, t_final)?;
        reports.extend([a, b]);
    }
    let pass = profile.is_strictly_increasing() && reports.iter().all(|r| r.pass);
    write_json(&out.join("scaling.json"), &reports)?;
    let mut w = csv_writer(&out.join("scaling.csv"))?;
    w.write_record(["hypothesis", "fitted", "reference", "r_squared", "pass"])?;
    for r in &reports {
        w.write_record([
            r.hypothesis.label().to_string(),
            r.fitted_exponent.to_string(),
            r.reference_exponent.to_string(),
            r.r_squared.map(|v| v.to_string()).unwrap_or_default(),
            r.pass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(Outcome::from_pass(pass))
}

#[derive(Serialize)]
struct ProbeLine<'a> {
    path: u64,
    u: Vec<&'a [f64]>,
}

#[derive(Serialize)]
struct ProbeSummary {
    probe: Probe,
    mean: Vec<f64>,
    variance: Vec<f64>,
    phi: f64,
}

pub fn simulate(cfg: &ExperimentConfig, out: &Path, exec: Execution) -> Result<Outcome> {
    let s = cfg.simulate.as_ref().ok_or_else(|| ConfigError("missing `[simulate]` section".into()))?;
    let spec = EnsembleSpec {
        model: cfg.model()?.clone(),
        kernel: cfg.kernel.clone(),
        grid: cfg.grid()?.clone(),
        probes: s.probes.clone(),
        paths: s.paths,
        master_seed: cfg.master_seed,
    };
    let ens = spec.run(exec)?;
    let m = ens.m();
    let mut w = BufWriter::new(File::create(out.join("probes.jsonl"))?);
    for p in 0..ens.paths() {
        let u = (0..s.probes.len()).map(|k| &ens.probe_samples(k)[p * m..(p + 1) * m]).collect();
        serde_json::to_writer(&mut w, &ProbeLine { path: p as u64, u })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    let phi_ok = cfg.kernel.require_integrable().is_ok();
    let summary = s
        .probes
        .iter()
        .enumerate()
        .map(|(k, probe)| {
            let samples = ens.probe_samples(k);
            let (mean, variance) = (0..m)
                .map(|a| {
                    let (mu, var, _) = shelab::fit::mean_var(samples.iter().skip(a).step_by(m).copied());
                    (mu, var)
                })
                .unzip();
            let phi = if phi_ok { compute_phi(&cfg.kernel, probe.t)? } else { f64::NAN };
            Ok(ProbeSummary { probe: probe.clone(), mean, variance, phi })
        })
        .collect::<Result<Vec<_>>>()?;
    write_json(&out.join("summary.json"), &summary)?;
    Ok(Outcome::Pass)
}

#[derive(Serialize)]
struct VerifySummary {
    pass: bool,
    checks: BTreeMap<&'static str, bool>,
}

fn write_density_csv(path: &Path, estimates: &[DensityEstimate]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let m = estimates.first().map(|e| e.m).unwrap_or(1);
    let mut header = vec!["t".to_string()];
    header.extend((1..=m).map(|a| format!("y{a}")));
    header.extend(["p_hat".to_string(), "err".to_string()]);
    w.write_record(&header)?;
    for e in estimates {
        for i in 0..e.len() {
            let mut row = vec![e.probe.t.to_string()];
            row.extend(e.point(i).iter().map(|v| v.to_string()));
            row.push(e.values[i].to_string());
            row.push(e.bootstrap_sd[i].to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn verify(cfg: &ExperimentConfig, out: &Path, exec: Execution) -> Result<Outcome> {
    let v = cfg.verify.as_ref().ok_or_else(|| ConfigError("missing `[verify]` section".into()))?;
    let (model, grid, kernel) = (cfg.model()?, cfg.grid()?, &cfg.kernel);
    if v.times.is_empty() {
        return Err(shelab::Error::InsufficientData("verify needs a non-empty t-grid `verify.times`".into()).into());
    }
    let t_last = *v.times.last().expect("non-empty");
    let solver = Solver::new(model, kernel, grid)?;

    let mut probes: Vec<Probe> = v.times.iter().map(|&t| Probe::new(t, v.x0.clone())).collect();
    let reference = probes.len() - 1;
    let holder = v.holder.clone().unwrap_or(HolderConfig {
        time_lags: vec![],
        space_lags: vec![],
        p: 2,
        time_tolerance: 0.0,
        space_tolerance: 0.0,
    });
    let mut time_pairs = Vec::new();
    for &lag in &holder.time_lags {
        time_pairs.push((probes.len(), reference));
        probes.push(Probe::new(t_last - lag as f64 * grid.dt(), v.x0.clone()));
    }
    let mut space_pairs = Vec::new();
    for &lag in &holder.space_lags {
        let mut x = v.x0.clone();
        x[0] += lag as f64 * grid.spacing();
        space_pairs.push((reference, probes.len()));
        probes.push(Probe::new(t_last, x));
    }
    let spec = EnsembleSpec {
        model: model.clone(),
        kernel: kernel.clone(),
        grid: grid.clone(),
        probes,
        paths: v.paths,
        master_seed: cfg.master_seed,
    };
    let ens = spec.run_with(&solver, exec)?;
    let mut checks = BTreeMap::new();

    let estimates = (0..v.times.len())
        .map(|k| density::estimate_density(&ens, k, v.window(model.m()), exec))
        .collect::<shelab::Result<Vec<_>>>()?;
    write_density_csv(&out.join("density.csv"), &estimates)?;
    let phis = v.times.iter().map(|&t| compute_phi(kernel, t)).collect::<shelab::Result<Vec<_>>>()?;
    let mut gates = EnvelopeGates::for_dim(model.m());
    gates.c1_min = v.c1_min.unwrap_or(gates.c1_min);
    gates.c3_max = v.c3_max.unwrap_or(gates.c3_max);
    let envelope = density::check_envelope(&estimates, &phis, grid.t_final(), model.drift_bound(), gates)?;
    checks.insert("envelope", envelope.pass);
    write_json(&out.join("envelope.json"), &envelope)?;

    if v.holder.is_some() {
        let (beta_t, beta_x) = kernel.holder_exponents();
        let mut reports = Vec::new();
        if !time_pairs.is_empty() {
            let r =
                density::estimate_holder(&ens, &time_pairs, HolderAxis::Time, holder.p, beta_t, holder.time_tolerance)?;
            checks.insert("holder_time", r.pass);
            reports.push(r);
        }
        if !space_pairs.is_empty() {
            let r = density::estimate_holder(
                &ens,
                &space_pairs,
                HolderAxis::Space,
                holder.p,
                beta_x,
                holder.space_tolerance,
            )?;
            checks.insert("holder_space", r.pass);
            reports.push(r);
        }
        write_json(&out.join("holder.json"), &reports)?;
    }

    let ell = solver::check_ellipticity(model, v.ellipticity_samples, cfg.master_seed, exec)?;
    checks.insert("ellipticity", ell.pass);
    write_json(&out.join("ellipticity.json"), &ell)?;

    let target = Probe::new(t_last, v.x0.clone());
    if v.drift_paths > 0 {
        let d = density::check_drift_bound(model, kernel, grid, &target, v.drift_paths, cfg.master_seed, exec)?;
        checks.insert("drift", d.pass);
        write_json(&out.join("drift.json"), &d)?;
    }
    if let Some(mc) = &v.malliavin {
        let r = shelab::malliavin::check_derivative_scaling(
            model,
            kernel,
            grid,
            &target,
            &mc.deltas,
            mc.paths,
            cfg.master_seed,
            exec,
        )?;
        checks.insert("malliavin", r.pass);
        write_json(&out.join("malliavin.json"), &r)?;
    }
    let pass = checks.values().all(|p| *p);
    write_json(&out.join("verify.json"), &VerifySummary { pass, checks })?;
    Ok(Outcome::from_pass(pass))
}

//! Acceptance suite: one PASS/FAIL line per criterion, with the measured
//! quantities and the runtime against its budget.
//!
//! Run with `cargo test --release -p shelab-cli --test acceptance -- --nocapture`.

use rand::Rng;
use shelab::density::{self, EnvelopeGates, EvalWindow, HolderAxis};
use shelab::malliavin::{self, derivative_field, malliavin_matrix, perturbed_probe};
use shelab::noise::walsh_integral;
use shelab::phi::{check_h1, check_h2, compute_phi, compute_phi_with, phi_white_physical, PhiMethod};
use shelab::solver::check_ellipticity;
use shelab::{
    fit, CatalogFn, Domain, EnsembleSpec, Execution, GridSpec, KernelSpec, LatticeSpectrum, Model, NoiseSampler,
    Nonlinearity, Probe, Solver, StreamKey,
};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

const EXEC: Execution = Execution::Parallel;

type TestFn<'a> = (&'a str, &'a dyn Fn(&[f64]) -> f64);
fn report(id: u32, title: &str, pass: bool, detail: String, started: Instant, budget: Duration) {
    let elapsed = started.elapsed();
    let ok = pass && elapsed <= budget;
    println!(
        "{} criterion {id:>2} {title}: {detail} [{:.1} s / {} s]",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    assert!(ok, "criterion {id} failed: {detail}");
}

fn additive(m: usize) -> Model {
    Model::additive(m, 1.0)
}

#[test]
fn criterion_01_phi_exactness() {
    let start = Instant::now();
    let k = KernelSpec::white(1).unwrap();
    let mut closed = 0.0f64;
    let mut sides = 0.0f64;
    for j in 1..=10 {
        let t = 0.2 * j as f64;
        let exact = (t / std::f64::consts::PI).sqrt();
        closed = closed.max((compute_phi(&k, t).unwrap() - exact).abs() / exact);
        let fourier = compute_phi_with(&k, t, PhiMethod::Quadrature).unwrap();
        let physical = phi_white_physical(1, t).unwrap();
        sides = sides.max((fourier - physical).abs() / physical);
    }
    report(
        1,
        "Φ exactness",
        closed <= 1e-5 && sides <= 1e-6,
        format!("max rel err vs √(t/π) {closed:.2e} (≤ 1e-5), Fourier vs physical {sides:.2e} (≤ 1e-6)"),
        start,
        Duration::from_secs(1),
    );
}

#[test]
fn criterion_02_h1_exponents() {
    let start = Instant::now();
    let cases = [
        ("Riesz(1, 0.5)", KernelSpec::riesz(1, 0.5).unwrap(), 0.75),
        ("Bessel(1, 0.5)", KernelSpec::bessel(1, 0.5).unwrap(), 0.75),
        ("Fractional(0.75, 0.75)", KernelSpec::fractional(vec![0.75, 0.75]).unwrap(), 0.5),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, k, expected) in cases {
        let r = check_h1(&k).unwrap();
        let ok = (r.fitted_exponent - expected).abs() <= 0.02 && r.r_squared.unwrap() >= 0.999;
        pass &= ok;
        parts.push(format!(
            "{name} β̂ = {:.4} (ref {expected}, R² {:.5}){}",
            r.fitted_exponent,
            r.r_squared.unwrap(),
            if ok { "" } else { " ✗" }
        ));
    }
    report(2, "H1 exponents", pass, parts.join("; "), start, Duration::from_secs(10));
}

#[test]
fn criterion_03_h2_exponents() {
    let start = Instant::now();
    let cases = [
        ("Riesz(1, 0.5)", KernelSpec::riesz(1, 0.5).unwrap(), 0.25, 0.5),
        ("Fractional(0.75, 0.75)", KernelSpec::fractional(vec![0.75, 0.75]).unwrap(), 0.2, 0.3),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, k, g1, g2) in cases {
        let beta = k.beta();
        let (a, b) = check_h2(&k, g1, g2).unwrap();
        let ok =
            (a.fitted_exponent - (beta + g2 / 2.0)).abs() <= 0.02 && (b.fitted_exponent - (beta + g1)).abs() <= 0.02;
        pass &= ok;
        parts.push(format!(
            "{name} β̂1 = {:.4} (ref {}), β̂2 = {:.4} (ref {})",
            a.fitted_exponent,
            beta + g2 / 2.0,
            b.fitted_exponent,
            beta + g1
        ));
    }
    report(3, "H2 exponents", pass, parts.join("; "), start, Duration::from_secs(30));
}

#[test]
fn criterion_04_noise_isometry() {
    let start = Instant::now();
    let kernels = [
        KernelSpec::white(1).unwrap(),
        KernelSpec::riesz(1, 0.5).unwrap(),
        KernelSpec::fractional(vec![0.75, 0.75]).unwrap(),
    ];
    let replicas = 10_000usize;
    let mut pass = true;
    let mut parts = Vec::new();
    for k in &kernels {
        let d = k.dim();
        let grid = GridSpec::new(d, if d == 1 { 64 } else { 32 }, 12.0, 0.05, 4).unwrap();
        let spectrum = Arc::new(LatticeSpectrum::new(k, &grid).unwrap());
        let sampler = NoiseSampler::new(spectrum.clone());
        let bump = |x: &[f64]| (-x.iter().map(|v| v * v).sum::<f64>()).exp();
        let wave = |x: &[f64]| (1.5 * x[0]).cos() * (-0.25 * x.iter().map(|v| v * v).sum::<f64>()).exp();
        let tests: [TestFn; 2] = [("bump", &bump), ("wave", &wave)];
        for (name, g) in tests {
            let g_steps: Vec<Vec<f64>> = (0..grid.steps())
                .map(|n| (0..grid.cells()).map(|c| (1.0 + 0.5 * n as f64) * g(&grid.point(c))).collect())
                .collect();
            let expected: f64 = g_steps.iter().map(|gn| grid.dt() * spectrum.inner_product(gn, gn).unwrap()).sum();
            let samples: Vec<f64> = shelab::par::map_indexed(replicas, EXEC, |r| {
                let key = StreamKey::new(2024, Domain::Noise, r as u64);
                let incs: Vec<_> = (0..grid.steps()).map(|n| sampler.sample_increment(key, n, 1)).collect();
                walsh_integral(&g_steps, &incs).unwrap()
            });
            let (_, var, _) = fit::mean_var(samples.iter().copied());
            let se = var * (2.0 / (replicas as f64 - 1.0)).sqrt();
            let z = (var - expected) / se;
            pass &= z.abs() <= 4.0;
            parts.push(format!("{}/{name} z = {z:+.2}", k.family().name()));
        }
    }
    report(4, "noise isometry", pass, parts.join(", "), start, Duration::from_secs(60));
}

#[test]
fn criterion_05_additive_end_to_end() {
    let start = Instant::now();
    let kernel = KernelSpec::white(1).unwrap();
    let grid = GridSpec::new(1, 128, 15.0, 1.0 / 128.0, 128).unwrap();
    let times = [0.25, 0.5, 1.0];
    let spec = EnsembleSpec {
        model: additive(1),
        kernel: kernel.clone(),
        grid: grid.clone(),
        probes: times.iter().map(|&t| Probe::new(t, vec![0.0])).collect(),
        paths: 100_000,
        master_seed: 5,
    };
    let ens = spec.run(EXEC).unwrap();
    let phi_t = compute_phi(&kernel, 1.0).unwrap();
    let (_, var, _) = fit::mean_var(ens.probe_samples(2).iter().copied());
    let var_err = (var / phi_t - 1.0).abs();

    let estimates: Vec<_> =
        (0..3).map(|k| density::estimate_density(&ens, k, EvalWindow::for_dim(1), EXEC).unwrap()).collect();
    let last = &estimates[2];
    let mut worst_z = 0.0f64;
    for i in 0..last.len() {
        if last.admissible(i) {
            let y = last.point(i)[0];
            let exact = (-y * y / (2.0 * phi_t)).exp() / (2.0 * std::f64::consts::PI * phi_t).sqrt();
            worst_z = worst_z.max((last.values[i] - exact).abs() / last.bootstrap_sd[i]);
        }
    }
    let phis: Vec<f64> = times.iter().map(|&t| compute_phi(&kernel, t).unwrap()).collect();
    let env = density::check_envelope(&estimates, &phis, 1.0, 0.0, EnvelopeGates::for_dim(1)).unwrap();
    let c_ok = (1.5..=3.0).contains(&env.c2) && (1.5..=3.0).contains(&env.c5);
    report(
        5,
        "additive end-to-end",
        var_err <= 0.03 && worst_z <= 3.0 && c_ok,
        format!(
            "Var/Φ(T) - 1 = {:+.4} (|·| ≤ 0.03), max |p̂ - N(0,Φ)|/err = {worst_z:.2} (≤ 3), C2 = {:.3}, C5 = {:.3} (∈ [1.5, 3])",
            var / phi_t - 1.0,
            env.c2,
            env.c5
        ),
        start,
        Duration::from_secs(300),
    );
}

#[test]
fn criterion_06_malliavin_adjoint() {
    let start = Instant::now();
    let grid = GridSpec::new(1, 32, 15.0, 1.0 / 16.0, 16).unwrap();
    let kernel = KernelSpec::riesz(1, 0.5).unwrap();
    let solver = Solver::new(&Model::scalar_benchmark(), &kernel, &grid).unwrap();
    let traj = solver.solve_path(17, 0, &[], true).unwrap().trajectory.unwrap();
    let target = solver.resolve_probes(&[Probe::new(1.0, vec![0.0])]).unwrap()[0];
    let d = derivative_field(&solver, Some(&traj), target).unwrap();
    let scale = (0..target.step)
        .flat_map(|n| (0..grid.cells()).map(move |z| (n, z)))
        .map(|(n, z)| d.increment_sensitivity(n, z, 0, 0).abs())
        .fold(0.0, f64::max);
    let mut rng = StreamKey::new(99, Domain::Sampling, 0).rng();
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < 20 {
        let (n, z) = (rng.random_range(0..target.step), rng.random_range(0..grid.cells()));
        let rev = d.increment_sensitivity(n, z, 0, 0);
        if rev.abs() < 1e-3 * scale {
            continue;
        }
        let eps = 1e-6;
        let up = perturbed_probe(&solver, &traj.noise, target, 0, n, z, 0, eps).unwrap();
        let dn = perturbed_probe(&solver, &traj.noise, target, 0, n, z, 0, -eps).unwrap();
        worst = worst.max(((up - dn) / (2.0 * eps) - rev).abs() / rev.abs());
        checked += 1;
    }

    let grid = GridSpec::new(1, 128, 15.0, 1.0 / 128.0, 128).unwrap();
    let lin = Solver::new(&additive(1), &kernel, &grid).unwrap();
    let target = lin.resolve_probes(&[Probe::new(1.0, vec![0.0])]).unwrap()[0];
    let lin_traj = lin.solve_path(17, 0, &[], true).unwrap().trajectory.unwrap();
    let d = derivative_field(&lin, Some(&lin_traj), target).unwrap();
    let mm = malliavin_matrix(&d, lin.spectrum()).unwrap();
    let phi_grid = lin.spectrum().phi_grid(1.0);
    let gram_err = (mm.get(0, 0) / phi_grid - 1.0).abs();
    report(
        6,
        "Malliavin adjoint",
        worst <= 1e-4 && gram_err <= 0.02,
        format!("max rel FD mismatch {worst:.2e} over 20 points (≤ 1e-4), |M/Φ_grid - 1| = {gram_err:.2e} (≤ 0.02)"),
        start,
        Duration::from_secs(120),
    );
}

#[test]
fn criterion_07_derivative_scaling() {
    let start = Instant::now();
    let grid = GridSpec::new(1, 128, 15.0, 1.0 / 128.0, 128).unwrap();
    let t = 1.0;
    let deltas = [t / 16.0, t / 8.0, t / 4.0, t / 2.0];
    let r = malliavin::check_derivative_scaling(
        &Model::scalar_benchmark(),
        &KernelSpec::riesz(1, 0.5).unwrap(),
        &grid,
        &Probe::new(t, vec![0.0]),
        &deltas,
        1000,
        7,
        EXEC,
    )
    .unwrap();
    report(
        7,
        "derivative scaling",
        r.pass,
        format!(
            "ratios E‖D‖²_δ/Φ(δ) = {:?}, max/min = {:.3} (≤ 3)",
            r.ratios.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            r.spread
        ),
        start,
        Duration::from_secs(300),
    );
}

fn holder_fit(
    kernel: &KernelSpec,
    grid: &GridSpec,
    axis: HolderAxis,
    lags: &[usize],
    paths: u64,
    critical: f64,
    tol: f64,
) -> (density::HolderReport, f64) {
    let t = grid.t_final();
    let mut probes = vec![Probe::new(t, vec![0.0])];
    let mut lag_values = Vec::new();
    for &l in lags {
        match axis {
            HolderAxis::Time => {
                lag_values.push(l as f64 * grid.dt());
                probes.push(Probe::new(t - l as f64 * grid.dt(), vec![0.0]));
            }
            HolderAxis::Space => {
                lag_values.push(l as f64 * grid.spacing());
                probes.push(Probe::new(t, vec![l as f64 * grid.spacing()]));
            }
        }
    }
    let pairs: Vec<(usize, usize)> = (1..probes.len()).map(|i| (i, 0)).collect();
    let spec =
        EnsembleSpec { model: additive(1), kernel: kernel.clone(), grid: grid.clone(), probes, paths, master_seed: 8 };
    let ens = spec.run(EXEC).unwrap();
    let r = density::estimate_holder(&ens, &pairs, axis, 2, critical, tol).unwrap();
    let oracle: Vec<f64> = lag_values
        .iter()
        .map(|&l| match axis {
            HolderAxis::Time => density::increment_variance_time(kernel, t - l, l).unwrap(),
            HolderAxis::Space => density::increment_variance_space(kernel, t, l).unwrap(),
        })
        .collect();
    let oracle_exponent = fit::log_log(&lag_values, &oracle).unwrap().slope / 2.0;
    (r, oracle_exponent)
}

#[test]
fn criterion_08_holder_exponents() {
    let start = Instant::now();
    let white = KernelSpec::white(1).unwrap();
    let (crit_t, _) = white.holder_exponents();
    let grid_t = GridSpec::new(1, 512, 15.0, 1.0 / 128.0, 128).unwrap();
    let (rt, ot) = holder_fit(&white, &grid_t, HolderAxis::Time, &[1, 2, 3, 4, 6, 8, 12, 16], 20_000, crit_t, 0.03);

    let riesz = KernelSpec::riesz(1, 0.5).unwrap();
    let (_, crit_x) = riesz.holder_exponents();
    let grid_x = GridSpec::new(1, 1024, 15.0, 1.0 / 64.0, 64).unwrap();
    let (rx, ox) = holder_fit(&riesz, &grid_x, HolderAxis::Space, &[1, 2, 3, 4, 6, 8, 10], 5_000, crit_x, 0.05);
    let pass = rt.pass && rx.pass && (ot - crit_t).abs() <= 0.03 && (ox - crit_x).abs() <= 0.05;
    report(
        8,
        "Hölder exponents",
        pass,
        format!(
            "time γ̂ = {:.4} (oracle {ot:.4}, ref {crit_t} ± 0.03), space γ̂ = {:.4} (oracle {ox:.4}, ref {crit_x} ± 0.05)",
            rt.fitted_exponent, rx.fitted_exponent
        ),
        start,
        Duration::from_secs(300),
    );
}

fn envelope_run(model: &Model, paths: u64, seed: u64) -> shelab::EnvelopeReport {
    let kernel = KernelSpec::riesz(1, 0.5).unwrap();
    let grid = GridSpec::new(1, 128, 15.0, 1.0 / 128.0, 128).unwrap();
    let times = [0.25, 0.5, 1.0];
    let spec = EnsembleSpec {
        model: model.clone(),
        kernel: kernel.clone(),
        grid,
        probes: times.iter().map(|&t| Probe::new(t, vec![0.0])).collect(),
        paths,
        master_seed: seed,
    };
    let ens = spec.run(EXEC).unwrap();
    let m = model.m();
    let estimates: Vec<_> =
        (0..times.len()).map(|k| density::estimate_density(&ens, k, EvalWindow::for_dim(m), EXEC).unwrap()).collect();
    let phis: Vec<f64> = times.iter().map(|&t| compute_phi(&kernel, t).unwrap()).collect();
    density::check_envelope(&estimates, &phis, 1.0, model.drift_bound(), EnvelopeGates::for_dim(m)).unwrap()
}

#[test]
fn criterion_09_gaussian_envelope() {
    let start = Instant::now();
    let scalar = envelope_run(&Model::scalar_benchmark(), 100_000, 3);
    let system = envelope_run(&Model::system_benchmark(), 10_000, 4);
    let pass =
        scalar.pass && scalar.c1 >= 1e-3 && scalar.c3 <= 1e3 && scalar.c4 == 0.5 && system.pass && system.c1 >= 1e-4;
    report(
        9,
        "Gaussian envelope",
        pass,
        format!(
            "m=1: C1 {:.4} C2 {:.3} C3 {:.4} C4 {} C5 {:.3} on {} points; m=2: C1 {:.2e} C3 {:.4} C5 {:.3} on {} points",
            scalar.c1,
            scalar.c2,
            scalar.c3,
            scalar.c4,
            scalar.c5,
            scalar.admissible_points,
            system.c1,
            system.c3,
            system.c5,
            system.admissible_points
        ),
        start,
        Duration::from_secs(900),
    );
}

#[test]
fn criterion_10_ellipticity() {
    let start = Instant::now();
    let identity = check_ellipticity(&additive(2), 10_000, 1, EXEC).unwrap();
    let bench = check_ellipticity(&Model::scalar_benchmark(), 100_000, 2, EXEC).unwrap();
    let sine = Model::new(
        1,
        1,
        vec![CatalogFn::of_component(Nonlinearity::Sin, 0, 1, 1.0, 0.0)],
        vec![CatalogFn::constant(0.0, 1)],
        true,
    )
    .unwrap();
    let sine = check_ellipticity(&sine, 10_000, 3, EXEC).unwrap();
    let pass = identity.c1_hat == 1.0
        && identity.c2_hat == 1.0
        && (0.99..=1.01).contains(&bench.c1_hat)
        && (0.99 * 9.0..=1.01 * 9.0).contains(&bench.c2_hat)
        && !sine.pass;
    report(
        10,
        "ellipticity",
        pass,
        format!(
            "σ = I: ({}, {}); σ = 2 + sin: ({:.4}, {:.4}); σ = sin: C1 {:.3}, pass = {}",
            identity.c1_hat, identity.c2_hat, bench.c1_hat, bench.c2_hat, sine.c1_hat, sine.pass
        ),
        start,
        Duration::from_secs(10),
    );
}

fn payload_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "run_metadata.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn criterion_11_determinism() {
    let start = Instant::now();
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let tmp = tempfile::tempdir().unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, overrides) in [
        ("kernel_riesz", ""),
        ("phi_riesz", ""),
        ("simulate_additive", ""),
        ("verify_sine", ""),
        ("verify_nonlinear", "paths"),
    ] {
        let mut reference: Option<Vec<(String, Vec<u8>)>> = None;
        let mut config = root.join(format!("{name}.toml"));
        if overrides == "paths" {
            // desk-scale copy of the nonlinear verification
            let text = std::fs::read_to_string(&config)
                .unwrap()
                .replace("paths = 20000", "paths = 10000")
                .replace("paths = 200\n", "paths = 20\n");
            config = tmp.path().join(format!("{name}.toml"));
            std::fs::write(&config, text).unwrap();
        }
        let mut same = true;
        for workers in [1, 4, 8] {
            // same relative out_dir in separate working directories, so the
            // archived resolved config is comparable too
            let cwd = tmp.path().join(format!("{name}_{workers}"));
            std::fs::create_dir_all(&cwd).unwrap();
            let out = cwd.join("out");
            let status = Command::new(env!("CARGO_BIN_EXE_shelab"))
                .current_dir(&cwd)
                .arg("--config")
                .arg(&config)
                .arg("--out")
                .arg("out")
                .arg("--workers")
                .arg(workers.to_string())
                .output()
                .unwrap()
                .status;
            assert!(status.code().is_some_and(|c| c <= 1), "{name} exited with {status}");
            let files = payload_files(&out);
            match &reference {
                None => reference = Some(files),
                Some(r) => same &= *r == files,
            }
        }
        pass &= same;
        parts.push(format!("{name} {}", if same { "identical" } else { "DIFFERS" }));
    }
    report(11, "determinism across workers {1, 4, 8}", pass, parts.join(", "), start, Duration::from_secs(300));
}

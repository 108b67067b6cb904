//! Monte Carlo checks of the noise, solver and derivative invariants. All
//! comparisons are at four standard errors unless stated otherwise.

use rustfft::num_complex::Complex64;
use shelab::density::check_drift_bound;
use shelab::fft::Scratch;
use shelab::malliavin::{derivative_field, malliavin_matrix, AdjointScratch};
use shelab::phi::check_two_sided;
use shelab::solver::{check_moment_bound, NoiseSource, Workspace};
use shelab::{
    fit, CatalogFn, Domain, EnsembleSpec, Execution, GridSpec, KernelSpec, LatticeSpectrum, Model, NoiseSampler,
    Nonlinearity, Probe, Solver, StreamKey,
};
use std::sync::Arc;

const EXEC: Execution = Execution::Parallel;

fn sampler(kernel: &KernelSpec, grid: &GridSpec) -> NoiseSampler {
    NoiseSampler::new(Arc::new(LatticeSpectrum::new(kernel, grid).unwrap()))
}

/// Sample covariance of paired draws and its standard error.
fn cov_with_se(a: &[f64], b: &[f64]) -> (f64, f64) {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let prods: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).collect();
    let (mean, var, _) = fit::mean_var(prods.iter().copied());
    (mean, (var / n).sqrt())
}

#[test]
fn normalization_holds_for_catalog_kernels() {
    for k in [
        KernelSpec::white(1).unwrap(),
        KernelSpec::white(3).unwrap(),
        KernelSpec::riesz(1, 0.5).unwrap(),
        KernelSpec::riesz(2, 1.0).unwrap(),
        KernelSpec::bessel(1, 0.5).unwrap(),
        KernelSpec::bessel(2, 1.0).unwrap(),
        KernelSpec::fractional(vec![0.75, 0.75]).unwrap(),
    ] {
        let r = k.validate_normalization().unwrap();
        assert!(r < 1e-4, "{k:?}: {r}");
    }
}

#[test]
fn secant_slopes_are_bounded_below() {
    for (k, eta) in [
        (KernelSpec::white(1).unwrap(), 0.6),
        (KernelSpec::riesz(1, 0.5).unwrap(), 0.3),
        (KernelSpec::bessel(1, 0.5).unwrap(), 0.3),
        (KernelSpec::fractional(vec![0.75, 0.75]).unwrap(), 0.6),
    ] {
        let (lower, upper) = check_two_sided(&k, eta, 1.0).unwrap();
        assert!(lower.pass && lower.fitted_exponent > 0.0, "{k:?}: {lower:?}");
        assert!(upper.pass, "{k:?}: {upper:?}");
    }
}

#[test]
fn increments_are_stationary_with_lattice_covariance() {
    let k = KernelSpec::riesz(1, 0.5).unwrap();
    let g = GridSpec::new(1, 64, 15.0, 0.05, 1).unwrap();
    let s = sampler(&k, &g);
    let reps = 20_000;
    let fields: Vec<Vec<f64>> =
        (0..reps).map(|r| s.sample_increment(StreamKey::new(3, Domain::Noise, r), 0, 1).data().to_vec()).collect();
    let col = |c: usize| fields.iter().map(|f| f[c]).collect::<Vec<_>>();
    for (a, b, lag) in [(3usize, 5usize, 2i64), (40, 42, 2), (10, 17, 7), (50, 57, 7), (0, 1, 1)] {
        let (c, se) = cov_with_se(&col(a), &col(b));
        let exact = g.dt() * s.spectrum().lag_covariance(&[lag]);
        assert!((c - exact).abs() <= 4.0 * se, "cells {a},{b}: {c} vs {exact} ± {se}");
    }
}

#[test]
fn channels_and_steps_are_independent() {
    for k in [KernelSpec::white(1).unwrap(), KernelSpec::riesz(1, 0.5).unwrap()] {
        let g = GridSpec::new(1, 32, 15.0, 0.05, 2).unwrap();
        let s = sampler(&k, &g);
        let reps = 20_000;
        let mut x0 = Vec::new();
        let mut x1 = Vec::new();
        let mut next = Vec::new();
        for r in 0..reps {
            let key = StreamKey::new(5, Domain::Noise, r);
            let a = s.sample_increment(key, 0, 2);
            let b = s.sample_increment(key, 1, 2);
            x0.push(a.channel(0)[16]);
            x1.push(a.channel(1)[16]);
            next.push(b.channel(0)[16]);
        }
        let (c, se) = cov_with_se(&x0, &x1);
        assert!(c.abs() <= 4.0 * se, "cross-channel {c} ± {se}");
        let (c, se) = cov_with_se(&x0, &next);
        assert!(c.abs() <= 4.0 * se, "cross-step {c} ± {se}");
    }
}

#[test]
fn law_does_not_depend_on_position() {
    let spec = EnsembleSpec {
        model: Model::scalar_benchmark(),
        kernel: KernelSpec::riesz(1, 0.5).unwrap(),
        grid: GridSpec::new(1, 64, 15.0, 1.0 / 32.0, 32).unwrap(),
        probes: vec![Probe::new(1.0, vec![0.0]), Probe::new(1.0, vec![-5.625])],
        paths: 4000,
        master_seed: 21,
    };
    let ens = spec.run(EXEC).unwrap();
    let (ma, va, _) = fit::mean_var(ens.probe_samples(0).iter().copied());
    let (mb, vb, _) = fit::mean_var(ens.probe_samples(1).iter().copied());
    let n = ens.paths() as f64;
    // the two probes are 48 cells apart on a 64-cell torus, so nearly uncorrelated
    let se_mean = ((va + vb) / n).sqrt();
    assert!((ma - mb).abs() <= 4.0 * se_mean, "means {ma} vs {mb}");
    let fourth = |s: &[f64], m: f64| s.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    let se_var = ((fourth(ens.probe_samples(0), ma) - va * va + fourth(ens.probe_samples(1), mb) - vb * vb) / n).sqrt();
    assert!((va - vb).abs() <= 4.0 * se_var, "variances {va} vs {vb} ± {se_var}");
}

#[test]
fn mode_variances_match_the_stochastic_convolution() {
    let k = KernelSpec::riesz(1, 0.5).unwrap();
    let g = GridSpec::new(1, 32, 15.0, 1.0 / 16.0, 16).unwrap();
    let solver = Solver::new(&Model::additive(1, 1.0), &k, &g).unwrap();
    let spectrum = solver.spectrum().clone();
    let paths = 4000;
    let modes = [0usize, 1, 3, 10];
    let mut ws = Workspace::default();
    let mut scratch = Scratch::default();
    let mut acc = vec![Vec::with_capacity(paths); modes.len()];
    for p in 0..paths {
        let out = solver.solve(NoiseSource::Stream { master: 13, path: p as u64 }, &[], false, &mut ws).unwrap();
        let mut u: Vec<Complex64> = out.terminal.data().iter().map(|v| Complex64::new(*v, 0.0)).collect();
        spectrum.fft().forward(&mut u, &mut scratch);
        for (a, &m) in acc.iter_mut().zip(&modes) {
            a.push((u[m] / g.cells() as f64).norm_sqr());
        }
    }
    let t = g.t_final();
    for (a, &m) in acc.iter().zip(&modes) {
        let (w, x) = (spectrum.weights()[m], spectrum.xi_squared()[m]);
        let exact = if x == 0.0 { w * t } else { w * -(-t * x).exp_m1() / x };
        let (mean, var, _) = fit::mean_var(a.iter().copied());
        let se = (var / paths as f64).sqrt();
        assert!((mean - exact).abs() <= 4.0 * se, "mode {m}: {mean} vs {exact} ± {se}");
    }
}

#[test]
fn refinement_changes_variance_little() {
    let k = KernelSpec::riesz(1, 0.5).unwrap();
    let var_at = |n: usize, nt: usize| {
        let g = GridSpec::new(1, n, 15.0, 1.0 / nt as f64, nt).unwrap();
        LatticeSpectrum::new(&k, &g).unwrap().phi_grid(1.0)
    };
    let coarse = var_at(128, 64);
    let fine = var_at(256, 128);
    assert!((fine / coarse - 1.0).abs() < 0.02, "{coarse} vs {fine}");

    // Monte Carlo version at a desk-scale path count
    let run = |n: usize, nt: usize| {
        let spec = EnsembleSpec {
            model: Model::additive(1, 1.0),
            kernel: k.clone(),
            grid: GridSpec::new(1, n, 15.0, 1.0 / nt as f64, nt).unwrap(),
            probes: vec![Probe::new(1.0, vec![0.0])],
            paths: 20_000,
            master_seed: 4,
        };
        let e = spec.run(EXEC).unwrap();
        fit::mean_var(e.probe_samples(0).iter().copied()).1
    };
    let (a, b) = (run(64, 32), run(128, 64));
    // 2% change plus four standard errors of the difference
    let se = (2.0f64 / 20_000.0).sqrt() * (a * a + b * b).sqrt();
    assert!((a - b).abs() <= 0.02 * a + 4.0 * se, "{a} vs {b}");
}

#[test]
fn perturbations_grow_at_most_exponentially() {
    // v = u^δ - u driven by the same noise: the semigroup contracts L², so
    // E‖v(t)‖² ≤ ‖δ‖² exp((2 Lip(b) + Lip(σ)² f_L(0)) t)
    let k = KernelSpec::riesz(1, 0.5).unwrap();
    let g = GridSpec::new(1, 32, 15.0, 1.0 / 16.0, 16).unwrap();
    let model = Model::scalar_benchmark();
    let solver = Solver::new(&model, &k, &g).unwrap();
    let (ls, lb) = model.lipschitz();
    let rate = 2.0 * lb + ls * ls * solver.spectrum().total_mass();
    let delta = 1e-3;
    let paths = 200;
    let norms = shelab::par::map_indexed(paths, EXEC, |p| {
        let out = solver.solve_path(2, p as u64, &[], true).unwrap();
        let base = out.trajectory.unwrap();
        let reference = |n: usize| if n + 1 < g.steps() { &base.states[n + 1][..] } else { out.terminal.data() };
        let mut u = base.states[0].clone();
        u[16] += delta;
        let mut norms = Vec::with_capacity(g.steps());
        for n in 0..g.steps() {
            let field = shelab::SolutionField::from_data(&g, n, 1, u).unwrap();
            let x = shelab::NoiseIncrementField::from_data(&g, 1, base.noise[n].clone()).unwrap();
            u = solver.step(&field, &x).unwrap().data().to_vec();
            norms.push(u.iter().zip(reference(n)).map(|(a, b)| (a - b).powi(2)).sum::<f64>() * g.cell_volume());
        }
        norms
    });
    let initial = delta * delta * g.cell_volume();
    for n in 0..g.steps() {
        let mean = norms.iter().map(|v| v[n]).sum::<f64>() / paths as f64;
        let t = (n + 1) as f64 * g.dt();
        assert!(mean <= initial * (rate * t).exp(), "step {n}: {mean} vs {}", initial * (rate * t).exp());
    }
}

#[test]
fn malliavin_matrix_stays_away_from_zero() {
    let k = KernelSpec::riesz(1, 0.5).unwrap();
    let g = GridSpec::new(1, 64, 15.0, 1.0 / 32.0, 32).unwrap();
    let solver = Solver::new(&Model::scalar_benchmark(), &k, &g).unwrap();
    let target = solver.resolve_probes(&[Probe::new(1.0, vec![0.0])]).unwrap()[0];
    let phi_grid = solver.spectrum().phi_grid(1.0);
    let ratios = shelab::par::map_indexed(100, EXEC, |p| {
        let traj = solver.solve_path(31, p as u64, &[], true).unwrap().trajectory.unwrap();
        let d = derivative_field(&solver, Some(&traj), target).unwrap();
        malliavin_matrix(&d, solver.spectrum()).unwrap().get(0, 0) / phi_grid
    });
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    // σ ≥ 1 along every path, so M ≥ Φ_grid up to the drift's contribution
    assert!(lo > 0.1, "min M/Φ_grid = {lo}");
}

#[test]
fn additive_derivative_is_the_lattice_heat_kernel() {
    let k = KernelSpec::riesz(1, 0.5).unwrap();
    let g = GridSpec::new(1, 64, 15.0, 1.0 / 32.0, 32).unwrap();
    let solver = Solver::new(&Model::additive(1, 1.0), &k, &g).unwrap();
    let target = solver.resolve_probes(&[Probe::new(1.0, vec![0.0])]).unwrap()[0];
    let traj = solver.solve_path(3, 0, &[], true).unwrap().trajectory.unwrap();
    let d = derivative_field(&solver, Some(&traj), target).unwrap();
    let mut s = AdjointScratch::default();
    // additive noise: h^d D_{n,z} u = A^{N-n-1} G δ_x, with G the one-step noise gain
    for n in [0usize, 16, 30, 31] {
        let mut kernel = vec![0.0; g.cells()];
        kernel[target.cell] = 1.0;
        solver.apply_semigroup(&mut kernel, target.step - n - 1, &mut s);
        let mut hat: Vec<Complex64> = kernel.iter().map(|v| Complex64::new(*v, 0.0)).collect();
        let mut fs = Scratch::default();
        solver.spectrum().fft().forward(&mut hat, &mut fs);
        hat.iter_mut().zip(solver.noise_symbol()).for_each(|(h, g)| *h *= g);
        solver.spectrum().fft().inverse(&mut hat, &mut fs);
        let kernel: Vec<f64> = hat.iter().map(|h| h.re / g.cells() as f64).collect();
        let peak = kernel.iter().copied().fold(0.0, f64::max);
        for (z, k) in kernel.iter().enumerate() {
            let v = d.increment_sensitivity(n, z, 0, 0);
            assert!((v - k).abs() <= 1e-12 * peak, "n {n} z {z}: {v} vs {k}");
        }
    }
}

#[test]
fn moments_are_finite_and_stable_under_refinement() {
    let k = KernelSpec::riesz(1, 0.5).unwrap();
    let model = Model::scalar_benchmark();
    let probes = [Probe::new(1.0, vec![0.0])];
    for p in [2u32, 4, 6] {
        let coarse = check_moment_bound(
            &model,
            &k,
            &GridSpec::new(1, 32, 15.0, 1.0 / 16.0, 16).unwrap(),
            &probes,
            p,
            4000,
            6,
            EXEC,
        )
        .unwrap();
        let fine = check_moment_bound(
            &model,
            &k,
            &GridSpec::new(1, 64, 15.0, 1.0 / 32.0, 32).unwrap(),
            &probes,
            p,
            4000,
            6,
            EXEC,
        )
        .unwrap();
        assert!(coarse.is_finite() && fine.is_finite());
        assert!((fine / coarse - 1.0).abs() < 0.25, "p = {p}: {coarse} vs {fine}");
    }
}

#[test]
fn drift_convolution_respects_sup_bound() {
    let k = KernelSpec::riesz(1, 0.5).unwrap();
    let g = GridSpec::new(1, 64, 15.0, 1.0 / 32.0, 32).unwrap();
    let r = check_drift_bound(&Model::scalar_benchmark(), &k, &g, &Probe::new(1.0, vec![0.0]), 1000, 12, EXEC).unwrap();
    assert!(r.pass && r.bound == 0.5, "{r:?}");
    assert!(r.max_abs > 0.0);

    let zero_drift = Model::new(
        1,
        1,
        vec![CatalogFn::of_component(Nonlinearity::Sin, 0, 1, 1.0, 2.0)],
        vec![CatalogFn::constant(0.0, 1)],
        true,
    )
    .unwrap();
    let r = check_drift_bound(&zero_drift, &k, &g, &Probe::new(1.0, vec![0.0]), 10, 12, EXEC).unwrap();
    assert_eq!(r.max_abs, 0.0);
}

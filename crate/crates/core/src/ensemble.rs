//! Monte Carlo ensembles of independent paths.

use crate::covariance::KernelSpec;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::model::Model;
use crate::par::{self, Execution};
use crate::solver::{NoiseSource, Probe, Solver, Workspace};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub model: Model,
    pub kernel: KernelSpec,
    pub grid: GridSpec,
    pub probes: Vec<Probe>,
    pub paths: u64,
    pub master_seed: u64,
}

/// Probe samples of every path, in path order.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub spec: EnsembleSpec,
    /// `samples[k]` holds `paths × m` values of probe `k`.
    samples: Vec<Vec<f64>>,
}

impl EnsembleSpec {
    /// Simulates `paths` paths, path `p` drawing from the streams of
    /// `(master_seed, p)`. Output is identical for every worker count.
    pub fn run(&self, exec: Execution) -> Result<Ensemble> {
        let solver = Solver::new(&self.model, &self.kernel, &self.grid)?;
        self.run_with(&solver, exec)
    }

    pub fn run_with(&self, solver: &Solver, exec: Execution) -> Result<Ensemble> {
        let probes = solver.resolve_probes(&self.probes)?;
        let m = self.model.m();
        let n = usize::try_from(self.paths).map_err(|_| Error::invalid("path count overflows usize"))?;
        let per_path = par::map_indexed_with(n, exec, Workspace::default, |ws, p| {
            solver
                .solve(NoiseSource::Stream { master: self.master_seed, path: p as u64 }, &probes, false, ws)
                .map(|o| o.probes)
                .map_err(|e| e.on_path(p as u64))
        });
        let mut samples = vec![Vec::with_capacity(n * m); probes.len()];
        for r in per_path {
            let v = r?;
            for (k, s) in samples.iter_mut().enumerate() {
                s.extend_from_slice(&v[k * m..(k + 1) * m]);
            }
        }
        Ok(Ensemble { spec: self.clone(), samples })
    }
}

impl Ensemble {
    /// Builds an ensemble from externally produced samples.
    pub fn from_samples(spec: EnsembleSpec, samples: Vec<Vec<f64>>) -> Result<Self> {
        let m = spec.model.m();
        if samples.len() != spec.probes.len() || samples.iter().any(|s| s.len() != spec.paths as usize * m) {
            return Err(Error::ShapeMismatch("samples do not match probes × paths × m".into()));
        }
        Ok(Self { spec, samples })
    }

    pub fn m(&self) -> usize {
        self.spec.model.m()
    }

    pub fn paths(&self) -> usize {
        self.spec.paths as usize
    }

    pub fn probe_samples(&self, k: usize) -> &[f64] {
        &self.samples[k]
    }

    pub fn probes(&self) -> &[Probe] {
        &self.spec.probes
    }
}

//! Numerical laboratory for systems of non-linear stochastic heat equations
//!
//! ```text
//!     ∂u_i/∂t = ½Δu_i + b_i(u) + Σ_j σ_ij(u) Ẇ^j,    u(0, ·) = 0,
//! ```
//!
//! driven by Gaussian noise that is white in time and spatially homogeneous
//! with covariance `f` (spectral measure `μ`). The crate covers:
//!
//! * [`covariance`]: the white, Riesz, Bessel and fractional kernel families,
//!   their spectral densities and the integrability hypotheses;
//! * [`phi`]: the variance functional `Φ(t) = ∫₀ᵗ∫ e^{-r|ξ|²} μ(dξ) dr` and
//!   the scaling exponents attached to it;
//! * [`noise`]: band-limited synthesis of the noise increments on a periodic
//!   lattice, the discrete covariance inner product and Walsh integral;
//! * [`solver`]: an exponential-Euler spectral integrator of the mild form;
//! * [`malliavin`]: reverse-mode Malliavin derivatives and Malliavin matrices;
//! * [`density`]: Monte Carlo ensembles, kernel density estimates and the
//!   Gaussian envelope, Hölder and drift checks.
//!
//! Monte Carlo loops run on rayon when the `parallel` feature is enabled
//! (the default); see [`par`].

// `!(x > 0.0)` deliberately rejects NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod covariance;
pub mod density;
pub mod ensemble;
pub mod error;
pub mod fft;
pub mod fit;
pub mod grid;
pub mod malliavin;
pub mod model;
pub mod noise;
pub mod par;
pub mod phi;
pub mod quad;
pub mod rng;
pub mod solver;

pub use covariance::{ConditionKind, ConditionReport, Family, KernelSpec};
pub use density::{DensityEstimate, EnvelopeReport};
pub use ensemble::{Ensemble, EnsembleSpec};
pub use error::{Error, Result};
pub use grid::GridSpec;
pub use malliavin::{DerivativeField, MalliavinMatrix};
pub use model::{CatalogFn, Model, Nonlinearity};
pub use noise::{LatticeSpectrum, NoiseIncrementField, NoiseSampler};
pub use par::Execution;
pub use phi::{Hypothesis, PhiMethod, PhiProfile, ScalingReport};
pub use rng::{Domain, StreamKey};
pub use solver::{Probe, SolutionField, Solver};

//! Optimal Gauss-Poisson population codes for state estimation versus
//! closed-loop LQG control.
//!
//! The crate is organised bottom-up:
//!
//! * [`dynamics`]: linear SDEs, preset systems and Euler-Maruyama simulation.
//! * [`riccati`]: backward Riccati solution, LQR gains and full-information cost-to-go.
//! * [`kalman`]: Kalman-Bucy covariance, LQG cost-to-go and the constant-determinant
//!   diffusion-observation baseline.
//! * [`codec`]: dense Gaussian-tuned Poisson populations and the point-process filter.
//! * [`belief`]: expected future posterior covariance (Monte Carlo and mean-field),
//!   the uncertainty penalty and the Poisson-coded cost-to-go.
//! * [`mutual_info`]: state/observation mutual information for both channels.
//! * [`sweep`]: encoder-parameter sweeps comparing estimation and control optima.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod belief;
pub mod codec;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod kalman;
pub mod linalg;
pub mod mutual_info;
pub mod riccati;
pub mod seeding;
pub mod sweep;

mod ode;

pub use belief::{
    control_penalty_f, mc_expected_covariance, meanfield_equilibrium, meanfield_expected_covariance,
    poisson_cost_to_go, CovarianceEnsemble, CovarianceMethod, Episode, PenaltyMethod,
};
pub use codec::{GaussianBelief, PoissonCodec, SpikeTrain};
pub use dynamics::{ControlLaw, LinearSystem, NoiseConvention, StateTrajectory};
pub use error::{Error, Result};
pub use grid::{CovariancePath, TimeGrid};
pub use kalman::{DiffusionObservation, KalmanBelief};

pub use mutual_info::PriorSpec;
pub use riccati::{QuadraticCost, RiccatiPath};
pub use sweep::{SweepConfig, SweepResult, SweepSummary};

pub use nalgebra::{DMatrix, DVector};

/// A Monte-Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_err: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, std_err: 0.0 }
    }

    /// Mean and standard error of the mean of `samples`.
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        if samples.is_empty() {
            return Self { value: f64::NAN, std_err: f64::NAN };
        }
        let mean = samples.iter().sum::<f64>() / n;
        if samples.len() < 2 {
            return Self { value: mean, std_err: 0.0 };
        }
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Self { value: mean, std_err: (var / n).sqrt() }
    }
}

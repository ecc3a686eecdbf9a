//! Mutual information between the state and the observation history, as
//! half the log-determinant ratio of prior and posterior covariances.

use nalgebra::{DMatrix, DVector};

use crate::codec::{CovarianceSimulator, PoissonCodec};
use crate::dynamics::LinearSystem;
use crate::error::{invalid, Error, Result};
use crate::grid::{CovariancePath, TimeGrid};
use crate::kalman::{propagate_on, DiffusionObservation};
use crate::linalg::{check_psd, log_det_spd};
use crate::ode::rk4_symmetric;
use crate::seeding::{block_reduce, stream_rng};
use crate::Estimate;

/// Gaussian prior on the state at time 0.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorSpec {
    pub mu0: DVector<f64>,
    pub sigma0: DMatrix<f64>,
}

impl PriorSpec {
    pub fn new(mu0: DVector<f64>, sigma0: DMatrix<f64>) -> Result<Self> {
        if sigma0.nrows() != mu0.len() || !sigma0.is_square() {
            return Err(Error::Shape("prior mean and covariance disagree".into()));
        }
        check_psd(&sigma0, "Sigma0")?;
        Ok(Self { mu0, sigma0 })
    }

    pub fn centered(sigma0: DMatrix<f64>) -> Result<Self> {
        Self::new(DVector::zeros(sigma0.nrows()), sigma0)
    }

    fn check(&self, sys: &LinearSystem) -> Result<()> {
        if self.sigma0.nrows() != sys.dim_x() {
            return Err(Error::Shape("prior does not match the state dimension".into()));
        }
        Ok(())
    }
}

/// Covariance of the unobserved process, `dΣ/dt = AΣ + ΣAᵀ + D` from `Σ₀`.
pub fn prior_covariance(sys: &LinearSystem, prior: &PriorSpec, dt: f64, horizon: f64) -> Result<CovariancePath> {
    prior.check(sys)?;
    let grid = TimeGrid::new(horizon, dt)?;
    let values = rk4_symmetric("prior covariance", prior.sigma0.clone(), &grid, false, true, |s| sys.lyapunov_rhs(s))?;
    Ok(CovariancePath::new(grid, values))
}

fn check_time(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(invalid(format!("mutual information needs t > 0, got {t}")));
    }
    Ok(())
}

/// Mutual information (nats) between `X_t` and the diffusion observations on
/// `[0, t]`.
pub fn mi_kalman(sys: &LinearSystem, obs: &DiffusionObservation, prior: &PriorSpec, t: f64, dt: f64) -> Result<f64> {
    Ok(mi_kalman_at(sys, obs, prior, &[t], dt)?[0])
}

/// [`mi_kalman`] at several times sharing one integration.
pub fn mi_kalman_at(
    sys: &LinearSystem,
    obs: &DiffusionObservation,
    prior: &PriorSpec,
    times: &[f64],
    dt: f64,
) -> Result<Vec<f64>> {
    prior.check(sys)?;
    let horizon = times.iter().copied().fold(0.0, f64::max);
    for &t in times {
        check_time(t)?;
    }
    let grid = TimeGrid::new(horizon, dt)?;
    let unobserved =
        rk4_symmetric("prior covariance", prior.sigma0.clone(), &grid, false, true, |s| sys.lyapunov_rhs(s))?;
    let observed = propagate_on(sys, obs, &prior.sigma0, &grid)?;
    times
        .iter()
        .map(|&t| {
            let k = grid.index_of(t)?;
            Ok(0.5
                * (log_det_spd(&unobserved[k], "prior covariance")?
                    - log_det_spd(&observed.values[k], "Kalman covariance")?))
        })
        .collect()
}

/// Monte-Carlo mutual information (nats) between `X_t` and the spike history
/// on `[0, t]`, averaging `log|Σ_t|` over spike-count realisations.
pub fn mi_poisson(
    sys: &LinearSystem,
    codec: &PoissonCodec,
    prior: &PriorSpec,
    t: f64,
    dt: f64,
    n_samples: usize,
    seed: u64,
) -> Result<Estimate> {
    Ok(mi_poisson_at(sys, codec, prior, &[t], dt, n_samples, seed)?[0])
}

/// [`mi_poisson`] at several times from the same sample paths.
pub fn mi_poisson_at(
    sys: &LinearSystem,
    codec: &PoissonCodec,
    prior: &PriorSpec,
    times: &[f64],
    dt: f64,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<Estimate>> {
    prior.check(sys)?;
    if n_samples == 0 {
        return Err(invalid("mutual information needs at least one sample"));
    }
    for &t in times {
        check_time(t)?;
    }
    let horizon = times.iter().copied().fold(0.0, f64::max);
    let grid = TimeGrid::new(horizon, dt)?;
    let indices: Vec<usize> = times.iter().map(|&t| grid.index_of(t)).collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by_key(|&i| indices[i]);
    codec.warn_if_coarse(dt);

    // The unobserved path uses the same explicit stepper as the samples so
    // that a silent code cancels exactly.
    let mut reference = vec![0.0; times.len()];
    {
        let mut sigma = prior.sigma0.clone();
        let mut work = DMatrix::zeros(sys.dim_x(), sys.dim_x());
        let mut next = 0;
        for k in 0..=grid.steps() {
            if k > 0 {
                sys.covariance_drift(&mut sigma, &mut work, dt);
            }
            while next < order.len() && indices[order[next]] == k {
                reference[order[next]] = log_det_spd(&sigma, "prior covariance")?;
                next += 1;
            }
        }
    }

    let samples = block_reduce(
        n_samples,
        |range| {
            let mut sim = CovarianceSimulator::new(sys, codec)?;
            let mut out = Vec::with_capacity(range.len());
            for i in range {
                let mut rng = stream_rng(seed, i as u64);
                let mut clock = sim.clock(grid.start(), &mut rng);
                let mut sigma = prior.sigma0.clone();
                let mut logdets = vec![0.0; times.len()];
                let mut next = 0;
                for k in 0..=grid.steps() {
                    if k > 0 {
                        sim.step(&mut sigma, &mut clock, grid.time(k), dt, &mut rng)?;
                    }
                    while next < order.len() && indices[order[next]] == k {
                        logdets[order[next]] = log_det_spd(&sigma, "posterior covariance")?;
                        next += 1;
                    }
                }
                out.push(logdets);
            }
            Ok::<_, Error>(out)
        },
        |acc, part| acc.extend(part),
    )?
    .expect("n_samples > 0");

    Ok((0..times.len())
        .map(|j| {
            let terms: Vec<f64> = samples.iter().map(|s| 0.5 * (reference[j] - s[j])).collect();
            Estimate::from_samples(&terms)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::make_ou;
    use crate::linalg::diag;
    use approx::assert_relative_eq;

    fn scalar_prior(v: f64) -> PriorSpec {
        PriorSpec::centered(diag(&[v])).unwrap()
    }

    #[test]
    fn frozen_system_keeps_prior() {
        let sys = LinearSystem::new(diag(&[0.0, 0.0]), diag(&[0.0, 0.0]), DMatrix::zeros(2, 2)).unwrap();
        let prior = PriorSpec::centered(diag(&[2.0, 0.5])).unwrap();
        let path = prior_covariance(&sys, &prior, 1e-2, 1.0).unwrap();
        assert_eq!(path.last(), &prior.sigma0);
    }

    #[test]
    fn ou_prior_from_zero_closed_form() {
        let sys = make_ou(1.5, 0.6, 1.0).unwrap();
        let path = prior_covariance(&sys, &scalar_prior(0.0), 1e-3, 2.0).unwrap();
        let exact = 0.6 / 3.0 * (1.0 - (-6.0f64).exp());
        assert_relative_eq!(path.last()[(0, 0)], exact, max_relative = 1e-10);
    }

    #[test]
    fn uninformative_channels_give_zero() {
        let sys = make_ou(1.0, 0.6, 0.2).unwrap();
        let obs = DiffusionObservation::new(diag(&[0.0]), diag(&[1.0])).unwrap();
        assert_eq!(mi_kalman(&sys, &obs, &scalar_prior(3.0), 2.0, 1e-3).unwrap(), 0.0);
        let codec = PoissonCodec::new(diag(&[1.0]), 0.0, 0.05, 4.0).unwrap();
        let mi = mi_poisson(&sys, &codec, &scalar_prior(3.0), 2.0, 1e-3, 4, 1).unwrap();
        assert_eq!((mi.value, mi.std_err), (0.0, 0.0));
    }

    #[test]
    fn sharper_channel_informs_more() {
        let sys = make_ou(1.0, 0.6, 0.2).unwrap();
        let prior = scalar_prior(1.0);
        let wide = DiffusionObservation::new(diag(&[1.0]), diag(&[1.0])).unwrap();
        let sharp = DiffusionObservation::new(diag(&[1.0]), diag(&[0.25])).unwrap();
        let a = mi_kalman(&sys, &wide, &prior, 1.0, 1e-3).unwrap();
        let b = mi_kalman(&sys, &sharp, &prior, 1.0, 1e-3).unwrap();
        assert!(b > a && a > 0.0);
    }

    #[test]
    fn rejects_nonpositive_time() {
        let sys = make_ou(1.0, 0.6, 0.2).unwrap();
        let obs = DiffusionObservation::new(diag(&[1.0]), diag(&[1.0])).unwrap();
        assert!(mi_kalman(&sys, &obs, &scalar_prior(1.0), 0.0, 1e-3).is_err());
    }
}

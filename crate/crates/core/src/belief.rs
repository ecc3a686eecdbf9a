//! Expected future posterior covariance, the uncertainty penalty
//! `f(Σ, t) = ∫_t^T Tr(S_s B R⁺ Bᵀ S_s E[Σ_s | Σ_t = Σ]) ds` and the
//! Poisson-coded cost-to-go, plus closed-loop certainty-equivalence episodes.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{covariance_jump, filter_step, CovarianceSimulator, GaussianBelief, PoissonCodec, SpikeClock};
use crate::dynamics::LinearSystem;
use crate::error::{invalid, Error, Result};
use crate::grid::{trapezoid_weight, CovariancePath, TimeGrid};
use crate::linalg::{check_psd, psd_sqrt, quad_form, trace_product};
use crate::ode::rk4_symmetric;
use crate::riccati::{lqr_gain, weighted_trace_integral, QuadraticCost, RiccatiPath};
use crate::seeding::{block_reduce, stream_rng};
use crate::Estimate;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceMethod {
    #[default]
    Mc,
    Meanfield,
}

impl std::fmt::Display for CovarianceMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CovarianceMethod::Mc => "mc",
            CovarianceMethod::Meanfield => "meanfield",
        })
    }
}

impl std::str::FromStr for CovarianceMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mc" => Ok(Self::Mc),
            "meanfield" => Ok(Self::Meanfield),
            other => Err(invalid(format!("unknown method `{other}` (expected mc or meanfield)"))),
        }
    }
}

/// How `E[Σ_s | Σ_t]` is obtained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PenaltyMethod {
    Meanfield,
    MonteCarlo { n_samples: usize, seed: u64 },
}

/// Sample mean of the posterior covariance path.
#[derive(Clone, Debug)]
pub struct CovarianceEnsemble {
    pub mean: CovariancePath,
    /// Entrywise standard error of the mean.
    pub std_err: Vec<DMatrix<f64>>,
    pub n_samples: usize,
}

/// Running mean and sum of squared deviations (Welford / Chan).
struct SampleStats {
    count: f64,
    mean: Vec<DMatrix<f64>>,
    m2: Vec<DMatrix<f64>>,
    penalties: Vec<f64>,
}

impl SampleStats {
    fn push(&mut self, k: usize, sigma: &DMatrix<f64>) {
        let n = self.count + 1.0;
        let delta = sigma - &self.mean[k];
        self.mean[k] += &delta / n;
        let after = sigma - &self.mean[k];
        self.m2[k] += delta.component_mul(&after);
    }

    fn merge(&mut self, other: SampleStats) {
        let (na, nb) = (self.count, other.count);
        let n = na + nb;
        if nb > 0.0 {
            for ((ma, m2a), (mb, m2b)) in
                self.mean.iter_mut().zip(self.m2.iter_mut()).zip(other.mean.into_iter().zip(other.m2))
            {
                let delta = mb - &*ma;
                *m2a += m2b + delta.component_mul(&delta) * (na * nb / n);
                *ma += delta * (nb / n);
            }
        }
        self.count = n;
        self.penalties.extend(other.penalties);
    }
}

/// Simulates `n_samples` covariance paths on `grid` from `sigma0`. With
/// `weights`, also integrates `Tr(W_j Σ_j)` per sample.
#[allow(clippy::too_many_arguments)]
fn simulate_covariances(
    sigma0: &DMatrix<f64>,
    codec: &PoissonCodec,
    sys: &LinearSystem,
    grid: &TimeGrid,
    n_samples: usize,
    seed: u64,
    weights: Option<&[DMatrix<f64>]>,
    keep_paths: bool,
) -> Result<SampleStats> {
    check_psd(sigma0, "Sigma0")?;
    codec.warn_if_coarse(grid.dt());
    if n_samples == 0 {
        return Err(invalid("Monte-Carlo averaging needs at least one sample"));
    }
    let n = sys.dim_x();
    let len = if keep_paths { grid.len() } else { 0 };
    let points = grid.len();
    let dt = grid.dt();
    let stats = block_reduce(
        n_samples,
        |range| {
            let mut sim = CovarianceSimulator::new(sys, codec)?;
            let mut stats = SampleStats {
                count: 0.0,
                mean: vec![DMatrix::zeros(n, n); len],
                m2: vec![DMatrix::zeros(n, n); len],
                penalties: Vec::with_capacity(range.len()),
            };
            for i in range {
                let mut rng = stream_rng(seed, i as u64);
                let mut clock = sim.clock(grid.start(), &mut rng);
                let mut sigma = sigma0.clone();
                let mut penalty = 0.0;
                for k in 0..points {
                    if k > 0 {
                        sim.step(&mut sigma, &mut clock, grid.time(k), dt, &mut rng)?;
                    }
                    if keep_paths {
                        stats.push(k, &sigma);
                    }
                    if let Some(w) = weights {
                        penalty += trapezoid_weight(k, points) * trace_product(&w[k], &sigma);
                    }
                }
                stats.penalties.push(penalty * dt);
                stats.count += 1.0;
            }
            Ok::<_, Error>(stats)
        },
        |acc, part| acc.merge(part),
    )?
    .expect("n_samples > 0");
    Ok(stats)
}

/// Monte-Carlo estimate of `E[Σ_s | Σ_0 = sigma0]` on `[0, horizon]`: the
/// covariance jumps at the events of a rate-`λ̂` Poisson process.
pub fn mc_expected_covariance(
    sigma0: &DMatrix<f64>,
    codec: &PoissonCodec,
    sys: &LinearSystem,
    dt: f64,
    horizon: f64,
    n_samples: usize,
    seed: u64,
) -> Result<CovarianceEnsemble> {
    let grid = TimeGrid::new(horizon, dt)?;
    let stats = simulate_covariances(sigma0, codec, sys, &grid, n_samples, seed, None, true)?;
    let m = n_samples as f64;
    let std_err = stats
        .m2
        .iter()
        .map(|m2| if n_samples < 2 { m2 * 0.0 } else { m2.map(|v| (v.max(0.0) / (m - 1.0) / m).sqrt()) })
        .collect();
    Ok(CovarianceEnsemble { mean: CovariancePath::new(grid, stats.mean), std_err, n_samples })
}

/// Mean-field right-hand side
/// `AΣ + ΣAᵀ + D - λ̂ Σ P† Σ (I + P†Σ)⁻¹`.
fn meanfield_rhs(sys: &LinearSystem, codec: &PoissonCodec, rate: f64, sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let lyap = sys.lyapunov_rhs(sigma);
    if rate == 0.0 {
        return lyap;
    }
    lyap - (sigma - covariance_jump(sigma, codec.p_dagger())) * rate
}

/// RK4 solution of the mean-field equation for `⟨Σ_s⟩`.
pub fn meanfield_expected_covariance(
    sigma0: &DMatrix<f64>,
    codec: &PoissonCodec,
    sys: &LinearSystem,
    dt: f64,
    horizon: f64,
) -> Result<CovariancePath> {
    meanfield_on(sigma0, codec, sys, &TimeGrid::new(horizon, dt)?)
}

fn meanfield_on(
    sigma0: &DMatrix<f64>,
    codec: &PoissonCodec,
    sys: &LinearSystem,
    grid: &TimeGrid,
) -> Result<CovariancePath> {
    codec.check_against(sys)?;
    check_psd(sigma0, "Sigma0")?;
    let rate = codec.population_rate();
    let values = rk4_symmetric("mean-field covariance", sigma0.clone(), grid, false, true, |s| {
        meanfield_rhs(sys, codec, rate, s)
    })?;
    Ok(CovariancePath::new(*grid, values))
}

/// Fixed point of the mean-field equation reached from the stationary prior
/// covariance, and its MMSE over the coded dimensions.
pub fn meanfield_equilibrium(codec: &PoissonCodec, sys: &LinearSystem, dt: f64) -> Result<(DMatrix<f64>, f64)> {
    const TOL: f64 = 1e-10;
    const MAX_TIME: f64 = 1e5;
    codec.check_against(sys)?;
    let rate = codec.population_rate();
    let chunk = TimeGrid::from_steps(0.0, dt, 1000);
    let mut sigma = sys.stationary_covariance()?;
    let mut elapsed = 0.0;
    while elapsed < MAX_TIME {
        if meanfield_rhs(sys, codec, rate, &sigma).amax() < TOL {
            let mmse = codec.coded_trace(&sigma);
            return Ok((sigma, mmse));
        }
        let values =
            rk4_symmetric("mean-field covariance", sigma, &chunk, false, true, |s| meanfield_rhs(sys, codec, rate, s))?;
        sigma = values.into_iter().last().expect("chunk is non-empty");
        elapsed += chunk.end();
    }
    Err(Error::Numerical("mean-field covariance did not reach equilibrium".into()))
}

/// Uncertainty penalty `f(Σ, t)` on the Riccati grid.
pub fn control_penalty_f(
    sigma: &DMatrix<f64>,
    t: f64,
    path: &RiccatiPath,
    codec: &PoissonCodec,
    sys: &LinearSystem,
    method: PenaltyMethod,
) -> Result<Estimate> {
    let k = path.index_of(t)?;
    let tail = path.grid.tail(k);
    match method {
        PenaltyMethod::Meanfield => {
            let mean = meanfield_on(sigma, codec, sys, &tail)?;
            Ok(Estimate::exact(weighted_trace_integral(path, k, &mean.values)))
        }
        PenaltyMethod::MonteCarlo { n_samples, seed } => {
            let weights = &path.uncertainty_weights()[k..];
            let stats = simulate_covariances(sigma, codec, sys, &tail, n_samples, seed, Some(weights), false)?;
            Ok(Estimate::from_samples(&stats.penalties))
        }
    }
}

/// Cost-to-go of the Poisson-observed problem under certainty equivalence:
/// `μᵀSμ + Tr(ΣS) + ∫Tr(DS) + f(Σ, t)`.
pub fn poisson_cost_to_go(
    belief: &GaussianBelief,
    path: &RiccatiPath,
    codec: &PoissonCodec,
    sys: &LinearSystem,
    method: PenaltyMethod,
) -> Result<Estimate> {
    let k = path.index_of(belief.t)?;
    let s = path.s(k);
    if belief.mu.len() != s.nrows() {
        return Err(Error::Shape("belief does not match the Riccati path".into()));
    }
    let f = control_penalty_f(&belief.sigma, belief.t, path, codec, sys, method)?;
    Ok(Estimate {
        value: quad_form(&belief.mu, s) + trace_product(&belief.sigma, s) + path.noise_tail(k) + f.value,
        std_err: f.std_err,
    })
}

/// One closed-loop episode: true state, spikes, point-process filter and the
/// certainty-equivalent controller `U = -R⁺BᵀS μ`.
#[derive(Clone, Debug)]
pub struct Episode {
    pub grid: TimeGrid,
    pub states: Vec<DVector<f64>>,
    pub beliefs: Vec<GaussianBelief>,
    pub controls: Vec<DVector<f64>>,
    /// Spikes in bin `[t_k, t_{k+1})`; the last entry is always zero.
    pub spike_counts: Vec<usize>,
    pub cost: f64,
}

impl Episode {
    pub fn total_spikes(&self) -> usize {
        self.spike_counts.iter().sum()
    }

    /// Fraction of (time, coordinate) pairs on `dims` where the true state lies
    /// within one posterior standard deviation of the mean.
    pub fn coverage(&self, dims: &[usize]) -> f64 {
        let mut hits = 0usize;
        let mut total = 0usize;
        for (x, b) in self.states.iter().zip(&self.beliefs) {
            for &i in dims {
                total += 1;
                if (x[i] - b.mu[i]).abs() <= b.sigma[(i, i)].max(0.0).sqrt() {
                    hits += 1;
                }
            }
        }
        hits as f64 / total.max(1) as f64
    }
}

/// Shared inputs of closed-loop episodes.
#[derive(Clone, Copy, Debug)]
pub struct EpisodeSetup<'a> {
    pub sys: &'a LinearSystem,
    pub cost: &'a QuadraticCost,
    pub path: &'a RiccatiPath,
    pub codec: &'a PoissonCodec,
    /// Prior at time 0; the true initial state is drawn from it.
    pub prior: &'a GaussianBelief,
}

/// Runs episode `index` of an ensemble seeded by `seed`.
pub fn run_ce_episode(setup: &EpisodeSetup<'_>, seed: u64, index: u64) -> Result<Episode> {
    let EpisodeSetup { sys, cost, path, codec, prior } = *setup;
    codec.check_against(sys)?;
    let law = lqr_gain(path, sys, cost)?;
    let grid = path.grid;
    let dt = grid.dt();
    let prior_sqrt = psd_sqrt(&prior.sigma, "prior covariance")?;
    let mut rng = stream_rng(seed, index);
    let xi = DVector::from_fn(sys.dim_x(), |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    let mut x = &prior.mu + &prior_sqrt * xi;
    let mut belief = GaussianBelief { t: grid.start(), ..prior.clone() };
    let mut clock = SpikeClock::new(codec.population_rate(), grid.start(), &mut rng);

    let mut states = Vec::with_capacity(grid.len());
    let mut beliefs = Vec::with_capacity(grid.len());
    let mut controls = Vec::with_capacity(grid.len());
    let mut spike_counts = Vec::with_capacity(grid.len());
    let mut running = 0.0;
    let mut centers = Vec::new();
    for k in 0..=grid.steps() {
        let u = law.control(k, &belief.mu);
        if k == grid.steps() {
            let terminal = quad_form(&x, cost.q_terminal());
            states.push(x);
            beliefs.push(belief);
            controls.push(u);
            spike_counts.push(0);
            return Ok(Episode { grid, states, beliefs, controls, spike_counts, cost: running * dt + terminal });
        }
        running += quad_form(&x, cost.q()) + quad_form(&u, cost.r());
        centers.clear();
        clock.drain(grid.time(k + 1), &mut rng, |_, rng| centers.push(codec.sample_center(&x, rng)));
        let next_x = sys.em_step(&x, &u, dt, &mut rng);
        let next_belief = filter_step(&belief, codec, sys, &u, dt, &centers)?;
        if next_x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "state trajectory", time: grid.time(k + 1) });
        }
        states.push(std::mem::replace(&mut x, next_x));
        beliefs.push(std::mem::replace(&mut belief, next_belief));
        controls.push(u);
        spike_counts.push(centers.len());
    }
    unreachable!("the loop returns at the final grid point")
}

/// Realised costs of `n` episodes, in episode order.
pub fn ce_episode_costs(setup: &EpisodeSetup<'_>, n: usize, seed: u64) -> Result<Vec<f64>> {
    Ok(block_reduce(
        n,
        |range| range.map(|i| run_ce_episode(setup, seed, i as u64).map(|e| e.cost)).collect::<Result<Vec<f64>>>(),
        |acc, part| acc.extend(part),
    )?
    .unwrap_or_default())
}

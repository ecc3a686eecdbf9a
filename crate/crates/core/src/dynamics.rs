//! Linear stochastic systems `dX = (A X + B U) dt + D^{1/2} dW` and their
//! Euler-Maruyama simulation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::{block_diag, check_psd, lyapunov_stationary, psd_sqrt};
use crate::seeding::{block_reduce, stream_rng};

#[derive(Clone, Debug)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    d: DMatrix<f64>,
    d_sqrt: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() {
            return Err(Error::Shape(format!("A must be square, got {}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n {
            return Err(Error::Shape(format!("B has {} rows, state dimension is {n}", b.nrows())));
        }
        if d.nrows() != n || d.ncols() != n {
            return Err(Error::Shape(format!("D must be {n}x{n}")));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("A and B must be finite"));
        }
        let d_sqrt = psd_sqrt(&d, "D")?;
        Ok(Self { a, b, d, d_sqrt })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    /// Symmetric square root of the noise intensity.
    pub fn d_sqrt(&self) -> &DMatrix<f64> {
        &self.d_sqrt
    }

    pub fn dim_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn dim_u(&self) -> usize {
        self.b.ncols()
    }

    /// `A Σ + Σ Aᵀ + D`.
    pub fn lyapunov_rhs(&self, sigma: &DMatrix<f64>) -> DMatrix<f64> {
        let a_sigma = &self.a * sigma;
        &a_sigma + a_sigma.transpose() + &self.d
    }

    /// Stationary covariance of the uncontrolled process.
    pub fn stationary_covariance(&self) -> Result<DMatrix<f64>> {
        lyapunov_stationary(&self.a, &self.d)
    }

    /// One Euler step `Σ += (A Σ + Σ Aᵀ + D) dt` for symmetric `Σ`, reusing `work`.
    pub(crate) fn covariance_drift(&self, sigma: &mut DMatrix<f64>, work: &mut DMatrix<f64>, dt: f64) {
        self.a.mul_to(sigma, work);
        let n = sigma.nrows();
        for j in 0..n {
            for i in 0..n {
                sigma[(i, j)] += dt * (work[(i, j)] + work[(j, i)] + self.d[(i, j)]);
            }
        }
    }

    /// One Euler-Maruyama step of the state.
    pub(crate) fn em_step<R: Rng>(&self, x: &DVector<f64>, u: &DVector<f64>, dt: f64, rng: &mut R) -> DVector<f64> {
        let xi = DVector::from_fn(self.dim_x(), |_, _| rng.sample::<f64, _>(StandardNormal));
        x + (&self.a * x + &self.b * u) * dt + &self.d_sqrt * xi * dt.sqrt()
    }
}

/// How the scalar `eta` of the oscillator enters the velocity noise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseConvention {
    /// Velocity noise `eta^{1/2} dW`, i.e. `D = diag(0, eta)`.
    #[default]
    Intensity,
    /// `D = diag(0, eta^2)`.
    Squared,
}

/// Controlled Ornstein-Uhlenbeck process `dX = (b U - gamma X) dt + eta^{1/2} dW`.
pub fn make_ou(gamma: f64, eta: f64, b: f64) -> Result<LinearSystem> {
    if !(gamma > 0.0) {
        return Err(invalid(format!("OU rate gamma must be positive, got {gamma}")));
    }
    if !(eta >= 0.0) {
        return Err(invalid(format!("noise intensity eta must be non-negative, got {eta}")));
    }
    LinearSystem::new(
        DMatrix::from_element(1, 1, -gamma),
        DMatrix::from_element(1, 1, b),
        DMatrix::from_element(1, 1, eta),
    )
}

/// Damped stochastic oscillator with state `(position, velocity)`; control and
/// noise act on the velocity only.
pub fn make_oscillator(gamma: f64, omega: f64, eta: f64, b: f64, convention: NoiseConvention) -> Result<LinearSystem> {
    if !(omega > 0.0) {
        return Err(invalid(format!("oscillator frequency must be positive, got {omega}")));
    }
    if !(gamma >= 0.0) {
        return Err(invalid(format!("damping must be non-negative, got {gamma}")));
    }
    if !(eta >= 0.0) {
        return Err(invalid(format!("noise intensity eta must be non-negative, got {eta}")));
    }
    let noise = match convention {
        NoiseConvention::Intensity => eta,
        NoiseConvention::Squared => eta * eta,
    };
    LinearSystem::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -omega * omega, -gamma]),
        DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, b]),
        DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, noise]),
    )
}

/// Two uncoupled copies of `sys`.
pub fn make_2d_product(sys: &LinearSystem) -> LinearSystem {
    let a = block_diag(&[sys.a(), sys.a()]);
    let b = block_diag(&[sys.b(), sys.b()]);
    let d = block_diag(&[sys.d(), sys.d()]);
    let d_sqrt = block_diag(&[sys.d_sqrt(), sys.d_sqrt()]);
    LinearSystem { a, b, d, d_sqrt }
}

/// Where a [`ControlLaw`] takes its state estimate from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BeliefSource {
    /// Full information: the law is applied to the true state.
    TrueState,
    /// Certainty equivalence: the law is applied to a posterior mean.
    PosteriorMean,
}

/// Linear feedback `U_t = -L_t x̂_t` on a time grid.
#[derive(Clone, Debug)]
pub struct ControlLaw {
    grid: TimeGrid,
    gains: Vec<DMatrix<f64>>,
    pub source: BeliefSource,
}

impl ControlLaw {
    pub fn new(grid: TimeGrid, gains: Vec<DMatrix<f64>>, source: BeliefSource) -> Result<Self> {
        if gains.len() != grid.len() {
            return Err(Error::Shape(format!(
                "gain schedule has {} entries for a grid of {} points",
                gains.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, gains, source })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn gain(&self, k: usize) -> &DMatrix<f64> {
        &self.gains[k]
    }

    pub fn gains(&self) -> &[DMatrix<f64>] {
        &self.gains
    }

    pub fn control(&self, k: usize, estimate: &DVector<f64>) -> DVector<f64> {
        -(&self.gains[k] * estimate)
    }

    pub fn with_source(mut self, source: BeliefSource) -> Self {
        self.source = source;
        self
    }
}

#[derive(Clone, Debug)]
pub struct StateTrajectory {
    pub grid: TimeGrid,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
}

impl StateTrajectory {
    pub fn times(&self) -> Vec<f64> {
        self.grid.times()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectories are never empty")
    }
}

fn check_law(sys: &LinearSystem, law: Option<&ControlLaw>, grid: &TimeGrid) -> Result<()> {
    if let Some(law) = law {
        if !law.grid.same_spacing(grid) || law.grid.steps() < grid.steps() {
            return Err(Error::Shape("control law grid does not match the simulation grid".into()));
        }
        let g = &law.gains[0];
        if g.nrows() != sys.dim_u() || g.ncols() != sys.dim_x() {
            return Err(Error::Shape(format!(
                "gain is {}x{}, expected {}x{}",
                g.nrows(),
                g.ncols(),
                sys.dim_u(),
                sys.dim_x()
            )));
        }
    }
    Ok(())
}

pub(crate) fn simulate_with_rng<R: Rng>(
    sys: &LinearSystem,
    law: Option<&ControlLaw>,
    x0: &DVector<f64>,
    grid: &TimeGrid,
    rng: &mut R,
) -> Result<StateTrajectory> {
    let dt = grid.dt();
    let mut states = Vec::with_capacity(grid.len());
    let mut controls = Vec::with_capacity(grid.len());
    let zero_u = DVector::zeros(sys.dim_u());
    let mut x = x0.clone();
    for k in 0..=grid.steps() {
        let u = law.map_or_else(|| zero_u.clone(), |l| l.control(k, &x));
        if k < grid.steps() {
            let next = sys.em_step(&x, &u, dt, rng);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { what: "state trajectory", time: grid.time(k + 1) });
            }
            states.push(std::mem::replace(&mut x, next));
        } else {
            states.push(x.clone());
        }
        controls.push(u);
    }
    Ok(StateTrajectory { grid: *grid, states, controls })
}

/// Euler-Maruyama path on `[0, horizon]`, optionally under full-information
/// feedback. Deterministic given `seed`.
pub fn simulate_state(
    sys: &LinearSystem,
    law: Option<&ControlLaw>,
    x0: &DVector<f64>,
    dt: f64,
    horizon: f64,
    seed: u64,
) -> Result<StateTrajectory> {
    if x0.len() != sys.dim_x() {
        return Err(Error::Shape(format!("x0 has length {}, expected {}", x0.len(), sys.dim_x())));
    }
    let grid = TimeGrid::new(horizon, dt)?;
    check_law(sys, law, &grid)?;
    simulate_with_rng(sys, law, x0, &grid, &mut stream_rng(seed, 0))
}

/// Ensemble mean and covariance of the state at every grid point.
#[derive(Clone, Debug)]
pub struct EnsembleMoments {
    pub grid: TimeGrid,
    pub mean: Vec<DVector<f64>>,
    pub covariance: Vec<DMatrix<f64>>,
    pub n_paths: usize,
}

/// Moments over `n_paths` independent paths; path `i` uses stream `i` of `seed`.
pub fn ensemble_moments(
    sys: &LinearSystem,
    law: Option<&ControlLaw>,
    x0: &DVector<f64>,
    dt: f64,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<EnsembleMoments> {
    if n_paths < 2 {
        return Err(invalid("ensemble needs at least two paths"));
    }
    let grid = TimeGrid::new(horizon, dt)?;
    check_law(sys, law, &grid)?;
    let n = sys.dim_x();
    let len = grid.len();
    let (sum, outer) = block_reduce(
        n_paths,
        |range| {
            let mut sum = vec![DVector::zeros(n); len];
            let mut outer = vec![DMatrix::zeros(n, n); len];
            for i in range {
                let path = simulate_with_rng(sys, law, x0, &grid, &mut stream_rng(seed, i as u64))?;
                for (k, x) in path.states.iter().enumerate() {
                    sum[k] += x;
                    outer[k].ger(1.0, x, x, 1.0);
                }
            }
            Ok::<_, Error>((sum, outer))
        },
        |acc, part| {
            for (a, b) in acc.0.iter_mut().zip(part.0) {
                *a += b;
            }
            for (a, b) in acc.1.iter_mut().zip(part.1) {
                *a += b;
            }
        },
    )?
    .expect("n_paths > 0");
    let m = n_paths as f64;
    let mean: Vec<DVector<f64>> = sum.iter().map(|s| s / m).collect();
    let covariance = outer.iter().zip(&mean).map(|(o, mu)| (o - mu * mu.transpose() * m) / (m - 1.0)).collect();
    Ok(EnsembleMoments { grid, mean, covariance, n_paths })
}

/// Rejects a noise matrix before it reaches a system constructor.
pub fn validate_noise(d: &DMatrix<f64>) -> Result<()> {
    check_psd(d, "D")
}

//! Dense populations of Gaussian-tuned Poisson neurons and the exact
//! point-process filter they induce.
//!
//! Under dense coding the total population rate does not depend on the state,
//! so spike *times* carry no information: the posterior covariance evolves
//! with the total count alone and only the identity of the firing neuron
//! moves the posterior mean.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Exp1;

use crate::dynamics::{LinearSystem, StateTrajectory};
use crate::error::{invalid, Error, Result};
use crate::linalg::{check_psd, min_eigenvalue, symmetrize, PSD_TOL};
use crate::seeding::{block_reduce, stream_rng};
use crate::Estimate;

/// Above this expected number of spikes per bin the time step is too coarse.
pub const COARSE_BIN: f64 = 0.1;

/// Tuning centres further than this many tuning widths from the state are not
/// considered when drawing the firing neuron.
const SAMPLING_RADIUS: f64 = 12.0;

#[derive(Clone, Debug)]
pub struct PoissonCodec {
    p: DMatrix<f64>,
    p_dagger: DMatrix<f64>,
    phi: f64,
    delta_theta: f64,
    coded_dims: Vec<usize>,
    /// Centres per side of zero along each coded dimension.
    half_count: usize,
    diagonal: bool,
}

impl PoissonCodec {
    /// Codec with tuning-width matrix `p`, peak rate `phi` and a lattice of
    /// spacing `delta_theta` covering `[-half_width, half_width]` on every
    /// coded dimension. Uncoded dimensions must have zero rows and columns in `p`.
    pub fn new(p: DMatrix<f64>, phi: f64, delta_theta: f64, half_width: f64) -> Result<Self> {
        check_psd(&p, "P")?;
        if !(phi >= 0.0) || !phi.is_finite() {
            return Err(invalid(format!("peak rate must be non-negative, got {phi}")));
        }
        if !(delta_theta > 0.0) {
            return Err(invalid(format!("lattice spacing must be positive, got {delta_theta}")));
        }
        if !(half_width >= 0.0) || !half_width.is_finite() {
            return Err(invalid(format!("lattice half-width must be non-negative, got {half_width}")));
        }
        let n = p.nrows();
        let coded_dims: Vec<usize> = (0..n).filter(|&i| p[(i, i)] > 0.0).collect();
        if coded_dims.is_empty() {
            return Err(invalid("tuning matrix codes no dimension"));
        }
        for i in (0..n).filter(|i| !coded_dims.contains(i)) {
            if p.row(i).amax() > 0.0 || p.column(i).amax() > 0.0 {
                return Err(invalid("tuning matrix must be zero on rows and columns of uncoded dimensions"));
            }
        }
        let d = coded_dims.len();
        let block = DMatrix::from_fn(d, d, |a, b| p[(coded_dims[a], coded_dims[b])]);
        let inv = block
            .clone()
            .cholesky()
            .ok_or_else(|| invalid("tuning matrix must be positive definite on its coded dimensions"))?
            .inverse();
        let mut p_dagger = DMatrix::zeros(n, n);
        for (a, &i) in coded_dims.iter().enumerate() {
            for (b, &j) in coded_dims.iter().enumerate() {
                p_dagger[(i, j)] = inv[(a, b)];
            }
        }
        symmetrize(&mut p_dagger);
        let diagonal = (0..d).all(|a| (0..d).all(|b| a == b || block[(a, b)] == 0.0));
        let half_count = (half_width / delta_theta).ceil() as usize;
        Ok(Self { p, p_dagger, phi, delta_theta, coded_dims, half_count, diagonal })
    }

    /// Codec whose lattice covers `n_sd` standard deviations of a state with
    /// marginal spread up to `sigma_max`, plus the same number of tuning widths.
    pub fn covering(p: DMatrix<f64>, phi: f64, delta_theta: f64, sigma_max: f64, n_sd: f64) -> Result<Self> {
        let width = (0..p.nrows()).map(|i| p[(i, i)].max(0.0).sqrt()).fold(0.0, f64::max);
        Self::new(p, phi, delta_theta, n_sd * (sigma_max + width))
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn p_dagger(&self) -> &DMatrix<f64> {
        &self.p_dagger
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn delta_theta(&self) -> f64 {
        self.delta_theta
    }

    pub fn coded_dims(&self) -> &[usize] {
        &self.coded_dims
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    fn side(&self) -> usize {
        2 * self.half_count + 1
    }

    pub fn n_centers(&self) -> usize {
        self.side().pow(self.coded_dims.len() as u32)
    }

    pub fn lattice_half_width(&self) -> f64 {
        self.half_count as f64 * self.delta_theta
    }

    fn coordinate(&self, j: usize) -> f64 {
        (j as f64 - self.half_count as f64) * self.delta_theta
    }

    fn decode(&self, mut m: usize) -> Vec<usize> {
        let side = self.side();
        let mut idx = vec![0; self.coded_dims.len()];
        for slot in idx.iter_mut() {
            *slot = m % side;
            m /= side;
        }
        idx
    }

    fn encode(&self, idx: &[usize]) -> usize {
        let side = self.side();
        idx.iter().rev().fold(0, |m, &j| m * side + j)
    }

    /// Tuning centre `θ_m`; zero on uncoded dimensions.
    pub fn center(&self, m: usize) -> DVector<f64> {
        let mut theta = DVector::zeros(self.dim());
        for (&dim, j) in self.coded_dims.iter().zip(self.decode(m)) {
            theta[dim] = self.coordinate(j);
        }
        theta
    }

    /// `φ exp(-½ (x-θ_m)ᵀ P† (x-θ_m))`.
    pub fn tuning_rate(&self, m: usize, x: &DVector<f64>) -> f64 {
        let diff = x - self.center(m);
        self.phi * (-0.5 * crate::linalg::quad_form(&diff, &self.p_dagger)).exp()
    }

    /// Total population rate under dense coding,
    /// `(2π)^{d/2} det(P_coded)^{1/2} φ / Δθ^d`.
    pub fn population_rate(&self) -> f64 {
        let d = self.coded_dims.len();
        let block = DMatrix::from_fn(d, d, |a, b| self.p[(self.coded_dims[a], self.coded_dims[b])]);
        (2.0 * std::f64::consts::PI).powf(d as f64 / 2.0) * block.determinant().sqrt() * self.phi
            / self.delta_theta.powi(d as i32)
    }

    /// Draws the index of the neuron that fired, with probability proportional
    /// to its tuning rate at `x`.
    pub fn sample_center<R: Rng>(&self, x: &DVector<f64>, rng: &mut R) -> usize {
        if self.diagonal {
            let idx: Vec<usize> =
                self.coded_dims.iter().map(|&dim| self.sample_axis(x[dim], self.p_dagger[(dim, dim)], rng)).collect();
            self.encode(&idx)
        } else {
            let log_w: Vec<f64> = (0..self.n_centers())
                .map(|m| {
                    let diff = x - self.center(m);
                    -0.5 * crate::linalg::quad_form(&diff, &self.p_dagger)
                })
                .collect();
            let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = log_w.iter().map(|l| (l - top).exp()).collect();
            pick(&weights, rng)
        }
    }

    fn sample_axis<R: Rng>(&self, x: f64, precision: f64, rng: &mut R) -> usize {
        let last = 2 * self.half_count;
        let reach = SAMPLING_RADIUS / precision.sqrt();
        let to_index = |v: f64| ((v / self.delta_theta) + self.half_count as f64).clamp(0.0, last as f64);
        let lo = to_index(x - reach).floor() as usize;
        let hi = (to_index(x + reach).ceil() as usize).min(last);
        let nearest = to_index(x).round() as usize;
        let shift = self.coordinate(nearest) - x;
        let weights: Vec<f64> = (lo..=hi)
            .map(|j| {
                let d = self.coordinate(j) - x;
                (-0.5 * precision * (d * d - shift * shift)).exp()
            })
            .collect();
        lo + pick(&weights, rng)
    }

    pub(crate) fn check_against(&self, sys: &LinearSystem) -> Result<()> {
        if self.dim() != sys.dim_x() {
            return Err(Error::Shape(format!(
                "codec is {}-dimensional, system state is {}-dimensional",
                self.dim(),
                sys.dim_x()
            )));
        }
        Ok(())
    }

    /// `Tr(W Σ)` with `W` the identity on coded dimensions.
    pub fn coded_trace(&self, sigma: &DMatrix<f64>) -> f64 {
        self.coded_dims.iter().map(|&i| sigma[(i, i)]).sum()
    }

    pub(crate) fn warn_if_coarse(&self, dt: f64) {
        let per_bin = self.population_rate() * dt;
        static WARNED: std::sync::atomic::AtomicBool = std::sync::atomic::AtomicBool::new(false);
        if per_bin > COARSE_BIN && !WARNED.swap(true, std::sync::atomic::Ordering::Relaxed) {
            log::warn!("expected {per_bin:.3} spikes per bin exceeds {COARSE_BIN}; time step is coarse");
        }
    }
}

fn pick<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut r = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if r < *w {
            return i;
        }
        r -= w;
    }
    weights.len() - 1
}

/// Homogeneous Poisson clock: exponential inter-arrival times at a fixed rate,
/// which gives independent Poisson(rate dt) counts in disjoint bins.
#[derive(Clone, Debug)]
pub(crate) struct SpikeClock {
    rate: f64,
    next: f64,
}

impl SpikeClock {
    pub(crate) fn new<R: Rng>(rate: f64, start: f64, rng: &mut R) -> Self {
        let mut clock = Self { rate, next: start };
        clock.advance(rng);
        clock
    }

    fn advance<R: Rng>(&mut self, rng: &mut R) {
        self.next = if self.rate > 0.0 { self.next + rng.sample::<f64, _>(Exp1) / self.rate } else { f64::INFINITY };
    }

    /// Spike times strictly before `until`.
    pub(crate) fn drain<R: Rng>(&mut self, until: f64, rng: &mut R, mut on_spike: impl FnMut(f64, &mut R)) {
        while self.next < until {
            let t = self.next;
            self.advance(rng);
            on_spike(t, rng);
        }
    }

    pub(crate) fn count<R: Rng>(&mut self, until: f64, rng: &mut R) -> usize {
        let mut n = 0;
        while self.next < until {
            n += 1;
            self.advance(rng);
        }
        n
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBelief {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub t: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spike {
    pub time: f64,
    /// Index of the time bin `[t_k, t_{k+1})` the spike fell into.
    pub bin: usize,
    pub center: usize,
}

#[derive(Clone, Debug)]
pub struct SpikeTrain {
    pub events: Vec<Spike>,
    pub window: (f64, f64),
}

impl SpikeTrain {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn counts_per_bin(&self, bins: usize) -> Vec<usize> {
        let mut counts = vec![0; bins];
        for e in &self.events {
            counts[e.bin] += 1;
        }
        counts
    }
}

/// Spikes emitted by the population while the state follows `traj`. The
/// firing neuron is drawn from the state at the start of each bin.
pub fn sample_spikes(codec: &PoissonCodec, traj: &StateTrajectory, seed: u64) -> Result<SpikeTrain> {
    if traj.states.first().map_or(0, |x| x.len()) != codec.dim() {
        return Err(Error::Shape("trajectory dimension does not match the codec".into()));
    }
    let grid = traj.grid;
    codec.warn_if_coarse(grid.dt());
    let mut rng = stream_rng(seed, 0);
    let mut clock = SpikeClock::new(codec.population_rate(), grid.start(), &mut rng);
    let mut events = Vec::new();
    for k in 0..grid.steps() {
        let x = &traj.states[k];
        clock.drain(grid.time(k + 1), &mut rng, |time, rng| {
            events.push(Spike { time, bin: k, center: codec.sample_center(x, rng) });
        });
    }
    Ok(SpikeTrain { events, window: (grid.start(), grid.end()) })
}

/// Posterior covariance after one spike: `Σ - Σ (I + P†Σ)⁻¹ P†Σ`, which equals
/// `(Σ⁻¹ + P†)⁻¹` whenever `Σ` is invertible.
pub fn covariance_jump(sigma: &DMatrix<f64>, p_dagger: &DMatrix<f64>) -> DMatrix<f64> {
    let n = sigma.nrows();
    let pd_sigma = p_dagger * sigma;
    let m = DMatrix::identity(n, n) + &pd_sigma;
    let x = m.lu().solve(&pd_sigma).expect("I + P†Σ is invertible for PSD Σ and P†");
    let mut out = sigma - sigma * x;
    symmetrize(&mut out);
    out
}

/// Posterior mean after a spike of the neuron centred at `theta`.
pub fn mean_jump(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    p_dagger: &DMatrix<f64>,
    theta: &DVector<f64>,
) -> DVector<f64> {
    let n = sigma.nrows();
    let m = DMatrix::identity(n, n) + p_dagger * sigma;
    let pull = m.lu().solve(&(p_dagger * (theta - mu))).expect("I + P†Σ is invertible");
    mu + sigma * pull
}

/// One filter step: Euler drift of mean and covariance, then one jump per
/// spike in the bin, in order.
pub fn filter_step(
    belief: &GaussianBelief,
    codec: &PoissonCodec,
    sys: &LinearSystem,
    u: &DVector<f64>,
    dt: f64,
    spikes: &[usize],
) -> Result<GaussianBelief> {
    codec.check_against(sys)?;
    if belief.mu.len() != sys.dim_x() || u.len() != sys.dim_u() {
        return Err(Error::Shape("belief or control has the wrong length".into()));
    }
    let mut mu = &belief.mu + (sys.a() * &belief.mu + sys.b() * u) * dt;
    let mut sigma = belief.sigma.clone();
    let mut work = DMatrix::zeros(sigma.nrows(), sigma.ncols());
    sys.covariance_drift(&mut sigma, &mut work, dt);
    for &m in spikes {
        mu = mean_jump(&mu, &sigma, codec.p_dagger(), &codec.center(m));
        sigma = covariance_jump(&sigma, codec.p_dagger());
    }
    let t = belief.t + dt;
    if mu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "posterior", time: t });
    }
    let min = min_eigenvalue(&sigma);
    if min < -PSD_TOL {
        return Err(Error::PsdLost { what: "posterior covariance", time: t, min_eigenvalue: min });
    }
    Ok(GaussianBelief { mu, sigma, t })
}

/// Covariance-only simulation of the filter: drift plus a jump per spike of a
/// rate-`λ̂` Poisson clock.
pub(crate) struct CovarianceSimulator<'a> {
    sys: &'a LinearSystem,
    p_dagger: &'a DMatrix<f64>,
    rate: f64,
    work: DMatrix<f64>,
}

impl<'a> CovarianceSimulator<'a> {
    pub(crate) fn new(sys: &'a LinearSystem, codec: &'a PoissonCodec) -> Result<Self> {
        codec.check_against(sys)?;
        let n = sys.dim_x();
        Ok(Self { sys, p_dagger: codec.p_dagger(), rate: codec.population_rate(), work: DMatrix::zeros(n, n) })
    }

    pub(crate) fn clock<R: Rng>(&self, start: f64, rng: &mut R) -> SpikeClock {
        SpikeClock::new(self.rate, start, rng)
    }

    /// Advances `sigma` across one bin ending at `until`; returns the spike count.
    pub(crate) fn step<R: Rng>(
        &mut self,
        sigma: &mut DMatrix<f64>,
        clock: &mut SpikeClock,
        until: f64,
        dt: f64,
        rng: &mut R,
    ) -> Result<usize> {
        self.sys.covariance_drift(sigma, &mut self.work, dt);
        let spikes = clock.count(until, rng);
        for _ in 0..spikes {
            *sigma = covariance_jump(sigma, self.p_dagger);
        }
        for i in 0..sigma.nrows() {
            let v = sigma[(i, i)];
            if !v.is_finite() {
                return Err(Error::NonFinite { what: "posterior covariance", time: until });
            }
            if v < -PSD_TOL {
                return Err(Error::PsdLost { what: "posterior covariance", time: until, min_eigenvalue: v });
            }
        }
        Ok(spikes)
    }
}

#[derive(Clone, Debug)]
pub struct MmseOptions {
    pub dt: f64,
    pub n_samples: usize,
    /// Time discarded before averaging.
    pub burn_in: f64,
    /// Averaging window after burn-in.
    pub window: f64,
    /// Starting covariance; the stationary prior covariance when `None`.
    pub initial: Option<DMatrix<f64>>,
}

impl Default for MmseOptions {
    fn default() -> Self {
        Self { dt: 1e-3, n_samples: 256, burn_in: 10.0, window: 40.0, initial: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MmseEstimate {
    pub value: f64,
    pub std_err: f64,
    /// False when the running mean drifted more than 1% over the final quarter.
    pub converged: bool,
}

impl From<MmseEstimate> for Estimate {
    fn from(m: MmseEstimate) -> Self {
        Estimate { value: m.value, std_err: m.std_err }
    }
}

/// Equilibrium MMSE: time and ensemble average of `Tr(W Σ_t)` over the coded
/// dimensions after burn-in.
pub fn mmse_equilibrium(
    codec: &PoissonCodec,
    sys: &LinearSystem,
    opts: &MmseOptions,
    seed: u64,
) -> Result<MmseEstimate> {
    codec.check_against(sys)?;
    if opts.n_samples == 0 {
        return Err(invalid("MMSE needs at least one sample"));
    }
    let dt = opts.dt;
    let burn = crate::grid::TimeGrid::new(opts.burn_in.max(dt), dt)?.steps();
    let burn = if opts.burn_in == 0.0 { 0 } else { burn };
    let window = crate::grid::TimeGrid::new(opts.window, dt)?.steps();
    let checkpoint = window - window / 4;
    let initial = match &opts.initial {
        Some(m) => {
            check_psd(m, "initial covariance")?;
            m.clone()
        }
        None => sys.stationary_covariance()?,
    };
    codec.warn_if_coarse(dt);

    // Per sample: time average over the window, and partial sum up to the checkpoint.
    let per_sample = block_reduce(
        opts.n_samples,
        |range| {
            let mut sim = CovarianceSimulator::new(sys, codec)?;
            let mut out = Vec::with_capacity(range.len());
            for i in range {
                let mut rng = stream_rng(seed, i as u64);
                let mut clock = sim.clock(0.0, &mut rng);
                let mut sigma = initial.clone();
                let mut sum = 0.0;
                let mut early = 0.0;
                for k in 0..burn + window {
                    let until = (k + 1) as f64 * dt;
                    sim.step(&mut sigma, &mut clock, until, dt, &mut rng)?;
                    if k >= burn {
                        sum += codec.coded_trace(&sigma);
                        if k + 1 - burn == checkpoint {
                            early = sum;
                        }
                    }
                }
                let min = min_eigenvalue(&sigma);
                if min < -PSD_TOL {
                    return Err(Error::PsdLost {
                        what: "posterior covariance",
                        time: (burn + window) as f64 * dt,
                        min_eigenvalue: min,
                    });
                }
                out.push((sum / window as f64, early));
            }
            Ok::<_, Error>(out)
        },
        |acc, part| acc.extend(part),
    )?
    .expect("n_samples > 0");

    let averages: Vec<f64> = per_sample.iter().map(|s| s.0).collect();
    let est = Estimate::from_samples(&averages);
    let early_mean = per_sample.iter().map(|s| s.1).sum::<f64>() / (per_sample.len() * checkpoint.max(1)) as f64;
    let drift = if est.value != 0.0 { ((est.value - early_mean) / est.value).abs() } else { 0.0 };
    let converged = drift <= 0.01;
    if !converged {
        log::warn!("MMSE running mean drifted by {:.2}% over the final quarter", 100.0 * drift);
    }
    Ok(MmseEstimate { value: est.value, std_err: est.std_err, converged })
}

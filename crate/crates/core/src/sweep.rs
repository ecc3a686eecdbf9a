//! Encoder-parameter sweeps comparing the estimation optimum (equilibrium
//! MMSE) with the control optimum (uncertainty penalty `f` from `Σ₀`).

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::{control_penalty_f, meanfield_equilibrium, CovarianceMethod, PenaltyMethod};
use crate::codec::{mmse_equilibrium, MmseOptions, PoissonCodec};
use crate::dynamics::{make_2d_product, make_oscillator, make_ou, LinearSystem, NoiseConvention};
use crate::error::{invalid, Error, Result};
use crate::kalman::{kalman_mmse, lqg_uncertainty_penalty, DiffusionObservation};
use crate::linalg::{check_psd, diag, from_rows};
use crate::mutual_info::{mi_kalman, mi_poisson, PriorSpec};
use crate::riccati::{solve_riccati, QuadraticCost, RiccatiPath};
use crate::seeding::{derive_seed, stream_rng};
use crate::Estimate;

/// Number of parametric bootstrap replicates behind [`Separation`].
pub const BOOTSTRAP_REPLICATES: usize = 2000;
const BOOTSTRAP_SEED: u64 = 0x5eed_b007;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "ou")]
    Ou,
    #[serde(rename = "oscillator")]
    Oscillator,
    #[serde(rename = "ou-2d")]
    Ou2d,
    #[serde(rename = "oscillator-2d")]
    Oscillator2d,
}

impl Preset {
    pub fn dim(self) -> usize {
        match self {
            Preset::Ou => 1,
            Preset::Oscillator | Preset::Ou2d => 2,
            Preset::Oscillator2d => 4,
        }
    }

    /// State coordinates seen by the population (positions).
    pub fn positions(self) -> Vec<usize> {
        match self {
            Preset::Ou | Preset::Oscillator => vec![0],
            Preset::Ou2d => vec![0, 1],
            Preset::Oscillator2d => vec![0, 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub preset: Preset,
    pub gamma: f64,
    pub eta: f64,
    pub b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(default)]
    pub noise_convention: NoiseConvention,
}

/// Diagonal cost weights over the full state (and control) vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub horizon: f64,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_terminal: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Isotropic tuning width `P = p² I` on the coded positions.
    Width,
    /// `P = p² diag(tan ζ, cot ζ)` on two coded positions.
    Anisotropy,
}

impl Family {
    pub fn parameter_name(self) -> &'static str {
        match self {
            Family::Width => "p",
            Family::Anisotropy => "zeta",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    Linear,
    Log,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing: Option<Spacing>,
}

fn default_window_sd() -> f64 {
    6.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecConfig {
    pub family: Family,
    pub phi: f64,
    pub delta_theta: f64,
    /// Width for single-point runs, and the fixed scale of the anisotropy family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Angle for single-point anisotropy runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    /// Lattice half-width in standard deviations of `Σ₀` plus tuning widths.
    #[serde(default = "default_window_sd")]
    pub window_sd: f64,
}

/// Diffusion-observation channel for the Kalman comparison.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationConfig {
    /// Rows of `F`; defaults to selecting the coded positions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<Vec<Vec<f64>>>,
    /// Rows of `G`; defaults to the identity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<Vec<Vec<f64>>>,
    /// Scale `g` of the constant-determinant family `g² diag(tan ζ, cot ζ)`;
    /// defaults to `p`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_scale: Option<f64>,
}

fn default_prior_scale() -> f64 {
    10.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    /// Multiple of the stationary uncontrolled covariance used as `Σ₀`.
    #[serde(default = "default_prior_scale")]
    pub scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { scale: default_prior_scale(), covariance: None, mean: None }
    }
}

fn default_dt() -> f64 {
    1e-3
}
fn default_n_samples() -> usize {
    4096
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub method: CovarianceMethod,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { dt: default_dt(), n_samples: default_n_samples(), seed: 0, method: CovarianceMethod::Mc }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmseConfig {
    pub n_samples: usize,
    pub burn_in: f64,
    pub window: f64,
}

impl Default for MmseConfig {
    fn default() -> Self {
        let d = MmseOptions::default();
        Self { n_samples: d.n_samples, burn_in: d.burn_in, window: d.window }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MiMode {
    #[default]
    Grid,
    Time,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiConfig {
    #[serde(default)]
    pub mode: MiMode,
    /// Evaluation times for `mode = "time"`; defaults to ten points up to the horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    /// Defaults to `run.n_samples`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
}

fn default_episodes() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoConfig {
    /// Episodes for the coverage aggregate; the first one is written in full.
    #[serde(default = "default_episodes")]
    pub episodes: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self { episodes: default_episodes() }
    }
}

/// One experiment: system, cost, encoder family and run parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub system: SystemConfig,
    pub cost: CostConfig,
    pub codec: CodecConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<ObservationConfig>,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub mmse: MmseConfig,
    #[serde(default)]
    pub mi: MiConfig,
    #[serde(default)]
    pub demo: DemoConfig,
}

impl SweepConfig {
    /// Scalar OU tuning-width sweep (γ=1, η=0.6, b=0.2, φ=0.1, Δθ=0.05,
    /// Q=0.1, Q_T=0.001, R=0.1, T=2).
    pub fn fig1a() -> Self {
        Self::base(
            SystemConfig {
                preset: Preset::Ou,
                gamma: 1.0,
                eta: 0.6,
                b: 0.2,
                omega: None,
                noise_convention: NoiseConvention::Intensity,
            },
            CostConfig { horizon: 2.0, q: vec![0.1], r: vec![0.1], q_terminal: Some(vec![0.001]) },
            CodecConfig {
                family: Family::Width,
                phi: 0.1,
                delta_theta: 0.05,
                p: None,
                zeta: None,
                grid: None,
                window_sd: 6.0,
            },
        )
    }

    /// Position-coded damped oscillator (γ=0.4, ω=0.8, η=0.4, b=1, q=0.4,
    /// r=0.4, Q_T=0, φ=0.5, Δθ=0.1, T=5).
    pub fn fig1b() -> Self {
        Self::base(
            SystemConfig {
                preset: Preset::Oscillator,
                gamma: 0.4,
                eta: 0.4,
                b: 1.0,
                omega: Some(0.8),
                noise_convention: NoiseConvention::Intensity,
            },
            CostConfig { horizon: 5.0, q: vec![0.4, 0.0], r: vec![0.0, 0.4], q_terminal: None },
            CodecConfig {
                family: Family::Width,
                phi: 0.5,
                delta_theta: 0.1,
                p: None,
                zeta: None,
                grid: None,
                window_sd: 6.0,
            },
        )
    }

    /// Two uncoupled OU processes with anisotropic cost `Q = diag(1, 0.25)`.
    pub fn fig2_ou() -> Self {
        Self::base(
            SystemConfig {
                preset: Preset::Ou2d,
                gamma: 1.0,
                eta: 0.6,
                b: 0.2,
                omega: None,
                noise_convention: NoiseConvention::Intensity,
            },
            CostConfig { horizon: 5.0, q: vec![1.0, 0.25], r: vec![0.4, 0.4], q_terminal: None },
            CodecConfig {
                family: Family::Anisotropy,
                phi: 0.5,
                delta_theta: 0.1,
                p: Some(1.0),
                zeta: None,
                grid: None,
                window_sd: 6.0,
            },
        )
    }

    /// Two uncoupled oscillators with anisotropic position cost.
    pub fn fig2_oscillator() -> Self {
        Self::base(
            SystemConfig {
                preset: Preset::Oscillator2d,
                gamma: 0.4,
                eta: 0.4,
                b: 1.0,
                omega: Some(0.8),
                noise_convention: NoiseConvention::Intensity,
            },
            CostConfig { horizon: 5.0, q: vec![1.0, 0.0, 0.25, 0.0], r: vec![0.0, 0.4, 0.0, 0.4], q_terminal: None },
            CodecConfig {
                family: Family::Anisotropy,
                phi: 0.5,
                delta_theta: 0.1,
                p: Some(1.0),
                zeta: None,
                grid: None,
                window_sd: 6.0,
            },
        )
    }

    fn base(system: SystemConfig, cost: CostConfig, codec: CodecConfig) -> Self {
        Self {
            system,
            cost,
            codec,
            observation: None,
            prior: PriorConfig::default(),
            run: RunConfig::default(),
            mmse: MmseConfig::default(),
            mi: MiConfig::default(),
            demo: DemoConfig::default(),
        }
    }

    /// Checks everything that can be checked without running anything.
    pub fn validate(&self) -> Result<()> {
        let sys = self.system()?;
        self.cost()?.check_against(&sys)?;
        if !(self.run.dt > 0.0) {
            return Err(invalid(format!("run.dt must be positive, got {}", self.run.dt)));
        }
        crate::grid::TimeGrid::new(self.cost.horizon, self.run.dt)?;
        if self.run.n_samples == 0 || self.mmse.n_samples == 0 || self.mi.n_samples == Some(0) {
            return Err(invalid("sample counts must be positive"));
        }
        if !(self.codec.phi >= 0.0) || !(self.codec.delta_theta > 0.0) || !(self.codec.window_sd > 0.0) {
            return Err(invalid("codec needs phi >= 0, delta_theta > 0 and window_sd > 0"));
        }
        if !(self.mmse.burn_in >= 0.0) || !(self.mmse.window > 0.0) {
            return Err(invalid("mmse needs burn_in >= 0 and window > 0"));
        }
        if self.codec.family == Family::Anisotropy && self.system.preset.positions().len() != 2 {
            return Err(invalid("the anisotropy family needs a two-dimensional preset (ou-2d or oscillator-2d)"));
        }
        if let Some(p) = self.codec.p {
            if !(p > 0.0) {
                return Err(invalid(format!("codec.p must be positive, got {p}")));
            }
        }
        if let Some(z) = self.codec.zeta {
            check_angle(z)?;
        }
        self.grid_values()?;
        if self.demo.episodes == 0 {
            return Err(invalid("demo.episodes must be positive"));
        }
        if let Some(times) = &self.mi.times {
            if times.is_empty() || times.iter().any(|t| !(*t > 0.0 && *t <= self.cost.horizon + 1e-12)) {
                return Err(invalid("mi.times must be non-empty and lie in (0, horizon]"));
            }
        }
        self.sigma0(&sys)?;
        self.prior_spec(&sys)?;
        if let Some(obs) = &self.observation {
            if let Some(s) = obs.noise_scale {
                if !(s > 0.0) {
                    return Err(invalid("observation.noise_scale must be positive"));
                }
            }
            self.observation_channel(&sys)?;
        }
        Ok(())
    }

    pub fn system(&self) -> Result<LinearSystem> {
        let c = &self.system;
        let omega = || c.omega.ok_or_else(|| invalid("oscillator presets need system.omega"));
        Ok(match c.preset {
            Preset::Ou => make_ou(c.gamma, c.eta, c.b)?,
            Preset::Ou2d => make_2d_product(&make_ou(c.gamma, c.eta, c.b)?),
            Preset::Oscillator => make_oscillator(c.gamma, omega()?, c.eta, c.b, c.noise_convention)?,
            Preset::Oscillator2d => {
                make_2d_product(&make_oscillator(c.gamma, omega()?, c.eta, c.b, c.noise_convention)?)
            }
        })
    }

    pub fn cost(&self) -> Result<QuadraticCost> {
        let n = self.system.preset.dim();
        let c = &self.cost;
        let terminal = c.q_terminal.clone().unwrap_or_else(|| vec![0.0; n]);
        for (name, v) in [("cost.q", &c.q), ("cost.r", &c.r), ("cost.q_terminal", &terminal)] {
            if v.len() != n {
                return Err(invalid(format!("{name} needs {n} diagonal entries for this preset, got {}", v.len())));
            }
        }
        QuadraticCost::new(diag(&c.q), diag(&c.r), diag(&terminal), c.horizon)
    }

    /// Encoder parameters swept over.
    pub fn grid_values(&self) -> Result<Vec<f64>> {
        let family = self.codec.family;
        let g = self.codec.grid.clone().unwrap_or_default();
        let values = match g.values {
            Some(v) => {
                if g.min.is_some() || g.max.is_some() || g.points.is_some() || g.spacing.is_some() {
                    return Err(invalid("codec.grid takes either `values` or `min`/`max`/`points`/`spacing`"));
                }
                v
            }
            None => {
                let (dmin, dmax, dpoints, dspacing) = match family {
                    Family::Width => (0.05, 5.0, 32, Spacing::Log),
                    Family::Anisotropy => (0.05, FRAC_PI_2 - 0.05, 31, Spacing::Linear),
                };
                let (min, max) = (g.min.unwrap_or(dmin), g.max.unwrap_or(dmax));
                let points = g.points.unwrap_or(dpoints);
                match g.spacing.unwrap_or(dspacing) {
                    Spacing::Linear => linspace(min, max, points),
                    Spacing::Log => {
                        if !(min > 0.0) {
                            return Err(invalid("log-spaced grids need min > 0"));
                        }
                        linspace(min.ln(), max.ln(), points).into_iter().map(f64::exp).collect()
                    }
                }
            }
        };
        if values.is_empty() {
            return Err(invalid("encoder grid is empty"));
        }
        if values.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("encoder grid must be strictly increasing"));
        }
        for &v in &values {
            match family {
                Family::Width if !(v > 0.0 && v.is_finite()) => {
                    return Err(invalid(format!("tuning widths must be positive, got {v}")));
                }
                Family::Anisotropy => check_angle(v)?,
                _ => {}
            }
        }
        Ok(values)
    }

    /// Encoder parameter for single-point runs (filter demo, MI over time).
    pub fn point_parameter(&self) -> f64 {
        match self.codec.family {
            Family::Width => self.codec.p.unwrap_or(1.0),
            Family::Anisotropy => self.codec.zeta.unwrap_or(FRAC_PI_4),
        }
    }

    /// Tuning precision matrix `P` at encoder parameter `value`.
    pub fn tuning_matrix(&self, value: f64) -> Result<DMatrix<f64>> {
        let pos = self.system.preset.positions();
        let n = self.system.preset.dim();
        let mut p = DMatrix::zeros(n, n);
        match self.codec.family {
            Family::Width => {
                for &i in &pos {
                    p[(i, i)] = value * value;
                }
            }
            Family::Anisotropy => {
                check_angle(value)?;
                let scale = self.codec.p.unwrap_or(1.0).powi(2);
                p[(pos[0], pos[0])] = scale * value.tan();
                p[(pos[1], pos[1])] = scale / value.tan();
            }
        }
        Ok(p)
    }

    /// Codec at `value` whose lattice covers the spread of `Σ₀`.
    pub fn codec_at(&self, value: f64, sigma0: &DMatrix<f64>) -> Result<PoissonCodec> {
        let spread = self.system.preset.positions().iter().map(|&i| sigma0[(i, i)].max(0.0).sqrt()).fold(0.0, f64::max);
        PoissonCodec::covering(
            self.tuning_matrix(value)?,
            self.codec.phi,
            self.codec.delta_theta,
            spread,
            self.codec.window_sd,
        )
    }

    /// Initial covariance: the override, or `scale` times the stationary
    /// uncontrolled covariance.
    pub fn sigma0(&self, sys: &LinearSystem) -> Result<DMatrix<f64>> {
        let s = match &self.prior.covariance {
            Some(rows) => from_rows(rows)?,
            None => {
                if !(self.prior.scale > 0.0) {
                    return Err(invalid("prior.scale must be positive"));
                }
                sys.stationary_covariance()? * self.prior.scale
            }
        };
        if s.nrows() != sys.dim_x() || !s.is_square() {
            return Err(Error::Shape("prior.covariance does not match the state dimension".into()));
        }
        check_psd(&s, "prior.covariance")?;
        Ok(s)
    }

    pub fn prior_spec(&self, sys: &LinearSystem) -> Result<PriorSpec> {
        let mu = match &self.prior.mean {
            Some(m) => DVector::from_column_slice(m),
            None => DVector::zeros(sys.dim_x()),
        };
        PriorSpec::new(mu, self.sigma0(sys)?)
    }

    fn selector(&self) -> DMatrix<f64> {
        let pos = self.system.preset.positions();
        let mut f = DMatrix::zeros(pos.len(), self.system.preset.dim());
        for (row, &i) in pos.iter().enumerate() {
            f[(row, i)] = 1.0;
        }
        f
    }

    fn observation_drift(&self) -> Result<DMatrix<f64>> {
        match self.observation.as_ref().and_then(|o| o.f.as_ref()) {
            Some(rows) => from_rows(rows),
            None => Ok(self.selector()),
        }
    }

    /// Diffusion observation `dY = F X dt + G^{1/2} dV` from `[observation]`.
    pub fn observation_channel(&self, sys: &LinearSystem) -> Result<DiffusionObservation> {
        let f = self.observation_drift()?;
        if f.ncols() != sys.dim_x() {
            return Err(Error::Shape("observation.f does not match the state dimension".into()));
        }
        let g = match self.observation.as_ref().and_then(|o| o.g.as_ref()) {
            Some(rows) => from_rows(rows)?,
            None => DMatrix::identity(f.nrows(), f.nrows()),
        };
        DiffusionObservation::new(f, g)
    }

    /// Constant-determinant Gaussian baseline matched to the anisotropy angle.
    pub fn kalman_baseline(&self, zeta: f64) -> Result<DiffusionObservation> {
        check_angle(zeta)?;
        let scale = self.observation.as_ref().and_then(|o| o.noise_scale).or(self.codec.p).unwrap_or(1.0);
        let g2 = scale * scale;
        DiffusionObservation::new(self.observation_drift()?, diag(&[g2 * zeta.tan(), g2 / zeta.tan()]))
    }

    /// MMSE weight: identity on the coded positions.
    pub fn mmse_weight(&self) -> DMatrix<f64> {
        let f = self.selector();
        f.transpose() * f
    }

    pub fn mi_samples(&self) -> usize {
        self.mi.n_samples.unwrap_or(self.run.n_samples)
    }

    pub fn mmse_options(&self) -> MmseOptions {
        MmseOptions {
            dt: self.run.dt,
            n_samples: self.mmse.n_samples,
            burn_in: self.mmse.burn_in,
            window: self.mmse.window,
            initial: None,
        }
    }
}

fn check_angle(z: f64) -> Result<()> {
    if !(z > 0.0 && z < FRAC_PI_2) {
        return Err(invalid(format!("anisotropy angle must lie in (0, pi/2), got {z}")));
    }
    Ok(())
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| if i + 1 == n { b } else { a + (b - a) * i as f64 / (n - 1) as f64 }).collect(),
    }
}

/// Gaussian-channel quantities at one anisotropy angle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KalmanPoint {
    pub mmse: f64,
    pub f: f64,
    pub mi: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointValues {
    pub mmse: Estimate,
    /// False when the MMSE running mean had not settled.
    pub mmse_converged: bool,
    pub f: Estimate,
    pub mi: Estimate,
    pub kalman: Option<KalmanPoint>,
}

#[derive(Clone, Debug)]
pub struct PointResult {
    pub value: f64,
    pub seed: u64,
    /// Population rate `λ̂`.
    pub rate: f64,
    pub outcome: std::result::Result<PointValues, String>,
}

impl PointResult {
    pub fn values(&self) -> Option<&PointValues> {
        self.outcome.as_ref().ok()
    }
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub family: Family,
    pub method: CovarianceMethod,
    pub points: Vec<PointResult>,
    pub sigma0: DMatrix<f64>,
    /// Time at which MI is evaluated (the horizon, starting from `Σ₀`).
    pub mi_time: f64,
    pub partial: bool,
}

impl SweepResult {
    pub fn grid(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }
}

struct SweepContext {
    sys: LinearSystem,
    path: RiccatiPath,
    sigma0: DMatrix<f64>,
    prior: PriorSpec,
}

/// Sweep over tuning widths `p` with fixed `φ`, so that `λ̂ ∝ p^d`.
pub fn run_width_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    if cfg.codec.family != Family::Width {
        return Err(invalid("run_width_sweep needs codec.family = \"width\""));
    }
    run_sweep(cfg)
}

/// Sweep over anisotropy angles `ζ` at fixed determinant, with the
/// Kalman/LQG constant-determinant baseline alongside.
pub fn run_anisotropy_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    if cfg.codec.family != Family::Anisotropy {
        return Err(invalid("run_anisotropy_sweep needs codec.family = \"anisotropy\""));
    }
    run_sweep(cfg)
}

/// Runs the sweep selected by `codec.family`.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let sys = cfg.system()?;
    let cost = cfg.cost()?;
    let path = solve_riccati(&sys, &cost, cfg.run.dt)?;
    let sigma0 = cfg.sigma0(&sys)?;
    let prior = cfg.prior_spec(&sys)?;
    let ctx = SweepContext { sys, path, sigma0, prior };
    let grid = cfg.grid_values()?;

    let points: Vec<PointResult> = grid
        .par_iter()
        .enumerate()
        .map(|(i, &value)| {
            let seed = derive_seed(cfg.run.seed, i as u64);
            let rate = cfg.codec_at(value, &ctx.sigma0).map(|c| c.population_rate()).unwrap_or(f64::NAN);
            let outcome = evaluate_point(cfg, &ctx, value, seed).map_err(|e| {
                log::error!("{} = {value}: {e}", cfg.codec.family.parameter_name());
                e.to_string()
            });
            log::info!("{} = {value:.6}: done", cfg.codec.family.parameter_name());
            PointResult { value, seed, rate, outcome }
        })
        .collect();
    let partial = points.iter().any(|p| p.outcome.is_err());
    Ok(SweepResult {
        family: cfg.codec.family,
        method: cfg.run.method,
        points,
        sigma0: ctx.sigma0,
        mi_time: cfg.cost.horizon,
        partial,
    })
}

fn evaluate_point(cfg: &SweepConfig, ctx: &SweepContext, value: f64, seed: u64) -> Result<PointValues> {
    let sys = &ctx.sys;
    let codec = cfg.codec_at(value, &ctx.sigma0)?;
    let dt = cfg.run.dt;
    let (mmse, mmse_converged, penalty) = match cfg.run.method {
        CovarianceMethod::Mc => {
            let m = mmse_equilibrium(&codec, sys, &cfg.mmse_options(), derive_seed(seed, 0))?;
            let method = PenaltyMethod::MonteCarlo { n_samples: cfg.run.n_samples, seed: derive_seed(seed, 1) };
            (Estimate::from(m), m.converged, method)
        }
        CovarianceMethod::Meanfield => {
            let (_, m) = meanfield_equilibrium(&codec, sys, dt)?;
            (Estimate::exact(m), true, PenaltyMethod::Meanfield)
        }
    };
    let f = control_penalty_f(&ctx.sigma0, 0.0, &ctx.path, &codec, sys, penalty)?;
    let mi = mi_poisson(sys, &codec, &ctx.prior, cfg.cost.horizon, dt, cfg.mi_samples(), derive_seed(seed, 2))?;
    let kalman = match cfg.codec.family {
        Family::Width => None,
        Family::Anisotropy => {
            let obs = cfg.kalman_baseline(value)?;
            Some(KalmanPoint {
                mmse: kalman_mmse(sys, &obs, &cfg.mmse_weight(), dt)?,
                f: lqg_uncertainty_penalty(&ctx.sigma0, 0.0, &ctx.path, sys, &obs)?,
                mi: mi_kalman(sys, &obs, &ctx.prior, cfg.cost.horizon, dt)?,
            })
        }
    };
    Ok(PointValues { mmse, mmse_converged, f, mi, kalman })
}

/// Bootstrap comparison of the MMSE and `f` minimisers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    /// Grid steps between the two minimisers.
    pub steps_apart: usize,
    /// 95% percentile interval of the MMSE argmin under resampling.
    pub mmse_interval: (usize, usize),
    pub f_interval: (usize, usize),
    /// Intervals disjoint and minimisers more than one step apart.
    pub significant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub parameter: String,
    pub argmin_mmse: usize,
    pub argmin_f: usize,
    pub argmax_mi: usize,
    pub mmse_at_boundary: bool,
    pub f_at_boundary: bool,
    pub mi_at_boundary: bool,
    pub kalman_argmin_mmse: Option<usize>,
    pub kalman_argmin_f: Option<usize>,
    pub separation: Separation,
    pub partial: bool,
}

fn arg_best(values: &[(usize, f64)], better: impl Fn(f64, f64) -> bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &(i, v) in values {
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| better(v, b)) {
            best = Some((i, v));
        }
    }
    best.map(|b| b.0)
}

fn percentile_interval(mut draws: Vec<usize>) -> (usize, usize) {
    draws.sort_unstable();
    let last = draws.len() - 1;
    let lo = (0.025 * last as f64).floor() as usize;
    let hi = (0.975 * last as f64).ceil() as usize;
    (draws[lo], draws[hi])
}

/// Argmins, argmax, boundary flags and a parametric bootstrap of the
/// minimiser separation (each point redrawn from `N(value, std_err²)`).
pub fn summarize(result: &SweepResult) -> Result<SweepSummary> {
    let ok: Vec<(usize, &PointValues)> =
        result.points.iter().enumerate().filter_map(|(i, p)| p.values().map(|v| (i, v))).collect();
    if ok.is_empty() {
        return Err(Error::Numerical("every grid point failed".into()));
    }
    let last = result.points.len() - 1;
    let at_boundary = |i: usize| last > 0 && (i == 0 || i == last);
    let column = |get: &dyn Fn(&PointValues) -> f64| ok.iter().map(|(i, v)| (*i, get(v))).collect::<Vec<_>>();
    let lower = |a: f64, b: f64| a < b;
    let argmin_mmse =
        arg_best(&column(&|v| v.mmse.value), lower).ok_or_else(|| Error::Numerical("MMSE column is empty".into()))?;
    let argmin_f =
        arg_best(&column(&|v| v.f.value), lower).ok_or_else(|| Error::Numerical("f column is empty".into()))?;
    let argmax_mi = arg_best(&column(&|v| v.mi.value), |a, b| a > b)
        .ok_or_else(|| Error::Numerical("MI column is empty".into()))?;
    let kalman = ok.iter().all(|(_, v)| v.kalman.is_some()) && result.family == Family::Anisotropy;
    let (kalman_argmin_mmse, kalman_argmin_f) = if kalman {
        (
            arg_best(&column(&|v| v.kalman.map_or(f64::NAN, |k| k.mmse)), lower),
            arg_best(&column(&|v| v.kalman.map_or(f64::NAN, |k| k.f)), lower),
        )
    } else {
        (None, None)
    };

    let mut rng = stream_rng(BOOTSTRAP_SEED, 0);
    let mut mmse_draws = Vec::with_capacity(BOOTSTRAP_REPLICATES);
    let mut f_draws = Vec::with_capacity(BOOTSTRAP_REPLICATES);
    let mut buf_m = Vec::with_capacity(ok.len());
    let mut buf_f = Vec::with_capacity(ok.len());
    for _ in 0..BOOTSTRAP_REPLICATES {
        buf_m.clear();
        buf_f.clear();
        for (i, v) in &ok {
            let zm: f64 = StandardNormal.sample(&mut rng);
            let zf: f64 = StandardNormal.sample(&mut rng);
            buf_m.push((*i, v.mmse.value + v.mmse.std_err * zm));
            buf_f.push((*i, v.f.value + v.f.std_err * zf));
        }
        mmse_draws.push(arg_best(&buf_m, lower).expect("non-empty"));
        f_draws.push(arg_best(&buf_f, lower).expect("non-empty"));
    }
    let mmse_interval = percentile_interval(mmse_draws);
    let f_interval = percentile_interval(f_draws);
    let steps_apart = argmin_mmse.abs_diff(argmin_f);
    let disjoint = mmse_interval.1 < f_interval.0 || f_interval.1 < mmse_interval.0;
    let separation = Separation { steps_apart, mmse_interval, f_interval, significant: disjoint && steps_apart > 1 };

    Ok(SweepSummary {
        parameter: result.family.parameter_name().to_string(),
        argmin_mmse,
        argmin_f,
        argmax_mi,
        mmse_at_boundary: at_boundary(argmin_mmse),
        f_at_boundary: at_boundary(argmin_f),
        mi_at_boundary: at_boundary(argmax_mi),
        kalman_argmin_mmse,
        kalman_argmin_f,
        separation,
        partial: result.partial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(mmse: &[(f64, f64)], f: &[(f64, f64)]) -> SweepResult {
        let points = mmse
            .iter()
            .zip(f)
            .enumerate()
            .map(|(i, (&(m, ms), &(fv, fs)))| PointResult {
                value: i as f64 + 1.0,
                seed: 0,
                rate: 1.0,
                outcome: Ok(PointValues {
                    mmse: Estimate { value: m, std_err: ms },
                    mmse_converged: true,
                    f: Estimate { value: fv, std_err: fs },
                    mi: Estimate { value: -m, std_err: ms },
                    kalman: None,
                }),
            })
            .collect();
        SweepResult {
            family: Family::Width,
            method: CovarianceMethod::Mc,
            points,
            sigma0: diag(&[1.0]),
            mi_time: 1.0,
            partial: false,
        }
    }

    #[test]
    fn default_grids() {
        let w = SweepConfig::fig1a().grid_values().unwrap();
        assert_eq!(w.len(), 32);
        assert!((w[0] - 0.05).abs() < 1e-15 && (w[31] - 5.0).abs() < 1e-12);
        let z = SweepConfig::fig2_ou().grid_values().unwrap();
        assert_eq!(z.len(), 31);
        assert!((z[15] - FRAC_PI_4).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_grids() {
        let mut cfg = SweepConfig::fig1a();
        cfg.codec.grid = Some(GridConfig { values: Some(vec![1.0, 0.5]), ..Default::default() });
        assert!(cfg.validate().is_err());
        cfg.codec.grid = Some(GridConfig { values: Some(vec![-1.0]), ..Default::default() });
        assert!(cfg.validate().is_err());
        let mut cfg = SweepConfig::fig2_ou();
        cfg.codec.grid = Some(GridConfig { values: Some(vec![0.0, 0.5]), ..Default::default() });
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn presets_validate() {
        for cfg in [SweepConfig::fig1a(), SweepConfig::fig1b(), SweepConfig::fig2_ou(), SweepConfig::fig2_oscillator()]
        {
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn anisotropy_needs_two_positions() {
        let mut cfg = SweepConfig::fig1a();
        cfg.codec.family = Family::Anisotropy;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn population_rate_is_constant_along_angles() {
        let cfg = SweepConfig::fig2_oscillator();
        let sys = cfg.system().unwrap();
        let s0 = cfg.sigma0(&sys).unwrap();
        let rates: Vec<f64> =
            cfg.grid_values().unwrap().iter().map(|&z| cfg.codec_at(z, &s0).unwrap().population_rate()).collect();
        for r in &rates {
            assert!((r - rates[0]).abs() <= 1e-12 * rates[0]);
        }
    }

    #[test]
    fn monotone_curve_flags_boundary() {
        let m: Vec<(f64, f64)> = (0..5).map(|i| (5.0 - i as f64, 0.01)).collect();
        let s = summarize(&synthetic(&m, &m)).unwrap();
        assert_eq!(s.argmin_mmse, 4);
        assert!(s.mmse_at_boundary && s.f_at_boundary);
    }

    #[test]
    fn flat_noisy_curves_are_not_significant() {
        let m: Vec<(f64, f64)> = (0..9).map(|i| (1.0 + 1e-4 * (i % 3) as f64, 0.1)).collect();
        let f: Vec<(f64, f64)> = (0..9).map(|i| (1.0 + 1e-4 * ((i + 1) % 4) as f64, 0.1)).collect();
        assert!(!summarize(&synthetic(&m, &f)).unwrap().separation.significant);
    }

    #[test]
    fn sharp_distinct_minima_are_significant() {
        let m: Vec<(f64, f64)> = (0..9).map(|i| ((i as f64 - 2.0).powi(2), 0.01)).collect();
        let f: Vec<(f64, f64)> = (0..9).map(|i| ((i as f64 - 6.0).powi(2), 0.01)).collect();
        let s = summarize(&synthetic(&m, &f)).unwrap();
        assert_eq!((s.argmin_mmse, s.argmin_f), (2, 6));
        assert!(s.separation.significant);
        assert_eq!(s.separation.steps_apart, 4);
    }

    #[test]
    fn single_point_is_degenerate() {
        let s = summarize(&synthetic(&[(1.0, 0.0)], &[(2.0, 0.0)])).unwrap();
        assert_eq!((s.argmin_mmse, s.argmin_f, s.argmax_mi), (0, 0, 0));
        assert!(!s.mmse_at_boundary && !s.separation.significant);
    }

    #[test]
    fn failed_points_are_skipped() {
        let mut r = synthetic(&[(3.0, 0.0), (1.0, 0.0), (2.0, 0.0)], &[(3.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        r.points[1].outcome = Err("boom".into());
        r.partial = true;
        let s = summarize(&r).unwrap();
        assert_eq!(s.argmin_mmse, 2);
        assert!(s.partial);
    }

    #[test]
    fn single_point_meanfield_sweep_runs() {
        let mut cfg = SweepConfig::fig1a();
        cfg.run.method = CovarianceMethod::Meanfield;
        cfg.run.n_samples = 16;
        cfg.codec.grid = Some(GridConfig { values: Some(vec![1.0]), ..Default::default() });
        let r = run_width_sweep(&cfg).unwrap();
        assert!(!r.partial);
        let v = r.points[0].values().unwrap();
        assert!(v.mmse.value > 0.0 && v.f.value > 0.0 && v.mi.value > 0.0);
        assert!(run_anisotropy_sweep(&cfg).is_err());
    }
}

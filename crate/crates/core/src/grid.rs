use nalgebra::DMatrix;

use crate::error::{invalid, Result};

/// Uniform time grid `t_k = start + k * dt`, `k = 0..=steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    start: f64,
    dt: f64,
    steps: usize,
}

impl TimeGrid {
    /// Grid on `[0, horizon]`. `dt` must divide the horizon up to rounding.
    pub fn new(horizon: f64, dt: f64) -> Result<Self> {
        Self::starting_at(0.0, horizon, dt)
    }

    pub fn starting_at(start: f64, length: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(invalid(format!("time step must be positive, got {dt}")));
        }
        if !(length >= dt * (1.0 - 1e-9)) || !length.is_finite() {
            return Err(invalid(format!("horizon {length} shorter than time step {dt}")));
        }
        let steps = (length / dt).round() as usize;
        if (steps as f64 * dt - length).abs() > 1e-9 * length.max(1.0) {
            return Err(invalid(format!("time step {dt} does not divide horizon {length}")));
        }
        Ok(Self { start, dt, steps })
    }

    pub fn from_steps(start: f64, dt: f64, steps: usize) -> Self {
        Self { start, dt, steps }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.time(self.steps)
    }

    pub fn time(&self, k: usize) -> f64 {
        self.start + k as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }

    /// Index of the grid point at time `t`; rejects off-grid times.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let x = (t - self.start) / self.dt;
        let k = x.round();
        if k < 0.0 || k > self.steps as f64 || (x - k).abs() > 1e-6 {
            return Err(invalid(format!(
                "time {t} is not on the grid [{}, {}] with step {}",
                self.start,
                self.end(),
                self.dt
            )));
        }
        Ok(k as usize)
    }

    /// Same step, restricted to `[time(k), end]`.
    pub fn tail(&self, k: usize) -> Self {
        Self { start: self.time(k), dt: self.dt, steps: self.steps - k }
    }

    pub fn same_spacing(&self, other: &TimeGrid) -> bool {
        (self.dt - other.dt).abs() <= 1e-12 * self.dt
    }
}

/// A matrix-valued function sampled on a [`TimeGrid`], typically a covariance.
#[derive(Clone, Debug)]
pub struct CovariancePath {
    pub grid: TimeGrid,
    pub values: Vec<DMatrix<f64>>,
}

impl CovariancePath {
    pub fn new(grid: TimeGrid, values: Vec<DMatrix<f64>>) -> Self {
        debug_assert_eq!(grid.len(), values.len());
        Self { grid, values }
    }

    pub fn last(&self) -> &DMatrix<f64> {
        self.values.last().expect("paths are never empty")
    }

    pub fn at(&self, t: f64) -> Result<&DMatrix<f64>> {
        Ok(&self.values[self.grid.index_of(t)?])
    }
}

/// Composite trapezoid rule on a uniform grid.
pub fn trapezoid(values: impl ExactSizeIterator<Item = f64>, dt: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mut acc = 0.0;
    for (k, v) in values.enumerate() {
        acc += if k == 0 || k == n - 1 { 0.5 * v } else { v };
    }
    acc * dt
}

/// Trapezoid weight of grid point `k` out of `n` points.
pub(crate) fn trapezoid_weight(k: usize, n: usize) -> f64 {
    if n < 2 {
        0.0
    } else if k == 0 || k == n - 1 {
        0.5
    } else {
        1.0
    }
}

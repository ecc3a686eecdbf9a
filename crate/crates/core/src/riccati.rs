//! Backward Riccati equation, LQR gains and the full-information cost-to-go.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{BeliefSource, ControlLaw, LinearSystem, StateTrajectory};
use crate::error::{invalid, Error, Result};
use crate::grid::{trapezoid_weight, TimeGrid};
use crate::linalg::{check_psd, null_space_psd, pinv_psd, quad_form, trace_product};
use crate::ode::rk4_symmetric;

const RANK_TOL: f64 = 1e-12;

/// Quadratic cost `∫ (xᵀQx + uᵀRu) dt + x_Tᵀ Q_T x_T` over `[0, horizon]`.
#[derive(Clone, Debug)]
pub struct QuadraticCost {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    q_terminal: DMatrix<f64>,
    horizon: f64,
    r_pinv: DMatrix<f64>,
}

impl QuadraticCost {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, q_terminal: DMatrix<f64>, horizon: f64) -> Result<Self> {
        check_psd(&q, "Q")?;
        check_psd(&r, "R")?;
        check_psd(&q_terminal, "Q_T")?;
        if q.shape() != q_terminal.shape() {
            return Err(Error::Shape("Q and Q_T must have the same shape".into()));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(invalid(format!("horizon must be positive, got {horizon}")));
        }
        let r_pinv = pinv_psd(&r, RANK_TOL);
        Ok(Self { q, r, q_terminal, horizon, r_pinv })
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn q_terminal(&self) -> &DMatrix<f64> {
        &self.q_terminal
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Pseudo-inverse of `R` on its positive subspace.
    pub fn r_pinv(&self) -> &DMatrix<f64> {
        &self.r_pinv
    }

    /// Same cost with every weight multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(&self.q * c, &self.r * c, &self.q_terminal * c, self.horizon)
    }

    /// Checks shapes against `sys` and that every control channel with zero
    /// cost is also without effect on the state.
    pub fn check_against(&self, sys: &LinearSystem) -> Result<()> {
        let (n, m) = (sys.dim_x(), sys.dim_u());
        if self.q.nrows() != n {
            return Err(Error::Shape(format!("Q is {0}x{0}, state dimension is {n}", self.q.nrows())));
        }
        if self.r.nrows() != m {
            return Err(Error::Shape(format!("R is {0}x{0}, control dimension is {m}", self.r.nrows())));
        }
        let scale = sys.b().amax().max(1.0);
        for v in null_space_psd(&self.r, RANK_TOL) {
            let leak = (sys.b() * &v).amax();
            if leak > 1e-10 * scale {
                return Err(invalid(format!(
                    "control direction {:?} is free (zero cost) but moves the state",
                    v.as_slice()
                )));
            }
        }
        Ok(())
    }

    /// Realised cost of a trajectory: left-point running cost plus terminal cost.
    pub fn evaluate(&self, traj: &StateTrajectory) -> f64 {
        let dt = traj.grid.dt();
        let steps = traj.grid.steps();
        let running: f64 =
            (0..steps).map(|k| quad_form(&traj.states[k], &self.q) + quad_form(&traj.controls[k], &self.r)).sum();
        running * dt + quad_form(&traj.states[steps], &self.q_terminal)
    }
}

/// Solution `S_t` of the control Riccati equation on a uniform grid, with the
/// noise integral `∫_t^T Tr(D S_s) ds` and the uncertainty weight
/// `S_t B R⁺ Bᵀ S_t` cached per grid point.
#[derive(Clone, Debug)]
pub struct RiccatiPath {
    pub grid: TimeGrid,
    s: Vec<DMatrix<f64>>,
    noise_tail: Vec<f64>,
    uncertainty_weight: Vec<DMatrix<f64>>,
}

impl RiccatiPath {
    pub fn s(&self, k: usize) -> &DMatrix<f64> {
        &self.s[k]
    }

    pub fn s_all(&self) -> &[DMatrix<f64>] {
        &self.s
    }

    /// `∫_{t_k}^T Tr(D S_s) ds`.
    pub fn noise_tail(&self, k: usize) -> f64 {
        self.noise_tail[k]
    }

    /// `S_k B R⁺ Bᵀ S_k`, the matrix that prices posterior covariance.
    pub fn uncertainty_weight(&self, k: usize) -> &DMatrix<f64> {
        &self.uncertainty_weight[k]
    }

    pub fn uncertainty_weights(&self) -> &[DMatrix<f64>] {
        &self.uncertainty_weight
    }

    pub fn index_of(&self, t: f64) -> Result<usize> {
        self.grid.index_of(t)
    }
}

/// Integrates `-dS/dt = Q + AᵀS + SA - S B R⁺ Bᵀ S` backward from `S_T = Q_T`
/// with RK4.
pub fn solve_riccati(sys: &LinearSystem, cost: &QuadraticCost, dt: f64) -> Result<RiccatiPath> {
    cost.check_against(sys)?;
    let grid = TimeGrid::new(cost.horizon, dt)?;
    let n_mat = sys.b() * cost.r_pinv() * sys.b().transpose();
    let a = sys.a();
    let q = cost.q();
    let rhs = |s: &DMatrix<f64>| {
        let sa = s * a;
        q + sa.transpose() + &sa - s * &n_mat * s
    };
    // Integrated in reversed time tau = T - t, so index 0 of `backward` is t = T.
    let mut s = rk4_symmetric("Riccati solution", cost.q_terminal.clone(), &grid, true, false, rhs)?;
    s.reverse();
    for (k, sk) in s.iter().enumerate() {
        let min = crate::linalg::min_eigenvalue(sk);
        if min < -crate::linalg::PSD_TOL {
            return Err(Error::PsdLost { what: "Riccati solution", time: grid.time(k), min_eigenvalue: min });
        }
    }

    let trace_ds: Vec<f64> = s.iter().map(|sk| trace_product(sys.d(), sk)).collect();
    let mut noise_tail = vec![0.0; grid.len()];
    for k in (0..grid.steps()).rev() {
        noise_tail[k] = noise_tail[k + 1] + 0.5 * grid.dt() * (trace_ds[k] + trace_ds[k + 1]);
    }
    let uncertainty_weight = s.iter().map(|sk| sk * &n_mat * sk).collect();
    Ok(RiccatiPath { grid, s, noise_tail, uncertainty_weight })
}

/// Full-information LQR law `L_t = R⁺ Bᵀ S_t`.
pub fn lqr_gain(path: &RiccatiPath, sys: &LinearSystem, cost: &QuadraticCost) -> Result<ControlLaw> {
    if path.s[0].nrows() != sys.dim_x() {
        return Err(Error::Shape("Riccati path does not match the system".into()));
    }
    let rb = cost.r_pinv() * sys.b().transpose();
    let gains = path.s.iter().map(|s| &rb * s).collect();
    ControlLaw::new(path.grid, gains, BeliefSource::TrueState)
}

/// `xᵀ S_t x + ∫_t^T Tr(D S_s) ds`.
pub fn full_info_cost_to_go(x: &DVector<f64>, t: f64, path: &RiccatiPath) -> Result<f64> {
    let k = path.index_of(t)?;
    if x.len() != path.s[k].nrows() {
        return Err(Error::Shape("state length does not match the Riccati path".into()));
    }
    Ok(quad_form(x, &path.s[k]) + path.noise_tail[k])
}

/// `∫_{t_k}^T Tr(W_s Σ_s) ds` by the trapezoid rule, with `sigma[j]` at grid
/// point `k + j`.
pub(crate) fn weighted_trace_integral(path: &RiccatiPath, k: usize, sigma: &[DMatrix<f64>]) -> f64 {
    let n = sigma.len();
    debug_assert_eq!(n, path.grid.len() - k);
    let mut acc = 0.0;
    for (j, s) in sigma.iter().enumerate() {
        acc += trapezoid_weight(j, n) * trace_product(&path.uncertainty_weight[k + j], s);
    }
    acc * path.grid.dt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{make_oscillator, make_ou, NoiseConvention};
    use crate::linalg::diag;
    use approx::assert_relative_eq;

    fn fig1a() -> (LinearSystem, QuadraticCost) {
        let sys = make_ou(1.0, 0.6, 0.2).unwrap();
        let cost = QuadraticCost::new(diag(&[0.1]), diag(&[0.1]), diag(&[0.001]), 2.0).unwrap();
        (sys, cost)
    }

    #[test]
    fn uncontrolled_lyapunov_closed_form() {
        let gamma = 0.7;
        let sys = LinearSystem::new(diag(&[-gamma]), diag(&[0.0]), diag(&[0.3])).unwrap();
        let cost = QuadraticCost::new(diag(&[0.0]), diag(&[1.0]), diag(&[2.0]), 1.5).unwrap();
        let path = solve_riccati(&sys, &cost, 1e-3).unwrap();
        for k in [0, 400, 1500] {
            let t = path.grid.time(k);
            let exact = 2.0 * (-2.0 * gamma * (1.5 - t)).exp();
            assert_relative_eq!(path.s(k)[(0, 0)], exact, max_relative = 1e-10);
        }
    }

    #[test]
    fn terminal_condition_is_exact() {
        let (sys, cost) = fig1a();
        let path = solve_riccati(&sys, &cost, 1e-3).unwrap();
        assert_eq!(path.s(path.grid.steps())[(0, 0)], 0.001);
        assert_eq!(path.noise_tail(path.grid.steps()), 0.0);
        let x = DVector::from_element(1, 2.0);
        assert_relative_eq!(full_info_cost_to_go(&x, 2.0, &path).unwrap(), 0.004, epsilon = 1e-15);
    }

    #[test]
    fn grid_refinement_fig1a() {
        let (sys, cost) = fig1a();
        let coarse = solve_riccati(&sys, &cost, 1e-3).unwrap().s(0)[(0, 0)];
        let fine = solve_riccati(&sys, &cost, 1e-5).unwrap().s(0)[(0, 0)];
        assert!(((coarse - fine) / fine).abs() < 1e-6);
    }

    #[test]
    fn gain_arithmetic() {
        let (sys, cost) = fig1a();
        let path = solve_riccati(&sys, &cost, 1e-2).unwrap();
        let law = lqr_gain(&path, &sys, &cost).unwrap();
        for k in 0..path.grid.len() {
            assert_relative_eq!(law.gain(k)[(0, 0)], 0.2 * path.s(k)[(0, 0)] / 0.1, epsilon = 1e-14);
        }
        // S = 1 gives L = b S / R = 2.
        let unit = RiccatiPath {
            grid: TimeGrid::from_steps(0.0, 1.0, 0),
            s: vec![diag(&[1.0])],
            noise_tail: vec![0.0],
            uncertainty_weight: vec![diag(&[0.0])],
        };
        assert_relative_eq!(lqr_gain(&unit, &sys, &cost).unwrap().gain(0)[(0, 0)], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn zero_cost_gives_zero_gain_and_zero_cost_to_go() {
        let sys = LinearSystem::new(diag(&[-1.0]), diag(&[1.0]), diag(&[0.0])).unwrap();
        let cost = QuadraticCost::new(diag(&[0.0]), diag(&[1.0]), diag(&[0.0]), 1.0).unwrap();
        let path = solve_riccati(&sys, &cost, 1e-2).unwrap();
        let law = lqr_gain(&path, &sys, &cost).unwrap();
        assert!(law.gains().iter().all(|g| g.amax() == 0.0));
        assert_eq!(full_info_cost_to_go(&DVector::zeros(1), 0.0, &path).unwrap(), 0.0);
    }

    #[test]
    fn oscillator_gain_acts_on_velocity_only() {
        let sys = make_oscillator(0.4, 0.8, 0.4, 1.0, NoiseConvention::Intensity).unwrap();
        let cost = QuadraticCost::new(diag(&[0.4, 0.0]), diag(&[0.0, 0.4]), diag(&[0.0, 0.0]), 5.0).unwrap();
        let path = solve_riccati(&sys, &cost, 1e-3).unwrap();
        let law = lqr_gain(&path, &sys, &cost).unwrap();
        let g = law.gain(0);
        assert_eq!(g.row(0).amax(), 0.0);
        assert!(g.row(1).amax() > 0.0);
    }

    #[test]
    fn free_control_channel_that_moves_state_is_rejected() {
        let sys = make_oscillator(0.4, 0.8, 0.4, 1.0, NoiseConvention::Intensity).unwrap();
        let cost = QuadraticCost::new(diag(&[0.4, 0.0]), diag(&[0.4, 0.0]), diag(&[0.0, 0.0]), 5.0).unwrap();
        assert!(solve_riccati(&sys, &cost, 1e-3).is_err());
    }

    #[test]
    fn blow_up_is_reported() {
        let sys = LinearSystem::new(diag(&[40.0]), diag(&[0.0]), diag(&[0.0])).unwrap();
        let cost = QuadraticCost::new(diag(&[1.0]), diag(&[1.0]), diag(&[1.0]), 1.0).unwrap();
        assert!(matches!(solve_riccati(&sys, &cost, 1e-3), Err(Error::BlowUp { .. })));
    }
}

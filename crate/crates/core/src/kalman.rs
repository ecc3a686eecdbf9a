//! Kalman-Bucy filtering for diffusion observations `dY = F X dt + G^{1/2} dV`
//! and the corresponding LQG cost-to-go.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::LinearSystem;
use crate::error::{invalid, Error, Result};
use crate::grid::{CovariancePath, TimeGrid};
use crate::linalg::{check_psd, diag, min_eigenvalue, quad_form, symmetrized, trace_product, PSD_TOL};
use crate::ode::rk4_symmetric;
use crate::riccati::{weighted_trace_integral, RiccatiPath};

#[derive(Clone, Debug)]
pub struct DiffusionObservation {
    f: DMatrix<f64>,
    g: DMatrix<f64>,
    g_inv: DMatrix<f64>,
    information: DMatrix<f64>,
}

impl DiffusionObservation {
    pub fn new(f: DMatrix<f64>, g: DMatrix<f64>) -> Result<Self> {
        check_psd(&g, "G")?;
        if g.nrows() != f.nrows() {
            return Err(Error::Shape(format!("F has {} rows but G is {}x{}", f.nrows(), g.nrows(), g.ncols())));
        }
        let g_inv = g
            .clone()
            .cholesky()
            .ok_or_else(|| invalid("observation noise covariance G must be positive definite"))?
            .inverse();
        let information = symmetrized(f.transpose() * &g_inv * &f);
        Ok(Self { f, g, g_inv, information })
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn g_inv(&self) -> &DMatrix<f64> {
        &self.g_inv
    }

    /// Observation precision `Fᵀ G⁻¹ F`.
    pub fn information(&self) -> &DMatrix<f64> {
        &self.information
    }

    /// Same noise, different observation drift.
    pub fn with_drift(self, f: DMatrix<f64>) -> Result<Self> {
        Self::new(f, self.g)
    }

    fn check_against(&self, sys: &LinearSystem) -> Result<()> {
        if self.f.ncols() != sys.dim_x() {
            return Err(Error::Shape(format!("F has {} columns, state dimension is {}", self.f.ncols(), sys.dim_x())));
        }
        Ok(())
    }
}

/// Constant-determinant noise family `G(ζ) = g² diag(tan ζ, cot ζ)`, `F = I`.
pub fn constant_det_noise(zeta: f64, g: f64) -> Result<DiffusionObservation> {
    if !(zeta > 0.0 && zeta < std::f64::consts::FRAC_PI_2) {
        return Err(invalid(format!("anisotropy angle must lie in (0, pi/2), got {zeta}")));
    }
    if !(g > 0.0) {
        return Err(invalid(format!("noise scale must be positive, got {g}")));
    }
    let g2 = g * g;
    DiffusionObservation::new(DMatrix::identity(2, 2), diag(&[g2 * zeta.tan(), g2 / zeta.tan()]))
}

#[derive(Clone, Debug)]
pub struct KalmanBelief {
    pub nu: DVector<f64>,
    pub k: DMatrix<f64>,
    pub t: f64,
}

fn kalman_rhs(sys: &LinearSystem, obs: &DiffusionObservation, k: &DMatrix<f64>) -> DMatrix<f64> {
    // Written as Lyapunov minus correction so that F = 0 reproduces the prior path bit for bit.
    sys.lyapunov_rhs(k) - k * obs.information() * k
}

/// RK4 path of `dK/dt = AK + KAᵀ + D - K Fᵀ G⁻¹ F K` on `[0, horizon]`.
pub fn propagate_kalman_covariance(
    sys: &LinearSystem,
    obs: &DiffusionObservation,
    k0: &DMatrix<f64>,
    dt: f64,
    horizon: f64,
) -> Result<CovariancePath> {
    let grid = TimeGrid::new(horizon, dt)?;
    propagate_on(sys, obs, k0, &grid)
}

pub(crate) fn propagate_on(
    sys: &LinearSystem,
    obs: &DiffusionObservation,
    k0: &DMatrix<f64>,
    grid: &TimeGrid,
) -> Result<CovariancePath> {
    obs.check_against(sys)?;
    check_psd(k0, "K0")?;
    if k0.nrows() != sys.dim_x() {
        return Err(Error::Shape("K0 does not match the state dimension".into()));
    }
    let values = rk4_symmetric("Kalman covariance", k0.clone(), grid, false, true, |k| kalman_rhs(sys, obs, k))?;
    Ok(CovariancePath::new(*grid, values))
}

/// `∫_t^T Tr(S_s B R⁺ Bᵀ S_s K_s) ds` with `K` propagated from `k_t` at `t`.
pub fn lqg_uncertainty_penalty(
    k_t: &DMatrix<f64>,
    t: f64,
    path: &RiccatiPath,
    sys: &LinearSystem,
    obs: &DiffusionObservation,
) -> Result<f64> {
    let k = path.index_of(t)?;
    let tail = path.grid.tail(k);
    let ks = propagate_on(sys, obs, k_t, &tail)?;
    Ok(weighted_trace_integral(path, k, &ks.values))
}

/// LQG cost-to-go `νᵀSν + Tr(K S) + ∫Tr(D S) + ∫Tr(S B R⁺ Bᵀ S K)`.
pub fn lqg_cost_to_go(
    belief: &KalmanBelief,
    path: &RiccatiPath,
    sys: &LinearSystem,
    obs: &DiffusionObservation,
) -> Result<f64> {
    let k = path.index_of(belief.t)?;
    let s = path.s(k);
    if belief.nu.len() != s.nrows() {
        return Err(Error::Shape("belief does not match the Riccati path".into()));
    }
    Ok(quad_form(&belief.nu, s)
        + trace_product(&belief.k, s)
        + path.noise_tail(k)
        + lqg_uncertainty_penalty(&belief.k, belief.t, path, sys, obs)?)
}

/// Euler step of the Kalman-Bucy filter for an observation increment `dy`.
pub fn kalman_filter_step(
    belief: &KalmanBelief,
    dy: &DVector<f64>,
    u: &DVector<f64>,
    sys: &LinearSystem,
    obs: &DiffusionObservation,
    dt: f64,
) -> Result<KalmanBelief> {
    obs.check_against(sys)?;
    if dy.len() != obs.f.nrows() || u.len() != sys.dim_u() || belief.nu.len() != sys.dim_x() {
        return Err(Error::Shape("filter step inputs have inconsistent lengths".into()));
    }
    let innovation = dy - &obs.f * &belief.nu * dt;
    let gain = &belief.k * obs.f.transpose() * &obs.g_inv;
    let nu = &belief.nu + (sys.a() * &belief.nu + sys.b() * u) * dt + gain * innovation;
    let k = symmetrized(&belief.k + kalman_rhs(sys, obs, &belief.k) * dt);
    let min = min_eigenvalue(&k);
    if min < -PSD_TOL {
        return Err(Error::PsdLost { what: "Kalman covariance", time: belief.t + dt, min_eigenvalue: min });
    }
    Ok(KalmanBelief { nu, k, t: belief.t + dt })
}

/// Fixed point of the Kalman covariance ODE, found by integrating from `k0`
/// until `‖dK/dt‖ < 1e-10`.
pub fn kalman_equilibrium(
    sys: &LinearSystem,
    obs: &DiffusionObservation,
    k0: &DMatrix<f64>,
    dt: f64,
) -> Result<DMatrix<f64>> {
    const TOL: f64 = 1e-10;
    const MAX_TIME: f64 = 1e5;
    obs.check_against(sys)?;
    let chunk = TimeGrid::from_steps(0.0, dt, 1000);
    let mut k = k0.clone();
    let mut elapsed = 0.0;
    while elapsed < MAX_TIME {
        if kalman_rhs(sys, obs, &k).amax() < TOL {
            return Ok(k);
        }
        let values = rk4_symmetric("Kalman covariance", k, &chunk, false, false, |m| kalman_rhs(sys, obs, m))?;
        k = values.into_iter().last().expect("chunk is non-empty");
        elapsed += chunk.end();
    }
    Err(Error::Numerical("Kalman covariance did not reach equilibrium".into()))
}

/// Equilibrium MMSE `Tr(W K_∞)`.
pub fn kalman_mmse(sys: &LinearSystem, obs: &DiffusionObservation, weight: &DMatrix<f64>, dt: f64) -> Result<f64> {
    let start = DMatrix::identity(sys.dim_x(), sys.dim_x());
    Ok(trace_product(weight, &kalman_equilibrium(sys, obs, &start, dt)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{make_2d_product, make_ou};
    use approx::assert_relative_eq;

    #[test]
    fn no_observation_gives_lyapunov_equilibrium() {
        let sys = make_ou(0.5, 0.4, 1.0).unwrap();
        let obs = DiffusionObservation::new(diag(&[0.0]), diag(&[1.0])).unwrap();
        let k = kalman_equilibrium(&sys, &obs, &diag(&[0.0]), 1e-2).unwrap();
        assert_relative_eq!(k[(0, 0)], 0.4, epsilon = 1e-9);
    }

    #[test]
    fn pure_observation_closed_form() {
        let sys = LinearSystem::new(diag(&[0.0]), diag(&[0.0]), diag(&[0.0])).unwrap();
        let obs = DiffusionObservation::new(diag(&[1.0]), diag(&[1.0])).unwrap();
        let path = propagate_kalman_covariance(&sys, &obs, &diag(&[1.0]), 1e-3, 3.0).unwrap();
        for k in [0, 1000, 3000] {
            let t = path.grid.time(k);
            assert_relative_eq!(path.values[k][(0, 0)], 1.0 / (1.0 + t), max_relative = 1e-10);
        }
    }

    #[test]
    fn constant_determinant_family() {
        let g = 0.7;
        for zeta in [0.3, std::f64::consts::FRAC_PI_4, 1.2] {
            let obs = constant_det_noise(zeta, g).unwrap();
            assert_relative_eq!(obs.g().determinant(), g.powi(4), max_relative = 1e-12);
        }
        let iso = constant_det_noise(std::f64::consts::FRAC_PI_4, g).unwrap();
        assert_relative_eq!(iso.g()[(0, 0)], g * g, epsilon = 1e-15);
        assert_relative_eq!(iso.g()[(1, 1)], g * g, epsilon = 1e-15);
        assert!(constant_det_noise(0.0, g).is_err());
        assert!(constant_det_noise(std::f64::consts::FRAC_PI_2, g).is_err());
    }

    #[test]
    fn isotropic_mmse_symmetric_about_quarter_pi() {
        let sys = make_2d_product(&make_ou(1.0, 0.6, 0.2).unwrap());
        let w = DMatrix::identity(2, 2);
        let q = std::f64::consts::FRAC_PI_4;
        for delta in [0.1, 0.3, 0.6] {
            let lo = kalman_mmse(&sys, &constant_det_noise(q - delta, 0.5).unwrap(), &w, 1e-2).unwrap();
            let hi = kalman_mmse(&sys, &constant_det_noise(q + delta, 0.5).unwrap(), &w, 1e-2).unwrap();
            assert_relative_eq!(lo, hi, max_relative = 1e-8);
        }
    }

    #[test]
    fn zero_innovation_follows_flow_and_blind_filter_ignores_data() {
        let sys = make_ou(1.0, 0.6, 0.5).unwrap();
        let obs = DiffusionObservation::new(diag(&[1.0]), diag(&[0.5])).unwrap();
        let b = KalmanBelief { nu: DVector::from_element(1, 2.0), k: diag(&[0.3]), t: 0.0 };
        let u = DVector::from_element(1, 0.4);
        let dt = 1e-3;
        let dy = obs.f() * &b.nu * dt;
        let next = kalman_filter_step(&b, &dy, &u, &sys, &obs, dt).unwrap();
        assert_relative_eq!(next.nu[0], 2.0 + (-2.0 + 0.5 * 0.4) * dt, epsilon = 1e-15);

        let blind = DiffusionObservation::new(diag(&[0.0]), diag(&[0.5])).unwrap();
        let a = kalman_filter_step(&b, &DVector::from_element(1, 5.0), &u, &sys, &blind, dt).unwrap();
        let c = kalman_filter_step(&b, &DVector::from_element(1, -5.0), &u, &sys, &blind, dt).unwrap();
        assert_eq!(a.nu, c.nu);
    }

    #[test]
    fn no_control_removes_last_term() {
        let sys = LinearSystem::new(diag(&[-1.0]), diag(&[0.0]), diag(&[0.6])).unwrap();
        let cost = crate::riccati::QuadraticCost::new(diag(&[0.1]), diag(&[0.1]), diag(&[0.001]), 2.0).unwrap();
        let path = crate::riccati::solve_riccati(&sys, &cost, 1e-3).unwrap();
        let obs = DiffusionObservation::new(diag(&[1.0]), diag(&[0.5])).unwrap();
        let belief = KalmanBelief { nu: DVector::from_element(1, 0.7), k: diag(&[0.2]), t: 0.0 };
        let j = lqg_cost_to_go(&belief, &path, &sys, &obs).unwrap();
        let s0 = path.s(0)[(0, 0)];
        assert_relative_eq!(j, 0.49 * s0 + 0.2 * s0 + path.noise_tail(0), epsilon = 1e-14);
    }
}

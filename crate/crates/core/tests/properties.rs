use approx::assert_relative_eq;
use proptest::prelude::*;
use taskcode::belief::{control_penalty_f, mc_expected_covariance};
use taskcode::codec::covariance_jump;
use taskcode::kalman::propagate_kalman_covariance;
use taskcode::linalg::{diag, min_eigenvalue};
use taskcode::mutual_info::{mi_kalman, prior_covariance};
use taskcode::riccati::solve_riccati;
use taskcode::sweep::{Family, SweepConfig};
use taskcode::{DMatrix, DiffusionObservation, LinearSystem, PenaltyMethod, PriorSpec, QuadraticCost};

fn matrix(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0..1.0f64, n * n).prop_map(move |v| DMatrix::from_vec(n, n, v))
}

fn spd(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    matrix(n).prop_map(move |m| &m * m.transpose() + DMatrix::identity(n, n) * 0.05)
}

/// Random PSD matrix of the given rank.
fn psd_of_rank(n: usize, rank: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0..1.0f64, n * rank).prop_map(move |v| {
        let m = DMatrix::from_vec(n, rank, v);
        &m * m.transpose()
    })
}

/// Hurwitz drift: a random matrix shifted left of its spectral radius bound.
fn stable(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    matrix(n).prop_map(move |m| {
        let shift = m.iter().map(|v| v.abs()).sum::<f64>() + 0.1;
        m - DMatrix::identity(n, n) * shift
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spike_jump_shrinks_covariance(sigma in spd(3), pd in psd_of_rank(3, 2)) {
        let after = covariance_jump(&sigma, &pd);
        prop_assert!((&after - after.transpose()).amax() < 1e-12);
        prop_assert!(min_eigenvalue(&after) > -1e-10);
        prop_assert!(min_eigenvalue(&(&sigma - &after)) > -1e-10);
    }

    #[test]
    fn riccati_path_is_symmetric_psd(a in stable(2), b in matrix(2), q in psd_of_rank(2, 1), qt in psd_of_rank(2, 2)) {
        let sys = LinearSystem::new(a, b, DMatrix::identity(2, 2) * 0.3).unwrap();
        let cost = QuadraticCost::new(q, DMatrix::identity(2, 2) * 0.5, qt, 1.0).unwrap();
        let path = solve_riccati(&sys, &cost, 1e-2).unwrap();
        for s in path.s_all() {
            prop_assert!((s - s.transpose()).amax() < 1e-12);
            prop_assert!(min_eigenvalue(s) > -1e-9);
        }
        for k in 1..path.grid.len() {
            prop_assert!(path.noise_tail(k - 1) >= path.noise_tail(k) - 1e-12);
        }
    }

    #[test]
    fn observation_never_increases_covariance(a in stable(2), f in matrix(2), sigma0 in spd(2)) {
        let sys = LinearSystem::new(a, DMatrix::zeros(2, 2), diag(&[0.2, 0.4])).unwrap();
        let obs = DiffusionObservation::new(f, diag(&[0.5, 1.0])).unwrap();
        let prior = PriorSpec::centered(sigma0.clone()).unwrap();
        let observed = propagate_kalman_covariance(&sys, &obs, &sigma0, 1e-2, 1.0).unwrap();
        let unobserved = prior_covariance(&sys, &prior, 1e-2, 1.0).unwrap();
        for (k, k0) in observed.values.iter().zip(&unobserved.values) {
            prop_assert!(min_eigenvalue(&(k0 - k)) > -1e-9);
        }
        prop_assert!(mi_kalman(&sys, &obs, &prior, 1.0, 1e-2).unwrap() >= -1e-12);
    }

    #[test]
    fn kalman_mi_is_invariant_under_reparametrisation(
        a in stable(2),
        f in matrix(2),
        sigma0 in spd(2),
        m in matrix(2),
    ) {
        let m = m + DMatrix::identity(2, 2) * 2.0;
        let m_inv = m.clone().try_inverse().unwrap();
        let d = diag(&[0.3, 0.2]);
        let g = diag(&[0.5, 0.8]);
        let sys = LinearSystem::new(a.clone(), DMatrix::zeros(2, 2), d.clone()).unwrap();
        let obs = DiffusionObservation::new(f.clone(), g.clone()).unwrap();
        let prior = PriorSpec::centered(sigma0.clone()).unwrap();

        let sys2 = LinearSystem::new(&m * a * &m_inv, DMatrix::zeros(2, 2), &m * d * m.transpose()).unwrap();
        let obs2 = DiffusionObservation::new(f * &m_inv, g).unwrap();
        let prior2 = PriorSpec::centered(&m * sigma0 * m.transpose()).unwrap();

        let i1 = mi_kalman(&sys, &obs, &prior, 1.0, 1e-3).unwrap();
        let i2 = mi_kalman(&sys2, &obs2, &prior2, 1.0, 1e-3).unwrap();
        prop_assert!((i1 - i2).abs() < 1e-6 * (1.0 + i1.abs()), "{} vs {}", i1, i2);
    }

    #[test]
    fn expected_covariance_stays_psd(seed in any::<u64>(), p in 0.2..3.0f64) {
        let cfg = SweepConfig::fig1b();
        let sys = cfg.system().unwrap();
        let sigma0 = cfg.sigma0(&sys).unwrap();
        let codec = cfg.codec_at(p, &sigma0).unwrap();
        let ens = mc_expected_covariance(&sigma0, &codec, &sys, 1e-2, 1.0, 16, seed).unwrap();
        for s in &ens.mean.values {
            prop_assert!(min_eigenvalue(s) > -1e-9);
        }
    }
}

fn meanfield_f(cfg: &SweepConfig, cost: &QuadraticCost, value: f64) -> f64 {
    let sys = cfg.system().unwrap();
    let sigma0 = cfg.sigma0(&sys).unwrap();
    let codec = cfg.codec_at(value, &sigma0).unwrap();
    let path = solve_riccati(&sys, cost, cfg.run.dt).unwrap();
    control_penalty_f(&sigma0, 0.0, &path, &codec, &sys, PenaltyMethod::Meanfield).unwrap().value
}

fn argmin(values: &[f64]) -> usize {
    values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0
}

#[test]
fn cost_scaling_leaves_control_argmin_unchanged() {
    let mut cfg = SweepConfig::fig1a();
    cfg.run.dt = 2e-3;
    let cost = cfg.cost().unwrap();
    let grid: Vec<f64> = (0..12).map(|k| 0.05 * 1.6f64.powi(k)).collect();
    let base: Vec<f64> = grid.iter().map(|&p| meanfield_f(&cfg, &cost, p)).collect();
    for c in [0.01, 3.0, 250.0] {
        let scaled_cost = cost.scaled(c).unwrap();
        let scaled: Vec<f64> = grid.iter().map(|&p| meanfield_f(&cfg, &scaled_cost, p)).collect();
        assert_eq!(argmin(&base), argmin(&scaled));
        for (b, s) in base.iter().zip(&scaled) {
            assert_relative_eq!(s / b, c, max_relative = 1e-6);
        }
    }
}

#[test]
fn swapping_state_costs_reflects_penalty_about_quarter_pi() {
    let mut cfg = SweepConfig::fig2_ou();
    assert_eq!(cfg.codec.family, Family::Anisotropy);
    cfg.run.dt = 2e-3;
    let cost = cfg.cost().unwrap();
    let mut swapped = cfg.clone();
    swapped.cost.q.swap(0, 1);
    let swapped_cost = swapped.cost().unwrap();
    let quarter = std::f64::consts::FRAC_PI_4;
    for offset in [0.0, 0.1, 0.3, 0.6] {
        let f = meanfield_f(&cfg, &cost, quarter - offset);
        let g = meanfield_f(&swapped, &swapped_cost, quarter + offset);
        assert_relative_eq!(f, g, max_relative = 1e-8);
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let cfg = SweepConfig::fig1a();
    let sys = cfg.system().unwrap();
    let sigma0 = cfg.sigma0(&sys).unwrap();
    let codec = cfg.codec_at(0.7, &sigma0).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| mc_expected_covariance(&sigma0, &codec, &sys, 1e-3, 0.5, 300, 42).unwrap())
    };
    let one = run(1);
    let four = run(4);
    for (a, b) in one.mean.values.iter().zip(&four.mean.values) {
        assert_eq!(a, b);
    }
    for (a, b) in one.std_err.iter().zip(&four.std_err) {
        assert_eq!(a, b);
    }
}

use hwm_ruin::dynamics::{
    self, estimate_objective, euler_step, path_rng, sample_default, simulate_path, watermark_report,
    ConstantPolicy, PathState, PathStatus, SimConfig,
};
use hwm_ruin::linalg;
use hwm_ruin::model::{self, Model, State};
use hwm_ruin::params::MarketParams;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn with_benchmark_noise() -> Model {
    let mut p = MarketParams::reference();
    p.sigma_b = [[0.12, 0.03], [0.02, 0.1]];
    Model::new(p).unwrap()
}

fn cfg(n_paths: usize, seed: u64) -> SimConfig {
    SimConfig { dt: 1e-2, t_max: 175.0, n_paths, seed, store_trajectories: false }
}

#[test]
fn default_time_has_mean_one_over_lambda() {
    let mut rng = path_rng(11, 0);
    let n = 200_000;
    let draws: Vec<f64> = (0..n).map(|_| sample_default(&mut rng, 0.04)).collect();
    let mean = dynamics::pairwise_sum(&draws) / n as f64;
    // Exp(λ) has standard deviation 1/λ
    let se = 25.0 / (n as f64).sqrt();
    assert!((mean - 25.0).abs() < 4.0 * se, "mean {mean}");
}

#[test]
fn idle_strategy_ruin_frequency_matches_closed_form() {
    let m = Model::new(MarketParams::reference()).unwrap();
    let est = estimate_objective(&m, &ConstantPolicy::idle(), State::new(30.0, 0.0, 0.0), &cfg(40_000, 3)).unwrap();
    let exact = model::no_invest_value(&m, 30.0).unwrap();
    assert_eq!(exact, 0.25);
    assert!((est.mean - exact).abs() <= 3.0 * est.stderr + 1e-3, "{est:?}");
    assert_eq!(est.penalty_mean, 0.0);
}

/// At x = c/r with π = 0 wealth never moves, so only the penalty accrues,
/// `‖θ‖²/(2ε)·E[min(τ_D, T)] = ‖θ‖²/(2ε)·(1 − e^{−λT})/λ`.
#[test]
fn entropy_penalty_matches_capped_default_time() {
    let m = Model::new(MarketParams::reference()).unwrap();
    let theta = [0.3, -0.4];
    let policy = ConstantPolicy { pi: [0.0, 0.0], theta };
    let t_max = 30.0;
    let sim = SimConfig { dt: 0.05, t_max, n_paths: 40_000, seed: 9, store_trajectories: false };
    let est = estimate_objective(&m, &policy, State::new(50.0, 0.0, 0.0), &sim).unwrap();
    let lam = 0.04;
    let rate = linalg::norm2(theta) / 2.0;
    let exact = rate * (1.0 - (-lam * t_max).exp()) / lam;
    assert_eq!(est.ruin_fraction, 0.0);
    // capped default time has variance at most 1/λ²
    let se = rate * 25.0 / (40_000f64).sqrt();
    assert!((est.penalty_mean - exact).abs() < 4.0 * se, "{} vs {exact}", est.penalty_mean);
    assert!((est.mean + est.penalty_mean).abs() < 1e-12);
    assert!((est.truncation_fraction - (-lam * t_max).exp()).abs() < 0.01);
}

/// Drive `euler_step` with known increments and compare the raw watermark
/// with the Skorokhod map of the free distance path: `M̄ − y₀ = max(0, max_s −Ŷ_s)`.
#[test]
fn raw_watermark_is_running_maximum_of_free_path() {
    let m = with_benchmark_noise();
    let d = m.derived;
    let pi = [2.5, -1.5];
    let theta = [0.1, 0.2];
    let y0 = [0.3, 0.05];
    let dt: f64 = 0.01;
    let mut rng = path_rng(5, 1);
    let mut s = PathState::start(State::new(45.0, y0[0], y0[1]));
    let mut free = [0.0f64; 2];
    let mut run_max = [0.0f64; 2];
    let mut traj = vec![dynamics::TrajectoryPoint::from(&s)];
    for _ in 0..3000 {
        let dw = [rng.sample::<f64, _>(StandardNormal) * dt.sqrt(), rng.sample::<f64, _>(StandardNormal) * dt.sqrt()];
        let drift = linalg::add(d.mu_b_delta, linalg::mat_vec(&d.sigma_b_delta, theta));
        let noise = linalg::mat_vec(&d.sigma_b_delta, dw);
        for i in 0..2 {
            free[i] += -pi[i] * (drift[i] * dt + noise[i]);
            run_max[i] = run_max[i].max(-(y0[i] + free[i]));
        }
        s = euler_step(&s, pi, theta, dt, dw, &m).unwrap();
        traj.push(dynamics::TrajectoryPoint::from(&s));
        if s.status != PathStatus::Alive {
            break;
        }
        for i in 0..2 {
            let push = s.m_raw[i] - y0[i];
            assert!((push - run_max[i]).abs() < 1e-10 * (1.0 + run_max[i]), "fund {i}: {push} vs {}", run_max[i]);
            // reflected path = free path + push
            assert!((s.y[i] - (y0[i] + free[i] + push)).abs() < 1e-10 * (1.0 + push));
            assert!(s.y[i] >= 0.0);
        }
    }
    assert!(run_max.iter().all(|&v| v > 0.0), "the test path must reflect on both funds");
    let w = watermark_report(&traj, m.params.q);
    assert!(w[0] < 1e-10 && w[1] < 1e-10);
}

/// A fee-paying path and its fee-free twin see the same Brownian increments.
/// Their wealth gap obeys `D' = D(1 + r dt) + q·dM` exactly.
#[test]
fn fees_are_conserved_against_a_fee_free_twin() {
    let m = with_benchmark_noise();
    let mut p0 = m.params.clone();
    p0.q = [0.0, 0.0];
    let m0 = Model::new(p0).unwrap();
    let pi = [1.5, 1.0];
    let dt: f64 = 0.01;
    let z = State::new(40.0, 0.2, 0.1);
    let mut a = PathState::start(z);
    let mut b = PathState::start(z);
    let mut gap = 0.0;
    let mut rng = path_rng(21, 0);
    let mut total_fees = 0.0;
    for _ in 0..1500 {
        let dw = [rng.sample::<f64, _>(StandardNormal) * dt.sqrt(), rng.sample::<f64, _>(StandardNormal) * dt.sqrt()];
        let before = a.m;
        a = euler_step(&a, pi, [0.0; 2], dt, dw, &m).unwrap();
        b = euler_step(&b, pi, [0.0; 2], dt, dw, &m0).unwrap();
        if a.status != PathStatus::Alive || b.status != PathStatus::Alive {
            break;
        }
        let fee: f64 = (0..2).map(|i| m.params.q[i] * (a.m[i] - before[i])).sum();
        total_fees += fee;
        gap = gap * (1.0 + m.params.r * dt) + fee;
        assert!(((b.x - a.x) - gap).abs() < 1e-9, "{} vs {gap}", b.x - a.x);
        assert_eq!(a.y, b.y);
        for i in 0..2 {
            // identical pushes, different regulator increments
            assert!(((a.m_raw[i] - z.y()[i]) - (b.m_raw[i] - z.y()[i])).abs() < 1e-12);
        }
    }
    assert!(total_fees > 0.0);
}

/// With π = 0 wealth follows `x' = rx − c`; the Euler value at a fixed time
/// converges to `c/r + (x₀ − c/r)e^{rT}` at first order in dt.
#[test]
fn euler_wealth_is_first_order_in_dt() {
    let m = Model::new(MarketParams::reference()).unwrap();
    let p = &m.params;
    let (x0, horizon) = (45.0, 20.0);
    let exact = p.safe_level() + (x0 - p.safe_level()) * (p.r * horizon).exp();
    let err = |n: usize| {
        let dt = horizon / n as f64;
        let mut s = PathState::start(State::new(x0, 0.0, 0.0));
        for _ in 0..n {
            s = euler_step(&s, [0.0; 2], [0.0; 2], dt, [0.0; 2], &m).unwrap();
        }
        (s.x - exact).abs()
    };
    let (e1, e2, e3) = (err(250), err(500), err(1000));
    let o1 = (e1 / e2).log2();
    let o2 = (e2 / e3).log2();
    assert!((0.9..1.1).contains(&o1) && (0.9..1.1).contains(&o2), "orders {o1} {o2}");
}

#[test]
fn estimate_is_bit_identical_across_thread_counts() {
    let m = with_benchmark_noise();
    let policy = ConstantPolicy { pi: [1.0, -0.5], theta: [0.05, 0.0] };
    let sim = cfg(3_000, 17);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| estimate_objective(&m, &policy, State::new(25.0, 1.0, 0.5), &sim).unwrap())
    };
    let a = run(1);
    for t in [4, 8] {
        let b = run(t);
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
        assert_eq!(a, b);
    }
}

#[test]
fn paths_end_exactly_on_the_horizon() {
    let m = Model::new(MarketParams::reference()).unwrap();
    let sim = SimConfig { dt: 0.3, t_max: 1.0, n_paths: 1, seed: 0, store_trajectories: true };
    let mut found = false;
    for k in 0..50 {
        let mut rng = path_rng(1, k);
        let out = simulate_path(&m, &ConstantPolicy::idle(), State::new(50.0, 0.0, 0.0), &sim, &mut rng).unwrap();
        if let PathStatus::Truncated(t) = out.terminal.status {
            assert_eq!(t, 1.0);
            assert_eq!(out.terminal.t, 1.0);
            let traj = out.trajectory.unwrap();
            assert_eq!(traj.len(), 5);
            found = true;
        }
    }
    assert!(found);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn reflected_distances_stay_non_negative_and_identity_holds(
        seed in 0u64..1000,
        pi0 in -5.0..5.0f64,
        pi1 in -5.0..5.0f64,
        y1 in 0.0..2.0f64,
        y2 in 0.0..2.0f64,
    ) {
        let m = with_benchmark_noise();
        let sim = SimConfig { dt: 0.02, t_max: 5.0, n_paths: 1, seed, store_trajectories: true };
        let mut rng = path_rng(seed, 0);
        let policy = ConstantPolicy { pi: [pi0, pi1], theta: [0.0; 2] };
        let out = simulate_path(&m, &policy, State::new(30.0, y1, y2), &sim, &mut rng).unwrap();
        let traj = out.trajectory.unwrap();
        for pt in &traj {
            prop_assert!(pt.y[0] >= 0.0 && pt.y[1] >= 0.0);
        }
        for w in traj.windows(2) {
            for i in 0..2 {
                prop_assert!(w[1].m[i] >= w[0].m[i]);
                if w[1].m[i] > w[0].m[i] {
                    prop_assert_eq!(w[1].y[i], 0.0);
                }
            }
        }
        let r = watermark_report(&traj, m.params.q);
        prop_assert!(r[0] < 1e-10 && r[1] < 1e-10);
    }
}

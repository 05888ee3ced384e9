//! Randomized structural invariants across the library.

mod common;

use common::{gaussian, rng};
use ddsls::analysis::{lipschitz_bound_at, suboptimality_bound, tail_bound_matrix, BoundInputs, TailParams};
use ddsls::blockops::{
    block_downshift, max_abs, min_eigenvalue, shift_down, toeplitz_stack, CostWeights, LtvOperator, Mat, Vector,
};
use ddsls::hankel::{build_hankel, is_pe, Signal};
use ddsls::lqg::{optimal_responses, riccati_finite};
use ddsls::lti::{average, generate_ensemble, laplacian_benchmark, simulate, EnsembleOptions, LtiSystem};
use ddsls::sls::{achievability_residual, recover_controller, responses_from_controller, sls_cost};
use ddsls::solver::{AffineConstraintSet, AffineGroup, InnerProblem, PreparedProblem};
use proptest::prelude::*;

fn causal_controller(seed: u64, horizon: usize, m: usize, n: usize, scale: f64) -> LtvOperator {
    let mut r = rng(seed);
    let mut dense = gaussian(horizon * m, horizon * n, &mut r) * scale;
    for i in 0..horizon {
        for j in i + 1..horizon {
            dense.view_mut((i * m, j * n), (m, n)).fill(0.0);
        }
    }
    LtvOperator::causal(horizon, m, n, dense).unwrap()
}

fn random_system(seed: u64, n: usize, m: usize) -> LtiSystem {
    let mut r = rng(seed);
    LtiSystem::new(gaussian(n, n, &mut r) * 0.5, gaussian(n, m, &mut r), 0.3).unwrap()
}

fn random_weights(seed: u64, n: usize, m: usize) -> CostWeights {
    let mut r = rng(seed);
    let q = gaussian(n, n, &mut r);
    let rr = gaussian(m, m, &mut r);
    let qf = gaussian(n, n, &mut r);
    CostWeights::new(
        &q * q.transpose() + Mat::identity(n, n) * 1e-3,
        &rr * rr.transpose() + Mat::identity(m, m) * 0.1,
        &qf * qf.transpose(),
    )
    .unwrap()
}

fn bound_inputs(v: [f64; 5], horizon: usize) -> BoundInputs {
    BoundInputs {
        gstar_norm: v[0],
        epsilon: v[1],
        horizon,
        data_len: 4 * horizon,
        obs_norm: v[2],
        toep_norm: v[3],
        qhalf_frob: v[4],
        jstar: 1.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn downshift_is_nilpotent_of_order_horizon(horizon in 1usize..7, block in 1usize..4) {
        let z = block_downshift(horizon, block);
        let mut power = Mat::identity(horizon * block, horizon * block);
        for k in 1..=horizon {
            power = &z * &power;
            if k < horizon {
                prop_assert!(max_abs(&power) == 1.0);
            }
        }
        prop_assert_eq!(max_abs(&power), 0.0);
    }

    #[test]
    fn downshift_moves_toeplitz_one_block_row(seed in any::<u64>(), horizon in 1usize..7, n in 1usize..4, q in 1usize..3) {
        let mut r = rng(seed);
        let (a, x) = (gaussian(n, n, &mut r) * 0.7, gaussian(n, q, &mut r));
        let t = toeplitz_stack(&a, &x, horizon);
        let shifted = block_downshift(horizon, n) * &t;
        prop_assert_eq!(&shifted, &shift_down(&t, 1, n));
        for i in 0..horizon {
            for j in 0..horizon {
                let block = shifted.view((i * n, j * q), (n, q)).into_owned();
                if i >= 2 && j + 1 < i {
                    let mut expect = x.clone();
                    for _ in 0..i - j - 2 {
                        expect = &a * expect;
                    }
                    prop_assert!(max_abs(&(block - expect)) <= 1e-12);
                } else {
                    prop_assert_eq!(max_abs(&block), 0.0);
                }
            }
        }
    }

    #[test]
    fn hankel_columns_are_windows(seed in any::<u64>(), p in 1usize..4, horizon in 1usize..20, order in 1usize..6) {
        prop_assume!(order <= horizon);
        let s = Signal::new(gaussian(p, horizon, &mut rng(seed))).unwrap();
        let h = build_hankel(&s, order).unwrap();
        prop_assert_eq!(h.dense().nrows(), p * order);
        prop_assert_eq!(h.width(), horizon - order + 1);
        for t in 0..h.width() {
            let col: Vector = h.dense().column(t).into_owned();
            prop_assert_eq!(col, s.window(t, order));
        }
    }

    #[test]
    fn persistency_of_excitation_is_monotone(seed in any::<u64>(), p in 1usize..3, rank in 1usize..4, horizon in 4usize..30) {
        // Low-rank mixing makes some orders fail.
        let mut r = rng(seed);
        let s = Signal::new(gaussian(p, rank, &mut r) * gaussian(rank, horizon, &mut r)).unwrap();
        let orders: Vec<bool> = (1..=horizon).map(|k| is_pe(&s, k).persistently_exciting).collect();
        for k in 1..orders.len() {
            prop_assert!(!orders[k] || orders[k - 1], "PE of order {} but not {}", k + 1, k);
        }
    }

    #[test]
    fn trajectories_satisfy_dynamics_and_averaging_commutes(seed in any::<u64>(), members in 1usize..6) {
        let sys = laplacian_benchmark();
        let ens = generate_ensemble(&sys, 20, members, seed, &EnsembleOptions::default()).unwrap();
        for m in ens.members() {
            prop_assert!(m.dynamics_residual(&sys) < 1e-10);
        }
        let avg = average(&ens).unwrap();
        prop_assert!(avg.dynamics_residual(&sys) < 1e-10);
        let replay = simulate(&sys, &avg.x0(), avg.u(), &avg.driving_noise()).unwrap();
        prop_assert!(max_abs(&(replay.x().samples() - avg.x().samples())) < 1e-10);
        let again = generate_ensemble(&sys, 20, members, seed, &EnsembleOptions::default()).unwrap();
        prop_assert_eq!(ens, again);
    }

    #[test]
    fn controller_responses_round_trip(seed in any::<u64>(), horizon in 1usize..6, n in 1usize..4, m in 1usize..3) {
        let sys = random_system(seed, n, m);
        let k = causal_controller(seed ^ 1, horizon, m, n, 0.5);
        let phi = responses_from_controller(&sys, &k, horizon).unwrap();
        prop_assert!(achievability_residual(&phi, &sys).unwrap() < 1e-10);
        let back = recover_controller(&phi).unwrap();
        prop_assert!(max_abs(&(back.dense() - k.dense())) < 1e-9);
    }

    #[test]
    fn riccati_values_are_symmetric_psd(seed in any::<u64>(), horizon in 1usize..8, n in 1usize..4, m in 1usize..3) {
        let sys = random_system(seed, n, m);
        let sol = riccati_finite(&sys, &random_weights(seed ^ 2, n, m), horizon).unwrap();
        for p in &sol.value {
            prop_assert!(max_abs(&(p - p.transpose())) <= 1e-12 * (1.0 + max_abs(p)));
            prop_assert!(min_eigenvalue(p) >= -1e-10 * (1.0 + max_abs(p)));
        }
    }

    #[test]
    fn optimal_cost_is_a_lower_bound(seed in any::<u64>(), horizon in 1usize..6, n in 1usize..4, m in 1usize..3) {
        let sys = random_system(seed, n, m);
        let weights = random_weights(seed ^ 3, n, m);
        let jstar = optimal_responses(&sys, &weights, horizon).unwrap().cost;
        let k = causal_controller(seed ^ 4, horizon, m, n, 0.5);
        let phi = responses_from_controller(&sys, &k, horizon).unwrap();
        prop_assert!(sls_cost(&phi, &weights).unwrap() >= jstar - 1e-9);
    }

    #[test]
    fn affine_projection_is_exact_and_idempotent(seed in any::<u64>(), e in 1usize..4, extra in 1usize..5, k in 1usize..3) {
        let mut r = rng(seed);
        let rows = e + extra;
        let group = AffineGroup { lhs: gaussian(e, rows, &mut r), rhs: gaussian(e, k, &mut r) };
        let set = AffineConstraintSet::new(rows, vec![group.clone()]).unwrap();
        let problem = InnerProblem::new(vec![gaussian(rows, rows, &mut r)], set, None).unwrap();
        let prepared = PreparedProblem::new(&problem).unwrap();
        let z = gaussian(rows, k, &mut r);
        let x = prepared.project_affine(&z);
        prop_assert!(max_abs(&(&group.lhs * &x - &group.rhs)) < 1e-10);
        prop_assert!(max_abs(&(prepared.project_affine(&x) - &x)) < 1e-10);
    }

    #[test]
    fn suboptimality_bound_is_linear_and_monotone(v in prop::array::uniform5(0.01..5.0_f64), horizon in 1usize..20, scale in 0.0..4.0_f64, which in 0usize..5) {
        let base = bound_inputs(v, horizon);
        let b = suboptimality_bound(&base).value;
        let scaled = suboptimality_bound(&base.with_epsilon(scale * base.epsilon)).value;
        prop_assert!((scaled - scale * b).abs() <= 1e-12 * (1.0 + scaled.abs()));
        let mut grown = v;
        grown[which] *= 1.5;
        prop_assert!(suboptimality_bound(&bound_inputs(grown, horizon)).value >= b);
    }

    #[test]
    fn tail_bounds_decrease_in_level_and_samples(t in 0.0..2.0_f64, dt in 0.0..1.0_f64, samples in 1usize..500, n in 1usize..4) {
        let p = TailParams { n, data_len: 45, samples, sigma2: 0.1 };
        let more = TailParams { samples: samples * 2, ..p };
        let matrix = tail_bound_matrix(t, &p).unwrap();
        prop_assert!(tail_bound_matrix(t + dt, &p).unwrap() <= matrix);
        prop_assert!(tail_bound_matrix(t, &more).unwrap() <= matrix);
        let lip = lipschitz_bound_at(t, &p).unwrap();
        prop_assert!(lipschitz_bound_at(t + dt, &p).unwrap() <= lip);
        prop_assert!(lipschitz_bound_at(t, &more).unwrap() <= lip);
    }
}

mod common;

use mast_core::optim::{
    align_kernel, gradient_pc, gradient_ps, objective_cross, objective_full, skew_step,
    stationarity_residual, FixedTraces,
};
use mast_core::{
    align, knn_affinity, normalize_affinity, procrustes_oracle, CrossKernel, ProjectionPair,
    SolverConfig, Termination,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

use common::*;

fn central_difference(
    k: &CrossKernel,
    pair: &ProjectionPair,
    wrt_content: bool,
    h: f64,
) -> DMatrix<f64> {
    let n = pair.dim();
    let eval = |p_c: DMatrix<f64>, p_s: DMatrix<f64>| {
        // Unconstrained evaluation: −2 tr(P_cᵀ K P_s) written out as a double sum.
        let m = p_c.transpose() * k.matrix() * p_s;
        -2.0 * (0..n).map(|i| m[(i, i)]).sum::<f64>()
    };
    DMatrix::from_fn(n, n, |r, c| {
        let (mut pc_p, mut ps_p) = (pair.p_c().clone(), pair.p_s().clone());
        let (mut pc_m, mut ps_m) = (pair.p_c().clone(), pair.p_s().clone());
        if wrt_content {
            pc_p[(r, c)] += h;
            pc_m[(r, c)] -= h;
        } else {
            ps_p[(r, c)] += h;
            ps_m[(r, c)] -= h;
        }
        (eval(pc_p, ps_p) - eval(pc_m, ps_m)) / (2.0 * h)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gradients_match_finite_differences(seed in any::<u64>(), n in 2usize..=8) {
        let mut r = rng(seed);
        let k = CrossKernel::from_matrix(DMatrix::from_fn(n, n, |_, _| r.random_range(-1.0..1.0))).unwrap();
        let pair = ProjectionPair::new(random_orthogonal(&mut r, n), random_orthogonal(&mut r, n)).unwrap();
        let gc = gradient_pc(&pair, &k).unwrap();
        let gs = gradient_ps(&pair, &k).unwrap();
        let fc = central_difference(&k, &pair, true, 1e-6);
        let fs = central_difference(&k, &pair, false, 1e-6);
        prop_assert!((&gc - &fc).norm() / gc.norm() <= 1e-5);
        prop_assert!((&gs - &fs).norm() / gs.norm() <= 1e-5);
    }

    #[test]
    fn skew_step_is_skew(seed in any::<u64>(), n in 1usize..=8) {
        let mut r = rng(seed);
        let g = DMatrix::from_fn(n, n, |_, _| r.random_range(-3.0..3.0));
        let p = random_orthogonal(&mut r, n);
        let s = skew_step(&g, &p).unwrap();
        prop_assert!((&s + s.transpose()).amax() <= 1e-14);
    }
}

#[test]
fn full_objective_matches_pair_sum() {
    for seed in 0..10 {
        let mut r = rng(seed);
        let content = random_map(&mut r, 4, 6, 5);
        let style = random_map(&mut r, 4, 7, 4);
        let na = normalize_affinity(&knn_affinity(&content, &style, 3).unwrap()).unwrap();
        let pair = ProjectionPair::new(random_orthogonal(&mut r, 4), random_orthogonal(&mut r, 4))
            .unwrap();
        let direct = brute_pair_objective(pair.p_c(), pair.p_s(), &content, &style, &na);
        let full = objective_full(&pair, &content, &style, &na).unwrap();
        assert!(
            (full - direct).abs() <= 1e-10,
            "seed {seed}: {full} vs {direct}"
        );

        // The cross term is the pair sum minus the projection-independent traces.
        let kernel = CrossKernel::new(&content, &style, &na).unwrap();
        let cross = objective_cross(&pair, &kernel).unwrap();
        let expected = direct - brute_fixed_terms(&content, &style, &na);
        assert!(
            (cross - expected).abs() <= 1e-10,
            "seed {seed}: {cross} vs {expected}"
        );
    }
}

#[test]
fn kernel_matches_dense_product() {
    let mut r = rng(5);
    let content = random_map(&mut r, 5, 9, 3);
    let style = random_map(&mut r, 5, 4, 4);
    let na = normalize_affinity(&knn_affinity(&content, &style, 2).unwrap()).unwrap();
    let dense = content.data() * na.to_dense() * style.data().transpose();
    let kernel = CrossKernel::new(&content, &style, &na).unwrap();
    assert!((kernel.matrix() - dense).amax() < 1e-12);
}

#[test]
fn procrustes_oracle_cross_checked_by_eigendecomposition() {
    for seed in 0..10 {
        let mut r = rng(100 + seed);
        let k = DMatrix::from_fn(6, 6, |_, _| r.random_range(-1.0..1.0));
        let kernel = CrossKernel::from_matrix(k.clone()).unwrap();
        let (transfer, value) = procrustes_oracle(&kernel);
        let nuclear: f64 = singular_values_via_eigen(&k).iter().sum();
        assert!((value + 2.0 * nuclear).abs() <= 1e-9 * nuclear);
        // V Uᵀ is orthogonal and attains the bound: tr(K Q) = Σσ.
        assert!((transfer.transpose() * &transfer - DMatrix::identity(6, 6)).norm() < 1e-10);
        assert!(((&k * &transfer).trace() - nuclear).abs() <= 1e-9 * nuclear);

        let (pair, report) = align_kernel(
            &kernel,
            None,
            &SolverConfig {
                max_iterations: 200,
                ..SolverConfig::default()
            },
        )
        .unwrap();
        assert_eq!(report.termination, Termination::Converged);
        assert!((report.final_objective() - value).abs() <= 1e-4 * value.abs());
        assert!(
            (objective_cross(&pair, &kernel).unwrap() - report.final_objective()).abs() < 1e-12
        );
    }
}

#[test]
fn solver_invariants_hold_along_the_trajectory() {
    for seed in 0..8 {
        let mut r = rng(200 + seed);
        let content = relu_map(&mut r, 8, 7, 6);
        let style = relu_map(&mut r, 8, 5, 9);
        let na = normalize_affinity(&knn_affinity(&content, &style, 5).unwrap()).unwrap();
        let kernel = CrossKernel::new(&content, &style, &na).unwrap();
        let bound = procrustes_oracle(&kernel).1;
        let (pair, report) = align(&content, &style, &na, &SolverConfig::default()).unwrap();

        assert!(report.orthogonality_trace.iter().all(|&e| e <= 1e-8));
        for w in report.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-10);
        }
        assert!(report
            .objective_trace
            .iter()
            .all(|&f| f >= bound - 1e-10 * bound.abs()));
        for trace in [&report.fixed_trace_c, &report.fixed_trace_s] {
            let first = trace[0];
            assert!(trace
                .iter()
                .all(|&v| (v - first).abs() <= 1e-8 * first.abs()));
        }
        // full − cross equals the fixed traces at the end point.
        let full = objective_full(&pair, &content, &style, &na).unwrap();
        let fixed = FixedTraces::new(&content, &style, &na)
            .unwrap()
            .evaluate(pair.p_c(), pair.p_s());
        assert!((full - report.final_objective() - fixed.0 - fixed.1).abs() < 1e-10);
        assert_eq!(report.tau_trace.len(), report.iterations_run);
        if report.termination == Termination::Converged {
            assert!(report.residual_c_trace.last().unwrap() <= &SolverConfig::default().epsilon);
            assert!(report.residual_s_trace.last().unwrap() <= &SolverConfig::default().epsilon);
        }
    }
}

#[test]
fn stationary_points_have_zero_skew_step() {
    let mut r = rng(7);
    let k = DMatrix::from_fn(5, 5, |_, _| r.random_range(-1.0..1.0));
    let kernel = CrossKernel::from_matrix(k.clone()).unwrap();
    let svd = k.svd(true, true);
    // P_c = U, P_s = V is the exact optimum.
    let pair = ProjectionPair::new(svd.u.unwrap(), svd.v_t.unwrap().transpose()).unwrap();
    let g = gradient_pc(&pair, &kernel).unwrap();
    let residual = stationarity_residual(&g, pair.p_c());
    assert!(residual < 1e-12);
    assert!(skew_step(&g, pair.p_c()).unwrap().norm() < 1e-12);
    let g = gradient_ps(&pair, &kernel).unwrap();
    assert!(stationarity_residual(&g, pair.p_s()) < 1e-12);
}

use super::*;
use crate::estimate::{
    estimate_one_stage, estimate_two_stage, EstimateOptions, ParameterVector,
};
use crate::models::{simulate_dgp, simulate_one_lag, Ar1Params, Arch1Params, DgpParams};
use crate::pool::{ConstituentParams, LinearPool, ModelId, WeightVector};
use crate::rng::stream;
use crate::scoring::average_score;
use rand::Rng;
use rand_distr::StandardNormal;

const LAYOUT: [ModelId; 2] = [ModelId::Ar1, ModelId::Arch1];

/// An interior pool used as the test data generator; fits on data drawn from
/// it stay well inside the parameter space, which the asymptotics require.
fn interior_pool() -> LinearPool {
    LinearPool::new(
        WeightVector::from_eta(0.6).unwrap(),
        vec![
            ConstituentParams::Ar1(Ar1Params::new(0.05, 0.4, 0.7).unwrap()),
            ConstituentParams::Arch1(Arch1Params::new(0.0, 0.35, 0.45).unwrap()),
        ],
    )
    .unwrap()
}

fn fitted(seed: u64, n: usize) -> (ObservedSeries, ParameterVector, ParameterVector) {
    let series = simulate_one_lag(&interior_pool(), 0.0, n, 200, &mut stream(seed, "asym", 0));
    let opts = EstimateOptions::default();
    let two = estimate_two_stage(&LAYOUT, &series, ScoringRule::LogScore, &opts).unwrap();
    let one =
        estimate_one_stage(&LAYOUT, &series, ScoringRule::LogScore, Some(&two.estimate), &opts)
            .unwrap();
    assert!(one.boundary_flags.is_empty(), "one-stage hit boundary: {:?}", one.boundary_flags);
    assert!(two.boundary_flags.is_empty(), "two-stage hit boundary: {:?}", two.boundary_flags);
    (series, one.estimate, two.estimate)
}

#[test]
fn first_order_conditions_hold_at_both_estimates() {
    let (series, theta_one, theta_two) = fitted(900, 1500);
    let rule = ScoringRule::LogScore;

    let q = moment_contributions(MomentMode::OneStage, &theta_one, &series, rule).unwrap();
    let q_mean = column_means(&q);
    assert!(q_mean.norm() < 1e-5, "one-stage FOC norm {}", q_mean.norm());

    let g = moment_contributions(MomentMode::TwoStage, &theta_two, &series, rule).unwrap();
    let g_mean = column_means(&g);
    assert!(g_mean[0].abs() < 1e-5, "g-block mean {}", g_mean[0]);
    let m_norm = g_mean.rows(1, 6).norm();
    assert!(m_norm < 1e-5, "m-block mean norm {m_norm}");
}

#[test]
fn contribution_rows_match_per_observation_finite_differences() {
    let (series, theta, _) = fitted(901, 400);
    let rule = ScoringRule::Censored { threshold: -0.6 };
    let v = series.values();
    let contribs = moment_contributions(MomentMode::OneStage, &theta, &series, rule).unwrap();
    let layout = theta.layout();
    let flat = theta.flatten();
    let caps = constraint_caps(&theta);
    for &t in &[1usize, 57, 200, 399] {
        let fd = crate::optim::central_difference_gradient(
            |x| {
                let th = ParameterVector::unflatten(&layout, x).unwrap();
                grad::pool_score(&th.pool().unwrap(), rule, v[t - 1], v[t])
            },
            &flat,
            Some(&caps),
        );
        for j in 0..7 {
            let a = contribs[(t - 1, j)];
            let err = (a - fd[j]).abs() / a.abs().max(fd[j].abs()).max(1e-3);
            assert!(err <= 1e-6, "t={t} coord {j}: analytic {a} vs fd {}", fd[j]);
        }
    }
}

#[test]
fn two_stage_lower_left_block_is_exactly_zero() {
    let (series, _, theta_two) = fitted(902, 500);
    let parts = jacobian(MomentMode::TwoStage, &theta_two, &series, ScoringRule::LogScore).unwrap();
    for i in 1..7 {
        assert_eq!(parts.m[(i, 0)], 0.0);
    }
    let (g_eta, g_gamma, m_gamma) = parts.blocks.unwrap();
    assert_eq!(g_eta.shape(), (1, 1));
    assert_eq!(g_gamma.shape(), (1, 6));
    assert_eq!(m_gamma.shape(), (6, 6));
}

#[test]
fn one_stage_jacobian_is_a_symmetric_hessian() {
    let (series, theta, _) = fitted(903, 800);
    let rule = ScoringRule::LogScore;
    let parts = jacobian(MomentMode::OneStage, &theta, &series, rule).unwrap();
    let m = &parts.m;
    let scale = m.iter().map(|x| x.abs()).fold(0.0, f64::max);
    for i in 0..7 {
        for j in 0..i {
            let asym = (m[(i, j)] - m[(j, i)]).abs() / scale;
            assert!(asym < 1e-4, "asymmetry {asym} at ({i},{j})");
        }
    }

    // Slow independent Hessian oracle on the scalar average score.
    let layout = theta.layout();
    let flat = theta.flatten();
    let caps = constraint_caps(&theta);
    let f = |x: &[f64]| {
        let th = ParameterVector::unflatten(&layout, x).unwrap();
        average_score(rule, &th.pool().unwrap(), &series, 1..series.len()).unwrap()
    };
    let h0 = f64::EPSILON.powf(0.25);
    for i in 0..7 {
        for j in 0..7 {
            let hi = (h0 * flat[i].abs().max(1.0)).min(caps[i]);
            let hj = (h0 * flat[j].abs().max(1.0)).min(caps[j]);
            let mut x = flat.clone();
            let stencil = if i == j {
                x[i] = flat[i] + hi;
                let fpp = f(&x);
                x[i] = flat[i] - hi;
                let fmm = f(&x);
                x[i] = flat[i];
                (fpp - 2.0 * f(&x) + fmm) / (hi * hi)
            } else {
                x[i] = flat[i] + hi;
                x[j] = flat[j] + hj;
                let fpp = f(&x);
                x[j] = flat[j] - hj;
                let fpm = f(&x);
                x[i] = flat[i] - hi;
                x[j] = flat[j] + hj;
                let fmp = f(&x);
                x[j] = flat[j] - hj;
                let fmm = f(&x);
                (fpp - fpm - fmp + fmm) / (4.0 * hi * hj)
            };
            let denom = scale.max(1.0);
            assert!(
                (m[(i, j)] - stencil).abs() / denom < 1e-4,
                "M[{i},{j}]={} vs oracle {stencil}",
                m[(i, j)]
            );
        }
    }
}

#[test]
fn lrv_of_iid_contributions_matches_sample_covariance() {
    let mut rng = stream(904, "iidlrv", 0);
    let n = 10_000;
    let d = 3;
    let mut data = DMatrix::zeros(n, d);
    for i in 0..n {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let z3: f64 = rng.sample(StandardNormal);
        data[(i, 0)] = z1;
        data[(i, 1)] = 0.5 * z1 + z2;
        data[(i, 2)] = 0.2 * z2 + 0.3 * z3;
    }
    let (v, _) = long_run_variance(&data).unwrap();
    let means = column_means(&data);
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..n {
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += (data[(i, a)] - means[a]) * (data[(i, b)] - means[b]);
            }
        }
    }
    cov /= n as f64;
    let diff = (&v - &cov).norm() / cov.norm();
    assert!(diff < 0.15, "relative Frobenius error {diff}");
}

#[test]
fn lrv_matches_ar1_closed_form() {
    // Scalar AR(1) with rho = 0.5: long-run variance = gamma0 (1+rho)/(1-rho).
    let mut rng = stream(905, "ar1lrv", 0);
    let n = 10_000;
    let rho = 0.5;
    let mut data = DMatrix::zeros(n, 1);
    let mut x = 0.0;
    for i in 0..n {
        x = rho * x + rng.sample::<f64, _>(StandardNormal);
        data[(i, 0)] = x;
    }
    let gamma0 = 1.0 / (1.0 - rho * rho);
    let analytic = gamma0 * (1.0 + rho) / (1.0 - rho);
    let (v, info) = long_run_variance(&data).unwrap();
    assert!(info.bandwidth > 1.0);
    let rel = (v[(0, 0)] - analytic).abs() / analytic;
    assert!(rel < 0.20, "HAC {} vs analytic {analytic} (rel {rel})", v[(0, 0)]);
}

#[test]
fn lrv_of_constant_column_is_zero() {
    let mut rng = stream(906, "constlrv", 0);
    let n = 500;
    let mut data = DMatrix::zeros(n, 2);
    for i in 0..n {
        data[(i, 0)] = 3.25; // constant
        data[(i, 1)] = rng.sample::<f64, _>(StandardNormal);
    }
    let (v, _) = long_run_variance(&data).unwrap();
    assert!(v[(0, 0)].abs() < 1e-12);
    assert!(v[(0, 1)].abs() < 1e-12);
}

#[test]
fn sandwich_is_symmetric_psd_with_nonnegative_diagonal() {
    let (series, theta_one, theta_two) = fitted(907, 1200);
    for (mode, theta) in
        [(MomentMode::OneStage, &theta_one), (MomentMode::TwoStage, &theta_two)]
    {
        let s = sandwich(mode, theta, &series, ScoringRule::LogScore).unwrap();
        assert!(s.m_condition.is_finite());
        for i in 0..7 {
            assert!(s.w[(i, i)] >= 0.0, "W[{i},{i}] = {}", s.w[(i, i)]);
            for j in 0..7 {
                assert!((s.w[(i, j)] - s.w[(j, i)]).abs() < 1e-10);
            }
        }
        let eig = nalgebra::SymmetricEigen::new(s.w.clone());
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        assert!(min > -1e-10 * max.max(1.0), "W not PSD: min eig {min}");
    }
}

#[test]
fn eta_marginal_agrees_between_full_w_and_block_formula() {
    let (series, _, theta_two) = fitted(908, 1500);
    let s = sandwich(MomentMode::TwoStage, &theta_two, &series, ScoringRule::LogScore).unwrap();
    let blocks = s.two_stage.as_ref().unwrap();
    let from_full = s.w[(0, 0)];
    let from_blocks = blocks.eta_marginal[(0, 0)];
    let rel = (from_full - from_blocks).abs() / from_full.abs().max(1e-300);
    assert!(rel < 1e-8, "full {from_full} vs block {from_blocks} (rel {rel})");
}

#[test]
fn two_stage_block_inverse_formula_matches_direct_inverse() {
    let (series, _, theta_two) = fitted(909, 900);
    let parts = jacobian(MomentMode::TwoStage, &theta_two, &series, ScoringRule::LogScore).unwrap();
    let (g_eta, g_gamma, m_gamma) = parts.blocks.unwrap();
    let direct = parts.m.clone().try_inverse().unwrap();

    let g_eta_inv = g_eta.try_inverse().unwrap();
    let m_gamma_inv = m_gamma.try_inverse().unwrap();
    let upper_right = -&g_eta_inv * &g_gamma * &m_gamma_inv;
    let mut block = DMatrix::zeros(7, 7);
    block.view_mut((0, 0), (1, 1)).copy_from(&g_eta_inv);
    block.view_mut((0, 1), (1, 6)).copy_from(&upper_right);
    block.view_mut((1, 1), (6, 6)).copy_from(&m_gamma_inv);

    let scale = direct.norm();
    assert!((&direct - &block).norm() / scale < 1e-8);
}

#[test]
fn first_stage_gap_is_positive_for_the_pool_and_zero_for_decoupled_blocks() {
    // On the fitted pool the gap is expected nonzero (recorded, not claimed).
    let (series, _, theta_two) = fitted(910, 900);
    let s = sandwich(MomentMode::TwoStage, &theta_two, &series, ScoringRule::LogScore).unwrap();
    let (g_gamma, norm) = first_stage_irrelevance_gap(&s).unwrap();
    assert_eq!(g_gamma.shape(), (1, 6));
    assert!(norm.is_finite() && norm > 0.0, "gap norm {norm}");

    // Decoupled system at the matrix level: with G_gamma = 0 the block
    // formula must collapse to the naive stage-2-only marginal.
    let mut synthetic = s.clone();
    {
        let blocks = synthetic.two_stage.as_mut().unwrap();
        blocks.g_gamma = DMatrix::zeros(1, 6);
        let g_eta_inv = blocks.g_eta.clone().try_inverse().unwrap();
        let v_eta = synthetic.v.view((0, 0), (1, 1)).into_owned();
        blocks.eta_marginal = &g_eta_inv * v_eta * g_eta_inv.transpose();
    }
    let blocks = synthetic.two_stage.as_ref().unwrap();
    let naive = blocks.g_eta[(0, 0)].powi(-2) * synthetic.v[(0, 0)];
    assert!((blocks.eta_marginal[(0, 0)] - naive).abs() / naive.abs() < 1e-6);
    let (_, gap) = first_stage_irrelevance_gap(&synthetic).unwrap();
    assert!(gap < 1e-6);
}

#[test]
fn boundary_estimates_are_refused() {
    let theta = ParameterVector::new(
        WeightVector::from_eta(1.0).unwrap(),
        vec![
            ConstituentParams::Ar1(Ar1Params::new(0.0, 0.5, 1.0).unwrap()),
            ConstituentParams::Arch1(Arch1Params::new(0.0, 0.2, 0.5).unwrap()),
        ],
    )
    .unwrap();
    let series = simulate_dgp(&DgpParams::default(), 200, &mut stream(911, "bd", 0));
    match moment_contributions(MomentMode::OneStage, &theta, &series, ScoringRule::LogScore) {
        Err(Error::BoundaryEstimate(name)) => assert!(name.contains("eta")),
        other => panic!("expected boundary refusal, got {other:?}"),
    }
}

#[test]
fn w_is_invariant_to_constituent_reordering() {
    let (series, _, theta) = fitted(912, 1000);
    let rule = ScoringRule::LogScore;
    let s = sandwich(MomentMode::TwoStage, &theta, &series, rule).unwrap();

    // Same point with constituents swapped: eta' = 1 - eta, gamma blocks
    // exchanged. The exact map theta' = T(theta) has Jacobian
    // J = blockdiag(-1, P) with P the block swap.
    let swapped = ParameterVector::new(
        WeightVector::from_eta(1.0 - theta.weights.eta()).unwrap(),
        vec![theta.constituents[1], theta.constituents[0]],
    )
    .unwrap();
    let s2 = sandwich(MomentMode::TwoStage, &swapped, &series, rule).unwrap();

    let mut j = DMatrix::zeros(7, 7);
    j[(0, 0)] = -1.0;
    for k in 0..3 {
        j[(1 + k, 4 + k)] = 1.0; // new block 1 is old block 2
        j[(4 + k, 1 + k)] = 1.0;
    }
    let expected = &j * &s.w * j.transpose();
    let scale = expected.norm();
    let diff = (&s2.w - &expected).norm() / scale;
    assert!(diff < 1e-10, "reorder mismatch: {diff}");
}

#[test]
fn sandwich_is_deterministic() {
    let (series, theta, _) = fitted(913, 600);
    let a = sandwich(MomentMode::OneStage, &theta, &series, ScoringRule::LogScore).unwrap();
    let b = sandwich(MomentMode::OneStage, &theta, &series, ScoringRule::LogScore).unwrap();
    assert_eq!(a.w.as_slice(), b.w.as_slice());
}

#[test]
fn matrix_artifact_round_trips() {
    let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let art: MatrixArtifact = (&m).into();
    assert_eq!(art.to_matrix(), m);
    let json = serde_json::to_string(&art).unwrap();
    let back: MatrixArtifact = serde_json::from_str(&json).unwrap();
    assert_eq!(back.to_matrix(), m);
}

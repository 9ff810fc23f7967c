use super::*;
use crate::models::{simulate_dgp, DgpParams};
use crate::rng::stream;
use approx::assert_relative_eq;
use rand::Rng;
use rand_distr::StandardNormal;

const LAYOUT: [ModelId; 2] = [ModelId::Ar1, ModelId::Arch1];

fn ar1_series(alpha0: f64, alpha1: f64, sigma: f64, n: usize, seed: u64) -> ObservedSeries {
    let mut rng = stream(seed, "ar1data", 0);
    let mut values = vec![alpha0 / (1.0 - alpha1)];
    for _ in 1..n {
        let prev = *values.last().unwrap();
        values.push(alpha0 + alpha1 * prev + sigma * rng.sample::<f64, _>(StandardNormal));
    }
    ObservedSeries::from_values(values).unwrap()
}

#[test]
fn flatten_unflatten_is_a_bijection() {
    let theta = ParameterVector::new(
        WeightVector::from_eta(0.42).unwrap(),
        vec![
            ConstituentParams::Ar1(Ar1Params::new(0.1, -0.3, 0.9).unwrap()),
            ConstituentParams::Arch1(Arch1Params::new(0.05, 0.4, 0.6).unwrap()),
        ],
    )
    .unwrap();
    let flat = theta.flatten();
    assert_eq!(flat.len(), 7);
    assert_eq!(theta.dim(), 7);
    let back = ParameterVector::unflatten(&LAYOUT, &flat).unwrap();
    assert_eq!(back, theta);
    assert_eq!(back.flatten(), flat);
}

#[test]
fn ar1_log_score_fit_matches_ols_closed_form() {
    // Conditional MLE == OLS of y_t on (1, y_{t-1}); sigma^2 = SSR / (n-1).
    let series = ar1_series(0.3, 0.6, 0.8, 5000, 101);
    let v = series.values();
    let n = v.len();

    // OLS oracle.
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    let m = (n - 1) as f64;
    for t in 1..n {
        let (x, y) = (v[t - 1], v[t]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    let intercept = (sy - slope * sx) / m;
    let ssr: f64 = (1..n)
        .map(|t| {
            let e = v[t] - intercept - slope * v[t - 1];
            e * e
        })
        .sum();
    let sigma_hat = (ssr / m).sqrt();

    let (params, fit) = estimate_constituent(
        ModelId::Ar1,
        &series,
        ScoringRule::LogScore,
        &EstimateOptions::default(),
    )
    .unwrap();
    let ConstituentParams::Ar1(p) = params else { unreachable!() };
    assert!(fit.converged);
    assert!((p.alpha0 - intercept).abs() < 1e-6, "{} vs {intercept}", p.alpha0);
    assert!((p.alpha1 - slope).abs() < 1e-6, "{} vs {slope}", p.alpha1);
    assert!((p.sigma - sigma_hat).abs() < 1e-6, "{} vs {sigma_hat}", p.sigma);
}

#[test]
fn arch_fit_on_homoskedastic_data_pushes_beta1_to_zero() {
    // True beta1 = 0 (iid Gaussian data).
    let mut rng = stream(103, "iid", 0);
    let values: Vec<f64> =
        (0..4000).map(|_| 0.2 + 0.7 * rng.sample::<f64, _>(StandardNormal)).collect();
    let series = ObservedSeries::from_values(values).unwrap();
    let (params, fit) = estimate_constituent(
        ModelId::Arch1,
        &series,
        ScoringRule::LogScore,
        &EstimateOptions::default(),
    )
    .unwrap();
    let ConstituentParams::Arch1(p) = params else { unreachable!() };
    assert!(p.beta1 < 0.03, "beta1={} not boundary-adjacent", p.beta1);

    let truth = Arch1Params::new(0.2, 0.49, 0.0).unwrap();
    let score_true =
        average_score(ScoringRule::LogScore, &truth, &series, 1..series.len()).unwrap();
    assert!(fit.achieved_score >= score_true - 1e-12);
}

#[test]
fn parametric_bootstrap_recovers_ar1_within_three_se() {
    // Fit once, simulate from the fit, re-estimate; closed-form asymptotic
    // standard errors for the conditional MLE gauge the recovery.
    let n = 500usize;
    let truth = Ar1Params::new(0.1, 0.5, 1.0).unwrap();
    let se_alpha1 = ((1.0 - truth.alpha1 * truth.alpha1) / n as f64).sqrt();
    let mean_y = truth.alpha0 / (1.0 - truth.alpha1);
    let var_y = truth.sigma * truth.sigma / (1.0 - truth.alpha1 * truth.alpha1);
    let se_alpha0 =
        (truth.sigma * truth.sigma * (1.0 / n as f64) * (1.0 + mean_y * mean_y / var_y)).sqrt();
    let se_sigma = (truth.sigma * truth.sigma / (2.0 * n as f64)).sqrt();

    let opts = EstimateOptions { starts: 3, ..Default::default() };
    let reps = 200;
    let hits = crate::par::map_indices(reps, |r| {
        let series = ar1_series(truth.alpha0, truth.alpha1, truth.sigma, n, 9000 + r as u64);
        let (params, _) =
            estimate_constituent(ModelId::Ar1, &series, ScoringRule::LogScore, &opts).unwrap();
        let ConstituentParams::Ar1(p) = params else { unreachable!() };
        [
            (p.alpha0 - truth.alpha0).abs() <= 3.0 * se_alpha0,
            (p.alpha1 - truth.alpha1).abs() <= 3.0 * se_alpha1,
            (p.sigma - truth.sigma).abs() <= 3.0 * se_sigma,
        ]
    });
    for k in 0..3 {
        let rate = hits.iter().filter(|h| h[k]).count() as f64 / reps as f64;
        assert!(rate >= 0.95, "coordinate {k} recovered in only {rate:.3} of replications");
    }
}

#[test]
fn stage_two_weight_matches_grid_search() {
    let dgp = DgpParams::default();
    for seed in 0..3u64 {
        let series = simulate_dgp(&dgp, 800, &mut stream(200 + seed, "grid", 0));
        let opts = EstimateOptions::default();
        let result = estimate_two_stage(&LAYOUT, &series, ScoringRule::LogScore, &opts).unwrap();
        let gammas = result.estimate.constituents.clone();

        // 1e-4-resolution grid oracle over eta.
        let mut best = (f64::NEG_INFINITY, 0.0);
        for k in 0..=10_000 {
            let eta = k as f64 / 10_000.0;
            let pool =
                LinearPool::new(WeightVector::from_eta(eta).unwrap(), gammas.clone()).unwrap();
            let s = average_score(ScoringRule::LogScore, &pool, &series, 1..series.len()).unwrap();
            if s > best.0 {
                best = (s, eta);
            }
        }
        let eta_hat = result.estimate.weights.eta();
        assert!(
            (eta_hat - best.1).abs() < 1e-3,
            "seed {seed}: optimizer {eta_hat} vs grid {}",
            best.1
        );
    }
}

#[test]
fn pointwise_dominance_drives_weight_to_boundary() {
    let mut rng = stream(107, "dom", 0);
    let values: Vec<f64> = (0..400).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
    let series = ObservedSeries::from_values(values).unwrap();
    // Constituent 1 is well calibrated; constituent 2 puts its mass five
    // units away, so constituent 1 dominates at every observation.
    let fits = vec![
        ConstituentFit {
            params: ConstituentParams::Ar1(Ar1Params::new(0.0, 0.0, 0.1).unwrap()),
            achieved_score: 0.0,
            converged: true,
            iterations: 0,
            gradient_norm: 0.0,
            starts_used: 1,
            boundary_flags: vec![],
        },
        ConstituentFit {
            params: ConstituentParams::Arch1(Arch1Params::new(5.0, 0.01, 0.0).unwrap()),
            achieved_score: 0.0,
            converged: true,
            iterations: 0,
            gradient_norm: 0.0,
            starts_used: 1,
            boundary_flags: vec![],
        },
    ];
    let result = stage_two(
        &series,
        ScoringRule::LogScore,
        &EstimateOptions::default(),
        fits,
        None,
    )
    .unwrap();
    assert_eq!(result.estimate.weights.eta(), 1.0);
    assert!(result.boundary_flags.iter().any(|f| f.contains("eta")), "{:?}", result.boundary_flags);
}

#[test]
fn fixed_weight_at_own_optimum_reproduces_two_stage_exactly() {
    let dgp = DgpParams::default();
    let series = simulate_dgp(&dgp, 700, &mut stream(301, "fw", 0));
    let opts = EstimateOptions::default();
    let rule = ScoringRule::LogScore;
    let two = estimate_two_stage(&LAYOUT, &series, rule, &opts).unwrap();
    let fixed = estimate_two_stage_fixed_weight(
        &LAYOUT,
        &series,
        rule,
        &two.estimate.weights,
        &opts,
    )
    .unwrap();
    // Same stage 1 under the same seed: gamma blocks bit-identical.
    assert_eq!(two.estimate.constituents, fixed.estimate.constituents);
    assert_eq!(two.estimate.weights, fixed.estimate.weights);
    assert_eq!(two.achieved_score.to_bits(), fixed.achieved_score.to_bits());
    assert_eq!(fixed.mode, EstimationMode::TwoStageFixedWeight);
}

#[test]
fn in_sample_score_ordering_across_modes() {
    let dgp = DgpParams::default();
    let opts = EstimateOptions::default();
    for (seed, rule) in
        [(401u64, ScoringRule::LogScore), (402, ScoringRule::Censored { threshold: -0.66 })]
    {
        let series = simulate_dgp(&dgp, 900, &mut stream(seed, "order", 0));
        let two = estimate_two_stage(&LAYOUT, &series, rule, &opts).unwrap();
        let one = estimate_one_stage(&LAYOUT, &series, rule, Some(&two.estimate), &opts).unwrap();
        assert!(
            one.achieved_score >= two.achieved_score - 1e-10,
            "one={} two={}",
            one.achieved_score,
            two.achieved_score
        );
        for eta in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let fixed = estimate_two_stage_fixed_weight(
                &LAYOUT,
                &series,
                rule,
                &WeightVector::from_eta(eta).unwrap(),
                &opts,
            )
            .unwrap();
            assert!(
                fixed.achieved_score <= two.achieved_score + 1e-12,
                "eta={eta}: fixed={} two={}",
                fixed.achieved_score,
                two.achieved_score
            );
        }
    }
}

#[test]
fn achieved_score_equals_recomputed_average() {
    let dgp = DgpParams::default();
    let series = simulate_dgp(&dgp, 600, &mut stream(501, "recompute", 0));
    let opts = EstimateOptions::default();
    let rule = ScoringRule::Censored { threshold: -0.6 };
    for result in [
        estimate_two_stage(&LAYOUT, &series, rule, &opts).unwrap(),
        estimate_one_stage(&LAYOUT, &series, rule, None, &opts).unwrap(),
    ] {
        let again =
            average_score(rule, &result.estimate.pool().unwrap(), &series, 1..series.len())
                .unwrap();
        assert!((result.achieved_score - again).abs() < 1e-12);
    }
}

#[test]
fn near_degenerate_truth_gives_matching_weights_across_modes() {
    // Data from a pure AR(1): the pool's limit weight sits at the eta=1 edge,
    // and both estimators should agree on it closely.
    let series = ar1_series(0.0, 0.7, 0.5, 3000, 601);
    let opts = EstimateOptions::default();
    let two = estimate_two_stage(&LAYOUT, &series, ScoringRule::LogScore, &opts).unwrap();
    let one =
        estimate_one_stage(&LAYOUT, &series, ScoringRule::LogScore, Some(&two.estimate), &opts)
            .unwrap();
    let (w1, w2) = (one.estimate.weights.eta(), two.estimate.weights.eta());
    assert!(w2 > 0.9, "two-stage eta={w2}");
    assert!((w1 - w2).abs() <= 0.02, "one={w1} two={w2}");
}

#[test]
fn estimation_is_deterministic_given_seed() {
    let dgp = DgpParams::default();
    let series = simulate_dgp(&dgp, 500, &mut stream(701, "det", 0));
    let opts = EstimateOptions { seed: 5, ..Default::default() };
    let a = estimate_one_stage(&LAYOUT, &series, ScoringRule::LogScore, None, &opts).unwrap();
    let b = estimate_one_stage(&LAYOUT, &series, ScoringRule::LogScore, None, &opts).unwrap();
    assert_eq!(a.estimate, b.estimate);
    assert_eq!(a.achieved_score.to_bits(), b.achieved_score.to_bits());
}

#[test]
fn rejects_short_series() {
    let series = ObservedSeries::from_values(vec![0.0; 10]).unwrap();
    let err = estimate_constituent(
        ModelId::Ar1,
        &series,
        ScoringRule::LogScore,
        &EstimateOptions::default(),
    );
    assert!(matches!(err, Err(Error::SeriesTooShort { .. })));
}

#[test]
fn average_log_score_eta_derivative_matches_finite_differences() {
    // d/d eta of the pool's average log score, analytic vs central FD.
    let dgp = DgpParams::default();
    let series = simulate_dgp(&dgp, 400, &mut stream(801, "etagrad", 0));
    let v = series.values();
    let gammas = vec![
        ConstituentParams::Ar1(Ar1Params::new(0.02, 0.45, 0.75).unwrap()),
        ConstituentParams::Arch1(Arch1Params::new(0.0, 0.25, 0.55).unwrap()),
    ];
    for eta in [0.2, 0.5, 0.8] {
        let make = |e: f64| {
            LinearPool::new(WeightVector::from_eta(e).unwrap(), gammas.clone()).unwrap()
        };
        let avg = |e: f64| {
            average_score(ScoringRule::LogScore, &make(e), &series, 1..v.len()).unwrap()
        };
        let h = 1e-6;
        let fd = (avg(eta + h) - avg(eta - h)) / (2.0 * h);
        let pool = make(eta);
        let analytic = (1..v.len())
            .map(|t| grad::pool_score_grad(&pool, ScoringRule::LogScore, v[t - 1], v[t]).1[0])
            .sum::<f64>()
            / (v.len() - 1) as f64;
        assert_relative_eq!(fd, analytic, max_relative = 1e-6);
    }
}

#[test]
fn pool_score_is_continuous_in_eta() {
    // Fine-grid scan; neighboring grid values must not jump.
    let dgp = DgpParams::default();
    let series = simulate_dgp(&dgp, 300, &mut stream(802, "cont", 0));
    let gammas = vec![
        ConstituentParams::Ar1(Ar1Params::new(0.0, 0.5, 0.8).unwrap()),
        ConstituentParams::Arch1(Arch1Params::new(0.0, 0.3, 0.5).unwrap()),
    ];
    let mut prev: Option<f64> = None;
    let steps = 2000;
    for k in 0..=steps {
        let eta = k as f64 / steps as f64;
        let pool = LinearPool::new(WeightVector::from_eta(eta).unwrap(), gammas.clone()).unwrap();
        let s =
            average_score(ScoringRule::LogScore, &pool, &series, 1..series.len()).unwrap();
        if let Some(p) = prev {
            assert!((s - p).abs() < 0.05, "jump at eta={eta}: {p} -> {s}");
        }
        prev = Some(s);
    }
}

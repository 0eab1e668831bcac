//! Release gate: one test per shipping criterion, each with its stated
//! tolerance and runtime budget. Reference numbers are frozen from
//! independent recomputations; random draws use fixed seeds, so every run
//! checks the same inputs.

use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use chainsell::calibration::{calibrate, PriceSeries};
use chainsell::model::phi;
use chainsell::simulator::{
    default_horizon, gbm_limit_study, gbm_reference_exponent, mc_value, path_rng, simulate_path,
    SellAtFirstDown, SellAtFixedTime, ThresholdPolicy,
};
use chainsell::{solve, verify_default, ChainState, ModelParams, Regime};

fn params(f1: f64, f2: f64, lambda1: f64, lambda2: f64, rho: f64, k: f64) -> ModelParams {
    ModelParams { f1, f2, lambda1, lambda2, rho, k }
}

/// Slow-switching two-threshold fixture used across several criteria.
fn two_threshold_fixture() -> ModelParams {
    params(0.07, -0.03, 1.0, 1.0, 0.10, 0.01)
}

struct Budget {
    start: Instant,
    limit: Duration,
}

impl Budget {
    fn new(secs: u64) -> Self {
        Budget { start: Instant::now(), limit: Duration::from_secs(secs) }
    }
}

impl Drop for Budget {
    fn drop(&mut self) {
        let elapsed = self.start.elapsed();
        assert!(
            elapsed <= self.limit,
            "runtime budget exceeded: {elapsed:.2?} > {:?}",
            self.limit
        );
    }
}

#[test]
fn criterion_1_two_threshold_regression() {
    let _budget = Budget::new(1);
    let rule = solve(&two_threshold_fixture()).unwrap();
    let Regime::CaseII { x_star, x0_star, x_star_bound, .. } = rule.regime else {
        panic!("expected the two-threshold regime, got {:?}", rule.regime);
    };
    assert!((x_star - 0.012478).abs() <= 1e-5, "x_star = {x_star}");
    assert!((x0_star - 0.033333).abs() <= 1e-5, "x0_star = {x0_star}");
    assert!((x_star_bound - 0.013326).abs() <= 1e-5, "bound = {x_star_bound}");
}

#[test]
fn criterion_2_single_threshold_regression() {
    let _budget = Budget::new(1);
    let rule = solve(&params(4.89, -5.13, 135.25, 130.95, 0.03, 0.01)).unwrap();
    let Regime::CaseI { x_star, .. } = rule.regime else {
        panic!("expected the single-threshold regime, got {:?}", rule.regime);
    };
    assert!((x_star - 0.017213).abs() <= 1e-6, "x_star = {x_star}");
}

#[test]
fn criterion_3_half_year_phi_signs_and_magnitudes() {
    let _budget = Budget::new(1);
    // Eight half-year calibrations (f1, f2, lambda1, lambda2) with the
    // recorded phi(0.03): seven hold decisions and one sell decision.
    let rows: [(f64, f64, f64, f64, f64); 8] = [
        (10.45, -10.61, 100.48, 124.23, -336.06),
        (3.21, -2.32, 102.15, 141.44, -217.41),
        (3.06, -3.15, 97.98, 127.02, -83.18),
        (2.27, -1.92, 103.57, 134.25, -103.09),
        (1.80, -1.85, 117.19, 125.00, -5.02),
        (3.01, -2.72, 97.98, 107.95, -60.56),
        (5.39, -4.80, 108.21, 127.19, -185.32),
        (4.89, -5.13, 135.25, 130.95, 35.79),
    ];
    let rho = 0.03;
    let mut positive = 0;
    for (i, &(f1, f2, l1, l2, recorded)) in rows.iter().enumerate() {
        let computed = phi(f1, f2, l1, l2, rho);
        assert_eq!(
            computed > 0.0,
            recorded > 0.0,
            "row {i}: sign mismatch, computed {computed} vs recorded {recorded}"
        );
        positive += (computed > 0.0) as usize;
        // The inputs above are themselves rounded to two decimals, so the
        // recorded value can only be reproduced up to the first-order
        // envelope of +-0.005 per input; beyond that the 0.5% band applies.
        let envelope =
            0.005 * ((rho - f1).abs() + (rho - f2).abs() + (rho + l1 - f1) + (rho + l2 - f2));
        let tol = (0.005 * recorded.abs()).max(envelope);
        assert!(
            (computed - recorded).abs() <= tol,
            "row {i}: computed {computed} vs recorded {recorded} (tolerance {tol})"
        );
    }
    assert_eq!(positive, 1, "exactly one sell-regime row expected");
}

/// Uniform draw in a range.
fn uniform(rng: &mut ChaCha12Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..hi)
}

/// True when the solved rule's power-law constants survived in double
/// precision; astronomically scaled draws (exponents ~ lambda1/f1 in the
/// thousands) are re-drawn, since their value functions are not evaluable.
fn representable(p: &ModelParams) -> bool {
    match solve(p) {
        Ok(rule) => match rule.regime {
            Regime::CaseI { a2, .. } => a2.is_normal() && a2 > 0.0,
            Regime::CaseII { a2, c1, .. } => {
                a2.is_normal() && a2 > 0.0 && c1.is_normal() && c1 > 0.0
            }
            Regime::NeverSell => false,
        },
        Err(_) => false,
    }
}

/// Admissible single-threshold draw: f1 in (0.05, 10), f2 in (-10, -0.01),
/// rates in (0.05, 200), rho a fraction of f1 (capped at 5), K in (0.01, 1).
fn sample_single_threshold(rng: &mut ChaCha12Rng) -> ModelParams {
    loop {
        let f1 = uniform(rng, 0.05, 10.0);
        let p = params(
            f1,
            uniform(rng, -10.0, -0.01),
            uniform(rng, 0.05, 200.0),
            uniform(rng, 0.05, 200.0),
            (f1 * uniform(rng, 0.05, 1.0)).min(5.0),
            uniform(rng, 0.01, 1.0),
        );
        if p.is_admissible() && representable(&p) {
            return p;
        }
    }
}

/// Admissible two-threshold draw: rho exceeds f1 by (0.05, 1).
fn sample_two_threshold(rng: &mut ChaCha12Rng) -> ModelParams {
    loop {
        let f1 = uniform(rng, 0.05, 4.0);
        let p = params(
            f1,
            uniform(rng, -10.0, -0.01),
            uniform(rng, 0.05, 200.0),
            uniform(rng, 0.05, 200.0),
            f1 + uniform(rng, 0.05, 1.0),
            uniform(rng, 0.01, 1.0),
        );
        if p.is_admissible() && representable(&p) {
            return p;
        }
    }
}

fn regime_draws(n: usize) -> Vec<ModelParams> {
    let mut rng = path_rng(0x5eed_ca11, 0);
    let mut out = Vec::with_capacity(2 * n);
    for _ in 0..n {
        out.push(sample_single_threshold(&mut rng));
    }
    for _ in 0..n {
        out.push(sample_two_threshold(&mut rng));
    }
    out
}

#[test]
fn criterion_4_certification_of_500_draws_per_regime() {
    let _budget = Budget::new(30);
    for (i, p) in regime_draws(500).iter().enumerate() {
        let rule = solve(p).unwrap();
        let report = verify_default(&rule).unwrap();
        assert!(
            report.passed,
            "draw {i} failed certification: {p:?}\nreport: residual_max_rel = {}, margins = {:?}, \
             boundary = {:?}, scalars = {:?}",
            report.residual_max_rel,
            report.margins,
            report.boundary_checks,
            report.scalar_checks
        );
    }
}

#[test]
fn criterion_5_exponent_inequalities_over_the_same_draws() {
    let _budget = Budget::new(5);
    let mut violations = Vec::new();
    for (i, p) in regime_draws(500).iter().enumerate() {
        let d = p.derive().unwrap();
        if !(d.beta2 > 1.0) {
            violations.push(format!("draw {i}: beta2 = {} <= 1", d.beta2));
        }
        if !(d.kappa2 > 0.0 && d.kappa2 < 1.0) {
            violations.push(format!("draw {i}: kappa2 = {} outside (0,1)", d.kappa2));
        }
        if p.rho > p.f1 {
            let power_scale = p.k * d.beta2 / (d.beta2 - 1.0);
            let upper = p.rho * p.k / (p.rho - p.f1);
            if !(power_scale < upper) {
                violations.push(format!(
                    "draw {i}: K*beta2/(beta2-1) = {power_scale} not below {upper}"
                ));
            }
            let denom = p.lambda2 - d.kappa2 * (p.rho + p.lambda2 - p.f2);
            if !(denom > 0.0) {
                violations.push(format!("draw {i}: slope-bound denominator = {denom}"));
            }
        }
    }
    assert!(violations.is_empty(), "{} violations:\n{}", violations.len(), violations.join("\n"));
}

#[test]
fn criterion_6_monte_carlo_agrees_and_dominates() {
    let _budget = Budget::new(60);
    let p = two_threshold_fixture();
    let rule = solve(&p).unwrap();
    let (x_star, upper) = rule.thresholds().unwrap();
    let x0_star = upper.unwrap();
    let horizon = default_horizon(&p).unwrap();
    let optimal = ThresholdPolicy::from_rule(&rule).unwrap();

    // Six starts: below both thresholds, between them, and above both, in
    // each regime; the middle band holds in the up state and sells in the
    // down state, so all value branches are exercised.
    let starts = [
        (0.5 * x_star, ChainState::Up),
        (0.5 * x_star, ChainState::Down),
        (0.5 * (x_star + x0_star), ChainState::Up),
        (0.5 * (x_star + x0_star), ChainState::Down),
        (1.5 * x0_star, ChainState::Up),
        (1.5 * x0_star, ChainState::Down),
    ];
    for (i, &(x0, state)) in starts.iter().enumerate() {
        let v = rule.value(x0, state).unwrap();
        let est = mc_value(&p, &optimal, x0, state, 100_000, horizon, 60 + i as u64).unwrap();
        assert!(
            (est.mean - v).abs() <= 3.0 * est.std_error,
            "start {i} ({x0}, {state}): mc {} +- {} vs value {v}",
            est.mean,
            est.std_error
        );
        // Inferior rules must not beat the certified value.
        let first_down =
            mc_value(&p, &SellAtFirstDown, x0, state, 100_000, horizon, 600 + i as u64).unwrap();
        assert!(
            first_down.mean <= v + 3.0 * first_down.std_error,
            "start {i}: sell-at-first-downtick scored {} vs value {v}",
            first_down.mean
        );
        let fixed_time =
            mc_value(&p, &SellAtFixedTime(1.0), x0, state, 100_000, horizon, 6000 + i as u64)
                .unwrap();
        assert!(
            fixed_time.mean <= v + 3.0 * fixed_time.std_error,
            "start {i}: sell-at-t=1 scored {} vs value {v}",
            fixed_time.mean
        );
    }
}

#[test]
fn criterion_7_diffusion_limit_of_thresholds() {
    let _budget = Budget::new(5);
    let (mu, sigma, rho, k) = (0.2, 0.3, 0.5, 1.0);
    let rows = gbm_limit_study(mu, sigma, rho, k, &[0.1, 0.01, 0.001]).unwrap();
    let beta0 = gbm_reference_exponent(mu, sigma, rho);
    let x_limit = k * beta0 / (beta0 - 1.0);

    let mut previous_gap = f64::INFINITY;
    for row in &rows {
        assert!(row.admissible, "epsilon = {} should embed admissibly", row.epsilon);
        let gap = (row.beta2.unwrap() - beta0).abs();
        assert!(
            gap < previous_gap,
            "epsilon = {}: exponent gap {gap} did not shrink below {previous_gap}",
            row.epsilon
        );
        previous_gap = gap;
    }
    let last = rows.last().unwrap();
    let beta_rel = (last.beta2.unwrap() - beta0).abs() / beta0;
    assert!(beta_rel < 0.05, "exponent relative error {beta_rel} at epsilon = 0.001");
    let x_rel = (last.x_star.unwrap() - x_limit).abs() / x_limit;
    assert!(x_rel < 0.05, "threshold relative error {x_rel} at epsilon = 0.001");
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

#[test]
fn criterion_8_calibration_round_trip_recovers_rates() {
    let _budget = Budget::new(60);
    let truth = params(4.0, -4.0, 120.0, 120.0, 0.5, 1.0);
    let (horizon, delta) = (2.0, 1.0 / 252.0);

    let mut errs: [Vec<f64>; 4] = Default::default();
    for rep in 0..100u64 {
        let mut rng = path_rng(0xca1b, rep);
        let path = simulate_path(&truth, 1.0, ChainState::Up, horizon, &mut rng).unwrap();
        let series = PriceSeries::sample_path(&path, &truth, delta).unwrap();
        let c = calibrate(&series, truth.rho).unwrap();
        for (slot, (est, exact)) in [
            (c.lambda1_hat, truth.lambda1),
            (c.lambda2_hat, truth.lambda2),
            (c.f1_hat, truth.f1),
            (c.f2_hat, truth.f2),
        ]
        .into_iter()
        .enumerate()
        {
            errs[slot].push((est - exact).abs() / exact.abs());
        }
    }
    let medians: Vec<f64> = errs.into_iter().map(median).collect();
    for (name, m) in ["lambda1", "lambda2", "f1", "f2"].iter().zip(&medians) {
        assert!(
            *m < 0.15,
            "median relative error of {name} is {m:.3} (medians: lambda1 {:.3}, lambda2 {:.3}, \
             f1 {:.3}, f2 {:.3}); the daily sign-flip estimator saturates when the chain mixes \
             on the sampling scale (lambda*delta ~ 0.48 here)",
            medians[0],
            medians[1],
            medians[2],
            medians[3]
        );
    }
}

#[test]
fn criterion_9_cost_homogeneity_of_rule_and_value() {
    let _budget = Budget::new(5);
    // Scaling the cost rescales the power-law constants by c^(1-beta2); for
    // steep exponents that leaves the double range even when the base
    // problem is fine, and an unrepresentable rule has no value function to
    // compare. Both scaled problems must therefore survive in f64 too.
    let scaled_representable = |p: &ModelParams| {
        [0.5, 3.0]
            .iter()
            .all(|&c| representable(&ModelParams { k: c * p.k, ..*p }))
    };
    let mut rng = path_rng(0x5eed_ca11, 9);
    let mut draws = Vec::with_capacity(100); // 50 per regime
    while draws.len() < 50 {
        let p = sample_single_threshold(&mut rng);
        if scaled_representable(&p) {
            draws.push(p);
        }
    }
    while draws.len() < 100 {
        let p = sample_two_threshold(&mut rng);
        if scaled_representable(&p) {
            draws.push(p);
        }
    }
    for (i, p) in draws.iter().enumerate() {
        let rule = solve(p).unwrap();
        let (x_star, upper) = rule.thresholds().unwrap();
        for c in [0.5, 3.0] {
            let scaled = ModelParams { k: c * p.k, ..*p };
            let scaled_rule = solve(&scaled).unwrap();
            let (sx_star, supper) = scaled_rule.thresholds().unwrap();
            let rel = (sx_star - c * x_star).abs() / (c * x_star);
            assert!(rel <= 1e-9, "draw {i}, c = {c}: x_star scaling off by {rel}");
            if let (Some(u), Some(su)) = (upper, supper) {
                let rel = (su - c * u).abs() / (c * u);
                assert!(rel <= 1e-9, "draw {i}, c = {c}: x0_star scaling off by {rel}");
            }

            let x_max = 3.0 * upper.unwrap_or(x_star).max(x_star);
            let x_min = x_star / 100.0;
            let ratio = (x_max / x_min).powf(1.0 / 99.0);
            for j in 0..100 {
                let x = x_min * ratio.powi(j);
                for state in [ChainState::Up, ChainState::Down] {
                    let v = rule.value(x, state).unwrap();
                    let sv = scaled_rule.value(c * x, state).unwrap();
                    let target = c * v;
                    // Deep in the hold region both sides decay like x^beta2
                    // and can dive below the normal range, where a double
                    // keeps too few bits for a nine-digit comparison (at
                    // 1e-316 its own quantization is already ~1e-8). The
                    // normal-range floor in the denominator makes such pairs
                    // count as equal while still failing any pair whose
                    // disagreement is at a representable scale.
                    let scale = target.abs().max(sv.abs()).max(f64::MIN_POSITIVE);
                    let rel = (sv - target).abs() / scale;
                    assert!(
                        rel <= 1e-9,
                        "draw {i} ({p:?}), c = {c}, x = {x}, {state}: value scaling off by {rel}"
                    );
                }
            }
        }
    }
}

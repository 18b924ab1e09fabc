use genvendor::decisions::{estimate_profit, uniform_grid};
use genvendor::numerics::{sort_floats, std_normal_cdf, std_normal_pdf};
use genvendor::{
    inventory_decision, joint_decision, profit, rho, CostParams, DemandSampler, DgpKind, Features,
    OracleModel, PriceMode, Result, RngStream,
};
use proptest::prelude::*;

fn costs_strategy() -> impl Strategy<Value = (f64, f64, f64)> {
    // (s, c, p) with s ≤ c < p.
    (0.0f64..1.0, 0.0f64..2.0, 0.01f64..3.0).prop_map(|(s, dc, dp)| (s, s + dc, s + dc + dp))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn order_statistic_maximizes_sample_profit(
        mut samples in proptest::collection::vec(0.0f64..200.0, 1..60),
        (s, c, p) in costs_strategy(),
    ) {
        sort_floats(&mut samples);
        let costs = CostParams::new(c, s).unwrap();
        let q = inventory_decision(&samples, p, &costs).unwrap();
        prop_assert!(samples.contains(&q));
        let best = estimate_profit(&samples, p, q, &costs).unwrap();
        let tol = 1e-9 * (1.0 + best.abs());
        // Over every candidate in the sample ...
        for &cand in &samples {
            prop_assert!(estimate_profit(&samples, p, cand, &costs).unwrap() <= best + tol);
        }
        // ... and over a dense grid.
        let step = 0.05;
        let grid_best = (0..=4000)
            .map(|i| i as f64 * step)
            .map(|g| (g, estimate_profit(&samples, p, g, &costs).unwrap()))
            .fold((0.0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        prop_assert!(grid_best.1 <= best + tol);
        // The grid maximizer is within one step of the decision whenever the
        // maximizer is unique.
        let ties = samples
            .iter()
            .filter(|&&d| (estimate_profit(&samples, p, d, &costs).unwrap() - best).abs() <= tol)
            .count();
        if ties == 1 {
            let slack = samples.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
            prop_assert!((grid_best.0 - q).abs() <= step + slack);
        }
    }

    #[test]
    fn sample_profit_is_concave_in_quantity(
        samples in proptest::collection::vec(0.0f64..200.0, 1..40),
        (s, c, p) in costs_strategy(),
        start in 0.0f64..100.0,
        step in 0.01f64..5.0,
    ) {
        let costs = CostParams::new(c, s).unwrap();
        let vals: Vec<f64> = (0..40)
            .map(|i| estimate_profit(&samples, p, start + step * i as f64, &costs).unwrap())
            .collect();
        for w in vals.windows(3) {
            prop_assert!(w[0] - 2.0 * w[1] + w[2] <= 1e-9 * (1.0 + w[1].abs()));
        }
    }

    #[test]
    fn profit_forms_agree(d in 0.0f64..200.0, q in 0.0f64..200.0, (s, c, p) in costs_strategy()) {
        let costs = CostParams::new(c, s).unwrap();
        let direct = p * d.min(q) - c * q + s * (q - d).max(0.0);
        prop_assert!((profit(d, p, q, &costs) - direct).abs() <= 1e-9 * (1.0 + direct.abs()));
    }
}

fn zero_beta_a() -> OracleModel {
    OracleModel::new(DgpKind::A, PriceMode::Discrete, &RngStream::new(0))
        .with_beta(vec![0.0; 5])
        .unwrap()
}

#[test]
fn oracle_sampler_joint_decision_picks_riskless_price() {
    let oracle = zero_beta_a();
    let costs = CostParams::new(1.0, 0.0).unwrap();
    let grid = uniform_grid(2.0, 4.0, 21).unwrap();
    let x = Features::Numeric(vec![0.0; 5]);
    let jd = joint_decision(&oracle, &x, &grid, 50_000, &costs, &mut RngStream::new(8)).unwrap();
    assert!((jd.price - 3.0).abs() <= 0.1 + 1e-9, "price {}", jd.price);
    let sorted = oracle
        .sample(&x, jd.price, 50_000, &mut RngStream::new(8))
        .unwrap();
    assert_eq!(
        jd.quantity,
        inventory_decision(&sorted, jd.price, &costs).unwrap()
    );
}

#[test]
fn single_price_grid_reduces_to_inventory_decision() {
    let oracle = zero_beta_a();
    let costs = CostParams::new(1.0, 0.5).unwrap();
    let x = Features::Numeric(vec![0.3, -0.2, 0.0, 1.0, 0.5]);
    let jd = joint_decision(&oracle, &x, &[2.7], 5000, &costs, &mut RngStream::new(3)).unwrap();
    let samples = oracle
        .sample(&x, 2.7, 5000, &mut RngStream::new(3))
        .unwrap();
    assert_eq!(jd.price, 2.7);
    assert_eq!(
        jd.quantity,
        inventory_decision(&samples, 2.7, &costs).unwrap()
    );
}

/// Demand `k / p` for every draw, so `(p − c)·d` is equal across prices when c = 0.
struct Hyperbolic(f64);

impl DemandSampler for Hyperbolic {
    fn sample_at_prices(
        &self,
        _x: &Features,
        prices: &[f64],
        m: usize,
        _rng: &mut RngStream,
    ) -> Result<Vec<Vec<f64>>> {
        Ok(prices.iter().map(|&p| vec![self.0 / p; m]).collect())
    }
}

#[test]
fn equal_profit_prices_tie_to_the_lower_one() {
    let costs = CostParams::new(0.0, 0.0).unwrap();
    let x = Features::Numeric(vec![]);
    let jd = joint_decision(
        &Hyperbolic(64.0),
        &x,
        &[4.0, 2.0],
        10,
        &costs,
        &mut RngStream::new(1),
    )
    .unwrap();
    assert_eq!(jd.profile[0].profit, jd.profile[1].profit);
    assert_eq!(jd.price, 2.0);
}

/// `E[clamp(Y, 0, 200)]` for `Y ~ N(mu, sigma²)`.
fn clipped_normal_mean(mu: f64, sigma: f64) -> f64 {
    let (a, b) = ((0.0 - mu) / sigma, (200.0 - mu) / sigma);
    200.0 * (1.0 - std_normal_cdf(b))
        + mu * (std_normal_cdf(b) - std_normal_cdf(a))
        + sigma * (std_normal_pdf(a) - std_normal_pdf(b))
}

#[test]
fn plug_in_mean_overestimates_expected_profit() {
    let oracle = OracleModel::new(DgpKind::A, PriceMode::Discrete, &RngStream::new(21));
    let costs = CostParams::new(1.0, 0.5).unwrap();
    let mut rng = RngStream::new(22);
    for i in 0..50 {
        let x = oracle.sample_features(&mut rng);
        let p = oracle.price_set().sample(&mut rng);
        let mc = RngStream::new(1000 + i);
        let mean_d = clipped_normal_mean(
            oracle.oracle_quantile(&x, p, 0.5).unwrap(),
            oracle.noise_scale(),
        );
        // q inside the demand support; far outside it profit is linear in d and the gap vanishes.
        let q = oracle
            .oracle_quantile(&x, p, rng.uniform_range(0.05, 0.95))
            .unwrap();
        let est = oracle
            .expected_profit(&x, p, q, &costs, 200_000, &mc)
            .unwrap();
        let plug_in = profit(mean_d, p, q, &costs);
        assert!(
            plug_in >= est.mean - 2.0 * est.std_error - 1e-9 * est.mean.abs(),
            "instance {i}: {plug_in} < {}",
            est.mean
        );
        let at_mean = oracle
            .expected_profit(&x, p, mean_d, &costs, 200_000, &mc)
            .unwrap();
        assert!(
            profit(mean_d, p, mean_d, &costs) - at_mean.mean >= 1.0,
            "instance {i}"
        );
    }
}

#[test]
fn critical_ratio_matches_definition() {
    let costs = CostParams::new(1.0, 0.5).unwrap();
    assert!((rho(3.0, &costs).unwrap() - 0.8).abs() < 1e-15);
}

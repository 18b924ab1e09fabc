use genvendor::baselines::{
    erm_fit, pinball_loss, prescriptive_joint, rbe_fit, saa_joint, ErmBank, ErmConfig, ErmForm,
    KernelWeights, KoModel, RbeModel, SaaMode, SaaModel, DEFAULT_TAU_BANK,
};
use genvendor::{
    CostParams, Dataset, DemandRecord, DgpKind, Features, OracleModel, PriceMode, RngStream,
};
use proptest::prelude::*;

fn rec(x: Vec<f64>, p: f64, d: f64) -> DemandRecord {
    DemandRecord {
        x: Features::Numeric(x),
        p,
        d,
    }
}

/// c = 1, s = 0.5, so ρ(3) = 0.8.
fn costs() -> CostParams {
    CostParams::new(1.0, 0.5).unwrap()
}

#[test]
fn saa_takes_the_order_statistic_at_the_price() {
    let mut records: Vec<DemandRecord> = (1..=10)
        .rev()
        .map(|d| rec(vec![d as f64], 3.0, d as f64))
        .collect();
    records.push(rec(vec![0.0], 2.0, 500.0));
    let data = Dataset::new(records);
    let model = SaaModel::fit(&data, SaaMode::ExactPrice).unwrap();
    assert_eq!(model.decide(3.0, &costs()).unwrap(), 8.0);
    assert!(model.decide(2.5, &costs()).is_err());

    // Shuffling features across records changes nothing.
    let mut shuffled = data.clone();
    let n = shuffled.len();
    for i in 0..n {
        let j = (i * 7 + 3) % n;
        let xi = shuffled.records[i].x.clone();
        shuffled.records[i].x = shuffled.records[j].x.clone();
        shuffled.records[j].x = xi;
    }
    let again = SaaModel::fit(&shuffled, SaaMode::ExactPrice).unwrap();
    assert_eq!(again.decide(3.0, &costs()).unwrap(), 8.0);

    let pooled = SaaModel::fit(&data, SaaMode::Pooled).unwrap();
    assert_eq!(pooled.demands_at(2.5).unwrap().len(), 11);
    let window = SaaModel::fit(&data, SaaMode::Window(0.5)).unwrap();
    assert_eq!(window.demands_at(2.5).unwrap().len(), 11);
    assert_eq!(window.demands_at(3.4).unwrap().len(), 10);
}

#[test]
fn ko_examples() {
    let single = Dataset::new(vec![rec(vec![1.0], 3.0, 17.0)]);
    let ko = KoModel::silverman(&single).unwrap();
    assert_eq!(
        ko.decide(&Features::Numeric(vec![1.2]), 3.0, &costs())
            .unwrap(),
        17.0
    );

    // Two records at equal distance from the query, so equal weights.
    let two = Dataset::new(vec![rec(vec![0.0], 3.0, 10.0), rec(vec![2.0], 3.0, 20.0)]);
    let weights = KernelWeights::new(vec![1.0], 1.0).unwrap();
    let ko = KoModel::fit(&two, weights).unwrap();
    assert_eq!(
        ko.decide(&Features::Numeric(vec![1.0]), 3.0, &costs())
            .unwrap(),
        20.0
    );
}

#[test]
fn ko_reports_vanishing_weights() {
    let data = Dataset::new(vec![rec(vec![0.0], 3.0, 10.0)]);
    let ko = KoModel::fit(&data, KernelWeights::new(vec![1e-3], 1e-3).unwrap()).unwrap();
    assert!(ko
        .decide(&Features::Numeric(vec![5.0]), 3.0, &costs())
        .is_err());
}

#[test]
fn rbe_interpolates_noiseless_linear_data() {
    let mut rng = RngStream::new(4);
    let records = (0..50)
        .map(|_| {
            let x = vec![rng.standard_normal(), rng.standard_normal()];
            let p = rng.uniform_range(2.0, 4.0);
            let d = 60.0 - 7.0 * p + 3.0 * x[0] - 2.0 * x[1];
            rec(x, p, d)
        })
        .collect();
    let data = Dataset::new(records);
    let model = rbe_fit(&data).unwrap();
    assert!(model.residuals.iter().all(|r| r.abs() < 1e-6));
    let x = Features::Numeric(vec![0.5, -1.0]);
    let q = model.decide(&x, 3.0, &costs()).unwrap();
    assert!((q - (60.0 - 21.0 + 1.5 + 2.0)).abs() < 1e-6);
}

#[test]
fn rbe_adds_the_residual_order_statistic() {
    let model = RbeModel {
        alpha: -1.0,
        beta: vec![2.0],
        intercept: 10.0,
        residuals: vec![-1.0, 0.0, 1.0, 2.0],
    };
    // ρ(2) = 0.5 with c = 1, s = 0: the second residual, 0.
    let c = CostParams::new(1.0, 0.0).unwrap();
    let x = Features::Numeric(vec![3.0]);
    assert_eq!(model.decide(&x, 2.0, &c).unwrap(), model.linear(&x, 2.0));
}

#[test]
fn pinball_examples() {
    assert!((pinball_loss(0.8, 10.0, 12.0) - 0.4).abs() < 1e-12);
    assert!((pinball_loss(0.8, 12.0, 10.0) - 1.6).abs() < 1e-12);
    assert_eq!(pinball_loss(0.3, 5.0, 5.0), 0.0);
}

#[test]
fn linear_erm_fits_noiseless_line() {
    let mut rng = RngStream::new(6);
    let records = (0..400)
        .map(|_| {
            let x1 = rng.standard_normal();
            let p = rng.uniform_range(2.0, 4.0);
            rec(vec![x1], p, 2.0 + 0.5 * x1 - p)
        })
        .collect();
    let data = Dataset::new(records);
    for tau in [0.3, 0.8] {
        let cfg = ErmConfig {
            seed: 1,
            ..ErmConfig::default()
        };
        let model = erm_fit(&data, tau, ErmForm::Linear, &cfg).unwrap();
        let loss = model.loss(&data).unwrap();
        assert!(loss <= 1e-3, "tau {tau}: loss {loss}");
        for (x1, p) in [(0.0, 3.0), (1.0, 2.5), (-1.5, 3.8)] {
            let f = model.predict(&Features::Numeric(vec![x1]), p).unwrap();
            assert!(
                (f - (2.0 + 0.5 * x1 - p)).abs() <= 0.05,
                "tau {tau} at ({x1},{p}): {f}"
            );
        }
    }
}

#[test]
fn erm_bank_selects_nearest_level() {
    let oracle = OracleModel::new(DgpKind::A, PriceMode::Discrete, &RngStream::new(3));
    let data = oracle.generate_dataset(300, &mut RngStream::new(4));
    let cfg = ErmConfig {
        epochs: 20,
        ..ErmConfig::default()
    };
    let bank = ErmBank::fit(&data, &DEFAULT_TAU_BANK, ErmForm::Linear, &cfg).unwrap();
    assert_eq!(bank.nearest(0.81).unwrap().tau, 0.80);
    assert_eq!(bank.nearest(0.99).unwrap().tau, 0.90);
    assert_eq!(bank.nearest(0.1).unwrap().tau, 0.60);
}

#[test]
fn prescriptive_with_one_effective_record_prices_at_the_top() {
    let data = Dataset::new(vec![
        rec(vec![0.0], 3.0, 30.0),
        rec(vec![50.0], 2.0, 80.0),
        rec(vec![-50.0], 4.0, 5.0),
    ]);
    let weights = KernelWeights::new(vec![0.5], 100.0).unwrap();
    let grid = [2.0, 2.5, 3.0, 3.5, 4.0];
    let jd = prescriptive_joint(
        &data,
        &Features::Numeric(vec![0.0]),
        &grid,
        &costs(),
        &weights,
    )
    .unwrap();
    assert_eq!(jd.quantity, 30.0);
    assert_eq!(jd.price, 4.0);

    // Very wide kernels give every record the same weight, as pooled SAA does.
    let flat = KernelWeights::new(vec![1e9], 1e9).unwrap();
    let jd =
        prescriptive_joint(&data, &Features::Numeric(vec![0.0]), &grid, &costs(), &flat).unwrap();
    let pooled = saa_joint(&data, &grid, &costs()).unwrap();
    assert_eq!(jd.price, pooled.price);
    assert_eq!(jd.quantity, pooled.quantity);
    assert!((jd.profit - pooled.profit).abs() < 1e-9);
}

#[test]
fn saa_joint_with_frozen_demand_picks_the_highest_price() {
    let data = Dataset::new(
        (0..20)
            .map(|i| rec(vec![], 2.0 + 0.1 * i as f64, 50.0))
            .collect(),
    );
    let grid = [2.0, 2.4, 3.1, 3.9];
    let jd = saa_joint(&data, &grid, &costs()).unwrap();
    assert_eq!(jd.price, 3.9);
    assert_eq!(jd.quantity, 50.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quantile_baselines_return_observed_demands(
        seed in any::<u64>(),
        n in 2usize..40,
        p in 2.0f64..4.0,
    ) {
        let mut rng = RngStream::new(seed);
        let records: Vec<DemandRecord> = (0..n)
            .map(|_| rec(vec![rng.standard_normal()], (rng.uniform_range(2.0, 4.0) * 10.0).round() / 10.0, rng.uniform_range(0.0, 200.0)))
            .collect();
        let data = Dataset::new(records);
        let demands = data.demands();
        let x = Features::Numeric(vec![rng.standard_normal()]);

        let pooled = SaaModel::fit(&data, SaaMode::Pooled).unwrap().decide(p, &costs()).unwrap();
        prop_assert!(demands.contains(&pooled));
        let ko = KoModel::fit(&data, KernelWeights::new(vec![2.0], 1.0).unwrap()).unwrap();
        let q = ko.decide(&x, p, &costs()).unwrap();
        prop_assert!(demands.contains(&q) && q >= 0.0);
        let rbe = rbe_fit(&data);
        if let Ok(model) = rbe {
            prop_assert!(model.decide(&x, p, &costs()).unwrap() >= 0.0);
        }
    }
}

use std::path::PathBuf;

use genvendor::harness::Method;
use genvendor::ingest::{
    build_dataset, cost_grid, load_csv, read_csv, run_real_data, FeatureSpec, MealRecord,
    RealDataConfig, DEFAULT_SPLIT_WEEK,
};
use genvendor::{CostParams, TrainConfig};
use proptest::prelude::*;
use sha2::{Digest, Sha256};

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/meals_fixture.csv")
}

const FIXTURE_HASH_1885: &str = "50e81da79302b6f902f0882b82d504cea5b28ab5f18ef0236ff2d5464daf8218";

const TINY: &str = "\
num_orders,homepage_featured,emailer_for_promotion,base_price,checkout_price,meal_id,center_id,week,id
10,0,0,100,90,7,1,1,1
20,0,1,100,95,7,1,2,2
30,1,0,100,99,7,1,3,3
5,0,0,100,80,7,2,2,4
6,0,0,100,81,7,2,3,5
7,1,1,110,82,7,2,4,6
99,0,0,100,80,8,1,3,7
40,0,0,100,85,7,1,4,8
";

#[test]
fn tiny_feature_matrix_matches_hand_computation() {
    let loaded = read_csv(TINY.as_bytes()).unwrap();
    assert!(loaded.skipped.is_empty());
    let spec = FeatureSpec {
        meal_id: 7,
        split_week: 3,
        include_base_price: true,
    };
    let meal = build_dataset(&loaded.records, &spec).unwrap();
    assert_eq!(meal.centers, vec![1, 2]);
    assert_eq!(
        meal.columns,
        [
            "center_1",
            "center_2",
            "lag1",
            "lag2",
            "emailer_for_promotion",
            "homepage_featured",
            "base_price"
        ]
    );
    // Only (center 1, week 3), (center 1, week 4) and (center 2, week 4) have both lags.
    let train: Vec<(Vec<f64>, f64, f64)> = meal
        .train
        .records
        .iter()
        .map(|r| (r.x.numeric().to_vec(), r.p, r.d))
        .collect();
    assert_eq!(
        train,
        vec![(vec![1.0, 0.0, 20.0, 10.0, 0.0, 1.0, 100.0], 99.0, 30.0)]
    );
    let test: Vec<(Vec<f64>, f64, f64)> = meal
        .test
        .records
        .iter()
        .map(|r| (r.x.numeric().to_vec(), r.p, r.d))
        .collect();
    assert_eq!(
        test,
        vec![
            (vec![1.0, 0.0, 30.0, 20.0, 0.0, 0.0, 100.0], 85.0, 40.0),
            (vec![0.0, 1.0, 6.0, 5.0, 1.0, 1.0, 110.0], 82.0, 7.0),
        ]
    );
    assert_eq!(meal.train_weeks, vec![3]);
    assert_eq!(meal.test_weeks, vec![4]);

    let mut h = Sha256::new();
    for col in &meal.columns {
        h.update(col.as_bytes());
        h.update([0u8]);
    }
    for (x, p, d) in train.iter().chain(&test) {
        for v in x.iter().chain([p, d]) {
            h.update(v.to_le_bytes());
        }
    }
    let expected: String = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(meal.feature_hash(), expected);
}

#[test]
fn missing_column_is_a_schema_error() {
    let text = "id,week,center_id,meal_id,checkout_price,base_price,emailer_for_promotion,num_orders\n1,1,1,1,1,1,0,3\n";
    let err = read_csv(text.as_bytes()).unwrap_err();
    assert!(err.to_string().contains("homepage_featured"), "{err}");
}

#[test]
fn malformed_rows_are_skipped_with_line_numbers() {
    let loaded = load_csv(&fixture()).unwrap();
    assert_eq!(loaded.records.len(), 870);
    let lines: Vec<usize> = loaded.skipped.iter().map(|s| s.line).collect();
    assert_eq!(lines, vec![403, 405]);
    assert!(loaded.skipped[0].reason.contains("checkout_price"));
    assert!(loaded.skipped[1].reason.contains("flag"));
}

#[test]
fn fixture_split_and_frozen_hash() {
    let loaded = load_csv(&fixture()).unwrap();
    let meal = build_dataset(
        &loaded.records,
        &FeatureSpec {
            meal_id: 1885,
            ..FeatureSpec::default()
        },
    )
    .unwrap();
    assert_eq!(DEFAULT_SPLIT_WEEK, 120);
    // Weeks 1 and 2 lack lags; three centers per week.
    assert_eq!(meal.train_weeks, (3..=120).collect::<Vec<u32>>());
    assert_eq!(meal.test_weeks, (121..=145).collect::<Vec<u32>>());
    assert_eq!(meal.train.len(), 118 * 3);
    assert_eq!(meal.test.len(), 25 * 3);
    assert_eq!(meal.train.feature_dim(), 3 + 4 + 1);
    assert_eq!(meal.feature_hash(), FIXTURE_HASH_1885);

    let again = build_dataset(
        &load_csv(&fixture()).unwrap().records,
        &FeatureSpec {
            meal_id: 1885,
            ..FeatureSpec::default()
        },
    )
    .unwrap();
    assert_eq!(again.feature_hash(), meal.feature_hash());
}

#[test]
fn unknown_meal_is_empty_error() {
    let loaded = load_csv(&fixture()).unwrap();
    let spec = FeatureSpec {
        meal_id: 4242,
        ..FeatureSpec::default()
    };
    assert!(build_dataset(&loaded.records, &spec).is_err());
}

#[test]
fn cost_grid_has_twelve_settings() {
    let grid = cost_grid();
    assert_eq!(grid.len(), 12);
    for c in [150.0, 200.0, 250.0, 300.0] {
        for s in [0.0, 50.0, 100.0] {
            assert!(grid.contains(&CostParams { c, s }));
        }
    }
}

#[test]
fn real_data_run_completes_on_fixture() {
    let loaded = load_csv(&fixture()).unwrap();
    let cfg = RealDataConfig {
        meals: vec![1885, 1993],
        methods: vec![
            Method::Saa,
            Method::Rbe,
            Method::Ko,
            Method::ErmLr,
            Method::Cdgm,
        ],
        m: 200,
        cdgm: TrainConfig {
            epochs: 20,
            ..TrainConfig::default()
        },
        ..RealDataConfig::default()
    };
    let report = run_real_data(&loaded, &cfg).unwrap();
    assert_eq!(report.rows.len(), 2 * 5 * 12);
    assert_eq!(report.skipped_rows, 2);
    for row in &report.rows {
        assert!(row.mean_profit.is_finite());
        assert_eq!(row.n_test, 75);
    }
    let csv = report.to_csv().unwrap();
    assert!(csv.starts_with("# version: genvendor "));
    assert!(csv.contains("meal_1885,c=150_s=0,saa,avg_profit,all,"));
}

fn record(week: u32, center_id: u64, num_orders: f64) -> MealRecord {
    MealRecord {
        id: u64::from(week) * 100 + center_id,
        week,
        center_id,
        meal_id: 7,
        checkout_price: 100.0 + f64::from(week),
        base_price: 120.0,
        emailer_for_promotion: false,
        homepage_featured: week.is_multiple_of(2),
        num_orders,
    }
}

#[test]
fn three_week_series_keeps_only_the_third_week() {
    let records: Vec<MealRecord> = [(1, 11.0), (2, 12.0), (3, 13.0)]
        .map(|(w, d)| record(w, 5, d))
        .to_vec();
    let err = build_dataset(
        &records,
        &FeatureSpec {
            meal_id: 7,
            split_week: 3,
            include_base_price: false,
        },
    )
    .unwrap_err();
    assert!(err.to_string().contains("(1 train, 0 test rows)"), "{err}");

    let mut four = records.clone();
    four.push(record(4, 5, 14.0));
    let meal = build_dataset(
        &four,
        &FeatureSpec {
            meal_id: 7,
            split_week: 3,
            include_base_price: false,
        },
    )
    .unwrap();
    let r = &meal.train.records[0];
    assert_eq!(meal.train.len(), 1);
    assert_eq!(r.x.numeric(), &[1.0, 12.0, 11.0, 0.0, 0.0]);
    assert_eq!((r.p, r.d), (103.0, 13.0));
    assert_eq!(
        meal.test.records[0].x.numeric(),
        &[1.0, 13.0, 12.0, 0.0, 1.0]
    );
}

#[test]
fn split_at_week_120_around_the_boundary() {
    let records: Vec<MealRecord> = (117..=121).map(|w| record(w, 1, f64::from(w))).collect();
    let meal = build_dataset(
        &records,
        &FeatureSpec {
            meal_id: 7,
            ..FeatureSpec::default()
        },
    )
    .unwrap();
    assert_eq!(meal.train_weeks, vec![119, 120]);
    assert_eq!(meal.test_weeks, vec![121]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn feature_invariants(
        cells in proptest::collection::btree_set((1u64..5, 1u32..25), 1..80),
        split in 3u32..22,
        seed in any::<u64>(),
    ) {
        let mut records: Vec<MealRecord> = cells.iter().map(|&(c, w)| record(w, c, (c * 7 + u64::from(w)) as f64)).collect();
        let spec = FeatureSpec { meal_id: 7, split_week: split, include_base_price: true };
        let Ok(meal) = build_dataset(&records, &spec) else { return Ok(()) };

        let observed: Vec<u64> = cells.iter().map(|&(c, _)| c).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        prop_assert_eq!(&meal.centers, &observed);
        let k = observed.len();
        for r in meal.train.records.iter().chain(&meal.test.records) {
            let onehot = &r.x.numeric()[..k];
            prop_assert!(onehot.iter().all(|&v| v == 0.0 || v == 1.0));
            prop_assert_eq!(onehot.iter().sum::<f64>(), 1.0);
        }
        prop_assert!(meal.train_weeks.last().unwrap() < meal.test_weeks.first().unwrap());
        prop_assert!(*meal.train_weeks.last().unwrap() <= split && *meal.test_weeks.first().unwrap() > split);

        // Input order does not matter.
        let mut rng = genvendor::RngStream::new(seed);
        let perm = rng.permutation(records.len());
        records = perm.into_iter().map(|i| records[i].clone()).collect();
        prop_assert_eq!(build_dataset(&records, &spec).unwrap().feature_hash(), meal.feature_hash());
    }
}

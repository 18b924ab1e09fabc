//! Shared fixtures for the benchmarks.

use genvendor::neural::{Activation, Dense, Mlp};
use genvendor::numerics::sort_floats;
use genvendor::{Dataset, DgpKind, Generator, OracleModel, PriceMode, RngStream, TrainConfig};

pub fn oracle(kind: DgpKind) -> OracleModel {
    OracleModel::new(kind, PriceMode::Discrete, &RngStream::new(1))
}

pub fn dataset(kind: DgpKind, n: usize) -> Dataset {
    oracle(kind).generate_dataset(n, &mut RngStream::new(2))
}

pub fn sorted_uniform(m: usize, seed: u64) -> Vec<f64> {
    let mut rng = RngStream::new(seed);
    let mut v: Vec<f64> = (0..m).map(|_| rng.uniform_range(0.0, 200.0)).collect();
    sort_floats(&mut v);
    v
}

/// ReLU network with an identity output layer.
pub fn mlp(widths: &[usize]) -> Mlp {
    let mut rng = RngStream::new(3);
    let layers = widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let act = if i + 2 == widths.len() {
                Activation::Identity
            } else {
                Activation::Relu
            };
            Dense::init(w[0], w[1], act, &mut rng)
        })
        .collect();
    Mlp::new(layers).expect("consistent widths")
}

/// A briefly trained generator; decision cost does not depend on fit quality.
pub fn generator(kind: DgpKind, n: usize) -> Generator {
    let cfg = TrainConfig {
        epochs: 3,
        seed: 4,
        ..TrainConfig::default()
    };
    genvendor::train(&dataset(kind, n), &cfg).expect("training succeeds")
}

//! Shared fixtures for the criterion benches.

use uot_lab::costs::CostSpec;
use uot_lab::math::{Mat, Rng};
use uot_lab::operators::{CorruptionOp, OpSpec};
use uot_lab::trainer::{TrainConfig, TrainState};

pub fn normal_mat(seed: u64, rows: usize, cols: usize) -> Mat {
    let mut rng = Rng::new(seed);
    Mat::from_fn(rows, cols, |_, _| rng.normal())
}

pub fn normal_cloud(seed: u64, n: usize, dim: usize) -> Vec<Vec<f64>> {
    normal_mat(seed, n, dim).to_rows()
}

/// Blurred 1D signals of length `len` with both cost terms.
pub fn blur_spec(len: usize) -> CostSpec {
    let op = CorruptionOp::from_spec(&OpSpec::Blur1d { len, kernel_size: 9, sigma: 0.44 }).unwrap();
    CostSpec::new(1.0, true, true, Default::default(), 2.0, op, None).unwrap()
}

pub fn quadratic_spec(dim: usize) -> CostSpec {
    CostSpec::new(1.0, false, true, Default::default(), 1.0, CorruptionOp::Identity { dim }, None).unwrap()
}

pub fn train_state(dim: usize, hidden: usize, batch: usize) -> (TrainConfig, TrainState) {
    let config = TrainConfig {
        batch_size: batch,
        map_hidden: vec![hidden, hidden],
        potential_hidden: vec![hidden, hidden],
        seed: 1,
        ..TrainConfig::default()
    };
    let state = TrainState::init(&config, dim, dim).unwrap();
    (config, state)
}

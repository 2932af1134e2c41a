//! Library results checked against oracles built outside the crate:
//! nalgebra SVD, statrs quantiles and Gaussian closed forms.

use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, Normal};
use uot_lab::costs::{CostSpec, DivergenceConj, LikelihoodKind};
use uot_lab::math::{dist_sq, Mat, Rng};
use uot_lab::operators::{CorruptionOp, OpSpec};
use uot_lab::oracle::{hungarian, solve_ot_exact, DiscreteMeasure};
use uot_lab::trainer::{train, FnSampler, TrainConfig};

fn svd_norm(m: &Mat) -> f64 {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data()).singular_values().max()
}

#[test]
fn lipschitz_matches_dense_svd() {
    let mut rng = Rng::new(2024);
    let mut ops = vec![
        CorruptionOp::from_spec(&OpSpec::Projection).unwrap(),
        CorruptionOp::from_spec(&OpSpec::Blur1d { len: 64, kernel_size: 9, sigma: 0.44 }).unwrap(),
        CorruptionOp::from_spec(&OpSpec::Blur1d { len: 17, kernel_size: 5, sigma: 2.0 }).unwrap(),
        CorruptionOp::from_spec(&OpSpec::Downsample { len: 64, factor: 4 }).unwrap(),
        CorruptionOp::from_spec(&OpSpec::Identity { dim: 5 }).unwrap(),
    ];
    for (r, c) in [(3, 3), (5, 2), (2, 7), (16, 16), (40, 64)] {
        let rows: Vec<Vec<f64>> = (0..r).map(|_| (0..c).map(|_| rng.normal()).collect()).collect();
        ops.push(CorruptionOp::from_spec(&OpSpec::LinearMatrix { rows }).unwrap());
    }
    for op in &ops {
        let dense = op.to_dense().unwrap();
        let want = svd_norm(&dense);
        let got = op.lipschitz_estimate(16, &mut rng).unwrap();
        assert!(!got.is_lower_bound());
        assert!((got.value - want).abs() <= 1e-8 * want.max(1.0), "{:?}: {} vs svd {want}", op.kind(), got.value);
    }
}

#[test]
fn nonlinear_lipschitz_probe_is_a_lower_bound() {
    // the analytic map has Jacobian scale·sech² + kappa·K, bounded by scale + kappa·‖K‖ = scale + kappa
    let op = CorruptionOp::from_spec(&OpSpec::AnalyticNonlinear {
        len: 16,
        scale: 0.5,
        kappa: 0.5,
        kernel_size: 5,
        sigma: 1.0,
    })
    .unwrap();
    let est = op.lipschitz_estimate(512, &mut Rng::new(1)).unwrap();
    assert!(est.is_lower_bound());
    assert!(est.value <= 1.0 + 1e-12 && est.value > 0.8, "{}", est.value);
}

/// `n` quantile-stratified draws `q((i + ½)/n)` of N(mean, sd²).
fn stratified(n: usize, mean: f64, sd: f64) -> Vec<f64> {
    let d = Normal::new(mean, sd).unwrap();
    (0..n).map(|i| d.inverse_cdf((i as f64 + 0.5) / n as f64)).collect()
}

#[test]
fn assignment_recovers_gaussian_w2() {
    // N(0, 1) -> N(2, 2²): W₂² = 2² + (2 − 1)² = 5
    let w2 = 5.0;
    let n = 1000;
    let mut a = stratified(n, 0.0, 1.0);
    let mut b = stratified(n, 2.0, 2.0);
    // shuffle so the solver cannot lean on the sorted order
    let mut rng = Rng::new(9);
    rng.shuffle(&mut a);
    rng.shuffle(&mut b);
    let cost = Mat::from_fn(n, n, |i, j| (a[i] - b[j]).powi(2));
    let assign = hungarian(&cost).unwrap();
    let total: f64 = assign.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum::<f64>() / n as f64;
    assert!((total - w2).abs() / w2 < 0.02, "{total}");

    // the monotone coupling is optimal in 1D
    let mut sa = a.clone();
    let mut sb = b.clone();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let sorted: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n as f64;
    assert!((total - sorted).abs() < 1e-9 * sorted);

    let m = 256;
    let (a, b) = (stratified(m, 0.0, 1.0), stratified(m, 2.0, 2.0));
    let src = DiscreteMeasure::uniform(a.iter().map(|v| vec![*v]).collect()).unwrap();
    let tgt = DiscreteMeasure::uniform(b.iter().map(|v| vec![*v]).collect()).unwrap();
    let cost = Mat::from_fn(m, m, |i, j| (a[i] - b[j]).powi(2));
    let plan = solve_ot_exact(&src, &tgt, &cost).unwrap();
    let c = plan.cost(&cost).unwrap();
    assert!((c - w2).abs() / w2 < 0.02, "{c}");
}

#[test]
fn cost_matrix_agrees_with_closed_form_quadratic() {
    let spec = CostSpec::new(
        0.5,
        false,
        true,
        LikelihoodKind::GaussianL2,
        3.0,
        CorruptionOp::Identity { dim: 2 },
        None,
    )
    .unwrap();
    let mut rng = Rng::new(4);
    let ys: Vec<Vec<f64>> = (0..5).map(|_| vec![rng.normal(), rng.normal()]).collect();
    let xs: Vec<Vec<f64>> = (0..4).map(|_| vec![rng.normal(), rng.normal()]).collect();
    let c = spec.cost_matrix(&ys, &xs).unwrap();
    for i in 0..5 {
        for j in 0..4 {
            assert!((c.get(i, j) - 1.5 * dist_sq(&ys[i], &xs[j])).abs() < 1e-14);
        }
    }
}

#[test]
fn trained_ot_map_learns_a_translation() {
    // N(0, I) -> N(m, I): the OT map is y + m and W₂² = ‖m‖²
    let shift = [1.0, -1.0];
    let w2 = shift[0] * shift[0] + shift[1] * shift[1];
    let spec = CostSpec::new(
        1.0,
        false,
        true,
        LikelihoodKind::GaussianL2,
        1.0,
        CorruptionOp::Identity { dim: 2 },
        None,
    )
    .unwrap();
    let config = TrainConfig {
        iterations: 6000,
        batch_size: 128,
        lr_map: 3e-4,
        lr_potential: 3e-4,
        map_hidden: vec![32, 32],
        potential_hidden: vec![32, 32],
        conj: DivergenceConj::Identity,
        seed: 1,
        ..TrainConfig::default()
    };
    let mut mu = FnSampler::new(2, |r: &mut Rng| Ok(vec![r.normal(), r.normal()]));
    let mut nu = FnSampler::new(2, move |r: &mut Rng| Ok(vec![r.normal() + shift[0], r.normal() + shift[1]]));
    let state = train(&config, &mut mu, &mut nu, &spec).unwrap();

    let mut rng = Rng::new(77);
    let ys = Mat::from_fn(2000, 2, |_, _| rng.normal());
    let xs = state.transport(&ys).unwrap();
    let n = ys.rows() as f64;
    let cost: f64 = ys.row_iter().zip(xs.row_iter()).map(|(y, x)| dist_sq(y, x)).sum::<f64>() / n;
    let err: f64 = ys
        .row_iter()
        .zip(xs.row_iter())
        .map(|(y, x)| dist_sq(x, &[y[0] + shift[0], y[1] + shift[1]]))
        .sum::<f64>()
        / n;
    assert!((cost - w2).abs() / w2 < 0.10, "transport cost {cost}, map error {err}");
    assert!(err < 0.05, "distance to the true map {err}");
}

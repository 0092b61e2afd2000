use aeromag_core::classifier::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

const SI: [f64; 6] = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0];

/// Six unit-variance Gaussian blobs centred 10σ apart along the axes.
fn blobs(per_class: usize, seed: u64) -> (FeatureMatrix, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for i in 0..per_class * 6 {
        let c = i % 6;
        for j in 0..6 {
            let centre = if j == c { 10.0 } else { 0.0 };
            data.push(centre + noise.sample(&mut rng));
        }
        labels.push(c);
    }
    (FeatureMatrix::new(6, data).unwrap(), labels)
}

fn random_batch(n: usize, seed: u64) -> (FeatureMatrix, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = Uniform::new(-3.0, 3.0).unwrap();
    let data = (0..n * 6).map(|_| u.sample(&mut rng)).collect();
    let labels = (0..n).map(|i| (i * 7 + seed as usize) % 6).collect();
    (FeatureMatrix::new(6, data).unwrap(), labels)
}

#[test]
fn full_size_backprop_matches_finite_differences() {
    for seed in 0..4 {
        let model = MlpModel::new(6, 100, 6, seed);
        let (x, y) = random_batch(32, seed);
        let err = gradient_check(&model, &x, &y).unwrap();
        assert!(err <= 1e-5, "seed {seed}: {err:e}");
    }
}

#[test]
fn small_models_backprop_match_finite_differences() {
    for seed in 0..20 {
        let model = MlpModel::new(6, 5, 6, 100 + seed);
        let (x, y) = random_batch(8, seed);
        assert!(gradient_check(&model, &x, &y).unwrap() <= 1e-5);
    }
}

#[test]
fn separable_blobs_reach_high_validation_accuracy() {
    let (x, y) = blobs(100, 7);
    let (model, report) = train_mlp(&x, &y, &SI, &TrainingConfig { seed: 7, ..Default::default() }).unwrap();
    assert!(report.validation_accuracy >= 0.95, "{}", report.validation_accuracy);
    let (hx, hy) = blobs(50, 99);
    let pred = predict_classes(&model, &hx).unwrap();
    let acc = pred.iter().zip(&hy).filter(|(p, y)| p == y).count() as f64 / hy.len() as f64;
    assert!(acc >= 0.95, "held-out {acc}");
}

#[test]
fn training_is_bit_reproducible() {
    let (x, y) = blobs(20, 1);
    for optimizer in [Optimizer::ScaledConjugateGradient, Optimizer::GradientDescentMomentum] {
        let cfg = TrainingConfig { optimizer, max_epochs: 60, seed: 5, ..Default::default() };
        let (a, ra) = train_mlp(&x, &y, &SI, &cfg).unwrap();
        let (b, rb) = train_mlp(&x, &y, &SI, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }
}

#[test]
fn momentum_descent_loss_never_increases() {
    let (x, y) = blobs(30, 3);
    let cfg = TrainingConfig { optimizer: Optimizer::GradientDescentMomentum, max_epochs: 150, ..Default::default() };
    let (_, report) = train_mlp(&x, &y, &SI, &cfg).unwrap();
    for w in report.history.windows(2) {
        assert!(w[1].train_loss <= w[0].train_loss + 1e-6);
    }
}

#[test]
fn predictions_are_normalised_and_pure() {
    let model = MlpModel::new(6, 100, 6, 4);
    let (mut x, _) = random_batch(20, 4);
    let first = x.row(0).to_vec();
    x.data.extend_from_slice(&first);
    let p = predict(&model, &x).unwrap();
    for row in &p {
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
    assert_eq!(p[0], p[20]);
}

#[test]
fn affine_rescaled_feature_keeps_predicted_classes() {
    let (x, y) = blobs(40, 12);
    let cfg = TrainingConfig { seed: 12, ..Default::default() };
    let (m1, _) = train_mlp(&x, &y, &SI, &cfg).unwrap();
    let mut scaled = x.clone();
    for i in 0..scaled.n_rows() {
        scaled.data[i * 6 + 2] = 250.0 * scaled.data[i * 6 + 2] + 1000.0;
    }
    let (m2, _) = train_mlp(&scaled, &y, &SI, &cfg).unwrap();
    assert_eq!(predict_classes(&m1, &x).unwrap(), predict_classes(&m2, &scaled).unwrap());
}

#[test]
fn constant_feature_is_flagged_not_fatal() {
    let (mut x, y) = blobs(10, 2);
    for i in 0..x.n_rows() {
        x.data[i * 6 + 4] = 3.0;
    }
    let (m, report) = train_mlp(&x, &y, &SI, &TrainingConfig { max_epochs: 20, ..Default::default() }).unwrap();
    assert!(report.degenerate_features[4]);
    assert_eq!(m.feature_std[4], 1.0);
    assert!(m.is_valid());
}

#[test]
fn model_json_round_trip() {
    let m = MlpModel::new(6, 100, 6, 8);
    let json = serde_json::to_string(&m).unwrap();
    let back: MlpModel = serde_json::from_str(&json).unwrap();
    assert_eq!(m, back);
}

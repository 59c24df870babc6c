use ndarray::{Array2, ArrayView2};
use rand::Rng;
use superfeed::nn::{self, MlpModel, Optimizer, Samples, TrainConfig};
use superfeed::pipeline::{ampf_shape, ampl_shape};
use superfeed::rng;

fn random_matrix(rows: usize, cols: usize, r: &mut superfeed::rng::SimRng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| r.random_range(-1.0..1.0))
}

/// Central-difference derivative of the loss with respect to one parameter.
fn numeric(model: &MlpModel, x: ArrayView2<'_, f64>, t: ArrayView2<'_, f64>, poke: impl Fn(&mut MlpModel, f64)) -> f64 {
    let h = 1e-6;
    let mut plus = model.clone();
    poke(&mut plus, h);
    let mut minus = model.clone();
    poke(&mut minus, -h);
    (plus.loss(x, t).unwrap() - minus.loss(x, t).unwrap()) / (2.0 * h)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

#[test]
fn backprop_matches_finite_differences() {
    let mut worst: f64 = 0.0;
    for point in 0..20u64 {
        let mut r = rng::seeded(500 + point);
        let mut model = MlpModel::init(4, 8, 4, point);
        model.norm_mean = random_matrix(1, 4, &mut r).row(0).to_owned();
        model.norm_std = random_matrix(1, 4, &mut r).row(0).mapv(|v| 0.5 + v.abs());
        model.b1 = random_matrix(1, 8, &mut r).row(0).to_owned();
        model.b2 = random_matrix(1, 4, &mut r).row(0).to_owned();
        let x = random_matrix(5, 4, &mut r);
        let t = random_matrix(5, 4, &mut r);
        let (_, g) = model.gradients(x.view(), t.view()).unwrap();
        for ((i, j), &a) in g.w1.indexed_iter() {
            let n = numeric(&model, x.view(), t.view(), |m, h| m.w1[[i, j]] += h);
            worst = worst.max(rel_err(a, n));
        }
        for (i, &a) in g.b1.indexed_iter() {
            let n = numeric(&model, x.view(), t.view(), |m, h| m.b1[i] += h);
            worst = worst.max(rel_err(a, n));
        }
        for ((i, j), &a) in g.w2.indexed_iter() {
            let n = numeric(&model, x.view(), t.view(), |m, h| m.w2[[i, j]] += h);
            worst = worst.max(rel_err(a, n));
        }
        for (i, &a) in g.b2.indexed_iter() {
            let n = numeric(&model, x.view(), t.view(), |m, h| m.b2[i] += h);
            worst = worst.max(rel_err(a, n));
        }
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

fn line_samples(count: usize, seed: u64) -> Samples {
    let mut r = rng::seeded(seed);
    let x = Array2::from_shape_fn((count, 1), |_| r.random_range(0.5..1.5));
    let t = x.mapv(|v| 2.0 * v);
    Samples { inputs: x, targets: t }
}

#[test]
fn learns_a_line() {
    let data = line_samples(256, 3);
    let mut model = MlpModel::init(1, 1, 1, 9);
    model.fit_standardization(data.inputs.view()).unwrap();
    // Start on the positive side of the activation so the fit is linear.
    model.w1[[0, 0]] = 1.0;
    model.b1[0] = 3.0;
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        batch_size: 32,
        epochs: 200,
        early_stop_patience: 0,
        ..Default::default()
    };
    let (trained, report) = nn::train(&model, &data, None, &cfg).unwrap();
    assert_eq!(report.train_loss.len(), 200);
    let last = *report.train_loss.last().unwrap();
    assert!(last < 1e-4, "final loss {last}");
    let y = trained.forward(&[1.25]).unwrap()[0];
    assert!((y - 2.5).abs() < 1e-2);
}

#[test]
fn training_is_deterministic() {
    let mut r = rng::seeded(11);
    let data = Samples {
        inputs: random_matrix(300, 6, &mut r),
        targets: random_matrix(300, 3, &mut r),
    };
    let val = Samples {
        inputs: random_matrix(60, 6, &mut r),
        targets: random_matrix(60, 3, &mut r),
    };
    let mut model = MlpModel::init(6, 12, 3, 4);
    model.fit_standardization(data.inputs.view()).unwrap();
    let cfg = TrainConfig {
        epochs: 15,
        batch_size: 16,
        ..Default::default()
    };
    let (a, ra) = nn::train(&model, &data, Some(&val), &cfg).unwrap();
    let (b, rb) = nn::train(&model, &data, Some(&val), &cfg).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(a, b);
    let sgd = TrainConfig {
        optimizer: Optimizer::Sgd,
        ..cfg.clone()
    };
    let (_, rs) = nn::train(&model, &data, Some(&val), &sgd).unwrap();
    assert_ne!(rs.train_loss, ra.train_loss);
    let other = TrainConfig {
        seed: cfg.seed + 1,
        ..cfg
    };
    let (_, ro) = nn::train(&model, &data, Some(&val), &other).unwrap();
    assert_ne!(ro.train_loss, ra.train_loss);
}

#[test]
fn saved_models_reload_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ampl.json");
    let (i, h, o) = ampl_shape(64);
    let mut model = MlpModel::init(i, h, o, 21);
    let mut r = rng::seeded(22);
    let x = random_matrix(100, i, &mut r).mapv(f64::abs);
    model.fit_standardization(x.view()).unwrap();
    model.save(&path).unwrap();
    let back = MlpModel::load(&path).unwrap();
    assert_eq!(back, model);
    for row in x.rows() {
        let row = row.to_vec();
        assert_eq!(back.forward(&row).unwrap(), model.forward(&row).unwrap());
    }

    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(doc["in_dim"], 64);
    assert_eq!(doc["hid_dim"], 128);
    assert_eq!(doc["out_dim"], 64);

    let mut edited = doc.clone();
    edited["version"] = serde_json::json!(99);
    assert!(MlpModel::from_json(&edited.to_string()).is_err());
    let mut edited = doc;
    edited["out_dim"] = serde_json::json!(63);
    assert!(MlpModel::from_json(&edited.to_string()).is_err());
}

#[test]
fn complexity_totals() {
    for n in [16usize, 32, 64, 128] {
        let (ai, ah, ao) = ampl_shape(n);
        let (fi, fh, fo) = ampf_shape(n);
        assert_eq!((ai, ah, ao), (n, 2 * n, n));
        assert_eq!((fi, fh, fo), (2 * n, 2 * n, n));
        // Dense layer: in·out weights + out biases; in·out products and
        // (in−1)·out additions.
        let dense_w = |i: usize, o: usize| (i * o + o) as u64;
        let dense_f = |i: usize, o: usize| (i * o + (i - 1) * o) as u64;
        let weights = dense_w(ai, ah) + dense_w(ah, ao) + dense_w(fi, fh) + dense_w(fh, fo);
        let flops = dense_f(ai, ah) + dense_f(ah, ao) + dense_f(fi, fh) + dense_f(fh, fo);
        let ampl = MlpModel::zeros(ai, ah, ao);
        let ampf = MlpModel::zeros(fi, fh, fo);
        assert_eq!(nn::count_weights(&ampl) + nn::count_weights(&ampf), weights);
        assert_eq!(nn::count_flops(&ampl) + nn::count_flops(&ampf), flops);
        assert_eq!(weights, (10 * n * n + 6 * n) as u64);
        assert_eq!(flops, (20 * n * n - 6 * n) as u64);
    }
    assert_eq!(nn::shape_weights(64, 128, 64), 16_576);
    assert_eq!(nn::shape_weights(128, 128, 64), 24_768);
}

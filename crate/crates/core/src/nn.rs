//! Single-hidden-layer perceptron with fixed input standardization.
//!
//! `y = LReLU(((x − mean) / std)·W1 + b1)·W2 + b2`, trained on the batch
//! mean of the per-sample squared L2 error.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const MODEL_FORMAT: &str = "superfeed-mlp";
pub const MODEL_VERSION: u32 = 1;

/// Default negative-side slope of the hidden activation.
pub const DEFAULT_LRELU_SLOPE: f64 = 0.01;

/// Standard deviations below this are treated as 1 to avoid blowing up
/// constant features.
const MIN_STD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub norm_mean: Array1<f64>,
    pub norm_std: Array1<f64>,
    /// `in_dim × hid_dim`
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// `hid_dim × out_dim`
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub lrelu_slope: f64,
}

impl MlpModel {
    /// All-zero weights, identity standardization.
    pub fn zeros(in_dim: usize, hid_dim: usize, out_dim: usize) -> Self {
        Self {
            norm_mean: Array1::zeros(in_dim),
            norm_std: Array1::ones(in_dim),
            w1: Array2::zeros((in_dim, hid_dim)),
            b1: Array1::zeros(hid_dim),
            w2: Array2::zeros((hid_dim, out_dim)),
            b2: Array1::zeros(out_dim),
            lrelu_slope: DEFAULT_LRELU_SLOPE,
        }
    }

    /// Glorot-uniform weights drawn from `seed`, zero biases.
    pub fn init(in_dim: usize, hid_dim: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let mut glorot = |rows: usize, cols: usize| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..=limit))
        };
        let w1 = glorot(in_dim, hid_dim);
        let w2 = glorot(hid_dim, out_dim);
        Self {
            w1,
            w2,
            ..Self::zeros(in_dim, hid_dim, out_dim)
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hid_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.w2.ncols()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.in_dim(), self.hid_dim(), self.out_dim())
    }

    /// Freezes per-feature mean and (population) standard deviation of
    /// `inputs`, one sample per row.
    pub fn fit_standardization(&mut self, inputs: ArrayView2<'_, f64>) -> Result<()> {
        if inputs.ncols() != self.in_dim() {
            return Err(Error::dim("standardization inputs", self.in_dim(), inputs.ncols()));
        }
        if inputs.nrows() == 0 {
            return Err(Error::InvalidArgument("no samples to standardize".into()));
        }
        let mean = inputs.mean_axis(Axis(0)).expect("nonempty");
        let std = inputs
            .std_axis(Axis(0), 0.0)
            .mapv(|s| if s < MIN_STD { 1.0 } else { s });
        self.norm_mean = mean;
        self.norm_std = std;
        Ok(())
    }

    fn check(&self) -> Result<()> {
        let (i, h, o) = self.shape();
        if self.norm_mean.len() != i || self.norm_std.len() != i {
            return Err(Error::Model(format!(
                "normalization vectors have length {}/{}, expected {i}",
                self.norm_mean.len(),
                self.norm_std.len()
            )));
        }
        if self.w2.nrows() != h || self.b1.len() != h || self.b2.len() != o {
            return Err(Error::Model("layer shapes are inconsistent".into()));
        }
        if self.norm_std.iter().any(|&s| s.is_nan() || s <= 0.0) {
            return Err(Error::Model("norm_std must be positive".into()));
        }
        Ok(())
    }

    #[inline]
    fn act(&self, u: f64) -> f64 {
        if u >= 0.0 {
            u
        } else {
            self.lrelu_slope * u
        }
    }

    fn standardize(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        (&x - &self.norm_mean) / &self.norm_std
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim() {
            return Err(Error::dim("network input", self.in_dim(), x.len()));
        }
        let xs: Array1<f64> = x
            .iter()
            .zip(&self.norm_mean)
            .zip(&self.norm_std)
            .map(|((&v, &m), &s)| (v - m) / s)
            .collect();
        let mut h = xs.dot(&self.w1) + &self.b1;
        h.mapv_inplace(|u| self.act(u));
        Ok((h.dot(&self.w2) + &self.b2).to_vec())
    }

    /// Row-wise forward pass.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.in_dim() {
            return Err(Error::dim("network input", self.in_dim(), x.ncols()));
        }
        Ok(self.pass(x).y)
    }

    fn pass(&self, x: ArrayView2<'_, f64>) -> Pass {
        let xs = self.standardize(x);
        let z1 = xs.dot(&self.w1) + &self.b1;
        let h = z1.mapv(|u| self.act(u));
        let y = h.dot(&self.w2) + &self.b2;
        Pass { xs, z1, h, y }
    }

    /// Batch mean of `‖f(x) − t‖²`.
    pub fn loss(&self, x: ArrayView2<'_, f64>, t: ArrayView2<'_, f64>) -> Result<f64> {
        check_pair(self, x, t)?;
        Ok(batch_loss(&self.pass(x).y, t))
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn gradients(&self, x: ArrayView2<'_, f64>, t: ArrayView2<'_, f64>) -> Result<(f64, Gradients)> {
        check_pair(self, x, t)?;
        let pass = self.pass(x);
        let b = x.nrows() as f64;
        let loss = batch_loss(&pass.y, t);
        let dy = (&pass.y - &t) * (2.0 / b);
        let w2 = pass.h.t().dot(&dy);
        let b2 = dy.sum_axis(Axis(0));
        let mut dz1 = dy.dot(&self.w2.t());
        let slope = self.lrelu_slope;
        dz1.zip_mut_with(&pass.z1, |d, &z| {
            if z < 0.0 {
                *d *= slope;
            }
        });
        let w1 = pass.xs.t().dot(&dz1);
        let b1 = dz1.sum_axis(Axis(0));
        Ok((loss, Gradients { w1, b1, w2, b2 }))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        let (i, h, o) = self.shape();
        let doc = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            in_dim: i,
            hid_dim: h,
            out_dim: o,
            lrelu_slope: self.lrelu_slope,
            norm_mean: self.norm_mean.to_vec(),
            norm_std: self.norm_std.to_vec(),
            w1: self.w1.iter().copied().collect(),
            b1: self.b1.to_vec(),
            w2: self.w2.iter().copied().collect(),
            b2: self.b2.to_vec(),
        };
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Model(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelFile = serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
        if doc.format != MODEL_FORMAT {
            return Err(Error::Model(format!("unknown format {:?}", doc.format)));
        }
        if doc.version != MODEL_VERSION {
            return Err(Error::Model(format!(
                "schema version {} is not supported (expected {MODEL_VERSION})",
                doc.version
            )));
        }
        let (i, h, o) = (doc.in_dim, doc.hid_dim, doc.out_dim);
        let sized = |name: &str, v: Vec<f64>, len: usize| -> Result<Vec<f64>> {
            if v.len() != len {
                return Err(Error::Model(format!("{name} has {} values, expected {len}", v.len())));
            }
            Ok(v)
        };
        let model = Self {
            norm_mean: sized("norm_mean", doc.norm_mean, i)?.into(),
            norm_std: sized("norm_std", doc.norm_std, i)?.into(),
            w1: Array2::from_shape_vec((i, h), sized("w1", doc.w1, i * h)?).expect("sized"),
            b1: sized("b1", doc.b1, h)?.into(),
            w2: Array2::from_shape_vec((h, o), sized("w2", doc.w2, h * o)?).expect("sized"),
            b2: sized("b2", doc.b2, o)?.into(),
            lrelu_slope: doc.lrelu_slope,
        };
        model.check()?;
        Ok(model)
    }
}

/// On-disk model document, row-major weight arrays.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    in_dim: usize,
    hid_dim: usize,
    out_dim: usize,
    lrelu_slope: f64,
    norm_mean: Vec<f64>,
    norm_std: Vec<f64>,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

struct Pass {
    xs: Array2<f64>,
    z1: Array2<f64>,
    h: Array2<f64>,
    y: Array2<f64>,
}

fn check_pair(model: &MlpModel, x: ArrayView2<'_, f64>, t: ArrayView2<'_, f64>) -> Result<()> {
    if x.ncols() != model.in_dim() {
        return Err(Error::dim("network input", model.in_dim(), x.ncols()));
    }
    if t.ncols() != model.out_dim() {
        return Err(Error::dim("network target", model.out_dim(), t.ncols()));
    }
    if x.nrows() != t.nrows() || x.nrows() == 0 {
        return Err(Error::InvalidArgument(format!(
            "{} inputs vs {} targets",
            x.nrows(),
            t.nrows()
        )));
    }
    Ok(())
}

fn batch_loss(y: &Array2<f64>, t: ArrayView2<'_, f64>) -> f64 {
    let diff = y - &t;
    diff.iter().map(|d| d * d).sum::<f64>() / y.nrows() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Dense-layer weights and biases.
pub fn count_weights(model: &MlpModel) -> u64 {
    let (i, h, o) = model.shape();
    shape_weights(i, h, o)
}

/// Dense-layer FLOPs, `(2·in − 1)·hid + (2·hid − 1)·out`.
pub fn count_flops(model: &MlpModel) -> u64 {
    let (i, h, o) = model.shape();
    shape_flops(i, h, o)
}

pub fn shape_weights(i: usize, h: usize, o: usize) -> u64 {
    (i * h + h + h * o + o) as u64
}

pub fn shape_flops(i: usize, h: usize, o: usize) -> u64 {
    ((2 * i - 1) * h + (2 * h - 1) * o) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub early_stop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 100,
            optimizer: Optimizer::default(),
            seed: 17,
            early_stop_patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Inputs and targets, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_train_loss: f64,
    pub initial_val_loss: Option<f64>,
    /// Full-pass training loss after each epoch.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Epoch (1-based) whose weights were kept; 0 means the initial weights.
    pub best_epoch: usize,
}

struct AdamState {
    m: Gradients,
    v: Gradients,
    step: i32,
}

fn zeros_like(model: &MlpModel) -> Gradients {
    Gradients {
        w1: Array2::zeros(model.w1.raw_dim()),
        b1: Array1::zeros(model.b1.len()),
        w2: Array2::zeros(model.w2.raw_dim()),
        b2: Array1::zeros(model.b2.len()),
    }
}

fn apply_update(model: &mut MlpModel, grads: &Gradients, cfg: &TrainConfig, adam: &mut AdamState) {
    let lr = cfg.learning_rate;
    match cfg.optimizer {
        Optimizer::Sgd => {
            model.w1.scaled_add(-lr, &grads.w1);
            model.b1.scaled_add(-lr, &grads.b1);
            model.w2.scaled_add(-lr, &grads.w2);
            model.b2.scaled_add(-lr, &grads.b2);
        }
        Optimizer::Adam { beta1, beta2, eps } => {
            adam.step += 1;
            let c1 = 1.0 - beta1.powi(adam.step);
            let c2 = 1.0 - beta2.powi(adam.step);
            macro_rules! step {
                ($f:ident) => {
                    Zip::from(&mut model.$f)
                        .and(&grads.$f)
                        .and(&mut adam.m.$f)
                        .and(&mut adam.v.$f)
                        .for_each(|p, &g, m, v| {
                            *m = beta1 * *m + (1.0 - beta1) * g;
                            *v = beta2 * *v + (1.0 - beta2) * g * g;
                            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                        })
                };
            }
            step!(w1);
            step!(b1);
            step!(w2);
            step!(b2);
        }
    }
}

/// Mini-batch training. The standardization statistics must already be set
/// (see [`MlpModel::fit_standardization`]). With a validation set and a
/// nonzero patience, the weights of the best validation epoch are returned.
pub fn train(
    model: &MlpModel,
    train_set: &Samples,
    val_set: Option<&Samples>,
    cfg: &TrainConfig,
) -> Result<(MlpModel, TrainReport)> {
    cfg.validate()?;
    model.check()?;
    let n = train_set.len();
    model.loss(train_set.inputs.view(), train_set.targets.view())?;
    if let Some(v) = val_set {
        model.loss(v.inputs.view(), v.targets.view())?;
    }

    let mut model = model.clone();
    let mut rng = rng::seeded(cfg.seed);
    let mut adam = AdamState {
        m: zeros_like(&model),
        v: zeros_like(&model),
        step: 0,
    };
    let eval = |m: &MlpModel, s: &Samples| m.loss(s.inputs.view(), s.targets.view());

    let initial_train_loss = eval(&model, train_set)?;
    let initial_val_loss = val_set.map(|v| eval(&model, v)).transpose()?;
    let mut report = TrainReport {
        initial_train_loss,
        initial_val_loss,
        train_loss: Vec::with_capacity(cfg.epochs),
        val_loss: Vec::new(),
        best_epoch: 0,
    };
    let mut best = (initial_val_loss.unwrap_or(f64::INFINITY), model.clone());
    let mut stale = 0;

    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = train_set.inputs.select(Axis(0), idx);
            let t = train_set.targets.select(Axis(0), idx);
            let (loss, grads) = model.gradients(x.view(), t.view())?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch, loss });
            }
            apply_update(&mut model, &grads, cfg, &mut adam);
        }
        let train_loss = eval(&model, train_set)?;
        if !train_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: usize::MAX,
                loss: train_loss,
            });
        }
        report.train_loss.push(train_loss);

        if let Some(v) = val_set {
            let vl = eval(&model, v)?;
            report.val_loss.push(vl);
            if vl < best.0 {
                best = (vl, model.clone());
                report.best_epoch = epoch;
                stale = 0;
            } else {
                stale += 1;
                if cfg.early_stop_patience > 0 && stale >= cfg.early_stop_patience {
                    break;
                }
            }
        }
    }

    if val_set.is_some() && cfg.early_stop_patience > 0 {
        Ok((best.1, report))
    } else {
        report.best_epoch = report.train_loss.len();
        Ok((model, report))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_weights_output_bias() {
        let mut m = MlpModel::zeros(3, 4, 2);
        m.b2 = array![1.5, -2.0];
        assert_eq!(m.forward(&[0.3, -7.0, 2.0]).unwrap(), vec![1.5, -2.0]);
    }

    #[test]
    fn negative_branch() {
        let mut m = MlpModel::zeros(1, 1, 1);
        m.w1[[0, 0]] = 1.0;
        m.w2[[0, 0]] = 1.0;
        let y = m.forward(&[-1.0]).unwrap();
        assert!((y[0] + 0.01).abs() < 1e-15);
    }

    #[test]
    fn input_at_mean() {
        let mut m = MlpModel::init(3, 5, 2, 4);
        m.norm_mean = array![1.0, 2.0, 3.0];
        m.norm_std = array![0.5, 2.0, 1.0];
        m.b1 = array![0.2, -0.4, 1.0, -3.0, 0.0];
        m.b2 = array![0.1, 0.2];
        let hb = m.b1.mapv(|u| if u >= 0.0 { u } else { 0.01 * u });
        let want = hb.dot(&m.w2) + &m.b2;
        let got = m.forward(&[1.0, 2.0, 3.0]).unwrap();
        for (a, b) in got.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn dimension_errors() {
        let m = MlpModel::zeros(3, 4, 2);
        assert!(matches!(m.forward(&[1.0, 2.0]), Err(Error::Dimension { .. })));
        let x = Array2::zeros((4, 2));
        assert!(m.forward_batch(x.view()).is_err());
    }

    #[test]
    fn batch_matches_single() {
        let m = MlpModel::init(4, 6, 3, 8);
        let x = Array2::from_shape_fn((5, 4), |(i, j)| (i as f64 - 2.0) * 0.3 + j as f64 * 0.1);
        let yb = m.forward_batch(x.view()).unwrap();
        for (row, yrow) in x.rows().into_iter().zip(yb.rows()) {
            let y = m.forward(row.as_slice().unwrap()).unwrap();
            for (a, b) in y.iter().zip(yrow) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn complexity_counts() {
        assert_eq!(count_weights(&MlpModel::zeros(64, 128, 64)), 16_576);
        assert_eq!(count_weights(&MlpModel::zeros(128, 128, 64)), 24_768);
        assert_eq!(count_weights(&MlpModel::zeros(1, 1, 1)), 4);
        let flops = count_flops(&MlpModel::zeros(64, 128, 64)) + count_flops(&MlpModel::zeros(128, 128, 64));
        assert_eq!(flops, 81_536);
    }

    #[test]
    fn standardization_statistics() {
        let x = Array2::from_shape_fn((200, 3), |(i, j)| {
            ((i * 7 + j * 13) % 17) as f64 * (j as f64 + 1.0) + 5.0
        });
        let mut m = MlpModel::zeros(3, 2, 1);
        m.fit_standardization(x.view()).unwrap();
        let xs = m.standardize(x.view());
        for col in xs.columns() {
            let mean = col.mean().unwrap();
            let std = col.std(0.0);
            assert!(mean.abs() < 1e-8);
            assert!((std - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn json_round_trip_and_errors() {
        let mut m = MlpModel::init(3, 4, 2, 1);
        m.norm_mean = array![0.1, 0.2, 1.0 / 3.0];
        m.norm_std = array![1.0, 2.0, std::f64::consts::PI];
        let text = m.to_json().unwrap();
        assert_eq!(MlpModel::from_json(&text).unwrap(), m);

        let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        doc.as_object_mut().unwrap().remove("norm_std");
        assert!(matches!(MlpModel::from_json(&doc.to_string()), Err(Error::Model(_))));

        let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        doc["version"] = 2.into();
        assert!(MlpModel::from_json(&doc.to_string()).is_err());

        let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        doc["hid_dim"] = 5.into();
        assert!(MlpModel::from_json(&doc.to_string()).is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_loss() {
        let m0 = MlpModel::init(2, 3, 1, 5);
        let data = Samples {
            inputs: Array2::from_shape_fn((40, 2), |(i, j)| (i as f64 * 0.1).sin() + j as f64),
            targets: Array2::from_shape_fn((40, 1), |(i, _)| (i as f64 * 0.2).cos()),
        };
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 5,
            batch_size: 8,
            ..Default::default()
        };
        let (_, rep) = train(&m0, &data, None, &cfg).unwrap();
        assert!(rep.train_loss.iter().all(|&l| l == rep.initial_train_loss));
    }

    #[test]
    fn divergence_is_reported() {
        let m0 = MlpModel::init(1, 2, 1, 5);
        let data = Samples {
            inputs: Array2::from_shape_fn((16, 1), |(i, _)| i as f64),
            targets: Array2::from_shape_fn((16, 1), |(i, _)| 1e200 * i as f64),
        };
        let cfg = TrainConfig {
            optimizer: Optimizer::Sgd,
            learning_rate: 1e10,
            epochs: 50,
            ..Default::default()
        };
        assert!(matches!(train(&m0, &data, None, &cfg), Err(Error::Diverged { .. })));
    }
}

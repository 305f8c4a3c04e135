//! Tissue-class MLP and the morphology features read from its first hidden
//! layer.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::{PatchDataset, PatchFeatureBag, N_CLASSES};
use crate::error::{PrismError, Result};
use crate::numcore::tensor_io::{load_tensors, save_tensors, Tensor};
use crate::numcore::{
    adam_step, matmul, softmax, xavier_uniform_init, AdamConfig, AdamState, Matrix, ParamTensor,
};
use crate::rng::SeedRng;
use crate::surv::roc_auc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MorphWidths {
    pub d_in: usize,
    pub h1: usize,
    pub h2: usize,
}

impl MorphWidths {
    /// Desk-scale widths for a given input width.
    pub fn desk(d_in: usize) -> Self {
        Self {
            d_in,
            h1: 32,
            h2: 16,
        }
    }

    /// Widths used with 1024-dimensional foundation features.
    pub fn reference(d_in: usize) -> Self {
        Self {
            d_in,
            h1: 512,
            h2: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MorphTrainConfig {
    pub h1: usize,
    pub h2: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for MorphTrainConfig {
    fn default() -> Self {
        Self {
            h1: 32,
            h2: 16,
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            train_fraction: 0.70,
            val_fraction: 0.15,
        }
    }
}

const W1: usize = 0;
const B1: usize = 1;
const W2: usize = 2;
const B2: usize = 3;
const W3: usize = 4;
const B3: usize = 5;
const NAMES: [&str; 6] = ["w1", "b1", "w2", "b2", "w3", "b3"];

/// Three linear maps `d_in → h1 → h2 → 13` with ReLU between them and a
/// softmax on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct MorphHead {
    pub widths: MorphWidths,
    pub params: Vec<ParamTensor>,
}

struct Activations {
    h1: Matrix,
    h2: Matrix,
    probs: Matrix,
}

fn add_bias_relu(mut m: Matrix, bias: &Matrix, relu: bool) -> Matrix {
    for r in 0..m.rows() {
        for (x, &b) in m.row_mut(r).iter_mut().zip(bias.data()) {
            *x += b;
            if relu && *x < 0.0 {
                *x = 0.0;
            }
        }
    }
    m
}

impl MorphHead {
    pub fn init(widths: MorphWidths, rng: &mut SeedRng) -> Result<Self> {
        let MorphWidths { d_in, h1, h2 } = widths;
        let params = vec![
            ParamTensor::new(NAMES[W1], xavier_uniform_init(d_in, h1, rng)?),
            ParamTensor::new(NAMES[B1], Matrix::zeros(1, h1)),
            ParamTensor::new(NAMES[W2], xavier_uniform_init(h1, h2, rng)?),
            ParamTensor::new(NAMES[B2], Matrix::zeros(1, h2)),
            ParamTensor::new(NAMES[W3], xavier_uniform_init(h2, N_CLASSES, rng)?),
            ParamTensor::new(NAMES[B3], Matrix::zeros(1, N_CLASSES)),
        ];
        Ok(Self { widths, params })
    }

    /// All weights and biases zero.
    pub fn zeros(widths: MorphWidths) -> Self {
        let MorphWidths { d_in, h1, h2 } = widths;
        let shapes = [
            (d_in, h1),
            (1, h1),
            (h1, h2),
            (1, h2),
            (h2, N_CLASSES),
            (1, N_CLASSES),
        ];
        Self {
            widths,
            params: shapes
                .iter()
                .zip(NAMES)
                .map(|(&(r, c), n)| ParamTensor::new(n, Matrix::zeros(r, c)))
                .collect(),
        }
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.widths.d_in {
            return Err(PrismError::dim(format!(
                "feature width {cols} does not match classifier input {}",
                self.widths.d_in
            )));
        }
        Ok(())
    }

    /// Post-ReLU first hidden layer for a batch of patches (`n × h1`).
    pub fn hidden(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x.cols())?;
        Ok(add_bias_relu(
            matmul(x, &self.params[W1].value)?,
            &self.params[B1].value,
            true,
        ))
    }

    /// Class logits computed from first-layer activations.
    pub fn logits_from_hidden(&self, h1: &Matrix) -> Result<Matrix> {
        let h2 = add_bias_relu(
            matmul(h1, &self.params[W2].value)?,
            &self.params[B2].value,
            true,
        );
        Ok(add_bias_relu(
            matmul(&h2, &self.params[W3].value)?,
            &self.params[B3].value,
            false,
        ))
    }

    fn forward(&self, x: &Matrix) -> Result<Activations> {
        let h1 = self.hidden(x)?;
        let h2 = add_bias_relu(
            matmul(&h1, &self.params[W2].value)?,
            &self.params[B2].value,
            true,
        );
        let logits = add_bias_relu(
            matmul(&h2, &self.params[W3].value)?,
            &self.params[B3].value,
            false,
        );
        let mut probs = logits;
        for r in 0..probs.rows() {
            let p = softmax(probs.row(r));
            probs.row_mut(r).copy_from_slice(&p);
        }
        Ok(Activations { h1, h2, probs })
    }

    /// Class probabilities for a batch (`n × 13`).
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(x)?.probs)
    }

    /// Mean cross-entropy over the batch; fills gradients.
    fn loss_and_grad(&mut self, x: &Matrix, y: &[usize]) -> Result<f64> {
        let act = self.forward(x)?;
        let n = x.rows() as f64;
        let mut d_logits = act.probs.clone();
        let mut loss = 0.0;
        for (r, &c) in y.iter().enumerate() {
            loss -= act.probs.get(r, c).max(1e-300).ln();
            let v = d_logits.get(r, c);
            d_logits.set(r, c, v - 1.0);
        }
        let d_logits = d_logits.scale(1.0 / n);
        self.params[W3].grad = act.h2.t_matmul(&d_logits)?;
        self.params[B3].grad = column_sums(&d_logits);
        let mut d_h2 = matmul(&d_logits, &self.params[W3].value.transpose())?;
        relu_mask(&mut d_h2, &act.h2);
        self.params[W2].grad = act.h1.t_matmul(&d_h2)?;
        self.params[B2].grad = column_sums(&d_h2);
        let mut d_h1 = matmul(&d_h2, &self.params[W2].value.transpose())?;
        relu_mask(&mut d_h1, &act.h1);
        self.params[W1].grad = x.t_matmul(&d_h1)?;
        self.params[B1].grad = column_sums(&d_h1);
        Ok(loss / n)
    }

    /// Mean cross-entropy without touching gradients.
    pub fn loss(&self, x: &Matrix, y: &[usize]) -> Result<f64> {
        let probs = self.predict(x)?;
        Ok(-y
            .iter()
            .enumerate()
            .map(|(r, &c)| probs.get(r, c).max(1e-300).ln())
            .sum::<f64>()
            / y.len() as f64)
    }

    pub fn save(&self, path: &Path, config: &MorphTrainConfig) -> Result<()> {
        let tensors: Vec<Tensor> = self.params.iter().map(|p| Tensor::from(&p.value)).collect();
        save_tensors(path, &tensors)?;
        let sidecar = MorphSidecar {
            widths: self.widths,
            n_classes: N_CLASSES,
            tensors: NAMES.iter().map(|s| s.to_string()).collect(),
            train: config.clone(),
        };
        let side = path.with_extension("json");
        let json = serde_json::to_vec_pretty(&sidecar).map_err(|e| PrismError::io(&side, e))?;
        fs::write(&side, json).map_err(|e| PrismError::io(&side, e))
    }

    pub fn load(path: &Path) -> Result<(Self, MorphTrainConfig)> {
        let side = path.with_extension("json");
        let bytes = fs::read(&side).map_err(|e| PrismError::io(&side, e))?;
        let sidecar: MorphSidecar =
            serde_json::from_slice(&bytes).map_err(|e| PrismError::io(&side, e))?;
        let tensors = load_tensors(path)?;
        let mut head = Self::zeros(sidecar.widths);
        if tensors.len() != head.params.len() || sidecar.n_classes != N_CLASSES {
            return Err(PrismError::io(
                path,
                "classifier checkpoint has the wrong tensor count",
            ));
        }
        for (p, t) in head.params.iter_mut().zip(tensors) {
            let m = t.into_matrix().map_err(|e| PrismError::io(path, e))?;
            if m.shape() != p.value.shape() {
                return Err(PrismError::io(
                    path,
                    format!("tensor '{}' has the wrong shape", p.name),
                ));
            }
            p.value = m;
        }
        Ok((head, sidecar.train))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MorphSidecar {
    widths: MorphWidths,
    n_classes: usize,
    tensors: Vec<String>,
    train: MorphTrainConfig,
}

fn column_sums(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, m.cols());
    for r in 0..m.rows() {
        for (o, &v) in out.data_mut().iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
    out
}

fn relu_mask(grad: &mut Matrix, activation: &Matrix) {
    for (g, &a) in grad.data_mut().iter_mut().zip(activation.data()) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 13 class probabilities for one patch feature vector.
pub fn classify_patch(head: &MorphHead, feature: &[f64]) -> Result<Vec<f64>> {
    Ok(head.predict(&Matrix::row_vector(feature))?.into_data())
}

/// Morphology feature vector: the post-ReLU first hidden layer.
pub fn extract_morph_features(head: &MorphHead, feature: &[f64]) -> Result<Vec<f64>> {
    Ok(head.hidden(&Matrix::row_vector(feature))?.into_data())
}

/// Replace a bag's raw morphology channel with extracted morphology features.
pub fn transform_bag(head: &MorphHead, bag: &PatchFeatureBag) -> Result<PatchFeatureBag> {
    bag.with_morph(head.hidden(&bag.morph)?)
        .map_err(|e| e.context(format!("bag {}", bag.patient_id)))
}

/// Run `epochs` passes of minibatch Adam over `(x, y)`; returns the full
/// training loss after each epoch.
pub fn train_epochs(
    head: &mut MorphHead,
    state: &mut AdamState,
    x: &Matrix,
    y: &[usize],
    epochs: usize,
    batch_size: usize,
    rng: &mut SeedRng,
) -> Result<Vec<f64>> {
    if x.rows() != y.len() || y.is_empty() {
        return Err(PrismError::dim("training features and labels disagree"));
    }
    let batch_size = batch_size.max(1);
    let mut order: Vec<usize> = (0..y.len()).collect();
    let mut history = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(batch_size) {
            let xb = x.select_rows(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            head.loss_and_grad(&xb, &yb)?;
            adam_step(&mut head.params, state)?;
        }
        history.push(head.loss(x, y)?);
    }
    Ok(history)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MorphReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub test_accuracy: f64,
    /// Mean one-vs-rest ROC AUC over classes present in the test split.
    pub test_macro_auc: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub train_loss: Vec<f64>,
}

pub fn accuracy(head: &MorphHead, x: &Matrix, y: &[usize]) -> Result<f64> {
    let probs = head.predict(x)?;
    let hits = y
        .iter()
        .enumerate()
        .filter(|(r, &c)| argmax(probs.row(*r)) == c)
        .count();
    Ok(hits as f64 / y.len().max(1) as f64)
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn macro_auc(head: &MorphHead, x: &Matrix, y: &[usize]) -> Result<f64> {
    let probs = head.predict(x)?;
    let mut aucs = Vec::new();
    for c in 0..N_CLASSES {
        let scores: Vec<f64> = (0..y.len()).map(|r| probs.get(r, c)).collect();
        let labels: Vec<bool> = y.iter().map(|&l| l == c).collect();
        if let Ok(a) = roc_auc(&scores, &labels) {
            aucs.push(a);
        }
    }
    Ok(aucs.iter().sum::<f64>() / aucs.len().max(1) as f64)
}

/// Per-class stratified split into train, validation and test indices.
pub fn stratified_split(
    labels: &[usize],
    train_fraction: f64,
    val_fraction: f64,
    rng: &mut SeedRng,
) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for c in 0..N_CLASSES {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        rng.shuffle(&mut idx);
        let n = idx.len() as f64;
        let n_train = (n * train_fraction).round() as usize;
        let n_val = ((n * val_fraction).round() as usize).min(idx.len() - n_train.min(idx.len()));
        let n_train = n_train.min(idx.len());
        train.extend_from_slice(&idx[..n_train]);
        val.extend_from_slice(&idx[n_train..n_train + n_val]);
        test.extend_from_slice(&idx[n_train + n_val..]);
    }
    (train, val, test)
}

/// Train the classifier with a stratified 70/15/15 split, keeping the
/// parameters with the best validation accuracy.
pub fn train_morph(
    data: &PatchDataset,
    config: &MorphTrainConfig,
    rng: &mut SeedRng,
) -> Result<(MorphHead, MorphReport)> {
    if data.features.rows() != data.labels.len() {
        return Err(PrismError::dim("patch features and labels disagree"));
    }
    if let Some(&c) = data.labels.iter().find(|&&c| c >= N_CLASSES) {
        return Err(PrismError::data(format!("label {c} out of range")));
    }
    let (train, val, test) = stratified_split(
        &data.labels,
        config.train_fraction,
        config.val_fraction,
        &mut rng.split("split"),
    );
    for c in 0..N_CLASSES {
        if !train.iter().any(|&i| data.labels[i] == c) {
            return Err(PrismError::data(format!(
                "class {c} absent from the training split"
            )));
        }
    }
    let pick = |idx: &[usize]| -> (Matrix, Vec<usize>) {
        (
            data.features.select_rows(idx),
            idx.iter().map(|&i| data.labels[i]).collect(),
        )
    };
    let (xt, yt) = pick(&train);
    let (xv, yv) = pick(&val);
    let (xs, ys) = pick(&test);

    let widths = MorphWidths {
        d_in: data.features.cols(),
        h1: config.h1,
        h2: config.h2,
    };
    let mut head = MorphHead::init(widths, &mut rng.split("init"))?;
    let mut state = AdamState::new(&head.params, AdamConfig::with_lr(config.lr));
    let mut shuffle_rng = rng.split("shuffle");
    let mut best = (f64::NEG_INFINITY, 0usize, head.clone());
    let mut train_loss = Vec::new();
    let mut since_best = 0;
    for epoch in 1..=config.max_epochs {
        let l = train_epochs(
            &mut head,
            &mut state,
            &xt,
            &yt,
            1,
            config.batch_size,
            &mut shuffle_rng,
        )?;
        train_loss.extend(l);
        let acc = if yv.is_empty() {
            0.0
        } else {
            accuracy(&head, &xv, &yv)?
        };
        if acc > best.0 {
            best = (acc, epoch, head.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    let (best_val_accuracy, best_epoch, head) = best;
    let report = MorphReport {
        epochs_run: train_loss.len(),
        best_epoch,
        best_val_accuracy,
        test_accuracy: accuracy(&head, &xs, &ys)?,
        test_macro_auc: macro_auc(&head, &xs, &ys)?,
        n_train: train.len(),
        n_val: val.len(),
        n_test: test.len(),
        train_loss,
    };
    Ok((head, report))
}

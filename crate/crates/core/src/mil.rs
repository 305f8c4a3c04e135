//! Gated-attention multiple-instance model over fused patch features, the
//! slide-level survival head, and per-fold training.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::{ClinicalRecord, PatchFeatureBag};
use crate::error::{PrismError, Result};
use crate::fusion::{fuse_bag_backward, fuse_bag_cached, FusionCache, FusionMode, FusionParams};
use crate::numcore::tensor_io::{load_tensors, save_tensors, Tensor};
use crate::numcore::{
    adam_step, l1_subgradient, matmul, sigmoid, softmax, softplus, xavier_uniform_init, AdamConfig,
    AdamState, Matrix, ParamTensor,
};
use crate::rng::SeedRng;
use crate::stratcv::FoldSplit;
use crate::surv::roc_auc;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    /// `d × l`
    pub v: Matrix,
    /// `d × l`
    pub u: Matrix,
    /// `l × 1`
    pub w: Matrix,
}

impl AttentionParams {
    pub fn new(v: Matrix, u: Matrix, w: Matrix) -> Result<Self> {
        if v.shape() != u.shape() || w.shape() != (v.cols(), 1) {
            return Err(PrismError::dim(format!(
                "attention shapes V {:?}, U {:?}, W {:?} are inconsistent",
                v.shape(),
                u.shape(),
                w.shape()
            )));
        }
        Ok(Self { v, u, w })
    }

    pub fn init(d: usize, l: usize, rng: &mut SeedRng) -> Result<Self> {
        let v = xavier_uniform_init(d, l, rng)?;
        let u = xavier_uniform_init(d, l, rng)?;
        let w = xavier_uniform_init(l, 1, rng)?;
        Self::new(v, u, w)
    }

    pub fn d(&self) -> usize {
        self.v.rows()
    }

    pub fn l(&self) -> usize {
        self.v.cols()
    }
}

struct AttentionCache {
    s: Matrix,
    t: Matrix,
    a: Vec<f64>,
}

fn attention_cached(f: &Matrix, params: &AttentionParams) -> Result<AttentionCache> {
    if f.rows() == 0 {
        return Err(PrismError::data("cannot score an empty bag"));
    }
    if f.cols() != params.d() {
        return Err(PrismError::dim(format!(
            "fused width {} does not match attention width {}",
            f.cols(),
            params.d()
        )));
    }
    let s = matmul(f, &params.v)?.map(f64::tanh);
    let t = matmul(f, &params.u)?.map(sigmoid);
    let w = params.w.data();
    let e: Vec<f64> = (0..f.rows())
        .map(|k| {
            s.row(k)
                .iter()
                .zip(t.row(k))
                .zip(w)
                .map(|((s, t), w)| w * s * t)
                .sum()
        })
        .collect();
    Ok(AttentionCache {
        s,
        t,
        a: softmax(&e),
    })
}

/// `a = softmax_k(Wᵀ(tanh(Vᵀf_k) ⊙ σ(Uᵀf_k)))` over the rows of `f`.
pub fn attention_scores(f: &Matrix, params: &AttentionParams) -> Result<Vec<f64>> {
    Ok(attention_cached(f, params)?.a)
}

/// `Z = Σ_k a_k f_k`.
pub fn aggregate(f: &Matrix, a: &[f64]) -> Result<Vec<f64>> {
    if a.len() != f.rows() {
        return Err(PrismError::dim(format!(
            "{} weights for {} patches",
            a.len(),
            f.rows()
        )));
    }
    f.t_mul_vec(a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    /// Validation ROC AUC.
    #[default]
    Auc,
    /// Validation cross-entropy.
    Loss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainHyper {
    pub lr: f64,
    pub l1: f64,
    pub epochs: usize,
    pub seed: u64,
    pub selection: Selection,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            lr: 2e-5,
            l1: 5e-4,
            epochs: 50,
            seed: 0,
            selection: Selection::Auc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub d_g: usize,
    pub d_m: usize,
    /// Interaction rank `d'`.
    pub rank: usize,
    /// Fused width `d`.
    pub d: usize,
    /// Attention hidden width `l`.
    pub l: usize,
    pub mode: FusionMode,
}

impl ModelDims {
    pub fn new(d_g: usize, d_m: usize) -> Self {
        Self {
            d_g,
            d_m,
            rank: 8,
            d: 16,
            l: 8,
            mode: FusionMode::Factorized,
        }
    }
}

pub const PARAM_NAMES: [&str; 8] = ["w_g", "w_m", "w_fusion", "v", "u", "w", "head_w", "head_b"];

#[derive(Debug, Clone, PartialEq)]
pub struct PrismModel {
    pub dims: ModelDims,
    pub fusion: FusionParams,
    pub attention: AttentionParams,
    /// `d × 1`
    pub head_w: Matrix,
    pub head_b: f64,
    pub hyper: TrainHyper,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlidePrediction {
    pub patient_id: String,
    pub probability: f64,
    pub attention: Vec<f64>,
    pub slide_repr: Vec<f64>,
    pub patch_class: Vec<usize>,
}

struct ForwardCache {
    fusion: FusionCache,
    f: Matrix,
    att: AttentionCache,
    z: Vec<f64>,
    logit: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSidecar {
    dims: ModelDims,
    hyper: TrainHyper,
    fold: Option<usize>,
    tensors: Vec<String>,
}

impl PrismModel {
    pub fn init(dims: ModelDims, hyper: TrainHyper, rng: &SeedRng) -> Result<Self> {
        let fusion = FusionParams::init(
            dims.mode,
            dims.d_g,
            dims.d_m,
            dims.rank,
            dims.d,
            &mut rng.split("fusion"),
        )?;
        let attention = AttentionParams::init(dims.d, dims.l, &mut rng.split("attention"))?;
        let head_w = xavier_uniform_init(dims.d, 1, &mut rng.split("head"))?;
        Ok(Self {
            dims,
            fusion,
            attention,
            head_w,
            head_b: 0.0,
            hyper,
        })
    }

    /// Parameters in canonical order (see [`PARAM_NAMES`]).
    pub fn params(&self) -> Vec<ParamTensor> {
        let values = [
            &self.fusion.w_g,
            &self.fusion.w_m,
            &self.fusion.w_fusion,
            &self.attention.v,
            &self.attention.u,
            &self.attention.w,
            &self.head_w,
            &Matrix::filled(1, 1, self.head_b),
        ];
        PARAM_NAMES
            .iter()
            .zip(values)
            .map(|(n, v)| ParamTensor::new(*n, v.clone()))
            .collect()
    }

    pub fn set_params(&mut self, params: &[ParamTensor]) -> Result<()> {
        let current = self.params();
        if params.len() != current.len() {
            return Err(PrismError::dim(format!(
                "expected {} parameter tensors",
                current.len()
            )));
        }
        for (have, want) in params.iter().zip(&current) {
            if have.value.shape() != want.value.shape() {
                return Err(PrismError::dim(format!(
                    "parameter '{}' has shape {:?}, expected {:?}",
                    want.name,
                    have.value.shape(),
                    want.value.shape()
                )));
            }
        }
        self.fusion.w_g = params[0].value.clone();
        self.fusion.w_m = params[1].value.clone();
        self.fusion.w_fusion = params[2].value.clone();
        self.attention.v = params[3].value.clone();
        self.attention.u = params[4].value.clone();
        self.attention.w = params[5].value.clone();
        self.head_w = params[6].value.clone();
        self.head_b = params[7].value.data()[0];
        Ok(())
    }

    /// `Σ|θ|` over every learnable parameter.
    pub fn l1_norm(&self) -> f64 {
        self.params().iter().map(|p| p.value.sum_abs()).sum()
    }

    fn forward_cached(&self, bag: &PatchFeatureBag) -> Result<ForwardCache> {
        let (f, fusion) = fuse_bag_cached(bag, &self.fusion)?;
        let att = attention_cached(&f, &self.attention)?;
        let z = aggregate(&f, &att.a)?;
        let logit = z
            .iter()
            .zip(self.head_w.data())
            .map(|(z, w)| z * w)
            .sum::<f64>()
            + self.head_b;
        if !logit.is_finite() {
            return Err(PrismError::numeric(format!(
                "non-finite logit for bag {}",
                bag.patient_id
            )));
        }
        Ok(ForwardCache {
            fusion,
            f,
            att,
            z,
            logit,
        })
    }

    /// Loss `BCE(σ(logit), y) + l1·Σ|θ|` and its gradient for one slide, in
    /// [`PARAM_NAMES`] order.
    pub fn loss_and_grad(
        &self,
        bag: &PatchFeatureBag,
        label: bool,
        l1: f64,
    ) -> Result<(f64, Vec<Matrix>)> {
        let c = self.forward_cached(bag)?;
        let y = if label { 1.0 } else { 0.0 };
        let bce = softplus(c.logit) - y * c.logit;
        let d_logit = sigmoid(c.logit) - y;

        let head_w = Matrix::column(&c.z).scale(d_logit);
        let d_z: Vec<f64> = self.head_w.data().iter().map(|w| d_logit * w).collect();

        let n = c.f.rows();
        let l = self.attention.l();
        let a = &c.att.a;
        let mut d_f = Matrix::zeros(n, c.f.cols());
        let mut d_a = vec![0.0; n];
        for k in 0..n {
            for (j, dz) in d_z.iter().enumerate() {
                d_f.row_mut(k)[j] = a[k] * dz;
            }
            d_a[k] = c.f.row(k).iter().zip(&d_z).map(|(f, dz)| f * dz).sum();
        }
        let mean_da: f64 = a.iter().zip(&d_a).map(|(a, d)| a * d).sum();
        let mut d_w = Matrix::zeros(l, 1);
        let mut d_s_pre = Matrix::zeros(n, l);
        let mut d_t_pre = Matrix::zeros(n, l);
        let w = self.attention.w.data();
        for k in 0..n {
            let de = a[k] * (d_a[k] - mean_da);
            for i in 0..l {
                let s = c.att.s.get(k, i);
                let t = c.att.t.get(k, i);
                d_w.data_mut()[i] += de * s * t;
                d_s_pre.set(k, i, de * w[i] * t * (1.0 - s * s));
                d_t_pre.set(k, i, de * w[i] * s * t * (1.0 - t));
            }
        }
        let d_v = c.f.t_matmul(&d_s_pre)?;
        let d_u = c.f.t_matmul(&d_t_pre)?;
        d_f.axpy(1.0, &matmul(&d_s_pre, &self.attention.v.transpose())?)?;
        d_f.axpy(1.0, &matmul(&d_t_pre, &self.attention.u.transpose())?)?;
        let fg = fuse_bag_backward(bag, &self.fusion, &c.fusion, &d_f)?;

        let mut grads = vec![
            fg.w_g,
            fg.w_m,
            fg.w_fusion,
            d_v,
            d_u,
            d_w,
            head_w,
            Matrix::filled(1, 1, d_logit),
        ];
        let mut penalty = 0.0;
        if l1 != 0.0 {
            for (g, p) in grads.iter_mut().zip(self.params()) {
                penalty += p.value.sum_abs();
                for (gv, &pv) in g.data_mut().iter_mut().zip(p.value.data()) {
                    *gv += l1 * l1_subgradient(pv);
                }
            }
        }
        Ok((bce + l1 * penalty, grads))
    }

    pub fn save(&self, path: &Path, fold: Option<usize>) -> Result<()> {
        let tensors: Vec<Tensor> = self
            .params()
            .iter()
            .map(|p| Tensor::from(&p.value))
            .collect();
        save_tensors(path, &tensors)?;
        let sidecar = ModelSidecar {
            dims: self.dims,
            hyper: self.hyper.clone(),
            fold,
            tensors: PARAM_NAMES.iter().map(|s| s.to_string()).collect(),
        };
        let side = path.with_extension("json");
        let json = serde_json::to_vec_pretty(&sidecar).map_err(|e| PrismError::io(&side, e))?;
        fs::write(&side, json).map_err(|e| PrismError::io(&side, e))
    }

    pub fn load(path: &Path) -> Result<(Self, Option<usize>)> {
        let side = path.with_extension("json");
        let bytes = fs::read(&side).map_err(|e| PrismError::io(&side, e))?;
        let meta: ModelSidecar =
            serde_json::from_slice(&bytes).map_err(|e| PrismError::io(&side, e))?;
        let mut model = Self::init(meta.dims, meta.hyper, &SeedRng::new(0))
            .map_err(|e| PrismError::io(&side, e))?;
        let params: Vec<ParamTensor> = load_tensors(path)?
            .into_iter()
            .zip(PARAM_NAMES)
            .map(|(t, n)| Ok(ParamTensor::new(n, t.into_matrix()?)))
            .collect::<Result<_>>()
            .map_err(|e| PrismError::io(path, e))?;
        model
            .set_params(&params)
            .map_err(|e| PrismError::io(path, e))?;
        Ok((model, meta.fold))
    }
}

/// Fuse, attend, aggregate and score one slide.
pub fn forward_slide(model: &PrismModel, bag: &PatchFeatureBag) -> Result<SlidePrediction> {
    let c = model.forward_cached(bag)?;
    Ok(SlidePrediction {
        patient_id: bag.patient_id.clone(),
        probability: sigmoid(c.logit),
        attention: c.att.a,
        slide_repr: c.z,
        patch_class: bag.patch_class.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_score: f64,
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub model: PrismModel,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    /// Predictions for every test-role patient, in cohort order.
    pub test: Vec<SlidePrediction>,
}

fn mean_bce(model: &PrismModel, bags: &[PatchFeatureBag], idx: &[(usize, bool)]) -> Result<f64> {
    let mut total = 0.0;
    for &(i, y) in idx {
        let p = forward_slide(model, &bags[i])?
            .probability
            .clamp(1e-12, 1.0 - 1e-12);
        total -= if y { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(total / idx.len().max(1) as f64)
}

/// Validation score (higher is better): AUC when both classes are present,
/// otherwise negative cross-entropy.
fn val_score(
    model: &PrismModel,
    bags: &[PatchFeatureBag],
    val: &[(usize, bool)],
    selection: Selection,
) -> Result<f64> {
    if selection == Selection::Auc {
        let mut probs = Vec::with_capacity(val.len());
        for &(i, _) in val {
            probs.push(forward_slide(model, &bags[i])?.probability);
        }
        let labels: Vec<bool> = val.iter().map(|&(_, y)| y).collect();
        if let Ok(auc) = roc_auc(&probs, &labels) {
            return Ok(auc);
        }
    }
    Ok(-mean_bce(model, bags, val)?)
}

fn labelled(records: &[ClinicalRecord], idx: &[usize]) -> Vec<(usize, bool)> {
    idx.iter()
        .filter_map(|&i| records[i].label5y.map(|y| (i, y)))
        .collect()
}

/// Train one fold: one Adam step per labelled training slide per epoch, in a
/// freshly shuffled order, keeping the epoch with the best validation score.
pub fn train_prism(
    bags: &[PatchFeatureBag],
    records: &[ClinicalRecord],
    split: &FoldSplit,
    dims: ModelDims,
    hyper: &TrainHyper,
) -> Result<FoldResult> {
    if bags.len() != records.len() {
        return Err(PrismError::dim(format!(
            "{} bags for {} clinical records",
            bags.len(),
            records.len()
        )));
    }
    for (b, r) in bags.iter().zip(records) {
        if b.patient_id != r.patient_id {
            return Err(PrismError::data(format!(
                "bag {} does not line up with clinical record {}",
                b.patient_id, r.patient_id
            )));
        }
    }
    let fold = split.fold;
    let train = labelled(records, &split.train);
    if !(train.iter().any(|t| t.1) && train.iter().any(|t| !t.1)) {
        return Err(PrismError::data(format!(
            "fold {fold}: training set has a single outcome class"
        )));
    }
    let val = labelled(records, &split.val);

    let rng = SeedRng::new(hyper.seed).split(&format!("prism/fold-{fold}"));
    let mut model = PrismModel::init(dims, hyper.clone(), &rng.split("init"))?;
    let mut order_rng = rng.split("order");
    let mut params = model.params();
    let mut state = AdamState::new(&params, AdamConfig::with_lr(hyper.lr));
    let mut order = train.clone();
    let mut best: Option<(f64, usize, PrismModel)> = None;
    let mut history = Vec::with_capacity(hyper.epochs);

    for epoch in 1..=hyper.epochs {
        order_rng.shuffle(&mut order);
        let mut total = 0.0;
        for &(i, y) in &order {
            let (loss, grads) = model
                .loss_and_grad(&bags[i], y, hyper.l1)
                .map_err(|e| e.context(format!("fold {fold} epoch {epoch}")))?;
            total += loss;
            for (p, g) in params.iter_mut().zip(grads) {
                p.grad = g;
            }
            adam_step(&mut params, &mut state)
                .map_err(|e| e.context(format!("fold {fold} epoch {epoch}")))?;
            model.set_params(&params)?;
        }
        let score = if val.is_empty() {
            -total / order.len() as f64
        } else {
            val_score(&model, bags, &val, hyper.selection)?
        };
        history.push(EpochRecord {
            epoch,
            train_loss: total / order.len() as f64,
            val_score: score,
        });
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, epoch, model.clone()));
        }
    }
    let (_, best_epoch, model) = match best {
        Some(b) => b,
        None => (0.0, 0, model),
    };
    let test = split
        .test
        .iter()
        .map(|&i| forward_slide(&model, &bags[i]))
        .collect::<Result<Vec<_>>>()?;
    Ok(FoldResult {
        fold,
        model,
        best_epoch,
        history,
        test,
    })
}

pub const ATTENTION_HEADER: [&str; 4] = [
    "patient_id",
    "patch_index",
    "patch_class",
    "attention_weight",
];

pub fn attention_csv(predictions: &[SlidePrediction]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| PrismError::data(e.to_string());
    w.write_record(ATTENTION_HEADER).map_err(err)?;
    for p in predictions {
        for (j, (a, c)) in p.attention.iter().zip(&p.patch_class).enumerate() {
            w.write_record([
                p.patient_id.as_str(),
                &j.to_string(),
                &c.to_string(),
                &a.to_string(),
            ])
            .map_err(err)?;
        }
    }
    w.into_inner().map_err(|e| PrismError::data(e.to_string()))
}

pub fn export_attention(predictions: &[SlidePrediction], path: &Path) -> Result<()> {
    fs::write(path, attention_csv(predictions)?).map_err(|e| PrismError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_cohort, CohortConfig};
    use crate::numcore::finite_diff_check;
    use crate::stratcv::{build_folds, split_roles, CvMode};

    fn random_matrix(r: usize, c: usize, rng: &mut SeedRng) -> Matrix {
        Matrix::new(r, c, (0..r * c).map(|_| rng.normal()).collect()).unwrap()
    }

    fn random_bag(n: usize, d_g: usize, d_m: usize, rng: &mut SeedRng) -> PatchFeatureBag {
        PatchFeatureBag::new(
            "P0001".into(),
            random_matrix(n, d_g, rng),
            random_matrix(n, d_m, rng),
            (0..n).map(|j| j % 13).collect(),
        )
        .unwrap()
    }

    fn small_dims(mode: FusionMode) -> ModelDims {
        ModelDims {
            d_g: 5,
            d_m: 4,
            rank: 3,
            d: 4,
            l: 3,
            mode,
        }
    }

    fn model(mode: FusionMode, seed: u64) -> PrismModel {
        PrismModel::init(small_dims(mode), TrainHyper::default(), &SeedRng::new(seed)).unwrap()
    }

    #[test]
    fn singleton_and_symmetric_attention() {
        let p = AttentionParams::init(3, 2, &mut SeedRng::new(1)).unwrap();
        let f = Matrix::from_rows(&[vec![0.1, -0.4, 2.0]]).unwrap();
        assert_eq!(attention_scores(&f, &p).unwrap(), vec![1.0]);
        let f = Matrix::from_rows(&[vec![0.1, -0.4, 2.0], vec![0.1, -0.4, 2.0]]).unwrap();
        assert_eq!(attention_scores(&f, &p).unwrap(), vec![0.5, 0.5]);
        assert!(matches!(
            attention_scores(&Matrix::zeros(0, 3), &p),
            Err(PrismError::Data(_))
        ));
        assert!(matches!(
            attention_scores(&Matrix::zeros(2, 4), &p),
            Err(PrismError::Dimension(_))
        ));
    }

    #[test]
    fn attention_matches_scalar_formula() {
        let mut rng = SeedRng::new(2);
        let p = AttentionParams::init(4, 3, &mut rng).unwrap();
        let f = random_matrix(3, 4, &mut rng);
        let mut e = [0.0; 3];
        for k in 0..3 {
            for i in 0..3 {
                let mut vf = 0.0;
                let mut uf = 0.0;
                for j in 0..4 {
                    vf += p.v.get(j, i) * f.get(k, j);
                    uf += p.u.get(j, i) * f.get(k, j);
                }
                e[k] += p.w.get(i, 0) * vf.tanh() * (1.0 / (1.0 + (-uf).exp()));
            }
        }
        let total: f64 = e.iter().map(|x| x.exp()).sum();
        let a = attention_scores(&f, &p).unwrap();
        for k in 0..3 {
            assert!((a[k] - e[k].exp() / total).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_cases() {
        let mut rng = SeedRng::new(3);
        let f = random_matrix(4, 3, &mut rng);
        assert_eq!(
            aggregate(&f, &[0.0, 0.0, 1.0, 0.0]).unwrap(),
            f.row(2).to_vec()
        );
        let same = Matrix::from_rows(&[vec![1.5, -2.0], vec![1.5, -2.0], vec![1.5, -2.0]]).unwrap();
        let z = aggregate(&same, &[1.0 / 3.0; 3]).unwrap();
        assert!((z[0] - 1.5).abs() < 1e-15 && (z[1] + 2.0).abs() < 1e-15);
        let a = [0.1, 0.2, 0.3, 0.4];
        let z = aggregate(&f, &a).unwrap();
        for j in 0..3 {
            let mut want = 0.0;
            for k in 0..4 {
                want += a[k] * f.get(k, j);
            }
            assert!((z[j] - want).abs() < 1e-12);
        }
        assert!(matches!(
            aggregate(&f, &[1.0]),
            Err(PrismError::Dimension(_))
        ));
    }

    #[test]
    fn zero_head_gives_half() {
        let mut m = model(FusionMode::Factorized, 4);
        m.head_w.fill(0.0);
        let bag = random_bag(7, 5, 4, &mut SeedRng::new(5));
        assert_eq!(forward_slide(&m, &bag).unwrap().probability, 0.5);
    }

    #[test]
    fn permutation_invariance_and_normalization() {
        let mut rng = SeedRng::new(6);
        for mode in [FusionMode::Exact, FusionMode::Factorized] {
            let m = model(mode, 7);
            for _ in 0..50 {
                let n = rng.int_inclusive(1, 20);
                let bag = random_bag(n, 5, 4, &mut rng);
                let mut perm: Vec<usize> = (0..n).collect();
                rng.shuffle(&mut perm);
                let a = forward_slide(&m, &bag).unwrap();
                let b = forward_slide(&m, &bag.permuted(&perm)).unwrap();
                assert!((a.probability - b.probability).abs() < 1e-12);
                assert!((a.attention.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(a.attention.iter().all(|&x| (0.0..=1.0).contains(&x)));
            }
        }
    }

    #[test]
    fn two_patch_hand_calculation() {
        let one = || Matrix::filled(1, 1, 1.0);
        let dims = ModelDims {
            d_g: 1,
            d_m: 1,
            rank: 1,
            d: 1,
            l: 1,
            mode: FusionMode::Factorized,
        };
        let mut m = PrismModel::init(dims, TrainHyper::default(), &SeedRng::new(0)).unwrap();
        m.fusion = FusionParams::new(
            FusionMode::Factorized,
            one(),
            Matrix::filled(1, 1, 2.0),
            one(),
        )
        .unwrap();
        m.attention = AttentionParams::new(one(), one(), Matrix::filled(1, 1, -1.0)).unwrap();
        m.head_w = one();
        m.head_b = -1.0;
        let bag = PatchFeatureBag::new(
            "P0001".into(),
            Matrix::column(&[1.0, 2.0]),
            Matrix::column(&[1.0, 1.0]),
            vec![0, 1],
        )
        .unwrap();
        // fused values 2 and 4
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let e1 = -(2.0f64.tanh()) * sig(2.0);
        let e2 = -(4.0f64.tanh()) * sig(4.0);
        let a1 = e1.exp() / (e1.exp() + e2.exp());
        let z = a1 * 2.0 + (1.0 - a1) * 4.0;
        let p = forward_slide(&m, &bag).unwrap();
        assert!((p.probability - sig(z - 1.0)).abs() < 1e-12);
        assert!((p.slide_repr[0] - z).abs() < 1e-12);
    }

    #[test]
    fn full_gradient_matches_finite_differences() {
        let mut rng = SeedRng::new(8);
        for mode in [FusionMode::Exact, FusionMode::Factorized] {
            for point in 0..3 {
                let base = model(mode, 30 + point);
                let bag = random_bag(3, 5, 4, &mut rng);
                let label = point % 2 == 0;
                let mut params = base.params();
                let r = finite_diff_check(&mut params, 1e-6, |ps| {
                    let mut m = base.clone();
                    m.set_params(ps)?;
                    let (loss, grads) = m.loss_and_grad(&bag, label, 5e-4)?;
                    for (p, g) in ps.iter_mut().zip(grads) {
                        p.grad = g;
                    }
                    Ok(loss)
                })
                .unwrap();
                assert!(r.max_rel_error < 1e-4, "{mode} point {point}: {r:?}");
            }
        }
    }

    #[test]
    fn overfits_one_slide() {
        let mut m = model(FusionMode::Factorized, 9);
        let bag = random_bag(6, 5, 4, &mut SeedRng::new(10));
        let mut params = m.params();
        let mut state = AdamState::new(&params, AdamConfig::with_lr(1e-2));
        for _ in 0..200 {
            let (_, grads) = m.loss_and_grad(&bag, true, 0.0).unwrap();
            for (p, g) in params.iter_mut().zip(grads) {
                p.grad = g;
            }
            adam_step(&mut params, &mut state).unwrap();
            m.set_params(&params).unwrap();
        }
        let (bce, _) = m.loss_and_grad(&bag, true, 0.0).unwrap();
        assert!(bce < 0.05, "{bce}");
    }

    fn tiny_cohort(seed: u64) -> (Vec<PatchFeatureBag>, Vec<ClinicalRecord>, FoldSplit) {
        let config = CohortConfig {
            n_patients: 60,
            patches_min: 4,
            patches_max: 10,
            seed,
            ..CohortConfig::default()
        };
        let c = generate_cohort(&config).unwrap();
        let folds = build_folds(&c.records, CvMode::Stratified, 5, 6, seed).unwrap();
        let roles = split_roles(&folds, 0, seed).unwrap();
        (c.bags, c.records, FoldSplit::from_roles(0, &roles))
    }

    #[test]
    fn training_is_deterministic() {
        let (bags, records, split) = tiny_cohort(1);
        let dims = ModelDims::new(16, 16);
        let hyper = TrainHyper {
            epochs: 3,
            ..TrainHyper::default()
        };
        let a = train_prism(&bags, &records, &split, dims, &hyper).unwrap();
        let b = train_prism(&bags, &records, &split, dims, &hyper).unwrap();
        let dir = tempfile::tempdir().unwrap();
        a.model.save(&dir.path().join("a.prsm"), Some(0)).unwrap();
        b.model.save(&dir.path().join("b.prsm"), Some(0)).unwrap();
        let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
        assert_eq!(read("a.prsm"), read("b.prsm"));
        assert_eq!(read("a.json"), read("b.json"));
        assert_eq!(a.test.len(), split.test.len());
        let (back, fold) = PrismModel::load(&dir.path().join("a.prsm")).unwrap();
        assert_eq!(fold, Some(0));
        assert_eq!(back, a.model);
    }

    #[test]
    fn stronger_l1_shrinks_parameters() {
        let (bags, records, split) = tiny_cohort(2);
        let dims = ModelDims::new(16, 16);
        let run = |l1: f64| {
            let hyper = TrainHyper {
                epochs: 5,
                l1,
                lr: 1e-3,
                ..TrainHyper::default()
            };
            train_prism(&bags, &records, &split, dims, &hyper)
                .unwrap()
                .model
                .l1_norm()
        };
        assert!(run(5e-1) < run(5e-4));
    }

    #[test]
    fn single_class_training_set_rejected() {
        let (bags, mut records, split) = tiny_cohort(3);
        for r in records.iter_mut() {
            if r.label5y.is_some() {
                r.label5y = Some(false);
            }
        }
        let err = train_prism(
            &bags,
            &records,
            &split,
            ModelDims::new(16, 16),
            &TrainHyper::default(),
        )
        .unwrap_err();
        assert!(matches!(err, PrismError::Data(_)));
    }

    #[test]
    fn attention_export_rows() {
        let m = model(FusionMode::Factorized, 11);
        let mut rng = SeedRng::new(12);
        let preds: Vec<SlidePrediction> = [3, 5, 1]
            .iter()
            .map(|&n| forward_slide(&m, &random_bag(n, 5, 4, &mut rng)).unwrap())
            .collect();
        let text = String::from_utf8(attention_csv(&preds).unwrap()).unwrap();
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 9);
        let sum: f64 = rows[..3].iter().map(|r| r[3].parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }
}

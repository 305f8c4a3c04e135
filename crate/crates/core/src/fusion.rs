//! Patch-level fusion of generic and morphology features.
//!
//! Both channels are projected to rank `d'` (`p = W_gᵀg`, `q = W_mᵀm`). The
//! exact mode feeds the full outer product `vec(p qᵀ)` (index `a·d' + b`) to
//! `W_fusion`; the factorized mode feeds only the elementwise product `p ⊙ q`.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cohort::PatchFeatureBag;
use crate::error::{PrismError, Result};
use crate::numcore::tensor_io::{load_tensors, save_tensors, Tensor};
use crate::numcore::{matmul, xavier_uniform_init, Matrix};
use crate::rng::SeedRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Exact,
    #[default]
    Factorized,
}

impl FusionMode {
    /// Width of the interaction vector fed to `W_fusion`.
    pub fn interaction_width(self, rank: usize) -> usize {
        match self {
            FusionMode::Exact => rank * rank,
            FusionMode::Factorized => rank,
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::Exact => "exact",
            FusionMode::Factorized => "factorized",
        })
    }
}

impl FromStr for FusionMode {
    type Err = PrismError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(FusionMode::Exact),
            "factorized" => Ok(FusionMode::Factorized),
            other => Err(PrismError::config(format!(
                "unknown fusion mode '{other}' (expected exact or factorized)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub mode: FusionMode,
    /// `d_g × d'`
    pub w_g: Matrix,
    /// `d_m × d'`
    pub w_m: Matrix,
    /// `(d'·d') × d` in exact mode, `d' × d` in factorized mode.
    pub w_fusion: Matrix,
}

/// Gradients with the same shapes as [`FusionParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct FusionGrad {
    pub w_g: Matrix,
    pub w_m: Matrix,
    pub w_fusion: Matrix,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct FusionSidecar {
    mode: FusionMode,
    d_g: usize,
    d_m: usize,
    rank: usize,
    out: usize,
}

impl FusionParams {
    pub fn new(mode: FusionMode, w_g: Matrix, w_m: Matrix, w_fusion: Matrix) -> Result<Self> {
        let p = Self {
            mode,
            w_g,
            w_m,
            w_fusion,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn init(
        mode: FusionMode,
        d_g: usize,
        d_m: usize,
        rank: usize,
        out: usize,
        rng: &mut SeedRng,
    ) -> Result<Self> {
        let w_g = xavier_uniform_init(d_g, rank, rng)?;
        let w_m = xavier_uniform_init(d_m, rank, rng)?;
        let w_fusion = xavier_uniform_init(mode.interaction_width(rank), out, rng)?;
        Self::new(mode, w_g, w_m, w_fusion)
    }

    pub fn validate(&self) -> Result<()> {
        let rank = self.w_g.cols();
        if rank == 0 || self.w_m.cols() != rank {
            return Err(PrismError::dim(format!(
                "projection ranks differ: W_g has {} columns, W_m has {}",
                rank,
                self.w_m.cols()
            )));
        }
        let want = self.mode.interaction_width(rank);
        if self.w_fusion.rows() != want {
            return Err(PrismError::dim(format!(
                "{} fusion needs W_fusion with {want} rows, got {}",
                self.mode,
                self.w_fusion.rows()
            )));
        }
        for (name, m) in [
            ("W_g", &self.w_g),
            ("W_m", &self.w_m),
            ("W_fusion", &self.w_fusion),
        ] {
            m.ensure_finite(name)?;
        }
        Ok(())
    }

    pub fn rank(&self) -> usize {
        self.w_g.cols()
    }

    pub fn d_g(&self) -> usize {
        self.w_g.rows()
    }

    pub fn d_m(&self) -> usize {
        self.w_m.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.w_fusion.cols()
    }

    fn check_inputs(&self, g_len: usize, m_len: usize) -> Result<()> {
        if g_len != self.d_g() || m_len != self.d_m() {
            return Err(PrismError::dim(format!(
                "fusion expects generic/morph widths {}/{}, got {g_len}/{m_len}",
                self.d_g(),
                self.d_m()
            )));
        }
        Ok(())
    }

    fn interaction(&self, p: &[f64], q: &[f64], out: &mut [f64]) {
        let r = p.len();
        match self.mode {
            FusionMode::Exact => {
                for a in 0..r {
                    for b in 0..r {
                        out[a * r + b] = p[a] * q[b];
                    }
                }
            }
            FusionMode::Factorized => {
                for a in 0..r {
                    out[a] = p[a] * q[a];
                }
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_tensors(path, &self.tensors())?;
        let side = path.with_extension("json");
        let json =
            serde_json::to_vec_pretty(&self.sidecar()).map_err(|e| PrismError::io(&side, e))?;
        fs::write(&side, json).map_err(|e| PrismError::io(&side, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let side = path.with_extension("json");
        let bytes = fs::read(&side).map_err(|e| PrismError::io(&side, e))?;
        let meta: FusionSidecar =
            serde_json::from_slice(&bytes).map_err(|e| PrismError::io(&side, e))?;
        let mut tensors = load_tensors(path)?.into_iter();
        let mut next = || -> Result<Matrix> {
            tensors
                .next()
                .ok_or_else(|| PrismError::io(path, "fusion checkpoint is missing tensors"))?
                .into_matrix()
                .map_err(|e| PrismError::io(path, e))
        };
        let p =
            Self::new(meta.mode, next()?, next()?, next()?).map_err(|e| PrismError::io(path, e))?;
        if p.sidecar() != meta {
            return Err(PrismError::io(
                path,
                "fusion tensors disagree with the sidecar",
            ));
        }
        Ok(p)
    }

    fn sidecar(&self) -> FusionSidecar {
        FusionSidecar {
            mode: self.mode,
            d_g: self.d_g(),
            d_m: self.d_m(),
            rank: self.rank(),
            out: self.out_dim(),
        }
    }

    pub(crate) fn tensors(&self) -> Vec<Tensor> {
        vec![
            (&self.w_g).into(),
            (&self.w_m).into(),
            (&self.w_fusion).into(),
        ]
    }
}

fn fuse_one(g: &[f64], m: &[f64], params: &FusionParams) -> Result<Vec<f64>> {
    params.check_inputs(g.len(), m.len())?;
    let p = params.w_g.t_mul_vec(g)?;
    let q = params.w_m.t_mul_vec(m)?;
    let mut h = vec![0.0; params.mode.interaction_width(p.len())];
    params.interaction(&p, &q, &mut h);
    params.w_fusion.t_mul_vec(&h)
}

/// `f = W_fusionᵀ vec((W_gᵀg)(W_mᵀm)ᵀ)`.
pub fn fuse_exact(g: &[f64], m: &[f64], params: &FusionParams) -> Result<Vec<f64>> {
    if params.mode != FusionMode::Exact {
        return Err(PrismError::config(
            "fuse_exact called with factorized parameters",
        ));
    }
    fuse_one(g, m, params)
}

/// `f = W_fusionᵀ((W_gᵀg) ⊙ (W_mᵀm))`.
pub fn fuse_factorized(g: &[f64], m: &[f64], params: &FusionParams) -> Result<Vec<f64>> {
    if params.mode != FusionMode::Factorized {
        return Err(PrismError::config(
            "fuse_factorized called with exact parameters",
        ));
    }
    fuse_one(g, m, params)
}

/// Fuse a single patch according to the parameters' mode.
pub fn fuse(g: &[f64], m: &[f64], params: &FusionParams) -> Result<Vec<f64>> {
    fuse_one(g, m, params)
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct FusionCache {
    pub p: Matrix,
    pub q: Matrix,
    pub h: Matrix,
}

fn check_bag(bag: &PatchFeatureBag, params: &FusionParams) -> Result<()> {
    if bag.n_patches() == 0 {
        return Err(PrismError::data(format!("bag {} is empty", bag.patient_id)));
    }
    params
        .check_inputs(bag.generic.cols(), bag.morph.cols())
        .map_err(|e| e.context(format!("bag {}", bag.patient_id)))
}

/// Fused features for every patch (`n × d`, rows in bag order) and the cache
/// needed by [`fuse_bag_backward`].
pub fn fuse_bag_cached(
    bag: &PatchFeatureBag,
    params: &FusionParams,
) -> Result<(Matrix, FusionCache)> {
    check_bag(bag, params)?;
    let p = matmul(&bag.generic, &params.w_g)?;
    let q = matmul(&bag.morph, &params.w_m)?;
    let width = params.mode.interaction_width(params.rank());
    let mut h = Matrix::zeros(bag.n_patches(), width);
    for j in 0..bag.n_patches() {
        params.interaction(p.row(j), q.row(j), h.row_mut(j));
    }
    let f = matmul(&h, &params.w_fusion).map_err(|e| {
        let bad = (0..h.rows()).find(|&j| !h.row(j).iter().all(|v| v.is_finite()));
        match bad {
            Some(j) => e.context(format!("bag {} patch {j}", bag.patient_id)),
            None => e.context(format!("bag {}", bag.patient_id)),
        }
    })?;
    Ok((f, FusionCache { p, q, h }))
}

pub fn fuse_bag(bag: &PatchFeatureBag, params: &FusionParams) -> Result<Matrix> {
    Ok(fuse_bag_cached(bag, params)?.0)
}

/// Gradients of a loss with respect to the fusion parameters given
/// `d_f = ∂L/∂F` for the fused matrix of `bag`.
pub fn fuse_bag_backward(
    bag: &PatchFeatureBag,
    params: &FusionParams,
    cache: &FusionCache,
    d_f: &Matrix,
) -> Result<FusionGrad> {
    let r = params.rank();
    let w_fusion = cache.h.t_matmul(d_f)?;
    let d_h = matmul(d_f, &params.w_fusion.transpose())?;
    let n = bag.n_patches();
    let mut d_p = Matrix::zeros(n, r);
    let mut d_q = Matrix::zeros(n, r);
    for j in 0..n {
        let (p, q, dh) = (cache.p.row(j), cache.q.row(j), d_h.row(j));
        match params.mode {
            FusionMode::Exact => {
                for a in 0..r {
                    for b in 0..r {
                        let g = dh[a * r + b];
                        d_p.row_mut(j)[a] += g * q[b];
                        d_q.row_mut(j)[b] += g * p[a];
                    }
                }
            }
            FusionMode::Factorized => {
                for a in 0..r {
                    d_p.row_mut(j)[a] = dh[a] * q[a];
                    d_q.row_mut(j)[a] = dh[a] * p[a];
                }
            }
        }
    }
    Ok(FusionGrad {
        w_g: bag.generic.t_matmul(&d_p)?,
        w_m: bag.morph.t_matmul(&d_q)?,
        w_fusion,
    })
}

/// Exact-mode parameters whose `W_fusion` reads only the diagonal entries
/// `p_a q_a` of the outer product, reproducing a factorized model.
pub fn diagonal_selector(factorized: &FusionParams) -> Result<FusionParams> {
    if factorized.mode != FusionMode::Factorized {
        return Err(PrismError::config(
            "diagonal selector needs factorized parameters",
        ));
    }
    let r = factorized.rank();
    let d = factorized.out_dim();
    let mut w = Matrix::zeros(r * r, d);
    for a in 0..r {
        w.row_mut(a * r + a)
            .copy_from_slice(factorized.w_fusion.row(a));
    }
    FusionParams::new(
        FusionMode::Exact,
        factorized.w_g.clone(),
        factorized.w_m.clone(),
        w,
    )
}

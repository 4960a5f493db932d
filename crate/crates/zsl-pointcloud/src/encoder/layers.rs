//! Dense, batch-norm and relu primitives with hand-derived backward passes.
//!
//! Batch norm always normalizes with the stored running statistics, in
//! training and in inference. During training the statistics observed on
//! each batch are folded into the running estimates with momentum (after
//! the gradient step), so the normalizers track the activation distribution
//! while the normalized forward stays one fixed function of
//! (input, parameters). That keeps three properties at once: the training
//! function and the inference function agree, the loss of a single cloud is
//! well defined (samples never couple through statistics), and gradients
//! are exact with the statistics held constant.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, NdFloat};

use super::params::ParameterSet;

pub(crate) const BN_EPS: f64 = 1e-5;

/// Whether batch norm uses the sample's own statistics (training) or the
/// frozen running statistics (inference).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Per-channel statistics observed during a training forward pass; the
/// trainer folds these into the running statistics after each batch.
#[derive(Debug, Clone)]
pub struct BnStatUpdate<F> {
    pub name_prefix: String,
    pub mean: Array1<F>,
    pub var: Array1<F>,
}

pub(crate) fn linear_fwd<F: NdFloat>(
    x: &Array2<F>,
    w: &ArrayView2<F>,
    b: &ArrayView1<F>,
) -> Array2<F> {
    let mut out = x.dot(w);
    out += b;
    out
}

/// Returns (dx, dw, db) for `out = x.dot(w) + b`.
pub(crate) fn linear_bwd<F: NdFloat>(
    x: &Array2<F>,
    w: &ArrayView2<F>,
    d_out: &Array2<F>,
) -> (Array2<F>, Array2<F>, Array1<F>) {
    let dx = d_out.dot(&w.t());
    let dw = x.t().dot(d_out);
    let db = d_out.sum_axis(Axis(0));
    (dx, dw, db)
}

pub(crate) struct BnCache<F> {
    pub xhat: Array2<F>,
    pub inv_std: Array1<F>,
}

/// Per-channel mean and (biased) variance over the rows of one sample's
/// activation matrix; the trainer folds these into the running statistics.
pub(crate) fn observed_stats<F: NdFloat>(x: &Array2<F>) -> (Array1<F>, Array1<F>) {
    let inv_n = F::one() / F::from(x.nrows()).unwrap();
    let mean = x.sum_axis(Axis(0)).mapv(|v| v * inv_n);
    let mut centered = x.clone();
    centered -= &mean;
    let var = centered.mapv(|v| v * v).sum_axis(Axis(0)).mapv(|v| v * inv_n);
    (mean, var)
}

/// Normalization by the running statistics, with the cache needed for the
/// backward pass.
pub(crate) fn bn_fwd<F: NdFloat>(
    x: &Array2<F>,
    gamma: &ArrayView1<F>,
    beta: &ArrayView1<F>,
    rmean: &ArrayView1<F>,
    rvar: &ArrayView1<F>,
) -> (Array2<F>, BnCache<F>) {
    let eps = F::from(BN_EPS).unwrap();
    let inv_std = rvar.mapv(|v| F::one() / (v + eps).sqrt());
    let mut xhat = x.clone();
    xhat -= rmean;
    xhat *= &inv_std;
    let mut out = &xhat * gamma;
    out += beta;
    (out, BnCache { xhat, inv_std })
}

/// Backward through batch norm; the running statistics are constants of the
/// pass, so the input gradient is a plain per-channel rescale.
pub(crate) fn bn_bwd<F: NdFloat>(
    cache: &BnCache<F>,
    gamma: &ArrayView1<F>,
    d_out: &Array2<F>,
) -> (Array2<F>, Array1<F>, Array1<F>) {
    let dgamma = (d_out * &cache.xhat).sum_axis(Axis(0));
    let dbeta = d_out.sum_axis(Axis(0));
    let mut dx = d_out * gamma;
    dx *= &cache.inv_std;
    (dx, dgamma, dbeta)
}

pub(crate) fn relu_fwd<F: NdFloat>(x: &mut Array2<F>) {
    x.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
}

/// Zeros the gradient wherever the forward output was clamped.
pub(crate) fn relu_bwd<F: NdFloat>(out: &Array2<F>, d_out: &mut Array2<F>) {
    d_out.zip_mut_with(out, |g, &o| {
        if o <= F::zero() {
            *g = F::zero();
        }
    });
}

/// Cache for one linear + batch-norm + relu block.
pub(crate) struct BlockCache<F> {
    pub x: Array2<F>,
    pub bn: Option<BnCache<F>>,
    /// Post-relu output; doubles as the relu mask.
    pub out: Array2<F>,
}

/// Shared-layer block: linear, batch norm, relu. In training mode the
/// statistics observed on the pre-normalization activations are appended to
/// `updates`; the normalization itself always uses the running statistics.
pub(crate) fn block_fwd<F: NdFloat>(
    x: Array2<F>,
    prefix: &str,
    params: &ParameterSet<F>,
    mode: BnMode,
    updates: &mut Vec<BnStatUpdate<F>>,
) -> (Array2<F>, BlockCache<F>) {
    let w = params.get2(&format!("{prefix}.w"));
    let b = params.get1(&format!("{prefix}.b"));
    let gamma = params.get1(&format!("{prefix}.bn.gamma"));
    let beta = params.get1(&format!("{prefix}.bn.beta"));
    let rmean = params.get1(&format!("{prefix}.bn.rmean"));
    let rvar = params.get1(&format!("{prefix}.bn.rvar"));
    let z = linear_fwd(&x, &w, &b);
    if mode == BnMode::Train {
        let (mean, var) = observed_stats(&z);
        updates.push(BnStatUpdate { name_prefix: prefix.to_string(), mean, var });
    }
    let (mut out, bn) = bn_fwd(&z, &gamma, &beta, &rmean, &rvar);
    relu_fwd(&mut out);
    let cache = BlockCache { x, bn: Some(bn), out: out.clone() };
    (out, cache)
}

/// Backward through one block. Accumulates parameter gradients and returns
/// the input gradient.
pub(crate) fn block_bwd<F: NdFloat>(
    cache: &BlockCache<F>,
    prefix: &str,
    params: &ParameterSet<F>,
    mut d_out: Array2<F>,
    grads: &mut ParameterSet<F>,
) -> Array2<F> {
    relu_bwd(&cache.out, &mut d_out);
    let gamma = params.get1(&format!("{prefix}.bn.gamma"));
    let bn = cache.bn.as_ref().expect("forward always fills the cache");
    let (dz, dgamma, dbeta) = bn_bwd(bn, &gamma, &d_out);
    grads.accumulate(&format!("{prefix}.bn.gamma"), &dgamma.into_dyn());
    grads.accumulate(&format!("{prefix}.bn.beta"), &dbeta.into_dyn());
    let w = params.get2(&format!("{prefix}.w"));
    let (dx, dw, db) = linear_bwd(&cache.x, &w, &dz);
    grads.accumulate(&format!("{prefix}.w"), &dw.into_dyn());
    grads.accumulate(&format!("{prefix}.b"), &db.into_dyn());
    dx
}

/// A sequence of blocks sharing a name prefix (`prefix.0`, `prefix.1`, ...).
pub(crate) fn stack_fwd<F: NdFloat>(
    mut x: Array2<F>,
    prefix: &str,
    layers: usize,
    params: &ParameterSet<F>,
    mode: BnMode,
    updates: &mut Vec<BnStatUpdate<F>>,
) -> (Array2<F>, Vec<BlockCache<F>>) {
    let mut caches = Vec::with_capacity(layers);
    for i in 0..layers {
        let (out, cache) = block_fwd(x, &format!("{prefix}.{i}"), params, mode, updates);
        caches.push(cache);
        x = out;
    }
    (x, caches)
}

pub(crate) fn stack_bwd<F: NdFloat>(
    caches: &[BlockCache<F>],
    prefix: &str,
    params: &ParameterSet<F>,
    mut d_out: Array2<F>,
    grads: &mut ParameterSet<F>,
) -> Array2<F> {
    for (i, cache) in caches.iter().enumerate().rev() {
        d_out = block_bwd(cache, &format!("{prefix}.{i}"), params, d_out, grads);
    }
    d_out
}

// 1-d (vector) counterparts used by the post-pool heads.

pub(crate) fn dense_fwd<F: NdFloat>(
    x: &Array1<F>,
    w: &ArrayView2<F>,
    b: &ArrayView1<F>,
) -> Array1<F> {
    let mut out = x.dot(w);
    out += b;
    out
}

/// Returns (dx, dw, db) for the vector case.
pub(crate) fn dense_bwd<F: NdFloat>(
    x: &Array1<F>,
    w: &ArrayView2<F>,
    d_out: &Array1<F>,
) -> (Array1<F>, Array2<F>, Array1<F>) {
    let dx = w.dot(d_out);
    let x2 = x.view().insert_axis(Axis(1));
    let d2 = d_out.view().insert_axis(Axis(0));
    let dw = x2.dot(&d2);
    (dx, dw, d_out.clone())
}

pub(crate) fn relu1_fwd<F: NdFloat>(x: &mut Array1<F>) {
    x.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
}

pub(crate) fn relu1_bwd<F: NdFloat>(out: &Array1<F>, d_out: &mut Array1<F>) {
    d_out.zip_mut_with(out, |g, &o| {
        if o <= F::zero() {
            *g = F::zero();
        }
    });
}

/// Numerically stable softmax; also returns the log-sum-exp so losses can be
/// computed without exponent underflow.
pub(crate) fn softmax<F: NdFloat>(logits: &Array1<F>) -> (Array1<F>, F) {
    let max = logits.iter().cloned().fold(F::neg_infinity(), F::max);
    let shifted = logits.mapv(|v| (v - max).exp());
    let sum = shifted.sum();
    let lse = max + sum.ln();
    (shifted.mapv(|v| v / sum), lse)
}

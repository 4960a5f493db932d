//! Full differentiable pipeline: trunk features, permutation-removing
//! pooling, projection / classifier heads, loss and exact parameter
//! gradients.
//!
//! Point order canonicalization: the pipeline sorts the input rows
//! lexicographically by coordinate before any computation and keeps that
//! order through pooling. Every cross-row reduction (batch-norm statistics,
//! VLAD accumulation, max pooling tie-breaks, neighbor-graph tie-breaks)
//! then runs in an input-order-independent sequence, which makes the pooled
//! feature and everything downstream of it invariant to input permutation at
//! the bit level, not just mathematically.

use ndarray::{Array1, Array2, Axis, NdFloat};

use super::knn::knn_indices;
use super::layers::{
    block_bwd, block_fwd, dense_bwd, dense_fwd, relu1_bwd, relu1_fwd, softmax, stack_bwd,
    stack_fwd, BlockCache, BnMode, BnStatUpdate,
};
use super::params::ParameterSet;
use super::{EncoderConfig, EncoderError, EncoderVariant, HeadSpec, Pooling};

/// Smoothing constant inside the VLAD norm square roots; keeps the
/// normalizations differentiable everywhere.
const NORM_EPS: f64 = 1e-12;

/// Row order that sorts points lexicographically by (x, y, z, ...).
pub(crate) fn canonical_order<F: NdFloat>(points: &Array2<F>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.nrows()).collect();
    order.sort_unstable_by(|&a, &b| {
        let (ra, rb) = (points.row(a), points.row(b));
        for (va, vb) in ra.iter().zip(rb.iter()) {
            match va.partial_cmp(vb).expect("finite coordinates") {
                std::cmp::Ordering::Equal => continue,
                other => return other,
            }
        }
        a.cmp(&b)
    });
    order
}

fn permute_rows<F: NdFloat>(m: &Array2<F>, order: &[usize]) -> Array2<F> {
    m.select(Axis(0), order)
}

/// Edge inputs for a neighbor table: row `i*k + t` is `[x_i, x_{j} - x_i]`
/// for the t-th neighbor j of point i.
fn edge_inputs<F: NdFloat>(x: &Array2<F>, knn: &Array2<usize>) -> Array2<F> {
    let (n, m) = (x.nrows(), x.ncols());
    let k = knn.ncols();
    let mut edges = Array2::<F>::zeros((n * k, 2 * m));
    for i in 0..n {
        for t in 0..k {
            let j = knn[[i, t]];
            let r = i * k + t;
            for c in 0..m {
                let xi = x[[i, c]];
                edges[[r, c]] = xi;
                edges[[r, m + c]] = x[[j, c]] - xi;
            }
        }
    }
    edges
}

/// Scatters edge-input gradients back to the point rows.
fn edge_inputs_bwd<F: NdFloat>(
    d_edges: &Array2<F>,
    knn: &Array2<usize>,
    n: usize,
    m: usize,
) -> Array2<F> {
    let k = knn.ncols();
    let mut dx = Array2::<F>::zeros((n, m));
    for i in 0..n {
        for t in 0..k {
            let j = knn[[i, t]];
            let r = i * k + t;
            for c in 0..m {
                dx[[i, c]] = dx[[i, c]] + d_edges[[r, c]] - d_edges[[r, m + c]];
                dx[[j, c]] += d_edges[[r, m + c]];
            }
        }
    }
    dx
}

/// Per-point max over each point's `k` edge rows; ties keep the first edge.
fn max_over_edges<F: NdFloat>(h: &Array2<F>, n: usize, k: usize) -> (Array2<F>, Array2<usize>) {
    let c = h.ncols();
    let mut out = Array2::<F>::zeros((n, c));
    let mut argmax = Array2::<usize>::zeros((n, c));
    for i in 0..n {
        for col in 0..c {
            let mut best = h[[i * k, col]];
            let mut best_t = 0usize;
            for t in 1..k {
                let v = h[[i * k + t, col]];
                if v > best {
                    best = v;
                    best_t = t;
                }
            }
            out[[i, col]] = best;
            argmax[[i, col]] = best_t;
        }
    }
    (out, argmax)
}

fn max_over_edges_bwd<F: NdFloat>(
    d_out: &Array2<F>,
    argmax: &Array2<usize>,
    n: usize,
    k: usize,
) -> Array2<F> {
    let c = d_out.ncols();
    let mut dh = Array2::<F>::zeros((n * k, c));
    for i in 0..n {
        for col in 0..c {
            let t = argmax[[i, col]];
            dh[[i * k + t, col]] += d_out[[i, col]];
        }
    }
    dh
}

/// Column-wise max over all rows; ties keep the first row.
fn max_over_rows<F: NdFloat>(h: &Array2<F>) -> (Array1<F>, Vec<usize>) {
    let (n, c) = (h.nrows(), h.ncols());
    let mut out = Array1::<F>::zeros(c);
    let mut argmax = vec![0usize; c];
    for col in 0..c {
        let mut best = h[[0, col]];
        let mut best_i = 0usize;
        for i in 1..n {
            let v = h[[i, col]];
            if v > best {
                best = v;
                best_i = i;
            }
        }
        out[col] = best;
        argmax[col] = best_i;
    }
    (out, argmax)
}

pub(crate) enum TrunkTape<F> {
    PointNet {
        blocks: Vec<BlockCache<F>>,
    },
    EdgeConv {
        n: usize,
        k: usize,
        b1_blocks: Vec<BlockCache<F>>,
        argmax1: Array2<usize>,
        knn2: Array2<usize>,
        b2_blocks: Vec<BlockCache<F>>,
        argmax2: Array2<usize>,
        cat_block: BlockCache<F>,
        w1: usize,
    },
}

pub(crate) enum PoolTape<F> {
    Max {
        argmax: Vec<usize>,
        rows: usize,
    },
    NetVlad {
        prepool: BlockCache<F>,
        descriptors: Array2<F>,
        alpha: Array2<F>,
        mass: Array1<F>,
        vlad: Array2<F>,
        intra_scale: Array1<F>,
        flat: Array1<F>,
        global_scale: F,
    },
}

pub(crate) enum HeadTape<F> {
    Semantic {
        pooled: Array1<F>,
        h1: Array1<F>,
        h2: Array1<F>,
        projected: Array1<F>,
    },
    Basic {
        pooled: Array1<F>,
        h1: Array1<F>,
        h2: Array1<F>,
    },
}

pub(crate) struct Tape<F> {
    pub trunk: TrunkTape<F>,
    pub pool: PoolTape<F>,
    pub head: HeadTape<F>,
}

/// Everything a forward pass produces. Per-point features are reported in
/// the caller's original row order.
pub struct ForwardPass<F> {
    pub per_point: Array2<F>,
    pub pooled: Array1<F>,
    pub projected: Option<Array1<F>>,
    pub logits: Array1<F>,
    pub probs: Array1<F>,
}

fn trunk_fwd<F: NdFloat>(
    x: &Array2<F>,
    config: &EncoderConfig,
    params: &ParameterSet<F>,
    mode: BnMode,
    updates: &mut Vec<BnStatUpdate<F>>,
) -> Result<(Array2<F>, TrunkTape<F>), EncoderError> {
    match config.variant {
        EncoderVariant::PointNet => {
            let (features, blocks) = stack_fwd(
                x.clone(),
                "pointnet",
                config.pointnet_widths.len(),
                params,
                mode,
                updates,
            );
            Ok((features, TrunkTape::PointNet { blocks }))
        }
        EncoderVariant::EdgeConv => {
            let n = x.nrows();
            let k = config.k_neighbors;
            let knn1 = knn_indices(x, k)?;
            let e1 = edge_inputs(x, &knn1);
            let (h1, b1_blocks) = stack_fwd(
                e1,
                "edgeconv.b1",
                config.edgeconv_block1.len(),
                params,
                mode,
                updates,
            );
            let (f1, argmax1) = max_over_edges(&h1, n, k);
            // Second graph is dynamic: rebuilt in feature space. Neighbor
            // selection is treated as a constant of the backward pass.
            let knn2 = knn_indices(&f1, k)?;
            let e2 = edge_inputs(&f1, &knn2);
            let (h2, b2_blocks) = stack_fwd(e2, "edgeconv.b2", 1, params, mode, updates);
            let (f2, argmax2) = max_over_edges(&h2, n, k);
            let w1 = f1.ncols();
            let mut cat = Array2::<F>::zeros((n, w1 + f2.ncols()));
            cat.slice_mut(ndarray::s![.., ..w1]).assign(&f1);
            cat.slice_mut(ndarray::s![.., w1..]).assign(&f2);
            let (features, cat_block) = block_fwd(cat, "edgeconv.cat", params, mode, updates);
            Ok((
                features,
                TrunkTape::EdgeConv {
                    n,
                    k,
                    b1_blocks,
                    argmax1,
                    knn2,
                    b2_blocks,
                    argmax2,
                    cat_block,
                    w1,
                },
            ))
        }
    }
}

fn trunk_bwd<F: NdFloat>(
    tape: &TrunkTape<F>,
    params: &ParameterSet<F>,
    d_features: Array2<F>,
    grads: &mut ParameterSet<F>,
) {
    match tape {
        TrunkTape::PointNet { blocks } => {
            let _ = stack_bwd(blocks, "pointnet", params, d_features, grads);
        }
        TrunkTape::EdgeConv {
            n,
            k,
            b1_blocks,
            argmax1,
            knn2,
            b2_blocks,
            argmax2,
            cat_block,
            w1,
        } => {
            let d_cat = block_bwd(cat_block, "edgeconv.cat", params, d_features, grads);
            let d_f1_direct = d_cat.slice(ndarray::s![.., ..*w1]).to_owned();
            let d_f2 = d_cat.slice(ndarray::s![.., *w1..]).to_owned();
            let d_h2 = max_over_edges_bwd(&d_f2, argmax2, *n, *k);
            let d_e2 = stack_bwd(b2_blocks, "edgeconv.b2", params, d_h2, grads);
            let d_f1_graph = edge_inputs_bwd(&d_e2, knn2, *n, *w1);
            let d_f1 = d_f1_direct + d_f1_graph;
            let d_h1 = max_over_edges_bwd(&d_f1, argmax1, *n, *k);
            let d_e1 = stack_bwd(b1_blocks, "edgeconv.b1", params, d_h1, grads);
            // Raw coordinates carry no parameters; their gradient stops here.
            let _ = d_e1;
        }
    }
}

fn pool_fwd<F: NdFloat>(
    features: Array2<F>,
    config: &EncoderConfig,
    params: &ParameterSet<F>,
    mode: BnMode,
    updates: &mut Vec<BnStatUpdate<F>>,
) -> (Array1<F>, PoolTape<F>) {
    match config.pooling {
        Pooling::Max => {
            let rows = features.nrows();
            let (pooled, argmax) = max_over_rows(&features);
            (pooled, PoolTape::Max { argmax, rows })
        }
        Pooling::NetVlad => {
            let eps = F::from(NORM_EPS).unwrap();
            let (descriptors, prepool) =
                block_fwd(features, "netvlad.prepool", params, mode, updates);
            let w = params.get2("netvlad.assign.w");
            let b = params.get1("netvlad.assign.b");
            let centers = params.get2("netvlad.centers");
            let mut logits = descriptors.dot(&w.t());
            logits += &b;
            // Row-stable softmax.
            let mut alpha = logits;
            for mut row in alpha.rows_mut() {
                let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
                row.mapv_inplace(|v| (v - max).exp());
                let sum = row.sum();
                row.mapv_inplace(|v| v / sum);
            }
            let mass = alpha.sum_axis(Axis(0));
            let mut vlad = alpha.t().dot(&descriptors);
            for (j, mut row) in vlad.rows_mut().into_iter().enumerate() {
                let m = mass[j];
                for (c, v) in row.iter_mut().enumerate() {
                    *v -= m * centers[[j, c]];
                }
            }
            let intra_scale =
                Array1::from_iter(vlad.rows().into_iter().map(|r| (r.dot(&r) + eps).sqrt()));
            let mut normalized = vlad.clone();
            for (j, mut row) in normalized.rows_mut().into_iter().enumerate() {
                let s = intra_scale[j];
                row.mapv_inplace(|v| v / s);
            }
            let flat = Array1::from_iter(normalized.iter().cloned());
            let global_scale = (flat.dot(&flat) + eps).sqrt();
            let pooled = flat.mapv(|v| v / global_scale);
            (
                pooled,
                PoolTape::NetVlad {
                    prepool,
                    descriptors,
                    alpha,
                    mass,
                    vlad,
                    intra_scale,
                    flat,
                    global_scale,
                },
            )
        }
    }
}

fn pool_bwd<F: NdFloat>(
    tape: &PoolTape<F>,
    params: &ParameterSet<F>,
    d_pooled: &Array1<F>,
    grads: &mut ParameterSet<F>,
) -> Array2<F> {
    match tape {
        PoolTape::Max { argmax, rows } => {
            let c = d_pooled.len();
            let mut d_features = Array2::<F>::zeros((*rows, c));
            for col in 0..c {
                d_features[[argmax[col], col]] = d_pooled[col];
            }
            d_features
        }
        PoolTape::NetVlad {
            prepool,
            descriptors,
            alpha,
            mass,
            vlad,
            intra_scale,
            flat,
            global_scale,
        } => {
            let g = *global_scale;
            let dot = flat.dot(d_pooled);
            // p = flat / g, g = sqrt(|flat|^2 + eps)
            let d_flat = d_pooled.mapv(|v| v / g) - &flat.mapv(|v| v * dot / (g * g * g));
            let (c, m0) = (vlad.nrows(), vlad.ncols());
            let d_u = Array2::from_shape_vec((c, m0), d_flat.to_vec()).expect("shape");
            // Per-center normalization backward.
            let mut d_vlad = Array2::<F>::zeros((c, m0));
            for j in 0..c {
                let s = intra_scale[j];
                let vj = vlad.row(j);
                let duj = d_u.row(j);
                let vdot = vj.dot(&duj);
                for col in 0..m0 {
                    d_vlad[[j, col]] = duj[col] / s - vj[col] * vdot / (s * s * s);
                }
            }
            let centers = params.get2("netvlad.centers");
            // dAlpha[i][j] = dV_j . (D_i - C_j)
            let mut d_alpha = descriptors.dot(&d_vlad.t());
            let center_dot =
                Array1::from_iter(d_vlad.rows().into_iter().zip(centers.rows()).map(|(dv, cj)| dv.dot(&cj)));
            d_alpha -= &center_dot;
            let mut d_descriptors = alpha.dot(&d_vlad);
            let mut d_centers = d_vlad.clone();
            for (j, mut row) in d_centers.rows_mut().into_iter().enumerate() {
                let m = mass[j];
                row.mapv_inplace(|v| -m * v);
            }
            grads.accumulate("netvlad.centers", &d_centers.into_dyn());
            // Softmax rows backward.
            let mut d_logits = d_alpha;
            for (mut drow, arow) in d_logits.rows_mut().into_iter().zip(alpha.rows()) {
                let dot = drow.dot(&arow);
                for (dv, av) in drow.iter_mut().zip(arow.iter()) {
                    *dv = *av * (*dv - dot);
                }
            }
            let w = params.get2("netvlad.assign.w");
            let dw = d_logits.t().dot(descriptors);
            let db = d_logits.sum_axis(Axis(0));
            grads.accumulate("netvlad.assign.w", &dw.into_dyn());
            grads.accumulate("netvlad.assign.b", &db.into_dyn());
            d_descriptors += &d_logits.dot(&w);
            block_bwd(prepool, "netvlad.prepool", params, d_descriptors, grads)
        }
    }
}

fn head_fwd<F: NdFloat>(
    pooled: Array1<F>,
    config: &EncoderConfig,
    head: &HeadSpec,
    params: &ParameterSet<F>,
    table: Option<&Array2<F>>,
) -> Result<(Array1<F>, Option<Array1<F>>, HeadTape<F>), EncoderError> {
    match head {
        HeadSpec::Semantic { dim } => {
            let table = table.ok_or(EncoderError::MissingTable)?;
            if table.ncols() != *dim {
                return Err(EncoderError::TableDim { expected: *dim, found: table.ncols() });
            }
            let mut h1 = dense_fwd(&pooled, &params.get2("proj.0.w"), &params.get1("proj.0.b"));
            relu1_fwd(&mut h1);
            let mut h2 = dense_fwd(&h1, &params.get2("proj.1.w"), &params.get1("proj.1.b"));
            relu1_fwd(&mut h2);
            let mut projected = dense_fwd(&h2, &params.get2("proj.2.w"), &params.get1("proj.2.b"));
            if config.relu_final_projection {
                relu1_fwd(&mut projected);
            }
            let logits = table.dot(&projected);
            Ok((
                logits,
                Some(projected.clone()),
                HeadTape::Semantic { pooled, h1, h2, projected },
            ))
        }
        HeadSpec::Basic { classes } => {
            let mut h1 = dense_fwd(&pooled, &params.get2("basic.0.w"), &params.get1("basic.0.b"));
            relu1_fwd(&mut h1);
            let mut h2 = dense_fwd(&h1, &params.get2("basic.1.w"), &params.get1("basic.1.b"));
            relu1_fwd(&mut h2);
            let logits = dense_fwd(&h2, &params.get2("basic.2.w"), &params.get1("basic.2.b"));
            if logits.len() != *classes {
                return Err(EncoderError::ShapeMismatch {
                    what: format!("basic head produced {} logits for {} classes", logits.len(), classes),
                });
            }
            Ok((logits, None, HeadTape::Basic { pooled, h1, h2 }))
        }
    }
}

fn head_bwd<F: NdFloat>(
    tape: &HeadTape<F>,
    config: &EncoderConfig,
    params: &ParameterSet<F>,
    table: Option<&Array2<F>>,
    d_logits: &Array1<F>,
    grads: &mut ParameterSet<F>,
) -> Array1<F> {
    match tape {
        HeadTape::Semantic { pooled, h1, h2, projected } => {
            let table = table.expect("semantic backward requires the table");
            let mut d_proj = table.t().dot(d_logits);
            if config.relu_final_projection {
                relu1_bwd(projected, &mut d_proj);
            }
            let (mut d_h2, dw2, db2) = dense_bwd(h2, &params.get2("proj.2.w"), &d_proj);
            grads.accumulate("proj.2.w", &dw2.into_dyn());
            grads.accumulate("proj.2.b", &db2.into_dyn());
            relu1_bwd(h2, &mut d_h2);
            let (mut d_h1, dw1, db1) = dense_bwd(h1, &params.get2("proj.1.w"), &d_h2);
            grads.accumulate("proj.1.w", &dw1.into_dyn());
            grads.accumulate("proj.1.b", &db1.into_dyn());
            relu1_bwd(h1, &mut d_h1);
            let (d_pooled, dw0, db0) = dense_bwd(pooled, &params.get2("proj.0.w"), &d_h1);
            grads.accumulate("proj.0.w", &dw0.into_dyn());
            grads.accumulate("proj.0.b", &db0.into_dyn());
            d_pooled
        }
        HeadTape::Basic { pooled, h1, h2 } => {
            let (mut d_h2, dw2, db2) = dense_bwd(h2, &params.get2("basic.2.w"), d_logits);
            grads.accumulate("basic.2.w", &dw2.into_dyn());
            grads.accumulate("basic.2.b", &db2.into_dyn());
            relu1_bwd(h2, &mut d_h2);
            let (mut d_h1, dw1, db1) = dense_bwd(h1, &params.get2("basic.1.w"), &d_h2);
            grads.accumulate("basic.1.w", &dw1.into_dyn());
            grads.accumulate("basic.1.b", &db1.into_dyn());
            relu1_bwd(h1, &mut d_h1);
            let (d_pooled, dw0, db0) = dense_bwd(pooled, &params.get2("basic.0.w"), &d_h1);
            grads.accumulate("basic.0.w", &dw0.into_dyn());
            grads.accumulate("basic.0.b", &db0.into_dyn());
            d_pooled
        }
    }
}

/// Pooling over caller-supplied features, inference statistics.
pub(crate) fn pool_standalone<F: NdFloat>(
    features: Array2<F>,
    config: &EncoderConfig,
    params: &ParameterSet<F>,
) -> Array1<F> {
    let mut updates = Vec::new();
    let (pooled, _) = pool_fwd(features, config, params, BnMode::Eval, &mut updates);
    pooled
}

/// The projection chain of the semantic head, without the table product.
pub(crate) fn project_standalone<F: NdFloat>(
    pooled: &Array1<F>,
    config: &EncoderConfig,
    params: &ParameterSet<F>,
) -> Array1<F> {
    let mut h1 = dense_fwd(pooled, &params.get2("proj.0.w"), &params.get1("proj.0.b"));
    relu1_fwd(&mut h1);
    let mut h2 = dense_fwd(&h1, &params.get2("proj.1.w"), &params.get1("proj.1.b"));
    relu1_fwd(&mut h2);
    let mut projected = dense_fwd(&h2, &params.get2("proj.2.w"), &params.get1("proj.2.b"));
    if config.relu_final_projection {
        relu1_fwd(&mut projected);
    }
    projected
}

/// The fully connected chain of the basic head.
pub(crate) fn basic_logits_standalone<F: NdFloat>(
    pooled: &Array1<F>,
    params: &ParameterSet<F>,
) -> Array1<F> {
    let mut h1 = dense_fwd(pooled, &params.get2("basic.0.w"), &params.get1("basic.0.b"));
    relu1_fwd(&mut h1);
    let mut h2 = dense_fwd(&h1, &params.get2("basic.1.w"), &params.get1("basic.1.b"));
    relu1_fwd(&mut h2);
    dense_fwd(&h2, &params.get2("basic.2.w"), &params.get1("basic.2.b"))
}

fn validate_input<F: NdFloat>(points: &Array2<F>) -> Result<(), EncoderError> {
    if points.nrows() == 0 || points.ncols() != 3 {
        return Err(EncoderError::ShapeMismatch {
            what: format!("expected an n x 3 point matrix, got {:?}", points.shape()),
        });
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(EncoderError::ShapeMismatch { what: "non-finite point coordinate".into() });
    }
    Ok(())
}

/// Forward pass in the requested batch-norm mode. Returns the pass outputs,
/// the tape (training mode only) and any observed batch-norm statistics.
pub(crate) fn run_forward<F: NdFloat>(
    points: &Array2<F>,
    config: &EncoderConfig,
    head: &HeadSpec,
    params: &ParameterSet<F>,
    table: Option<&Array2<F>>,
    mode: BnMode,
    keep_tape: bool,
) -> Result<(ForwardPass<F>, Option<Tape<F>>, Vec<BnStatUpdate<F>>), EncoderError> {
    validate_input(points)?;
    config.validate()?;
    let order = canonical_order(points);
    let x = permute_rows(points, &order);
    let mut updates = Vec::new();
    let (features, trunk_tape) = trunk_fwd(&x, config, params, mode, &mut updates)?;

    // Report per-point rows in the caller's original order.
    let mut inverse = vec![0usize; order.len()];
    for (canon_pos, &orig) in order.iter().enumerate() {
        inverse[orig] = canon_pos;
    }
    let per_point = features.select(Axis(0), &inverse);

    let (pooled, pool_tape) = pool_fwd(features, config, params, mode, &mut updates);
    let (logits, projected, head_tape) = head_fwd(pooled.clone(), config, head, params, table)?;
    let (probs, _) = softmax(&logits);
    let pass = ForwardPass { per_point, pooled, projected, logits, probs };
    let tape = keep_tape.then_some(Tape { trunk: trunk_tape, pool: pool_tape, head: head_tape });
    Ok((pass, tape, updates))
}

/// Loss of a labeled sample under the training-mode forward, with the exact
/// gradient of that loss for every learnable parameter.
pub struct Gradients<F> {
    pub loss: F,
    pub probs: Array1<F>,
    pub tensors: ParameterSet<F>,
    pub bn_updates: Vec<BnStatUpdate<F>>,
}

pub(crate) fn loss_and_gradients<F: NdFloat>(
    points: &Array2<F>,
    label: usize,
    config: &EncoderConfig,
    head: &HeadSpec,
    params: &ParameterSet<F>,
    table: Option<&Array2<F>>,
) -> Result<Gradients<F>, EncoderError> {
    let classes = match head {
        HeadSpec::Semantic { .. } => table.map(|t| t.nrows()).unwrap_or(0),
        HeadSpec::Basic { classes } => *classes,
    };
    if label >= classes {
        return Err(EncoderError::LabelOutOfRange { label, classes });
    }
    let (pass, tape, updates) = run_forward(points, config, head, params, table, BnMode::Train, true)?;
    let tape = tape.expect("tape requested");

    // Log-sum-exp form keeps the loss finite when the true-class probability
    // underflows.
    let (_, lse) = softmax(&pass.logits);
    let loss = lse - pass.logits[label];

    let mut grads = params.zeros_like_learnable();
    let mut d_logits = pass.probs.clone();
    d_logits[label] -= F::one();
    let d_pooled = head_bwd(&tape.head, config, params, table, &d_logits, &mut grads);
    let d_features = pool_bwd(&tape.pool, params, &d_pooled, &mut grads);
    trunk_bwd(&tape.trunk, params, d_features, &mut grads);

    if let Some(name) = grads.first_non_finite() {
        return Err(EncoderError::NonFinite { name: name.to_string() });
    }
    Ok(Gradients { loss, probs: pass.probs, tensors: grads, bn_updates: updates })
}

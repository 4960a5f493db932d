//! Named-tensor parameter storage.
//!
//! All learnable weights, batch-norm affine terms and batch-norm running
//! statistics live in one flat, name-keyed store. The flat layout gives the
//! optimizer, the checkpoint writer and the finite-difference checks one
//! uniform view of the model; the forward pass fetches tensors by name.

use std::collections::HashMap;

use ndarray::{ArrayD, ArrayView1, ArrayView2, ArrayViewMut1};
use ndarray::{Ix1, Ix2};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EncoderConfig, EncoderVariant, HeadSpec, Pooling};

#[derive(Debug, Clone)]
struct Entry<F> {
    name: String,
    learnable: bool,
    tensor: ArrayD<F>,
}

/// Flat named-tensor store; iteration order is construction order and is
/// identical for parameter sets built from the same config.
#[derive(Debug, Clone)]
pub struct ParameterSet<F> {
    entries: Vec<Entry<F>>,
    index: HashMap<String, usize>,
}

impl<F: ndarray::NdFloat> ParameterSet<F> {
    pub fn empty() -> Self {
        ParameterSet { entries: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: ArrayD<F>, learnable: bool) {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Entry { name, learnable, tensor });
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    fn entry(&self, name: &str) -> &Entry<F> {
        let idx = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"));
        &self.entries[idx]
    }

    pub fn get(&self, name: &str) -> &ArrayD<F> {
        &self.entry(name).tensor
    }

    pub fn get2(&self, name: &str) -> ArrayView2<'_, F> {
        self.entry(name)
            .tensor
            .view()
            .into_dimensionality::<Ix2>()
            .unwrap_or_else(|_| panic!("parameter {name} is not 2-d"))
    }

    pub fn get1(&self, name: &str) -> ArrayView1<'_, F> {
        self.entry(name)
            .tensor
            .view()
            .into_dimensionality::<Ix1>()
            .unwrap_or_else(|_| panic!("parameter {name} is not 1-d"))
    }

    pub fn get1_mut(&mut self, name: &str) -> ArrayViewMut1<'_, F> {
        let idx = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"));
        self.entries[idx]
            .tensor
            .view_mut()
            .into_dimensionality::<Ix1>()
            .unwrap_or_else(|_| panic!("parameter {name} is not 1-d"))
    }

    /// Adds `delta` into the named tensor (gradient accumulation).
    pub fn accumulate(&mut self, name: &str, delta: &ArrayD<F>) {
        let idx = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("missing gradient slot {name}"));
        self.entries[idx].tensor.zip_mut_with(delta, |a, b| *a += *b);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<F>, bool)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.tensor, e.learnable))
    }

    pub fn learnable(&self) -> impl Iterator<Item = (&str, &ArrayD<F>)> {
        self.entries
            .iter()
            .filter(|e| e.learnable)
            .map(|e| (e.name.as_str(), &e.tensor))
    }

    pub fn learnable_mut(&mut self) -> impl Iterator<Item = (&str, &mut ArrayD<F>)> {
        self.entries
            .iter_mut()
            .filter(|e| e.learnable)
            .map(|e| (e.name.as_str(), &mut e.tensor))
    }

    /// Total number of learnable scalar parameters.
    pub fn learnable_count(&self) -> usize {
        self.learnable().map(|(_, t)| t.len()).sum()
    }

    /// Zero-filled container holding exactly the learnable tensors; the shape
    /// gradients are accumulated into.
    pub fn zeros_like_learnable(&self) -> ParameterSet<F> {
        let mut out = ParameterSet::empty();
        for (name, tensor) in self.learnable() {
            out.insert(name, ArrayD::zeros(tensor.raw_dim()), true);
        }
        out
    }

    /// Name of the first non-finite tensor, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.tensor.iter().any(|v| !v.is_finite()))
            .map(|e| e.name.as_str())
    }

    /// Element-wise conversion to another precision.
    pub fn convert<G: ndarray::NdFloat>(&self) -> ParameterSet<G> {
        let mut out = ParameterSet::empty();
        for entry in &self.entries {
            out.insert(
                entry.name.clone(),
                entry.tensor.mapv(|v| G::from(v).unwrap()),
                entry.learnable,
            );
        }
        out
    }
}

fn uniform_tensor<F: ndarray::NdFloat>(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    bound: f64,
) -> ArrayD<F> {
    let len: usize = shape.iter().product();
    let data: Vec<F> = (0..len)
        .map(|_| F::from(rng.random_range(-bound..bound)).unwrap())
        .collect();
    ArrayD::from_shape_vec(ndarray::IxDyn(shape), data).unwrap()
}

fn add_linear<F: ndarray::NdFloat>(
    params: &mut ParameterSet<F>,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    params.insert(format!("{prefix}.w"), uniform_tensor(rng, &[fan_in, fan_out], bound), true);
    params.insert(format!("{prefix}.b"), ArrayD::zeros(ndarray::IxDyn(&[fan_out])), true);
}

fn add_batch_norm<F: ndarray::NdFloat>(params: &mut ParameterSet<F>, prefix: &str, width: usize) {
    params.insert(format!("{prefix}.bn.gamma"), ArrayD::from_elem(ndarray::IxDyn(&[width]), F::one()), true);
    params.insert(format!("{prefix}.bn.beta"), ArrayD::zeros(ndarray::IxDyn(&[width])), true);
    params.insert(format!("{prefix}.bn.rmean"), ArrayD::zeros(ndarray::IxDyn(&[width])), false);
    params.insert(format!("{prefix}.bn.rvar"), ArrayD::from_elem(ndarray::IxDyn(&[width]), F::one()), false);
}

fn add_block<F: ndarray::NdFloat>(
    params: &mut ParameterSet<F>,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
) {
    add_linear(params, rng, prefix, fan_in, fan_out);
    add_batch_norm(params, prefix, fan_out);
}

/// Builds a freshly initialized parameter set for the architecture.
///
/// Weights draw from a fan-in-scaled uniform distribution, biases start at
/// zero, batch-norm scale/shift at one/zero and running statistics at
/// zero-mean unit-variance. Deterministic given the seed.
pub fn init_parameters<F: ndarray::NdFloat>(
    config: &EncoderConfig,
    head: &HeadSpec,
    seed: u64,
) -> ParameterSet<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParameterSet::empty();

    match config.variant {
        EncoderVariant::PointNet => {
            let mut fan_in = 3;
            for (i, &width) in config.pointnet_widths.iter().enumerate() {
                add_block(&mut params, &mut rng, &format!("pointnet.{i}"), fan_in, width);
                fan_in = width;
            }
        }
        EncoderVariant::EdgeConv => {
            let mut fan_in = 6;
            for (i, &width) in config.edgeconv_block1.iter().enumerate() {
                add_block(&mut params, &mut rng, &format!("edgeconv.b1.{i}"), fan_in, width);
                fan_in = width;
            }
            let w1 = *config.edgeconv_block1.last().expect("block1 widths");
            add_block(&mut params, &mut rng, "edgeconv.b2.0", 2 * w1, config.edgeconv_block2);
            add_block(
                &mut params,
                &mut rng,
                "edgeconv.cat",
                w1 + config.edgeconv_block2,
                config.edgeconv_concat,
            );
        }
    }

    if config.pooling == Pooling::NetVlad {
        let m0 = config.netvlad_prepool;
        let c = config.netvlad_centers;
        add_block(&mut params, &mut rng, "netvlad.prepool", config.trunk_output(), m0);
        let bound = 1.0 / (m0 as f64).sqrt();
        params.insert("netvlad.assign.w", uniform_tensor(&mut rng, &[c, m0], bound), true);
        params.insert("netvlad.assign.b", ArrayD::zeros(ndarray::IxDyn(&[c])), true);
        params.insert("netvlad.centers", uniform_tensor(&mut rng, &[c, m0], bound), true);
    }

    let pooled = config.pooled_len();
    match head {
        HeadSpec::Semantic { dim } => {
            let (h1, h2) = config.projection_hidden;
            add_linear(&mut params, &mut rng, "proj.0", pooled, h1);
            add_linear(&mut params, &mut rng, "proj.1", h1, h2);
            add_linear(&mut params, &mut rng, "proj.2", h2, *dim);
        }
        HeadSpec::Basic { classes } => {
            let (h1, h2) = config.basic_hidden;
            add_linear(&mut params, &mut rng, "basic.0", pooled, h1);
            add_linear(&mut params, &mut rng, "basic.1", h1, h2);
            add_linear(&mut params, &mut rng, "basic.2", h2, *classes);
        }
    }

    params
}

/// Closed-form learnable parameter count for an architecture; used to verify
/// that semantic heads carry no per-class weights.
pub fn learnable_parameter_formula(config: &EncoderConfig, head: &HeadSpec) -> usize {
    let block = |fan_in: usize, width: usize| fan_in * width + width + 2 * width;
    let mut total = 0;
    match config.variant {
        EncoderVariant::PointNet => {
            let mut fan_in = 3;
            for &w in &config.pointnet_widths {
                total += block(fan_in, w);
                fan_in = w;
            }
        }
        EncoderVariant::EdgeConv => {
            let mut fan_in = 6;
            for &w in &config.edgeconv_block1 {
                total += block(fan_in, w);
                fan_in = w;
            }
            let w1 = *config.edgeconv_block1.last().unwrap();
            total += block(2 * w1, config.edgeconv_block2);
            total += block(w1 + config.edgeconv_block2, config.edgeconv_concat);
        }
    }
    if config.pooling == Pooling::NetVlad {
        let (m0, c) = (config.netvlad_prepool, config.netvlad_centers);
        total += block(config.trunk_output(), m0);
        total += c * m0 + c + c * m0;
    }
    let pooled = config.pooled_len();
    match head {
        HeadSpec::Semantic { dim } => {
            let (h1, h2) = config.projection_hidden;
            total += pooled * h1 + h1 + h1 * h2 + h2 + h2 * dim + dim;
        }
        HeadSpec::Basic { classes } => {
            let (h1, h2) = config.basic_hidden;
            total += pooled * h1 + h1 + h1 * h2 + h2 + h2 * classes + classes;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> EncoderConfig {
        EncoderConfig {
            pointnet_widths: vec![4, 4],
            ..EncoderConfig::pointnet_max()
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let cfg = tiny_config();
        let head = HeadSpec::Basic { classes: 3 };
        let a: ParameterSet<f32> = init_parameters(&cfg, &head, 5);
        let b: ParameterSet<f32> = init_parameters(&cfg, &head, 5);
        let c: ParameterSet<f32> = init_parameters(&cfg, &head, 6);
        for ((_, ta, _), (_, tb, _)) in a.iter().zip(b.iter()) {
            assert_eq!(ta, tb);
        }
        let differs = a.iter().zip(c.iter()).any(|((_, ta, _), (_, tc, _))| ta != tc);
        assert!(differs);
    }

    #[test]
    fn biases_start_at_zero() {
        let cfg = tiny_config();
        let params: ParameterSet<f32> = init_parameters(&cfg, &HeadSpec::Basic { classes: 3 }, 0);
        for (name, tensor, _) in params.iter() {
            if name.ends_with(".b") || name.ends_with(".bn.beta") {
                assert!(tensor.iter().all(|&v| v == 0.0), "{name} not zero");
            }
        }
    }

    #[test]
    fn count_matches_formula_for_all_architectures() {
        let heads = [HeadSpec::Semantic { dim: 7 }, HeadSpec::Basic { classes: 5 }];
        let configs = [
            EncoderConfig::pointnet_max(),
            EncoderConfig::pointnet_netvlad(),
            EncoderConfig::edgeconv_max(),
            EncoderConfig::edgeconv_netvlad(),
        ];
        for cfg in &configs {
            for head in &heads {
                let params: ParameterSet<f32> = init_parameters(cfg, head, 1);
                assert_eq!(
                    params.learnable_count(),
                    learnable_parameter_formula(cfg, head),
                    "mismatch for {cfg:?} {head:?}"
                );
            }
        }
    }

    #[test]
    fn semantic_head_size_is_class_count_free() {
        let cfg = EncoderConfig::pointnet_max();
        let d30 = learnable_parameter_formula(&cfg, &HeadSpec::Semantic { dim: 300 });
        // The same architecture classifying any number of seen classes keeps
        // the same parameter count; only the basic head grows with classes.
        assert_eq!(d30, learnable_parameter_formula(&cfg, &HeadSpec::Semantic { dim: 300 }));
        let b10 = learnable_parameter_formula(&cfg, &HeadSpec::Basic { classes: 10 });
        let b30 = learnable_parameter_formula(&cfg, &HeadSpec::Basic { classes: 30 });
        assert_ne!(b10, b30);
    }

    #[test]
    fn unused_head_has_no_tensors() {
        let cfg = tiny_config();
        let semantic: ParameterSet<f32> = init_parameters(&cfg, &HeadSpec::Semantic { dim: 8 }, 0);
        assert!(semantic.names().all(|n| !n.starts_with("basic.")));
        let basic: ParameterSet<f32> = init_parameters(&cfg, &HeadSpec::Basic { classes: 4 }, 0);
        assert!(basic.names().all(|n| !n.starts_with("proj.")));
    }
}

//! Finite-difference validation of the hand-derived gradients on a tiny
//! network, across every trunk, pooling and head combination.
//!
//! Run with: cargo run --example gradient_check

use ndarray::Array2;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zsl_pointcloud::encoder::{
    init_parameters, parameter_gradients, EncoderConfig, EncoderVariant, HeadSpec, Pooling,
};

fn tiny_config(variant: EncoderVariant, pooling: Pooling) -> EncoderConfig {
    EncoderConfig {
        pointnet_widths: vec![4, 4],
        edgeconv_block1: vec![4, 4],
        edgeconv_block2: 4,
        edgeconv_concat: 8,
        k_neighbors: 3,
        netvlad_centers: 4,
        netvlad_prepool: 4,
        projection_hidden: (6, 5),
        basic_hidden: (6, 5),
        ..EncoderConfig::with_variant(variant, pooling)
    }
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let points = Array2::from_shape_fn((8, 3), |_| rng.random_range(-0.8f64..0.8));
    let table = {
        let mut t = Array2::from_shape_fn((3, 7), |_| rng.random_range(-1.0f64..1.0));
        for mut row in t.rows_mut() {
            let norm = row.dot(&row).sqrt();
            row.mapv_inplace(|v| v / norm);
        }
        t
    };

    let variants = [EncoderVariant::PointNet, EncoderVariant::EdgeConv];
    let poolings = [Pooling::Max, Pooling::NetVlad];
    let heads = [HeadSpec::Semantic { dim: 7 }, HeadSpec::Basic { classes: 3 }];
    for variant in variants {
        for pooling in poolings {
            for head in heads {
                let cfg = tiny_config(variant, pooling);
                let params = init_parameters::<f64>(&cfg, &head, 11);
                let grads = parameter_gradients(
                    &points,
                    1,
                    &cfg,
                    &head,
                    &params,
                    matches!(head, HeadSpec::Semantic { .. }).then_some(&table),
                )
                .unwrap();

                // Central differences over every learnable scalar. A secant
                // straddling a relu/max kink is not a derivative estimate;
                // such coordinates show up as disagreeing one-sided slopes
                // and are reported separately.
                let eps = 1e-5;
                let mut max_rel = 0.0f64;
                let mut kinks = 0usize;
                let names: Vec<String> =
                    grads.tensors.names().map(str::to_string).collect();
                for name in &names {
                    for idx in 0..params.get(name).len() {
                        let loss_at = |delta: f64| {
                            let mut p = params.clone();
                            let mut bump = ndarray::ArrayD::zeros(p.get(name).raw_dim());
                            bump.as_slice_mut().unwrap()[idx] = delta;
                            p.accumulate(name, &bump);
                            parameter_gradients(
                                &points,
                                1,
                                &cfg,
                                &head,
                                &p,
                                matches!(head, HeadSpec::Semantic { .. }).then_some(&table),
                            )
                            .unwrap()
                            .loss
                        };
                        let plus = loss_at(eps);
                        let minus = loss_at(-eps);
                        let numeric = (plus - minus) / (2.0 * eps);
                        let analytic = grads.tensors.get(name).as_slice().unwrap()[idx];
                        let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                        let rel = (analytic - numeric).abs() / denom;
                        if rel >= 1e-4 {
                            let forward = (plus - grads.loss) / eps;
                            let backward = (grads.loss - minus) / eps;
                            let gap = (forward - backward).abs()
                                / forward.abs().max(backward.abs()).max(1e-6);
                            if gap > 1e-2 {
                                kinks += 1;
                                continue;
                            }
                        }
                        max_rel = max_rel.max(rel);
                    }
                }
                let head_name = match head {
                    HeadSpec::Semantic { .. } => "semantic",
                    HeadSpec::Basic { .. } => "basic",
                };
                println!(
                    "{:<9} {:<8} {:<9} loss {:+.4}  max relative gradient error {:.3e}  ({kinks} kink coordinates)",
                    variant.id(),
                    pooling.id(),
                    head_name,
                    grads.loss,
                    max_rel
                );
                assert!(max_rel < 1e-4);
            }
        }
    }
    println!("all combinations within 1e-4 of central finite differences");
}

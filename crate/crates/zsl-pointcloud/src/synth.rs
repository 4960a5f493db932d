//! Procedural datasets and word-vector files for examples and tests.
//!
//! Every class owns a latent geometry code. Shapes are unions of ellipsoid
//! blobs whose centers and radii are smooth functions of that code, so
//! nearby codes produce similar geometry. Generated word vectors are random
//! linear projections of the same codes, which gives the semantic space the
//! property zero-shot transfer relies on: classes that look alike sit close
//! together in embedding space. Unseen classes receive codes mixed from two
//! seen-class parents, making them genuinely describable as combinations of
//! seen classes.
//!
//! Everything is deterministic in the dataset seed, and the generated files
//! go through the ordinary ingest and vector-loading paths.

use std::io::Write;
use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::mesh::TriangleMesh;
use crate::dataset::split::{modelnet10_classes, modelnet40_classes};
use crate::derive_seed;
use crate::semantic::{class_tokens, SemanticSpace, WORD_VECTOR_DIM};

/// Latent geometry-code dimension.
pub const CODE_DIM: usize = 8;

const BLOBS: usize = 4;

/// Geometry parents of each unseen class: its code is a 0.78/0.22 mixture of
/// the two parents' codes, i.e. a strong variant of one training class with
/// a twist from another. Parents are disjoint across unseen classes so the
/// classes stay mutually distinguishable.
const UNSEEN_PARENTS: [(&str, &str, &str); 10] = [
    ("bathtub", "sink", "bowl"),
    ("bed", "tent", "mantel"),
    ("chair", "stool", "bench"),
    ("desk", "tv_stand", "bookshelf"),
    ("dresser", "wardrobe", "xbox"),
    ("monitor", "laptop", "keyboard"),
    ("night_stand", "radio", "cup"),
    ("sofa", "piano", "curtain"),
    ("table", "door", "glass_box"),
    ("toilet", "vase", "lamp"),
];

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Train files written for unseen classes (excluded by the modelnet
    /// protocol, present for layout realism).
    pub unseen_train_per_class: usize,
    pub seed: u64,
    pub sphere_rings: usize,
    pub sphere_segments: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            train_per_class: 16,
            test_per_class: 8,
            unseen_train_per_class: 2,
            seed: 1234,
            sphere_rings: 6,
            sphere_segments: 8,
        }
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Deterministic unit code for a name under a dataset seed.
pub fn class_code(name: &str, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("code/{name}")));
    unit_vector(&mut rng, CODE_DIM)
}

/// Code for a class, honoring the unseen-parent mixtures.
pub fn geometry_code(class: &str, seed: u64) -> Vec<f64> {
    for (unseen, parent_a, parent_b) in UNSEEN_PARENTS {
        if class == unseen {
            let a = class_code(parent_a, seed);
            let b = class_code(parent_b, seed);
            let mut mix: Vec<f64> =
                a.iter().zip(b.iter()).map(|(x, y)| 0.78 * x + 0.22 * y).collect();
            let norm: f64 = mix.iter().map(|x| x * x).sum::<f64>().sqrt();
            for v in &mut mix {
                *v /= norm;
            }
            return mix;
        }
    }
    class_code(class, seed)
}

/// Fixed random affine maps from code space to blob parameters. These are
/// global (seed-independent) so the decoder from code to shape is one fixed
/// function.
fn decoder_matrix(tag: &str, rows: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(0x5ca1ab1e, tag));
    (0..rows).map(|_| (0..CODE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn affine(matrix: &[Vec<f64>], code: &[f64]) -> Vec<f64> {
    matrix.iter().map(|row| row.iter().zip(code.iter()).map(|(a, b)| a * b).sum()).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Union-of-blobs mesh for a geometry code with per-instance jitter.
pub fn blob_mesh_for_code(
    code: &[f64],
    instance_seed: u64,
    rings: usize,
    segments: usize,
) -> TriangleMesh {
    let mut rng = ChaCha8Rng::seed_from_u64(instance_seed);
    // Instances jitter in code space, not only in blob parameters, so each
    // class becomes a region rather than a template and classifiers trained
    // on it keep informative probabilities near class boundaries.
    let code: Vec<f64> = {
        let mut g: Vec<f64> =
            code.iter().map(|v| v + rng.random_range(-0.15..0.15)).collect();
        let norm: f64 = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        for v in &mut g {
            *v /= norm;
        }
        g
    };
    let code = code.as_slice();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let global_scale = rng.random_range(0.9..1.1);
    for blob in 0..BLOBS {
        let centers = decoder_matrix(&format!("center/{blob}"), 3);
        let radii = decoder_matrix(&format!("radii/{blob}"), 3);
        let c = affine(&centers, code);
        let r = affine(&radii, code);
        let center: Vec<f64> = c
            .iter()
            .map(|v| 0.55 * v.tanh() + rng.random_range(-0.04..0.04))
            .collect();
        let radius: Vec<f64> = r
            .iter()
            .map(|v| (0.12 + 0.30 * sigmoid(2.0 * v)) * rng.random_range(0.85..1.15))
            .collect();
        append_uv_sphere(
            &mut vertices,
            &mut faces,
            [center[0], center[1], center[2]],
            [
                radius[0] * global_scale,
                radius[1] * global_scale,
                radius[2] * global_scale,
            ],
            rings,
            segments,
        );
    }
    let declared_vertices = vertices.len();
    let declared_faces = faces.len();
    TriangleMesh { vertices, faces, declared_vertices, declared_faces }
}

fn append_uv_sphere(
    vertices: &mut Vec<[f64; 3]>,
    faces: &mut Vec<[usize; 3]>,
    center: [f64; 3],
    radii: [f64; 3],
    rings: usize,
    segments: usize,
) {
    let base = vertices.len();
    let top = base;
    vertices.push([center[0], center[1], center[2] + radii[2]]);
    for ring in 1..rings {
        let phi = std::f64::consts::PI * ring as f64 / rings as f64;
        for seg in 0..segments {
            let theta = 2.0 * std::f64::consts::PI * seg as f64 / segments as f64;
            vertices.push([
                center[0] + radii[0] * phi.sin() * theta.cos(),
                center[1] + radii[1] * phi.sin() * theta.sin(),
                center[2] + radii[2] * phi.cos(),
            ]);
        }
    }
    let bottom = vertices.len();
    vertices.push([center[0], center[1], center[2] - radii[2]]);

    let ring_start = |ring: usize| base + 1 + (ring - 1) * segments;
    for seg in 0..segments {
        let next = (seg + 1) % segments;
        faces.push([top, ring_start(1) + seg, ring_start(1) + next]);
    }
    for ring in 1..rings - 1 {
        for seg in 0..segments {
            let next = (seg + 1) % segments;
            let a = ring_start(ring) + seg;
            let b = ring_start(ring) + next;
            let c = ring_start(ring + 1) + seg;
            let d = ring_start(ring + 1) + next;
            faces.push([a, c, d]);
            faces.push([a, d, b]);
        }
    }
    for seg in 0..segments {
        let next = (seg + 1) % segments;
        faces.push([bottom, ring_start(rings - 1) + next, ring_start(rings - 1) + seg]);
    }
}

fn write_instances(
    dir: &Path,
    class: &str,
    count: usize,
    start_index: usize,
    opts: &SynthOptions,
    code: &[f64],
) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for i in 0..count {
        let idx = start_index + i;
        let name = format!("{class}_{idx:04}.off");
        let instance_seed = derive_seed(opts.seed, &format!("{class}/{name}"));
        let mesh = blob_mesh_for_code(code, instance_seed, opts.sphere_rings, opts.sphere_segments);
        let mut file = std::fs::File::create(dir.join(&name))?;
        file.write_all(mesh.to_off().as_bytes())?;
    }
    Ok(())
}

/// Writes a ModelNet-style directory tree (`class/train`, `class/test`) for
/// all 40 class names.
pub fn generate_modelnet_layout(root: &Path, opts: &SynthOptions) -> std::io::Result<()> {
    let unseen = modelnet10_classes();
    for class in modelnet40_classes() {
        let code = geometry_code(&class, opts.seed);
        let train_count = if unseen.contains(&class) {
            opts.unseen_train_per_class
        } else {
            opts.train_per_class
        };
        write_instances(&root.join(&class).join("train"), &class, train_count, 1, opts, &code)?;
        write_instances(
            &root.join(&class).join("test"),
            &class,
            opts.test_per_class,
            1000,
            opts,
            &code,
        )?;
    }
    Ok(())
}

/// Writes a word-vector text file covering the given classes. Token vectors
/// are noisy linear projections of the geometry codes; tokens shared between
/// class names receive the mean of their classes' targets.
pub fn write_word_vectors(
    path: &Path,
    space: SemanticSpace,
    classes: &[String],
    seed: u64,
) -> std::io::Result<()> {
    let projector: Vec<Vec<f64>> = {
        let tag = format!("projector/{}", space.id());
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &tag));
        (0..WORD_VECTOR_DIM)
            .map(|_| (0..CODE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    };

    let target = |class: &str| -> Vec<f64> {
        let code = geometry_code(class, seed);
        let mut t = affine(&projector, &code);
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("noise/{}/{class}", space.id())));
        for v in &mut t {
            *v += rng.random_range(-0.02..0.02);
        }
        let norm: f64 = t.iter().map(|x| x * x).sum::<f64>().sqrt();
        t.into_iter().map(|x| x / norm).collect()
    };

    // token -> classes that contain it
    let mut token_classes: Vec<(String, Vec<String>)> = Vec::new();
    for class in classes {
        for token in class_tokens(class) {
            match token_classes.iter_mut().find(|(t, _)| *t == token) {
                Some((_, list)) => {
                    if !list.contains(class) {
                        list.push(class.clone());
                    }
                }
                None => token_classes.push((token, vec![class.clone()])),
            }
        }
    }

    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (token, owners) in &token_classes {
        let mut acc = vec![0.0f64; WORD_VECTOR_DIM];
        for owner in owners {
            for (a, b) in acc.iter_mut().zip(target(owner)) {
                *a += b;
            }
        }
        for v in &mut acc {
            *v /= owners.len() as f64;
        }
        let joined: Vec<String> = acc.iter().map(|v| format!("{v:.6}")).collect();
        writeln!(file, "{token} {}", joined.join(" "))?;
    }
    Ok(())
}

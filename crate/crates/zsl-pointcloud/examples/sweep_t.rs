//! Effect of the inference depth T: how accuracy changes with the number of
//! seen-class embeddings contributing to the combined semantic vector.
//!
//! Run with: cargo run --release --example sweep_t

use zsl_pointcloud::dataset::ingest;
use zsl_pointcloud::eval::t_sweep;
use zsl_pointcloud::synth::{generate_modelnet_layout, write_word_vectors, SynthOptions};
use zsl_pointcloud::train::train_model;
use zsl_pointcloud::{
    EncoderConfig, Protocol, SemanticEmbeddingTable, SemanticMode, SemanticSpace, TrainConfig,
    WordVectorStore,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = 9;
    let dir = tempfile::tempdir()?;
    let root = dir.path().join("modelnet40");
    generate_modelnet_layout(
        &root,
        &SynthOptions { train_per_class: 6, test_per_class: 4, seed, ..Default::default() },
    )?;
    let (manifest, cache) = ingest(&root, Protocol::ModelNet, 256, seed)?;
    let vec_path = dir.path().join("w2v.txt");
    write_word_vectors(&vec_path, SemanticSpace::W2v, &manifest.class_table(), seed)?;
    let store = WordVectorStore::load(&vec_path, SemanticSpace::W2v)?;
    let seen_table = SemanticEmbeddingTable::build(&store, &manifest.seen_classes)?;
    let unseen_table = SemanticEmbeddingTable::build(&store, &manifest.unseen_classes)?;

    let encoder = EncoderConfig {
        pointnet_widths: vec![32, 32, 64, 256],
        projection_hidden: (128, 96),
        ..EncoderConfig::pointnet_max()
    };
    let config =
        TrainConfig { learning_rate: 3e-3, epochs: 20, ..TrainConfig::new(SemanticMode::W2v, seed) };
    let (checkpoint, _) = train_model(&cache, &manifest, &encoder, &config, Some(&seen_table))?;

    let grid = [1, 5, 10, 15, 20, 25, 30];
    let series = t_sweep(&cache, &manifest, &checkpoint, &seen_table, &unseen_table, &grid)?;
    println!("T,accuracy");
    for (t, accuracy) in series {
        println!("{t},{accuracy:.2}");
    }
    Ok(())
}

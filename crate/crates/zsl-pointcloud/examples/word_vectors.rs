//! Word-vector handling: load two vector files, build per-class embedding
//! tables for the seen and unseen vocabularies and fuse them into the
//! concatenated space.
//!
//! Run with: cargo run --example word_vectors

use zsl_pointcloud::dataset::split::{modelnet10_classes, seen_classes};
use zsl_pointcloud::synth::write_word_vectors;
use zsl_pointcloud::{SemanticEmbeddingTable, SemanticSpace, WordVectorStore};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let w2v_path = dir.path().join("w2v.txt");
    let glove_path = dir.path().join("glove.txt");
    let all: Vec<String> = seen_classes().into_iter().chain(modelnet10_classes()).collect();
    write_word_vectors(&w2v_path, SemanticSpace::W2v, &all, 42)?;
    write_word_vectors(&glove_path, SemanticSpace::Glove, &all, 42)?;

    let w2v = WordVectorStore::load(&w2v_path, SemanticSpace::W2v)?;
    let glove = WordVectorStore::load(&glove_path, SemanticSpace::Glove)?;
    println!("loaded {} w2v tokens, {} glove tokens", w2v.len(), glove.len());

    let seen = seen_classes();
    let unseen = modelnet10_classes();
    let seen_w2v = SemanticEmbeddingTable::build(&w2v, &seen)?;
    let seen_glove = SemanticEmbeddingTable::build(&glove, &seen)?;
    let unseen_w2v = SemanticEmbeddingTable::build(&w2v, &unseen)?;
    println!(
        "seen table: {} x {} ({}), unseen table: {} x {}",
        seen_w2v.classes().len(),
        seen_w2v.dim(),
        seen_w2v.space().id(),
        unseen_w2v.classes().len(),
        unseen_w2v.dim()
    );

    // Compound names average their constituent tokens.
    let night_stand = w2v.class_embedding("night_stand")?;
    println!(
        "night_stand embedding: dim {}, norm {:.6}",
        night_stand.len(),
        night_stand.dot(&night_stand).sqrt()
    );

    let fused = SemanticEmbeddingTable::fuse(&seen_w2v, &seen_glove)?;
    let row = fused.row(0);
    println!(
        "fused table: {} x {} ({}), row norm {:.6} (= sqrt 2)",
        fused.classes().len(),
        fused.dim(),
        fused.space().id(),
        row.dot(&row).sqrt()
    );
    println!("seen-table checksum: {:#018x}", seen_w2v.checksum());
    Ok(())
}

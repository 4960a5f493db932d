//! Zero-shot classification end to end: train a semantic-head encoder
//! against seen-class word vectors, then classify objects from the ten
//! held-out classes it never saw, by combining seen-class embeddings and
//! ranking unseen-class embeddings by cosine similarity.
//!
//! Run with: cargo run --release --example zsl_demo

use zsl_pointcloud::dataset::{ingest, split::Role};
use zsl_pointcloud::eval::{emit_report, EvaluationReport, ReportFormat};
use zsl_pointcloud::synth::{generate_modelnet_layout, write_word_vectors, SynthOptions};
use zsl_pointcloud::train::train_model;
use zsl_pointcloud::zsl::{classify_unseen_batch, InferenceHead};
use zsl_pointcloud::{
    EncoderConfig, Protocol, SemanticEmbeddingTable, SemanticMode, SemanticSpace, TrainConfig,
    WordVectorStore,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = 42;
    let dir = tempfile::tempdir()?;
    let root = dir.path().join("modelnet40");
    generate_modelnet_layout(
        &root,
        &SynthOptions { train_per_class: 8, test_per_class: 4, seed, ..Default::default() },
    )?;
    let (manifest, cache) = ingest(&root, Protocol::ModelNet, 256, seed)?;

    let vec_path = dir.path().join("w2v.txt");
    let all_classes: Vec<String> = manifest.class_table();
    write_word_vectors(&vec_path, SemanticSpace::W2v, &all_classes, seed)?;
    let store = WordVectorStore::load(&vec_path, SemanticSpace::W2v)?;
    let seen_table = SemanticEmbeddingTable::build(&store, &manifest.seen_classes)?;
    let unseen_table = SemanticEmbeddingTable::build(&store, &manifest.unseen_classes)?;

    let encoder = EncoderConfig {
        pointnet_widths: vec![32, 32, 64, 256],
        projection_hidden: (128, 96),
        ..EncoderConfig::pointnet_max()
    };
    let config = TrainConfig {
        learning_rate: 3e-3,
        epochs: 30,
        ..TrainConfig::new(SemanticMode::W2v, seed)
    };
    println!(
        "training the semantic head on {} seen samples...",
        manifest.count_role(Role::TrainSeen)
    );
    let (checkpoint, stats) = train_model(&cache, &manifest, &encoder, &config, Some(&seen_table))?;
    println!(
        "final training loss {:.3}, train accuracy {:.1}%",
        stats.last().unwrap().mean_loss,
        stats.last().unwrap().train_accuracy
    );

    let t = manifest.seen_classes.len();
    let predictions = classify_unseen_batch(
        &cache,
        &manifest,
        &checkpoint,
        &seen_table,
        &unseen_table,
        t,
        InferenceHead::Semantic,
    )?;
    for p in predictions.iter().take(5) {
        println!(
            "{:<40} true {:<12} predicted {:<12} cos {:.3}",
            p.sample,
            manifest.unseen_classes[p.true_class],
            manifest.unseen_classes[p.predicted()],
            p.top_cosine()
        );
    }

    let report = EvaluationReport::from_predictions(
        &predictions,
        &manifest,
        checkpoint.meta.encoder.method_id(),
        "w2v".into(),
    )?;
    println!(
        "zero-shot top-1 accuracy on unseen classes: {:.1}% (random {:.1}%)",
        report.overall_top1, report.random_baseline
    );
    for cell in &report.per_class {
        match cell.percent {
            Some(p) => println!("  {:<12} {:>5.1}%  ({} samples)", cell.class, p, cell.samples),
            None => println!("  {:<12} absent", cell.class),
        }
    }
    print!("{}", emit_report(&[report], ReportFormat::Csv)?);
    Ok(())
}

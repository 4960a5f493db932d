//! The full command-line pipeline (`zslpc ingest` / `train` / `eval-seen` /
//! `eval-zsl` / `sweep-t` / `report`) driven programmatically against a
//! procedural dataset, ending with the combined report table.
//!
//! Run with: cargo run --release --example cli_pipeline

use zsl_pointcloud::cli;
use zsl_pointcloud::synth::{generate_modelnet_layout, write_word_vectors, SynthOptions};
use zsl_pointcloud::SemanticSpace;

fn run(step: &str, args: &[&str]) {
    println!("$ zslpc {}", args.join(" "));
    let owned: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    let code = cli::run(&owned);
    assert_eq!(code, 0, "{step} failed with exit code {code}");
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let root = dir.path().join("modelnet40");
    let out = dir.path().join("out");
    generate_modelnet_layout(
        &root,
        &SynthOptions { train_per_class: 3, test_per_class: 2, ..Default::default() },
    )?;
    let classes: Vec<String> = zsl_pointcloud::dataset::split::modelnet40_classes();
    let w2v = dir.path().join("w2v.txt");
    write_word_vectors(&w2v, SemanticSpace::W2v, &classes, 42)?;

    let cache = dir.path().join("modelnet.pcz");
    let cache_s = cache.to_str().unwrap();
    let root_s = root.to_str().unwrap();
    let out_s = out.to_str().unwrap();
    let w2v_s = w2v.to_str().unwrap();

    run("ingest", &[
        "ingest", "--dataset", "modelnet", "--data-root", root_s, "--cache", cache_s,
        "--points", "256", "--seed", "42",
    ]);
    run("train", &[
        "train", "--cache", cache_s, "--encoder", "pointnet", "--pooling", "max",
        "--semantics", "w2v", "--vectors-w2v", w2v_s, "--epochs", "8", "--lr", "0.003",
        "--seed", "42", "--out", out_s,
    ]);
    let ckpt = out.join("modelnet_pointnet_max_w2v.ckpt");
    let ckpt_s = ckpt.to_str().unwrap();
    run("eval-seen", &[
        "eval-seen", "--cache", cache_s, "--checkpoint", ckpt_s, "--vectors-w2v", w2v_s,
        "--out", out_s,
    ]);
    run("eval-zsl", &[
        "eval-zsl", "--cache", cache_s, "--checkpoint", ckpt_s, "--vectors-w2v", w2v_s,
        "--T", "30", "--out", out_s,
    ]);
    run("sweep-t", &[
        "sweep-t", "--cache", cache_s, "--checkpoint", ckpt_s, "--vectors-w2v", w2v_s,
        "--T", "5,15,30", "--out", out_s,
    ]);
    run("report", &["report", "--out", out_s]);

    println!("\nartifacts under {}:", out.display());
    let mut names: Vec<String> = std::fs::read_dir(&out)?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect();
    names.sort();
    for name in names {
        println!("  {name}");
    }
    Ok(())
}

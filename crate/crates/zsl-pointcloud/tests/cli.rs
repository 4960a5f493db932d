//! End-to-end pipeline through the command-line surface: ingest a procedural
//! dataset, train, evaluate seen and unseen splits, sweep T and combine
//! reports; reruns must produce byte-identical prediction files.

use std::path::{Path, PathBuf};

use zsl_pointcloud::cli;
use zsl_pointcloud::synth::{generate_modelnet_layout, write_word_vectors, SynthOptions};
use zsl_pointcloud::SemanticSpace;

fn run_ok(args: &[&str]) {
    let owned: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    let code = cli::run(&owned);
    assert_eq!(code, 0, "command failed: zslpc {}", args.join(" "));
}

struct Workspace {
    #[allow(dead_code)]
    dir: tempfile::TempDir,
    root: PathBuf,
    out: PathBuf,
    cache: PathBuf,
    w2v: PathBuf,
}

fn workspace() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("modelnet40");
    generate_modelnet_layout(
        &root,
        &SynthOptions { train_per_class: 2, test_per_class: 1, ..Default::default() },
    )
    .unwrap();
    let w2v = dir.path().join("w2v.txt");
    write_word_vectors(
        &w2v,
        SemanticSpace::W2v,
        &zsl_pointcloud::dataset::split::modelnet40_classes(),
        77,
    )
    .unwrap();
    Workspace {
        root: root.clone(),
        out: dir.path().join("out"),
        cache: dir.path().join("modelnet.pcz"),
        w2v,
        dir,
    }
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn pipeline_end_to_end_with_deterministic_reruns() {
    let ws = workspace();
    run_ok(&[
        "ingest", "--dataset", "modelnet", "--data-root", s(&ws.root), "--cache", s(&ws.cache),
        "--points", "128", "--seed", "7",
    ]);
    assert!(ws.cache.exists());
    let manifest_path = ws.cache.with_extension("manifest.json");
    let manifest_text = std::fs::read_to_string(&manifest_path).unwrap();
    // Provenance echo lands in the manifest.
    assert!(manifest_text.contains("\"config\""));
    assert!(manifest_text.contains("\"subcommand\": \"ingest\""));

    run_ok(&[
        "train", "--cache", s(&ws.cache), "--encoder", "pointnet", "--pooling", "max",
        "--semantics", "w2v", "--vectors-w2v", s(&ws.w2v), "--epochs", "2", "--lr", "0.003",
        "--seed", "7", "--out", s(&ws.out),
    ]);
    let ckpt = ws.out.join("modelnet_pointnet_max_w2v.ckpt");
    assert!(ckpt.exists());
    let loss_log = std::fs::read_to_string(ws.out.join("modelnet_pointnet_max_w2v.loss.csv")).unwrap();
    assert!(loss_log.starts_with("# config: "));
    assert!(loss_log.contains("epoch,mean_loss,train_accuracy"));
    assert_eq!(loss_log.lines().count(), 2 + 2);

    run_ok(&[
        "eval-seen", "--cache", s(&ws.cache), "--checkpoint", s(&ckpt), "--vectors-w2v",
        s(&ws.w2v), "--out", s(&ws.out),
    ]);
    assert!(ws.out.join("modelnet_pointnet_max_w2v.seen.json").exists());

    run_ok(&[
        "eval-zsl", "--cache", s(&ws.cache), "--checkpoint", s(&ckpt), "--vectors-w2v",
        s(&ws.w2v), "--T", "30", "--out", s(&ws.out),
    ]);
    let predictions_path = ws.out.join("modelnet_pointnet_max_w2v.predictions.csv");
    let first = std::fs::read_to_string(&predictions_path).unwrap();
    assert!(first.lines().nth(1).unwrap().starts_with("sample,true_class,predicted_class"));
    // 10 unseen classes, one test file each at this fixture size.
    assert_eq!(first.lines().count(), 2 + 10);

    // Byte-identical on rerun.
    run_ok(&[
        "eval-zsl", "--cache", s(&ws.cache), "--checkpoint", s(&ckpt), "--vectors-w2v",
        s(&ws.w2v), "--T", "30", "--out", s(&ws.out),
    ]);
    let second = std::fs::read_to_string(&predictions_path).unwrap();
    assert_eq!(first, second);

    run_ok(&[
        "sweep-t", "--cache", s(&ws.cache), "--checkpoint", s(&ckpt), "--vectors-w2v",
        s(&ws.w2v), "--T", "1,5,30", "--out", s(&ws.out),
    ]);
    let sweep = std::fs::read_to_string(ws.out.join("modelnet_pointnet_max_w2v.sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 2 + 3);

    run_ok(&["report", "--out", s(&ws.out)]);
    let table = std::fs::read_to_string(ws.out.join("report.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), "protocol,method,basic,w2v,glove,conc");
    let row = lines.next().unwrap();
    assert!(row.starts_with("modelnet,pointnet+max,,"), "row was {row}");
    assert!(table.contains("modelnet,random,10.0,10.0,10.0,10.0"));
    assert!(ws.out.join("modelnet_pointnet_max.csv").exists());
}

#[test]
fn usage_errors_exit_2() {
    let bad = [
        vec!["train", "--pooling", "avg"],
        vec!["transmogrify"],
        vec!["train", "--epochs", "soon"],
        vec![],
    ];
    for args in bad {
        let owned: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        assert_eq!(cli::run(&owned), cli::EXIT_USAGE, "args {args:?}");
    }
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    // Nonexistent cache file.
    let args = [
        "train".to_string(),
        "--cache".into(),
        dir.path().join("missing.pcz").to_str().unwrap().into(),
        "--out".into(),
        dir.path().join("out").to_str().unwrap().into(),
        "--semantics".into(),
        "basic".into(),
    ];
    assert_eq!(cli::run(&args), cli::EXIT_DATA);

    // Corrupt cache bytes.
    let cache = dir.path().join("bad.pcz");
    std::fs::write(&cache, b"not a cache").unwrap();
    let args = [
        "train".to_string(),
        "--cache".into(),
        cache.to_str().unwrap().into(),
        "--out".into(),
        dir.path().join("out").to_str().unwrap().into(),
        "--semantics".into(),
        "basic".into(),
    ];
    assert_eq!(cli::run(&args), cli::EXIT_DATA);
}

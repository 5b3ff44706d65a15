use std::path::Path;
use std::process::{Command, Output};

use exo2ego_core::data::{Manifest, Split};

fn exo2ego(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exo2ego")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn toygen_writes_twenty_sequences_and_a_thousand_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let o = exo2ego(&[
        "toygen", "--scenes", "4", "--seqs", "5", "--len", "50", "--size", "32", "--seed", "7", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = Manifest::load(&out.join("manifest.json")).unwrap();
    assert_eq!(m.sequences.len(), 20);
    let pairs: usize = Split::ALL.iter().map(|&s| m.iterate_aligned_pairs(s, m.exo_kind).count()).sum();
    assert_eq!(pairs, 1000);
    assert!(out.join("config.toml").exists());
    let log = std::fs::read_to_string(out.join("log.jsonl")).unwrap();
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["event"].is_string());
    }
    assert!(log.contains("\"aligned_pairs\":1000"));
}

#[test]
fn toygen_is_reproducible_from_the_config_echo() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = exo2ego(&["toygen", "--scenes", "1", "--seqs", "3", "--len", "4", "--size", "24", "--seed", "3", "--out", a.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let echo = a.join("config.toml");
    let o = exo2ego(&["toygen", "--config", echo.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let frame = |root: &Path| std::fs::read(root.join("s00-q00/ego/000003.png")).unwrap();
    assert_eq!(frame(&a), frame(&b));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let o = exo2ego(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).to_lowercase().contains("usage"));
}

#[test]
fn bad_flag_lists_usage() {
    let o = exo2ego(&["toygen", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--scenes") || stderr(&o).to_lowercase().contains("usage"));
}

#[test]
fn wrong_gallery_magic_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.eemb");
    std::fs::write(&bad, b"NOPE\x01\x00\x00\x00garbage").unwrap();
    let out = dir.path().join("o");
    let o = exo2ego(&[
        "eval", "retr", "--queries", bad.to_str().unwrap(), "--gallery", bad.to_str().unwrap(), "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("SchemaError"), "{}", stderr(&o));
}

#[test]
fn missing_manifest_names_the_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = exo2ego(&["flow", "--manifest", "/nonexistent/manifest.json", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("MissingFile"), "{}", stderr(&o));
}

#[test]
fn plot_writes_png_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("ft.csv");
    let b = dir.path().join("scratch.csv");
    std::fs::write(&a, "k,cmc\n1,0.3\n2,0.6\n3,1\n").unwrap();
    std::fs::write(&b, "k,cmc\n1,0.2\n2,0.5\n3,1\n").unwrap();
    let out = dir.path().join("o");
    let o = exo2ego(&["plot", "--csv", a.to_str().unwrap(), b.to_str().unwrap(), "--name", "cmc", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(out.join("cmc.csv")).unwrap(), "x,ft,scratch\n1,0.3,0.2\n2,0.6,0.5\n3,1,1\n");
    assert!(image::open(out.join("cmc.png")).is_ok());
}

const SMALL_RUN: &str = r#"
experiment = "pipeline"
seed = 3

[retrieval]
epochs = 1
[retrieval.model]
input_size = 16
widths = [8, 8]
embedding_dim = 16

[synthesis]
epochs = 1
max_pairs = 4
[synthesis.generator]
image_size = 16
base = 4
max_width = 8
depth = 3
[synthesis.discriminator]
base = 4
layers = 1
"#;

#[test]
fn pipeline_from_toy_data_to_reports() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    std::fs::write(p("run.toml"), SMALL_RUN).unwrap();
    let ok = |args: &[&str]| {
        let o = exo2ego(args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    };
    let (cfg, manifest) = (p("run.toml"), p("data/manifest.json"));
    ok(&["toygen", "--scenes", "2", "--seqs", "3", "--len", "6", "--size", "32", "--out", &p("data")]);
    ok(&["--config", &cfg, "retr", "train", "--manifest", &manifest, "--out", &p("retr")]);
    let ckpt = p("retr/checkpoints/last.eckp");
    for view in ["ego", "exo"] {
        ok(&["retr", "gallery", "--checkpoint", &ckpt, "--manifest", &manifest, "--view", view, "--out", &p("gal")]);
    }
    ok(&["eval", "retr", "--queries", &p("gal/test_ego.eemb"), "--gallery", &p("gal/test_exo.eemb"), "--out", &p("ev")]);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p("ev/eval_retr.json")).unwrap()).unwrap();
    let auc = summary["auc"].as_f64().unwrap();
    assert!(auc > 0.0 && auc <= 1.0);
    assert_eq!(summary["gallery_size"], 12);

    ok(&["--config", &cfg, "synth", "train", "--manifest", &manifest, "--out", &p("syn")]);
    let synth = p("syn/checkpoints/last.eckp");
    ok(&["synth", "generate", "--checkpoint", &synth, "--manifest", &manifest, "--out", &p("gen")]);
    ok(&["eval", "synth", "--manifest", &manifest, "--generated", &p("gen/generated"), "--out", &p("es")]);
    let es: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p("es/eval_synth.json")).unwrap()).unwrap();
    assert_eq!(es["pairs"], 12);
    assert!(es["ssim"].as_f64().unwrap() <= 1.0);
    ok(&[
        "probe", "synth-retrieval", "--synth-checkpoint", &synth, "--retr-checkpoint", &ckpt, "--manifest", &manifest,
        "--out", &p("sr"),
    ]);
    assert!(Path::new(&p("sr/cmc_vs_exo.csv")).exists());
    assert!(Path::new(&p("sr/cmc_vs_ego.csv")).exists());
    ok(&["probe", "invariance", "--checkpoint", &ckpt, "--manifest", &manifest, "--random-labels", "1", "--out", &p("pr")]);
    assert!(std::fs::read_to_string(p("pr/probe.csv")).unwrap().starts_with("classifier,ego,exo,both\n"));
}

#[test]
fn untrained_checkpoint_is_rejected_by_probe() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    let manifest = p("data/manifest.json");
    let o = exo2ego(&["toygen", "--scenes", "1", "--seqs", "3", "--len", "4", "--size", "24", "--out", &p("data")]);
    assert!(o.status.success(), "{}", stderr(&o));
    let model = exo2ego_core::retrieval::EmbeddingModel::new(exo2ego_core::retrieval::ModelConfig {
        input_size: 16,
        widths: vec![4],
        embedding_dim: 4,
        ..Default::default()
    })
    .unwrap();
    model.to_checkpoint().save(Path::new(&p("fresh.eckp"))).unwrap();
    let o = exo2ego(&["probe", "invariance", "--checkpoint", &p("fresh.eckp"), "--manifest", &manifest, "--out", &p("pr")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("UntrainedModel"), "{}", stderr(&o));
}

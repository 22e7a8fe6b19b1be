use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use distill_core::config::Config;
use distill_core::data::idx::{encode_images, encode_labels, IdxImages};
use distill_core::Rng;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_distill"))
}

fn write_split(dir: &Path, prefix: &str, per_class: usize, rng: &mut Rng) {
    let count = per_class * 10;
    let labels: Vec<u8> = (0..count).map(|i| (i % 10) as u8).collect();
    let pixels: Vec<u8> = (0..count * 28 * 28).map(|_| (rng.uniform() * 255.0) as u8).collect();
    let images = IdxImages { count, rows: 28, cols: 28, pixels };
    std::fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), encode_images(&images)).unwrap();
    std::fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), encode_labels(&labels)).unwrap();
}

/// A tiny random 10-class digit-shaped dataset and a matching fast config.
fn fixture() -> (tempfile::TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    std::fs::create_dir(&data).unwrap();
    let mut rng = Rng::new(3);
    write_split(&data, "train", 12, &mut rng);
    write_split(&data, "t10k", 3, &mut rng);

    let mut cfg = Config::default();
    cfg.data.dir = data;
    cfg.model.net_width = 4;
    cfg.distill.iterations = 3;
    cfg.distill.real_batch = 4;
    cfg.distill.trace_every = 2;
    cfg.distill.trace_thetas = 1;
    cfg.retrain.epochs = 2;
    cfg.retrain.palette = "none".into();
    cfg.score.theta_samples = 2;
    let path = tmp.path().join("run.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    (tmp, path)
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn distill_eval_score_and_export() {
    let (tmp, cfg) = fixture();
    let syn = tmp.path().join("s.dfrg");
    run(bin().args(["distill", "--config"]).arg(&cfg).arg("--out").arg(&syn));
    for suffix in [".loss.csv", ".trace.csv", ".manifest.json"] {
        let p = PathBuf::from(format!("{}{suffix}", syn.display()));
        assert!(p.exists(), "missing {}", p.display());
    }
    assert_eq!(header(&PathBuf::from(format!("{}.loss.csv", syn.display()))), "iteration,loss");
    assert_eq!(header(&PathBuf::from(format!("{}.trace.csv", syn.display()))), "iteration,score");
    let manifest = std::fs::read_to_string(format!("{}.manifest.json", syn.display())).unwrap();
    assert!(manifest.contains("config_hash") && manifest.contains("s.dfrg"));

    let eval_csv = tmp.path().join("eval.csv");
    let out = run(bin()
        .args(["eval", "--seeds", "2", "--syn"])
        .arg(&syn)
        .arg("--config")
        .arg(&cfg)
        .arg("--csv")
        .arg(&eval_csv));
    assert!(String::from_utf8_lossy(&out.stdout).contains("synthetic:"));
    assert_eq!(header(&eval_csv), "seed_index,seed,accuracy");
    assert_eq!(std::fs::read_to_string(&eval_csv).unwrap().lines().count(), 3);

    let score_csv = tmp.path().join("score.csv");
    run(bin().args(["score", "--syn"]).arg(&syn).arg("--config").arg(&cfg).arg("--csv").arg(&score_csv));
    assert!(score_csv.exists());

    let grid = tmp.path().join("grid.pgm");
    run(bin().args(["export-grid", "--syn"]).arg(&syn).arg("--out").arg(&grid));
    assert!(std::fs::read(&grid).unwrap().starts_with(b"P5"));
}

#[test]
fn audit_writes_every_table() {
    let (tmp, cfg) = fixture();
    let out_dir = tmp.path().join("audit");
    run(bin()
        .args(["audit", "--dataset", "mnist", "--per-class", "4", "--epochs", "1", "--sizes", "1,10", "--theta-samples", "1"])
        .arg("--config")
        .arg(&cfg)
        .arg("--out-dir")
        .arg(&out_dir));
    assert_eq!(header(&out_dir.join("score_series.csv")), "n,metric,score");
    assert_eq!(header(&out_dir.join("attention.csv")), "class,row,col,count");
    assert_eq!(
        header(&out_dir.join("symmetry.csv")),
        "class,images,left_fraction,asymmetry,pixel_symmetry,flip_feature_distance"
    );
    assert!(out_dir.join("attention_class0.pgm").exists());
    assert!(out_dir.join("manifest.json").exists());
}

#[test]
fn errors_are_one_line_with_a_kind_and_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.dfrg");
    std::fs::write(&bad, b"not a container").unwrap();
    let out = bin().args(["export-grid", "--syn"]).arg(&bad).arg("--out").arg(tmp.path().join("g.pgm")).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    let line = err.lines().last().unwrap();
    assert!(line.starts_with("error kind=format message=\""), "{line}");

    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "seed = 1\nnonsense = true\n").unwrap();
    let out = bin().args(["distill", "--config"]).arg(&cfg).arg("--out").arg(tmp.path().join("x")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = bin().args(["eval", "--syn"]).arg(tmp.path().join("missing.dfrg")).arg("--config").arg(&cfg).output().unwrap();
    assert_ne!(out.status.code(), Some(0));
}

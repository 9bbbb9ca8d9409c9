//! gen-data, train, evaluate and report on a tiny grid through the harness.

use std::fs;
use std::path::Path;

use leno::harness::study::read_loss_csv;
use leno::harness::{run, Command, Config};

fn base(data: &Path) -> Config {
    let mut cfg = Config::parse(
        "data.dim = 2\n\
         data.cells = 8\n\
         data.length = 20\n\
         data.regimes = 0.708, 0.85\n\
         data.train_per_regime = 2\n\
         data.test_per_regime = 1\n\
         data.seed = 3\n\
         model.width = 4\n\
         model.depth = 1\n\
         model.modes = 4, 4\n\
         train.epochs = 2\n\
         train.batch_size = 4\n\
         train.lr = 0.003\n",
    )
    .unwrap();
    if data.exists() {
        cfg.set("data.dir", data.to_str().unwrap()).unwrap();
    }
    cfg
}

#[test]
fn end_to_end_on_a_tiny_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let gen = run(Command::GenData, &base(&data), &data).unwrap();
    assert!(gen.pass);
    let manifest = fs::read(data.join("manifest.csv")).unwrap();
    assert!(manifest.starts_with(b"# config_hash="));

    // Regenerating with the same config reproduces every byte.
    let again = tmp.path().join("again");
    run(Command::GenData, &base(&data), &again).unwrap();
    let mut files: Vec<_> = fs::read_dir(&data).unwrap().map(|e| e.unwrap().file_name()).collect();
    files.sort();
    for f in &files {
        if f != "manifest.csv" {
            assert_eq!(fs::read(data.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f:?}");
        }
    }

    let cfg = base(&data);
    let mut model_paths = Vec::new();
    for basis in ["neumann-cosine", "fourier-padded"] {
        let mut c = cfg.clone();
        c.set("model.basis", basis).unwrap();
        let dir = tmp.path().join(basis);
        let res = run(Command::Train, &c, &dir).unwrap();
        assert!(res.pass);
        let curve = read_loss_csv(&dir.join("loss.csv")).unwrap();
        assert_eq!(curve.rows.len(), 2);
        assert!(curve.rows.iter().all(|r| r.train.u.is_finite() && r.test.v.is_finite()));
        model_paths.push(dir.join("model.nopm"));
    }

    let mut eval = cfg.clone();
    eval.set("eval.models", "a,b").unwrap();
    eval.set("eval.a", model_paths[0].to_str().unwrap()).unwrap();
    eval.set("eval.b", model_paths[1].to_str().unwrap()).unwrap();
    eval.set("eval.ordering", "true").unwrap();
    let eval_dir = tmp.path().join("eval");
    run(Command::Evaluate, &eval, &eval_dir).unwrap();
    let metrics = fs::read_to_string(eval_dir.join("rollout_metrics.csv")).unwrap();
    assert_eq!(metrics.lines().filter(|l| !l.starts_with('#')).count(), 1 + 2 * 2 * 2);
    assert!(eval_dir.join("ordering.csv").exists());

    // Injecting the truth as the prediction gives zero error everywhere.
    eval.set("eval.inject_truth", "true").unwrap();
    let truth_dir = tmp.path().join("truth");
    run(Command::Evaluate, &eval, &truth_dir).unwrap();
    let text = fs::read_to_string(truth_dir.join("rollout_metrics.csv")).unwrap();
    for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let mean: f64 = line.split(',').nth(3).unwrap().parse().unwrap();
        assert_eq!(mean, 0.0, "{line}");
    }

    let mut rep = Config::default();
    rep.set("report.inputs", eval_dir.to_str().unwrap()).unwrap();
    let rep_dir = tmp.path().join("report");
    run(Command::Report, &rep, &rep_dir).unwrap();
    let report = fs::read_to_string(rep_dir.join("report.txt")).unwrap();
    assert!(report.contains("rollout_metrics.csv"));
}

#[test]
fn checkpoint_carries_the_config_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let mut cfg = base(&data);
    cfg.set("data.regimes", "0.785").unwrap();
    cfg.set("data.train_per_regime", "1").unwrap();
    run(Command::GenData, &cfg, &data).unwrap();
    let mut cfg = base(&data);
    cfg.set("data.regimes", "0.785").unwrap();
    cfg.set("data.train_per_regime", "1").unwrap();
    cfg.set("train.epochs", "1").unwrap();
    let dir = tmp.path().join("m");
    run(Command::Train, &cfg, &dir).unwrap();
    let file = fs::File::open(dir.join("model.nopm")).unwrap();
    let (_, tag): (leno::operator::OperatorModel, String) = leno::operator::read_model_tagged(file).unwrap();
    assert_eq!(tag, format!("config_hash={}", cfg.hash()));
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use parttransfer::dataset::Dataset;
use parttransfer::inference::Metrics;
use parttransfer::neural::io::ModelFile;
use parttransfer::neural::{train_full, TrainConfig};
use parttransfer::Trajectory;
use tempfile::TempDir;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_parttransfer"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = bin(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const FAST: &str = r#"{"dae_epochs":2,"pretrain_epochs":3,"finetune_epochs":3,"eval_every":1,"hidden":[8,8,6,6,6,4]}"#;

struct Fixture {
    dir: TempDir,
    data: PathBuf,
    config: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let data = dir.path().join("data.json");
        let config = dir.path().join("fast.json");
        std::fs::write(&config, FAST).unwrap();
        ok(&[
            "synth",
            "-o",
            p(&data),
            "--tasks-per-family",
            "2",
            "--seed",
            "3",
        ]);
        Fixture { dir, data, config }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, name: &str, extra: &[&str]) -> PathBuf {
        let out = self.path(name);
        let mut args = vec![
            "train",
            "-d",
            p(&self.data),
            "-o",
            p(&out),
            "--config",
            p(&self.config),
        ];
        args.extend_from_slice(extra);
        ok(&args);
        out
    }
}

#[test]
fn train_is_deterministic_and_writes_log() {
    let f = Fixture::new();
    let a = f.train("a.json", &["--seed", "7"]);
    let b = f.train("b.json", &["--seed", "7"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let c = f.train("c.json", &["--seed", "8"]);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
    let log: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(f.path("a.log.json")).unwrap()).unwrap();
    assert_eq!(log["finetune"].as_array().unwrap().len(), 3);
}

#[test]
fn zero_fine_tune_epochs_gives_pretrained_weights() {
    let f = Fixture::new();
    let out = f.train("m.json", &["--seed", "4", "--fine-tune-epochs", "0"]);
    let cfg: TrainConfig = serde_json::from_str(FAST).unwrap();
    let cfg = TrainConfig { seed: 4, ..cfg };
    let ds = Dataset::load(&f.data).unwrap();
    let trained = train_full(&ds, &cfg).unwrap();
    let expected = ModelFile::new(&trained.pretrained, cfg.metric, None)
        .to_json()
        .unwrap();
    assert_eq!(std::fs::read_to_string(out).unwrap(), expected);
}

#[test]
fn exit_codes() {
    let f = Fixture::new();
    let missing = f.path("nope.json");
    let out = bin(&["train", "-d", p(&missing), "-o", p(&f.path("m.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));

    let bad_cfg = f.path("bad.json");
    std::fs::write(&bad_cfg, r#"{"minibatch":0}"#).unwrap();
    let out = bin(&[
        "train",
        "-d",
        p(&f.data),
        "-o",
        p(&f.path("m.json")),
        "--config",
        p(&bad_cfg),
    ]);
    assert_eq!(out.status.code(), Some(1));

    let a = f.train("a.json", &["--seed", "1"]);
    let b = f.train("b.json", &["--seed", "2"]);
    let lib = f.path("lib.json");
    ok(&["embed", "-m", p(&a), "-d", p(&f.data), "-o", p(&lib)]);
    let out = bin(&[
        "infer",
        "-m",
        p(&b),
        "-d",
        p(&f.data),
        "-l",
        p(&lib),
        "--task",
        "pull-down-00",
    ]);
    assert_eq!(out.status.code(), Some(3));
    ok(&[
        "infer",
        "-m",
        p(&a),
        "-d",
        p(&f.data),
        "-l",
        p(&lib),
        "--task",
        "pull-down-00",
    ]);
}

#[test]
fn infer_prints_a_library_trajectory() {
    let f = Fixture::new();
    let model = f.train("m.json", &["--fold", "0", "--folds", "2"]);
    let stdout = ok(&[
        "infer",
        "-m",
        p(&model),
        "-d",
        p(&f.data),
        "--task",
        "press-01",
    ]);
    let traj = Trajectory::from_json(stdout.trim()).unwrap();
    assert_eq!(traj.to_canonical_json(), stdout.trim());

    let file = ModelFile::load(&model).unwrap();
    let ds = Dataset::load(&f.data).unwrap();
    let (train, _) = parttransfer_cli::commands::split_tasks(&ds, file.holdout.as_ref()).unwrap();
    assert!(train
        .tasks
        .iter()
        .flat_map(|t| &t.demos)
        .any(|d| d.id() == traj.id()));
}

#[test]
fn singleton_library_is_always_picked() {
    let f = Fixture::new();
    let mut ds = Dataset::load(&f.data).unwrap();
    for (i, t) in ds.tasks.iter_mut().enumerate() {
        if i > 0 {
            t.demos.clear();
        } else {
            t.demos.truncate(1);
        }
    }
    let only = ds.tasks[0].demos[0].clone();
    let single = f.path("single.json");
    ds.save(&single).unwrap();
    let model = f.train("m.json", &[]);
    for task in ["pull-down-00", "press-01", "push-in-00"] {
        let stdout = ok(&["infer", "-m", p(&model), "-d", p(&single), "--task", task]);
        assert_eq!(stdout.trim(), only.to_canonical_json());
    }
}

#[test]
fn eval_outputs_metrics_and_sweep() {
    let f = Fixture::new();
    let model = f.train("m.json", &["--fold", "1", "--folds", "2"]);
    let m: Metrics =
        serde_json::from_str(&ok(&["eval", "-m", p(&model), "-d", p(&f.data)])).unwrap();
    assert!((0.0..=1.0).contains(&m.accuracy));
    assert_eq!(m.threshold, 10.0);
    assert!(!m.tasks.is_empty());

    let csv = ok(&[
        "eval",
        "-m",
        p(&model),
        "-d",
        p(&f.data),
        "--sweep",
        "0:30:5",
    ]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "threshold,accuracy");
    assert_eq!(lines.len(), 8);
    let accs: Vec<f64> = lines[1..]
        .iter()
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(accs.windows(2).all(|w| w[0] <= w[1]));

    let chance: Metrics = serde_json::from_str(&ok(&[
        "eval",
        "--chance",
        "-d",
        p(&f.data),
        "--fold",
        "0",
        "--folds",
        "2",
        "--chance-seed",
        "5",
    ]))
    .unwrap();
    let again: Metrics = serde_json::from_str(&ok(&[
        "eval",
        "--chance",
        "-d",
        p(&f.data),
        "--fold",
        "0",
        "--folds",
        "2",
        "--chance-seed",
        "5",
    ]))
    .unwrap();
    assert_eq!(chance, again);
    assert_eq!(bin(&["eval", "-d", p(&f.data)]).status.code(), Some(1));
}

#[test]
fn dtw_and_voxelize() {
    let f = Fixture::new();
    let a = f.path("a.json");
    let b = f.path("b.json");
    std::fs::write(
        &a,
        r#"{"id":"a","waypoints":[{"g":"open","t":[0,0,0],"r":[0,0,0,1]}]}"#,
    )
    .unwrap();
    std::fs::write(
        &b,
        r#"{"id":"b","waypoints":[{"g":"closed","t":[0.0075,0,0],"r":[0,0,0,1]}]}"#,
    )
    .unwrap();
    let v: serde_json::Value = serde_json::from_str(&ok(&["dtw", p(&a), p(&b)])).unwrap();
    assert!((v["distance"].as_f64().unwrap() - 1.94089).abs() < 1e-5);
    assert_eq!(v["path_length"], 1);
    let v: serde_json::Value =
        serde_json::from_str(&ok(&["dtw", p(&a), p(&b), "--beta", "0.5"])).unwrap();
    assert!((v["distance"].as_f64().unwrap() - 1.5 * 0.97045).abs() < 1e-5);

    let cloud = f.path("cloud.json");
    std::fs::write(
        &cloud,
        r#"{"points":[[0.001,0.001,0.001,255,0,0],[-0.049,0.0,0.0,0,0,0]]}"#,
    )
    .unwrap();
    let bits: Vec<u8> = serde_json::from_str(&ok(&["voxelize", p(&cloud)])).unwrap();
    assert_eq!(bits.len(), 2000);
    assert_eq!(bits.iter().map(|&b| b as usize).sum::<usize>(), 4);
    assert!(bits.iter().all(|&b| b <= 1));
}

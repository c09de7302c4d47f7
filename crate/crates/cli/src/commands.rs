//! Subcommand definitions and their implementations.

use std::collections::BTreeMap;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use log::info;
use parttransfer::dataset::{complement, make_folds, Dataset, Task};
use parttransfer::dtw::{dtw_mt, MetricParams};
use parttransfer::featurize::voxelize;
use parttransfer::inference::{
    chance_baseline, embed_library, evaluate, infer, EmbeddedLibrary, Metrics,
};
use parttransfer::neural::io::{fingerprint, Holdout, ModelFile};
use parttransfer::neural::{train_full, EmbeddingModel, TrainConfig};
use parttransfer::synthetic::{generate, SyntheticConfig};
use parttransfer::{PointCloudPart, Trajectory};
use serde_json::json;

use crate::service::{self, AppState, DemoStore, LoadedModel};
use crate::{parse_input, read_input, CliError, Result};

/// Number of folds used when `--fold` is given without `--folds`.
pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Parser)]
#[command(
    name = "parttransfer",
    version,
    about = "Part-based manipulation trajectory transfer"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an embedding model on a dataset.
    Train(TrainArgs),
    /// Embed the trajectory library once for fast retrieval.
    Embed(EmbedArgs),
    /// Retrieve a trajectory for a part and an instruction.
    Infer(InferArgs),
    /// Score retrieval on held-out tasks against expert demonstrations.
    Eval(EvalArgs),
    /// DTW-MT distance between two trajectory files.
    Dtw(DtwArgs),
    /// Occupancy grids of a part point cloud.
    Voxelize(VoxelizeArgs),
    /// Run the HTTP demonstration service.
    Serve(ServeArgs),
    /// Write a synthetic dataset of five trajectory families.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct FoldArgs {
    /// Hold out this fold (0-based) of a manual-grouped split.
    #[arg(long)]
    pub fold: Option<usize>,
    /// Number of folds.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Seed of the fold assignment.
    #[arg(long)]
    pub fold_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(short, long)]
    pub dataset: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// JSON training configuration; missing fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub fine_tune_epochs: Option<usize>,
    /// Trust every demonstration instead of selecting canonical demos.
    #[arg(long)]
    pub no_noise_handling: bool,
    /// Training log path; defaults to the model path with `.log.json`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub split: FoldArgs,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(short, long)]
    pub model: PathBuf,
    #[arg(short, long)]
    pub dataset: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Embed every demo, including those of the model's held-out tasks.
    #[arg(long)]
    pub all: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(short, long)]
    pub model: PathBuf,
    /// Dataset whose demonstrations form the library.
    #[arg(short, long)]
    pub dataset: PathBuf,
    /// Pre-embedded library; embedded on the fly when absent.
    #[arg(short, long)]
    pub library: Option<PathBuf>,
    /// Take part and instruction from this dataset task.
    #[arg(long, conflicts_with_all = ["part", "instruction"])]
    pub task: Option<String>,
    /// Part point cloud in its part frame.
    #[arg(long, requires = "instruction")]
    pub part: Option<PathBuf>,
    #[arg(long, requires = "part")]
    pub instruction: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Required unless `--chance` is given.
    #[arg(short, long)]
    pub model: Option<PathBuf>,
    #[arg(short, long)]
    pub dataset: PathBuf,
    #[arg(short, long)]
    pub library: Option<PathBuf>,
    #[arg(long, default_value_t = parttransfer::inference::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Emit a `threshold,accuracy` CSV for thresholds `start:end:step`.
    #[arg(long)]
    pub sweep: Option<String>,
    /// Score uniformly random retrieval instead of the model.
    #[arg(long)]
    pub chance: bool,
    #[arg(long, default_value_t = 0)]
    pub chance_seed: u64,
    #[command(flatten)]
    pub split: FoldArgs,
}

#[derive(Debug, Args)]
pub struct DtwArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    #[arg(long)]
    pub alpha_t: Option<f64>,
    #[arg(long)]
    pub alpha_r: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct VoxelizeArgs {
    pub cloud: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(short, long)]
    pub dataset: PathBuf,
    #[arg(short, long)]
    pub model: Option<PathBuf>,
    /// Append-only store of submitted demonstrations (JSON lines).
    #[arg(long, default_value = "demos.jsonl")]
    pub demos: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(short, long, default_value_t = 8080)]
    pub port: u16,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub tasks_per_family: usize,
    #[arg(long, default_value_t = 3)]
    pub demos_per_task: usize,
    /// Share of demos replaced by random trajectories.
    #[arg(long, default_value_t = 0.0)]
    pub adversarial: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Runs one subcommand, writing its result to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a, out),
        Command::Embed(a) => cmd_embed(&a, out),
        Command::Infer(a) => cmd_infer(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Dtw(a) => cmd_dtw(&a, out),
        Command::Voxelize(a) => cmd_voxelize(&a, out),
        Command::Serve(a) => cmd_serve(&a),
        Command::Synth(a) => cmd_synth(&a, out),
    }
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let ds: Dataset = parse_input(path)?;
    ds.validate()?;
    Ok(ds)
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    let text = read_input(path)?;
    ModelFile::from_json(&text).map_err(|e| CliError::BadInput {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn resolve_holdout(split: &FoldArgs, recorded: Option<&Holdout>) -> Result<Option<Holdout>> {
    let Some(fold) = split.fold.or(recorded.map(|h| h.fold)) else {
        if split.folds.is_some() || split.fold_seed.is_some() {
            return Err(CliError::Usage(
                "--folds and --fold-seed need --fold".into(),
            ));
        }
        return Ok(None);
    };
    let folds = split
        .folds
        .or(recorded.map(|h| h.folds))
        .unwrap_or(DEFAULT_FOLDS);
    let fold_seed = split
        .fold_seed
        .or(recorded.map(|h| h.fold_seed))
        .unwrap_or(0);
    if fold >= folds {
        return Err(CliError::Usage(format!(
            "--fold {fold} out of range for {folds} folds"
        )));
    }
    Ok(Some(Holdout {
        folds,
        fold,
        fold_seed,
    }))
}

/// Training and held-out tasks; without a holdout every task is both.
pub fn split_tasks(ds: &Dataset, holdout: Option<&Holdout>) -> Result<(Dataset, Dataset)> {
    match holdout {
        None => Ok((ds.clone(), ds.clone())),
        Some(h) => {
            let folds = make_folds(&ds.tasks, h.folds, h.fold_seed)?;
            Ok((
                ds.subset(&complement(&folds, h.fold)),
                ds.subset(&folds[h.fold]),
            ))
        }
    }
}

pub fn demo_pool(tasks: &[Task]) -> Vec<Trajectory> {
    tasks.iter().flat_map(|t| t.demos.iter().cloned()).collect()
}

fn write_json(out: &mut dyn Write, value: &impl serde::Serialize) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn default_log_path(model: &Path) -> PathBuf {
    let stem = model
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    model.with_file_name(format!("{stem}.log.json"))
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => parse_input(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.fine_tune_epochs {
        cfg.finetune_epochs = e;
    }
    if a.no_noise_handling {
        cfg.noise_handling = false;
    }
    cfg.validate()?;
    let holdout = resolve_holdout(&a.split, None)?;
    let (train, test) = split_tasks(&ds, holdout.as_ref())?;
    info!(
        "training on {} tasks ({} held out), seed {}",
        train.tasks.len(),
        if holdout.is_some() {
            test.tasks.len()
        } else {
            0
        },
        cfg.seed
    );
    let trained = train_full(&train, &cfg)?;
    let file = ModelFile::new(&trained.model, cfg.metric, holdout);
    file.save(&a.output)?;
    let log_path = a.log.clone().unwrap_or_else(|| default_log_path(&a.output));
    std::fs::write(&log_path, serde_json::to_string_pretty(&trained.log)?)?;
    write_json(
        out,
        &json!({
            "model": a.output,
            "log": log_path,
            "fingerprint": fingerprint(&trained.model),
            "selected_epoch": trained.log.selected_epoch,
            "training_tasks": train.tasks.len(),
        }),
    )
}

fn library_for(
    model: &EmbeddingModel,
    lib_path: Option<&Path>,
    pool: &[Trajectory],
) -> Result<EmbeddedLibrary> {
    match lib_path {
        Some(p) => parse_input(p),
        None => Ok(embed_library(model, pool)?),
    }
}

pub fn cmd_embed(a: &EmbedArgs, out: &mut dyn Write) -> Result<()> {
    let file = load_model(&a.model)?;
    let ds = load_dataset(&a.dataset)?;
    let holdout = if a.all { None } else { file.holdout.clone() };
    let (train, _) = split_tasks(&ds, holdout.as_ref())?;
    let model = file.into_model()?;
    let lib = embed_library(&model, &demo_pool(&train.tasks))?;
    std::fs::write(&a.output, serde_json::to_string(&lib)?)?;
    write_json(
        out,
        &json!({ "library": a.output, "rows": lib.len(), "fingerprint": lib.fingerprint }),
    )
}

pub fn cmd_infer(a: &InferArgs, out: &mut dyn Write) -> Result<()> {
    let file = load_model(&a.model)?;
    let ds = load_dataset(&a.dataset)?;
    let (train, _) = split_tasks(&ds, file.holdout.as_ref())?;
    let model = file.into_model()?;
    let lib = library_for(&model, a.library.as_deref(), &demo_pool(&train.tasks))?;
    let (part, instruction) = match (&a.task, &a.part, &a.instruction) {
        (Some(id), _, _) => {
            let t = ds
                .task(id)
                .ok_or_else(|| CliError::Usage(format!("unknown task {id:?}")))?;
            (t.part.clone(), t.instruction.clone())
        }
        (None, Some(p), Some(i)) => (parse_input::<PointCloudPart>(p)?, i.clone()),
        _ => {
            return Err(CliError::Usage(
                "give --task or both --part and --instruction".into(),
            ))
        }
    };
    let id = infer(&model, &lib, &part, &instruction)?;
    let all = demo_pool(&ds.tasks);
    let traj = all.iter().find(|t| t.id() == id).ok_or_else(|| {
        CliError::Usage(format!("library trajectory {id:?} is not in the dataset"))
    })?;
    writeln!(out, "{}", traj.to_canonical_json())?;
    Ok(())
}

/// Thresholds `start, start + step, ...` up to and including `end`.
pub fn parse_sweep(spec: &str) -> Result<Vec<f64>> {
    let bad = || CliError::Usage(format!("--sweep expects start:end:step, got {spec:?}"));
    let parts: Vec<f64> = spec
        .split(':')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad())?;
    let [start, end, step] = parts[..] else {
        return Err(bad());
    };
    if !(step > 0.0 && start.is_finite() && end.is_finite() && end >= start) {
        return Err(bad());
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| start + k as f64 * step).collect())
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let file = match (&a.model, a.chance) {
        (Some(p), _) => Some(load_model(p)?),
        (None, true) => None,
        (None, false) => {
            return Err(CliError::Usage(
                "eval needs --model unless --chance is given".into(),
            ))
        }
    };
    let holdout = resolve_holdout(&a.split, file.as_ref().and_then(|f| f.holdout.as_ref()))?;
    let (train, test) = split_tasks(&ds, holdout.as_ref())?;
    let pool = demo_pool(&train.tasks);
    let metric = file.as_ref().map(|f| f.metric).unwrap_or_default();
    let metrics: Metrics = if a.chance {
        chance_baseline(&pool, &test.tasks, &metric, a.threshold, a.chance_seed)?
    } else {
        let model = file.expect("checked above").into_model()?;
        let lib = library_for(&model, a.library.as_deref(), &pool)?;
        evaluate(&model, &lib, &pool, &test.tasks, &metric, a.threshold)?
    };
    match &a.sweep {
        Some(spec) => {
            writeln!(out, "threshold,accuracy")?;
            for (t, acc) in metrics.curve(&parse_sweep(spec)?) {
                writeln!(out, "{t},{acc}")?;
            }
            Ok(())
        }
        None => write_json(out, &metrics),
    }
}

pub fn cmd_dtw(a: &DtwArgs, out: &mut dyn Write) -> Result<()> {
    let d = MetricParams::default();
    let params = MetricParams::new(
        a.alpha_t.unwrap_or(d.alpha_t),
        a.alpha_r.unwrap_or(d.alpha_r),
        a.beta.unwrap_or(d.beta),
        a.gamma.unwrap_or(d.gamma),
    )?;
    let load = |p: &Path| -> Result<Trajectory> {
        Trajectory::from_json(&read_input(p)?).map_err(|e| CliError::BadInput {
            path: p.to_path_buf(),
            message: e.to_string(),
        })
    };
    let r = dtw_mt(&load(&a.a)?, &load(&a.b)?, &params);
    write_json(
        out,
        &json!({ "distance": r.distance, "path_length": r.path_length }),
    )
}

pub fn cmd_voxelize(a: &VoxelizeArgs, out: &mut dyn Write) -> Result<()> {
    let part: PointCloudPart = parse_input(&a.cloud)?;
    let bits: Vec<u8> = voxelize(&part)
        .to_input()
        .iter()
        .map(|&v| v as u8)
        .collect();
    serde_json::to_writer(&mut *out, &bits)?;
    writeln!(out)?;
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let set = generate(&SyntheticConfig {
        tasks_per_family: a.tasks_per_family,
        demos_per_task: a.demos_per_task,
        adversarial_fraction: a.adversarial,
        seed: a.seed,
        ..SyntheticConfig::default()
    })?;
    set.dataset.save(&a.output)?;
    let families: BTreeMap<&str, &str> = set
        .task_family
        .iter()
        .map(|(k, f)| (k.as_str(), f.name()))
        .collect();
    write_json(
        out,
        &json!({
            "dataset": a.output,
            "tasks": set.dataset.tasks.len(),
            "task_family": families,
            "adversarial": set.adversarial,
        }),
    )
}

pub fn cmd_serve(a: &ServeArgs) -> Result<()> {
    let dataset = load_dataset(&a.dataset)?;
    let model = match &a.model {
        Some(p) => {
            let file = load_model(p)?;
            let (train, _) = split_tasks(&dataset, file.holdout.as_ref())?;
            Some(LoadedModel::new(
                file.into_model()?,
                demo_pool(&train.tasks),
            )?)
        }
        None => None,
    };
    let store = DemoStore::open(&a.demos)?;
    let state = Arc::new(AppState::new(dataset, model, store));
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| CliError::Usage(format!("bad listen address: {e}")))?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        info!("listening on http://{}", listener.local_addr()?);
        service::serve(listener, state).await
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_parsing() {
        assert_eq!(parse_sweep("0:3:1").unwrap(), vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(parse_sweep("5:5:1").unwrap(), vec![5.0]);
        assert_eq!(parse_sweep("0:1:0.25").unwrap().len(), 5);
        for bad in ["0:3", "0:3:0", "3:0:1", "a:b:c", "0:3:-1"] {
            assert!(parse_sweep(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn holdout_resolution() {
        let none = FoldArgs {
            fold: None,
            folds: None,
            fold_seed: None,
        };
        assert_eq!(resolve_holdout(&none, None).unwrap(), None);
        let rec = Holdout {
            folds: 4,
            fold: 2,
            fold_seed: 9,
        };
        assert_eq!(
            resolve_holdout(&none, Some(&rec)).unwrap(),
            Some(rec.clone())
        );
        let one = FoldArgs {
            fold: Some(1),
            folds: None,
            fold_seed: None,
        };
        assert_eq!(
            resolve_holdout(&one, Some(&rec)).unwrap(),
            Some(Holdout {
                folds: 4,
                fold: 1,
                fold_seed: 9
            })
        );
        assert_eq!(
            resolve_holdout(&one, None).unwrap(),
            Some(Holdout {
                folds: DEFAULT_FOLDS,
                fold: 1,
                fold_seed: 0
            })
        );
        let out_of_range = FoldArgs {
            fold: Some(5),
            folds: Some(5),
            fold_seed: None,
        };
        assert!(resolve_holdout(&out_of_range, None).is_err());
        let dangling = FoldArgs {
            fold: None,
            folds: Some(3),
            fold_seed: None,
        };
        assert!(resolve_holdout(&dangling, None).is_err());
    }

    #[test]
    fn log_path_next_to_model() {
        assert_eq!(
            default_log_path(Path::new("out/model.json")),
            PathBuf::from("out/model.log.json")
        );
    }
}

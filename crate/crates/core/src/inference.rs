//! Nearest-neighbour retrieval over a pre-embedded trajectory library and
//! the evaluation metrics.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Task;
use crate::dtw::{distance, MetricParams};
use crate::error::{invalid, Error, Result};
use crate::featurize::{bag_of_words, traj_feature, voxelize};
use crate::neural::io::fingerprint;
use crate::neural::{similarity, EmbeddingModel};
use crate::types::{PointCloudPart, Trajectory};

/// Success threshold on DTW-MT.
pub const DEFAULT_THRESHOLD: f64 = 10.0;

/// Trajectory embeddings computed once, tagged with the producing model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedLibrary {
    pub rows: Vec<(String, Vec<f64>)>,
    pub fingerprint: String,
}

impl EmbeddedLibrary {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Id of the row with the highest similarity to `z`; ties go to the
    /// lowest id.
    pub fn nearest(&self, z: &[f64]) -> Option<&str> {
        let mut best: Option<(&str, f64)> = None;
        for (id, e) in &self.rows {
            let s = similarity(z, e);
            let better = match best {
                None => true,
                Some((bid, bs)) => s > bs || (s == bs && id.as_str() < bid),
            };
            if better {
                best = Some((id, s));
            }
        }
        best.map(|(id, _)| id)
    }
}

/// One trajectory-tower pass per trajectory, in input order.
pub fn embed_library(model: &EmbeddingModel, trajs: &[Trajectory]) -> Result<EmbeddedLibrary> {
    let mut seen = BTreeSet::new();
    if let Some(t) = trajs.iter().find(|t| !seen.insert(t.id())) {
        return Err(invalid(format!(
            "duplicate trajectory id {:?} in library",
            t.id()
        )));
    }
    let rows = trajs
        .par_iter()
        .map(|t| {
            let f = traj_feature(t, model.m_norm)?;
            Ok((t.id().to_string(), model.forward_traj(&f.values)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EmbeddedLibrary {
        rows,
        fingerprint: fingerprint(model),
    })
}

/// Joint embedding of a part-frame point cloud and an instruction.
pub fn query_embedding(
    model: &EmbeddingModel,
    part: &PointCloudPart,
    instruction: &str,
) -> Result<Vec<f64>> {
    let grids = voxelize(part).to_input();
    let words = bag_of_words(instruction, &model.vocab);
    model.forward_pl(&grids, &words)
}

/// A library checked once against the model that answers queries on it, so
/// each query costs one point-cloud/language pass and one scan.
#[derive(Debug, Clone, Copy)]
pub struct Retriever<'a> {
    model: &'a EmbeddingModel,
    lib: &'a EmbeddedLibrary,
}

impl<'a> Retriever<'a> {
    pub fn new(model: &'a EmbeddingModel, lib: &'a EmbeddedLibrary) -> Result<Self> {
        let fp = fingerprint(model);
        if fp != lib.fingerprint {
            return Err(Error::FingerprintMismatch {
                library: lib.fingerprint.clone(),
                model: fp,
            });
        }
        if lib.is_empty() {
            return Err(invalid("cannot infer from an empty library"));
        }
        Ok(Retriever { model, lib })
    }

    /// Id of the library trajectory best matching `(part, instruction)`.
    pub fn query(&self, part: &PointCloudPart, instruction: &str) -> Result<&'a str> {
        let z = query_embedding(self.model, part, instruction)?;
        Ok(self.lib.nearest(&z).expect("library is non-empty"))
    }
}

/// Id of the library trajectory best matching `(part, instruction)`.
pub fn infer(
    model: &EmbeddingModel,
    lib: &EmbeddedLibrary,
    part: &PointCloudPart,
    instruction: &str,
) -> Result<String> {
    Ok(Retriever::new(model, lib)?
        .query(part, instruction)?
        .to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    pub manual_id: String,
    pub retrieved: String,
    pub dtw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean DTW-MT over tasks.
    pub per_instruction: f64,
    /// Mean over manuals of each manual's mean DTW-MT.
    pub per_manual: f64,
    /// Fraction of tasks with DTW-MT below `threshold`.
    pub accuracy: f64,
    pub threshold: f64,
    pub tasks: Vec<TaskResult>,
}

impl Metrics {
    pub fn from_results(tasks: Vec<TaskResult>, threshold: f64) -> Result<Self> {
        if tasks.is_empty() {
            return Err(invalid("no tasks to evaluate"));
        }
        let n = tasks.len() as f64;
        let per_instruction = tasks.iter().map(|t| t.dtw).sum::<f64>() / n;
        let mut manuals: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
        for t in &tasks {
            let e = manuals.entry(t.manual_id.as_str()).or_default();
            e.0 += t.dtw;
            e.1 += 1;
        }
        let per_manual =
            manuals.values().map(|(s, c)| s / *c as f64).sum::<f64>() / manuals.len() as f64;
        let accuracy = accuracy_at(&tasks, threshold);
        Ok(Metrics {
            per_instruction,
            per_manual,
            accuracy,
            threshold,
            tasks,
        })
    }

    /// `(threshold, accuracy)` for each threshold.
    pub fn curve(&self, thresholds: &[f64]) -> Vec<(f64, f64)> {
        thresholds
            .iter()
            .map(|&t| (t, accuracy_at(&self.tasks, t)))
            .collect()
    }
}

fn accuracy_at(tasks: &[TaskResult], threshold: f64) -> f64 {
    tasks.iter().filter(|t| t.dtw < threshold).count() as f64 / tasks.len() as f64
}

fn experts(tasks: &[Task]) -> Result<Vec<&Trajectory>> {
    let missing: Vec<String> = tasks
        .iter()
        .filter(|t| t.expert_demo.is_none())
        .map(|t| t.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingExpertDemo(missing));
    }
    Ok(tasks
        .iter()
        .map(|t| t.expert_demo.as_ref().unwrap())
        .collect())
}

fn score(
    tasks: &[Task],
    picks: Vec<String>,
    pool: &[Trajectory],
    metric: &MetricParams,
    threshold: f64,
) -> Result<Metrics> {
    let expert = experts(tasks)?;
    let by_id: BTreeMap<&str, &Trajectory> = pool.iter().map(|t| (t.id(), t)).collect();
    let results = tasks
        .par_iter()
        .zip(picks)
        .zip(expert)
        .map(|((task, pick), e)| {
            let traj = by_id.get(pick.as_str()).ok_or_else(|| {
                invalid(format!("retrieved trajectory {pick:?} is not in the pool"))
            })?;
            Ok(TaskResult {
                task_id: task.id.clone(),
                manual_id: task.manual_id.clone(),
                dtw: distance(traj, e, metric),
                retrieved: pick,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Metrics::from_results(results, threshold)
}

/// Retrieves a trajectory for every task from `lib` (embedded from `pool`)
/// and scores it against the task's expert demonstration.
pub fn evaluate(
    model: &EmbeddingModel,
    lib: &EmbeddedLibrary,
    pool: &[Trajectory],
    tasks: &[Task],
    metric: &MetricParams,
    threshold: f64,
) -> Result<Metrics> {
    experts(tasks)?;
    let retriever = Retriever::new(model, lib)?;
    let picks = tasks
        .iter()
        .map(|t| retriever.query(&t.part, &t.instruction).map(str::to_string))
        .collect::<Result<Vec<_>>>()?;
    score(tasks, picks, pool, metric, threshold)
}

/// Uniformly random retrieval from `pool`, seeded.
pub fn chance_baseline(
    pool: &[Trajectory],
    tasks: &[Task],
    metric: &MetricParams,
    threshold: f64,
    seed: u64,
) -> Result<Metrics> {
    if pool.is_empty() {
        return Err(invalid("chance baseline needs a non-empty pool"));
    }
    experts(tasks)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = tasks
        .iter()
        .map(|_| pool[rng.random_range(0..pool.len())].id().to_string())
        .collect();
    score(tasks, picks, pool, metric, threshold)
}

//! Dataset model, crowd-noise handling and cross-validation folds.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dtw::{distance, MetricParams};
use crate::error::{invalid, Result};
use crate::types::{PointCloudPart, Trajectory};

/// Default similarity / dissimilarity thresholds in DTW-MT units.
pub const DEFAULT_T_S: f64 = 10.0;
pub const DEFAULT_T_D: f64 = 15.0;

/// A (part, instruction) pair with its crowd demonstrations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub manual_id: String,
    pub instruction: String,
    pub part: PointCloudPart,
    pub demos: Vec<Trajectory>,
    #[serde(default)]
    pub expert_demo: Option<Trajectory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub tasks: Vec<Task>,
}

impl Dataset {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ds: Dataset = serde_json::from_str(text)?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    /// Task ids unique; trajectory ids unique across all demos.
    pub fn validate(&self) -> Result<()> {
        let mut tasks = BTreeSet::new();
        let mut trajs = BTreeSet::new();
        for t in &self.tasks {
            if !tasks.insert(t.id.as_str()) {
                return Err(invalid(format!("duplicate task id {:?}", t.id)));
            }
            for d in &t.demos {
                if !trajs.insert(d.id()) {
                    return Err(invalid(format!("duplicate trajectory id {:?}", d.id())));
                }
            }
        }
        Ok(())
    }

    pub fn task(&self, id: &str) -> Option<&Task> {
        self.tasks.iter().find(|t| t.id == id)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            tasks: indices.iter().map(|&i| self.tasks[i].clone()).collect(),
        }
    }
}

/// Symmetric table of pairwise DTW-MT distances.
#[derive(Debug, Clone)]
pub struct DistanceTable {
    n: usize,
    values: Vec<f64>,
}

impl DistanceTable {
    /// Fills the table in parallel; the result does not depend on thread count.
    pub fn compute(trajs: &[&Trajectory], params: &MetricParams) -> Self {
        let n = trajs.len();
        let upper: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                ((i + 1)..n)
                    .map(|j| distance(trajs[i], trajs[j], params))
                    .collect()
            })
            .collect();
        let mut values = vec![0.0; n * n];
        for (i, row) in upper.iter().enumerate() {
            for (k, &d) in row.iter().enumerate() {
                let j = i + 1 + k;
                values[i * n + j] = d;
                values[j * n + i] = d;
            }
        }
        DistanceTable { n, values }
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                values[i * n + j] = f(i, j);
            }
        }
        DistanceTable { n, values }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }
}

/// Index minimizing the mean distance to all members (self included).
/// Ties go to the lexicographically smallest id.
pub fn canonical_index(ids: &[&str], dist: impl Fn(usize, usize) -> f64) -> Result<usize> {
    if ids.is_empty() {
        return Err(invalid("canonical demonstration needs at least one demo"));
    }
    let n = ids.len();
    let mean = |i: usize| (0..n).map(|j| dist(i, j)).sum::<f64>() / n as f64;
    let means: Vec<f64> = (0..n).map(mean).collect();
    Ok((0..n)
        .min_by(|&a, &b| means[a].total_cmp(&means[b]).then(ids[a].cmp(ids[b])))
        .unwrap())
}

/// Crowd demo with the smallest average DTW-MT to the others.
pub fn canonical_demo<'a>(
    demos: &'a [Trajectory],
    params: &MetricParams,
) -> Result<&'a Trajectory> {
    let ids: Vec<&str> = demos.iter().map(|d| d.id()).collect();
    let refs: Vec<&Trajectory> = demos.iter().collect();
    let table = DistanceTable::compute(&refs, params);
    let i = canonical_index(&ids, |a, b| table.get(a, b))?;
    Ok(&demos[i])
}

/// Positives and negatives for one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevanceSets {
    pub canonical: String,
    pub similar: BTreeSet<String>,
    pub dissimilar: BTreeSet<String>,
}

impl RelevanceSets {
    /// Tasks without negatives are skipped during training.
    pub fn has_negatives(&self) -> bool {
        !self.dissimilar.is_empty()
    }
}

fn check_thresholds(t_s: f64, t_d: f64) -> Result<()> {
    if !(t_s < t_d) {
        return Err(invalid(format!("need t_S < t_D, got {t_s} and {t_d}")));
    }
    Ok(())
}

/// Splits `pool` around the task's canonical demo: `Δ < t_S` is similar,
/// `Δ > t_D` dissimilar, anything in between is left out.
pub fn relevance_sets(
    task: &Task,
    pool: &[Trajectory],
    t_s: f64,
    t_d: f64,
    params: &MetricParams,
) -> Result<RelevanceSets> {
    check_thresholds(t_s, t_d)?;
    if pool.is_empty() {
        return Err(invalid("relevance sets need a non-empty pool"));
    }
    let canonical = canonical_demo(&task.demos, params)?;
    let dists: Vec<f64> = pool
        .par_iter()
        .map(|t| distance(canonical, t, params))
        .collect();
    let sets = split_by_threshold(
        canonical.id(),
        pool.iter().map(|t| t.id()).zip(dists),
        t_s,
        t_d,
    );
    if !sets.has_negatives() {
        log::warn!("task {:?} has no dissimilar trajectories", task.id);
    }
    Ok(sets)
}

pub(crate) fn split_by_threshold<'a>(
    canonical: &str,
    dists: impl Iterator<Item = (&'a str, f64)>,
    t_s: f64,
    t_d: f64,
) -> RelevanceSets {
    let mut similar = BTreeSet::new();
    let mut dissimilar = BTreeSet::new();
    for (id, d) in dists {
        if d < t_s {
            similar.insert(id.to_string());
        } else if d > t_d {
            dissimilar.insert(id.to_string());
        }
    }
    RelevanceSets {
        canonical: canonical.to_string(),
        similar,
        dissimilar,
    }
}

/// Relevance sets when every crowd demo is trusted: the task's own demos
/// are positives, everything else in the pool is a negative, and the first
/// demo stands in for the canonical one.
pub fn trusting_sets(task: &Task, pool: &[Trajectory]) -> RelevanceSets {
    let own: BTreeSet<String> = task.demos.iter().map(|d| d.id().to_string()).collect();
    let dissimilar = pool
        .iter()
        .map(|t| t.id().to_string())
        .filter(|id| !own.contains(id))
        .collect();
    RelevanceSets {
        canonical: task.demos[0].id().to_string(),
        similar: own,
        dissimilar,
    }
}

/// Splits tasks into `k` folds keeping every manual inside one fold.
/// Manuals are shuffled with `seed` and dealt round-robin, so fold sizes
/// (in manuals) differ by at most one. Returns task indices per fold.
pub fn make_folds(tasks: &[Task], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(invalid(format!("need at least 2 folds, got {k}")));
    }
    let mut by_manual: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, t) in tasks.iter().enumerate() {
        by_manual.entry(t.manual_id.as_str()).or_default().push(i);
    }
    if by_manual.len() < k {
        return Err(invalid(format!(
            "{} manuals cannot fill {k} folds",
            by_manual.len()
        )));
    }
    let mut manuals: Vec<&str> = by_manual.keys().copied().collect();
    manuals.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (n, m) in manuals.iter().enumerate() {
        folds[n % k].extend(&by_manual[m]);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Task indices outside `fold` (the training side of a split).
pub fn complement(folds: &[Vec<usize>], fold: usize) -> Vec<usize> {
    let mut out: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != fold)
        .flat_map(|(_, f)| f.iter().copied())
        .collect();
    out.sort_unstable();
    out
}

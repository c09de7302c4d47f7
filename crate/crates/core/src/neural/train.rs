//! Training pipeline: autoencoder initialization, the two lower-layer
//! pre-trainings and loss-augmented fine-tuning of the joint embedding.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adadelta::AdaDelta;
use super::dae::{pretrain_dae, DaeConfig};
use super::matrix::{dot, Matrix};
use super::model::{grad_loss_h3, hinge, Dims, EmbeddingModel, Triple, Weights, DEFAULT_HIDDEN};
use crate::dataset::{
    canonical_index, split_by_threshold, trusting_sets, Dataset, DistanceTable, Task, DEFAULT_T_D,
    DEFAULT_T_S,
};
use crate::dtw::{distance, MetricParams};
use crate::error::{invalid, Result};
use crate::featurize::{bag_of_words, build_vocab, traj_feature, voxelize, Vocabulary};
use crate::interp::DEFAULT_M_NORM;
use crate::types::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Scale of the DTW-MT term when mining violators.
    pub alpha_margin: f64,
    pub adadelta_rho: f64,
    pub adadelta_eps: f64,
    pub minibatch: usize,
    pub dae_epochs: usize,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub dae_mask_prob: f64,
    pub dae_l1: f64,
    pub seed: u64,
    pub metric: MetricParams,
    pub t_s: f64,
    pub t_d: f64,
    pub m_norm: usize,
    pub hidden: [usize; 6],
    /// Positives drawn per task and epoch; the canonical demo is always one.
    pub positives_per_task: usize,
    /// Share of training tasks held out to pick the fine-tuning checkpoint.
    pub validation_fraction: f64,
    /// Fine-tuning epochs between validation checks.
    pub eval_every: usize,
    /// Canonical demos and thresholded relevance sets; when off every crowd
    /// demo is trusted.
    pub noise_handling: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha_margin: 0.1,
            adadelta_rho: 0.95,
            adadelta_eps: 1e-6,
            minibatch: 32,
            dae_epochs: 100,
            pretrain_epochs: 100,
            finetune_epochs: 300,
            dae_mask_prob: 0.2,
            dae_l1: 1e-4,
            seed: 0,
            metric: MetricParams::default(),
            t_s: DEFAULT_T_S,
            t_d: DEFAULT_T_D,
            m_norm: DEFAULT_M_NORM,
            hidden: DEFAULT_HIDDEN,
            positives_per_task: 4,
            validation_fraction: 0.1,
            eval_every: 10,
            noise_handling: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha_margin", self.alpha_margin),
            ("adadelta_rho", self.adadelta_rho),
            ("adadelta_eps", self.adadelta_eps),
            ("t_s", self.t_s),
            ("t_d", self.t_d),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.adadelta_rho >= 1.0 {
            return Err(invalid("adadelta_rho must be below 1"));
        }
        if !(0.0..1.0).contains(&self.dae_mask_prob) || !(self.dae_l1 >= 0.0) {
            return Err(invalid(
                "dae_mask_prob must be in [0, 1) and dae_l1 non-negative",
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(invalid("validation_fraction must be in [0, 1)"));
        }
        if self.t_s >= self.t_d {
            return Err(invalid(format!(
                "need t_s < t_d, got {} and {}",
                self.t_s, self.t_d
            )));
        }
        if self.minibatch == 0
            || self.positives_per_task == 0
            || self.eval_every == 0
            || self.m_norm == 0
        {
            return Err(invalid(
                "minibatch, positives_per_task, eval_every and m_norm must be at least 1",
            ));
        }
        if self.hidden.contains(&0) {
            return Err(invalid("hidden layer widths must be at least 1"));
        }
        self.metric.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationPoint {
    pub epoch: usize,
    pub mean_dtw: f64,
}

/// Per-epoch mean losses of every phase.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub dae: BTreeMap<String, Vec<f64>>,
    pub pretrain_pl: Vec<f64>,
    pub pretrain_traj: Vec<f64>,
    pub finetune: Vec<f64>,
    pub validation: Vec<ValidationPoint>,
    /// Fine-tuning epoch of the returned weights (0 = pre-trained).
    pub selected_epoch: usize,
    pub validation_tasks: Vec<String>,
    /// Training tasks left out for lack of dissimilar trajectories.
    pub skipped_tasks: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: EmbeddingModel,
    /// Weights right before fine-tuning.
    pub pretrained: EmbeddingModel,
    pub log: TrainLog,
}

struct Example {
    points: Vec<f64>,
    words: Vec<f64>,
    /// Pool index of the trusted demonstration.
    canonical: usize,
    similar: Vec<usize>,
    dissimilar: Vec<usize>,
}

struct Holdout {
    points: Vec<f64>,
    words: Vec<f64>,
    target: Trajectory,
}

/// Everything training reads, derived once from the dataset.
struct Prepared {
    vocab: Vocabulary,
    /// Training tasks, including those without negatives.
    tasks: Vec<Example>,
    task_ids: Vec<String>,
    /// Demos of the training tasks, sorted by id.
    pool: Vec<Trajectory>,
    features: Vec<Vec<f64>>,
    table: DistanceTable,
    holdout: Vec<Holdout>,
    holdout_ids: Vec<String>,
}

fn holdout_split(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let k = (fraction * n as f64).floor() as usize;
    if k == 0 || k >= n {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut out = idx[..k].to_vec();
    out.sort_unstable();
    out
}

fn holdout_target(task: &Task, metric: &MetricParams) -> Result<Trajectory> {
    match &task.expert_demo {
        Some(e) => Ok(e.clone()),
        None => Ok(crate::dataset::canonical_demo(&task.demos, metric)?.clone()),
    }
}

fn prepare(ds: &Dataset, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Prepared> {
    ds.validate()?;
    if ds.tasks.is_empty() {
        return Err(invalid("training needs at least one task"));
    }
    if let Some(t) = ds.tasks.iter().find(|t| t.demos.is_empty()) {
        return Err(invalid(format!("task {:?} has no demonstrations", t.id)));
    }
    let held = holdout_split(ds.tasks.len(), cfg.validation_fraction, rng);
    let (train, val): (Vec<&Task>, Vec<&Task>) = {
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (i, t) in ds.tasks.iter().enumerate() {
            if held.binary_search(&i).is_ok() {
                val.push(t);
            } else {
                train.push(t);
            }
        }
        (train, val)
    };

    let instructions: Vec<&str> = train.iter().map(|t| t.instruction.as_str()).collect();
    let vocab = build_vocab(&instructions)?;

    let mut pool: Vec<Trajectory> = train.iter().flat_map(|t| t.demos.iter().cloned()).collect();
    pool.sort_by(|a, b| a.id().cmp(b.id()));
    let index: BTreeMap<&str, usize> = pool.iter().enumerate().map(|(i, t)| (t.id(), i)).collect();
    let features = pool
        .par_iter()
        .map(|t| traj_feature(t, cfg.m_norm).map(|f| f.values))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Trajectory> = pool.iter().collect();
    let table = DistanceTable::compute(&refs, &cfg.metric);

    let mut tasks = Vec::with_capacity(train.len());
    for t in &train {
        let own: Vec<usize> = t.demos.iter().map(|d| index[d.id()]).collect();
        let sets = if cfg.noise_handling {
            let ids: Vec<&str> = own.iter().map(|&i| pool[i].id()).collect();
            let c = own[canonical_index(&ids, |a, b| table.get(own[a], own[b]))?];
            let dists = pool
                .iter()
                .enumerate()
                .map(|(j, p)| (p.id(), table.get(c, j)));
            split_by_threshold(pool[c].id(), dists, cfg.t_s, cfg.t_d)
        } else {
            trusting_sets(t, &pool)
        };
        let lookup = |ids: &std::collections::BTreeSet<String>| -> Vec<usize> {
            let mut v: Vec<usize> = ids.iter().map(|id| index[id.as_str()]).collect();
            v.sort_unstable();
            v
        };
        tasks.push(Example {
            points: voxelize(&t.part).to_input(),
            words: bag_of_words(&t.instruction, &vocab),
            canonical: index[sets.canonical.as_str()],
            similar: lookup(&sets.similar),
            dissimilar: lookup(&sets.dissimilar),
        });
    }

    let holdout = val
        .iter()
        .map(|t| {
            Ok(Holdout {
                points: voxelize(&t.part).to_input(),
                words: bag_of_words(&t.instruction, &vocab),
                target: holdout_target(t, &cfg.metric)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Prepared {
        vocab,
        task_ids: train.iter().map(|t| t.id.clone()).collect(),
        tasks,
        pool,
        features,
        table,
        holdout,
        holdout_ids: val.iter().map(|t| t.id.clone()).collect(),
    })
}

/// Index of the candidate maximizing `sim(anchor, emb) + alpha * delta`.
/// Candidates must come in ascending index order; ties keep the first.
pub fn most_violating<'a>(
    anchor: &[f64],
    candidates: impl IntoIterator<Item = (usize, &'a [f64], f64)>,
    alpha: f64,
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, emb, delta) in candidates {
        let score = dot(anchor, emb) + alpha * delta;
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((i, score));
        }
    }
    best.map(|(i, _)| i)
}

/// Most violating trajectory of `pool` for the joint embedding `z_pl` and
/// the positive `positive`. Ties go to the lowest id.
pub fn most_violating_traj<'a>(
    model: &EmbeddingModel,
    z_pl: &[f64],
    positive: &Trajectory,
    pool: &'a [Trajectory],
    alpha: f64,
    metric: &MetricParams,
) -> Result<&'a Trajectory> {
    if pool.is_empty() {
        return Err(invalid("most violating trajectory needs a non-empty pool"));
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| pool[a].id().cmp(pool[b].id()));
    let scored = order
        .iter()
        .map(|&i| {
            let f = traj_feature(&pool[i], model.m_norm)?;
            Ok((
                model.forward_traj(&f.values)?,
                distance(positive, &pool[i], metric),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let k = most_violating(
        z_pl,
        scored
            .iter()
            .enumerate()
            .map(|(k, (e, d))| (k, e.as_slice(), *d)),
        alpha,
    )
    .expect("pool is non-empty");
    Ok(&pool[order[k]])
}

fn embed_all(model: &EmbeddingModel, features: &[Vec<f64>]) -> Vec<Vec<f64>> {
    features
        .par_iter()
        .map(|f| model.traj_forward(f).out)
        .collect()
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn run_dae(model: &mut EmbeddingModel, data: &Prepared, cfg: &TrainConfig, log: &mut TrainLog) {
    if cfg.dae_epochs == 0 {
        return;
    }
    let points: Vec<Vec<f64>> = data.tasks.iter().map(|t| t.points.clone()).collect();
    let words: Vec<Vec<f64>> = data.tasks.iter().map(|t| t.words.clone()).collect();
    let dae_cfg = |stream| DaeConfig {
        epochs: cfg.dae_epochs,
        minibatch: cfg.minibatch,
        mask_prob: cfg.dae_mask_prob,
        l1: cfg.dae_l1,
        rho: cfg.adadelta_rho,
        eps: cfg.adadelta_eps,
        seed: derive_seed(cfg.seed, stream),
    };
    let w = &mut model.weights;
    let jobs: [(&str, &mut Matrix, &[Vec<f64>]); 3] = [
        ("w1p", &mut w.w1p, &points),
        ("w1l", &mut w.w1l, &words),
        ("w1t", &mut w.w1t, &data.features),
    ];
    for (k, (name, matrix, inputs)) in jobs.into_iter().enumerate() {
        let out = pretrain_dae(matrix, inputs, &dae_cfg(k as u64 + 1));
        *matrix = out.encoder;
        log.dae.insert(name.to_string(), out.epoch_loss);
    }
}

/// Hinge step of the point-cloud/language pre-training for one task.
fn pl_pretrain_sample(
    model: &EmbeddingModel,
    data: &Prepared,
    i: usize,
    lang: &[Vec<f64>],
    alpha: f64,
    scale: f64,
    g: &mut Weights,
) -> f64 {
    let t = &data.tasks[i];
    let p = model.point_branch(&t.points);
    let ci = t.canonical;
    let violator = most_violating(
        &p.out,
        lang.iter()
            .enumerate()
            .map(|(k, e)| (k, e.as_slice(), data.table.get(ci, data.tasks[k].canonical))),
        alpha,
    )
    .expect("at least one instruction");
    if violator == i {
        return 0.0;
    }
    let delta = data.table.get(ci, data.tasks[violator].canonical);
    let l_pos = model.language_branch(&t.words);
    let l_neg = model.language_branch(&data.tasks[violator].words);
    let loss = hinge(delta, dot(&p.out, &l_neg.out), dot(&p.out, &l_pos.out));
    if loss <= 0.0 {
        return 0.0;
    }
    let dp: Vec<f64> = l_neg
        .out
        .iter()
        .zip(&l_pos.out)
        .map(|(n, q)| (n - q) * scale)
        .collect();
    let dpos: Vec<f64> = p.out.iter().map(|v| -v * scale).collect();
    let dneg: Vec<f64> = p.out.iter().map(|v| v * scale).collect();
    model.point_branch_backward(&p, &t.points, &dp, g);
    model.language_branch_backward(&l_pos, &t.words, &dpos, g);
    model.language_branch_backward(&l_neg, &data.tasks[violator].words, &dneg, g);
    loss
}

fn pretrain_pl(
    model: &mut EmbeddingModel,
    data: &Prepared,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut opt = AdaDelta::new(model.weights.matrices(), cfg.adadelta_rho, cfg.adadelta_eps);
    let mut order: Vec<usize> = (0..data.tasks.len()).collect();
    let mut losses = Vec::with_capacity(cfg.pretrain_epochs);
    for _ in 0..cfg.pretrain_epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.minibatch) {
            let lang: Vec<Vec<f64>> = data
                .tasks
                .iter()
                .map(|t| model.language_branch(&t.words).out)
                .collect();
            let mut g = model.weights.zeros_like();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                total += pl_pretrain_sample(model, data, i, &lang, cfg.alpha_margin, scale, &mut g);
            }
            opt.step(model.weights.matrices_mut(), g.matrices());
        }
        losses.push(total / data.tasks.len() as f64);
    }
    losses
}

/// (task, positive) pairs for one epoch: the canonical demo plus up to
/// `positives_per_task - 1` other similar trajectories.
fn sample_pairs(data: &Prepared, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (i, t) in data.tasks.iter().enumerate() {
        if t.dissimilar.is_empty() {
            continue;
        }
        pairs.push((i, t.canonical));
        let others: Vec<usize> = t
            .similar
            .iter()
            .copied()
            .filter(|&s| s != t.canonical)
            .collect();
        let extra: Vec<usize> = others
            .choose_multiple(rng, cfg.positives_per_task - 1)
            .copied()
            .collect();
        pairs.extend(extra.into_iter().map(|s| (i, s)));
    }
    pairs.shuffle(rng);
    pairs
}

/// Hinge step of the twin trajectory pre-training: the canonical demo is
/// the anchor, `pos` a similar trajectory, and the violator is mined from
/// the dissimilar set.
fn traj_pretrain_sample(
    model: &EmbeddingModel,
    data: &Prepared,
    (i, pos): (usize, usize),
    emb: &[Vec<f64>],
    alpha: f64,
    scale: f64,
    g: &mut Weights,
) -> f64 {
    let t = &data.tasks[i];
    let anchor = model.traj_branch(&data.features[t.canonical]);
    let neg = most_violating(
        &anchor.out,
        t.dissimilar
            .iter()
            .map(|&k| (k, emb[k].as_slice(), data.table.get(pos, k))),
        alpha,
    )
    .expect("task has negatives");
    let p = model.traj_branch(&data.features[pos]);
    let n = model.traj_branch(&data.features[neg]);
    let loss = hinge(
        data.table.get(neg, pos),
        dot(&anchor.out, &n.out),
        dot(&anchor.out, &p.out),
    );
    if loss <= 0.0 {
        return 0.0;
    }
    let da: Vec<f64> = n
        .out
        .iter()
        .zip(&p.out)
        .map(|(a, b)| (a - b) * scale)
        .collect();
    let dp: Vec<f64> = anchor.out.iter().map(|v| -v * scale).collect();
    let dn: Vec<f64> = anchor.out.iter().map(|v| v * scale).collect();
    model.traj_branch_backward(&anchor, &data.features[t.canonical], &da, g);
    model.traj_branch_backward(&p, &data.features[pos], &dp, g);
    model.traj_branch_backward(&n, &data.features[neg], &dn, g);
    loss
}

fn pretrain_traj(
    model: &mut EmbeddingModel,
    data: &Prepared,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut opt = AdaDelta::new(model.weights.matrices(), cfg.adadelta_rho, cfg.adadelta_eps);
    let mut losses = Vec::with_capacity(cfg.pretrain_epochs);
    for _ in 0..cfg.pretrain_epochs {
        let pairs = sample_pairs(data, cfg, rng);
        let mut total = 0.0;
        for batch in pairs.chunks(cfg.minibatch) {
            let emb: Vec<Vec<f64>> = data
                .features
                .par_iter()
                .map(|f| model.traj_branch(f).out)
                .collect();
            let mut g = model.weights.zeros_like();
            let scale = 1.0 / batch.len() as f64;
            for &pair in batch {
                total +=
                    traj_pretrain_sample(model, data, pair, &emb, cfg.alpha_margin, scale, &mut g);
            }
            opt.step(model.weights.matrices_mut(), g.matrices());
        }
        losses.push(if pairs.is_empty() {
            0.0
        } else {
            total / pairs.len() as f64
        });
    }
    losses
}

/// Mean DTW-MT between each held-out task's retrieved trajectory and its
/// target, or `None` without held-out tasks.
fn validate_model(model: &EmbeddingModel, data: &Prepared, metric: &MetricParams) -> Option<f64> {
    if data.holdout.is_empty() {
        return None;
    }
    let emb = embed_all(model, &data.features);
    let total: f64 = data
        .holdout
        .iter()
        .map(|h| {
            let z = model.pl_forward(&h.points, &h.words).out;
            let best = most_violating(
                &z,
                emb.iter().enumerate().map(|(k, e)| (k, e.as_slice(), 0.0)),
                0.0,
            )
            .expect("pool is non-empty");
            distance(&data.pool[best], &h.target, metric)
        })
        .sum();
    Some(total / data.holdout.len() as f64)
}

fn finetune(
    model: &mut EmbeddingModel,
    data: &Prepared,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    log: &mut TrainLog,
) {
    let mut opt = AdaDelta::new(model.weights.matrices(), cfg.adadelta_rho, cfg.adadelta_eps);
    let mut best: Option<(f64, Weights, usize)> = None;
    let mut check = |model: &EmbeddingModel, epoch: usize, log: &mut TrainLog| {
        if let Some(v) = validate_model(model, data, &cfg.metric) {
            log.validation.push(ValidationPoint { epoch, mean_dtw: v });
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, model.weights.clone(), epoch));
            }
        }
    };
    check(model, 0, log);
    for epoch in 1..=cfg.finetune_epochs {
        let pairs = sample_pairs(data, cfg, rng);
        let mut total = 0.0;
        for batch in pairs.chunks(cfg.minibatch) {
            let emb = embed_all(model, &data.features);
            let triples: Vec<Triple> = batch
                .iter()
                .map(|&(i, pos)| {
                    let t = &data.tasks[i];
                    let z = model.pl_forward(&t.points, &t.words).out;
                    let neg = most_violating(
                        &z,
                        t.dissimilar
                            .iter()
                            .map(|&k| (k, emb[k].as_slice(), data.table.get(pos, k))),
                        cfg.alpha_margin,
                    )
                    .expect("task has negatives");
                    Triple {
                        points: &t.points,
                        words: &t.words,
                        positive: &data.features[pos],
                        negative: &data.features[neg],
                        delta: data.table.get(neg, pos),
                    }
                })
                .collect();
            let (loss, g) = grad_loss_h3(model, &triples);
            total += loss * triples.len() as f64;
            opt.step(model.weights.matrices_mut(), g.matrices());
        }
        log.finetune.push(if pairs.is_empty() {
            0.0
        } else {
            total / pairs.len() as f64
        });
        if epoch % cfg.eval_every == 0 || epoch == cfg.finetune_epochs {
            check(model, epoch, log);
        }
    }
    match best {
        Some((_, weights, epoch)) => {
            model.weights = weights;
            log.selected_epoch = epoch;
        }
        None => log.selected_epoch = cfg.finetune_epochs,
    }
}

/// Runs the whole pipeline. The result depends only on `ds` and `cfg`.
pub fn train_full(ds: &Dataset, cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let data = prepare(ds, cfg, &mut rng)?;
    let dims = Dims::new(
        crate::featurize::POINT_FEATURES,
        data.vocab.len(),
        cfg.m_norm * crate::featurize::WAYPOINT_FEATURES,
        cfg.hidden,
    );
    let mut model = EmbeddingModel::new(dims, data.vocab.clone(), cfg.m_norm, cfg.seed)?;
    let mut log = TrainLog {
        validation_tasks: data.holdout_ids.clone(),
        skipped_tasks: data
            .tasks
            .iter()
            .zip(&data.task_ids)
            .filter(|(t, _)| t.dissimilar.is_empty())
            .map(|(_, id)| id.clone())
            .collect(),
        ..TrainLog::default()
    };
    for id in &log.skipped_tasks {
        log::warn!("task {id:?} has no dissimilar trajectories and is skipped");
    }

    run_dae(&mut model, &data, cfg, &mut log);
    log.pretrain_pl = pretrain_pl(&mut model, &data, cfg, &mut rng);
    log.pretrain_traj = pretrain_traj(&mut model, &data, cfg, &mut rng);
    let pretrained = model.clone();
    finetune(&mut model, &data, cfg, &mut rng, &mut log);
    if !model.weights.is_finite() {
        return Err(invalid("training diverged to non-finite weights"));
    }
    Ok(Trained {
        model,
        pretrained,
        log,
    })
}

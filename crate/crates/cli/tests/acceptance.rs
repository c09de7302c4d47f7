//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the long end-to-end
//! benchmarks report their numbers even when an earlier criterion fails.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use clap::Parser;
use nalgebra::{Quaternion, Vector3};
use parttransfer::dataset::{complement, make_folds};
use parttransfer::dtw::{dtw_mt, waypoint_cost, MetricParams};
use parttransfer::featurize::{build_vocab, traj_feature, Vocabulary};
use parttransfer::inference::{
    chance_baseline, embed_library, evaluate, query_embedding, Retriever,
};
use parttransfer::neural::model::{grad_loss_h3, loss_h3, Triple};
use parttransfer::neural::{
    similarity, train_full, traj_forward_calls, Dims, EmbeddingModel, TrainConfig, Weights,
};
use parttransfer::synthetic::{generate, SyntheticConfig, SyntheticSet};
use parttransfer::{Gripper, PointCloudPart, Trajectory, Waypoint};
use parttransfer_cli::{run, Cli};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FOLDS: usize = 5;
const FOLD_SEED: u64 = 1;
const THRESHOLD: f64 = 10.0;
const CHANCE_SEEDS: u64 = 20;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_waypoint(rng: &mut ChaCha8Rng) -> Waypoint {
    let g = Gripper::ALL[rng.random_range(0..3)];
    let t = Vector3::from_fn(|_, _| rng.random_range(-0.1..0.1));
    let q = Quaternion::from_vector(nalgebra::Vector4::from_fn(|_, _| {
        rng.random_range(-1.0..1.0)
    }));
    Waypoint::normalized(g, t, q).unwrap()
}

fn random_trajectory(id: &str, len: usize, rng: &mut ChaCha8Rng) -> Trajectory {
    Trajectory::new(id, (0..len).map(|_| random_waypoint(rng)).collect()).unwrap()
}

/// Smallest cumulative cost over every monotone warp path, by recursion.
fn exhaustive_min(a: &[Waypoint], b: &[Waypoint], p: &MetricParams) -> f64 {
    fn walk(
        i: usize,
        j: usize,
        sum: f64,
        a: &[Waypoint],
        b: &[Waypoint],
        p: &MetricParams,
        best: &mut f64,
    ) {
        if i == a.len() - 1 && j == b.len() - 1 {
            *best = best.min(sum);
            return;
        }
        for (di, dj) in [(1, 1), (1, 0), (0, 1)] {
            let (ni, nj) = (i + di, j + dj);
            if ni < a.len() && nj < b.len() {
                walk(
                    ni,
                    nj,
                    sum + waypoint_cost(&a[ni], &b[nj], p),
                    a,
                    b,
                    p,
                    best,
                );
            }
        }
    }
    let mut best = f64::INFINITY;
    walk(0, 0, waypoint_cost(&a[0], &b[0], p), a, b, p, &mut best);
    best
}

fn dtw_oracle() -> Outcome {
    let start = Instant::now();
    let p = MetricParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let mut mismatches = 0;
    for _ in 0..500 {
        let a = random_trajectory("a", rng.random_range(1..=6), &mut rng);
        let b = random_trajectory("b", rng.random_range(1..=6), &mut rng);
        if dtw_mt(&a, &b, &p).cumulative != exhaustive_min(a.waypoints(), b.waypoints(), &p) {
            mismatches += 1;
        }
    }
    let t = start.elapsed();
    check(
        mismatches == 0 && t < Duration::from_secs(10),
        format!(
            "500 pairs, {mismatches} mismatches, {:.2}s",
            t.as_secs_f64()
        ),
    )
}

fn metric_properties() -> Outcome {
    let p = MetricParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut worst_asym: f64 = 0.0;
    let mut failures = Vec::new();
    for k in 0..1000 {
        let a = random_trajectory("a", rng.random_range(1..=8), &mut rng);
        let b = random_trajectory("b", rng.random_range(1..=8), &mut rng);
        let ab = dtw_mt(&a, &b, &p);
        let ba = dtw_mt(&b, &a, &p);
        worst_asym = worst_asym.max((ab.distance - ba.distance).abs());
        let (m, n) = (a.len(), b.len());
        let steps_ok = ab
            .path
            .windows(2)
            .all(|w| matches!((w[1].0 - w[0].0, w[1].1 - w[0].1), (1, 0) | (0, 1) | (1, 1)));
        let shape_ok = ab.path.first() == Some(&(0, 0))
            && ab.path.last() == Some(&(m - 1, n - 1))
            && ab.path_length == ab.path.len()
            && steps_ok;
        if dtw_mt(&a, &a, &p).distance != 0.0 || ab.distance < 0.0 || !shape_ok {
            failures.push(k);
        }
    }
    check(
        failures.is_empty() && worst_asym < 1e-9,
        format!("1000 pairs, max asymmetry {worst_asym:.1e}, failing pairs {failures:?}"),
    )
}

fn hand_constants() -> Outcome {
    let p = MetricParams::default();
    let at = |g, x| Waypoint::new(g, Vector3::new(x, 0.0, 0.0), Quaternion::identity()).unwrap();
    let same = waypoint_cost(&at(Gripper::Open, 0.0), &at(Gripper::Open, 0.0075), &p);
    let diff = waypoint_cost(&at(Gripper::Open, 0.0), &at(Gripper::Closed, 0.0075), &p);
    check(
        (same - 0.97045).abs() < 1e-5 && (diff - 1.94089).abs() < 1e-5,
        format!("same gripper {same:.6}, differing gripper {diff:.6}"),
    )
}

fn entries(w: &Weights) -> usize {
    w.matrices().iter().map(|m| m.data.len()).sum()
}

fn entry_mut(w: &mut Weights, mut k: usize) -> &mut f64 {
    for m in w.matrices_mut() {
        if k < m.data.len() {
            return &mut m.data[k];
        }
        k -= m.data.len();
    }
    unreachable!()
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let eps = 1e-4;
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = [0; 6].map(|_| rng.random_range(2..=6));
        let (n_p, n_l) = (rng.random_range(2..=6), rng.random_range(1..=4));
        let vocab = Vocabulary::from_words((0..n_l).map(|i| format!("w{i}")).collect()).unwrap();
        let model = EmbeddingModel::new(Dims::new(n_p, n_l, 10, hidden), vocab, 1, seed).unwrap();
        let mut v =
            |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let data: Vec<[Vec<f64>; 4]> = (0..3).map(|_| [v(n_p), v(n_l), v(10), v(10)]).collect();
        let batch: Vec<Triple> = data
            .iter()
            .map(|[pts, words, pos, neg]| Triple {
                points: pts,
                words,
                positive: pos,
                negative: neg,
                delta: 50.0,
            })
            .collect();
        let mean = |m: &EmbeddingModel| {
            batch.iter().map(|t| loss_h3(m, t)).sum::<f64>() / batch.len() as f64
        };
        let (_, g) = grad_loss_h3(&model, &batch);
        let mut flat = g.clone();
        for k in 0..entries(&g) {
            let mut plus = model.clone();
            *entry_mut(&mut plus.weights, k) += eps;
            let mut minus = model.clone();
            *entry_mut(&mut minus.weights, k) -= eps;
            let fd = (mean(&plus) - mean(&minus)) / (2.0 * eps);
            let an = *entry_mut(&mut flat, k);
            worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1.0));
            count += 1;
        }
    }
    let t = start.elapsed();
    check(
        worst < 1e-4 && t < Duration::from_secs(60),
        format!(
            "{count} weights over 20 seeds, max relative error {worst:.1e}, {:.2}s",
            t.as_secs_f64()
        ),
    )
}

/// Pooled held-out results of manual-grouped cross-validation.
struct CvResult {
    same_family: f64,
    accuracy: f64,
    chance_accuracy: f64,
    chance_same_family: f64,
    elapsed: Duration,
}

fn cross_validate(set: &SyntheticSet, cfg: &TrainConfig) -> parttransfer::Result<CvResult> {
    let start = Instant::now();
    let ds = &set.dataset;
    let folds = make_folds(&ds.tasks, FOLDS, FOLD_SEED)?;
    let (mut hits, mut correct, mut total) = (0usize, 0.0, 0usize);
    let (mut chance_acc, mut chance_same) = (0.0, 0.0);
    for fold in 0..FOLDS {
        let train = ds.subset(&complement(&folds, fold));
        let test = ds.subset(&folds[fold]);
        let trained = train_full(&train, cfg)?;
        let pool: Vec<Trajectory> = train
            .tasks
            .iter()
            .flat_map(|t| t.demos.iter().cloned())
            .collect();
        let lib = embed_library(&trained.model, &pool)?;
        let m = evaluate(
            &trained.model,
            &lib,
            &pool,
            &test.tasks,
            &cfg.metric,
            THRESHOLD,
        )?;
        hits += m
            .tasks
            .iter()
            .filter(|r| set.same_family(&r.task_id, &r.retrieved))
            .count();
        correct += m.accuracy * m.tasks.len() as f64;
        total += m.tasks.len();
        for seed in 0..CHANCE_SEEDS {
            let c = chance_baseline(&pool, &test.tasks, &cfg.metric, THRESHOLD, seed)?;
            chance_acc += c.accuracy * c.tasks.len() as f64 / CHANCE_SEEDS as f64;
            chance_same += c
                .tasks
                .iter()
                .filter(|r| set.same_family(&r.task_id, &r.retrieved))
                .count() as f64
                / CHANCE_SEEDS as f64;
        }
    }
    let n = total as f64;
    Ok(CvResult {
        same_family: hits as f64 / n,
        accuracy: correct / n,
        chance_accuracy: chance_acc / n,
        chance_same_family: chance_same / n,
        elapsed: start.elapsed(),
    })
}

fn describe(r: &CvResult) -> String {
    format!(
        "same-family {:.1}% (chance {:.1}%), accuracy@{THRESHOLD} {:.1}% (chance {:.1}%), {:.0}s",
        100.0 * r.same_family,
        100.0 * r.chance_same_family,
        100.0 * r.accuracy,
        100.0 * r.chance_accuracy,
        r.elapsed.as_secs_f64()
    )
}

fn synthetic_benchmark(clean: &parttransfer::Result<CvResult>) -> Outcome {
    let r = clean.as_ref().map_err(|e| e.to_string())?;
    check(
        r.same_family >= 0.8
            && r.accuracy - r.chance_accuracy >= 0.30
            && r.elapsed < Duration::from_secs(15 * 60),
        describe(r),
    )
}

fn noise_ablation(clean: &parttransfer::Result<CvResult>) -> Outcome {
    let clean = clean.as_ref().map_err(|e| e.to_string())?;
    let noisy = generate(&SyntheticConfig {
        adversarial_fraction: 0.3,
        ..SyntheticConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let with = cross_validate(&noisy, &TrainConfig::default()).map_err(|e| e.to_string())?;
    let without = cross_validate(
        &noisy,
        &TrainConfig {
            noise_handling: false,
            ..TrainConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let loss_with = clean.same_family - with.same_family;
    let loss_without = clean.same_family - without.same_family;
    check(
        loss_with <= 0.10 && loss_without > loss_with,
        format!(
            "{} adversarial demos; with noise handling loses {:.1} points ({}), without loses {:.1} points ({})",
            noisy.adversarial.len(),
            100.0 * loss_with,
            describe(&with),
            100.0 * loss_without,
            describe(&without)
        ),
    )
}

fn inference_efficiency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let vocab = build_vocab(&["pull the lever down", "turn the knob", "push the button in"])
        .map_err(|e| e.to_string())?;
    let model = EmbeddingModel::new(Dims::standard(vocab.len(), 15), vocab, 15, 3)
        .map_err(|e| e.to_string())?;
    let trajs: Vec<Trajectory> = (0..1000)
        .map(|k| random_trajectory(&format!("t{k:04}"), rng.random_range(2..10), &mut rng))
        .collect();
    let part = PointCloudPart::from_positions(
        "q",
        (0..300).map(|_| Vector3::from_fn(|_, _| rng.random_range(-0.05..0.05))),
    )
    .map_err(|e| e.to_string())?;

    let embed_start = Instant::now();
    let lib = embed_library(&model, &trajs).map_err(|e| e.to_string())?;
    let embed_time = embed_start.elapsed();

    let queries = 50;
    let retriever = Retriever::new(&model, &lib).map_err(|e| e.to_string())?;
    let calls_before = traj_forward_calls();
    let start = Instant::now();
    let mut picks = Vec::new();
    for _ in 0..queries {
        picks.push(
            retriever
                .query(&part, "turn the knob")
                .map_err(|e| e.to_string())?,
        );
    }
    let fast = start.elapsed() / queries;
    let calls_during = traj_forward_calls() - calls_before;

    let slow_queries = 3;
    let start = Instant::now();
    for _ in 0..slow_queries {
        let z = query_embedding(&model, &part, "turn the knob").map_err(|e| e.to_string())?;
        let mut best: Option<(f64, &str)> = None;
        for t in &trajs {
            let f = traj_feature(t, model.m_norm).map_err(|e| e.to_string())?;
            let e = model.forward_traj(&f.values).map_err(|e| e.to_string())?;
            let s = similarity(&z, &e);
            if best.is_none_or(|(bs, bid)| s > bs || (s == bs && t.id() < bid)) {
                best = Some((s, t.id()));
            }
        }
        if best.map(|b| b.1) != Some(picks[0]) {
            return Err("re-scan retrieved a different trajectory".into());
        }
    }
    let slow = start.elapsed() / slow_queries;
    let ratio = slow.as_secs_f64() / fast.as_secs_f64();
    check(
        ratio >= 10.0 && calls_during == 0,
        format!(
            "library of 1000 embedded in {:.2}s; per query {:.2}ms pre-embedded vs {:.1}ms re-running the tower ({ratio:.0}x); {calls_during} tower passes during queries",
            embed_time.as_secs_f64(),
            1e3 * fast.as_secs_f64(),
            1e3 * slow.as_secs_f64()
        ),
    )
}

fn train_determinism() -> Outcome {
    let dir = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let data = dir.path().join("data.json");
    let set = generate(&SyntheticConfig {
        tasks_per_family: 4,
        ..SyntheticConfig::default()
    })
    .map_err(|e| e.to_string())?;
    set.dataset.save(&data).map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for name in ["a.json", "b.json"] {
        let out = dir.path().join(name);
        let cli = Cli::parse_from([
            "parttransfer",
            "train",
            "-d",
            data.to_str().unwrap(),
            "-o",
            out.to_str().unwrap(),
            "--seed",
            "7",
        ]);
        run(cli, &mut std::io::sink()).map_err(|e| e.to_string())?;
        files.push(std::fs::read(&out).map_err(|e| e.to_string())?);
    }
    check(
        files[0] == files[1],
        format!(
            "two runs on {} tasks, {} bytes each",
            set.dataset.tasks.len(),
            files[0].len()
        ),
    )
}

fn main() {
    let started = Instant::now();
    let mut results: BTreeMap<usize, (&str, Outcome)> = BTreeMap::new();
    let mut report = |k: usize, name: &'static str, outcome: Outcome| {
        match &outcome {
            Ok(d) => println!("PASS {name}: {d}"),
            Err(d) => println!("FAIL {name}: {d}"),
        }
        results.insert(k, (name, outcome));
    };
    report(1, "dtw-oracle-equivalence", dtw_oracle());
    report(2, "metric-properties", metric_properties());
    report(3, "hand-check-constants", hand_constants());
    report(4, "gradient-checks", gradient_checks());
    report(7, "inference-efficiency", inference_efficiency());
    report(8, "train-determinism", train_determinism());
    let clean = generate(&SyntheticConfig::default())
        .and_then(|s| cross_validate(&s, &TrainConfig::default()));
    report(
        5,
        "synthetic-transfer-benchmark",
        synthetic_benchmark(&clean),
    );
    report(6, "noise-handling-ablation", noise_ablation(&clean));

    let failed: Vec<&str> = results
        .values()
        .filter(|(_, o)| o.is_err())
        .map(|(n, _)| *n)
        .collect();
    println!(
        "{} of {} criteria passed in {:.0}s",
        results.len() - failed.len(),
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}

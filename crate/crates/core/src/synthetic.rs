//! Synthetic benchmark: five manipulation families, each with its own part
//! shape, instruction wording and trajectory template, plus optional
//! adversarial (random) demonstrations.
//!
//! Everything is generated directly in part frames.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{UnitQuaternion, Vector3};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Task};
use crate::error::{invalid, Result};
use crate::geometry::axis_angle;
use crate::types::{ColoredPoint, Gripper, PointCloudPart, Trajectory, Waypoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    PullDown,
    RotateCw,
    RotateCcw,
    PushIn,
    Press,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::PullDown,
        Family::RotateCw,
        Family::RotateCcw,
        Family::PushIn,
        Family::Press,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::PullDown => "pull-down",
            Family::RotateCw => "rotate-cw",
            Family::RotateCcw => "rotate-ccw",
            Family::PushIn => "push-in",
            Family::Press => "press",
        }
    }

    fn instructions(self) -> [&'static str; 3] {
        match self {
            Family::PullDown => [
                "pull the lever down",
                "lower the handle lever",
                "pull down on the lever arm",
            ],
            Family::RotateCw => [
                "turn the knob clockwise",
                "twist the dial clockwise",
                "rotate the knob to the right",
            ],
            Family::RotateCcw => [
                "open the valve counterclockwise",
                "spin the wheel counterclockwise",
                "turn the valve wheel left",
            ],
            Family::PushIn => [
                "push the panel in",
                "shove the flap inward",
                "push the door panel closed",
            ],
            Family::Press => [
                "press the button",
                "hit the start button",
                "press the round switch",
            ],
        }
    }

    fn color(self) -> [u8; 3] {
        match self {
            Family::PullDown => [200, 40, 40],
            Family::RotateCw => [40, 40, 200],
            Family::RotateCcw => [40, 160, 40],
            Family::PushIn => [180, 180, 180],
            Family::Press => [220, 200, 30],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub tasks_per_family: usize,
    pub demos_per_task: usize,
    /// Standard deviation of per-waypoint translation noise, meters.
    pub jitter_translation: f64,
    /// Standard deviation of per-waypoint rotation noise, degrees.
    pub jitter_rotation_deg: f64,
    /// Share of all demos replaced by random trajectories, at most one per
    /// task.
    pub adversarial_fraction: f64,
    pub points_per_part: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            tasks_per_family: 20,
            demos_per_task: 3,
            jitter_translation: 0.005,
            jitter_rotation_deg: 3.0,
            adversarial_fraction: 0.0,
            points_per_part: 300,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSet {
    pub dataset: Dataset,
    /// Family of every task.
    pub task_family: BTreeMap<String, Family>,
    /// Family of every non-adversarial trajectory (demos and experts).
    pub trajectory_family: BTreeMap<String, Family>,
    /// Ids of the injected random demos.
    pub adversarial: Vec<String>,
}

impl SyntheticSet {
    /// Whether `traj_id` belongs to the same family as `task_id`.
    pub fn same_family(&self, task_id: &str, traj_id: &str) -> bool {
        match (
            self.task_family.get(task_id),
            self.trajectory_family.get(traj_id),
        ) {
            (Some(a), Some(b)) => a == b,
            _ => false,
        }
    }
}

fn down() -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::x_axis(), PI)
}

fn side() -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::y_axis(), FRAC_PI_2)
}

fn about(axis: Vector3<f64>, angle: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::new_unchecked(axis_angle(axis, angle))
}

type Pose = (Gripper, Vector3<f64>, UnitQuaternion<f64>);

/// Noise-free template of one task; `s` scales the part, `a` the motion.
fn template(family: Family, s: f64, a: f64) -> Vec<Pose> {
    use Gripper::{Closed, Open};
    let v = Vector3::new;
    match family {
        Family::PullDown => {
            let e = 0.045 * s;
            let grip = about(Vector3::z(), FRAC_PI_2) * down();
            let tilt = about(Vector3::y(), (30.0 * a).to_radians()) * grip;
            let drop = -0.04 * a;
            vec![
                (Open, v(e, 0.0, 0.07), grip),
                (Open, v(e, 0.0, 0.015), grip),
                (Closed, v(e, 0.0, 0.005), grip),
                (Closed, v(e * 0.97, 0.0, drop * 0.5), tilt),
                (Closed, v(e * 0.9, 0.0, drop), tilt),
                (Open, v(e * 0.9, 0.0, drop), tilt),
                (Open, v(e + 0.03, 0.0, drop + 0.02), tilt),
            ]
        }
        Family::RotateCw | Family::RotateCcw => {
            let sign = if family == Family::RotateCw {
                -1.0
            } else {
                1.0
            };
            let phi = sign * (100.0 * a).to_radians();
            let z = Vector3::z();
            if family == Family::RotateCw {
                let h = 0.015 * s;
                vec![
                    (Open, v(0.0, 0.0, 0.08), down()),
                    (Open, v(0.0, 0.0, h + 0.02), down()),
                    (Closed, v(0.0, 0.0, h), down()),
                    (Closed, v(0.0, 0.0, h), about(z, phi / 2.0) * down()),
                    (Closed, v(0.0, 0.0, h), about(z, phi) * down()),
                    (Open, v(0.0, 0.0, h), about(z, phi) * down()),
                    (Open, v(0.0, 0.0, 0.08), about(z, phi) * down()),
                ]
            } else {
                let r = 0.04 * s;
                let rim = |ang: f64| v(r * ang.cos(), r * ang.sin(), 0.01);
                let grip = about(z, -FRAC_PI_2) * down();
                vec![
                    (Open, rim(0.0) + v(0.0, 0.0, 0.06), grip),
                    (Open, rim(0.0) + v(0.0, 0.0, 0.02), grip),
                    (Closed, rim(0.0), grip),
                    (Closed, rim(phi / 2.0), about(z, phi / 2.0) * grip),
                    (Closed, rim(phi), about(z, phi) * grip),
                    (Open, rim(phi), about(z, phi) * grip),
                    (Open, rim(phi) + v(0.0, 0.0, 0.06), about(z, phi) * grip),
                ]
            }
        }
        Family::PushIn => {
            let d = 0.03 * a;
            let x0 = -0.01 * s;
            vec![
                (Open, v(-0.10, 0.0, 0.0), side()),
                (Closed, v(x0 - 0.03, 0.0, 0.0), side()),
                (Closed, v(x0, 0.0, 0.0), side()),
                (Closed, v(x0 + d, 0.0, 0.0), side()),
                (Closed, v(x0 - 0.03, 0.0, 0.0), side()),
                (Open, v(-0.10, 0.0, 0.0), side()),
            ]
        }
        Family::Press => {
            let top = 0.02 * s;
            let d = 0.01 * a;
            let slant = about(Vector3::y(), -PI / 4.0) * down();
            vec![
                (Open, v(-0.05, 0.0, 0.08), slant),
                (Closed, v(-0.02, 0.0, top + 0.02), slant),
                (Closed, v(0.0, 0.0, top), slant),
                (Closed, v(0.0, 0.0, top - d), slant),
                (Closed, v(-0.02, 0.0, top + 0.02), slant),
                (Open, v(-0.05, 0.0, 0.08), slant),
            ]
        }
    }
}

fn to_trajectory(id: String, poses: &[Pose]) -> Trajectory {
    let wps = poses
        .iter()
        .map(|(g, t, q)| Waypoint::normalized(*g, *t, *q.quaternion()).expect("poses are finite"))
        .collect();
    Trajectory::new(id, wps).expect("templates are non-empty")
}

fn jittered(poses: &[Pose], cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Vec<Pose> {
    let t_noise = Normal::new(0.0, cfg.jitter_translation).expect("finite sigma");
    let r_noise = Normal::new(0.0, cfg.jitter_rotation_deg.to_radians()).expect("finite sigma");
    poses
        .iter()
        .map(|(g, t, q)| {
            let dt = Vector3::new(
                t_noise.sample(rng),
                t_noise.sample(rng),
                t_noise.sample(rng),
            );
            let axis: [f64; 3] = UnitSphere.sample(rng);
            let dq = about(Vector3::from(axis), r_noise.sample(rng));
            (*g, t + dt, dq * q)
        })
        .collect()
}

/// A trajectory unrelated to any family: 4 to 8 waypoints anywhere within
/// 12 cm of the part, random orientations and gripper states.
fn random_poses(rng: &mut ChaCha8Rng) -> Vec<Pose> {
    let n = rng.random_range(4..=8);
    (0..n)
        .map(|_| {
            let g = *Gripper::ALL.choose(rng).expect("non-empty");
            let t = Vector3::new(
                rng.random_range(-0.12..0.12),
                rng.random_range(-0.12..0.12),
                rng.random_range(-0.12..0.12),
            );
            let axis: [f64; 3] = UnitSphere.sample(rng);
            (g, t, about(Vector3::from(axis), rng.random_range(0.0..PI)))
        })
        .collect()
}

fn sample_box(rng: &mut ChaCha8Rng, center: Vector3<f64>, half: Vector3<f64>) -> Vector3<f64> {
    center
        + Vector3::new(
            rng.random_range(-half.x..=half.x),
            rng.random_range(-half.y..=half.y),
            rng.random_range(-half.z..=half.z),
        )
}

fn part_points(family: Family, s: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    let v = Vector3::new;
    (0..n)
        .map(|k| match family {
            Family::PullDown => {
                if k % 5 == 0 {
                    sample_box(rng, v(-0.05 * s, 0.0, -0.01), v(0.01, 0.015, 0.015))
                } else {
                    sample_box(rng, v(0.0, 0.0, 0.0), v(0.06 * s, 0.006, 0.006))
                }
            }
            Family::RotateCw => {
                let ang = rng.random_range(0.0..2.0 * PI);
                let r = 0.022 * s * rng.random::<f64>().sqrt();
                v(
                    r * ang.cos(),
                    r * ang.sin(),
                    rng.random_range(-0.012..0.012) * s,
                )
            }
            Family::RotateCcw => {
                let ang = rng.random_range(0.0..2.0 * PI);
                if k % 4 == 0 {
                    let r = rng.random_range(0.0..0.04 * s);
                    let spoke = (ang / FRAC_PI_2).round() * FRAC_PI_2;
                    v(r * spoke.cos(), r * spoke.sin(), 0.0)
                } else {
                    let tube = rng.random_range(0.0..2.0 * PI);
                    let r = 0.04 * s + 0.005 * tube.cos();
                    v(r * ang.cos(), r * ang.sin(), 0.005 * tube.sin())
                }
            }
            Family::PushIn => sample_box(rng, v(0.0, 0.0, 0.0), v(0.002, 0.035 * s, 0.035 * s)),
            Family::Press => {
                if k % 2 == 0 {
                    sample_box(rng, v(0.0, 0.0, 0.01 * s), v(0.01 * s, 0.01 * s, 0.01 * s))
                } else {
                    sample_box(rng, v(0.0, 0.0, -0.003), v(0.035, 0.035, 0.002))
                }
            }
        })
        .collect()
}

fn make_part(
    family: Family,
    id: &str,
    s: f64,
    cfg: &SyntheticConfig,
    rng: &mut ChaCha8Rng,
) -> PointCloudPart {
    let pts = part_points(family, s, cfg.points_per_part.max(1), rng);
    let mean = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
    let jitter = Normal::new(0.0, 0.001).expect("finite sigma");
    let points = pts
        .into_iter()
        .map(|p| ColoredPoint {
            position: p - mean
                + Vector3::new(jitter.sample(rng), jitter.sample(rng), jitter.sample(rng)),
            rgb: family.color(),
        })
        .collect();
    PointCloudPart::new(id, points).expect("points are finite")
}

/// Builds the benchmark. Manual `k` holds task `k` of every family.
pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticSet> {
    if cfg.tasks_per_family == 0 || cfg.demos_per_task == 0 {
        return Err(invalid(
            "need at least one task per family and one demo per task",
        ));
    }
    if !(0.0..=1.0).contains(&cfg.adversarial_fraction) {
        return Err(invalid("adversarial_fraction must be in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tasks = Vec::new();
    let mut task_family = BTreeMap::new();
    let mut trajectory_family = BTreeMap::new();
    for k in 0..cfg.tasks_per_family {
        for family in Family::ALL {
            let id = format!("{}-{k:02}", family.name());
            let s = rng.random_range(0.85..1.15);
            let a = rng.random_range(0.9..1.1);
            let poses = template(family, s, a);
            let demos: Vec<Trajectory> = (0..cfg.demos_per_task)
                .map(|j| to_trajectory(format!("{id}-d{j}"), &jittered(&poses, cfg, &mut rng)))
                .collect();
            let expert = to_trajectory(format!("{id}-expert"), &poses);
            for d in demos.iter().chain([&expert]) {
                trajectory_family.insert(d.id().to_string(), family);
            }
            let instruction = family
                .instructions()
                .choose(&mut rng)
                .expect("non-empty")
                .to_string();
            tasks.push(Task {
                part: make_part(family, &format!("{id}-part"), s, cfg, &mut rng),
                id: id.clone(),
                manual_id: format!("manual-{k:02}"),
                instruction,
                demos,
                expert_demo: Some(expert),
            });
            task_family.insert(id, family);
        }
    }

    let total = tasks.len() * cfg.demos_per_task;
    let wanted = ((cfg.adversarial_fraction * total as f64).round() as usize).min(tasks.len());
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    order.shuffle(&mut rng);
    let mut adversarial = Vec::with_capacity(wanted);
    for &t in &order[..wanted] {
        let j = rng.random_range(0..cfg.demos_per_task);
        let id = tasks[t].demos[j].id().to_string();
        trajectory_family.remove(&id);
        tasks[t].demos[j] = to_trajectory(id.clone(), &random_poses(&mut rng));
        adversarial.push(id);
    }
    adversarial.sort();

    Ok(SyntheticSet {
        dataset: Dataset { tasks },
        task_family,
        trajectory_family,
        adversarial,
    })
}

//! Fixed-length network inputs: dual-scale occupancy grids, bag-of-words
//! counts and flattened normalized trajectories.

use nalgebra::{Quaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::canonical_sign;
use crate::interp::{interpolate_trajectory, normalize_trajectory, DEFAULT_SPACING};
use crate::types::{Gripper, PointCloudPart, Trajectory, Waypoint};

pub const GRID_SIDE: usize = 10;
pub const GRID_CELLS: usize = GRID_SIDE * GRID_SIDE * GRID_SIDE;
/// Fine and coarse cell edges, meters.
pub const FINE_CELL: f64 = 0.01;
pub const COARSE_CELL: f64 = 0.025;
/// Point-cloud input width.
pub const POINT_FEATURES: usize = 2 * GRID_CELLS;
/// Per-waypoint feature width: gripper one-hot, translation, quaternion.
pub const WAYPOINT_FEATURES: usize = 10;

const STOP_WORDS: &str = include_str!("stopwords.txt");

/// Two 10x10x10 binary grids centered on the part origin, flattened
/// x-major, then y, then z.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancyGrids {
    pub fine: Vec<bool>,
    pub coarse: Vec<bool>,
}

impl OccupancyGrids {
    pub fn cell_index(ix: usize, iy: usize, iz: usize) -> usize {
        (ix * GRID_SIDE + iy) * GRID_SIDE + iz
    }

    /// Network input: fine cells then coarse cells, as 0/1.
    pub fn to_input(&self) -> Vec<f64> {
        self.fine
            .iter()
            .chain(&self.coarse)
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn count(&self) -> (usize, usize) {
        (
            self.fine.iter().filter(|&&b| b).count(),
            self.coarse.iter().filter(|&&b| b).count(),
        )
    }
}

fn cell_of(p: &Vector3<f64>, edge: f64) -> Option<usize> {
    let half = (GRID_SIDE / 2) as f64;
    let mut idx = [0usize; 3];
    for (k, v) in p.iter().enumerate() {
        let c = (v / edge).floor() + half;
        if !(0.0..GRID_SIDE as f64).contains(&c) {
            return None;
        }
        idx[k] = c as usize;
    }
    Some(OccupancyGrids::cell_index(idx[0], idx[1], idx[2]))
}

/// Voxelizes a part-frame point cloud. A cell is set iff some point lies in
/// its half-open cube; points outside a grid's extent are skipped for it.
pub fn voxelize(part: &PointCloudPart) -> OccupancyGrids {
    let mut grids = OccupancyGrids {
        fine: vec![false; GRID_CELLS],
        coarse: vec![false; GRID_CELLS],
    };
    for p in part.positions() {
        if let Some(i) = cell_of(&p, FINE_CELL) {
            grids.fine[i] = true;
        }
        if let Some(i) = cell_of(&p, COARSE_CELL) {
            grids.coarse[i] = true;
        }
    }
    if grids.count() == (0, 0) {
        log::warn!(
            "part {:?}: every point is outside both occupancy grids",
            part.id()
        );
    }
    grids
}

pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

pub fn is_stop_word(word: &str) -> bool {
    STOP_WORDS.lines().any(|s| s == word)
}

/// Sorted, deduplicated instruction vocabulary without stop words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
}

impl Vocabulary {
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        let mut sorted = words.clone();
        sorted.sort();
        sorted.dedup();
        if sorted != words || words.iter().any(|w| is_stop_word(w)) {
            return Err(invalid(
                "vocabulary must be sorted, unique and free of stop words",
            ));
        }
        Ok(Vocabulary { words })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.words.binary_search_by(|w| w.as_str().cmp(word)).ok()
    }
}

pub fn build_vocab<S: AsRef<str>>(corpus: &[S]) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(invalid("cannot build a vocabulary from an empty corpus"));
    }
    let mut words: Vec<String> = corpus
        .iter()
        .flat_map(|s| tokenize(s.as_ref()).collect::<Vec<_>>())
        .filter(|w| !is_stop_word(w))
        .collect();
    words.sort();
    words.dedup();
    if words.is_empty() {
        return Err(invalid("vocabulary is empty after stop-word removal"));
    }
    Ok(Vocabulary { words })
}

/// Token counts over `vocab`; unknown tokens are ignored.
pub fn bag_of_words(text: &str, vocab: &Vocabulary) -> Vec<f64> {
    let mut counts = vec![0.0; vocab.len()];
    for tok in tokenize(text) {
        if let Some(i) = vocab.index_of(&tok) {
            counts[i] += 1.0;
        }
    }
    counts
}

/// Flattened normalized trajectory, `m_norm * 10` values.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajFeature {
    pub values: Vec<f64>,
}

impl TrajFeature {
    pub fn m_norm(&self) -> usize {
        self.values.len() / WAYPOINT_FEATURES
    }

    /// Rebuilds the waypoints encoded in this feature.
    pub fn to_trajectory(&self, id: &str) -> Result<Trajectory> {
        let wps = self
            .values
            .chunks_exact(WAYPOINT_FEATURES)
            .map(|c| {
                let g = (0..3)
                    .max_by(|&a, &b| c[a].total_cmp(&c[b]).then(b.cmp(&a)))
                    .unwrap();
                Waypoint::new(
                    Gripper::ALL[g],
                    Vector3::new(c[3], c[4], c[5]),
                    Quaternion::new(c[9], c[6], c[7], c[8]),
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Trajectory::new(id, wps)?)
    }
}

/// Flattens a trajectory as-is (no resampling); quaternions get `w >= 0`.
pub fn flatten(traj: &Trajectory) -> TrajFeature {
    let mut values = Vec::with_capacity(traj.len() * WAYPOINT_FEATURES);
    for wp in traj.waypoints() {
        let mut onehot = [0.0; 3];
        onehot[wp.gripper.index()] = 1.0;
        values.extend(onehot);
        values.extend(wp.translation.iter());
        let q = canonical_sign(&wp.rotation);
        values.extend([q.i, q.j, q.k, q.w]);
    }
    TrajFeature { values }
}

/// Interpolates at 5 mm, normalizes to `m_norm` waypoints and flattens.
pub fn traj_feature(traj: &Trajectory, m_norm: usize) -> Result<TrajFeature> {
    let smooth = interpolate_trajectory(traj, DEFAULT_SPACING)?;
    let normalized = normalize_trajectory(&smooth, m_norm)?;
    Ok(flatten(&normalized))
}

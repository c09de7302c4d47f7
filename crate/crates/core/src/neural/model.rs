//! The two-tower embedding network and its analytic gradients.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{dot, relu_backward, relu_in_place, Matrix};
use crate::error::{Error, Result};
use crate::featurize::{Vocabulary, POINT_FEATURES, WAYPOINT_FEATURES};

static TRAJ_FORWARD_CALLS: AtomicU64 = AtomicU64::new(0);

/// Number of trajectory-tower forward passes run by this process.
pub fn traj_forward_calls() -> u64 {
    TRAJ_FORWARD_CALLS.load(Ordering::Relaxed)
}

/// Layer widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n_p: usize,
    pub n_l: usize,
    pub n_tau: usize,
    pub h1_p: usize,
    pub h1_l: usize,
    pub h1_tau: usize,
    pub h2_pl: usize,
    pub h2_tau: usize,
    pub m: usize,
}

/// Hidden widths `(h1_p, h1_l, h1_tau, h2_pl, h2_tau, m)`.
pub const DEFAULT_HIDDEN: [usize; 6] = [150, 175, 100, 100, 75, 50];

impl Dims {
    pub fn new(n_p: usize, n_l: usize, n_tau: usize, hidden: [usize; 6]) -> Self {
        let [h1_p, h1_l, h1_tau, h2_pl, h2_tau, m] = hidden;
        Dims {
            n_p,
            n_l,
            n_tau,
            h1_p,
            h1_l,
            h1_tau,
            h2_pl,
            h2_tau,
            m,
        }
    }

    /// Default widths for a vocabulary size and normalized trajectory length.
    pub fn standard(n_l: usize, m_norm: usize) -> Self {
        Dims::new(
            POINT_FEATURES,
            n_l,
            m_norm * WAYPOINT_FEATURES,
            DEFAULT_HIDDEN,
        )
    }
}

/// All weight matrices. The same shape doubles as a gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub w1p: Matrix,
    pub w1l: Matrix,
    pub w2p: Matrix,
    pub w2l: Matrix,
    pub w3pl: Matrix,
    pub w1t: Matrix,
    pub w2t: Matrix,
    pub w3t: Matrix,
}

impl Weights {
    pub const NAMES: [&'static str; 8] = ["w1p", "w1l", "w2p", "w2l", "w3pl", "w1t", "w2t", "w3t"];

    pub fn init(dims: &Dims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = dims;
        Weights {
            w1p: Matrix::glorot(d.h1_p, d.n_p, true, &mut rng),
            w1l: Matrix::glorot(d.h1_l, d.n_l, true, &mut rng),
            w2p: Matrix::glorot(d.h2_pl, d.h1_p, false, &mut rng),
            w2l: Matrix::glorot(d.h2_pl, d.h1_l, false, &mut rng),
            w3pl: Matrix::glorot(d.m, d.h2_pl, false, &mut rng),
            w1t: Matrix::glorot(d.h1_tau, d.n_tau, true, &mut rng),
            w2t: Matrix::glorot(d.h2_tau, d.h1_tau, false, &mut rng),
            w3t: Matrix::glorot(d.m, d.h2_tau, false, &mut rng),
        }
    }

    pub fn matrices(&self) -> [&Matrix; 8] {
        [
            &self.w1p, &self.w1l, &self.w2p, &self.w2l, &self.w3pl, &self.w1t, &self.w2t, &self.w3t,
        ]
    }

    pub fn matrices_mut(&mut self) -> [&mut Matrix; 8] {
        [
            &mut self.w1p,
            &mut self.w1l,
            &mut self.w2p,
            &mut self.w2l,
            &mut self.w3pl,
            &mut self.w1t,
            &mut self.w2t,
            &mut self.w3t,
        ]
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.matrices_mut().into_iter().for_each(|m| m.scale(0.0));
        z
    }

    pub fn add_assign(&mut self, other: &Weights) {
        for (a, b) in self.matrices_mut().into_iter().zip(other.matrices()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.matrices_mut().into_iter().for_each(|m| m.scale(s));
    }

    pub fn is_finite(&self) -> bool {
        self.matrices().iter().all(|m| m.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.matrices()
            .iter()
            .all(|m| m.data.iter().all(|&v| v == 0.0))
    }
}

/// Two-tower network mapping (point cloud, language) and trajectories into
/// a shared non-negative embedding space, plus what it needs to featurize.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub dims: Dims,
    pub vocab: Vocabulary,
    pub m_norm: usize,
    pub seed: u64,
    pub weights: Weights,
}

pub(crate) struct PlForward {
    pub h1p: Vec<f64>,
    pub h1l: Vec<f64>,
    pub h2: Vec<f64>,
    pub out: Vec<f64>,
}

pub(crate) struct TrajForward {
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub out: Vec<f64>,
}

/// One branch of the pre-training stage: `relu(W2 relu(W1 [x; 1]))`.
pub(crate) struct BranchForward {
    pub h1: Vec<f64>,
    pub out: Vec<f64>,
}

fn layer(w: &Matrix, x: &[f64]) -> Vec<f64> {
    let mut h = w.mul_vec(x);
    relu_in_place(&mut h);
    h
}

fn input_layer(w: &Matrix, x: &[f64]) -> Vec<f64> {
    let mut h = w.affine(x);
    relu_in_place(&mut h);
    h
}

fn check(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            actual,
        });
    }
    Ok(())
}

impl EmbeddingModel {
    pub fn new(dims: Dims, vocab: Vocabulary, m_norm: usize, seed: u64) -> Result<Self> {
        check("vocabulary", dims.n_l, vocab.len())?;
        check("trajectory input", dims.n_tau, m_norm * WAYPOINT_FEATURES)?;
        Ok(EmbeddingModel {
            dims,
            vocab,
            m_norm,
            seed,
            weights: Weights::init(&dims, seed),
        })
    }

    /// Point-cloud/language embedding `h3`.
    pub fn forward_pl(&self, points: &[f64], words: &[f64]) -> Result<Vec<f64>> {
        check("point-cloud input", self.dims.n_p, points.len())?;
        check("language input", self.dims.n_l, words.len())?;
        Ok(self.pl_forward(points, words).out)
    }

    /// Trajectory embedding.
    pub fn forward_traj(&self, traj: &[f64]) -> Result<Vec<f64>> {
        check("trajectory input", self.dims.n_tau, traj.len())?;
        Ok(self.traj_forward(traj).out)
    }

    /// Trajectory embedding truncated at `h2_tau`, the space shaped by the
    /// twin pre-training.
    pub fn traj_h2(&self, traj: &[f64]) -> Result<Vec<f64>> {
        check("trajectory input", self.dims.n_tau, traj.len())?;
        Ok(self.traj_branch(traj).out)
    }

    pub(crate) fn pl_forward(&self, points: &[f64], words: &[f64]) -> PlForward {
        let w = &self.weights;
        let h1p = input_layer(&w.w1p, points);
        let h1l = input_layer(&w.w1l, words);
        let mut h2 = w.w2p.mul_vec(&h1p);
        for (a, b) in h2.iter_mut().zip(w.w2l.mul_vec(&h1l)) {
            *a += b;
        }
        relu_in_place(&mut h2);
        let out = layer(&w.w3pl, &h2);
        PlForward { h1p, h1l, h2, out }
    }

    pub(crate) fn traj_forward(&self, traj: &[f64]) -> TrajForward {
        TRAJ_FORWARD_CALLS.fetch_add(1, Ordering::Relaxed);
        let w = &self.weights;
        let h1 = input_layer(&w.w1t, traj);
        let h2 = layer(&w.w2t, &h1);
        let out = layer(&w.w3t, &h2);
        TrajForward { h1, h2, out }
    }

    /// Accumulates `dz`-weighted gradients of the (p, l) tower into `g`.
    pub(crate) fn pl_backward(
        &self,
        fwd: &PlForward,
        points: &[f64],
        words: &[f64],
        dz: &[f64],
        g: &mut Weights,
    ) {
        let w = &self.weights;
        let mut d3 = dz.to_vec();
        relu_backward(&mut d3, &fwd.out);
        g.w3pl.add_outer(&d3, &fwd.h2);
        let mut d2 = w.w3pl.tmul_vec(&d3, w.w3pl.cols);
        relu_backward(&mut d2, &fwd.h2);
        g.w2p.add_outer(&d2, &fwd.h1p);
        g.w2l.add_outer(&d2, &fwd.h1l);
        let mut d1p = w.w2p.tmul_vec(&d2, w.w2p.cols);
        relu_backward(&mut d1p, &fwd.h1p);
        g.w1p.add_outer_affine(&d1p, points);
        let mut d1l = w.w2l.tmul_vec(&d2, w.w2l.cols);
        relu_backward(&mut d1l, &fwd.h1l);
        g.w1l.add_outer_affine(&d1l, words);
    }

    pub(crate) fn traj_backward(
        &self,
        fwd: &TrajForward,
        traj: &[f64],
        dz: &[f64],
        g: &mut Weights,
    ) {
        let w = &self.weights;
        let mut d3 = dz.to_vec();
        relu_backward(&mut d3, &fwd.out);
        g.w3t.add_outer(&d3, &fwd.h2);
        let d2 = w.w3t.tmul_vec(&d3, w.w3t.cols);
        self.traj_h2_backward(&fwd.h1, &fwd.h2, traj, d2, g);
    }

    /// Point branch of the pre-training stage, `relu(W2p h1p)`.
    pub(crate) fn point_branch(&self, points: &[f64]) -> BranchForward {
        let h1 = input_layer(&self.weights.w1p, points);
        let out = layer(&self.weights.w2p, &h1);
        BranchForward { h1, out }
    }

    /// Language branch of the pre-training stage, `relu(W2l h1l)`.
    pub(crate) fn language_branch(&self, words: &[f64]) -> BranchForward {
        let h1 = input_layer(&self.weights.w1l, words);
        let out = layer(&self.weights.w2l, &h1);
        BranchForward { h1, out }
    }

    /// Trajectory tower truncated at `h2_tau`.
    pub(crate) fn traj_branch(&self, traj: &[f64]) -> BranchForward {
        let h1 = input_layer(&self.weights.w1t, traj);
        let out = layer(&self.weights.w2t, &h1);
        BranchForward { h1, out }
    }

    pub(crate) fn point_branch_backward(
        &self,
        fwd: &BranchForward,
        points: &[f64],
        dz: &[f64],
        g: &mut Weights,
    ) {
        let w = &self.weights;
        let mut d2 = dz.to_vec();
        relu_backward(&mut d2, &fwd.out);
        g.w2p.add_outer(&d2, &fwd.h1);
        let mut d1 = w.w2p.tmul_vec(&d2, w.w2p.cols);
        relu_backward(&mut d1, &fwd.h1);
        g.w1p.add_outer_affine(&d1, points);
    }

    pub(crate) fn language_branch_backward(
        &self,
        fwd: &BranchForward,
        words: &[f64],
        dz: &[f64],
        g: &mut Weights,
    ) {
        let w = &self.weights;
        let mut d2 = dz.to_vec();
        relu_backward(&mut d2, &fwd.out);
        g.w2l.add_outer(&d2, &fwd.h1);
        let mut d1 = w.w2l.tmul_vec(&d2, w.w2l.cols);
        relu_backward(&mut d1, &fwd.h1);
        g.w1l.add_outer_affine(&d1, words);
    }

    pub(crate) fn traj_branch_backward(
        &self,
        fwd: &BranchForward,
        traj: &[f64],
        dz: &[f64],
        g: &mut Weights,
    ) {
        self.traj_h2_backward(&fwd.h1, &fwd.out, traj, dz.to_vec(), g);
    }

    fn traj_h2_backward(
        &self,
        h1: &[f64],
        h2: &[f64],
        traj: &[f64],
        mut d2: Vec<f64>,
        g: &mut Weights,
    ) {
        let w = &self.weights;
        relu_backward(&mut d2, h2);
        g.w2t.add_outer(&d2, h1);
        let mut d1 = w.w2t.tmul_vec(&d2, w.w2t.cols);
        relu_backward(&mut d1, h1);
        g.w1t.add_outer_affine(&d1, traj);
    }
}

/// Dot-product similarity.
pub fn similarity(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b)
}

/// One fine-tuning example: inputs of a task, its positive trajectory, the
/// mined negative and their DTW-MT distance.
#[derive(Debug, Clone, Copy)]
pub struct Triple<'a> {
    pub points: &'a [f64],
    pub words: &'a [f64],
    pub positive: &'a [f64],
    pub negative: &'a [f64],
    pub delta: f64,
}

/// `|Δ + sim(z, z_neg) - sim(z, z_pos)|_+`.
pub fn hinge(delta: f64, sim_negative: f64, sim_positive: f64) -> f64 {
    (delta + sim_negative - sim_positive).max(0.0)
}

/// Loss-augmented hinge loss of one triple on the joint embedding.
pub fn loss_h3(model: &EmbeddingModel, t: &Triple) -> f64 {
    let z = model.pl_forward(t.points, t.words).out;
    let zp = model.traj_forward(t.positive).out;
    let zn = model.traj_forward(t.negative).out;
    hinge(t.delta, dot(&z, &zn), dot(&z, &zp))
}

/// Mean batch loss and its gradient with respect to every weight matrix.
/// Triples with an inactive hinge contribute exactly zero.
pub fn grad_loss_h3(model: &EmbeddingModel, batch: &[Triple]) -> (f64, Weights) {
    let mut g = model.weights.zeros_like();
    if batch.is_empty() {
        return (0.0, g);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for t in batch {
        let pl = model.pl_forward(t.points, t.words);
        let pos = model.traj_forward(t.positive);
        let neg = model.traj_forward(t.negative);
        let loss = hinge(t.delta, dot(&pl.out, &neg.out), dot(&pl.out, &pos.out));
        if loss <= 0.0 {
            continue;
        }
        total += loss;
        let dz: Vec<f64> = neg
            .out
            .iter()
            .zip(&pos.out)
            .map(|(n, p)| (n - p) * scale)
            .collect();
        let dpos: Vec<f64> = pl.out.iter().map(|v| -v * scale).collect();
        let dneg: Vec<f64> = pl.out.iter().map(|v| v * scale).collect();
        model.pl_backward(&pl, t.points, t.words, &dz, &mut g);
        model.traj_backward(&pos, t.positive, &dpos, &mut g);
        model.traj_backward(&neg, t.negative, &dneg, &mut g);
    }
    (total * scale, g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(n: usize) -> Vocabulary {
        Vocabulary::from_words((0..n).map(|i| format!("w{i:02}")).collect()).unwrap()
    }

    fn unit_model() -> EmbeddingModel {
        // One unit per layer, 1-dim inputs, hand-set weights.
        let dims = Dims::new(1, 1, 10, [1, 1, 1, 1, 1, 1]);
        let mut m = EmbeddingModel::new(dims, vocab(1), 1, 0).unwrap();
        let w = &mut m.weights;
        w.w1p.data = vec![2.0, 0.5];
        w.w1l.data = vec![-1.0, 3.0];
        w.w2p.data = vec![1.5];
        w.w2l.data = vec![0.5];
        w.w3pl.data = vec![2.0];
        w.w1t.data = vec![1.0; 11];
        w.w2t.data = vec![0.5];
        w.w3t.data = vec![3.0];
        m
    }

    #[test]
    fn zero_inputs_zero_bias_give_zero() {
        let dims = Dims::new(4, 3, 10, [3, 3, 2, 2, 2, 2]);
        let m = EmbeddingModel::new(dims, vocab(3), 1, 5).unwrap();
        assert_eq!(m.forward_pl(&[0.0; 4], &[0.0; 3]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(m.forward_traj(&[0.0; 10]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn unit_network_by_hand() {
        let m = unit_model();
        // h1p = relu(2*1 + 0.5) = 2.5; h1l = relu(-1*2 + 3) = 1
        // h2 = relu(1.5*2.5 + 0.5*1) = 4.25; h3 = relu(2*4.25) = 8.5
        assert_eq!(m.forward_pl(&[1.0], &[2.0]).unwrap(), vec![8.5]);
        // h1 = relu(sum(x) + 1) with x = 0.1 * (1..=10) -> 5.5 + 1 = 6.5
        // h2 = 3.25, h3 = 9.75
        let x: Vec<f64> = (1..=10).map(|i| 0.1 * i as f64).collect();
        let z = m.forward_traj(&x).unwrap()[0];
        assert!((z - 9.75).abs() < 1e-12);
        // Negative pre-activation is clipped.
        assert_eq!(m.forward_pl(&[-1.0], &[4.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn output_shape_and_dimension_errors() {
        let dims = Dims::new(20, 4, 30, [6, 5, 4, 3, 3, 7]);
        let m = EmbeddingModel::new(dims, vocab(4), 3, 1).unwrap();
        let z = m.forward_pl(&[1.0; 20], &[1.0; 4]).unwrap();
        assert_eq!(z.len(), 7);
        assert!(z.iter().all(|&v| v >= 0.0));
        assert_eq!(m.forward_traj(&[0.3; 30]).unwrap().len(), 7);
        assert!(matches!(
            m.forward_pl(&[1.0; 19], &[1.0; 4]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(m.forward_traj(&[0.0; 29]).is_err());
        assert!(EmbeddingModel::new(dims, vocab(5), 3, 1).is_err());
    }

    #[test]
    fn hinge_examples() {
        assert_eq!(hinge(0.0, 1.0, 1.0), 0.0);
        assert_eq!(hinge(1.0, 0.2, 3.0), 0.0);
        assert_eq!(hinge(2.0, 0.5, 1.0), 1.5);
    }

    #[test]
    fn same_trajectory_as_negative_costs_nothing() {
        let dims = Dims::new(5, 2, 10, [3, 3, 3, 2, 2, 2]);
        let m = EmbeddingModel::new(dims, vocab(2), 1, 9).unwrap();
        let traj = [0.1; 10];
        let t = Triple {
            points: &[1.0, 0.0, 1.0, 0.0, 0.0],
            words: &[1.0, 2.0],
            positive: &traj,
            negative: &traj,
            delta: 0.0,
        };
        assert_eq!(loss_h3(&m, &t), 0.0);
        let (loss, g) = grad_loss_h3(&m, &[t]);
        assert_eq!(loss, 0.0);
        assert!(g.is_zero());
    }

    #[test]
    fn branch_gradients_match_finite_differences() {
        let dims = Dims::new(5, 3, 10, [4, 3, 4, 3, 3, 2]);
        let mut m = EmbeddingModel::new(dims, vocab(3), 1, 21).unwrap();
        // Positive first-layer biases keep units away from the ReLU kink.
        for w in [&mut m.weights.w1p, &mut m.weights.w1l, &mut m.weights.w1t] {
            for r in 0..w.rows {
                w.set(r, w.cols - 1, 0.3);
            }
        }
        let points = [1.0, 0.0, 1.0, 1.0, 0.0];
        let words = [1.0, 2.0, 0.0];
        let traj = [0.1, -0.2, 0.3, 0.05, 0.0, 0.2, -0.1, 0.4, 0.3, 0.2];
        let dz = [0.7, -0.4, 1.1];
        let objective = |m: &EmbeddingModel| {
            dot(&m.point_branch(&points).out, &dz)
                + dot(&m.language_branch(&words).out, &dz)
                + dot(&m.traj_branch(&traj).out, &dz)
        };
        let mut g = m.weights.zeros_like();
        let p = m.point_branch(&points);
        m.point_branch_backward(&p, &points, &dz, &mut g);
        let l = m.language_branch(&words);
        m.language_branch_backward(&l, &words, &dz, &mut g);
        let t = m.traj_branch(&traj);
        m.traj_branch_backward(&t, &traj, &dz, &mut g);
        let h = 1e-6;
        for (k, name) in Weights::NAMES.iter().enumerate() {
            for idx in 0..m.weights.matrices()[k].data.len() {
                let mut plus = m.clone();
                plus.weights.matrices_mut()[k].data[idx] += h;
                let mut minus = m.clone();
                minus.weights.matrices_mut()[k].data[idx] -= h;
                let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let analytic = g.matrices()[k].data[idx];
                assert!(
                    (numeric - analytic).abs() < 1e-6,
                    "{name}[{idx}]: {numeric} vs {analytic}"
                );
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let dims = Dims::new(8, 3, 10, [4, 4, 4, 3, 3, 3]);
        let a = EmbeddingModel::new(dims, vocab(3), 1, 42).unwrap();
        let b = EmbeddingModel::new(dims, vocab(3), 1, 42).unwrap();
        assert_eq!(a, b);
        let x = [0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0];
        let out1 = a.forward_pl(&x, &[1.0, 0.0, 2.0]).unwrap();
        let out2 = b.forward_pl(&x, &[1.0, 0.0, 2.0]).unwrap();
        assert_eq!(
            out1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            out2.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}

use parttransfer::featurize::Vocabulary;
use parttransfer::neural::model::{grad_loss_h3, loss_h3, Triple};
use parttransfer::neural::{Dims, EmbeddingModel, Weights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Toy {
    points: Vec<Vec<f64>>,
    words: Vec<Vec<f64>>,
    pos: Vec<Vec<f64>>,
    neg: Vec<Vec<f64>>,
    delta: Vec<f64>,
}

impl Toy {
    fn triples(&self) -> Vec<Triple<'_>> {
        (0..self.delta.len())
            .map(|i| Triple {
                points: &self.points[i],
                words: &self.words[i],
                positive: &self.pos[i],
                negative: &self.neg[i],
                delta: self.delta[i],
            })
            .collect()
    }
}

fn toy(seed: u64, batch: usize, delta: f64) -> (EmbeddingModel, Toy) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hidden = [0; 6].map(|_| rng.random_range(2..=6));
    let (n_p, n_l, n_t) = (
        rng.random_range(2..=6),
        rng.random_range(1..=4),
        10 * rng.random_range(1..=2),
    );
    let vocab = Vocabulary::from_words((0..n_l).map(|i| format!("w{i}")).collect()).unwrap();
    let model =
        EmbeddingModel::new(Dims::new(n_p, n_l, n_t, hidden), vocab, n_t / 10, seed).unwrap();
    let mut v = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let data = Toy {
        points: (0..batch).map(|_| v(n_p)).collect(),
        words: (0..batch).map(|_| v(n_l)).collect(),
        pos: (0..batch).map(|_| v(n_t)).collect(),
        neg: (0..batch).map(|_| v(n_t)).collect(),
        delta: vec![delta; batch],
    };
    (model, data)
}

fn mean_loss(model: &EmbeddingModel, batch: &[Triple]) -> f64 {
    batch.iter().map(|t| loss_h3(model, t)).sum::<f64>() / batch.len() as f64
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
    panic!("entry out of range")
}

fn entry(w: &Weights, mut k: usize) -> f64 {
    for m in w.matrices() {
        if k < m.data.len() {
            return m.data[k];
        }
        k -= m.data.len();
    }
    panic!("entry out of range")
}

#[test]
fn gradient_matches_central_differences() {
    let eps = 1e-4;
    let mut checked = 0;
    for seed in 0..20 {
        let (model, data) = toy(seed, 3, 50.0);
        let batch = data.triples();
        let (loss, g) = grad_loss_h3(&model, &batch);
        assert!((loss - mean_loss(&model, &batch)).abs() < 1e-12);
        for k in 0..entries(&g) {
            let mut plus = model.clone();
            *entry_mut(&mut plus.weights, k) += eps;
            let mut minus = model.clone();
            *entry_mut(&mut minus.weights, k) -= eps;
            let fd = (mean_loss(&plus, &batch) - mean_loss(&minus, &batch)) / (2.0 * eps);
            let an = entry(&g, k);
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1.0);
            assert!(
                rel < 1e-4,
                "seed {seed} entry {k}: fd {fd} vs analytic {an}"
            );
            checked += 1;
        }
    }
    assert!(checked > 1000);
}

#[test]
fn batch_gradient_is_mean_of_singletons() {
    for seed in 0..10 {
        let (model, data) = toy(seed, 4, 50.0);
        let batch = data.triples();
        let (_, whole) = grad_loss_h3(&model, &batch);
        let mut sum = whole.zeros_like();
        for t in &batch {
            sum.add_assign(&grad_loss_h3(&model, std::slice::from_ref(t)).1);
        }
        sum.scale(1.0 / batch.len() as f64);
        for k in 0..entries(&whole) {
            assert!((entry(&whole, k) - entry(&sum, k)).abs() < 1e-10);
        }
    }
}

#[test]
fn inactive_hinge_gives_zero_gradient() {
    for seed in 0..10 {
        let (model, mut data) = toy(seed, 3, 0.0);
        data.neg = data.pos.clone();
        let (loss, g) = grad_loss_h3(&model, &data.triples());
        assert_eq!(loss, 0.0);
        assert!(g.is_zero());
        data.delta = vec![-1.0; 3];
        data.neg = data
            .points
            .iter()
            .map(|_| vec![0.0; data.pos[0].len()])
            .collect();
        let (loss, g) = grad_loss_h3(&model, &data.triples());
        assert_eq!(loss, 0.0);
        assert!(g.is_zero());
    }
}

//! Sparse de-noising autoencoder used to initialize first-layer weights.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adadelta::AdaDelta;
use super::matrix::{relu_backward, relu_in_place, Matrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DaeConfig {
    pub epochs: usize,
    pub minibatch: usize,
    /// Probability of zeroing each input component.
    pub mask_prob: f64,
    /// L1 weight on hidden activations.
    pub l1: f64,
    pub rho: f64,
    pub eps: f64,
    pub seed: u64,
}

/// Trained encoder plus the per-epoch mean loss.
#[derive(Debug, Clone)]
pub struct DaeOutcome {
    pub encoder: Matrix,
    pub epoch_loss: Vec<f64>,
}

struct Autoencoder {
    encoder: Matrix,
    decoder: Matrix,
}

impl Autoencoder {
    fn encode(&self, x: &[f64]) -> Vec<f64> {
        let mut h = self.encoder.affine(x);
        relu_in_place(&mut h);
        h
    }

    fn decode(&self, h: &[f64]) -> Vec<f64> {
        self.decoder.affine(h)
    }
}

/// Squared reconstruction error of `x` through the encoder/decoder pair,
/// without corruption.
pub fn reconstruction_error(encoder: &Matrix, decoder: &Matrix, x: &[f64]) -> f64 {
    let ae = Autoencoder {
        encoder: encoder.clone(),
        decoder: decoder.clone(),
    };
    let xr = ae.decode(&ae.encode(x));
    0.5 * xr
        .iter()
        .zip(x)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
}

/// Loss and gradients for one clean/corrupted pair, scaled by `scale`.
fn accumulate(
    ae: &Autoencoder,
    clean: &[f64],
    corrupted: &[f64],
    l1: f64,
    scale: f64,
    g_enc: &mut Matrix,
    g_dec: &mut Matrix,
) -> f64 {
    let h = ae.encode(corrupted);
    let xr = ae.decode(&h);
    let diff: Vec<f64> = xr.iter().zip(clean).map(|(a, b)| a - b).collect();
    let loss = 0.5 * diff.iter().map(|d| d * d).sum::<f64>() + l1 * h.iter().sum::<f64>();
    let d_out: Vec<f64> = diff.iter().map(|d| d * scale).collect();
    g_dec.add_outer_affine(&d_out, &h);
    let mut dh = ae.decoder.tmul_vec(&d_out, h.len());
    dh.iter_mut().for_each(|v| *v += l1 * scale);
    relu_backward(&mut dh, &h);
    g_enc.add_outer_affine(&dh, corrupted);
    loss
}

/// Trains `encoder` (hidden x (inputs + 1)) to reconstruct `inputs` from
/// masked copies through a linear decoder, which is dropped afterwards.
pub fn pretrain_dae(encoder: &Matrix, inputs: &[Vec<f64>], cfg: &DaeConfig) -> DaeOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let hidden = encoder.rows;
    let n_in = encoder.cols - 1;
    let mut ae = Autoencoder {
        encoder: encoder.clone(),
        decoder: Matrix::glorot(n_in, hidden, true, &mut rng),
    };
    let mut opt = AdaDelta::new([&ae.encoder, &ae.decoder], cfg.rho, cfg.eps);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.minibatch.max(1)) {
            let mut g_enc = ae.encoder.zeros_like();
            let mut g_dec = ae.decoder.zeros_like();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let clean = &inputs[i];
                let corrupted: Vec<f64> = if cfg.mask_prob > 0.0 {
                    clean
                        .iter()
                        .map(|&v| {
                            if rng.random::<f64>() < cfg.mask_prob {
                                0.0
                            } else {
                                v
                            }
                        })
                        .collect()
                } else {
                    clean.clone()
                };
                total += accumulate(
                    &ae, clean, &corrupted, cfg.l1, scale, &mut g_enc, &mut g_dec,
                );
            }
            opt.step([&mut ae.encoder, &mut ae.decoder], [&g_enc, &g_dec]);
        }
        epoch_loss.push(if inputs.is_empty() {
            0.0
        } else {
            total / inputs.len() as f64
        });
    }
    DaeOutcome {
        encoder: ae.encoder,
        epoch_loss,
    }
}

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, adam_step, bce, Activation, DenseNet, OptimState};
use crate::rng;

/// Encoder widths after the input; the decoder mirrors them.
pub const ENCODER_WIDTHS: [usize; 4] = [256, 128, 64, 32];
pub const CODE_DIM: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoencoderConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: nn::DEFAULT_LEARNING_RATE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratificationAutoencoder {
    pub encoder: DenseNet,
    pub decoder: DenseNet,
    /// Mean reconstruction BCE per epoch.
    pub loss_curve: Vec<f64>,
}

pub fn init_autoencoder(vocab: usize, seed: u64) -> Result<(DenseNet, DenseNet)> {
    let mut enc_dims = vec![vocab];
    enc_dims.extend(ENCODER_WIDTHS);
    let dec_dims: Vec<usize> = enc_dims.iter().rev().copied().collect();
    let encoder = DenseNet::new(
        &enc_dims,
        &[Activation::Tanh; ENCODER_WIDTHS.len()],
        rng::derive_seed(seed, 1),
    )?;
    let mut dec_acts = vec![Activation::Tanh; ENCODER_WIDTHS.len() - 1];
    dec_acts.push(Activation::Sigmoid);
    let decoder = DenseNet::new(&dec_dims, &dec_acts, rng::derive_seed(seed, 2))?;
    Ok((encoder, decoder))
}

/// Trains the `V → 256 → 128 → 64 → 32 → … → V` autoencoder on binary
/// covariates with a reconstruction cross-entropy.
pub fn train_stratification_autoencoder(
    covariates: ArrayView2<f64>,
    seed: u64,
    cfg: &AutoencoderConfig,
) -> Result<StratificationAutoencoder> {
    let (n, vocab) = covariates.dim();
    if n < 2 {
        return Err(Error::InsufficientPoints { found: n, required: 2 });
    }
    if vocab == 0 {
        return Err(Error::Precondition("covariate vocabulary is empty".into()));
    }
    let (encoder, decoder) = init_autoencoder(vocab, seed)?;
    let split = encoder.layers.len();
    // train as one stack, split afterwards
    let mut stack = DenseNet {
        layers: encoder.layers.iter().chain(&decoder.layers).cloned().collect(),
        seed,
    };
    let mut state = OptimState::new(&stack, cfg.learning_rate);
    let mut order_rng = rng::seeded(rng::derive_seed(seed, 3));
    let data = covariates.to_owned();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for batch_idx in nn::epoch_batches(n, cfg.batch_size, &mut order_rng) {
            let batch = nn::gather_rows(&data, &batch_idx);
            let trace = stack.forward_trace(batch.view())?;
            let (loss, upstream) = bce(trace.output().view(), batch.view())?;
            if !loss.is_finite() {
                return Err(Error::TrainingDivergence(format!(
                    "autoencoder loss non-finite at epoch {epoch}"
                )));
            }
            total += loss * batch_idx.len() as f64;
            let (grads, _) = stack.backward(&trace, upstream.view())?;
            adam_step(&mut stack, &grads, &mut state)?;
        }
        let mean = total / n as f64;
        log::debug!("stratification autoencoder epoch {epoch}: bce {mean:.5}");
        loss_curve.push(mean);
    }

    let mut layers = stack.layers;
    let decoder_layers = layers.split_off(split);
    Ok(StratificationAutoencoder {
        encoder: DenseNet {
            layers,
            seed: encoder.seed,
        },
        decoder: DenseNet {
            layers: decoder_layers,
            seed: decoder.seed,
        },
        loss_curve,
    })
}

/// 32-dimensional codes, one row per patient.
pub fn embed(encoder: &DenseNet, covariates: ArrayView2<f64>) -> Result<Array2<f64>> {
    encoder.forward(covariates)
}

/// Mean reconstruction cross-entropy of `covariates`.
pub fn reconstruction_bce(ae: &StratificationAutoencoder, covariates: ArrayView2<f64>) -> Result<f64> {
    let recon = ae.decoder.forward(ae.encoder.forward(covariates)?.view())?;
    Ok(bce(recon.view(), covariates)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_blocks(n: usize) -> Array2<f64> {
        // patients alternate between codes 0..5 and codes 5..10
        Array2::from_shape_fn((n, 10), |(i, j)| if (j < 5) == (i % 2 == 0) { 1.0 } else { 0.0 })
    }

    #[test]
    fn dims_are_mirrored() {
        let (enc, dec) = init_autoencoder(40, 1).unwrap();
        assert_eq!(enc.dims(), vec![40, 256, 128, 64, 32]);
        assert_eq!(dec.dims(), vec![32, 64, 128, 256, 40]);
        assert_eq!(dec.activations().last(), Some(&Activation::Sigmoid));
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let x = two_blocks(6);
        let cfg = AutoencoderConfig { epochs: 0, ..Default::default() };
        let ae = train_stratification_autoencoder(x.view(), 5, &cfg).unwrap();
        let (enc, dec) = init_autoencoder(10, 5).unwrap();
        assert_eq!(ae.encoder, enc);
        assert_eq!(ae.decoder, dec);
        assert!(ae.loss_curve.is_empty());
    }

    #[test]
    fn separable_blocks_reconstruct() {
        let x = two_blocks(30);
        let cfg = AutoencoderConfig { epochs: 200, batch_size: 10, ..Default::default() };
        let ae = train_stratification_autoencoder(x.view(), 11, &cfg).unwrap();
        let loss = reconstruction_bce(&ae, x.view()).unwrap();
        assert!(loss < 0.1, "reconstruction bce {loss}");
        assert_eq!(ae.loss_curve.len(), 200);
    }

    #[test]
    fn training_is_deterministic() {
        let x = two_blocks(12);
        let cfg = AutoencoderConfig { epochs: 3, batch_size: 4, ..Default::default() };
        let a = train_stratification_autoencoder(x.view(), 9, &cfg).unwrap();
        let b = train_stratification_autoencoder(x.view(), 9, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn embeddings_are_32_dim_and_finite() {
        let x = two_blocks(4);
        let (enc, _) = init_autoencoder(10, 2).unwrap();
        let mut rows = x.clone();
        rows.row_mut(3).fill(0.0);
        let codes = embed(&enc, rows.view()).unwrap();
        assert_eq!(codes.ncols(), CODE_DIM);
        assert!(codes.iter().all(|v| v.is_finite()));
        assert_eq!(codes.row(0), codes.row(2));
        assert!(embed(&enc, Array2::zeros((2, 9)).view()).is_err());
    }

    #[test]
    fn too_few_patients_rejected() {
        let x = Array2::zeros((1, 3));
        assert!(train_stratification_autoencoder(x.view(), 0, &AutoencoderConfig::default()).is_err());
    }
}

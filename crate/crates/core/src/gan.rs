//! GAN over aligned series with an autoencoder decoder head and minibatch
//! averaging in the discriminator.
//!
//! Training runs in two phases. First an autoencoder (`L → L`, tanh
//! reconstruction, MSE) is fitted to the real series. Then the generator
//! maps noise to the autoencoder's code space and the decoder turns codes
//! into series; the discriminator sees each series concatenated with the
//! mean of its minibatch. The encoder is frozen after pretraining and the
//! decoder is fine-tuned along with the generator.

use ndarray::{s, concatenate, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coredata::{AlignedSeries, NormBounds, SeriesLayout, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::nn::{self, adam_step, bce, mse, Activation, DenseNet, Gradients, OptimState};
use crate::rng;

pub const ADVERSARIAL_LEARNING_RATE: f64 = 3e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Batch size used when the training set is smaller than
    /// `small_cluster_threshold`.
    pub small_batch_size: usize,
    pub small_cluster_threshold: usize,
    pub ae_pretrain_epochs: usize,
    pub ae_learning_rate: f64,
    pub generator_learning_rate: f64,
    pub discriminator_learning_rate: f64,
    /// Adam first-moment decay for the adversarial phase.
    pub adam_beta1: f64,
    pub discriminator_hidden: Activation,
    pub noise_dim: usize,
    pub seed: u64,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 10,
            small_batch_size: 5,
            small_cluster_threshold: 50,
            ae_pretrain_epochs: 100,
            ae_learning_rate: nn::DEFAULT_LEARNING_RATE,
            generator_learning_rate: ADVERSARIAL_LEARNING_RATE,
            discriminator_learning_rate: ADVERSARIAL_LEARNING_RATE,
            adam_beta1: 0.5,
            discriminator_hidden: Activation::Relu,
            noise_dim: 16,
            seed: 0,
        }
    }
}

impl GanTrainConfig {
    pub fn effective_batch_size(&self, n: usize) -> usize {
        if n < self.small_cluster_threshold {
            self.small_batch_size
        } else {
            self.batch_size
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.small_batch_size == 0 || self.noise_dim == 0 {
            return Err(Error::Precondition(
                "batch sizes and noise dimension must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Autoencoder reconstruction MSE per pretraining epoch.
    pub ae_loss: Vec<f64>,
    /// One entry per minibatch.
    pub discriminator_loss: Vec<f64>,
    pub generator_loss: Vec<f64>,
    pub batch_size: usize,
}

impl TrainingLog {
    /// `phase,step,loss` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("phase,step,loss\n");
        for (name, losses) in [
            ("autoencoder", &self.ae_loss),
            ("discriminator", &self.discriminator_loss),
            ("generator", &self.generator_loss),
        ] {
            for (i, l) in losses.iter().enumerate() {
                out.push_str(&format!("{name},{i},{l}\n"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanOptimizers {
    pub generator: OptimState,
    pub decoder: OptimState,
    pub discriminator: OptimState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanModel {
    pub format_version: u32,
    pub layout: SeriesLayout,
    pub noise_dim: usize,
    pub ae_encoder: DenseNet,
    pub ae_decoder: DenseNet,
    pub generator: DenseNet,
    pub discriminator: DenseNet,
    pub seed: u64,
    pub log: TrainingLog,
    pub optimizers: Option<GanOptimizers>,
    /// Normalization of the training data, when known.
    #[serde(default)]
    pub bounds: Option<NormBounds>,
}

impl GanModel {
    /// Freshly initialized networks for series of `layout`:
    /// encoder `L → L`, decoder `L → L`, generator `noise → L → L`,
    /// discriminator `2L → 2L → L → 1`.
    pub fn init(layout: SeriesLayout, cfg: &GanTrainConfig) -> Result<Self> {
        let (noise_dim, seed, hidden) = (cfg.noise_dim, cfg.seed, cfg.discriminator_hidden);
        let len = layout.len();
        let (ae_encoder, ae_decoder) = init_series_autoencoder(len, seed)?;
        Ok(Self {
            format_version: FORMAT_VERSION,
            layout,
            noise_dim,
            ae_encoder,
            ae_decoder,
            generator: DenseNet::new(
                &[noise_dim, len, len],
                &[Activation::Tanh, Activation::Tanh],
                rng::derive_seed(seed, 23),
            )?,
            discriminator: DenseNet::new(
                &[2 * len, 2 * len, len, 1],
                &[hidden, hidden, Activation::Sigmoid],
                rng::derive_seed(seed, 24),
            )?,
            seed,
            log: TrainingLog::default(),
            optimizers: None,
            bounds: None,
        })
    }

    /// Decoded (unclamped) series for a noise batch.
    pub fn synthesize(&self, noise: ArrayView2<f64>) -> Result<Array2<f64>> {
        let codes = self.generator.forward(noise)?;
        self.ae_decoder.forward(codes.view())
    }

    pub fn validate(&self) -> Result<()> {
        let len = self.layout.len();
        let ok = self.ae_encoder.dims() == [len, len]
            && self.ae_decoder.dims() == [len, len]
            && self.generator.in_dim() == self.noise_dim
            && self.generator.out_dim() == len
            && self.discriminator.in_dim() == 2 * len
            && self.discriminator.out_dim() == 1;
        if !ok {
            return Err(Error::ShapeMismatch("GAN network dimensions do not chain".into()));
        }
        let finite = [&self.ae_encoder, &self.ae_decoder, &self.generator, &self.discriminator]
            .iter()
            .all(|n| n.is_finite());
        if !finite {
            return Err(Error::TrainingDivergence("non-finite GAN parameters".into()));
        }
        Ok(())
    }
}

fn init_series_autoencoder(len: usize, seed: u64) -> Result<(DenseNet, DenseNet)> {
    Ok((
        DenseNet::new(&[len, len], &[Activation::Tanh], rng::derive_seed(seed, 21))?,
        DenseNet::new(&[len, len], &[Activation::Tanh], rng::derive_seed(seed, 22))?,
    ))
}

pub fn series_matrix(series: &[AlignedSeries], layout: SeriesLayout) -> Result<Array2<f64>> {
    let len = layout.len();
    let mut m = Array2::zeros((series.len(), len));
    for (i, s) in series.iter().enumerate() {
        s.validate(layout)?;
        m.row_mut(i).assign(&ndarray::ArrayView1::from(&s.values));
    }
    Ok(m)
}

/// Appends the batch mean to every row: `B × d → B × 2d`.
pub fn minibatch_average_features(batch: ArrayView2<f64>) -> Result<Array2<f64>> {
    if batch.nrows() == 0 {
        return Err(Error::EmptyInput("minibatch"));
    }
    let mean = batch.mean_axis(Axis(0)).expect("non-empty");
    let repeated = mean
        .broadcast((batch.nrows(), batch.ncols()))
        .expect("row broadcast");
    Ok(concatenate![Axis(1), batch, repeated])
}

/// Gradient w.r.t. the original rows given the gradient of the augmented
/// rows: `∂xᵢ = g[i, :d] + (1/B) Σⱼ g[j, d:]`.
pub fn minibatch_average_backward(grad: ArrayView2<f64>) -> Array2<f64> {
    let d = grad.ncols() / 2;
    let b = grad.nrows() as f64;
    let mean_part = grad.slice(s![.., d..]).sum_axis(Axis(0)) / b;
    let mut out = grad.slice(s![.., ..d]).to_owned();
    out += &mean_part;
    out
}

fn noise_batch(rows: usize, dim: usize, rng: &mut rng::Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, dim), |_| StandardNormal.sample(rng))
}

/// Discriminator BCE on a real and a fake batch (labels 1 and 0) and its
/// parameter gradients.
pub fn discriminator_step_grads(
    disc: &DenseNet,
    real: ArrayView2<f64>,
    fake: ArrayView2<f64>,
) -> Result<(f64, Gradients)> {
    let real_in = minibatch_average_features(real)?;
    let fake_in = minibatch_average_features(fake)?;
    let real_trace = disc.forward_trace(real_in.view())?;
    let fake_trace = disc.forward_trace(fake_in.view())?;
    let ones = Array2::ones((real.nrows(), 1));
    let zeros = Array2::zeros((fake.nrows(), 1));
    let (loss_real, up_real) = bce(real_trace.output().view(), ones.view())?;
    let (loss_fake, up_fake) = bce(fake_trace.output().view(), zeros.view())?;
    let (mut grads, _) = disc.backward(&real_trace, up_real.view())?;
    let (fake_grads, _) = disc.backward(&fake_trace, up_fake.view())?;
    grads.add_assign(&fake_grads);
    Ok((loss_real + loss_fake, grads))
}

/// Non-saturating generator loss `−mean log D(dec(G(z)))` and gradients for
/// the generator and decoder.
pub fn generator_step_grads(
    generator: &DenseNet,
    decoder: &DenseNet,
    disc: &DenseNet,
    noise: ArrayView2<f64>,
) -> Result<(f64, Gradients, Gradients)> {
    let gen_trace = generator.forward_trace(noise)?;
    let dec_trace = decoder.forward_trace(gen_trace.output().view())?;
    let aug = minibatch_average_features(dec_trace.output().view())?;
    let disc_trace = disc.forward_trace(aug.view())?;
    let ones = Array2::ones((noise.nrows(), 1));
    let (loss, upstream) = bce(disc_trace.output().view(), ones.view())?;
    let (_, d_aug) = disc.backward(&disc_trace, upstream.view())?;
    let d_series = minibatch_average_backward(d_aug.view());
    let (dec_grads, d_codes) = decoder.backward(&dec_trace, d_series.view())?;
    let (gen_grads, _) = generator.backward(&gen_trace, d_codes.view())?;
    Ok((loss, gen_grads, dec_grads))
}

fn check_finite(loss: f64, what: &str, epoch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::TrainingDivergence(format!("{what} loss non-finite at epoch {epoch}")))
    }
}

/// Fits the series autoencoder; returns encoder, decoder and per-epoch MSE.
pub fn pretrain_autoencoder(
    data: ArrayView2<f64>,
    cfg: &GanTrainConfig,
) -> Result<(DenseNet, DenseNet, Vec<f64>)> {
    cfg.validate()?;
    let n = data.nrows();
    let batch_size = cfg.effective_batch_size(n);
    if n < batch_size {
        return Err(Error::Precondition(format!(
            "{n} series is fewer than the batch size {batch_size}"
        )));
    }
    let (encoder, decoder) = init_series_autoencoder(data.ncols(), cfg.seed)?;
    let mut stack = DenseNet {
        layers: vec![encoder.layers[0].clone(), decoder.layers[0].clone()],
        seed: cfg.seed,
    };
    let mut state = OptimState::new(&stack, cfg.ae_learning_rate);
    let mut order = rng::seeded(rng::derive_seed(cfg.seed, 31));
    let data = data.to_owned();
    let mut losses = Vec::with_capacity(cfg.ae_pretrain_epochs);
    for epoch in 0..cfg.ae_pretrain_epochs {
        let mut total = 0.0;
        for idx in nn::epoch_batches(n, batch_size, &mut order) {
            let batch = nn::gather_rows(&data, &idx);
            let trace = stack.forward_trace(batch.view())?;
            let (loss, upstream) = mse(trace.output().view(), batch.view())?;
            check_finite(loss, "autoencoder", epoch)?;
            total += loss * idx.len() as f64;
            let (grads, _) = stack.backward(&trace, upstream.view())?;
            adam_step(&mut stack, &grads, &mut state)?;
        }
        losses.push(total / n as f64);
    }
    let decoder_layer = stack.layers.pop().expect("two layers");
    let encoder_layer = stack.layers.pop().expect("two layers");
    Ok((
        DenseNet {
            layers: vec![encoder_layer],
            seed: encoder.seed,
        },
        DenseNet {
            layers: vec![decoder_layer],
            seed: decoder.seed,
        },
        losses,
    ))
}

pub fn train_gan(series: &[AlignedSeries], layout: SeriesLayout, cfg: &GanTrainConfig) -> Result<GanModel> {
    cfg.validate()?;
    let data = series_matrix(series, layout)?;
    let n = data.nrows();
    let batch_size = cfg.effective_batch_size(n);
    if n < batch_size {
        return Err(Error::Precondition(format!(
            "{n} series is fewer than the batch size {batch_size}"
        )));
    }

    let mut model = GanModel::init(layout, cfg)?;
    let (encoder, mut decoder, ae_loss) = pretrain_autoencoder(data.view(), cfg)?;
    model.ae_encoder = encoder;

    let mut generator = model.generator.clone();
    let mut disc = model.discriminator.clone();
    let mut optim = GanOptimizers {
        generator: OptimState::new(&generator, cfg.generator_learning_rate),
        decoder: OptimState::new(&decoder, cfg.generator_learning_rate),
        discriminator: OptimState::new(&disc, cfg.discriminator_learning_rate),
    };
    for state in [&mut optim.generator, &mut optim.decoder, &mut optim.discriminator] {
        state.beta1 = cfg.adam_beta1;
    }
    let mut order = rng::seeded(rng::derive_seed(cfg.seed, 32));
    let mut noise_rng = rng::seeded(rng::derive_seed(cfg.seed, 33));
    let mut log = TrainingLog {
        ae_loss,
        batch_size,
        ..Default::default()
    };

    for epoch in 0..cfg.epochs {
        for idx in nn::epoch_batches(n, batch_size, &mut order) {
            let b = idx.len();
            let real = nn::gather_rows(&data, &idx);

            let noise = noise_batch(b, cfg.noise_dim, &mut noise_rng);
            let fake = decoder.forward(generator.forward(noise.view())?.view())?;
            let (d_loss, d_grads) = discriminator_step_grads(&disc, real.view(), fake.view())?;
            check_finite(d_loss, "discriminator", epoch)?;
            adam_step(&mut disc, &d_grads, &mut optim.discriminator)?;

            let noise = noise_batch(b, cfg.noise_dim, &mut noise_rng);
            let (g_loss, g_grads, dec_grads) =
                generator_step_grads(&generator, &decoder, &disc, noise.view())?;
            check_finite(g_loss, "generator", epoch)?;
            adam_step(&mut generator, &g_grads, &mut optim.generator)?;
            adam_step(&mut decoder, &dec_grads, &mut optim.decoder)?;

            log.discriminator_loss.push(d_loss);
            log.generator_loss.push(g_loss);
        }
    }

    model.ae_decoder = decoder;
    model.generator = generator;
    model.discriminator = disc;
    model.log = log;
    model.optimizers = Some(optim);
    model.validate()?;
    Ok(model)
}

/// Loads a checkpoint, rejecting other format versions.
pub fn read_model(path: impl AsRef<std::path::Path>) -> Result<GanModel> {
    let model: GanModel = crate::coredata::read_json(path)?;
    if model.format_version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: model.format_version,
            expected: FORMAT_VERSION,
        });
    }
    model.validate()?;
    Ok(model)
}

const GENERATION_CHUNK: usize = 256;

/// `n` synthetic series; draw `i` uses noise from substream `i` of `seed`,
/// so the output does not depend on how the work is split.
pub fn generate(model: &GanModel, n: usize, seed: u64) -> Result<Vec<AlignedSeries>> {
    model.validate()?;
    let chunks: Vec<usize> = (0..n).step_by(GENERATION_CHUNK).collect();
    let parts = chunks
        .par_iter()
        .map(|&start| {
            let rows = GENERATION_CHUNK.min(n - start);
            let mut noise = Array2::zeros((rows, model.noise_dim));
            for r in 0..rows {
                let mut draw = rng::substream(seed, (start + r) as u64);
                for c in 0..model.noise_dim {
                    noise[[r, c]] = StandardNormal.sample(&mut draw);
                }
            }
            let out = model.synthesize(noise.view())?;
            out.rows()
                .into_iter()
                .enumerate()
                .map(|(r, row)| {
                    let values = row.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
                    AlignedSeries::new(format!("synth-{:06}", start + r), values, model.layout)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng as _;

    fn constant_series(n: usize, value: impl Fn(usize) -> f64) -> Vec<AlignedSeries> {
        let layout = SeriesLayout::default();
        (0..n)
            .map(|i| AlignedSeries::new(format!("p{i}"), (0..16).map(&value).collect(), layout).unwrap())
            .collect()
    }

    #[test]
    fn minibatch_average_examples() {
        let one = array![[0.5, -0.25]];
        assert_eq!(minibatch_average_features(one.view()).unwrap(), array![[0.5, -0.25, 0.5, -0.25]]);
        let anti = array![[1.0, 1.0, 1.0], [-1.0, -1.0, -1.0]];
        let aug = minibatch_average_features(anti.view()).unwrap();
        assert!(aug.slice(s![.., 3..]).iter().all(|&v| v == 0.0));
        let x = array![[0.1, 0.2], [0.3, -0.4], [0.9, 0.0]];
        let perm = array![[0.9, 0.0], [0.1, 0.2], [0.3, -0.4]];
        let a = minibatch_average_features(x.view()).unwrap();
        let b = minibatch_average_features(perm.view()).unwrap();
        for r in 0..3 {
            assert_eq!(a.slice(s![0, 2..]), b.slice(s![r, 2..]));
        }
        assert!(minibatch_average_features(Array2::zeros((0, 2)).view()).is_err());
    }

    #[test]
    fn discriminator_input_is_twice_series_length() {
        let m = GanModel::init(SeriesLayout::default(), &GanTrainConfig::default()).unwrap();
        assert_eq!(m.discriminator.dims(), vec![32, 32, 16, 1]);
        assert_eq!(m.generator.dims(), vec![16, 16, 16]);
        assert_eq!(m.ae_encoder.dims(), vec![16, 16]);
        assert_eq!(m.ae_decoder.activations(), vec![Activation::Tanh]);
    }

    #[test]
    fn effective_batch_for_small_sets() {
        let cfg = GanTrainConfig { small_cluster_threshold: 10, ..Default::default() };
        assert_eq!(cfg.effective_batch_size(8), 5);
        assert_eq!(cfg.effective_batch_size(10), 10);
        let series = constant_series(8, |j| j as f64 / 20.0);
        let cfg = GanTrainConfig { small_cluster_threshold: 10, epochs: 2, ae_pretrain_epochs: 1, ..Default::default() };
        let model = train_gan(&series, SeriesLayout::default(), &cfg).unwrap();
        assert_eq!(model.log.batch_size, 5);
        assert_eq!(model.log.discriminator_loss.len(), 2 * 2);
    }

    #[test]
    fn batch_larger_than_set_is_error() {
        let series = constant_series(12, |_| 0.0);
        let cfg = GanTrainConfig { batch_size: 20, small_cluster_threshold: 0, ..Default::default() };
        assert!(matches!(train_gan(&series, SeriesLayout::default(), &cfg), Err(Error::Precondition(_))));
    }

    #[test]
    fn zero_epoch_pretraining_is_init() {
        let series = constant_series(10, |j| j as f64 / 16.0);
        let data = series_matrix(&series, SeriesLayout::default()).unwrap();
        let cfg = GanTrainConfig { ae_pretrain_epochs: 0, seed: 4, ..Default::default() };
        let (enc, dec, losses) = pretrain_autoencoder(data.view(), &cfg).unwrap();
        let (e0, d0) = init_series_autoencoder(16, 4).unwrap();
        assert_eq!((enc, dec), (e0, d0));
        assert!(losses.is_empty());
    }

    #[test]
    fn pretraining_fits_a_repeated_series() {
        let series = constant_series(100, |j| 0.8 * ((j as f64) / 3.0).sin());
        let data = series_matrix(&series, SeriesLayout::default()).unwrap();
        let cfg = GanTrainConfig { ae_pretrain_epochs: 500, seed: 2, ..Default::default() };
        let (enc, dec, losses) = pretrain_autoencoder(data.view(), &cfg).unwrap();
        let recon = dec.forward(enc.forward(data.view()).unwrap().view()).unwrap();
        let err = mse(recon.view(), data.view()).unwrap().0;
        assert!(err < 1e-3, "reconstruction mse {err}");
        assert!(recon.iter().all(|v| v.abs() < 1.0));
        assert_eq!(losses.len(), 500);
    }

    #[test]
    fn zero_epochs_keeps_generator_init() {
        let series = constant_series(20, |j| j as f64 / 32.0);
        let cfg = GanTrainConfig { epochs: 0, ae_pretrain_epochs: 1, seed: 8, ..Default::default() };
        let model = train_gan(&series, SeriesLayout::default(), &cfg).unwrap();
        let init = GanModel::init(SeriesLayout::default(), &cfg).unwrap();
        assert_eq!(model.generator, init.generator);
        assert_eq!(model.discriminator, init.discriminator);
        assert!(model.log.discriminator_loss.is_empty());

        // an untrained discriminator cannot tell held-out real rows from fakes
        let real = series_matrix(&constant_series(50, |j| 0.5 - j as f64 / 40.0), SeriesLayout::default()).unwrap();
        let fake = series_matrix(&generate(&model, 50, 1).unwrap(), SeriesLayout::default()).unwrap();
        let score = |x: &Array2<f64>| {
            let p = model.discriminator.forward(minibatch_average_features(x.view()).unwrap().view()).unwrap();
            p.mean().unwrap()
        };
        let (sr, sf) = (score(&real), score(&fake));
        assert!((sr - 0.5).abs() < 0.15 && (sf - 0.5).abs() < 0.15, "D(real) {sr}, D(fake) {sf}");
    }

    #[test]
    fn loss_log_counts_batches() {
        let series = constant_series(23, |j| j as f64 / 32.0);
        let cfg = GanTrainConfig { epochs: 3, ae_pretrain_epochs: 2, small_cluster_threshold: 0, ..Default::default() };
        let model = train_gan(&series, SeriesLayout::default(), &cfg).unwrap();
        assert_eq!(model.log.discriminator_loss.len(), 3 * 23usize.div_ceil(10));
        assert_eq!(model.log.generator_loss.len(), model.log.discriminator_loss.len());
        assert_eq!(model.log.ae_loss.len(), 2);
        assert!(model.log.to_csv().lines().count() == 1 + 2 + 9 + 9);
    }

    #[test]
    fn generation_is_bounded_and_deterministic() {
        let model = GanModel::init(SeriesLayout::default(), &GanTrainConfig { seed: 3, ..Default::default() }).unwrap();
        assert!(generate(&model, 0, 1).unwrap().is_empty());
        let a = generate(&model, 600, 5).unwrap();
        let b = generate(&model, 600, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|s| s.values.iter().all(|v| (-1.0..=1.0).contains(v))));
        // draw i does not depend on n
        let c = generate(&model, 10, 5).unwrap();
        assert_eq!(&a[..10], &c[..]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let series = constant_series(10, |j| j as f64 / 32.0);
        let cfg = GanTrainConfig { epochs: 1, ae_pretrain_epochs: 1, ..Default::default() };
        let model = train_gan(&series, SeriesLayout::default(), &cfg).unwrap();
        let back: GanModel = serde_json::from_str(&serde_json::to_string(&model).unwrap()).unwrap();
        assert_eq!(back, model);
    }

    // --- finite-difference checks on a shrunk instance (L = 3, noise 2, B = 2)

    fn tiny(seed: u64) -> GanModel {
        let mut m = GanModel::init(SeriesLayout::new(2, 1).unwrap(), &GanTrainConfig { noise_dim: 2, seed, ..Default::default() }).unwrap();
        // randomize biases so relu kinks are not hit at zero
        let mut r = rng::seeded(seed ^ 99);
        for net in [&mut m.generator, &mut m.ae_decoder, &mut m.discriminator] {
            for l in &mut net.layers {
                l.bias.mapv_inplace(|_| r.random_range(-0.5..0.5));
            }
        }
        m
    }

    fn rand_mat(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut r = rng::seeded(seed);
        Array2::from_shape_fn((rows, cols), |_| r.random_range(-1.0..1.0))
    }

    fn numeric_grads(net: &DenseNet, loss: &dyn Fn(&DenseNet) -> f64) -> Vec<f64> {
        let h = 1e-5;
        let mut out = Vec::new();
        for li in 0..net.layers.len() {
            let (rows, cols) = net.layers[li].weights.dim();
            for r in 0..rows {
                for c in 0..cols {
                    let mut p = net.clone();
                    p.layers[li].weights[[r, c]] += h;
                    let mut m = net.clone();
                    m.layers[li].weights[[r, c]] -= h;
                    out.push((loss(&p) - loss(&m)) / (2.0 * h));
                }
            }
            for r in 0..rows {
                let mut p = net.clone();
                p.layers[li].bias[r] += h;
                let mut m = net.clone();
                m.layers[li].bias[r] -= h;
                out.push((loss(&p) - loss(&m)) / (2.0 * h));
            }
        }
        out
    }

    fn flat(g: &Gradients) -> Vec<f64> {
        g.layers
            .iter()
            .flat_map(|l| l.weights.iter().copied().chain(l.bias.iter().copied()).collect::<Vec<_>>())
            .collect()
    }

    fn assert_close(analytic: &[f64], numeric: &[f64]) {
        assert_eq!(analytic.len(), numeric.len());
        for (a, n) in analytic.iter().zip(numeric) {
            let rel = (a - n).abs() / (a.abs() + n.abs()).max(1e-6);
            assert!(rel <= 1e-4, "analytic {a} numeric {n}");
        }
    }

    #[test]
    fn discriminator_gradients_match_finite_differences() {
        for seed in 0..5 {
            let m = tiny(seed);
            let real = rand_mat(2, 3, seed + 10);
            let fake = rand_mat(2, 3, seed + 20);
            let (_, grads) = discriminator_step_grads(&m.discriminator, real.view(), fake.view()).unwrap();
            let numeric = numeric_grads(&m.discriminator, &|d| {
                discriminator_step_grads(d, real.view(), fake.view()).unwrap().0
            });
            assert_close(&flat(&grads), &numeric);
        }
    }

    #[test]
    fn generator_and_decoder_gradients_match_finite_differences() {
        for seed in 0..5 {
            let m = tiny(seed);
            let z = rand_mat(2, 2, seed + 30);
            let (_, g_grads, dec_grads) =
                generator_step_grads(&m.generator, &m.ae_decoder, &m.discriminator, z.view()).unwrap();
            let numeric_g = numeric_grads(&m.generator, &|g| {
                generator_step_grads(g, &m.ae_decoder, &m.discriminator, z.view()).unwrap().0
            });
            let numeric_dec = numeric_grads(&m.ae_decoder, &|dec| {
                generator_step_grads(&m.generator, dec, &m.discriminator, z.view()).unwrap().0
            });
            assert_close(&flat(&g_grads), &numeric_g);
            assert_close(&flat(&dec_grads), &numeric_dec);
        }
    }

    #[test]
    fn minibatch_average_backward_matches_finite_differences() {
        let x = rand_mat(3, 2, 1);
        let w = rand_mat(3, 4, 2);
        // loss = Σ w ⊙ aug(x)
        let loss = |x: &Array2<f64>| (&minibatch_average_features(x.view()).unwrap() * &w).sum();
        let analytic = minibatch_average_backward(w.view());
        let h = 1e-6;
        for r in 0..3 {
            for c in 0..2 {
                let mut p = x.clone();
                p[[r, c]] += h;
                let mut m = x.clone();
                m[[r, c]] -= h;
                let numeric = (loss(&p) - loss(&m)) / (2.0 * h);
                assert!((numeric - analytic[[r, c]]).abs() < 1e-8);
            }
        }
    }
}

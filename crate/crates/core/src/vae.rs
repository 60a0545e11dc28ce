//! Convolutional VAE: frame → diagonal Gaussian latent → reconstructed frame.

use std::sync::Arc;

use drivesim::Frame;
use ndgrad::{Adam, AdamConfig, Graph, NamedArrays, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kl::standard_normal_kl_terms;
use crate::seed::mix;

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

const KERNEL: usize = 4;
const STRIDE: usize = 2;
const PAD: usize = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct VaeConfig {
    /// Square input side in pixels.
    pub frame_size: usize,
    pub latent_dim: usize,
    /// Encoder channels; the decoder mirrors them.
    pub channels: [usize; 4],
    /// KL weight β; the KL sum is further divided by the pixel count.
    pub kl_weight: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            frame_size: 64,
            latent_dim: 32,
            channels: [8, 16, 32, 64],
            kl_weight: 1.0,
        }
    }
}

impl VaeConfig {
    /// 128×128 input, 128-dimensional latent, 32/64/128/256 channels.
    pub fn full_scale() -> Self {
        Self {
            frame_size: 128,
            latent_dim: 128,
            channels: [32, 64, 128, 256],
            kl_weight: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_size < 16 || self.frame_size % 16 != 0 {
            return Err(Error::Config(format!(
                "frame size {} must be a positive multiple of 16",
                self.frame_size
            )));
        }
        if self.latent_dim == 0 || self.channels.contains(&0) {
            return Err(Error::Config("latent_dim and channels must be positive".into()));
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return Err(Error::Config(format!("kl_weight {}", self.kl_weight)));
        }
        Ok(())
    }

    /// Values per frame, `3·S·S`.
    pub fn pixel_count(&self) -> usize {
        3 * self.frame_size * self.frame_size
    }

    fn side(&self) -> usize {
        self.frame_size / 16
    }

    fn flat(&self) -> usize {
        self.channels[3] * self.side() * self.side()
    }

    /// Checkpoint names and shapes in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let c = self.channels;
        let (l, flat) = (self.latent_dim, self.flat());
        let mut out = Vec::new();
        let ins = [3, c[0], c[1], c[2]];
        for i in 0..4 {
            out.push((format!("enc{i}.w"), vec![c[i], ins[i], KERNEL, KERNEL]));
            out.push((format!("enc{i}.b"), vec![c[i]]));
        }
        out.push(("mu.w".into(), vec![flat, l]));
        out.push(("mu.b".into(), vec![l]));
        out.push(("logvar.w".into(), vec![flat, l]));
        out.push(("logvar.b".into(), vec![l]));
        out.push(("dec.w".into(), vec![l, flat]));
        out.push(("dec.b".into(), vec![flat]));
        let chain = [c[3], c[2], c[1], c[0], 3];
        for i in 0..4 {
            out.push((format!("dec{i}.w"), vec![chain[i], chain[i + 1], KERNEL, KERNEL]));
            out.push((format!("dec{i}.b"), vec![chain[i + 1]]));
        }
        out
    }
}

const MU_W: usize = 8;
const LV_W: usize = 10;
const DEC_W: usize = 12;
const DEC_CONV: usize = 14;

#[derive(Clone, Debug, PartialEq)]
pub struct VaeParams {
    pub config: VaeConfig,
    tensors: Vec<Arc<Tensor>>,
}

impl VaeParams {
    pub fn zeros(config: VaeConfig) -> Result<Self> {
        config.validate()?;
        let tensors = config
            .layout()
            .iter()
            .map(|(_, s)| Arc::new(Tensor::zeros(s)))
            .collect();
        Ok(Self { config, tensors })
    }

    /// Uniform fan-in scaled weights, zero biases.
    pub fn init(config: VaeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = config.layout();
        let tensors = layout
            .iter()
            .enumerate()
            .map(|(i, (name, shape))| {
                if name.ends_with(".b") {
                    return Arc::new(Tensor::zeros(shape));
                }
                let fan_in = match i {
                    0..=7 => shape[1] * KERNEL * KERNEL,
                    MU_W | LV_W | DEC_W => shape[0],
                    // each transposed-conv output sees about cin·(K/s)² inputs
                    _ => shape[0] * (KERNEL / STRIDE) * (KERNEL / STRIDE),
                };
                let mut a = (6.0 / fan_in as f64).sqrt();
                if i == LV_W {
                    a *= 0.1;
                }
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| rng.random_range(-a..a)).collect();
                Arc::new(Tensor::from_vec(shape.clone(), data).expect("layout shapes are valid"))
            })
            .collect();
        Ok(Self { config, tensors })
    }

    pub fn tensors(&self) -> &[Arc<Tensor>] {
        &self.tensors
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        Arc::make_mut(&mut self.tensors[i])
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.is_finite())
    }

    pub fn to_arrays(&self) -> NamedArrays {
        self.config
            .layout()
            .into_iter()
            .zip(&self.tensors)
            .map(|((n, _), t)| (n, (**t).clone()))
            .collect()
    }

    pub fn from_arrays(config: VaeConfig, arrays: &NamedArrays) -> Result<Self> {
        config.validate()?;
        let tensors = config
            .layout()
            .into_iter()
            .map(|(name, shape)| {
                let t = arrays.require(&name)?;
                if t.shape() != shape.as_slice() {
                    return Err(Error::Shape(format!(
                        "`{name}` has shape {:?}, config expects {shape:?}",
                        t.shape()
                    )));
                }
                Ok(Arc::new(t.clone()))
            })
            .collect::<Result<_>>()?;
        Ok(Self { config, tensors })
    }

    fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                if trainable {
                    g.param_shared(t)
                } else {
                    g.constant_shared(t)
                }
            })
            .collect()
    }
}

/// Diagonal Gaussian over the latent space.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGaussian {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl LatentGaussian {
    pub fn from_logvar(mu: Vec<f64>, logvar: &[f64]) -> Self {
        let sigma = logvar.iter().map(|lv| (0.5 * lv).exp()).collect();
        Self { mu, sigma }
    }

    pub fn logvar(&self) -> Vec<f64> {
        self.sigma.iter().map(|s| 2.0 * s.ln()).collect()
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentSample {
    pub z: Vec<f64>,
}

fn encoder(g: &mut Graph, p: &[Var], x: Var, cfg: &VaeConfig) -> Result<(Var, Var)> {
    let mut h = x;
    for i in 0..4 {
        h = g.conv2d(h, p[2 * i], p[2 * i + 1], STRIDE, PAD)?;
        h = g.relu(h);
    }
    let n = g.value(x).shape()[0];
    let flat = g.reshape(h, &[n, cfg.flat()])?;
    let mu = g.matmul(flat, p[MU_W])?;
    let mu = g.add_bias(mu, p[MU_W + 1])?;
    let lv = g.matmul(flat, p[LV_W])?;
    let lv = g.add_bias(lv, p[LV_W + 1])?;
    let lv = g.clamp(lv, LOGVAR_MIN, LOGVAR_MAX);
    Ok((mu, lv))
}

fn decoder(g: &mut Graph, p: &[Var], z: Var, cfg: &VaeConfig) -> Result<Var> {
    let n = g.value(z).shape()[0];
    let h = g.matmul(z, p[DEC_W])?;
    let h = g.add_bias(h, p[DEC_W + 1])?;
    let h = g.relu(h);
    let side = cfg.side();
    let mut h = g.reshape(h, &[n, cfg.channels[3], side, side])?;
    for i in 0..4 {
        h = g.conv2d_transpose(h, p[DEC_CONV + 2 * i], p[DEC_CONV + 2 * i + 1], STRIDE, PAD)?;
        h = if i < 3 { g.relu(h) } else { g.sigmoid(h) };
    }
    Ok(h)
}

fn check_frame(frame: &Frame, cfg: &VaeConfig) -> Result<()> {
    if frame.width != cfg.frame_size || frame.height != cfg.frame_size {
        return Err(Error::Shape(format!(
            "frame {}x{} but the VAE expects {}x{}",
            frame.width, frame.height, cfg.frame_size, cfg.frame_size
        )));
    }
    Ok(())
}

/// Stack frames into `[N, 3, S, S]` in `[0, 1]`.
pub fn frames_to_tensor(frames: &[&Frame], cfg: &VaeConfig) -> Result<Tensor> {
    let mut data = Vec::with_capacity(frames.len() * cfg.pixel_count());
    for f in frames {
        check_frame(f, cfg)?;
        data.extend(f.to_chw());
    }
    let s = cfg.frame_size;
    Ok(Tensor::from_vec(vec![frames.len(), 3, s, s], data)?)
}

/// Posterior `(μ, σ)` of each frame.
pub fn encode_batch(frames: &[&Frame], params: &VaeParams) -> Result<Vec<LatentGaussian>> {
    if frames.is_empty() {
        return Ok(Vec::new());
    }
    let cfg = &params.config;
    let x = frames_to_tensor(frames, cfg)?;
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let x = g.constant(x);
    let (mu, lv) = encoder(&mut g, &p, x, cfg)?;
    let l = cfg.latent_dim;
    let (mu, lv) = (g.value(mu).data(), g.value(lv).data());
    Ok((0..frames.len())
        .map(|i| LatentGaussian::from_logvar(mu[i * l..(i + 1) * l].to_vec(), &lv[i * l..(i + 1) * l]))
        .collect())
}

pub fn encode(frame: &Frame, params: &VaeParams) -> Result<LatentGaussian> {
    Ok(encode_batch(&[frame], params)?.remove(0))
}

/// `z = μ + σ ⊙ ε`, `ε ~ N(0, I)` from a generator seeded by `seed`.
pub fn sample_latent(g: &LatentGaussian, seed: u64) -> LatentSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = g
        .mu
        .iter()
        .zip(&g.sigma)
        .map(|(m, s)| {
            let e: f64 = StandardNormal.sample(&mut rng);
            m + s * e
        })
        .collect();
    LatentSample { z }
}

/// Decode latents `[N, L]` to `[N, 3, S, S]`.
pub fn decode_batch(z: &Tensor, params: &VaeParams) -> Result<Tensor> {
    let cfg = &params.config;
    if z.rank() != 2 || z.shape()[1] != cfg.latent_dim {
        return Err(Error::Shape(format!(
            "latent batch {:?}, expected [N, {}]",
            z.shape(),
            cfg.latent_dim
        )));
    }
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let zv = g.constant(z.clone());
    let out = decoder(&mut g, &p, zv, cfg)?;
    Ok(g.value(out).clone())
}

/// Reconstruction as an `[S, S, 3]` tensor in `[0, 1]`.
pub fn decode(z: &LatentSample, params: &VaeParams) -> Result<Tensor> {
    let cfg = &params.config;
    if z.z.len() != cfg.latent_dim {
        return Err(Error::Shape(format!(
            "latent of length {}, expected {}",
            z.z.len(),
            cfg.latent_dim
        )));
    }
    let chw = decode_batch(&Tensor::from_vec(vec![1, cfg.latent_dim], z.z.clone())?, params)?;
    let s = cfg.frame_size;
    let plane = s * s;
    let mut hwc = vec![0.0; 3 * plane];
    for c in 0..3 {
        for i in 0..plane {
            hwc[i * 3 + c] = chw.data()[c * plane + i];
        }
    }
    Ok(Tensor::from_vec(vec![s, s, 3], hwc)?)
}

/// `decode(μ)` quantized to 8 bits.
pub fn reconstruct(frame: &Frame, params: &VaeParams) -> Result<Frame> {
    let g = encode(frame, params)?;
    let chw = decode_batch(&Tensor::from_vec(vec![1, g.dim()], g.mu)?, params)?;
    let s = params.config.frame_size;
    Ok(Frame::from_chw(s, s, chw.data())?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VaeLoss {
    /// KL to the unit Gaussian, summed over latent dimensions, batch mean.
    pub kl: f64,
    /// Squared error averaged over pixels and batch.
    pub recon: f64,
    /// `recon + β·kl / pixel_count`.
    pub total: f64,
}

/// Loss and parameter gradients for `x: [N, 3, S, S]` with frozen noise
/// `eps: [N, L]`.
pub fn vae_loss_with_noise(x: &Tensor, params: &VaeParams, eps: &Tensor) -> Result<(VaeLoss, Vec<Tensor>)> {
    let cfg = &params.config;
    let s = cfg.frame_size;
    let n = x.shape().first().copied().unwrap_or(0);
    if x.shape() != [n, 3, s, s] || eps.shape() != [n, cfg.latent_dim] {
        return Err(Error::Shape(format!(
            "batch {:?} with noise {:?} for a {s}x{s} VAE with latent {}",
            x.shape(),
            eps.shape(),
            cfg.latent_dim
        )));
    }
    let mut g = Graph::new();
    let p = params.bind(&mut g, true);
    let xv = g.constant(x.clone());
    let (mu, lv) = encoder(&mut g, &p, xv, cfg)?;
    let half = g.scale(lv, 0.5);
    let sigma = g.exp(half);
    let e = g.constant(eps.clone());
    let noise = g.mul(sigma, e)?;
    let z = g.add(mu, noise)?;
    let xhat = decoder(&mut g, &p, z, cfg)?;
    let diff = g.sub(xhat, xv)?;
    let sq = g.mul(diff, diff)?;
    let recon = g.mean(sq);
    let terms = standard_normal_kl_terms(&mut g, mu, lv)?;
    let kl_sum = g.sum(terms);
    let kl = g.scale(kl_sum, 1.0 / n as f64);
    let kl_weighted = g.scale(kl, cfg.kl_weight / cfg.pixel_count() as f64);
    let total = g.add(recon, kl_weighted)?;
    let loss = VaeLoss {
        kl: g.value(kl).item()?,
        recon: g.value(recon).item()?,
        total: g.value(total).item()?,
    };
    let mut grads = g.backward(total)?;
    let grads = p.iter().map(|&v| grads.take(v).expect("every parameter feeds the loss")).collect();
    Ok((loss, grads))
}

fn noise(n: usize, l: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * l).map(|_| StandardNormal.sample(&mut rng)).collect();
    Tensor::from_vec(vec![n, l], data).expect("n, l > 0")
}

/// Single-frame loss with reparameterization noise drawn from `seed`.
pub fn vae_loss(frame: &Frame, params: &VaeParams, seed: u64) -> Result<(VaeLoss, Vec<Tensor>)> {
    let x = frames_to_tensor(&[frame], &params.config)?;
    vae_loss_with_noise(&x, params, &noise(1, params.config.latent_dim, seed))
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Frames drawn per epoch; `None` uses the whole dataset.
    pub frames_per_epoch: Option<usize>,
    pub seed: u64,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 8,
            batch_size: 32,
            learning_rate: 1e-3,
            frames_per_epoch: None,
            seed: 0,
        }
    }
}

/// One line of the VAE loss log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VaeEpoch {
    pub epoch: usize,
    pub kl: f64,
    pub recon: f64,
    pub total: f64,
}

impl VaeEpoch {
    pub const HEADER: &'static str = "epoch,kl_term,recon_term,total";

    pub fn log_line(&self) -> String {
        format!("{},{},{},{}", self.epoch, self.kl, self.recon, self.total)
    }
}

/// Seeded mini-batch Adam on the VAE loss.
pub fn train_vae(
    frames: &[Frame],
    mut params: VaeParams,
    cfg: &VaeTrainConfig,
) -> Result<(VaeParams, Vec<VaeEpoch>)> {
    if frames.is_empty() {
        return Err(Error::Input("empty frame dataset".into()));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::Config("epochs and batch_size must be positive".into()));
    }
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.learning_rate,
        ..Default::default()
    });
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    let latent = params.config.latent_dim;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64));
        let mut order: Vec<usize> = (0..frames.len()).collect();
        order.shuffle(&mut rng);
        if let Some(k) = cfg.frames_per_epoch {
            order.truncate(k.max(1));
        }
        let (mut kl, mut recon, mut total) = (0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let refs: Vec<&Frame> = batch.iter().map(|&i| &frames[i]).collect();
            let x = frames_to_tensor(&refs, &params.config)?;
            let eps = noise(batch.len(), latent, mix(cfg.seed ^ 0x5EED, step));
            let (loss, grads) = vae_loss_with_noise(&x, &params, &eps)?;
            if !loss.total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!("VAE loss non-finite at step {step}")));
            }
            adam.step(params.tensors.iter_mut().map(Arc::make_mut), &grads)?;
            let w = batch.len() as f64;
            kl += loss.kl * w;
            recon += loss.recon * w;
            total += loss.total * w;
            step += 1;
        }
        let n = order.len() as f64;
        history.push(VaeEpoch {
            epoch,
            kl: kl / n,
            recon: recon / n,
            total: total / n,
        });
    }
    Ok((params, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> VaeConfig {
        VaeConfig {
            frame_size: 32,
            latent_dim: 4,
            channels: [2, 3, 4, 5],
            kl_weight: 1.0,
        }
    }

    fn frame(seed: u64) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Frame::new(32, 32, (0..32 * 32 * 3).map(|_| rng.random()).collect()).unwrap()
    }

    #[test]
    fn zero_params_encode_to_head_bias() {
        let p = VaeParams::zeros(small()).unwrap();
        let g = encode(&frame(1), &p).unwrap();
        assert_eq!(g.mu, vec![0.0; 4]);
        assert_eq!(g.sigma, vec![1.0; 4]);
    }

    #[test]
    fn zero_params_decode_to_half() {
        let p = VaeParams::zeros(small()).unwrap();
        let out = decode(&LatentSample { z: vec![0.3, -1.0, 2.0, 0.0] }, &p).unwrap();
        assert_eq!(out.shape(), &[32, 32, 3]);
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn size_mismatch() {
        let p = VaeParams::zeros(VaeConfig::default()).unwrap();
        assert!(matches!(encode(&frame(1), &p), Err(Error::Shape(_))));
        assert!(matches!(decode(&LatentSample { z: vec![0.0; 3] }, &p), Err(Error::Shape(_))));
    }

    #[test]
    fn layout_round_trip() {
        let p = VaeParams::init(small(), 3).unwrap();
        let back = VaeParams::from_arrays(small(), &p.to_arrays()).unwrap();
        assert_eq!(back, p);
        let mut other = small();
        other.latent_dim = 5;
        assert!(VaeParams::from_arrays(other, &p.to_arrays()).is_err());
    }

    #[test]
    fn unit_posterior_has_zero_kl_and_exact_recon_zero() {
        // zero params: μ = 0, σ = 1, x̂ = 0.5 everywhere
        let p = VaeParams::zeros(small()).unwrap();
        let x = Tensor::full(&[1, 3, 32, 32], 0.5);
        let (loss, _) = vae_loss_with_noise(&x, &p, &Tensor::zeros(&[1, 4])).unwrap();
        assert_eq!(loss.kl, 0.0);
        assert_eq!(loss.recon, 0.0);
        assert_eq!(loss.total, 0.0);
    }

    #[test]
    fn full_scale_is_valid() {
        let c = VaeConfig::full_scale();
        c.validate().unwrap();
        assert_eq!(c.flat(), 256 * 8 * 8);
    }
}

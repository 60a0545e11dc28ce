//! Single-layer LSTM predicting the next latent Gaussian from `(z_t, a_t)`.

use std::sync::Arc;

use drivesim::Action;
use ndgrad::{Adam, AdamConfig, Graph, NamedArrays, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::controller::ACTION_DIM;
use crate::error::{Error, Result};
use crate::kl::kl_terms;
use crate::seed::mix;
use crate::vae::{LatentGaussian, LatentSample, LOGVAR_MAX, LOGVAR_MIN};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmConfig {
    pub latent_dim: usize,
    pub hidden: usize,
}

impl LstmConfig {
    pub fn input_dim(&self) -> usize {
        self.latent_dim + ACTION_DIM
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.hidden == 0 {
            return Err(Error::Config("latent_dim and hidden must be positive".into()));
        }
        Ok(())
    }

    fn layout(&self) -> [(&'static str, Vec<usize>); 4] {
        let (h, l) = (self.hidden, self.latent_dim);
        [
            ("lstm.w", vec![self.input_dim() + h, 4 * h]),
            ("lstm.b", vec![4 * h]),
            ("head.w", vec![h, 2 * l]),
            ("head.b", vec![2 * l]),
        ]
    }
}

/// Gate weights `W: [latent + 2 + H, 4H]` acting on `[z; a; h]`, gate
/// blocks in the order input, forget, candidate, output; then a linear
/// head `h → (μ̂, log σ̂²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub config: LstmConfig,
    tensors: [Arc<Tensor>; 4],
}

impl LstmParams {
    pub fn zeros(config: LstmConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            tensors: config.layout().map(|(_, s)| Arc::new(Tensor::zeros(&s))),
        })
    }

    /// Uniform `±1/√H` weights, forget-gate bias 1.
    pub fn init(config: LstmConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden;
        let a = 1.0 / (h as f64).sqrt();
        for i in [0, 2] {
            for v in Arc::make_mut(&mut p.tensors[i]).data_mut() {
                *v = rng.random_range(-a..a);
            }
        }
        Arc::make_mut(&mut p.tensors[1]).data_mut()[h..2 * h].fill(1.0);
        Ok(p)
    }

    /// Build from explicit `(W, b, head_w, head_b)`.
    pub fn from_parts(config: LstmConfig, parts: [Tensor; 4]) -> Result<Self> {
        config.validate()?;
        for ((name, shape), t) in config.layout().iter().zip(&parts) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape(format!("`{name}` {:?}, expected {shape:?}", t.shape())));
            }
        }
        Ok(Self {
            config,
            tensors: parts.map(Arc::new),
        })
    }

    pub fn tensors(&self) -> &[Arc<Tensor>; 4] {
        &self.tensors
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.is_finite())
    }

    pub fn to_arrays(&self) -> NamedArrays {
        self.config
            .layout()
            .into_iter()
            .zip(&self.tensors)
            .map(|((n, _), t)| (n.to_string(), (**t).clone()))
            .collect()
    }

    pub fn from_arrays(config: LstmConfig, arrays: &NamedArrays) -> Result<Self> {
        let layout = config.layout();
        let get = |i: usize| arrays.require(layout[i].0).cloned();
        Self::from_parts(config, [get(0)?, get(1)?, get(2)?, get(3)?])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RnnState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl RnnState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictedLatent {
    pub mu_hat: Vec<f64>,
    pub sigma_hat: Vec<f64>,
}

impl PredictedLatent {
    pub fn logvar(&self) -> Vec<f64> {
        self.sigma_hat.iter().map(|s| 2.0 * s.ln()).collect()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One LSTM step followed by the prediction head on the new hidden state.
pub fn lstm_step(
    state: &RnnState,
    z: &[f64],
    a: Action,
    params: &LstmParams,
) -> Result<(RnnState, PredictedLatent)> {
    let LstmConfig { latent_dim: l, hidden: h } = params.config;
    if z.len() != l || state.h.len() != h || state.c.len() != h {
        return Err(Error::Shape(format!(
            "lstm_step got z[{}], h[{}], c[{}]; expected z[{l}], h[{h}]",
            z.len(),
            state.h.len(),
            state.c.len()
        )));
    }
    let [w, b, hw, hb] = &params.tensors;
    let mut pre = b.data().to_vec();
    let w = w.data();
    let act = [a.steer, a.throttle_brake];
    let x = z.iter().chain(&act).chain(&state.h);
    for (k, &xk) in x.enumerate() {
        if xk == 0.0 {
            continue;
        }
        for (p, wv) in pre.iter_mut().zip(&w[k * 4 * h..(k + 1) * 4 * h]) {
            *p += xk * wv;
        }
    }
    let mut next = RnnState::zeros(h);
    for j in 0..h {
        let i = sigmoid(pre[j]);
        let f = sigmoid(pre[h + j]);
        let g = pre[2 * h + j].tanh();
        let o = sigmoid(pre[3 * h + j]);
        next.c[j] = f * state.c[j] + i * g;
        next.h[j] = o * next.c[j].tanh();
    }
    let mut head = hb.data().to_vec();
    let hw = hw.data();
    for (k, &hk) in next.h.iter().enumerate() {
        for (o, wv) in head.iter_mut().zip(&hw[k * 2 * l..(k + 1) * 2 * l]) {
            *o += hk * wv;
        }
    }
    let pred = PredictedLatent {
        mu_hat: head[..l].to_vec(),
        sigma_hat: head[l..]
            .iter()
            .map(|lv| (0.5 * lv.clamp(LOGVAR_MIN, LOGVAR_MAX)).exp())
            .collect(),
    };
    Ok((next, pred))
}

struct StepVars {
    h: Var,
    c: Var,
    mu: Var,
    lv: Var,
}

fn step_graph(g: &mut Graph, p: &[Var; 4], z: Var, a: Var, h: Var, c: Var, hidden: usize, latent: usize) -> Result<StepVars> {
    let x = g.concat(&[z, a, h], 1)?;
    let pre = g.matmul(x, p[0])?;
    let pre = g.add_bias(pre, p[1])?;
    let gi = g.slice(pre, 1, 0, hidden)?;
    let gf = g.slice(pre, 1, hidden, hidden)?;
    let gg = g.slice(pre, 1, 2 * hidden, hidden)?;
    let go = g.slice(pre, 1, 3 * hidden, hidden)?;
    let i = g.sigmoid(gi);
    let f = g.sigmoid(gf);
    let cand = g.tanh(gg);
    let o = g.sigmoid(go);
    let fc = g.mul(f, c)?;
    let ig = g.mul(i, cand)?;
    let c = g.add(fc, ig)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    let head = g.matmul(h, p[2])?;
    let head = g.add_bias(head, p[3])?;
    let mu = g.slice(head, 1, 0, latent)?;
    let lv = g.slice(head, 1, latent, latent)?;
    let lv = g.clamp(lv, LOGVAR_MIN, LOGVAR_MAX);
    Ok(StepVars { h, c, mu, lv })
}

/// Inputs `(z_t, a_t)` and targets `g_{t+1}` for `t = 0..T`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub z: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub targets: Vec<LatentGaussian>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

/// Loss, parameter gradients, and the state after the last step.
pub struct SeqLossOutput {
    pub loss: f64,
    pub grads: [Tensor; 4],
    pub final_state: RnnState,
}

/// Mean over time of `KL(N(μ̂, σ̂) ‖ N(μ_{t+1}, σ_{t+1}))`, backpropagated
/// through the whole sequence starting from `init`.
pub fn seq_loss_from(seq: &Sequence, init: &RnnState, params: &LstmParams) -> Result<SeqLossOutput> {
    let LstmConfig { latent_dim: l, hidden } = params.config;
    let t_len = seq.len();
    if t_len == 0 {
        return Err(Error::Input("empty sequence".into()));
    }
    if seq.actions.len() != t_len || seq.targets.len() != t_len {
        return Err(Error::Shape(format!(
            "sequence with {} latents, {} actions, {} targets",
            t_len,
            seq.actions.len(),
            seq.targets.len()
        )));
    }
    if seq.z.iter().any(|z| z.len() != l) || seq.targets.iter().any(|g| g.dim() != l) {
        return Err(Error::Shape(format!("latent dimension differs from {l}")));
    }
    if init.h.len() != hidden || init.c.len() != hidden {
        return Err(Error::Shape(format!("initial state is not of size {hidden}")));
    }
    let row = |v: Vec<f64>| Tensor::from_vec(vec![1, v.len()], v).expect("non-empty");
    let mut g = Graph::new();
    let p: [Var; 4] = std::array::from_fn(|i| g.param_shared(&params.tensors[i]));
    let mut h = g.constant(row(init.h.clone()));
    let mut c = g.constant(row(init.c.clone()));
    let mut per_step = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let z = g.constant(row(seq.z[t].clone()));
        let a = g.constant(row(vec![seq.actions[t].steer, seq.actions[t].throttle_brake]));
        let s = step_graph(&mut g, &p, z, a, h, c, hidden, l)?;
        let mq = g.constant(row(seq.targets[t].mu.clone()));
        let lq = g.constant(row(seq.targets[t].logvar()));
        let terms = kl_terms(&mut g, s.mu, s.lv, mq, lq)?;
        let kl = g.sum(terms);
        let v = g.value(kl).item()?;
        if !v.is_finite() {
            return Err(Error::Numerical(format!("sequence loss non-finite at t={t}")));
        }
        per_step.push(kl);
        h = s.h;
        c = s.c;
    }
    let all = g.concat(&per_step, 0)?;
    let loss = g.mean(all);
    let value = g.value(loss).item()?;
    let final_state = RnnState {
        h: g.value(h).data().to_vec(),
        c: g.value(c).data().to_vec(),
    };
    let mut grads = g.backward(loss)?;
    let grads = p.map(|v| grads.take(v).expect("every parameter feeds the loss"));
    Ok(SeqLossOutput {
        loss: value,
        grads,
        final_state,
    })
}

/// [`seq_loss_from`] starting at the zero state.
pub fn seq_loss(seq: &Sequence, params: &LstmParams) -> Result<(f64, [Tensor; 4])> {
    let out = seq_loss_from(seq, &RnnState::zeros(params.config.hidden), params)?;
    Ok((out.loss, out.grads))
}

/// One episode passed through the frozen VAE: posteriors for frames
/// `0..=T`, the sampled latents, and the `T` actions taken between them.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentEpisode {
    pub posteriors: Vec<LatentGaussian>,
    pub z: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
}

impl LatentEpisode {
    pub fn transitions(&self) -> usize {
        self.actions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.posteriors.len();
        if n < 2 || self.z.len() != n || self.actions.len() + 1 != n {
            return Err(Error::Input(format!(
                "latent episode with {} posteriors, {} samples, {} actions",
                n,
                self.z.len(),
                self.actions.len()
            )));
        }
        Ok(())
    }

    /// Transitions `start..start+len` as a training sequence.
    pub fn window(&self, start: usize, len: usize) -> Sequence {
        let end = (start + len).min(self.transitions());
        Sequence {
            z: self.z[start..end].to_vec(),
            actions: self.actions[start..end].to_vec(),
            targets: self.posteriors[start + 1..end + 1].to_vec(),
        }
    }

    /// Arrays `mu`, `sigma`, `z` (`[T+1, L]`) and `a` (`[T, 2]`).
    pub fn to_arrays(&self) -> NamedArrays {
        let n = self.posteriors.len();
        let l = self.z[0].len();
        let cat = |rows: Vec<&Vec<f64>>| rows.into_iter().flatten().copied().collect::<Vec<f64>>();
        let mut a = NamedArrays::new();
        let t = |shape, data| Tensor::from_vec(shape, data).expect("episode is non-empty");
        a.insert("mu", t(vec![n, l], cat(self.posteriors.iter().map(|g| &g.mu).collect())));
        a.insert("sigma", t(vec![n, l], cat(self.posteriors.iter().map(|g| &g.sigma).collect())));
        a.insert("z", t(vec![n, l], cat(self.z.iter().collect())));
        let acts = self.actions.iter().flat_map(|a| [a.steer, a.throttle_brake]).collect();
        a.insert("a", t(vec![n - 1, ACTION_DIM], acts));
        a
    }

    pub fn from_arrays(arrays: &NamedArrays) -> Result<Self> {
        let mu = arrays.require("mu")?;
        let sigma = arrays.require("sigma")?;
        let z = arrays.require("z")?;
        let a = arrays.require("a")?;
        if mu.rank() != 2 || sigma.shape() != mu.shape() || z.shape() != mu.shape() {
            return Err(Error::Shape("latent episode arrays disagree".into()));
        }
        let (n, l) = (mu.shape()[0], mu.shape()[1]);
        if a.shape() != [n - 1, ACTION_DIM] {
            return Err(Error::Shape(format!("actions {:?} for {n} frames", a.shape())));
        }
        let rows = |t: &Tensor| t.data().chunks(l).map(<[f64]>::to_vec).collect::<Vec<_>>();
        let ep = Self {
            posteriors: rows(mu)
                .into_iter()
                .zip(rows(sigma))
                .map(|(mu, sigma)| LatentGaussian { mu, sigma })
                .collect(),
            z: rows(z),
            actions: a.data().chunks(2).map(|c| Action::new(c[0], c[1])).collect(),
        };
        ep.validate()?;
        Ok(ep)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RnnTrainConfig {
    pub epochs: usize,
    /// Truncated-BPTT window in transitions.
    pub window: usize,
    pub learning_rate: f64,
    /// Decay the learning rate linearly over the epochs, reaching
    /// `learning_rate / epochs` in the last one.
    pub lr_decay: bool,
    pub seed: u64,
}

impl Default for RnnTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            window: 32,
            learning_rate: 3e-3,
            lr_decay: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RnnEpoch {
    pub epoch: usize,
    /// Transition-weighted mean KL.
    pub loss: f64,
}

impl RnnEpoch {
    pub const HEADER: &'static str = "epoch,loss";

    pub fn log_line(&self) -> String {
        format!("{},{}", self.epoch, self.loss)
    }
}

/// Truncated BPTT: each episode is walked window by window, carrying the
/// recurrent state forward without gradient, with one Adam step per window.
pub fn train_rnn(
    episodes: &[LatentEpisode],
    mut params: LstmParams,
    cfg: &RnnTrainConfig,
) -> Result<(LstmParams, Vec<RnnEpoch>)> {
    if episodes.is_empty() {
        return Err(Error::Input("empty latent dataset".into()));
    }
    if cfg.window == 0 || cfg.epochs == 0 {
        return Err(Error::Config("epochs and window must be positive".into()));
    }
    for ep in episodes {
        ep.validate()?;
    }
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.learning_rate,
        ..Default::default()
    });
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        if cfg.lr_decay {
            adam.config.lr = cfg.learning_rate * (cfg.epochs - epoch) as f64 / cfg.epochs as f64;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64));
        let mut order: Vec<usize> = (0..episodes.len()).collect();
        order.shuffle(&mut rng);
        let (mut total, mut count) = (0.0, 0usize);
        for &e in &order {
            let ep = &episodes[e];
            let mut state = RnnState::zeros(params.config.hidden);
            let mut start = 0;
            while start < ep.transitions() {
                let seq = ep.window(start, cfg.window);
                let out = seq_loss_from(&seq, &state, &params).map_err(|err| match err {
                    Error::Numerical(m) => Error::Numerical(format!("{m} (step {step})")),
                    other => other,
                })?;
                if out.grads.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Numerical(format!("non-finite gradient at step {step}")));
                }
                adam.step(params.tensors.iter_mut().map(Arc::make_mut), &out.grads)?;
                total += out.loss * seq.len() as f64;
                count += seq.len();
                state = out.final_state;
                start += cfg.window;
                step += 1;
            }
        }
        history.push(RnnEpoch {
            epoch,
            loss: total / count as f64,
        });
    }
    Ok((params, history))
}

/// Roll the memory forward on its own samples: each prediction is sampled
/// and fed back as the next input.
pub fn dream_rollout(
    z0: &LatentSample,
    actions: &[Action],
    params: &LstmParams,
    seed: u64,
) -> Result<Vec<PredictedLatent>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = RnnState::zeros(params.config.hidden);
    let mut z = z0.z.clone();
    let mut out = Vec::with_capacity(actions.len());
    for &a in actions {
        let (next, pred) = lstm_step(&state, &z, a, params)?;
        z = pred
            .mu_hat
            .iter()
            .zip(&pred.sigma_hat)
            .map(|(m, s)| {
                let e: f64 = StandardNormal.sample(&mut rng);
                m + s * e
            })
            .collect();
        state = next;
        out.push(pred);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> LstmConfig {
        LstmConfig {
            latent_dim: 3,
            hidden: 4,
        }
    }

    #[test]
    fn zero_params_zero_state() {
        let p = LstmParams::zeros(cfg()).unwrap();
        let (s, pred) = lstm_step(&RnnState::zeros(4), &[1.0, -1.0, 0.5], Action::new(0.3, 0.9), &p).unwrap();
        assert_eq!(s, RnnState::zeros(4));
        assert_eq!(pred.mu_hat, vec![0.0; 3]);
        assert_eq!(pred.sigma_hat, vec![1.0; 3]);
    }

    #[test]
    fn dimension_mismatch() {
        let p = LstmParams::zeros(cfg()).unwrap();
        assert!(matches!(
            lstm_step(&RnnState::zeros(4), &[0.0; 2], Action::default(), &p),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            lstm_step(&RnnState::zeros(5), &[0.0; 3], Action::default(), &p),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn tape_forward_matches_direct_step() {
        let p = LstmParams::init(cfg(), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let seq = Sequence {
            z: (0..5).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
            actions: (0..5).map(|i| Action::new(0.1 * i as f64, -0.2)).collect(),
            targets: (0..5)
                .map(|_| LatentGaussian::from_logvar(vec![0.1, 0.2, -0.3], &[-1.0, 0.0, 0.5]))
                .collect(),
        };
        let mut state = RnnState::zeros(4);
        let mut kl = 0.0;
        for t in 0..5 {
            let (s, pred) = lstm_step(&state, &seq.z[t], seq.actions[t], &p).unwrap();
            let tg = &seq.targets[t];
            kl += crate::kl::gaussian_kl(&pred.mu_hat, &pred.logvar(), &tg.mu, &tg.logvar());
            state = s;
        }
        let out = seq_loss_from(&seq, &RnnState::zeros(4), &p).unwrap();
        assert!((out.loss - kl / 5.0).abs() < 1e-12);
        for (a, b) in out.final_state.h.iter().zip(&state.h) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_dream_and_empty_dataset() {
        let p = LstmParams::zeros(cfg()).unwrap();
        assert!(dream_rollout(&LatentSample { z: vec![0.0; 3] }, &[], &p, 0).unwrap().is_empty());
        assert!(matches!(train_rnn(&[], p, &RnnTrainConfig::default()), Err(Error::Input(_))));
    }

    #[test]
    fn episode_arrays_round_trip() {
        let ep = LatentEpisode {
            posteriors: (0..3)
                .map(|i| LatentGaussian { mu: vec![i as f64, 1.0], sigma: vec![0.5, 2.0] })
                .collect(),
            z: vec![vec![0.1, 0.2], vec![0.3, 0.4], vec![0.5, 0.6]],
            actions: vec![Action::new(0.1, 0.2), Action::new(-0.5, 1.0)],
        };
        assert_eq!(LatentEpisode::from_arrays(&ep.to_arrays()).unwrap(), ep);
    }
}

//! Denoising-diffusion gesture generator with classifier-free guidance,
//! parameterized over pose dimensionality.
//!
//! The denoiser is a temporal convolution stack: per-frame audio embeddings
//! are concatenated to the noisy pose frames along the feature axis, a
//! sinusoidal embedding of the diffusion step is added after the input
//! projection, and four dilated residual blocks predict the noise. Condition
//! dropout swaps the audio embedding for a learned null token, which enables
//! guided sampling eps_u + (1+w)(eps_c - eps_u); w = 0 short-circuits to the
//! conditional prediction, bit for bit.

use crate::audio::{FeatureMatrix, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::nn::{mse, sinusoidal_embedding, tanh_backward, tanh_forward, Conv1d, Dense, Padding};
use crate::optim::{adam_update, AdamConfig};
use crate::pose::{tensor_to_seq, PoseSequence};
use crate::rng::Rng;
use crate::tensor::{ParamId, ParamStore, Tensor};

const STEP_EMBED: usize = 64;
const AUDIO_WIDTH: usize = 48;

// ---------------------------------------------------------------------------
// Noise schedule
// ---------------------------------------------------------------------------

/// Forward-process schedule. `alpha_bar(0) = 1` and `alpha_bar(T)` is close
/// to zero so that the terminal marginal is (nearly) a standard Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>, // length T+1, index by t
}

impl NoiseSchedule {
    pub fn linear(t_count: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
        if t_count == 0 {
            return Err(Error::invalid("schedule needs at least one step".to_string()));
        }
        if !(beta_start > 0.0 && beta_end < 1.0 && beta_end >= beta_start) {
            return Err(Error::invalid(format!(
                "betas must satisfy 0 < {beta_start} <= {beta_end} < 1"
            )));
        }
        let mut betas = Vec::with_capacity(t_count);
        for i in 0..t_count {
            let frac = if t_count == 1 {
                0.0
            } else {
                i as f64 / (t_count - 1) as f64
            };
            betas.push(beta_start + (beta_end - beta_start) * frac);
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(t_count + 1);
        alpha_bars.push(1.0);
        let mut acc = 1.0;
        for &a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(NoiseSchedule {
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// Default: 100 steps, betas 1e-3 to 0.2 (alpha_bar(T) ~ 2.5e-5).
    pub fn default_schedule() -> NoiseSchedule {
        NoiseSchedule::linear(100, 1e-3, 0.2).expect("valid default")
    }

    pub fn t_count(&self) -> usize {
        self.betas.len()
    }

    /// t in 1..=T.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// t in 0..=T; alpha_bar(0) = 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }
}

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise, t in 1..=T.
pub fn forward_diffuse(x0: &Tensor, t: usize, noise: &Tensor, schedule: &NoiseSchedule) -> Result<Tensor> {
    if t == 0 || t > schedule.t_count() {
        return Err(Error::invalid(format!(
            "diffusion step {t} outside 1..={}",
            schedule.t_count()
        )));
    }
    if x0.shape() != noise.shape() {
        return Err(Error::shape(format!(
            "x0 shape {:?} vs noise shape {:?}",
            x0.shape(),
            noise.shape()
        )));
    }
    let ab = schedule.alpha_bar(t);
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = x0
        .data()
        .iter()
        .zip(noise.data())
        .map(|(x, n)| sa * x + sn * n)
        .collect();
    Tensor::from_vec(x0.shape(), data)
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct DiffusionHyper {
    pub channels: usize,
    pub kernel: usize,
    pub dilations: Vec<usize>,
    pub t_count: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub cond_dropout: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Windows visited per epoch.
    pub steps_per_epoch: usize,
    pub seed: u64,
}

impl Default for DiffusionHyper {
    fn default() -> Self {
        DiffusionHyper {
            channels: 128,
            kernel: 3,
            dilations: vec![1, 2, 4, 8],
            t_count: 100,
            beta_start: 1e-3,
            beta_end: 0.2,
            cond_dropout: 0.1,
            lr: 3e-4,
            epochs: 10,
            batch: 8,
            steps_per_epoch: 2400,
            seed: 7,
        }
    }
}

/// How a training/inference pass is conditioned.
#[derive(Clone, Copy, Debug)]
pub enum Conditioning<'a> {
    Audio(&'a FeatureMatrix),
    Null,
}

pub struct DenoiserModel {
    pub dim: usize,
    pub hyper: DiffusionHyper,
    store: ParamStore,
    audio_c1: Conv1d,
    audio_c2: Conv1d,
    null_embed: ParamId,
    step_proj: Dense,
    conv_in: Conv1d,
    /// Residual blocks: (temporal conv, per-block audio injection).
    blocks: Vec<(Conv1d, Conv1d)>,
    conv_out: Conv1d,
    /// Feature normalization from the training split (not trained).
    feat_mu: Vec<f64>,
    feat_sd: Vec<f64>,
}

struct AudioCache {
    f_norm: Tensor,
    a1: Tensor,
    a2: Tensor,
}

struct DenoiserCache {
    input: Tensor,
    embed: Tensor,
    h0: Tensor,
    blocks: Vec<(Tensor, Tensor)>,
    h_final: Tensor,
    step_raw: Vec<f64>,
    audio: Option<AudioCache>,
}

impl DenoiserModel {
    pub fn new(dim: usize, hyper: DiffusionHyper) -> DenoiserModel {
        assert!(dim == 2 || dim == 3);
        let pose_ch = 9 * dim;
        let mut store = ParamStore::new();
        let mut rng = Rng::seed_from(hyper.seed);
        let audio_c1 = Conv1d::new(&mut store, "audio.c1", FEATURE_DIM, AUDIO_WIDTH, 3, 1, Padding::Same, &mut rng);
        let audio_c2 = Conv1d::new(&mut store, "audio.c2", AUDIO_WIDTH, AUDIO_WIDTH, 3, 1, Padding::Same, &mut rng);
        let null_embed = store.add("audio.null", Tensor::uniform(&[AUDIO_WIDTH], 0.1, &mut rng));
        let step_proj = Dense::new(&mut store, "step", STEP_EMBED, hyper.channels, &mut rng);
        let conv_in = Conv1d::new(
            &mut store,
            "in",
            pose_ch + AUDIO_WIDTH,
            hyper.channels,
            1,
            1,
            Padding::Same,
            &mut rng,
        );
        let blocks = hyper
            .dilations
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let conv = Conv1d::new(
                    &mut store,
                    &format!("block{i}"),
                    hyper.channels,
                    hyper.channels,
                    hyper.kernel,
                    d,
                    Padding::Same,
                    &mut rng,
                );
                // Audio re-enters at every depth so conditioning survives the
                // stack even when the pose channels already explain x_t.
                let inject = Conv1d::new(
                    &mut store,
                    &format!("block{i}.audio"),
                    AUDIO_WIDTH,
                    hyper.channels,
                    1,
                    1,
                    Padding::Same,
                    &mut rng,
                );
                (conv, inject)
            })
            .collect();
        // Zero head: the untrained model predicts zero noise.
        let conv_out = Conv1d::new_zeroed(&mut store, "out", hyper.channels, pose_ch, 1, 1, Padding::Same);
        DenoiserModel {
            dim,
            hyper,
            store,
            audio_c1,
            audio_c2,
            null_embed,
            step_proj,
            conv_in,
            blocks,
            conv_out,
            feat_mu: vec![0.0; FEATURE_DIM],
            feat_sd: vec![1.0; FEATURE_DIM],
        }
    }

    pub fn schedule(&self) -> NoiseSchedule {
        NoiseSchedule::linear(self.hyper.t_count, self.hyper.beta_start, self.hyper.beta_end)
            .expect("hyper schedule is valid")
    }

    /// Install feature normalization computed on the training split.
    pub fn set_feature_norm(&mut self, mu: Vec<f64>, sd: Vec<f64>) {
        assert_eq!(mu.len(), FEATURE_DIM);
        assert_eq!(sd.len(), FEATURE_DIM);
        self.feat_mu = mu;
        self.feat_sd = sd.into_iter().map(|s| s.max(1e-6)).collect();
    }

    fn normalize_features(&self, features: &FeatureMatrix) -> Tensor {
        let frames = features.frames;
        let mut t = Tensor::zeros(&[FEATURE_DIM, frames]);
        for f in 0..frames {
            let row = features.rowf(f);
            for c in 0..FEATURE_DIM {
                t.row_mut(c)[f] = (row[c] - self.feat_mu[c]) / self.feat_sd[c];
            }
        }
        t
    }

    /// Per-frame audio embedding (AUDIO_WIDTH, frames).
    fn encode_audio(&self, features: &FeatureMatrix) -> (Tensor, AudioCache) {
        let f_norm = self.normalize_features(features);
        let a1 = tanh_forward(&self.audio_c1.forward(&self.store, &f_norm).expect("same padding"));
        let a2 = tanh_forward(&self.audio_c2.forward(&self.store, &a1).expect("same padding"));
        (
            a2.clone(),
            AudioCache {
                f_norm,
                a1,
                a2,
            },
        )
    }

    fn null_embedding(&self, frames: usize) -> Tensor {
        let null = self.store.value(self.null_embed);
        let mut t = Tensor::zeros(&[AUDIO_WIDTH, frames]);
        for c in 0..AUDIO_WIDTH {
            let v = null.data()[c];
            t.row_mut(c).iter_mut().for_each(|x| *x = v);
        }
        t
    }

    fn forward_cache(&self, x_t: &Tensor, t: usize, embed: Tensor, audio: Option<AudioCache>) -> (Tensor, DenoiserCache) {
        let pose_ch = 9 * self.dim;
        let frames = x_t.shape()[1];
        debug_assert_eq!(x_t.shape()[0], pose_ch);
        let mut input = Tensor::zeros(&[pose_ch + AUDIO_WIDTH, frames]);
        for c in 0..pose_ch {
            input.row_mut(c).copy_from_slice(x_t.row(c));
        }
        for c in 0..AUDIO_WIDTH {
            input.row_mut(pose_ch + c).copy_from_slice(embed.row(c));
        }
        let step_raw = sinusoidal_embedding(t as f64, STEP_EMBED);
        let step_vec = self.step_proj.forward_vec(&self.store, &step_raw);
        let mut pre = self.conv_in.forward(&self.store, &input).expect("same padding");
        for c in 0..self.hyper.channels {
            let s = step_vec[c];
            pre.row_mut(c).iter_mut().for_each(|v| *v += s);
        }
        let h0 = tanh_forward(&pre);
        let mut h = h0.clone();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (conv, inject) in &self.blocks {
            let mut pre = conv.forward(&self.store, &h).expect("same padding");
            let inj = inject.forward(&self.store, &embed).expect("same padding");
            for (p, v) in pre.data_mut().iter_mut().zip(inj.data()) {
                *p += v;
            }
            let a = tanh_forward(&pre);
            let mut next = h.clone();
            for (n, v) in next.data_mut().iter_mut().zip(a.data()) {
                *n += v;
            }
            blocks.push((h, a));
            h = next;
        }
        let eps = self.conv_out.forward(&self.store, &h).expect("same padding");
        (
            eps,
            DenoiserCache {
                input,
                embed,
                h0,
                blocks,
                h_final: h,
                step_raw,
                audio,
            },
        )
    }

    fn backward(&mut self, cache: &DenoiserCache, deps: &Tensor) {
        let pose_ch = 9 * self.dim;
        let frames = deps.shape()[1];
        let mut dh = self.conv_out.backward(&mut self.store, &cache.h_final, deps);
        let mut dembed = Tensor::zeros(&[AUDIO_WIDTH, frames]);
        for ((conv, inject), (hin, a)) in self.blocks.iter().zip(&cache.blocks).rev() {
            let da = tanh_backward(a, &dh);
            let dhin = conv.backward(&mut self.store, hin, &da);
            let dinj = inject.backward(&mut self.store, &cache.embed, &da);
            for (d, g) in dembed.data_mut().iter_mut().zip(dinj.data()) {
                *d += g;
            }
            for (d, g) in dh.data_mut().iter_mut().zip(dhin.data()) {
                *d += g;
            }
        }
        let dpre = tanh_backward(&cache.h0, &dh);
        // Step embedding gradient: sum over frames per channel.
        let dstep: Vec<f64> = (0..self.hyper.channels)
            .map(|c| dpre.row(c).iter().sum::<f64>())
            .collect();
        let step_in = Tensor::from_vec(&[STEP_EMBED, 1], cache.step_raw.clone()).unwrap();
        let dstep_t = Tensor::from_vec(&[self.hyper.channels, 1], dstep).unwrap();
        self.step_proj.backward(&mut self.store, &step_in, &dstep_t);

        let dinput = self.conv_in.backward(&mut self.store, &cache.input, &dpre);
        // Audio-embedding gradient: the block injections plus the audio rows
        // of the input projection. Pose rows need no upstream gradient.
        for c in 0..AUDIO_WIDTH {
            for (d, g) in dembed.row_mut(c).iter_mut().zip(dinput.row(pose_ch + c)) {
                *d += g;
            }
        }
        match &cache.audio {
            Some(ac) => {
                let da2_pre = tanh_backward(&ac.a2, &dembed);
                let da1 = self.audio_c2.backward(&mut self.store, &ac.a1, &da2_pre);
                let da1_pre = tanh_backward(&ac.a1, &da1);
                self.audio_c1.backward(&mut self.store, &ac.f_norm, &da1_pre);
            }
            None => {
                let mut dnull = std::mem::replace(self.store.grad_mut(self.null_embed), Tensor::zeros(&[0]));
                for c in 0..AUDIO_WIDTH {
                    dnull.data_mut()[c] += dembed.row(c).iter().sum::<f64>();
                }
                *self.store.grad_mut(self.null_embed) = dnull;
            }
        }
    }

    /// Noise prediction without gradients.
    pub fn predict_noise(&self, x_t: &Tensor, t: usize, cond: Conditioning) -> Tensor {
        let frames = x_t.shape()[1];
        let (embed, audio) = match cond {
            Conditioning::Audio(f) => {
                let (e, c) = self.encode_audio(f);
                (e, Some(c))
            }
            Conditioning::Null => (self.null_embedding(frames), None),
        };
        let (eps, _) = self.forward_cache(x_t, t, embed, audio);
        eps
    }

    /// Classifier-free guided prediction:
    /// eps = eps_uncond + (1 + w) (eps_cond - eps_uncond).
    /// w = 0 short-circuits to the conditional prediction (same code path as
    /// `predict_noise`), making the reduction exact.
    pub fn predict_noise_guided(
        &self,
        x_t: &Tensor,
        t: usize,
        features: &FeatureMatrix,
        guidance_w: f64,
    ) -> Tensor {
        let eps_cond = self.predict_noise(x_t, t, Conditioning::Audio(features));
        if guidance_w == 0.0 {
            return eps_cond;
        }
        let eps_uncond = self.predict_noise(x_t, t, Conditioning::Null);
        let data = eps_uncond
            .data()
            .iter()
            .zip(eps_cond.data())
            .map(|(u, c)| u + (1.0 + guidance_w) * (c - u))
            .collect();
        Tensor::from_vec(eps_cond.shape(), data).unwrap()
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// One optimizer step over a batch of (clean window, features) pairs: sample
/// a step t and noise per window, forward-diffuse, regress the predicted
/// noise onto the true noise, update. Returns the mean loss. Condition
/// dropout draws once per window; `force_null` routes every window through
/// the null token (the cond_dropout = 1 case, made explicit).
pub fn train_step(
    model: &mut DenoiserModel,
    schedule: &NoiseSchedule,
    batch: &[(&Tensor, &FeatureMatrix)],
    cond_dropout_p: f64,
    force_null: bool,
    adam: &AdamConfig,
    rng: &mut Rng,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch".to_string()));
    }
    let pose_ch = 9 * model.dim;
    model.store.zero_grads();
    let mut total = 0.0;
    for (x0, features) in batch {
        if x0.shape()[0] != pose_ch {
            return Err(Error::shape(format!(
                "window has {} channels, model expects {pose_ch}",
                x0.shape()[0]
            )));
        }
        if features.frames != x0.shape()[1] {
            return Err(Error::shape(format!(
                "features cover {} frames, window has {}",
                features.frames,
                x0.shape()[1]
            )));
        }
        let t = 1 + rng.below(schedule.t_count());
        let noise = Tensor::randn(x0.shape(), 1.0, rng);
        let x_t = forward_diffuse(x0, t, &noise, schedule)?;
        let u = rng.uniform();
        let use_null = force_null || u < cond_dropout_p;
        let (embed, audio) = if use_null {
            (model.null_embedding(x0.shape()[1]), None)
        } else {
            let (e, c) = model.encode_audio(features);
            (e, Some(c))
        };
        let (eps, cache) = model.forward_cache(&x_t, t, embed, audio);
        let (loss, grad) = mse(eps.data(), noise.data());
        let deps = Tensor::from_vec(eps.shape(), grad).unwrap();
        model.backward(&cache, &deps);
        total += loss;
    }
    adam_update(&mut model.store, adam);
    Ok(total / batch.len() as f64)
}

#[derive(Clone, Copy, Debug)]
pub struct DiffusionEpoch {
    pub epoch: usize,
    pub train_loss: f64,
}

/// Train on parallel arrays of window tensors and their features.
pub fn train_diffusion(
    windows: &[Tensor],
    features: &[FeatureMatrix],
    dim: usize,
    hyper: DiffusionHyper,
) -> Result<(DenoiserModel, Vec<DiffusionEpoch>)> {
    if windows.is_empty() || windows.len() != features.len() {
        return Err(Error::invalid(format!(
            "need matching nonempty windows/features, got {}/{}",
            windows.len(),
            features.len()
        )));
    }
    let mut model = DenoiserModel::new(dim, hyper.clone());
    model.set_feature_norm_from(features);
    let schedule = model.schedule();
    let adam = AdamConfig::with_lr(hyper.lr);
    let mut rng = Rng::seed_from(hyper.seed).derive(0xD1FF);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut report = Vec::new();
    for epoch in 0..hyper.epochs {
        rng.shuffle(&mut order);
        let take = order.len().min(hyper.steps_per_epoch);
        let mut loss_acc = 0.0;
        let mut batches = 0;
        for chunk in order[..take].chunks(hyper.batch.max(1)) {
            let batch: Vec<(&Tensor, &FeatureMatrix)> =
                chunk.iter().map(|&i| (&windows[i], &features[i])).collect();
            loss_acc += train_step(
                &mut model,
                &schedule,
                &batch,
                hyper.cond_dropout,
                false,
                &adam,
                &mut rng,
            )?;
            batches += 1;
        }
        report.push(DiffusionEpoch {
            epoch,
            train_loss: loss_acc / batches.max(1) as f64,
        });
    }
    Ok((model, report))
}

impl DenoiserModel {
    /// Per-feature mean/std over a feature set (training split).
    pub fn set_feature_norm_from(&mut self, features: &[FeatureMatrix]) {
        let mut mu = vec![0.0; FEATURE_DIM];
        let mut count = 0usize;
        for f in features {
            for fr in 0..f.frames {
                for (m, v) in mu.iter_mut().zip(f.rowf(fr)) {
                    *m += v;
                }
            }
            count += f.frames;
        }
        let count = count.max(1) as f64;
        mu.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; FEATURE_DIM];
        for f in features {
            for fr in 0..f.frames {
                for (s, (v, m)) in var.iter_mut().zip(f.rowf(fr).iter().zip(&mu)) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let sd = var.into_iter().map(|s| (s / count).sqrt().max(1e-6)).collect();
        self.set_feature_norm(mu, sd);
    }
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Ancestral DDPM sampling from pure noise, conditioned on per-frame audio
/// features. Deterministic for a given seed; final directions renormalize to
/// unit length per bone.
pub fn sample(
    model: &DenoiserModel,
    schedule: &NoiseSchedule,
    features: &FeatureMatrix,
    guidance_w: f64,
    fps: f64,
    seed: u64,
) -> Result<PoseSequence> {
    let frames = features.frames;
    if frames == 0 {
        return Err(Error::invalid("cannot sample zero frames".to_string()));
    }
    let pose_ch = 9 * model.dim;
    let mut rng = Rng::seed_from(seed);
    let mut x = Tensor::randn(&[pose_ch, frames], 1.0, &mut rng);
    for t in (1..=schedule.t_count()).rev() {
        let eps = model.predict_noise_guided(&x, t, features, guidance_w);
        let beta = schedule.beta(t);
        let alpha = schedule.alpha(t);
        let ab = schedule.alpha_bar(t);
        let coeff = beta / (1.0 - ab).sqrt();
        let inv_sqrt_alpha = 1.0 / alpha.sqrt();
        let sigma = beta.sqrt();
        let data = x.data();
        let eps_d = eps.data();
        let mut next = Vec::with_capacity(data.len());
        if t > 1 {
            for (xv, ev) in data.iter().zip(eps_d) {
                next.push(inv_sqrt_alpha * (xv - coeff * ev) + sigma * rng.normal());
            }
        } else {
            for (xv, ev) in data.iter().zip(eps_d) {
                next.push(inv_sqrt_alpha * (xv - coeff * ev));
            }
        }
        x = Tensor::from_vec(x.shape(), next).unwrap();
    }
    tensor_to_seq(&x, model.dim, fps)
}

/// n seeded samples conditioned on the given per-window features (cycled when
/// n exceeds the window count). Sample i uses substream i of `seed`.
pub fn sample_batch(
    model: &DenoiserModel,
    schedule: &NoiseSchedule,
    features: &[FeatureMatrix],
    n: usize,
    guidance_w: f64,
    fps: f64,
    seed: u64,
) -> Result<Vec<PoseSequence>> {
    if n > 0 && features.is_empty() {
        return Err(Error::invalid("no conditioning windows".to_string()));
    }
    let master = Rng::seed_from(seed);
    (0..n)
        .map(|i| {
            sample(
                model,
                schedule,
                &features[i % features.len()],
                guidance_w,
                fps,
                master.derive(i as u64).seed(),
            )
        })
        .collect()
}

impl DenoiserModel {
    /// Finite-difference check of one denoising step's gradient, through the
    /// chosen conditioning path (audio encoder or null token).
    pub fn grad_check(
        &mut self,
        x0: &Tensor,
        features: &FeatureMatrix,
        t: usize,
        use_null: bool,
        eps: f64,
        max_per_tensor: usize,
    ) -> Result<crate::gradcheck::GradCheckReport> {
        let schedule = self.schedule();
        let mut rng = Rng::seed_from(0x6C);
        let noise = Tensor::randn(x0.shape(), 1.0, &mut rng);
        let x_t = forward_diffuse(x0, t, &noise, &schedule)?;
        let mut store = std::mem::take(&mut self.store);
        let report = crate::gradcheck::grad_check(
            &mut store,
            |store| {
                std::mem::swap(&mut self.store, store);
                let (embed, audio) = if use_null {
                    (self.null_embedding(x0.shape()[1]), None)
                } else {
                    let (e, c) = self.encode_audio(features);
                    (e, Some(c))
                };
                let (eps_hat, cache) = self.forward_cache(&x_t, t, embed, audio);
                let (loss, grad) = mse(eps_hat.data(), noise.data());
                let deps = Tensor::from_vec(eps_hat.shape(), grad).unwrap();
                self.backward(&cache, &deps);
                std::mem::swap(&mut self.store, store);
                loss
            },
            eps,
            max_per_tensor,
        );
        self.store = store;
        Ok(report)
    }
}

// ---------------------------------------------------------------------------
// Bundles
// ---------------------------------------------------------------------------

impl DenoiserModel {
    pub fn to_bundle(&self) -> crate::bundle::ModelBundle {
        let dil = self
            .hyper
            .dilations
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let mut bundle = crate::bundle::ModelBundle::from_store(
            &self.store,
            vec![
                ("kind".into(), "diffusion".into()),
                ("dim".into(), self.dim.to_string()),
                ("channels".into(), self.hyper.channels.to_string()),
                ("kernel".into(), self.hyper.kernel.to_string()),
                ("dilations".into(), dil),
                ("t_count".into(), self.hyper.t_count.to_string()),
                ("beta_start".into(), self.hyper.beta_start.to_string()),
                ("beta_end".into(), self.hyper.beta_end.to_string()),
                ("cond_dropout".into(), self.hyper.cond_dropout.to_string()),
                ("seed".into(), self.hyper.seed.to_string()),
            ],
        );
        bundle.tensors.push((
            "norm.mu".into(),
            vec![FEATURE_DIM],
            self.feat_mu.iter().map(|&v| v as f32).collect(),
        ));
        bundle.tensors.push((
            "norm.sd".into(),
            vec![FEATURE_DIM],
            self.feat_sd.iter().map(|&v| v as f32).collect(),
        ));
        bundle.tensors.sort_by(|a, b| a.0.cmp(&b.0));
        bundle
    }

    pub fn from_bundle(bundle: &crate::bundle::ModelBundle) -> Result<DenoiserModel> {
        let kind = bundle.get_hyper("kind").unwrap_or("");
        if kind != "diffusion" {
            return Err(Error::invalid(format!("bundle kind '{kind}', expected 'diffusion'")));
        }
        let dim: usize = bundle.hyper_parsed("dim")?;
        let dilations = bundle
            .get_hyper("dilations")
            .ok_or_else(|| Error::invalid("bundle missing dilations".to_string()))?
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::invalid("bad dilations in bundle".to_string()))?;
        let hyper = DiffusionHyper {
            channels: bundle.hyper_parsed("channels")?,
            kernel: bundle.hyper_parsed("kernel")?,
            dilations,
            t_count: bundle.hyper_parsed("t_count")?,
            beta_start: bundle.hyper_parsed("beta_start")?,
            beta_end: bundle.hyper_parsed("beta_end")?,
            cond_dropout: bundle.hyper_parsed("cond_dropout")?,
            seed: bundle.hyper_parsed("seed")?,
            ..DiffusionHyper::default()
        };
        let mut model = DenoiserModel::new(dim, hyper);
        let mut filtered = bundle.clone();
        let mut mu = None;
        let mut sd = None;
        filtered.tensors.retain(|(name, _, data)| match name.as_str() {
            "norm.mu" => {
                mu = Some(data.iter().map(|&v| v as f64).collect::<Vec<_>>());
                false
            }
            "norm.sd" => {
                sd = Some(data.iter().map(|&v| v as f64).collect::<Vec<_>>());
                false
            }
            _ => true,
        });
        filtered.load_into(&mut model.store)?;
        match (mu, sd) {
            (Some(mu), Some(sd)) if mu.len() == FEATURE_DIM && sd.len() == FEATURE_DIM => {
                model.set_feature_norm(mu, sd);
            }
            _ => return Err(Error::invalid("bundle missing feature normalization".to_string())),
        }
        Ok(model)
    }
}

//! Objective evaluation suite: Fréchet gesture distance over learned
//! features, beat consistency, diversity, and the feature autoencoder plus
//! kinematic beat extraction they depend on.
//!
//! FGD uses the standard Fréchet form between Gaussian fits,
//! `||mu_r - mu_g||^2 + Tr(S_r + S_g - 2 sqrt(S_r^{1/2} S_g S_r^{1/2}))`,
//! with the symmetrized PSD matrix square root from [`crate::linalg`].

use crate::audio::BeatSet;
use crate::dataset::{GestureDataset, WindowRef, WINDOW_LEN};
use crate::error::{Error, Result};
use crate::linalg::{asymmetry, mat_mul, matrix_sqrt_psd, sym_eigen, trace};
use crate::nn::{mse, tanh_backward, tanh_forward, Conv1d, Dense, Padding};
use crate::optim::{adam_update, AdamConfig};
use crate::pose::{project_to_2d, seq_to_tensor, PoseSequence};
use crate::rng::Rng;
use crate::tensor::{ParamStore, Tensor};

pub const LATENT_DIM: usize = 32;

// ---------------------------------------------------------------------------
// Feature statistics and FGD
// ---------------------------------------------------------------------------

/// Mean and covariance of encoded gesture features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mu: Vec<f64>,
    /// Row-major dim x dim covariance.
    pub sigma: Vec<f64>,
}

impl FeatureStats {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Sample mean and unbiased sample covariance of a set of latents.
    pub fn from_latents(latents: &[Vec<f64>]) -> Result<FeatureStats> {
        if latents.len() < 2 {
            return Err(Error::invalid(format!(
                "covariance needs at least 2 samples, got {}",
                latents.len()
            )));
        }
        let dim = latents[0].len();
        if latents.iter().any(|l| l.len() != dim) {
            return Err(Error::shape("latents have mixed dimensions".to_string()));
        }
        let n = latents.len() as f64;
        let mut mu = vec![0.0; dim];
        for l in latents {
            for (m, v) in mu.iter_mut().zip(l) {
                *m += v;
            }
        }
        mu.iter_mut().for_each(|m| *m /= n);
        let mut sigma = vec![0.0; dim * dim];
        for l in latents {
            for i in 0..dim {
                let di = l[i] - mu[i];
                for j in i..dim {
                    sigma[i * dim + j] += di * (l[j] - mu[j]);
                }
            }
        }
        for i in 0..dim {
            for j in i..dim {
                let v = sigma[i * dim + j] / (n - 1.0);
                sigma[i * dim + j] = v;
                sigma[j * dim + i] = v;
            }
        }
        Ok(FeatureStats { mu, sigma })
    }

    /// Symmetry and numerical positive semi-definiteness.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.sigma.len() != d * d {
            return Err(Error::shape("sigma size does not match mu".to_string()));
        }
        if asymmetry(&self.sigma, d) > 1e-6 {
            return Err(Error::invalid("sigma is not symmetric".to_string()));
        }
        let (w, _) = sym_eigen(&self.sigma, d);
        if let Some(&min) = w.first() {
            if min < -1e-6 {
                return Err(Error::invalid(format!("sigma has eigenvalue {min:.3e}")));
            }
        }
        Ok(())
    }
}

/// Fréchet distance between Gaussian fits of real and generated features.
/// Small negative values from rounding clamp to zero.
pub fn fgd(real: &FeatureStats, gen: &FeatureStats) -> Result<f64> {
    let d = real.dim();
    if gen.dim() != d {
        return Err(Error::shape(format!(
            "feature dims differ: {} vs {}",
            d,
            gen.dim()
        )));
    }
    let mean_term: f64 = real
        .mu
        .iter()
        .zip(&gen.mu)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let s_r = matrix_sqrt_psd(&real.sigma, d)?;
    let inner = mat_mul(&mat_mul(&s_r, &gen.sigma, d), &s_r, d);
    let cross = matrix_sqrt_psd(&inner, d)?;
    let value =
        mean_term + trace(&real.sigma, d) + trace(&gen.sigma, d) - 2.0 * trace(&cross, d);
    Ok(value.max(0.0))
}

// ---------------------------------------------------------------------------
// Kinematic beats and beat consistency
// ---------------------------------------------------------------------------

/// Kinematic beat timestamps of one sequence, seconds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KinematicBeats {
    times: Vec<f64>,
}

impl KinematicBeats {
    /// Beats at explicit, strictly increasing times.
    pub fn from_times(times: Vec<f64>) -> Result<KinematicBeats> {
        for w in times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::invalid(format!(
                    "kinematic beat times must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(KinematicBeats { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Mean angular change per transition, radians/frame; entry j is the change
/// from frame j to frame j+1. Sentinel (zero) directions contribute zero.
pub fn angular_velocity_trace(seq: &PoseSequence) -> Vec<f64> {
    let frames = seq.frames();
    let bones = seq.bones();
    let mut trace = Vec::with_capacity(frames.saturating_sub(1));
    for f in 1..frames {
        let mut acc = 0.0;
        for b in 0..bones {
            let a = seq.dir(f - 1, b);
            let c = seq.dir(f, b);
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>();
            let nc: f64 = c.iter().map(|x| x * x).sum::<f64>();
            if na == 0.0 || nc == 0.0 {
                continue;
            }
            let dot: f64 = a.iter().zip(c).map(|(x, y)| x * y).sum();
            acc += dot.clamp(-1.0, 1.0).acos();
        }
        trace.push(acc / bones as f64);
    }
    trace
}

/// Frames where the mean angular velocity is a strict local maximum above
/// `threshold` (default: mean + 1 std of the per-sequence trace). The
/// velocity of a transition is assigned to its later frame, so a rotation
/// between frames 5 and 6 yields a beat at frame 6.
pub fn extract_kinematic_beats(seq: &PoseSequence, threshold: Option<f64>) -> Result<KinematicBeats> {
    if seq.frames() < 2 {
        return Err(Error::shape(format!(
            "kinematic beats need at least 2 frames, got {}",
            seq.frames()
        )));
    }
    let trace = angular_velocity_trace(seq);
    let thr = threshold.unwrap_or_else(|| {
        let n = trace.len() as f64;
        let mean = trace.iter().sum::<f64>() / n;
        let var = trace.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        mean + var.sqrt()
    });
    let mut times = Vec::new();
    for j in 1..trace.len().saturating_sub(1) {
        if trace[j] > thr && trace[j] > trace[j - 1] && trace[j] >= trace[j + 1] {
            times.push((j + 1) as f64 / seq.fps());
        }
    }
    Ok(KinematicBeats { times })
}

/// Beat consistency: mean over audio beats of a Gaussian kernel on the
/// distance to the nearest kinematic beat. Empty audio beats are a
/// structural error; empty kinematic beats score 0 by convention.
pub fn beat_consistency(audio: &BeatSet, kin: &KinematicBeats, sigma: f64) -> Result<f64> {
    if audio.is_empty() {
        return Err(Error::invalid(
            "beat consistency is undefined without audio beats".to_string(),
        ));
    }
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    if kin.is_empty() {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for &ta in audio.times() {
        let d2 = kin
            .times()
            .iter()
            .map(|&tk| (tk - ta) * (tk - ta))
            .fold(f64::INFINITY, f64::min);
        acc += (-d2 / (2.0 * sigma * sigma)).exp();
    }
    Ok(acc / audio.len() as f64)
}

// ---------------------------------------------------------------------------
// Diversity
// ---------------------------------------------------------------------------

/// Distance between the means of two explicit index sets.
pub fn subset_mean_distance(features: &[Vec<f64>], a: &[usize], b: &[usize]) -> f64 {
    let dim = features[0].len();
    let mut mu_a = vec![0.0; dim];
    let mut mu_b = vec![0.0; dim];
    for &i in a {
        for (m, v) in mu_a.iter_mut().zip(&features[i]) {
            *m += v;
        }
    }
    for &i in b {
        for (m, v) in mu_b.iter_mut().zip(&features[i]) {
            *m += v;
        }
    }
    mu_a.iter_mut().for_each(|m| *m /= a.len() as f64);
    mu_b.iter_mut().for_each(|m| *m /= b.len() as f64);
    mu_a.iter()
        .zip(&mu_b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// One diversity draw: two disjoint uniform subsets of size N (shrunk to
/// floor(count/2) when the pool is small) and the distance of their means.
pub fn diversity(features: &[Vec<f64>], n: usize, seed: u64) -> Result<f64> {
    if features.len() < 2 {
        return Err(Error::invalid(format!(
            "diversity needs at least 2 features, got {}",
            features.len()
        )));
    }
    let n_eff = n.max(1).min(features.len() / 2);
    let mut idx: Vec<usize> = (0..features.len()).collect();
    let mut rng = Rng::seed_from(seed);
    rng.shuffle(&mut idx);
    Ok(subset_mean_distance(
        features,
        &idx[..n_eff],
        &idx[n_eff..2 * n_eff],
    ))
}

/// Reported diversity: the mean of `reps` seeded draws.
pub fn diversity_mean(features: &[Vec<f64>], n: usize, reps: usize, seed: u64) -> Result<f64> {
    let master = Rng::seed_from(seed);
    let mut acc = 0.0;
    for i in 0..reps.max(1) {
        acc += diversity(features, n, master.derive(i as u64).seed())?;
    }
    Ok(acc / reps.max(1) as f64)
}

// ---------------------------------------------------------------------------
// Feature autoencoder
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct EncoderHyper {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Cap on windows visited per epoch.
    pub steps_per_epoch: usize,
    pub seed: u64,
}

impl Default for EncoderHyper {
    fn default() -> Self {
        EncoderHyper {
            epochs: 10,
            batch: 8,
            lr: 1e-3,
            steps_per_epoch: 2000,
            seed: 7,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EpochStat {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Convolutional autoencoder over pose windows; the frozen encoder side maps
/// a window to a 32-dim latent for FGD and diversity.
pub struct FeatureEncoder {
    pub dim: usize,
    pub window_len: usize,
    pub seed: u64,
    store: ParamStore,
    enc_c1: Conv1d,
    enc_c2: Conv1d,
    enc_head: Dense,
    dec_d1: Dense,
    dec_head: Dense,
}

const ENC_WIDTH: usize = 48;

impl FeatureEncoder {
    pub fn new(dim: usize, window_len: usize, seed: u64) -> FeatureEncoder {
        let channels = 9 * dim;
        let mut store = ParamStore::new();
        let mut rng = Rng::seed_from(seed);
        let enc_c1 = Conv1d::new(&mut store, "enc.c1", channels, ENC_WIDTH, 3, 1, Padding::Same, &mut rng);
        let enc_c2 = Conv1d::new(&mut store, "enc.c2", ENC_WIDTH, ENC_WIDTH, 3, 3, Padding::Same, &mut rng);
        let enc_head = Dense::new(&mut store, "enc.head", ENC_WIDTH, LATENT_DIM, &mut rng);
        let dec_d1 = Dense::new(&mut store, "dec.d1", LATENT_DIM, 64, &mut rng);
        // Zero head: an untrained autoencoder reconstructs exactly zero.
        let dec_head = Dense::new_zeroed(&mut store, "dec.head", 64, channels * window_len);
        FeatureEncoder {
            dim,
            window_len,
            seed,
            store,
            enc_c1,
            enc_c2,
            enc_head,
            dec_d1,
            dec_head,
        }
    }

    fn check_input(&self, seq: &PoseSequence) -> Result<()> {
        if seq.dims() != self.dim {
            return Err(Error::shape(format!(
                "encoder is {}D but sequence is {}D",
                self.dim,
                seq.dims()
            )));
        }
        if seq.frames() != self.window_len {
            return Err(Error::shape(format!(
                "encoder expects {} frames, got {}",
                self.window_len,
                seq.frames()
            )));
        }
        Ok(())
    }

    /// Encoder-side forward; returns the latent and the activations needed
    /// for the backward pass.
    fn encode_cache(&self, x: &Tensor) -> (Vec<f64>, Tensor, Tensor) {
        let a1 = tanh_forward(&self.enc_c1.forward(&self.store, x).expect("same padding"));
        let a2 = tanh_forward(&self.enc_c2.forward(&self.store, &a1).expect("same padding"));
        // Temporal mean pool.
        let t = a2.shape()[1] as f64;
        let pooled: Vec<f64> = (0..ENC_WIDTH)
            .map(|c| a2.row(c).iter().sum::<f64>() / t)
            .collect();
        let pooled_t = Tensor::from_vec(&[ENC_WIDTH, 1], pooled).unwrap();
        let latent = self.enc_head.forward(&self.store, &pooled_t);
        (latent.into_data(), a1, a2)
    }

    pub fn encode(&self, seq: &PoseSequence) -> Result<Vec<f64>> {
        self.check_input(seq)?;
        let x = seq_to_tensor(seq);
        let (latent, _, _) = self.encode_cache(&x);
        Ok(latent)
    }

    /// Reconstruction MSE of one window under the current parameters.
    pub fn reconstruction_mse(&self, seq: &PoseSequence) -> Result<f64> {
        self.check_input(seq)?;
        let x = seq_to_tensor(seq);
        let (latent, _, _) = self.encode_cache(&x);
        let latent_t = Tensor::from_vec(&[LATENT_DIM, 1], latent).unwrap();
        let h = tanh_forward(&self.dec_d1.forward(&self.store, &latent_t));
        let recon = self.dec_head.forward(&self.store, &h);
        Ok(mse(recon.data(), x.data()).0)
    }

    /// One training example: forward, backward, gradient accumulation.
    fn accumulate_step(&mut self, x: &Tensor) -> f64 {
        let (latent, a1, a2) = self.encode_cache(x);
        let latent_t = Tensor::from_vec(&[LATENT_DIM, 1], latent).unwrap();
        let pre_h = self.dec_d1.forward(&self.store, &latent_t);
        let h = tanh_forward(&pre_h);
        let recon = self.dec_head.forward(&self.store, &h);
        let (loss, grad) = mse(recon.data(), x.data());
        let drecon = Tensor::from_vec(recon.shape(), grad).unwrap();

        let dh = self.dec_head.backward(&mut self.store, &h, &drecon);
        let dpre_h = tanh_backward(&h, &dh);
        let dlatent = self.dec_d1.backward(&mut self.store, &latent_t, &dpre_h);

        // Back into the encoder head and the mean pool.
        let t = self.window_len as f64;
        let pooled: Vec<f64> = (0..ENC_WIDTH)
            .map(|c| a2.row(c).iter().sum::<f64>() / t)
            .collect();
        let pooled_t = Tensor::from_vec(&[ENC_WIDTH, 1], pooled).unwrap();
        let dpooled = self.enc_head.backward(&mut self.store, &pooled_t, &dlatent);
        let mut da2 = Tensor::zeros(a2.shape());
        for c in 0..ENC_WIDTH {
            let g = dpooled.data()[c] / t;
            da2.row_mut(c).iter_mut().for_each(|v| *v = g);
        }
        let da2_pre = tanh_backward(&a2, &da2);
        let da1 = self.enc_c2.backward(&mut self.store, &a1, &da2_pre);
        let da1_pre = tanh_backward(&a1, &da1);
        self.enc_c1.backward(&mut self.store, x, &da1_pre);
        loss
    }

    /// Finite-difference check of the full autoencoder gradient on one window.
    pub fn grad_check(
        &mut self,
        seq: &PoseSequence,
        eps: f64,
        max_per_tensor: usize,
    ) -> Result<crate::gradcheck::GradCheckReport> {
        self.check_input(seq)?;
        let x = seq_to_tensor(seq);
        let mut store = std::mem::take(&mut self.store);
        let report = crate::gradcheck::grad_check(
            &mut store,
            |store| {
                std::mem::swap(&mut self.store, store);
                let loss = self.accumulate_step(&x);
                std::mem::swap(&mut self.store, store);
                loss
            },
            eps,
            max_per_tensor,
        );
        self.store = store;
        Ok(report)
    }

    pub fn to_bundle(&self) -> crate::bundle::ModelBundle {
        crate::bundle::ModelBundle::from_store(
            &self.store,
            vec![
                ("kind".into(), "encoder".into()),
                ("dim".into(), self.dim.to_string()),
                ("window_len".into(), self.window_len.to_string()),
                ("seed".into(), self.seed.to_string()),
            ],
        )
    }

    pub fn from_bundle(bundle: &crate::bundle::ModelBundle) -> Result<FeatureEncoder> {
        let kind = bundle.get_hyper("kind").unwrap_or("");
        if kind != "encoder" {
            return Err(Error::invalid(format!("bundle kind '{kind}', expected 'encoder'")));
        }
        let dim: usize = bundle.hyper_parsed("dim")?;
        let window_len: usize = bundle.hyper_parsed("window_len")?;
        let seed: u64 = bundle.hyper_parsed("seed")?;
        let mut enc = FeatureEncoder::new(dim, window_len, seed);
        bundle.load_into(&mut enc.store)?;
        Ok(enc)
    }
}

/// Train the feature autoencoder on the given train windows (projected to 2D
/// when `dim == 2`), minimizing reconstruction MSE.
pub fn train_feature_autoencoder(
    dataset: &GestureDataset,
    train_windows: &[WindowRef],
    val_windows: &[WindowRef],
    dim: usize,
    hp: &EncoderHyper,
) -> Result<(FeatureEncoder, Vec<EpochStat>)> {
    if train_windows.is_empty() {
        return Err(Error::invalid("empty training split".to_string()));
    }
    let mut enc = FeatureEncoder::new(dim, WINDOW_LEN, hp.seed);
    let mut rng = Rng::seed_from(hp.seed).derive(0xAE);
    let adam = AdamConfig::with_lr(hp.lr);
    let fetch = |w: WindowRef| -> Result<Tensor> {
        let seq = dataset.window_poses(w, WINDOW_LEN)?;
        let seq = if dim == 2 { project_to_2d(&seq)? } else { seq };
        Ok(seq_to_tensor(&seq))
    };
    let mut stats = Vec::new();
    let mut order: Vec<usize> = (0..train_windows.len()).collect();
    for epoch in 0..hp.epochs {
        rng.shuffle(&mut order);
        let take = order.len().min(hp.steps_per_epoch);
        let mut epoch_loss = 0.0;
        let mut steps = 0;
        for chunk in order[..take].chunks(hp.batch) {
            enc.store.zero_grads();
            let mut batch_loss = 0.0;
            for &i in chunk {
                let x = fetch(train_windows[i])?;
                batch_loss += enc.accumulate_step(&x);
            }
            adam_update(&mut enc.store, &adam);
            epoch_loss += batch_loss;
            steps += chunk.len();
        }
        let train_loss = epoch_loss / steps.max(1) as f64;
        let val_cap = val_windows.len().min(128);
        let mut val_loss = 0.0;
        for w in &val_windows[..val_cap] {
            let seq = dataset.window_poses(*w, WINDOW_LEN)?;
            let seq = if dim == 2 { project_to_2d(&seq)? } else { seq };
            val_loss += enc.reconstruction_mse(&seq)?;
        }
        stats.push(EpochStat {
            epoch,
            train_loss,
            val_loss: val_loss / val_cap.max(1) as f64,
        });
    }
    Ok((enc, stats))
}

/// Gaussian fit of the latents of a set of sequences.
pub fn encode_stats(encoder: &FeatureEncoder, sequences: &[PoseSequence]) -> Result<FeatureStats> {
    if sequences.len() < 2 {
        return Err(Error::invalid(format!(
            "covariance needs at least 2 sequences, got {}",
            sequences.len()
        )));
    }
    let latents: Vec<Vec<f64>> = sequences
        .iter()
        .map(|s| encoder.encode(s))
        .collect::<Result<_>>()?;
    FeatureStats::from_latents(&latents)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_generate, window, SynthConfig, WINDOW_STRIDE};

    #[test]
    fn covariance_matches_textbook_hand_case() {
        let latents = vec![vec![1.0, 2.0], vec![3.0, 0.0], vec![5.0, 4.0]];
        let stats = FeatureStats::from_latents(&latents).unwrap();
        assert_eq!(stats.mu, vec![3.0, 2.0]);
        // Unbiased covariance computed by hand: deviations (-2,0,2) and (0,-2,2).
        let expect = [4.0, 2.0, 2.0, 4.0];
        for (a, b) in stats.sigma.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
        stats.validate().unwrap();
    }

    #[test]
    fn stats_are_permutation_invariant_and_zero_for_identical() {
        let latents = vec![vec![0.5, -1.0], vec![2.0, 3.0], vec![-1.0, 0.0]];
        let mut perm = latents.clone();
        perm.rotate_left(1);
        let a = FeatureStats::from_latents(&latents).unwrap();
        let b = FeatureStats::from_latents(&perm).unwrap();
        for (x, y) in a.mu.iter().zip(&b.mu) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in a.sigma.iter().zip(&b.sigma) {
            assert!((x - y).abs() < 1e-12);
        }
        let same = vec![vec![1.0, 2.0]; 5];
        let s = FeatureStats::from_latents(&same).unwrap();
        assert!(s.sigma.iter().all(|&v| v == 0.0));
    }

    fn eye_stats(dim: usize, mu0: f64, scale: f64) -> FeatureStats {
        let mut sigma = vec![0.0; dim * dim];
        for i in 0..dim {
            sigma[i * dim + i] = scale;
        }
        let mut mu = vec![0.0; dim];
        mu[0] = mu0;
        FeatureStats { mu, sigma }
    }

    #[test]
    fn fgd_closed_forms() {
        let dim = 32;
        let s = eye_stats(dim, 0.0, 1.0);
        assert!(fgd(&s, &s).unwrap() < 1e-8);

        // Means 2 apart, identical unit covariances: FGD = 4.
        let shifted = eye_stats(dim, 2.0, 1.0);
        assert!((fgd(&s, &shifted).unwrap() - 4.0).abs() < 1e-6);

        // Sigma_g = 4I: Tr(I + 4I - 2*2I) = dim.
        let wide = eye_stats(dim, 0.0, 4.0);
        assert!((fgd(&s, &wide).unwrap() - dim as f64).abs() < 1e-6);
    }

    #[test]
    fn fgd_is_symmetric_here() {
        let mut rng = Rng::seed_from(5);
        let latents_a: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..8).map(|_| rng.normal()).collect())
            .collect();
        let latents_b: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..8).map(|_| 0.5 * rng.normal() + 0.3).collect())
            .collect();
        let a = FeatureStats::from_latents(&latents_a).unwrap();
        let b = FeatureStats::from_latents(&latents_b).unwrap();
        let ab = fgd(&a, &b).unwrap();
        let ba = fgd(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-8, "{ab} vs {ba}");
        assert!(ab >= 0.0);
    }

    #[test]
    fn fgd_rejects_dim_mismatch() {
        let a = eye_stats(4, 0.0, 1.0);
        let b = eye_stats(5, 0.0, 1.0);
        assert!(fgd(&a, &b).is_err());
    }

    fn constant_seq(frames: usize) -> PoseSequence {
        let data: Vec<f64> = (0..frames * 9).flat_map(|_| [0.0, 1.0, 0.0]).collect();
        PoseSequence::new(3, 9, 15.0, data).unwrap()
    }

    #[test]
    fn constant_sequence_has_no_beats() {
        let seq = constant_seq(30);
        let beats = extract_kinematic_beats(&seq, None).unwrap();
        assert!(beats.is_empty());
    }

    #[test]
    fn single_rotation_beats_at_the_later_frame() {
        // One bone swings 90 degrees between frames 5 and 6.
        let frames = 12;
        let mut data = Vec::new();
        for f in 0..frames {
            for b in 0..9 {
                if b == 0 && f >= 6 {
                    data.extend_from_slice(&[1.0, 0.0, 0.0]);
                } else {
                    data.extend_from_slice(&[0.0, 1.0, 0.0]);
                }
            }
        }
        let seq = PoseSequence::new(3, 9, 15.0, data).unwrap();
        let beats = extract_kinematic_beats(&seq, None).unwrap();
        assert_eq!(beats.len(), 1);
        assert!((beats.times()[0] - 6.0 / 15.0).abs() < 1e-12);
    }

    #[test]
    fn beat_consistency_hand_cases() {
        let sigma = 0.1;
        let audio = BeatSet::new(vec![1.0]).unwrap();
        let kin = KinematicBeats { times: vec![1.1] };
        let bc = beat_consistency(&audio, &kin, sigma).unwrap();
        assert!((bc - (-0.5f64).exp()).abs() < 1e-9);
        assert!((bc - 0.606531).abs() < 1e-6);

        let audio = BeatSet::new(vec![0.5, 1.5]).unwrap();
        let kin = KinematicBeats {
            times: vec![0.5, 1.7],
        };
        let bc = beat_consistency(&audio, &kin, sigma).unwrap();
        let expect = (1.0 + (-2.0f64).exp()) / 2.0;
        assert!((bc - expect).abs() < 1e-9);
        assert!((bc - 0.567668).abs() < 1e-6);

        // Coincident beats score exactly 1.
        let audio = BeatSet::new(vec![0.25, 0.75, 1.25]).unwrap();
        let kin = KinematicBeats {
            times: vec![0.25, 0.75, 1.25],
        };
        assert_eq!(beat_consistency(&audio, &kin, sigma).unwrap(), 1.0);
    }

    #[test]
    fn beat_consistency_edge_conventions() {
        let kin = KinematicBeats { times: vec![1.0] };
        assert!(beat_consistency(&BeatSet::default(), &kin, 0.1).is_err());
        let audio = BeatSet::new(vec![1.0]).unwrap();
        assert_eq!(
            beat_consistency(&audio, &KinematicBeats::default(), 0.1).unwrap(),
            0.0
        );
    }

    #[test]
    fn beat_consistency_monotone_under_tightening() {
        // One kinematic beat per audio beat, each within half the min gap so
        // the matching is one-to-one; pulling every kinematic beat toward its
        // audio beat must not decrease BC.
        let mut rng = Rng::seed_from(8);
        for _ in 0..50 {
            let mut audio = Vec::new();
            let mut t = 0.5;
            for _ in 0..6 {
                t += rng.range(0.4, 0.9);
                audio.push(t);
            }
            let offsets: Vec<f64> = audio.iter().map(|_| rng.range(-0.18, 0.18)).collect();
            let kin_far: Vec<f64> = audio.iter().zip(&offsets).map(|(a, o)| a + o).collect();
            let kin_near: Vec<f64> = audio
                .iter()
                .zip(&offsets)
                .map(|(a, o)| a + 0.3 * o)
                .collect();
            let audio = BeatSet::new(audio).unwrap();
            let far = beat_consistency(&audio, &KinematicBeats { times: kin_far }, 0.1).unwrap();
            let near = beat_consistency(&audio, &KinematicBeats { times: kin_near }, 0.1).unwrap();
            assert!(near >= far - 1e-12, "near {near} < far {far}");
            assert!((0.0..=1.0).contains(&far) && (0.0..=1.0).contains(&near));
        }
    }

    #[test]
    fn diversity_forced_partition_hand_case() {
        let features = vec![
            vec![0.0, 0.0],
            vec![2.0, 0.0],
            vec![0.0, 2.0],
            vec![0.0, 0.0],
        ];
        let d = subset_mean_distance(&features, &[0, 1], &[2, 3]);
        assert!((d - 2.0f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn diversity_zero_for_identical_features() {
        let features = vec![vec![1.0, -2.0, 3.0]; 40];
        assert_eq!(diversity(&features, 10, 5).unwrap(), 0.0);
    }

    #[test]
    fn diversity_is_seed_deterministic_and_shrinks_n() {
        let mut rng = Rng::seed_from(10);
        let features: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..4).map(|_| rng.normal()).collect())
            .collect();
        let a = diversity_mean(&features, 500, 100, 3).unwrap();
        let b = diversity_mean(&features, 500, 100, 3).unwrap();
        assert_eq!(a, b);
        assert!(diversity(&features, 1, 3).unwrap().is_finite());
        assert!(diversity(&[vec![1.0]], 1, 3).is_err());
    }

    #[test]
    fn diversity_decreases_with_subset_size() {
        // i.i.d. zero-mean features: the mean distance shrinks like 1/sqrt(N).
        let mut rng = Rng::seed_from(11);
        let features: Vec<Vec<f64>> = (0..1200)
            .map(|_| (0..16).map(|_| rng.normal()).collect())
            .collect();
        let big = diversity_mean(&features, 512, 100, 4).unwrap();
        let small = diversity_mean(&features, 8, 100, 4).unwrap();
        assert!(big < small, "Div(N=512) = {big} should be < Div(N=8) = {small}");
    }

    fn tiny_dataset() -> (GestureDataset, Vec<WindowRef>) {
        let config = SynthConfig {
            clip_count: 4,
            clip_seconds: 6.0,
            ..SynthConfig::default()
        };
        let ds = synth_generate(&config, 42).unwrap();
        let ws = window(&ds, WINDOW_LEN, WINDOW_STRIDE);
        (ds, ws)
    }

    #[test]
    fn untrained_autoencoder_mse_equals_data_second_moment() {
        let (ds, ws) = tiny_dataset();
        let enc = FeatureEncoder::new(3, WINDOW_LEN, 1);
        let seq = ds.window_poses(ws[0], WINDOW_LEN).unwrap();
        let loss = enc.reconstruction_mse(&seq).unwrap();
        // Zero-output head: the error is the mean square of the data itself,
        // computed independently here.
        let x = seq_to_tensor(&seq);
        let oracle = x.data().iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        assert!((loss - oracle).abs() < 1e-12, "{loss} vs {oracle}");
    }

    #[test]
    fn autoencoder_trains_and_beats_mean_baseline() {
        let (ds, ws) = tiny_dataset();
        let train: Vec<WindowRef> = ws.iter().step_by(2).copied().collect();
        let val: Vec<WindowRef> = ws.iter().skip(1).step_by(2).copied().collect();
        let hp = EncoderHyper {
            epochs: 8,
            steps_per_epoch: 300,
            batch: 4,
            lr: 5e-3,
            ..EncoderHyper::default()
        };
        let (enc, stats) = train_feature_autoencoder(&ds, &train, &val, 3, &hp).unwrap();

        // Per-channel mean baseline from the train split.
        let mut mean = vec![0.0; 27 * WINDOW_LEN];
        for w in &train {
            let x = seq_to_tensor(&ds.window_poses(*w, WINDOW_LEN).unwrap());
            for (m, v) in mean.iter_mut().zip(x.data()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= train.len() as f64);
        let mut baseline = 0.0;
        for w in &val {
            let x = seq_to_tensor(&ds.window_poses(*w, WINDOW_LEN).unwrap());
            baseline += x
                .data()
                .iter()
                .zip(&mean)
                .map(|(v, m)| (v - m) * (v - m))
                .sum::<f64>()
                / x.len() as f64;
        }
        baseline /= val.len() as f64;
        let final_val = stats.last().unwrap().val_loss;
        assert!(
            final_val < baseline,
            "autoencoder val MSE {final_val} should beat mean baseline {baseline}"
        );
        // Latents have the advertised width.
        let z = enc
            .encode(&ds.window_poses(ws[0], WINDOW_LEN).unwrap())
            .unwrap();
        assert_eq!(z.len(), LATENT_DIM);
    }

    #[test]
    fn encoder_training_is_seed_deterministic() {
        let (ds, ws) = tiny_dataset();
        let hp = EncoderHyper {
            epochs: 1,
            steps_per_epoch: 40,
            ..EncoderHyper::default()
        };
        let (a, _) = train_feature_autoencoder(&ds, &ws, &ws, 3, &hp).unwrap();
        let (b, _) = train_feature_autoencoder(&ds, &ws, &ws, 3, &hp).unwrap();
        assert_eq!(a.to_bundle().to_bytes(), b.to_bundle().to_bytes());
    }

    #[test]
    fn encoder_bundle_round_trip() {
        let enc = FeatureEncoder::new(2, WINDOW_LEN, 9);
        let bundle = enc.to_bundle();
        let back = FeatureEncoder::from_bundle(&bundle).unwrap();
        assert_eq!(back.dim, 2);
        assert_eq!(bundle.to_bytes(), back.to_bundle().to_bytes());
    }

    #[test]
    fn encode_stats_needs_two_sequences() {
        let (ds, ws) = tiny_dataset();
        let enc = FeatureEncoder::new(3, WINDOW_LEN, 1);
        let seq = ds.window_poses(ws[0], WINDOW_LEN).unwrap();
        assert!(encode_stats(&enc, &[seq.clone()]).is_err());
        let stats = encode_stats(&enc, &[seq.clone(), seq]).unwrap();
        assert_eq!(stats.dim(), LATENT_DIM);
    }
}

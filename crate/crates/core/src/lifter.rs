//! Deterministic 2D-to-3D lifting with a dilated temporal convolutional
//! network.
//!
//! The lifter reads a 2D direction sequence upscaled to 273 frames (beyond
//! the stack's 81-frame receptive field), predicts per-bone depth residuals
//! on top of the zero-depth embedding, renormalizes, and downscales back to
//! the input length. With the residual head zero-initialized, an untrained
//! lifter IS the zero-depth baseline, which also pins the initial training
//! loss to a value computable in closed form.

use crate::error::{Error, Result};
use crate::nn::{receptive_field, tanh_backward, tanh_forward, Conv1d, Padding};
use crate::optim::{adam_update, AdamConfig};
use crate::pose::{
    dirvec_to_joints, embed_2d_as_3d, mpjpe, project_to_2d, seq_to_tensor, tensor_to_seq,
    JointSequence, PoseSequence, SENTINEL_EPS,
};
use crate::rng::Rng;
use crate::skeleton::SkeletonSpec;
use crate::tensor::{ParamStore, Tensor};

pub const DEFAULT_UPSCALE_LEN: usize = 273;

// ---------------------------------------------------------------------------
// Temporal resampling
// ---------------------------------------------------------------------------

fn resample(seq: &PoseSequence, target_len: usize) -> PoseSequence {
    let n = seq.frames();
    if target_len == n {
        return seq.clone();
    }
    let bones = seq.bones();
    let dims = seq.dims();
    let mut data = Vec::with_capacity(target_len * bones * dims);
    for k in 0..target_len {
        let pos = if target_len == 1 {
            0.0
        } else {
            k as f64 * (n - 1) as f64 / (target_len - 1) as f64
        };
        let i0 = (pos.floor() as usize).min(n - 1);
        let frac = pos - i0 as f64;
        for b in 0..bones {
            let a = seq.dir(i0, b);
            if frac == 0.0 {
                // Grid hit: copy verbatim so endpoints (and the identity
                // case) are exact.
                data.extend_from_slice(a);
                continue;
            }
            let c = seq.dir((i0 + 1).min(n - 1), b);
            let mut v: Vec<f64> = a.iter().zip(c).map(|(x, y)| x + frac * (y - x)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < SENTINEL_EPS {
                v.iter_mut().for_each(|x| *x = 0.0);
            } else {
                v.iter_mut().for_each(|x| *x /= norm);
            }
            data.extend_from_slice(&v);
        }
    }
    PoseSequence::new(dims, bones, seq.fps(), data).expect("resampled directions stay unit")
}

/// Linear interpolation of direction vectors onto a longer uniform grid,
/// renormalized to unit length; endpoints are preserved exactly.
pub fn upscale_sequence(seq: &PoseSequence, target_len: usize) -> Result<PoseSequence> {
    if seq.frames() < 2 {
        return Err(Error::shape(format!(
            "upscaling needs at least 2 frames, got {}",
            seq.frames()
        )));
    }
    if target_len < seq.frames() {
        return Err(Error::shape(format!(
            "target length {} below input length {}",
            target_len,
            seq.frames()
        )));
    }
    Ok(resample(seq, target_len))
}

/// Inverse-shaped counterpart of [`upscale_sequence`].
pub fn downscale_sequence(seq: &PoseSequence, target_len: usize) -> Result<PoseSequence> {
    if target_len == 0 || target_len > seq.frames() {
        return Err(Error::shape(format!(
            "target length {} above input length {}",
            target_len,
            seq.frames()
        )));
    }
    Ok(resample(seq, target_len))
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct LifterHyper {
    pub channels: usize,
    pub kernel: usize,
    pub dilations: Vec<usize>,
    pub upscale_len: usize,
    pub epochs: usize,
    pub batch: usize,
    /// Windows visited per epoch.
    pub steps_per_epoch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for LifterHyper {
    fn default() -> Self {
        LifterHyper {
            channels: 128,
            kernel: 3,
            dilations: vec![1, 3, 9, 27],
            upscale_len: DEFAULT_UPSCALE_LEN,
            epochs: 5,
            batch: 4,
            steps_per_epoch: 96,
            lr: 1e-3,
            seed: 7,
        }
    }
}

pub struct LifterModel {
    pub hyper: LifterHyper,
    store: ParamStore,
    conv_in: Conv1d,
    blocks: Vec<Conv1d>,
    conv_out: Conv1d,
}

struct LifterCache {
    h0: Tensor,
    /// Per block: (input, tanh(conv(input))).
    blocks: Vec<(Tensor, Tensor)>,
    h_final: Tensor,
}

impl LifterModel {
    pub fn new(hyper: LifterHyper) -> LifterModel {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed_from(hyper.seed);
        let conv_in = Conv1d::new(&mut store, "in", 18, hyper.channels, 1, 1, Padding::Same, &mut rng);
        let blocks = hyper
            .dilations
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                Conv1d::new(
                    &mut store,
                    &format!("block{i}"),
                    hyper.channels,
                    hyper.channels,
                    hyper.kernel,
                    d,
                    Padding::Same,
                    &mut rng,
                )
            })
            .collect();
        // Zero residual head: the untrained lifter is the zero-depth baseline.
        let conv_out = Conv1d::new_zeroed(&mut store, "out", hyper.channels, 27, 1, 1, Padding::Same);
        LifterModel {
            hyper,
            store,
            conv_in,
            blocks,
            conv_out,
        }
    }

    /// Declared receptive field of the dilated stack, frames.
    pub fn receptive_field(&self) -> usize {
        let layers: Vec<(usize, usize)> = self
            .hyper
            .dilations
            .iter()
            .map(|&d| (self.hyper.kernel, d))
            .collect();
        receptive_field(&layers)
    }

    /// Residual depth deltas for a (18, T) 2D direction tensor: (27, T).
    fn forward_cache(&self, x: &Tensor) -> (Tensor, LifterCache) {
        let h0 = tanh_forward(&self.conv_in.forward(&self.store, x).expect("same padding"));
        let mut h = h0.clone();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for conv in &self.blocks {
            let a = tanh_forward(&conv.forward(&self.store, &h).expect("same padding"));
            let mut next = h.clone();
            for (n, t) in next.data_mut().iter_mut().zip(a.data()) {
                *n += t;
            }
            blocks.push((h, a));
            h = next;
        }
        let delta = self.conv_out.forward(&self.store, &h).expect("same padding");
        (
            delta,
            LifterCache {
                h0,
                blocks,
                h_final: h,
            },
        )
    }

    fn backward(&mut self, x: &Tensor, cache: &LifterCache, ddelta: &Tensor) {
        let mut dh = self.conv_out.backward(&mut self.store, &cache.h_final, ddelta);
        for (conv, (hin, a)) in self.blocks.iter().zip(&cache.blocks).rev() {
            let da = tanh_backward(a, &dh);
            let dhin_conv = conv.backward(&mut self.store, hin, &da);
            for (d, g) in dh.data_mut().iter_mut().zip(dhin_conv.data()) {
                *d += g;
            }
        }
        let dh0 = tanh_backward(&cache.h0, &dh);
        self.conv_in.backward(&mut self.store, x, &dh0);
    }

    /// Raw (unnormalized) 3D directions for an (18, T) 2D direction tensor:
    /// the zero-depth embedding plus the predicted residual. Public mainly so
    /// the receptive field can be probed with arbitrary perturbations.
    pub fn forward_raw(&self, x: &Tensor) -> Tensor {
        let (delta, _) = self.forward_cache(x);
        let frames = x.shape()[1];
        let mut raw = Tensor::zeros(&[27, frames]);
        for b in 0..9 {
            for d in 0..2 {
                raw.row_mut(b * 3 + d).copy_from_slice(x.row(b * 2 + d));
            }
        }
        for (r, dl) in raw.data_mut().iter_mut().zip(delta.data()) {
            *r += dl;
        }
        raw
    }

    /// Raw directions for an upscaled 2D sequence.
    fn raw_lift(&self, seq_up: &PoseSequence) -> Tensor {
        self.forward_raw(&seq_to_tensor(seq_up))
    }

    /// Lift a 2D sequence to 3D: upscale, run the TCN, renormalize, downscale
    /// back to the input length. Pure and deterministic.
    pub fn lift(&self, seq2d: &PoseSequence) -> Result<PoseSequence> {
        if seq2d.dims() != 2 {
            return Err(Error::shape(format!(
                "lift expects a 2D sequence, got {}D",
                seq2d.dims()
            )));
        }
        let frames = seq2d.frames();
        let target = self.hyper.upscale_len.max(frames);
        let up = upscale_sequence(seq2d, target)?;
        let raw = self.raw_lift(&up);
        let lifted = tensor_to_seq(&raw, 3, seq2d.fps())?;
        downscale_sequence(&lifted, frames)
    }
}

// ---------------------------------------------------------------------------
// Position-space loss
// ---------------------------------------------------------------------------

/// Mean per-joint distance between the poses implied by raw (unnormalized)
/// directions and target joints, with the gradient w.r.t. the raw tensor.
/// Differentiates through renormalization and forward kinematics.
fn position_loss_and_grad(
    raw: &Tensor,
    target: &JointSequence,
    skeleton: &SkeletonSpec,
) -> (f64, Tensor) {
    let frames = raw.shape()[1];
    let joints = skeleton.joint_count();
    let bones = skeleton.bone_count();
    debug_assert_eq!(target.frames(), frames);
    let scale = 1.0 / (frames * joints) as f64;
    let mut loss = 0.0;
    let mut draw = Tensor::zeros(raw.shape());

    let mut dirs = vec![[0.0f64; 3]; bones];
    let mut norms = vec![0.0f64; bones];
    let mut pos = vec![[0.0f64; 3]; joints];
    let mut gjoint = vec![[0.0f64; 3]; joints];

    for f in 0..frames {
        // Normalize with cached norms.
        for b in 0..bones {
            let r = [
                raw.row(b * 3)[f],
                raw.row(b * 3 + 1)[f],
                raw.row(b * 3 + 2)[f],
            ];
            let n = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
            norms[b] = n;
            dirs[b] = if n < SENTINEL_EPS {
                [0.0; 3]
            } else {
                [r[0] / n, r[1] / n, r[2] / n]
            };
        }
        // Forward kinematics from the root.
        pos[skeleton.topo_order()[0]] = [0.0; 3];
        for &j in skeleton.topo_order() {
            let Some(p) = skeleton.parent_of(j) else { continue };
            let b = skeleton.bone_of_joint(j).expect("bone exists");
            let len = skeleton.bone_length(b);
            for d in 0..3 {
                pos[j][d] = pos[p][d] + len * dirs[b][d];
            }
        }
        // Distance loss and joint gradients.
        for (j, g) in gjoint.iter_mut().enumerate() {
            let t = target.joint(f, j);
            let e = [pos[j][0] - t[0], pos[j][1] - t[1], pos[j][2] - t[2]];
            let d = (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt();
            loss += d * scale;
            *g = if d < 1e-12 {
                [0.0; 3]
            } else {
                [
                    e[0] / d * scale,
                    e[1] / d * scale,
                    e[2] / d * scale,
                ]
            };
        }
        // Accumulate joint gradients up the tree (children into parents),
        // then through each bone's length and normalization.
        for &j in skeleton.topo_order().iter().rev() {
            let Some(p) = skeleton.parent_of(j) else { continue };
            let b = skeleton.bone_of_joint(j).expect("bone exists");
            let gj = gjoint[j];
            for d in 0..3 {
                gjoint[p][d] += gj[d];
            }
            let len = skeleton.bone_length(b);
            let dn = [gj[0] * len, gj[1] * len, gj[2] * len];
            if norms[b] < SENTINEL_EPS {
                continue; // sentinel: no gradient through a dead bone
            }
            let nvec = dirs[b];
            let dot = nvec[0] * dn[0] + nvec[1] * dn[1] + nvec[2] * dn[2];
            for d in 0..3 {
                let g = (dn[d] - nvec[d] * dot) / norms[b];
                draw.row_mut(b * 3 + d)[f] += g;
            }
        }
    }
    (loss, draw)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct LifterEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mpjpe: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct LifterEval {
    pub test_mpjpe: f64,
    /// Zero-depth embedding baseline on the same windows.
    pub baseline_mpjpe: f64,
}

/// MPJPE of lifted-vs-truth over a set of 3D windows, plus the zero-depth
/// baseline, evaluating through the full lift pipeline.
pub fn evaluate_lifter(
    model: &LifterModel,
    dataset: &crate::dataset::GestureDataset,
    windows: &[crate::dataset::WindowRef],
    skeleton: &SkeletonSpec,
    window_len: usize,
) -> Result<LifterEval> {
    if windows.is_empty() {
        return Err(Error::invalid("no windows to evaluate".to_string()));
    }
    let mut lifted_err = 0.0;
    let mut base_err = 0.0;
    for &w in windows {
        let gt = dataset.window_poses(w, window_len)?;
        let gt_joints = dirvec_to_joints(&gt, skeleton)?;
        let p2 = project_to_2d(&gt)?;
        let lifted = model.lift(&p2)?;
        lifted_err += mpjpe(&dirvec_to_joints(&lifted, skeleton)?, &gt_joints)?;
        let baseline = embed_2d_as_3d(&p2)?;
        base_err += mpjpe(&dirvec_to_joints(&baseline, skeleton)?, &gt_joints)?;
    }
    Ok(LifterEval {
        test_mpjpe: lifted_err / windows.len() as f64,
        baseline_mpjpe: base_err / windows.len() as f64,
    })
}

/// Training loss of one window under the current parameters (no update):
/// position error at the upscaled length. With a fresh model this equals the
/// zero-depth baseline error on the same pair.
pub fn window_training_loss(
    model: &LifterModel,
    gt_window: &PoseSequence,
    skeleton: &SkeletonSpec,
) -> Result<f64> {
    let (x_up, target_joints) = lifter_pair(model, gt_window, skeleton)?;
    let raw = model.raw_lift(&x_up);
    Ok(position_loss_and_grad(&raw, &target_joints, skeleton).0)
}

fn lifter_pair(
    model: &LifterModel,
    gt_window: &PoseSequence,
    skeleton: &SkeletonSpec,
) -> Result<(PoseSequence, JointSequence)> {
    let p2 = project_to_2d(gt_window)?;
    let up_in = upscale_sequence(&p2, model.hyper.upscale_len.max(gt_window.frames()))?;
    let up_gt = upscale_sequence(gt_window, model.hyper.upscale_len.max(gt_window.frames()))?;
    let target_joints = dirvec_to_joints(&up_gt, skeleton)?;
    Ok((up_in, target_joints))
}

/// Train the lifter on (project_to_2d(gt), gt) pairs from the train split,
/// minimizing mean position error through forward kinematics. Deterministic
/// for a given seed.
pub fn train_lifter(
    dataset: &crate::dataset::GestureDataset,
    train_windows: &[crate::dataset::WindowRef],
    val_windows: &[crate::dataset::WindowRef],
    skeleton: &SkeletonSpec,
    hyper: LifterHyper,
) -> Result<(LifterModel, Vec<LifterEpoch>)> {
    if train_windows.is_empty() {
        return Err(Error::invalid("empty training split".to_string()));
    }
    let window_len = crate::dataset::WINDOW_LEN;
    let mut model = LifterModel::new(hyper.clone());
    let mut rng = Rng::seed_from(hyper.seed).derive(0x11F7);
    let adam = AdamConfig::with_lr(hyper.lr);

    // Upscaled pairs are expensive to build; cache per window index.
    let mut cache: Vec<Option<(Tensor, JointSequence)>> = vec![None; train_windows.len()];
    let mut order: Vec<usize> = (0..train_windows.len()).collect();
    let mut report = Vec::new();
    for epoch in 0..hyper.epochs {
        rng.shuffle(&mut order);
        let take = order.len().min(hyper.steps_per_epoch);
        let mut epoch_loss = 0.0;
        let mut seen = 0;
        for chunk in order[..take].chunks(hyper.batch.max(1)) {
            model.store.zero_grads();
            for &i in chunk {
                if cache[i].is_none() {
                    let gt = dataset.window_poses(train_windows[i], window_len)?;
                    let (x_up, tj) = lifter_pair(&model, &gt, skeleton)?;
                    cache[i] = Some((seq_to_tensor(&x_up), tj));
                }
                let (x, target_joints) = cache[i].as_ref().unwrap();
                let (delta, fwd_cache) = model.forward_cache(x);
                let mut raw = Tensor::zeros(&[27, x.shape()[1]]);
                for b in 0..9 {
                    for d in 0..2 {
                        raw.row_mut(b * 3 + d).copy_from_slice(x.row(b * 2 + d));
                    }
                }
                for (r, dl) in raw.data_mut().iter_mut().zip(delta.data()) {
                    *r += dl;
                }
                let (loss, draw) = position_loss_and_grad(&raw, target_joints, skeleton);
                model.backward(x, &fwd_cache, &draw);
                epoch_loss += loss;
                seen += 1;
            }
            adam_update(&mut model.store, &adam);
        }
        let val_cap = val_windows.len().min(24).max(1.min(val_windows.len()));
        let val_mpjpe = if val_cap > 0 {
            evaluate_lifter(&model, dataset, &val_windows[..val_cap], skeleton, window_len)?
                .test_mpjpe
        } else {
            f64::NAN
        };
        report.push(LifterEpoch {
            epoch,
            train_loss: epoch_loss / seen.max(1) as f64,
            val_mpjpe,
        });
    }
    Ok((model, report))
}

impl LifterModel {
    /// Finite-difference check of the full training gradient (TCN, residual
    /// embedding, renormalization, forward kinematics) on one window.
    pub fn grad_check(
        &mut self,
        gt_window: &PoseSequence,
        skeleton: &SkeletonSpec,
        eps: f64,
        max_per_tensor: usize,
    ) -> Result<crate::gradcheck::GradCheckReport> {
        let (x_up, target_joints) = lifter_pair(self, gt_window, skeleton)?;
        let x = seq_to_tensor(&x_up);
        let mut store = std::mem::take(&mut self.store);
        let report = crate::gradcheck::grad_check(
            &mut store,
            |store| {
                std::mem::swap(&mut self.store, store);
                let (delta, cache) = self.forward_cache(&x);
                let mut raw = Tensor::zeros(&[27, x.shape()[1]]);
                for b in 0..9 {
                    for d in 0..2 {
                        raw.row_mut(b * 3 + d).copy_from_slice(x.row(b * 2 + d));
                    }
                }
                for (r, dl) in raw.data_mut().iter_mut().zip(delta.data()) {
                    *r += dl;
                }
                let (loss, draw) = position_loss_and_grad(&raw, &target_joints, skeleton);
                self.backward(&x, &cache, &draw);
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

impl LifterModel {
    pub fn to_bundle(&self) -> crate::bundle::ModelBundle {
        let dil = self
            .hyper
            .dilations
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(",");
        crate::bundle::ModelBundle::from_store(
            &self.store,
            vec![
                ("kind".into(), "lifter".into()),
                ("channels".into(), self.hyper.channels.to_string()),
                ("kernel".into(), self.hyper.kernel.to_string()),
                ("dilations".into(), dil),
                ("upscale_len".into(), self.hyper.upscale_len.to_string()),
                ("seed".into(), self.hyper.seed.to_string()),
            ],
        )
    }

    pub fn from_bundle(bundle: &crate::bundle::ModelBundle) -> Result<LifterModel> {
        let kind = bundle.get_hyper("kind").unwrap_or("");
        if kind != "lifter" {
            return Err(Error::invalid(format!("bundle kind '{kind}', expected 'lifter'")));
        }
        let dilations = bundle
            .get_hyper("dilations")
            .ok_or_else(|| Error::invalid("bundle missing dilations".to_string()))?
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::invalid("bad dilations in bundle".to_string()))?;
        let hyper = LifterHyper {
            channels: bundle.hyper_parsed("channels")?,
            kernel: bundle.hyper_parsed("kernel")?,
            dilations,
            upscale_len: bundle.hyper_parsed("upscale_len")?,
            seed: bundle.hyper_parsed("seed")?,
            ..LifterHyper::default()
        };
        let mut model = LifterModel::new(hyper);
        bundle.load_into(&mut model.store)?;
        Ok(model)
    }
}

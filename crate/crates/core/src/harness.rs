//! Experiment orchestration: dataset/model lifecycle, the two comparative
//! evaluation settings (3D space and 2D space), pose export, reports and the
//! closed-form self-test.
//!
//! Reports are CSV plus a human-readable table. Every report embeds the
//! seeds, a config hash and the metric parameters; the timestamp line can be
//! suppressed so that identical invocations produce byte-identical artifacts.

use std::path::Path;

use crate::audio::{BeatSet, FeatureMatrix};
use crate::bundle::ModelBundle;
use crate::dataset::{
    split, window, GestureDataset, Split, SynthConfig, WindowRef, WINDOW_LEN, WINDOW_STRIDE,
};
use crate::diffusion::{sample, DenoiserModel, DiffusionHyper};
use crate::error::{Error, Result};
use crate::lifter::{train_lifter, LifterHyper, LifterModel};
use crate::metrics::{
    beat_consistency, diversity_mean, encode_stats, extract_kinematic_beats, fgd,
    train_feature_autoencoder, EncoderHyper, FeatureEncoder, FeatureStats,
};
use crate::pose::{
    dirvec_to_joints, joints_to_dirvec, mpjpe, project_to_2d, seq_to_tensor, JointSequence,
    PoseSequence,
};
use crate::recurrent::{train_recurrent, RecurrentHyper, RecurrentModel};
use crate::rng::Rng;
use crate::skeleton::SkeletonSpec;
use crate::tensor::Tensor;

pub const DEFAULT_SPLIT_FRACTIONS: (f64, f64, f64) = (0.8, 0.1, 0.1);

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

/// Lazily computed per-clip conditioning features.
pub struct FeatureCache {
    per_clip: Vec<Option<FeatureMatrix>>,
}

impl FeatureCache {
    pub fn new(dataset: &GestureDataset) -> FeatureCache {
        FeatureCache {
            per_clip: vec![None; dataset.clips.len()],
        }
    }

    fn clip_features(&mut self, dataset: &GestureDataset, clip: usize) -> Result<&FeatureMatrix> {
        if self.per_clip[clip].is_none() {
            let c = &dataset.clips[clip];
            let f =
                crate::audio::conditioning_features(&c.audio, c.poses.frames(), dataset.fps)?;
            self.per_clip[clip] = Some(f);
        }
        Ok(self.per_clip[clip].as_ref().unwrap())
    }

    pub fn window_features(
        &mut self,
        dataset: &GestureDataset,
        w: WindowRef,
        len: usize,
    ) -> Result<FeatureMatrix> {
        let f = self.clip_features(dataset, w.clip)?;
        Ok(f.slice(w.start, len))
    }
}

/// Ground-truth window as a (channels, frames) tensor, projected to 2D when
/// `dim == 2`.
pub fn window_tensor(dataset: &GestureDataset, w: WindowRef, dim: usize) -> Result<Tensor> {
    let seq = dataset.window_poses(w, WINDOW_LEN)?;
    let seq = if dim == 2 { project_to_2d(&seq)? } else { seq };
    Ok(seq_to_tensor(&seq))
}

/// Windowing plus the deterministic clip-level split.
pub fn prepare_splits(
    dataset: &GestureDataset,
    split_seed: u64,
) -> Result<(Vec<WindowRef>, Vec<WindowRef>, Vec<WindowRef>)> {
    let ws = window(dataset, WINDOW_LEN, WINDOW_STRIDE);
    let assignment = split(dataset, &ws, DEFAULT_SPLIT_FRACTIONS, split_seed)?;
    let pick = |which: Split| {
        ws.iter()
            .zip(&assignment)
            .filter(|(_, s)| **s == which)
            .map(|(w, _)| *w)
            .collect::<Vec<_>>()
    };
    Ok((pick(Split::Train), pick(Split::Val), pick(Split::Test)))
}

// ---------------------------------------------------------------------------
// Training entry points
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Default)]
pub struct TrainOverrides {
    pub epochs: Option<usize>,
    pub steps_per_epoch: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
}

pub struct TrainedModel {
    pub bundle: ModelBundle,
    /// Per-epoch training curve, CSV with header.
    pub curve_csv: String,
    pub summary: String,
}

/// Train one model kind on a dataset. `kind` is one of diffusion, recurrent,
/// lifter, encoder. The lifter requires `dim == 3` (it consumes projected
/// pairs internally).
pub fn train_model(
    dataset: &GestureDataset,
    kind: &str,
    dim: usize,
    seed: u64,
    split_seed: u64,
    overrides: &TrainOverrides,
) -> Result<TrainedModel> {
    if dim != 2 && dim != 3 {
        return Err(Error::invalid(format!("dim must be 2 or 3, got {dim}")));
    }
    let (train_w, val_w, _test_w) = prepare_splits(dataset, split_seed)?;
    if train_w.is_empty() {
        return Err(Error::invalid("empty training split".to_string()));
    }
    match kind {
        "diffusion" => {
            let mut hyper = DiffusionHyper {
                seed,
                ..DiffusionHyper::default()
            };
            if let Some(e) = overrides.epochs {
                hyper.epochs = e;
            }
            if let Some(s) = overrides.steps_per_epoch {
                hyper.steps_per_epoch = s;
            }
            if let Some(b) = overrides.batch {
                hyper.batch = b;
            }
            if let Some(lr) = overrides.lr {
                hyper.lr = lr;
            }
            let mut cache = FeatureCache::new(dataset);
            let mut tensors = Vec::with_capacity(train_w.len());
            let mut feats = Vec::with_capacity(train_w.len());
            for &w in &train_w {
                tensors.push(window_tensor(dataset, w, dim)?);
                feats.push(cache.window_features(dataset, w, WINDOW_LEN)?);
            }
            let (model, curve) = crate::diffusion::train_diffusion(&tensors, &feats, dim, hyper)?;
            let mut csv = String::from("epoch,train_loss\n");
            for e in &curve {
                csv.push_str(&format!("{},{}\n", e.epoch, e.train_loss));
            }
            let summary = format!(
                "diffusion dim={dim}: {} epochs, final loss {:.6}",
                curve.len(),
                curve.last().map(|e| e.train_loss).unwrap_or(f64::NAN)
            );
            Ok(TrainedModel {
                bundle: model.to_bundle(),
                curve_csv: csv,
                summary,
            })
        }
        "recurrent" => {
            let mut hyper = RecurrentHyper {
                seed,
                ..RecurrentHyper::default()
            };
            if let Some(e) = overrides.epochs {
                hyper.epochs = e;
            }
            if let Some(s) = overrides.steps_per_epoch {
                hyper.steps_per_epoch = s;
            }
            if let Some(b) = overrides.batch {
                hyper.batch = b;
            }
            if let Some(lr) = overrides.lr {
                hyper.lr = lr;
            }
            let mut cache = FeatureCache::new(dataset);
            let mut tensors = Vec::with_capacity(train_w.len());
            let mut feats = Vec::with_capacity(train_w.len());
            for &w in &train_w {
                tensors.push(window_tensor(dataset, w, dim)?);
                feats.push(cache.window_features(dataset, w, WINDOW_LEN)?);
            }
            let (model, curve) = train_recurrent(&tensors, &feats, dim, hyper)?;
            let mut csv = String::from("epoch,recon_loss,continuity_loss\n");
            for e in &curve {
                csv.push_str(&format!("{},{},{}\n", e.epoch, e.recon_loss, e.continuity_loss));
            }
            let summary = format!(
                "recurrent dim={dim}: {} epochs, final recon {:.6}",
                curve.len(),
                curve.last().map(|e| e.recon_loss).unwrap_or(f64::NAN)
            );
            Ok(TrainedModel {
                bundle: model.to_bundle(),
                curve_csv: csv,
                summary,
            })
        }
        "lifter" => {
            if dim != 3 {
                return Err(Error::invalid(
                    "the lifter trains on 3D data (pairs are built internally)".to_string(),
                ));
            }
            let mut hyper = LifterHyper {
                seed,
                ..LifterHyper::default()
            };
            if let Some(e) = overrides.epochs {
                hyper.epochs = e;
            }
            if let Some(s) = overrides.steps_per_epoch {
                hyper.steps_per_epoch = s;
            }
            if let Some(b) = overrides.batch {
                hyper.batch = b;
            }
            if let Some(lr) = overrides.lr {
                hyper.lr = lr;
            }
            let skeleton = SkeletonSpec::default_upper_body();
            let (model, curve) = train_lifter(dataset, &train_w, &val_w, &skeleton, hyper)?;
            let mut csv = String::from("epoch,train_loss,val_mpjpe\n");
            for e in &curve {
                csv.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.val_mpjpe));
            }
            let summary = format!(
                "lifter: {} epochs, final val MPJPE {:.6}",
                curve.len(),
                curve.last().map(|e| e.val_mpjpe).unwrap_or(f64::NAN)
            );
            Ok(TrainedModel {
                bundle: model.to_bundle(),
                curve_csv: csv,
                summary,
            })
        }
        "encoder" => {
            let hp = EncoderHyper {
                seed,
                epochs: overrides.epochs.unwrap_or(EncoderHyper::default().epochs),
                steps_per_epoch: overrides
                    .steps_per_epoch
                    .unwrap_or(EncoderHyper::default().steps_per_epoch),
                batch: overrides.batch.unwrap_or(EncoderHyper::default().batch),
                lr: overrides.lr.unwrap_or(EncoderHyper::default().lr),
            };
            let (enc, curve) = train_feature_autoencoder(dataset, &train_w, &val_w, dim, &hp)?;
            let mut csv = String::from("epoch,train_loss,val_loss\n");
            for e in &curve {
                csv.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.val_loss));
            }
            let summary = format!(
                "encoder dim={dim}: {} epochs, final val MSE {:.6}",
                curve.len(),
                curve.last().map(|e| e.val_loss).unwrap_or(f64::NAN)
            );
            Ok(TrainedModel {
                bundle: enc.to_bundle(),
                curve_csv: csv,
                summary,
            })
        }
        other => Err(Error::invalid(format!(
            "unknown model kind '{other}' (expected diffusion|recurrent|lifter|encoder)"
        ))),
    }
}

// ---------------------------------------------------------------------------
// Generators behind one interface
// ---------------------------------------------------------------------------

pub enum Generator {
    Diffusion(DenoiserModel),
    Recurrent(RecurrentModel),
}

impl Generator {
    pub fn from_bundle(bundle: &ModelBundle) -> Result<Generator> {
        match bundle.get_hyper("kind") {
            Some("diffusion") => Ok(Generator::Diffusion(DenoiserModel::from_bundle(bundle)?)),
            Some("recurrent") => Ok(Generator::Recurrent(RecurrentModel::from_bundle(bundle)?)),
            other => Err(Error::invalid(format!(
                "bundle kind {other:?} is not a generator"
            ))),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Generator::Diffusion(m) => m.dim,
            Generator::Recurrent(m) => m.dim,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Generator::Diffusion(_) => "diffusion",
            Generator::Recurrent(_) => "recurrent",
        }
    }

    /// n sequences conditioned on the given windows (cycled), paired with the
    /// window each was conditioned on. Seeded and order-deterministic.
    pub fn sample_windows(
        &self,
        dataset: &GestureDataset,
        cache: &mut FeatureCache,
        windows: &[WindowRef],
        n: usize,
        guidance_w: f64,
        seed: u64,
    ) -> Result<Vec<(WindowRef, PoseSequence)>> {
        if windows.is_empty() {
            return Err(Error::invalid("no conditioning windows".to_string()));
        }
        let master = Rng::seed_from(seed);
        let mut out = Vec::with_capacity(n);
        match self {
            Generator::Diffusion(model) => {
                let schedule = model.schedule();
                for i in 0..n {
                    let w = windows[i % windows.len()];
                    let feats = cache.window_features(dataset, w, WINDOW_LEN)?;
                    let seq = sample(
                        model,
                        &schedule,
                        &feats,
                        guidance_w,
                        dataset.fps,
                        master.derive(i as u64).seed(),
                    )?;
                    out.push((w, seq));
                }
            }
            Generator::Recurrent(model) => {
                for i in 0..n {
                    let w = windows[i % windows.len()];
                    let feats = cache.window_features(dataset, w, WINDOW_LEN)?;
                    let gt = dataset.window_poses(w, WINDOW_LEN)?;
                    let gt = if model.dim == 2 { project_to_2d(&gt)? } else { gt };
                    let seeds = gt.slice(0, model.hyper.n_seed)?;
                    let seq = model.generate(&feats, &seeds)?;
                    out.push((w, seq));
                }
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Evaluation reports
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct EvalParams {
    pub seed: u64,
    pub split_seed: u64,
    /// Generated sequences per model row.
    pub eval_n: usize,
    pub guidance_w: f64,
    pub sigma: f64,
    pub div_n: usize,
    pub div_reps: usize,
    pub timestamp: bool,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            seed: 7,
            split_seed: 42,
            eval_n: 128,
            guidance_w: 1.0,
            sigma: 0.1,
            div_n: 500,
            div_reps: 100,
            timestamp: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MetricRow {
    pub setting: String,
    pub fgd: f64,
    pub bc: f64,
    /// Sequences whose kinematic beats came back empty (BC counted as 0).
    pub bc_empty: usize,
    pub diversity: f64,
    pub n: usize,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub rows: Vec<MetricRow>,
    /// (description, holds) pairs for the recorded directional comparisons.
    pub observations: Vec<(String, bool)>,
    pub csv: String,
    pub table: String,
}

fn metric_row(
    name: &str,
    seqs: &[(WindowRef, PoseSequence)],
    real_stats: &FeatureStats,
    encoder: &FeatureEncoder,
    dataset: &GestureDataset,
    params: &EvalParams,
) -> Result<MetricRow> {
    let latents: Vec<Vec<f64>> = seqs
        .iter()
        .map(|(_, s)| encoder.encode(s))
        .collect::<Result<_>>()?;
    let stats = FeatureStats::from_latents(&latents)?;
    let fgd_value = fgd(real_stats, &stats)?;

    let mut bc_acc = 0.0;
    let mut bc_count = 0usize;
    let mut bc_empty = 0usize;
    for (w, seq) in seqs {
        let beat_times = dataset.window_beats(*w, WINDOW_LEN);
        if beat_times.is_empty() {
            continue; // no audio beats in this window: BC undefined, skip
        }
        let audio = BeatSet::new(beat_times)?;
        let kin = extract_kinematic_beats(seq, None)?;
        if kin.is_empty() {
            bc_empty += 1;
        }
        bc_acc += beat_consistency(&audio, &kin, params.sigma)?;
        bc_count += 1;
    }
    let diversity = diversity_mean(&latents, params.div_n, params.div_reps, params.seed)?;
    Ok(MetricRow {
        setting: name.to_string(),
        fgd: fgd_value,
        bc: bc_acc / bc_count.max(1) as f64,
        bc_empty,
        diversity,
        n: seqs.len(),
    })
}

fn render_report(
    title: &str,
    rows: &[MetricRow],
    observations: &[(String, bool)],
    params: &EvalParams,
    config_hash: u64,
) -> (String, String) {
    let run_id = format!("{config_hash:016x}");
    let mut csv = String::new();
    csv.push_str(&format!("# report={title}\n"));
    csv.push_str(&format!("# config_hash={run_id}\n"));
    csv.push_str(&format!(
        "# seed={} split_seed={} eval_n={} guidance_w={} sigma={} div_n={} div_reps={} kinematic_threshold=mean+1std\n",
        params.seed, params.split_seed, params.eval_n, params.guidance_w, params.sigma, params.div_n, params.div_reps
    ));
    if params.timestamp {
        csv.push_str(&format!("# timestamp={}\n", iso8601_now()));
    }
    csv.push_str("run_id,setting,metric,value,seed,n_sequences\n");
    for row in rows {
        for (metric, value) in [
            ("fgd", row.fgd),
            ("bc", row.bc),
            ("diversity", row.diversity),
        ] {
            csv.push_str(&format!(
                "{run_id},{},{},{},{},{}\n",
                row.setting, metric, value, params.seed, row.n
            ));
        }
    }
    for (desc, holds) in observations {
        csv.push_str(&format!("# observation: {desc} -> {holds}\n"));
    }

    let mut table = String::new();
    table.push_str(&format!("{title}\n"));
    table.push_str(&format!(
        "{:<18} {:>10} {:>8} {:>11} {:>6}\n",
        "setting", "FGD", "BC", "Diversity", "n"
    ));
    for row in rows {
        table.push_str(&format!(
            "{:<18} {:>10.4} {:>8.4} {:>11.4} {:>6}\n",
            row.setting, row.fgd, row.bc, row.diversity, row.n
        ));
    }
    for (desc, holds) in observations {
        table.push_str(&format!("observation: {desc} -> {holds}\n"));
    }
    (csv, table)
}

/// Evaluation in the 3D gesture space: ground truth vs direct-3D generation
/// vs 2D generation lifted to 3D.
pub fn evaluate_3d(
    dataset: &GestureDataset,
    gen3d: &ModelBundle,
    gen2d: &ModelBundle,
    lifter: &ModelBundle,
    encoder3d: &ModelBundle,
    params: &EvalParams,
) -> Result<EvalReport> {
    let gen3d = Generator::from_bundle(gen3d)?;
    let gen2d = Generator::from_bundle(gen2d)?;
    let lifter = LifterModel::from_bundle(lifter)?;
    let encoder = FeatureEncoder::from_bundle(encoder3d)?;
    if gen3d.dim() != 3 {
        return Err(Error::invalid(format!(
            "gen3d bundle is {}D, expected 3D",
            gen3d.dim()
        )));
    }
    if gen2d.dim() != 2 {
        return Err(Error::invalid(format!(
            "gen2d bundle is {}D, expected 2D",
            gen2d.dim()
        )));
    }
    if encoder.dim != 3 {
        return Err(Error::invalid("encoder bundle must be 3D".to_string()));
    }
    let (_, _, test_w) = prepare_splits(dataset, params.split_seed)?;
    if test_w.is_empty() {
        return Err(Error::invalid("empty test split".to_string()));
    }
    let mut cache = FeatureCache::new(dataset);

    // Ground truth row.
    let real: Vec<(WindowRef, PoseSequence)> = test_w
        .iter()
        .map(|&w| Ok((w, dataset.window_poses(w, WINDOW_LEN)?)))
        .collect::<Result<_>>()?;
    let real_seqs: Vec<PoseSequence> = real.iter().map(|(_, s)| s.clone()).collect();
    let real_stats = encode_stats(&encoder, &real_seqs)?;
    let gt_row = metric_row("ground-truth-3d", &real, &real_stats, &encoder, dataset, params)?;

    // Direct 3D generation.
    let direct = gen3d.sample_windows(
        dataset,
        &mut cache,
        &test_w,
        params.eval_n,
        params.guidance_w,
        params.seed,
    )?;
    let direct_row = metric_row("direct-3d", &direct, &real_stats, &encoder, dataset, params)?;

    // 2D generation lifted to 3D.
    let flat2d = gen2d.sample_windows(
        dataset,
        &mut cache,
        &test_w,
        params.eval_n,
        params.guidance_w,
        params.seed.wrapping_add(1),
    )?;
    let lifted: Vec<(WindowRef, PoseSequence)> = flat2d
        .into_iter()
        .map(|(w, s)| Ok((w, lifter.lift(&s)?)))
        .collect::<Result<_>>()?;
    let lifted_row = metric_row("2d-lift-3d", &lifted, &real_stats, &encoder, dataset, params)?;

    let observations = vec![(
        format!(
            "expected FGD(2d-lift-3d) >= FGD(direct-3d): {:.4} vs {:.4}",
            lifted_row.fgd, direct_row.fgd
        ),
        lifted_row.fgd >= direct_row.fgd,
    )];
    let hash = fnv1a64(
        format!(
            "evaluate-3d|{}|{}|{}|{}|{}|{}",
            params.seed, params.split_seed, params.eval_n, params.guidance_w, params.sigma, params.div_n
        )
        .as_bytes(),
    );
    let rows = vec![gt_row, direct_row, lifted_row];
    let (csv, table) = render_report("evaluation in the 3D gesture space", &rows, &observations, params, hash);
    Ok(EvalReport {
        rows,
        observations,
        csv,
        table,
    })
}

/// Evaluation in the 2D gesture space: ground truth (projected) vs projected
/// 3D generation vs direct 2D generation.
pub fn evaluate_2d(
    dataset: &GestureDataset,
    gen2d: &ModelBundle,
    gen3d: &ModelBundle,
    encoder2d: &ModelBundle,
    params: &EvalParams,
) -> Result<EvalReport> {
    let gen2d = Generator::from_bundle(gen2d)?;
    let gen3d = Generator::from_bundle(gen3d)?;
    let encoder = FeatureEncoder::from_bundle(encoder2d)?;
    if gen2d.dim() != 2 || gen3d.dim() != 3 {
        return Err(Error::invalid(format!(
            "generator dims ({}, {}) must be (2, 3)",
            gen2d.dim(),
            gen3d.dim()
        )));
    }
    if encoder.dim != 2 {
        return Err(Error::invalid("encoder bundle must be 2D".to_string()));
    }
    let (_, _, test_w) = prepare_splits(dataset, params.split_seed)?;
    if test_w.is_empty() {
        return Err(Error::invalid("empty test split".to_string()));
    }
    let mut cache = FeatureCache::new(dataset);

    let real: Vec<(WindowRef, PoseSequence)> = test_w
        .iter()
        .map(|&w| Ok((w, project_to_2d(&dataset.window_poses(w, WINDOW_LEN)?)?)))
        .collect::<Result<_>>()?;
    let real_seqs: Vec<PoseSequence> = real.iter().map(|(_, s)| s.clone()).collect();
    let real_stats = encode_stats(&encoder, &real_seqs)?;
    let gt_row = metric_row("ground-truth-2d", &real, &real_stats, &encoder, dataset, params)?;

    let narrowed: Vec<(WindowRef, PoseSequence)> = gen3d
        .sample_windows(
            dataset,
            &mut cache,
            &test_w,
            params.eval_n,
            params.guidance_w,
            params.seed,
        )?
        .into_iter()
        .map(|(w, s)| Ok((w, project_to_2d(&s)?)))
        .collect::<Result<_>>()?;
    let narrowed_row = metric_row("3d-to-2d", &narrowed, &real_stats, &encoder, dataset, params)?;

    let direct = gen2d.sample_windows(
        dataset,
        &mut cache,
        &test_w,
        params.eval_n,
        params.guidance_w,
        params.seed.wrapping_add(1),
    )?;
    let direct_row = metric_row("direct-2d", &direct, &real_stats, &encoder, dataset, params)?;

    let observations = vec![(
        format!(
            "expected FGD(3d-to-2d) <= FGD(direct-2d): {:.4} vs {:.4}",
            narrowed_row.fgd, direct_row.fgd
        ),
        narrowed_row.fgd <= direct_row.fgd,
    )];
    let hash = fnv1a64(
        format!(
            "evaluate-2d|{}|{}|{}|{}|{}|{}",
            params.seed, params.split_seed, params.eval_n, params.guidance_w, params.sigma, params.div_n
        )
        .as_bytes(),
    );
    let rows = vec![gt_row, narrowed_row, direct_row];
    let (csv, table) = render_report("evaluation in the 2D gesture space", &rows, &observations, params, hash);
    Ok(EvalReport {
        rows,
        observations,
        csv,
        table,
    })
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

/// Joint positions as CSV (`frame,joint,x,y,z`); 2D input exports z = 0.
/// Floats print in shortest round-trip form, so re-importing is lossless.
pub fn export_joints_csv(joints: &JointSequence) -> String {
    let mut out = String::from("frame,joint,x,y,z\n");
    for f in 0..joints.frames() {
        for j in 0..joints.joints {
            let p = joints.joint(f, j);
            let z = if joints.dims == 3 { p[2] } else { 0.0 };
            out.push_str(&format!("{f},{j},{},{},{z}\n", p[0], p[1]));
        }
    }
    out
}

/// Parse the CSV emitted by [`export_joints_csv`].
pub fn parse_joints_csv(text: &str, fps: f64) -> Result<JointSequence> {
    let mut rows: Vec<(usize, usize, [f64; 3])> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line.trim() != "frame,joint,x,y,z" {
                return Err(Error::parse(0, "missing frame,joint,x,y,z header"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(Error::parse(i as u64, format!("expected 5 fields, got {}", parts.len())));
        }
        let f: usize = parts[0]
            .parse()
            .map_err(|_| Error::parse(i as u64, "bad frame index"))?;
        let j: usize = parts[1]
            .parse()
            .map_err(|_| Error::parse(i as u64, "bad joint index"))?;
        let xyz = [
            parts[2].parse().map_err(|_| Error::parse(i as u64, "bad x"))?,
            parts[3].parse().map_err(|_| Error::parse(i as u64, "bad y"))?,
            parts[4].parse().map_err(|_| Error::parse(i as u64, "bad z"))?,
        ];
        rows.push((f, j, xyz));
    }
    if rows.is_empty() {
        return Err(Error::invalid("no data rows".to_string()));
    }
    let frames = rows.iter().map(|r| r.0).max().unwrap() + 1;
    let joints = rows.iter().map(|r| r.1).max().unwrap() + 1;
    let mut data = vec![0.0; frames * joints * 3];
    for (f, j, xyz) in rows {
        let base = (f * joints + j) * 3;
        data[base..base + 3].copy_from_slice(&xyz);
    }
    Ok(JointSequence {
        dims: 3,
        joints,
        fps,
        data,
    })
}

/// Joint positions as a single JSON document.
pub fn export_joints_json(joints: &JointSequence, skeleton: &SkeletonSpec) -> String {
    let mut out = String::from("{\n");
    out.push_str(&format!("  \"fps\": {},\n", joints.fps));
    out.push_str("  \"joint_names\": [");
    for (i, name) in skeleton.joint_names().iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&format!("\"{name}\""));
    }
    out.push_str("],\n  \"frames\": [\n");
    for f in 0..joints.frames() {
        out.push_str("    [");
        for j in 0..joints.joints {
            if j > 0 {
                out.push_str(", ");
            }
            let p = joints.joint(f, j);
            let z = if joints.dims == 3 { p[2] } else { 0.0 };
            out.push_str(&format!("[{}, {}, {z}]", p[0], p[1]));
        }
        out.push_str(if f + 1 < joints.frames() { "],\n" } else { "]\n" });
    }
    out.push_str("  ]\n}\n");
    out
}

/// Export a window of a dataset clip as CSV or JSON after forward kinematics.
pub fn export_window(
    dataset: &GestureDataset,
    clip: usize,
    start: usize,
    frames: usize,
    format: &str,
    skeleton: &SkeletonSpec,
) -> Result<String> {
    if clip >= dataset.clips.len() {
        return Err(Error::invalid(format!(
            "clip {clip} out of range ({} clips)",
            dataset.clips.len()
        )));
    }
    let seq = dataset.clips[clip].poses.slice(start, frames)?;
    let joints = dirvec_to_joints(&seq, skeleton)?;
    match format {
        "csv" => Ok(export_joints_csv(&joints)),
        "json" => Ok(export_joints_json(&joints, skeleton)),
        other => Err(Error::invalid(format!(
            "unknown export format '{other}' (expected csv|json)"
        ))),
    }
}

// ---------------------------------------------------------------------------
// Dataset generation wrapper
// ---------------------------------------------------------------------------

pub struct GenDataSummary {
    pub clips: usize,
    pub windows: usize,
    pub train_windows: usize,
    pub val_windows: usize,
    pub test_windows: usize,
}

pub fn generate_dataset(
    config: &SynthConfig,
    seed: u64,
    split_seed: u64,
    out: &Path,
) -> Result<GenDataSummary> {
    let ds = crate::dataset::synth_generate(config, seed)?;
    crate::dataset::write_dataset(&ds, out)?;
    let (train_w, val_w, test_w) = prepare_splits(&ds, split_seed)?;
    Ok(GenDataSummary {
        clips: ds.clips.len(),
        windows: train_w.len() + val_w.len() + test_w.len(),
        train_windows: train_w.len(),
        val_windows: val_w.len(),
        test_windows: test_w.len(),
    })
}

// ---------------------------------------------------------------------------
// Self-test: closed-form metric oracles and gradient checks
// ---------------------------------------------------------------------------

pub struct SelfTestResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub fn selftest() -> Vec<SelfTestResult> {
    let mut results = Vec::new();
    let mut push = |name: &'static str, passed: bool, detail: String| {
        results.push(SelfTestResult {
            name,
            passed,
            detail,
        });
    };

    // FGD closed forms.
    {
        let dim = 32;
        let eye = |scale: f64, mu0: f64| {
            let mut sigma = vec![0.0; dim * dim];
            for i in 0..dim {
                sigma[i * dim + i] = scale;
            }
            let mut mu = vec![0.0; dim];
            mu[0] = mu0;
            FeatureStats { mu, sigma }
        };
        let s = eye(1.0, 0.0);
        let self_d = fgd(&s, &s).unwrap_or(f64::NAN);
        let mean_d = fgd(&s, &eye(1.0, 2.0)).unwrap_or(f64::NAN);
        let cov_d = fgd(&s, &eye(4.0, 0.0)).unwrap_or(f64::NAN);
        let ok = self_d < 1e-8 && (mean_d - 4.0).abs() < 1e-6 && (cov_d - 32.0).abs() < 1e-6;
        push(
            "fgd-closed-form",
            ok,
            format!("self={self_d:.2e} mean4={mean_d:.8} cov32={cov_d:.8}"),
        );
    }

    // Matrix square root reconstruction.
    {
        let mut rng = Rng::seed_from(17);
        let n = 32;
        let mut worst = 0.0f64;
        for _ in 0..10 {
            let a: Vec<f64> = (0..n * n).map(|_| rng.normal()).collect();
            let m = crate::linalg::mat_mul(&crate::linalg::transpose(&a, n), &a, n);
            match crate::linalg::matrix_sqrt_psd(&m, n) {
                Ok(s) => {
                    let ss = crate::linalg::mat_mul(&s, &s, n);
                    let diff: Vec<f64> = ss.iter().zip(&m).map(|(a, b)| a - b).collect();
                    let rel = crate::linalg::frobenius_norm(&diff)
                        / crate::linalg::frobenius_norm(&m).max(1.0);
                    worst = worst.max(rel);
                }
                Err(_) => worst = f64::INFINITY,
            }
        }
        push(
            "matrix-sqrt-reconstruction",
            worst < 1e-8,
            format!("worst relative error {worst:.2e}"),
        );
    }

    // Beat consistency hand cases.
    {
        let audio = BeatSet::new(vec![1.0]).unwrap();
        let bc1 = {
            let kin = crate::metrics::KinematicBeats::default();
            beat_consistency(&audio, &kin, 0.1).unwrap_or(f64::NAN)
        };
        let bc2 = {
            let kin = crate::metrics::KinematicBeats::from_times(vec![1.1]).unwrap();
            beat_consistency(&audio, &kin, 0.1).unwrap_or(f64::NAN)
        };
        let bc3 = {
            let audio = BeatSet::new(vec![0.5, 1.5]).unwrap();
            let kin = crate::metrics::KinematicBeats::from_times(vec![0.5, 1.7]).unwrap();
            beat_consistency(&audio, &kin, 0.1).unwrap_or(f64::NAN)
        };
        let coincident = {
            let audio = BeatSet::new(vec![0.25, 0.75]).unwrap();
            let kin = crate::metrics::KinematicBeats::from_times(vec![0.25, 0.75]).unwrap();
            beat_consistency(&audio, &kin, 0.1).unwrap_or(f64::NAN)
        };
        let ok = bc1 == 0.0
            && (bc2 - 0.6065306597126334).abs() < 1e-9
            && (bc3 - 0.5676676416183064).abs() < 1e-9
            && coincident == 1.0;
        push(
            "beat-consistency-hand-cases",
            ok,
            format!("empty={bc1} one={bc2:.9} two={bc3:.9} coincident={coincident}"),
        );
    }

    // Diversity hand cases.
    {
        let features = vec![
            vec![0.0, 0.0],
            vec![2.0, 0.0],
            vec![0.0, 2.0],
            vec![0.0, 0.0],
        ];
        let forced = crate::metrics::subset_mean_distance(&features, &[0, 1], &[2, 3]);
        let constant = diversity_mean(&vec![vec![3.0, 1.0]; 20], 5, 10, 1).unwrap_or(f64::NAN);
        let ok = (forced - 2.0f64.sqrt()).abs() < 1e-9 && constant == 0.0;
        push(
            "diversity-hand-cases",
            ok,
            format!("forced={forced:.9} constant={constant}"),
        );
    }

    // MPJPE 3-4-5 offset.
    {
        let skeleton = SkeletonSpec::default_upper_body();
        let mut rng = Rng::seed_from(23);
        let frames = 3;
        let joints = skeleton.joint_count();
        let mut data = vec![0.0; frames * joints * 3];
        for v in data.iter_mut() {
            *v = rng.normal();
        }
        let a = JointSequence {
            dims: 3,
            joints,
            fps: 15.0,
            data: data.clone(),
        };
        let b = JointSequence {
            dims: 3,
            joints,
            fps: 15.0,
            data: data
                .chunks(3)
                .flat_map(|v| [v[0] + 3.0, v[1] + 4.0, v[2]])
                .collect(),
        };
        let d = mpjpe(&a, &b).unwrap_or(f64::NAN);
        push("mpjpe-offset", (d - 5.0).abs() < 1e-9, format!("offset error {d:.12}"));
    }

    // Gradient checks: dense (quadratic, exact), conv stack, GRU.
    {
        use crate::gradcheck::grad_check;
        use crate::nn::{mse as nn_mse, tanh_backward, tanh_forward, Conv1d, Dense, GruCell, Padding};
        use crate::tensor::ParamStore;

        let mut store = ParamStore::new();
        let mut rng = Rng::seed_from(29);
        let dense = Dense::new(&mut store, "lin", 4, 3, &mut rng);
        let x = Tensor::randn(&[4, 5], 1.0, &mut rng);
        let target = Tensor::randn(&[3, 5], 1.0, &mut rng);
        let lin_report = grad_check(
            &mut store,
            |store| {
                let y = dense.forward(store, &x);
                let (loss, dy) = nn_mse(y.data(), target.data());
                let dy = Tensor::from_vec(y.shape(), dy).unwrap();
                dense.backward(store, &x, &dy);
                loss
            },
            1e-3,
            usize::MAX,
        );
        push(
            "gradcheck-dense",
            lin_report.max_rel_error < 1e-6 && !lin_report.non_finite,
            format!("max rel error {:.2e}", lin_report.max_rel_error),
        );

        let mut store = ParamStore::new();
        let c1 = Conv1d::new(&mut store, "c1", 2, 4, 3, 3, Padding::Same, &mut rng);
        let c2 = Conv1d::new(&mut store, "c2", 4, 2, 3, 1, Padding::Same, &mut rng);
        let x = Tensor::randn(&[2, 16], 1.0, &mut rng);
        let target = Tensor::randn(&[2, 16], 1.0, &mut rng);
        let conv_report = grad_check(
            &mut store,
            |store| {
                let h = c1.forward(store, &x).unwrap();
                let a = tanh_forward(&h);
                let y = c2.forward(store, &a).unwrap();
                let (loss, dy) = nn_mse(y.data(), target.data());
                let dy = Tensor::from_vec(y.shape(), dy).unwrap();
                let da = c2.backward(store, &a, &dy);
                let dh = tanh_backward(&a, &da);
                c1.backward(store, &x, &dh);
                loss
            },
            1e-3,
            usize::MAX,
        );
        push(
            "gradcheck-conv-dilated",
            conv_report.max_rel_error < 1e-4 && !conv_report.non_finite,
            format!("max rel error {:.2e}", conv_report.max_rel_error),
        );

        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "g", 3, 4, &mut rng);
        let x0: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let x1: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let target: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let gru_report = grad_check(
            &mut store,
            |store| {
                let (h1, c0) = cell.step(store, &x0, &[0.0; 4]).unwrap();
                let (h2, c1) = cell.step(store, &x1, &h1).unwrap();
                let (loss, dh2) = nn_mse(&h2, &target);
                let (_, dh1) = cell.step_backward(store, &c1, &dh2);
                cell.step_backward(store, &c0, &dh1);
                loss
            },
            1e-3,
            usize::MAX,
        );
        push(
            "gradcheck-gru",
            gru_report.max_rel_error < 1e-4 && !gru_report.non_finite,
            format!("max rel error {:.2e}", gru_report.max_rel_error),
        );
    }

    results
}

// ---------------------------------------------------------------------------
// Small utilities
// ---------------------------------------------------------------------------

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xCBF2_9CE4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}

/// Current UTC time as ISO-8601, without external dependencies.
pub fn iso8601_now() -> String {
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .unwrap_or_default();
    let secs = now.as_secs();
    let days = secs / 86_400;
    let rem = secs % 86_400;
    let (h, m, s) = (rem / 3600, (rem / 60) % 60, rem % 60);
    // Civil-from-days (Gregorian), valid for the unix era.
    let z = days as i64 + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let year = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let day = doy - (153 * mp + 2) / 5 + 1;
    let month = if mp < 10 { mp + 3 } else { mp - 9 };
    let year = if month <= 2 { year + 1 } else { year };
    format!("{year:04}-{month:02}-{day:02}T{h:02}:{m:02}:{s:02}Z")
}

/// Also used by the joint export path.
pub fn joints_of_window(
    dataset: &GestureDataset,
    w: WindowRef,
    skeleton: &SkeletonSpec,
) -> Result<JointSequence> {
    let seq = dataset.window_poses(w, WINDOW_LEN)?;
    dirvec_to_joints(&seq, skeleton)
}

/// Round-trip guard used in tests: dirs -> joints -> dirs.
pub fn joints_round_trip(seq: &PoseSequence, skeleton: &SkeletonSpec) -> Result<PoseSequence> {
    let joints = dirvec_to_joints(seq, skeleton)?;
    joints_to_dirvec(&joints, skeleton)
}

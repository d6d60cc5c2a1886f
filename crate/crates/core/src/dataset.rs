//! Synthetic paired audio-gesture corpus, windowing, splits and on-disk
//! format.
//!
//! Real talk-show footage is not redistributable, so the corpus is generated:
//! each clip pairs a click-plus-babble audio track (beats at known times)
//! with a 3D gesture track whose arm strokes peak in angular velocity exactly
//! on those beats (plus configurable jitter), over low-amplitude idle sway.
//! Ground-truth beat times ride along for oracle tests.
//!
//! Dataset files (`GSTR`), all little-endian:
//!
//! ```text
//! magic "GSTR", version u32 = 1, fps f32, clip count u32
//! per clip:
//!   audio sample count u64, f32 x count samples (16 kHz mono)
//!   frame count u32, dims u8 (3), bones u8 (9), f32 direction data (frame-major)
//!   beat count u32, f64 x count ground-truth beat times (seconds)
//! ```

use std::path::Path;

use crate::audio::{AudioClip, INTERNAL_RATE};
use crate::bundle::Reader;
use crate::error::{Error, Result};
use crate::pose::PoseSequence;
use crate::rng::Rng;

pub const MAGIC: &[u8; 4] = b"GSTR";
pub const FORMAT_VERSION: u32 = 1;
/// Pose window length in frames.
pub const WINDOW_LEN: usize = 34;
/// Stride between window starts.
pub const WINDOW_STRIDE: usize = 10;
/// Beats stay this many seconds away from clip boundaries so every stroke
/// completes inside the clip.
const BEAT_MARGIN: f64 = 0.4;

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub clip_count: usize,
    pub clip_seconds: f64,
    pub fps: f64,
    /// Beats per second, sampled uniformly per clip.
    pub tempo_range: (f64, f64),
    /// Motion beats shift by up to this many seconds from the audio beats.
    pub beat_jitter: f64,
    /// Per-component direction noise before renormalization.
    pub motion_noise: f64,
    /// Per-clip spread of stroke amplitude and left/right asymmetry.
    pub style_variation: f64,
    /// Idle sway amplitude on torso/head/shoulder bones.
    pub sway: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            clip_count: 200,
            clip_seconds: 20.0,
            fps: 15.0,
            tempo_range: (1.2, 2.0),
            beat_jitter: 0.015,
            motion_noise: 0.01,
            style_variation: 0.2,
            sway: 0.05,
        }
    }
}

impl SynthConfig {
    /// Small corpus for unit tests.
    pub fn tiny() -> Self {
        SynthConfig {
            clip_count: 6,
            clip_seconds: 6.0,
            ..SynthConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetClip {
    pub audio: AudioClip,
    /// 3D directional-vector gesture track.
    pub poses: PoseSequence,
    /// Ground-truth audio beat times, seconds.
    pub beat_times: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GestureDataset {
    pub clips: Vec<DatasetClip>,
    pub fps: f64,
}

/// One training window: `len` frames of `clip` starting at `start`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowRef {
    pub clip: usize,
    pub start: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl GestureDataset {
    /// Ground-truth beats of one window, shifted to window-local seconds.
    pub fn window_beats(&self, w: WindowRef, len: usize) -> Vec<f64> {
        let t0 = w.start as f64 / self.fps;
        let t1 = (w.start + len) as f64 / self.fps;
        self.clips[w.clip]
            .beat_times
            .iter()
            .filter(|&&t| t >= t0 && t < t1)
            .map(|&t| t - t0)
            .collect()
    }

    pub fn window_poses(&self, w: WindowRef, len: usize) -> Result<PoseSequence> {
        self.clips[w.clip].poses.slice(w.start, len)
    }
}

// ---------------------------------------------------------------------------
// Synthesis
// ---------------------------------------------------------------------------

/// Raised-cosine step: 0 for u <= -1/2, 1 for u >= 1/2, smooth in between.
/// The derivative peaks exactly at u = 0, which is what pins each stroke's
/// angular-velocity maximum to its beat.
fn smooth_step(u: f64) -> f64 {
    if u <= -0.5 {
        0.0
    } else if u >= 0.5 {
        1.0
    } else {
        0.5 * (1.0 + (std::f64::consts::PI * u).sin())
    }
}

/// Alternating swing signal in [-1, 1]: each beat flips the arm to the other
/// side through a smooth stroke of width `w` centered on the beat.
fn swing(t: f64, beat_offsets: &[f64], w: f64) -> f64 {
    let mut s = -1.0;
    for (k, &tb) in beat_offsets.iter().enumerate() {
        let step = smooth_step((t - tb) / w);
        if step == 0.0 {
            break; // beats are sorted; later strokes cannot have started
        }
        s += if k % 2 == 0 { 2.0 * step } else { -2.0 * step };
    }
    s
}

/// Non-alternating accent in [0, ~1]: a sharp raised-cosine rise on every
/// beat (velocity peak exactly on the beat) followed by a slow decay. Unlike
/// the swing, its direction never flips, so motion conditioned on the audio
/// has a nonzero mean response that generators can latch onto.
fn accent(t: f64, beat_offsets: &[f64], w: f64, decay: f64) -> f64 {
    let mut n = 0.0;
    for &tb in beat_offsets {
        let u = (t - tb) / w;
        if u <= -0.5 {
            break; // beats are sorted
        }
        let rise = smooth_step(u);
        if rise > 0.0 {
            let dt = (t - tb - 0.5 * w).max(0.0);
            n += rise * (-dt / decay).exp();
        }
    }
    n
}

fn unit_sphere(side: f64, elevation: f64, azimuth: f64) -> [f64; 3] {
    [
        side * elevation.cos() * azimuth.cos(),
        elevation.sin(),
        elevation.cos() * azimuth.sin(),
    ]
}

/// Generate the synthetic corpus. Deterministic: the same seed yields a
/// bitwise-identical dataset.
pub fn synth_generate(config: &SynthConfig, seed: u64) -> Result<GestureDataset> {
    if config.clip_count == 0 {
        return Err(Error::invalid("clip_count must be at least 1".to_string()));
    }
    if !(config.clip_seconds > 0.0) {
        return Err(Error::invalid("clip_seconds must be positive".to_string()));
    }
    if !(config.fps > 0.0) {
        return Err(Error::invalid("fps must be positive".to_string()));
    }
    let (lo, hi) = config.tempo_range;
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::invalid(format!("bad tempo range ({lo}, {hi})")));
    }
    // fps rounds through the file format's f32; keep memory identical to disk.
    let fps = (config.fps as f32) as f64;
    let frames = (config.clip_seconds * fps).round() as usize;
    if frames < 2 {
        return Err(Error::invalid("clip too short for even two frames".to_string()));
    }
    let duration = config.clip_seconds;
    if duration <= 2.0 * BEAT_MARGIN + 1.0 {
        return Err(Error::invalid(format!(
            "clip_seconds {duration} leaves no room for beats"
        )));
    }

    let master = Rng::seed_from(seed);
    let mut clips = Vec::with_capacity(config.clip_count);
    for c in 0..config.clip_count {
        let mut rng = master.derive(c as u64);

        // Per-clip style.
        let tempo = rng.range(lo, hi);
        let period = 1.0 / tempo;
        let margin_frames = (BEAT_MARGIN * fps).ceil() as i64;
        let phase_frames = rng.below(((period * fps).floor() as usize).max(1)) as i64;
        let t0_frames = margin_frames + phase_frames;
        let amp = 0.8 * (1.0 + config.style_variation * rng.range(-1.0, 1.0));
        let asym = 0.3 * config.style_variation * rng.range(-1.0, 1.0);
        let amp_l = amp * (1.0 + asym);
        let amp_r = amp * (1.0 - asym);
        let stroke_w = (0.4 * period).min(0.35);

        // Beat grid: tau is time relative to t0, beats at tau = j * period.
        let t0 = t0_frames as f64 / fps;
        let mut beat_times = Vec::new();
        let mut j = 0usize;
        loop {
            let t = t0 + j as f64 * period;
            if t > duration - BEAT_MARGIN {
                break;
            }
            beat_times.push(t);
            j += 1;
        }
        let beat_taus: Vec<f64> = beat_times.iter().map(|t| t - t0).collect();
        let motion_taus: Vec<f64> = beat_taus
            .iter()
            .map(|&t| t + config.beat_jitter * rng.range(-1.0, 1.0))
            .collect();

        // Audio: clicks on the beats over quiet babble.
        let n_samples = (duration * INTERNAL_RATE as f64).round() as usize;
        let mut samples = vec![0.0f64; n_samples];
        let babble: Vec<(f64, f64, f64, f64)> = (0..4)
            .map(|_| {
                (
                    rng.range(100.0, 350.0), // carrier Hz
                    rng.range(0.1, 0.4),     // AM Hz
                    rng.range(0.0, std::f64::consts::TAU),
                    rng.range(0.012, 0.025), // amplitude
                )
            })
            .collect();
        for (i, s) in samples.iter_mut().enumerate() {
            let t = i as f64 / INTERNAL_RATE as f64;
            let mut v = 0.0;
            for &(f, g, ph, a) in &babble {
                let am = 0.5 * (1.0 + (std::f64::consts::TAU * g * t + ph).sin());
                v += a * am * (std::f64::consts::TAU * f * t + 2.0 * ph).sin();
            }
            v += 0.004 * rng.range(-1.0, 1.0);
            *s = v;
        }
        let click_len = INTERNAL_RATE as usize / 200; // 5 ms
        for &tb in &beat_times {
            let at = (tb * INTERNAL_RATE as f64).round() as usize;
            for k in 0..click_len {
                if at + k < n_samples {
                    let phase = std::f64::consts::TAU * 1000.0 * k as f64 / INTERNAL_RATE as f64;
                    let decay = 1.0 - k as f64 / click_len as f64;
                    samples[at + k] += 0.7 * phase.sin() * decay;
                }
            }
        }
        let audio = AudioClip {
            samples: samples.iter().map(|&v| v.clamp(-1.0, 1.0) as f32).collect(),
            sample_rate: INTERNAL_RATE,
        };

        // Motion: swing-driven arms with a non-alternating per-beat accent,
        // swaying torso. Everything is a function of
        // tau = (frame - t0_frames)/fps so that clips with identical style
        // parameters are exact time-shifted copies of one template.
        let sway = config.sway;
        let accent_decay = 0.6 * period;
        let tau_of = |frame: usize| (frame as f64 - t0_frames as f64) / fps;
        let mut dirs = Vec::with_capacity(frames * 9 * 3);
        for f in 0..frames {
            let tau = tau_of(f);
            let s = swing(tau, &motion_taus, stroke_w);
            let a = accent(tau, &motion_taus, stroke_w, accent_decay);
            let sl = amp_l * s;
            let sr = amp_r * s;
            let lift = amp * a;
            let tw = std::f64::consts::TAU;
            let raw: [[f64; 3]; 9] = [
                // spine, neck, head: near-vertical with slow sway; the head
                // and neck nod on the accent
                [sway * 0.9 * (tw * 0.23 * tau).sin(), 1.0, sway * 0.8 * (tw * 0.17 * tau).cos()],
                [sway * 0.6 * (tw * 0.19 * tau + 0.7).sin() + 0.10 * lift, 1.0, sway * 0.5 * (tw * 0.13 * tau).sin()],
                [sway * 0.4 * (tw * 0.11 * tau + 0.3).sin() + 0.25 * lift, 1.0, sway * 0.3 * (tw * 0.17 * tau + 1.1).sin()],
                // shoulders: near-horizontal, slight droop and sway
                [-0.98, -0.2, sway * 0.4 * (tw * 0.12 * tau).sin()],
                [0.98, -0.2, sway * 0.4 * (tw * 0.12 * tau + 0.5).sin()],
                // upper arms and forearms: the audio-predictable accent lift
                // dominates; the alternating swing adds variety on top, with
                // depth coupled to both
                unit_sphere(-1.0, -0.45 + 0.35 * sl + 0.5 * lift, 0.45 * sl - 0.25 * lift),
                unit_sphere(1.0, -0.45 + 0.35 * sr + 0.5 * lift, 0.45 * sr - 0.25 * lift),
                unit_sphere(-1.0, -0.15 + 0.5 * sl + 0.85 * lift, 0.55 * sl - 0.45 * lift),
                unit_sphere(1.0, -0.15 + 0.5 * sr + 0.85 * lift, 0.55 * sr - 0.45 * lift),
            ];
            for v in raw {
                let mut v = v;
                if config.motion_noise > 0.0 {
                    for x in v.iter_mut() {
                        *x += config.motion_noise * rng.normal();
                    }
                }
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                for x in v.iter_mut() {
                    *x /= n;
                    // Quantize through f32 so disk round trips are bitwise.
                    *x = (*x as f32) as f64;
                }
                dirs.extend_from_slice(&v);
            }
        }
        let poses = PoseSequence::new(3, 9, fps, dirs)?;
        clips.push(DatasetClip {
            audio,
            poses,
            beat_times,
        });
    }
    Ok(GestureDataset { clips, fps })
}

// ---------------------------------------------------------------------------
// Windowing and splits
// ---------------------------------------------------------------------------

/// Fixed-length windows at starts {0, stride, 2*stride, ...}; the final
/// partial window is dropped. Clips shorter than one window contribute none.
pub fn window(dataset: &GestureDataset, length: usize, stride: usize) -> Vec<WindowRef> {
    assert!(length > 0 && stride > 0);
    let mut out = Vec::new();
    for (c, clip) in dataset.clips.iter().enumerate() {
        let frames = clip.poses.frames();
        if frames < length {
            continue;
        }
        let count = (frames - length) / stride + 1;
        for i in 0..count {
            out.push(WindowRef {
                clip: c,
                start: i * stride,
            });
        }
    }
    out
}

/// Clip-level random split: all windows of a clip share one split so that
/// overlapping windows cannot leak across train/val/test. Deterministic for
/// a given seed.
pub fn split(
    dataset: &GestureDataset,
    windows: &[WindowRef],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<Vec<Split>> {
    let (ft, fv, fe) = fractions;
    if (ft + fv + fe - 1.0).abs() > 1e-9 || ft < 0.0 || fv < 0.0 || fe < 0.0 {
        return Err(Error::invalid(format!(
            "split fractions must be nonnegative and sum to 1, got ({ft}, {fv}, {fe})"
        )));
    }
    let n = dataset.clips.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = Rng::seed_from(seed);
    rng.shuffle(&mut order);
    let n_train = (ft * n as f64).round() as usize;
    let n_val = ((fv * n as f64).round() as usize).min(n - n_train.min(n));
    let mut clip_split = vec![Split::Test; n];
    for (rank, &clip) in order.iter().enumerate() {
        clip_split[clip] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(windows.iter().map(|w| clip_split[w.clip]).collect())
}

/// Windows belonging to one split, in deterministic (clip, start) order.
pub fn windows_of(windows: &[WindowRef], assignment: &[Split], which: Split) -> Vec<WindowRef> {
    windows
        .iter()
        .zip(assignment)
        .filter(|(_, &s)| s == which)
        .map(|(&w, _)| w)
        .collect()
}

// ---------------------------------------------------------------------------
// File I/O
// ---------------------------------------------------------------------------

pub fn dataset_to_bytes(dataset: &GestureDataset) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(dataset.fps as f32).to_le_bytes());
    out.extend_from_slice(&(dataset.clips.len() as u32).to_le_bytes());
    for clip in &dataset.clips {
        out.extend_from_slice(&(clip.audio.samples.len() as u64).to_le_bytes());
        for &s in &clip.audio.samples {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out.extend_from_slice(&(clip.poses.frames() as u32).to_le_bytes());
        out.push(clip.poses.dims() as u8);
        out.push(clip.poses.bones() as u8);
        for &d in clip.poses.data() {
            out.extend_from_slice(&(d as f32).to_le_bytes());
        }
        out.extend_from_slice(&(clip.beat_times.len() as u32).to_le_bytes());
        for &t in &clip.beat_times {
            out.extend_from_slice(&t.to_le_bytes());
        }
    }
    out
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<GestureDataset> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(Error::parse(0, "bad magic, expected GSTR"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::parse(
            4,
            format!("unsupported dataset version {version}, expected {FORMAT_VERSION}"),
        ));
    }
    let fps = r.f32()? as f64;
    if !(fps > 0.0) {
        return Err(Error::parse(8, format!("bad fps {fps}")));
    }
    let clip_count = r.u32()? as usize;
    let mut clips = Vec::with_capacity(clip_count.min(1 << 16));
    for _ in 0..clip_count {
        let sample_count = r.u64()? as usize;
        let mut samples = Vec::with_capacity(sample_count.min(1 << 28));
        for _ in 0..sample_count {
            samples.push(r.f32()?);
        }
        let frames = r.u32()? as usize;
        let dims = r.u8()? as usize;
        let bones = r.u8()? as usize;
        if dims != 2 && dims != 3 {
            return Err(Error::parse(r.offset(), format!("bad dims {dims}")));
        }
        if bones == 0 || bones > 64 {
            return Err(Error::parse(r.offset(), format!("bad bone count {bones}")));
        }
        let mut dirs = Vec::with_capacity(frames * bones * dims);
        for _ in 0..frames * bones * dims {
            dirs.push(r.f32()? as f64);
        }
        let poses = PoseSequence::new(dims, bones, fps, dirs)
            .map_err(|e| Error::parse(r.offset(), format!("invalid pose data: {e}")))?;
        let beat_count = r.u32()? as usize;
        let mut beat_times = Vec::with_capacity(beat_count.min(1 << 20));
        for _ in 0..beat_count {
            beat_times.push(r.f64()?);
        }
        clips.push(DatasetClip {
            audio: AudioClip {
                samples,
                sample_rate: INTERNAL_RATE,
            },
            poses,
            beat_times,
        });
    }
    if !r.at_end() {
        return Err(Error::parse(r.offset(), "trailing bytes after dataset"));
    }
    Ok(GestureDataset { clips, fps })
}

pub fn write_dataset(dataset: &GestureDataset, path: &Path) -> Result<()> {
    std::fs::write(path, dataset_to_bytes(dataset))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<GestureDataset> {
    let bytes = std::fs::read(path)?;
    dataset_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::extract_kinematic_beats;

    fn quick_config() -> SynthConfig {
        SynthConfig {
            clip_count: 4,
            clip_seconds: 6.0,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_gives_bitwise_identical_dataset() {
        let a = synth_generate(&quick_config(), 77).unwrap();
        let b = synth_generate(&quick_config(), 77).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(&quick_config(), 78).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synthetic_poses_satisfy_unit_invariants() {
        let ds = synth_generate(&quick_config(), 5).unwrap();
        for clip in &ds.clips {
            clip.poses.validate().unwrap();
            assert_eq!(clip.poses.dims(), 3);
            assert_eq!(clip.poses.bones(), 9);
            // Audio covers the pose track.
            assert!(clip.audio.duration() + 1e-9 >= clip.poses.frames() as f64 / ds.fps);
        }
    }

    #[test]
    fn jitter_zero_kinematic_beats_match_ground_truth() {
        let config = SynthConfig {
            beat_jitter: 0.0,
            motion_noise: 0.0,
            clip_count: 3,
            clip_seconds: 8.0,
            ..SynthConfig::default()
        };
        let ds = synth_generate(&config, 11).unwrap();
        let frame = 1.0 / ds.fps;
        for clip in &ds.clips {
            let kin = extract_kinematic_beats(&clip.poses, None).unwrap();
            assert!(!clip.beat_times.is_empty());
            for &gt in &clip.beat_times {
                let nearest = kin
                    .times()
                    .iter()
                    .map(|t| (t - gt).abs())
                    .fold(f64::INFINITY, f64::min);
                assert!(
                    nearest <= frame + 1e-9,
                    "ground-truth beat {gt:.3}s has no kinematic beat within one frame (nearest {nearest:.3}s); kin={:?}",
                    kin.times()
                );
            }
            for &t in kin.times() {
                let nearest = clip
                    .beat_times
                    .iter()
                    .map(|gt| (t - gt).abs())
                    .fold(f64::INFINITY, f64::min);
                assert!(
                    nearest <= frame + 1e-9,
                    "kinematic beat {t:.3}s does not match any ground-truth beat"
                );
            }
        }
    }

    #[test]
    fn fixed_style_clips_are_time_shifted_copies() {
        let config = SynthConfig {
            clip_count: 3,
            clip_seconds: 8.0,
            tempo_range: (1.6, 1.6),
            beat_jitter: 0.0,
            motion_noise: 0.0,
            style_variation: 0.0,
            ..SynthConfig::default()
        };
        let ds = synth_generate(&config, 21).unwrap();
        let fps = ds.fps;
        let a = &ds.clips[0];
        let b = &ds.clips[1];
        // Recover the integer frame lag from the first ground-truth beats.
        let lag = ((b.beat_times[0] - a.beat_times[0]) * fps).round() as isize;
        let frames = a.poses.frames() as isize;
        let margin = (1.5 * fps) as isize;
        let mut compared = 0;
        let mut dot = 0.0;
        let mut na = 0.0;
        let mut nb = 0.0;
        for fa in margin..frames - margin {
            let fb = fa + lag;
            if fb < margin || fb >= frames - margin {
                continue;
            }
            let va = a.poses.frame(fa as usize);
            let vb = b.poses.frame(fb as usize);
            for (x, y) in va.iter().zip(vb) {
                assert!(
                    (x - y).abs() < 1e-6,
                    "frame {fa} vs {fb}: {x} vs {y} (lag {lag})"
                );
                dot += x * y;
                na += x * x;
                nb += y * y;
            }
            compared += 1;
        }
        assert!(compared > 20, "not enough overlap to compare");
        let corr = dot / (na.sqrt() * nb.sqrt());
        assert!(corr > 0.9999, "cross-correlation at matched lag {corr}");
    }

    #[test]
    fn window_counts() {
        let mk = |frames: usize| {
            let data: Vec<f64> = (0..frames * 9)
                .flat_map(|_| [0.0, 1.0, 0.0])
                .collect();
            GestureDataset {
                clips: vec![DatasetClip {
                    audio: AudioClip {
                        samples: vec![0.0; 16_000],
                        sample_rate: INTERNAL_RATE,
                    },
                    poses: PoseSequence::new(3, 9, 15.0, data).unwrap(),
                    beat_times: vec![],
                }],
                fps: 15.0,
            }
        };
        assert_eq!(window(&mk(34), 34, 10).len(), 1);
        let w54 = window(&mk(54), 34, 10);
        assert_eq!(w54.len(), 3);
        assert_eq!(
            w54.iter().map(|w| w.start).collect::<Vec<_>>(),
            vec![0, 10, 20]
        );
        assert_eq!(window(&mk(33), 34, 10).len(), 0);
    }

    #[test]
    fn split_is_clip_level_and_deterministic() {
        let config = SynthConfig {
            clip_count: 10,
            clip_seconds: 6.0,
            ..SynthConfig::default()
        };
        let ds = synth_generate(&config, 3).unwrap();
        let ws = window(&ds, WINDOW_LEN, WINDOW_STRIDE);
        let a = split(&ds, &ws, (0.8, 0.1, 0.1), 9).unwrap();
        let b = split(&ds, &ws, (0.8, 0.1, 0.1), 9).unwrap();
        assert_eq!(a, b);

        // Clip-level: all windows of a clip share a split.
        let mut clip_seen: Vec<Option<Split>> = vec![None; 10];
        for (w, s) in ws.iter().zip(&a) {
            match clip_seen[w.clip] {
                None => clip_seen[w.clip] = Some(*s),
                Some(prev) => assert_eq!(prev, *s),
            }
        }
        // 10 clips -> 8/1/1.
        let count = |which: Split| clip_seen.iter().filter(|s| **s == Some(which)).count();
        assert_eq!(count(Split::Train), 8);
        assert_eq!(count(Split::Val), 1);
        assert_eq!(count(Split::Test), 1);
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let ds = synth_generate(&quick_config(), 3).unwrap();
        let ws = window(&ds, WINDOW_LEN, WINDOW_STRIDE);
        assert!(split(&ds, &ws, (0.8, 0.1, 0.2), 9).is_err());
    }

    #[test]
    fn file_round_trip_is_bitwise() {
        let ds = synth_generate(&quick_config(), 13).unwrap();
        let bytes = dataset_to_bytes(&ds);
        let back = dataset_from_bytes(&bytes).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn corrupted_magic_fails_without_partial_data() {
        let ds = synth_generate(&quick_config(), 13).unwrap();
        let mut bytes = dataset_to_bytes(&ds);
        bytes[1] = b'X';
        assert!(matches!(
            dataset_from_bytes(&bytes),
            Err(Error::Parse { offset: 0, .. })
        ));
    }

    #[test]
    fn truncated_dataset_names_offset() {
        let ds = synth_generate(&quick_config(), 13).unwrap();
        let bytes = dataset_to_bytes(&ds);
        match dataset_from_bytes(&bytes[..bytes.len() / 2]) {
            Err(Error::Parse { offset, .. }) => assert!(offset > 0),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn zero_clip_file_is_a_valid_empty_dataset() {
        let empty = GestureDataset {
            clips: vec![],
            fps: 15.0,
        };
        let back = dataset_from_bytes(&dataset_to_bytes(&empty)).unwrap();
        assert!(back.clips.is_empty());
        assert_eq!(back.fps, 15.0);
    }

    #[test]
    fn rejects_degenerate_configs() {
        let mut c = quick_config();
        c.clip_count = 0;
        assert!(synth_generate(&c, 1).is_err());
        let mut c = quick_config();
        c.clip_seconds = 0.0;
        assert!(synth_generate(&c, 1).is_err());
    }

    #[test]
    fn beats_are_within_margins_and_sorted() {
        let ds = synth_generate(&quick_config(), 19).unwrap();
        for clip in &ds.clips {
            for w in clip.beat_times.windows(2) {
                assert!(w[1] > w[0]);
            }
            for &t in &clip.beat_times {
                assert!(t >= BEAT_MARGIN - 1e-9);
                assert!(t <= clip.audio.duration() - BEAT_MARGIN + 1e-9);
            }
        }
    }
}

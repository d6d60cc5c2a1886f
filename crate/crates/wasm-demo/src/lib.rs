//! Browser demo bindings: three interactive views over the core pipeline.
//!
//! Each export packs its result into one flat `Vec<f64>` with a small numeric
//! header so the page needs no JSON layer; `www/index.html` documents and
//! decodes the layouts.
//!
//! Build with `wasm-pack build crates/wasm-demo --target web` and serve the
//! `www/` directory next to the generated `pkg/`.

use wasm_bindgen::prelude::wasm_bindgen;

use gesturelab::audio::{detect_audio_beats, onset_envelope};
use gesturelab::dataset::{synth_generate, SynthConfig};
use gesturelab::diffusion::{forward_diffuse, NoiseSchedule};
use gesturelab::metrics::extract_kinematic_beats;
use gesturelab::pose::{dirvec_to_joints, seq_to_tensor, tensor_to_seq, PoseSequence};
use gesturelab::rng::Rng;
use gesturelab::skeleton::SkeletonSpec;
use gesturelab::tensor::Tensor;

fn demo_config(tempo: f64, jitter: f64, noise: f64, seconds: f64) -> SynthConfig {
    let tempo = tempo.clamp(0.5, 3.0);
    SynthConfig {
        clip_count: 1,
        clip_seconds: seconds.clamp(3.0, 30.0),
        tempo_range: (tempo, tempo),
        beat_jitter: jitter.clamp(0.0, 0.3),
        motion_noise: noise.clamp(0.0, 0.2),
        ..SynthConfig::default()
    }
}

fn joints_flat(seq: &PoseSequence, skeleton: &SkeletonSpec) -> Vec<f64> {
    let joints = dirvec_to_joints(seq, skeleton).expect("skeleton matches");
    joints.data
}

/// Synthesize one clip and return its skeleton animation with beat markers.
///
/// Layout: `[frames, joints, fps, n_beats, n_kin,
///           frames*joints*3 joint xyz, n_beats beat times, n_kin kin times]`.
#[wasm_bindgen]
pub fn synth_clip(seed: u32, tempo: f64, jitter: f64, noise: f64, seconds: f64) -> Vec<f64> {
    let config = demo_config(tempo, jitter, noise, seconds);
    let ds = synth_generate(&config, seed as u64).expect("demo config is valid");
    let clip = &ds.clips[0];
    let skeleton = SkeletonSpec::default_upper_body();
    let kin = extract_kinematic_beats(&clip.poses, None)
        .map(|k| k.times().to_vec())
        .unwrap_or_default();
    let xyz = joints_flat(&clip.poses, &skeleton);
    let mut out = vec![
        clip.poses.frames() as f64,
        skeleton.joint_count() as f64,
        ds.fps,
        clip.beat_times.len() as f64,
        kin.len() as f64,
    ];
    out.extend_from_slice(&xyz);
    out.extend_from_slice(&clip.beat_times);
    out.extend_from_slice(&kin);
    out
}

/// Forward-diffuse a gesture window to step `t` of a 100-step schedule and
/// renormalize, showing the pose dissolving into noise.
///
/// Layout: `[frames, joints, fps, alpha_bar, frames*joints*3 joint xyz]`.
#[wasm_bindgen]
pub fn diffuse_window(seed: u32, tempo: f64, t: u32) -> Vec<f64> {
    let config = demo_config(tempo, 0.0, 0.0, 6.0);
    let ds = synth_generate(&config, seed as u64).expect("demo config is valid");
    let window = ds.clips[0].poses.slice(15, 34).expect("clip has 90 frames");
    let schedule = NoiseSchedule::default_schedule();
    let t = (t as usize).min(schedule.t_count());
    let skeleton = SkeletonSpec::default_upper_body();
    let seq = if t == 0 {
        window
    } else {
        let x0 = seq_to_tensor(&window);
        let mut rng = Rng::seed_from(seed as u64 ^ 0xD1FF);
        let noise = Tensor::randn(x0.shape(), 1.0, &mut rng);
        let x_t = forward_diffuse(&x0, t, &noise, &schedule).expect("t in range");
        tensor_to_seq(&x_t, 3, ds.fps).expect("shape preserved")
    };
    let xyz = joints_flat(&seq, &skeleton);
    let mut out = vec![
        seq.frames() as f64,
        skeleton.joint_count() as f64,
        ds.fps,
        schedule.alpha_bar(t),
    ];
    out.extend_from_slice(&xyz);
    out
}

/// Spectral-flux onset envelope of the synthetic click-plus-babble audio with
/// the beats picked at `mean + k * std`.
///
/// Layout: `[n_env, frame_rate, time_offset, n_detected, n_true,
///           env values, detected times, true times]`.
#[wasm_bindgen]
pub fn onset_demo(seed: u32, tempo: f64, threshold_k: f64) -> Vec<f64> {
    let config = demo_config(tempo, 0.0, 0.0, 6.0);
    let ds = synth_generate(&config, seed as u64).expect("demo config is valid");
    let clip = &ds.clips[0];
    let hop = clip.audio.sample_rate as usize / 100;
    let window = (0.046 * clip.audio.sample_rate as f64).round() as usize;
    let env = onset_envelope(&clip.audio, hop, window).expect("window >= hop");
    let beats = detect_audio_beats(&env, threshold_k.clamp(0.0, 10.0));
    let mut out = vec![
        env.values.len() as f64,
        env.frame_rate,
        env.time_offset,
        beats.len() as f64,
        clip.beat_times.len() as f64,
    ];
    out.extend_from_slice(&env.values);
    out.extend_from_slice(beats.times());
    out.extend_from_slice(&clip.beat_times);
    out
}

/// Bone edges of the default skeleton as (parent, child) joint index pairs.
#[wasm_bindgen]
pub fn skeleton_edges() -> Vec<u32> {
    let skeleton = SkeletonSpec::default_upper_body();
    let mut edges = Vec::new();
    for b in 0..skeleton.bone_count() {
        let child = skeleton.bone_child(b);
        let parent = skeleton.parent_of(child).expect("bone child has parent");
        edges.push(parent as u32);
        edges.push(child as u32);
    }
    edges
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synth_clip_layout_is_consistent() {
        let out = synth_clip(3, 1.6, 0.0, 0.0, 4.0);
        let frames = out[0] as usize;
        let joints = out[1] as usize;
        let n_beats = out[3] as usize;
        let n_kin = out[4] as usize;
        assert_eq!(joints, 10);
        assert_eq!(out.len(), 5 + frames * joints * 3 + n_beats + n_kin);
        assert!(n_beats > 0);
    }

    #[test]
    fn diffuse_window_interpolates_to_noise() {
        let clean = diffuse_window(3, 1.6, 0);
        let noisy = diffuse_window(3, 1.6, 100);
        assert_eq!(clean.len(), noisy.len());
        assert!(noisy[3] < clean[3], "alpha_bar must decrease with t");
        assert_ne!(clean, noisy);
    }

    #[test]
    fn onset_demo_layout_is_consistent() {
        let out = onset_demo(5, 1.5, 1.5);
        let n_env = out[0] as usize;
        let n_detected = out[3] as usize;
        let n_true = out[4] as usize;
        assert_eq!(out.len(), 5 + n_env + n_detected + n_true);
        assert!(n_true > 0);
    }

    #[test]
    fn skeleton_edges_form_nine_bones() {
        let edges = skeleton_edges();
        assert_eq!(edges.len(), 18);
    }

    #[test]
    fn demo_is_deterministic() {
        assert_eq!(synth_clip(9, 1.3, 0.01, 0.01, 5.0), synth_clip(9, 1.3, 0.01, 0.01, 5.0));
    }
}

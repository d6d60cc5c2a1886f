//! Audio ingestion, beat extraction and per-frame conditioning features.
//!
//! Audio lives internally as mono f32 PCM. WAV input is resampled to 16 kHz
//! by linear interpolation. Audio beats come from a transparent spectral-flux
//! onset detector (positive flux of the magnitude short-time transform,
//! mean + k*std peak picking) instead of an opaque pretrained model, so the
//! beat pipeline is testable end to end.

use crate::error::{Error, Result};

pub const INTERNAL_RATE: u32 = 16_000;
/// 10 ms hop at the internal rate.
pub const DEFAULT_HOP: usize = 160;
/// 46 ms analysis window at the internal rate.
pub const DEFAULT_WINDOW: usize = 736;
/// Default peak-picking threshold factor (mean + k * std).
pub const DEFAULT_THRESHOLD_K: f64 = 1.5;
/// Conditioning feature layout: log-energy, onset strength, 30 mel bands.
pub const FEATURE_DIM: usize = 32;
pub const MEL_BANDS: usize = 30;
/// Energy floor inside log compression.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Sorted audio beat timestamps, seconds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BeatSet {
    times: Vec<f64>,
}

impl BeatSet {
    pub fn new(times: Vec<f64>) -> Result<BeatSet> {
        for w in times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::invalid(format!(
                    "beat times must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::invalid("beat times must be finite and non-negative".to_string()));
        }
        Ok(BeatSet { times })
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

// ---------------------------------------------------------------------------
// WAV parsing
// ---------------------------------------------------------------------------

/// Parse a RIFF/WAVE, PCM 16-bit file (mono or stereo; stereo is averaged),
/// normalize to [-1, 1] and resample to 16 kHz.
pub fn load_wav(bytes: &[u8]) -> Result<AudioClip> {
    use crate::bundle::Reader;
    let mut r = Reader::new(bytes);
    if r.take(4)? != b"RIFF" {
        return Err(Error::parse(0, "missing RIFF header"));
    }
    let _riff_size = r.u32()?;
    if r.take(4)? != b"WAVE" {
        return Err(Error::parse(8, "missing WAVE tag"));
    }

    let mut format: Option<(u16, u16, u32, u16)> = None; // (codec, channels, rate, bits)
    let mut data: Option<&[u8]> = None;
    while !r.at_end() {
        let id_at = r.offset();
        let id: [u8; 4] = r.take(4)?.try_into().unwrap();
        let size = r.u32()? as usize;
        let chunk = r.take(size)?;
        match &id {
            b"fmt " => {
                if chunk.len() < 16 {
                    return Err(Error::parse(id_at, "fmt chunk too short"));
                }
                let codec = u16::from_le_bytes([chunk[0], chunk[1]]);
                let channels = u16::from_le_bytes([chunk[2], chunk[3]]);
                let rate = u32::from_le_bytes([chunk[4], chunk[5], chunk[6], chunk[7]]);
                let bits = u16::from_le_bytes([chunk[14], chunk[15]]);
                format = Some((codec, channels, rate, bits));
            }
            b"data" => data = Some(chunk),
            _ => {} // skip other chunks
        }
        // Chunks are word-aligned.
        if size % 2 == 1 && !r.at_end() {
            r.take(1)?;
        }
    }

    let (codec, channels, rate, bits) = format.ok_or_else(|| Error::parse(12, "no fmt chunk"))?;
    if codec != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "WAV codec {codec} (only uncompressed PCM is supported)"
        )));
    }
    if bits != 16 {
        return Err(Error::UnsupportedFormat(format!(
            "{bits}-bit PCM (only 16-bit is supported)"
        )));
    }
    if channels == 0 || channels > 2 {
        return Err(Error::UnsupportedFormat(format!(
            "{channels} channels (mono or stereo only)"
        )));
    }
    if rate == 0 {
        return Err(Error::invalid("zero sample rate".to_string()));
    }
    let data = data.ok_or_else(|| Error::parse(12, "no data chunk"))?;
    let frame_bytes = 2 * channels as usize;
    let frames = data.len() / frame_bytes;
    let mut samples = Vec::with_capacity(frames);
    for f in 0..frames {
        let mut acc = 0.0f32;
        for c in 0..channels as usize {
            let at = f * frame_bytes + 2 * c;
            let v = i16::from_le_bytes([data[at], data[at + 1]]);
            acc += v as f32 / 32768.0;
        }
        samples.push(acc / channels as f32);
    }
    let samples = if rate == INTERNAL_RATE {
        samples
    } else {
        resample_linear(&samples, rate, INTERNAL_RATE)
    };
    Ok(AudioClip {
        samples,
        sample_rate: INTERNAL_RATE,
    })
}

/// Linear-interpolation resampler. Output length is
/// floor((n - 1) * to / from) + 1, so endpoints are preserved.
pub fn resample_linear(samples: &[f32], from: u32, to: u32) -> Vec<f32> {
    if samples.is_empty() || from == to {
        return samples.to_vec();
    }
    let n = samples.len();
    let out_len = ((n - 1) as u64 * to as u64 / from as u64) as usize + 1;
    let step = from as f64 / to as f64;
    let mut out = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let pos = i as f64 * step;
        let i0 = pos.floor() as usize;
        let frac = pos - i0 as f64;
        let a = samples[i0.min(n - 1)] as f64;
        let b = samples[(i0 + 1).min(n - 1)] as f64;
        out.push((a + frac * (b - a)) as f32);
    }
    out
}

// ---------------------------------------------------------------------------
// FFT
// ---------------------------------------------------------------------------

/// In-place iterative radix-2 FFT. Length must be a power of two.
fn fft_in_place(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    debug_assert!(n.is_power_of_two());
    // Bit-reversal permutation.
    let mut j = 0usize;
    for i in 0..n {
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
        let mut mask = n >> 1;
        while mask > 0 && j & mask != 0 {
            j ^= mask;
            mask >>= 1;
        }
        j |= mask;
    }
    let mut len = 2;
    while len <= n {
        let angle = -2.0 * std::f64::consts::PI / len as f64;
        let (w_im, w_re) = angle.sin_cos();
        let mut start = 0;
        while start < n {
            let mut cur_re = 1.0;
            let mut cur_im = 0.0;
            for k in 0..len / 2 {
                let a = start + k;
                let b = a + len / 2;
                let tr = cur_re * re[b] - cur_im * im[b];
                let ti = cur_re * im[b] + cur_im * re[b];
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
                let nr = cur_re * w_re - cur_im * w_im;
                cur_im = cur_re * w_im + cur_im * w_re;
                cur_re = nr;
            }
            start += len;
        }
        len <<= 1;
    }
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
        .collect()
}

/// Magnitude spectrum (n_fft/2 + 1 bins) of a Hann-windowed frame, zero
/// padded to `n_fft`.
fn frame_magnitudes(frame: &[f64], window: &[f64], n_fft: usize) -> Vec<f64> {
    let mut re = vec![0.0; n_fft];
    let mut im = vec![0.0; n_fft];
    for (i, (&x, &w)) in frame.iter().zip(window).enumerate() {
        re[i] = x * w;
    }
    fft_in_place(&mut re, &mut im);
    (0..=n_fft / 2)
        .map(|k| (re[k] * re[k] + im[k] * im[k]).sqrt())
        .collect()
}

// ---------------------------------------------------------------------------
// Onset envelope and beat picking
// ---------------------------------------------------------------------------

/// Half-wave-rectified spectral flux per hop.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OnsetEnvelope {
    pub values: Vec<f64>,
    /// Envelope frames per second (sample_rate / hop).
    pub frame_rate: f64,
    /// Time of envelope index 0 (window center), seconds.
    pub time_offset: f64,
}

impl OnsetEnvelope {
    pub fn time_of(&self, index: usize) -> f64 {
        self.time_offset + index as f64 / self.frame_rate
    }
}

/// Positive spectral flux over a magnitude short-time transform. Envelope
/// index i corresponds to the center of the window starting at sample i*hop.
/// A clip shorter than one window yields an empty envelope.
pub fn onset_envelope(clip: &AudioClip, hop: usize, window: usize) -> Result<OnsetEnvelope> {
    if hop == 0 || window < hop {
        return Err(Error::invalid(format!(
            "window ({window}) must be at least hop ({hop}), both nonzero"
        )));
    }
    let rate = clip.sample_rate as f64;
    let envelope_meta = |values: Vec<f64>| OnsetEnvelope {
        values,
        frame_rate: rate / hop as f64,
        time_offset: window as f64 / 2.0 / rate,
    };
    if clip.samples.len() < window {
        return Ok(envelope_meta(Vec::new()));
    }
    let n_fft = window.next_power_of_two();
    let win = hann(window);
    let count = (clip.samples.len() - window) / hop + 1;
    let mut values = Vec::with_capacity(count);
    let mut prev: Option<Vec<f64>> = None;
    let mut frame = vec![0.0f64; window];
    for i in 0..count {
        let start = i * hop;
        for (dst, src) in frame.iter_mut().zip(&clip.samples[start..start + window]) {
            *dst = *src as f64;
        }
        let mags = frame_magnitudes(&frame, &win, n_fft);
        let flux = match &prev {
            None => 0.0,
            Some(p) => mags.iter().zip(p).map(|(m, pm)| (m - pm).max(0.0)).sum::<f64>(),
        };
        values.push(flux);
        prev = Some(mags);
    }
    Ok(envelope_meta(values))
}

/// Pick beats from an onset envelope: strict local maxima above
/// mean + threshold_k * std, at least 100 ms apart, returned in seconds.
pub fn detect_audio_beats(envelope: &OnsetEnvelope, threshold_k: f64) -> BeatSet {
    let v = &envelope.values;
    if v.len() < 3 {
        return BeatSet::default();
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let threshold = mean + threshold_k * var.sqrt();
    let min_gap = 0.1;
    let mut times = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for i in 1..v.len() - 1 {
        if v[i] > threshold && v[i] > v[i - 1] && v[i] >= v[i + 1] {
            let t = envelope.time_of(i);
            if t - last >= min_gap {
                times.push(t);
                last = t;
            }
        }
    }
    BeatSet::new(times).expect("constructed in increasing order")
}

/// Convenience: envelope + peak picking with the default hop/window scaled to
/// the clip's rate.
pub fn audio_beats(clip: &AudioClip, threshold_k: f64) -> Result<BeatSet> {
    let hop = (clip.sample_rate as usize) / 100;
    let window = (0.046 * clip.sample_rate as f64).round() as usize;
    let env = onset_envelope(clip, hop, window)?;
    Ok(detect_audio_beats(&env, threshold_k))
}

// ---------------------------------------------------------------------------
// Conditioning features
// ---------------------------------------------------------------------------

/// Per-pose-frame conditioning features: frames x 32, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub frames: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn rowf(&self, frame: usize) -> &[f64] {
        &self.data[frame * FEATURE_DIM..(frame + 1) * FEATURE_DIM]
    }

    /// Contiguous sub-range of frames.
    pub fn slice(&self, start: usize, len: usize) -> FeatureMatrix {
        FeatureMatrix {
            frames: len,
            data: self.data[start * FEATURE_DIM..(start + len) * FEATURE_DIM].to_vec(),
        }
    }
}

fn mel_of(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn hz_of(mel: f64) -> f64 {
    700.0 * (10.0f64.powf(mel / 2595.0) - 1.0)
}

/// Edges of the 30 triangular mel bands over [0, rate/2]: 32 points, band b
/// spans points (b, b+1, b+2).
pub fn mel_band_edges(rate: f64) -> Vec<f64> {
    let top = mel_of(rate / 2.0);
    (0..MEL_BANDS + 2)
        .map(|i| hz_of(top * i as f64 / (MEL_BANDS + 1) as f64))
        .collect()
}

/// Extract n_frames x 32 features aligned to pose frame centers
/// ((i + 0.5) / fps): log energy, onset strength and 30 log mel-band
/// energies. The clip must cover the requested frames (up to one hop of
/// slack at the end).
///
/// The per-frame analysis window (80 ms) is wider than a pose frame at 15 fps
/// so no transient can fall between frame centers, and the onset feature
/// max-pools the flux envelope over +-half a frame for the same reason.
pub fn conditioning_features(clip: &AudioClip, n_frames: usize, fps: f64) -> Result<FeatureMatrix> {
    if n_frames == 0 {
        return Err(Error::invalid("n_frames must be positive".to_string()));
    }
    if !(fps > 0.0) {
        return Err(Error::invalid(format!("fps must be positive, got {fps}")));
    }
    let rate = clip.sample_rate as f64;
    let hop = (clip.sample_rate as usize) / 100;
    let window = (0.08 * rate).round() as usize;
    let needed = n_frames as f64 / fps - hop as f64 / rate;
    if clip.duration() < needed {
        return Err(Error::shape(format!(
            "clip of {:.3}s cannot cover {} frames at {} fps",
            clip.duration(),
            n_frames,
            fps
        )));
    }

    let envelope = onset_envelope(clip, hop, (0.046 * rate).round() as usize)?;
    let n_fft = window.next_power_of_two();
    let win = hann(window);
    let edges = mel_band_edges(rate);
    let bin_hz = rate / n_fft as f64;

    let mut data = Vec::with_capacity(n_frames * FEATURE_DIM);
    let mut frame = vec![0.0f64; window];
    let half = window / 2;
    for i in 0..n_frames {
        let tc = (i as f64 + 0.5) / fps;
        let center = (tc * rate).round() as isize;
        // Raw window around the frame center, zero-padded at clip edges.
        for (k, slot) in frame.iter_mut().enumerate() {
            let src = center - half as isize + k as isize;
            *slot = if src >= 0 && (src as usize) < clip.samples.len() {
                clip.samples[src as usize] as f64
            } else {
                0.0
            };
        }
        let energy = frame.iter().map(|x| x * x).sum::<f64>() / window as f64;
        data.push(energy.max(LOG_FLOOR).ln());

        let onset = if envelope.values.is_empty() {
            0.0
        } else {
            let lo = ((tc - 0.5 / fps - envelope.time_offset) * envelope.frame_rate).round();
            let hi = ((tc + 0.5 / fps - envelope.time_offset) * envelope.frame_rate).round();
            let lo = (lo.max(0.0) as usize).min(envelope.values.len() - 1);
            let hi = (hi.max(0.0) as usize).min(envelope.values.len() - 1);
            envelope.values[lo..=hi].iter().cloned().fold(0.0, f64::max)
        };
        data.push(onset);

        let mags = frame_magnitudes(&frame, &win, n_fft);
        for b in 0..MEL_BANDS {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            let mut acc = 0.0;
            for (k, m) in mags.iter().enumerate() {
                let f = k as f64 * bin_hz;
                let w = if f >= lo && f <= mid && mid > lo {
                    (f - lo) / (mid - lo)
                } else if f > mid && f <= hi && hi > mid {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                if w > 0.0 {
                    acc += w * m * m;
                }
            }
            data.push(acc.max(LOG_FLOOR).ln());
        }
    }
    Ok(FeatureMatrix {
        frames: n_frames,
        data,
    })
}

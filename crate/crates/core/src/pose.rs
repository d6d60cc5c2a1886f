//! Directional-vector pose representation.
//!
//! A pose frame is nine unit vectors, one per bone, root-centered by
//! construction (the root position is never stored). Degenerate bones map to
//! an all-zero sentinel instead of erroring so that projections of pure-depth
//! bones cannot abort a pipeline run. The third stored coordinate is the depth
//! axis; `project_to_2d` removes it.

use crate::error::{Error, Result};
use crate::skeleton::SkeletonSpec;

/// Unit-norm tolerance for stored directions.
pub const UNIT_TOL: f64 = 1e-6;
/// Below this norm a raw vector collapses to the zero sentinel.
pub const SENTINEL_EPS: f64 = 1e-9;

/// One frame: `bones` direction vectors of dimension `dims`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub dims: usize,
    pub dirs: Vec<f64>, // bones x dims
}

/// `frames` poses sharing a dimensionality and frame rate.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSequence {
    dims: usize,
    bones: usize,
    fps: f64,
    data: Vec<f64>, // frame-major: frames x bones x dims
}

/// Joint positions over time: `frames` x `joints` x `dims`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct JointSequence {
    pub dims: usize,
    pub joints: usize,
    pub fps: f64,
    pub data: Vec<f64>,
}

impl JointSequence {
    pub fn frames(&self) -> usize {
        if self.joints == 0 || self.dims == 0 {
            0
        } else {
            self.data.len() / (self.joints * self.dims)
        }
    }

    pub fn joint(&self, frame: usize, joint: usize) -> &[f64] {
        let base = (frame * self.joints + joint) * self.dims;
        &self.data[base..base + self.dims]
    }
}

fn check_dims(dims: usize) -> Result<()> {
    if dims == 2 || dims == 3 {
        Ok(())
    } else {
        Err(Error::invalid(format!("pose dimensionality must be 2 or 3, got {dims}")))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl PoseSequence {
    /// Build from frame-major direction data, validating unit-or-sentinel norms.
    pub fn new(dims: usize, bones: usize, fps: f64, data: Vec<f64>) -> Result<Self> {
        check_dims(dims)?;
        if !(fps > 0.0) {
            return Err(Error::invalid(format!("fps must be positive, got {fps}")));
        }
        if bones == 0 || data.len() % (bones * dims) != 0 {
            return Err(Error::shape(format!(
                "data length {} is not a multiple of bones*dims = {}",
                data.len(),
                bones * dims
            )));
        }
        let seq = PoseSequence {
            dims,
            bones,
            fps,
            data,
        };
        seq.validate()?;
        Ok(seq)
    }

    /// Build from raw (possibly un-normalized) vectors: each bone vector is
    /// scaled to unit length, or collapses to the zero sentinel when its norm
    /// is negligible. Used by model outputs, which emit free vectors.
    pub fn from_raw(dims: usize, bones: usize, fps: f64, mut data: Vec<f64>) -> Result<Self> {
        check_dims(dims)?;
        if !(fps > 0.0) {
            return Err(Error::invalid(format!("fps must be positive, got {fps}")));
        }
        if bones == 0 || data.len() % (bones * dims) != 0 {
            return Err(Error::shape(format!(
                "data length {} is not a multiple of bones*dims = {}",
                data.len(),
                bones * dims
            )));
        }
        for v in data.chunks_mut(dims) {
            let n = norm(v);
            if n < SENTINEL_EPS || !n.is_finite() {
                v.iter_mut().for_each(|x| *x = 0.0);
            } else {
                v.iter_mut().for_each(|x| *x /= n);
            }
        }
        Ok(PoseSequence {
            dims,
            bones,
            fps,
            data,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (i, v) in self.data.chunks(self.dims).enumerate() {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("non-finite direction at chunk {i}")));
            }
            let n = norm(v);
            if n != 0.0 && (n - 1.0).abs() > UNIT_TOL {
                return Err(Error::invalid(format!(
                    "direction {i} has norm {n}, expected 1 or zero sentinel"
                )));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn bones(&self) -> usize {
        self.bones
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn frames(&self) -> usize {
        self.data.len() / (self.bones * self.dims)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Direction of `bone` at `frame`.
    pub fn dir(&self, frame: usize, bone: usize) -> &[f64] {
        let base = (frame * self.bones + bone) * self.dims;
        &self.data[base..base + self.dims]
    }

    /// All directions of one frame, bone-major.
    pub fn frame(&self, frame: usize) -> &[f64] {
        let stride = self.bones * self.dims;
        &self.data[frame * stride..(frame + 1) * stride]
    }

    pub fn pose(&self, frame: usize) -> Pose {
        Pose {
            dims: self.dims,
            dirs: self.frame(frame).to_vec(),
        }
    }

    /// Contiguous sub-window of frames.
    pub fn slice(&self, start: usize, len: usize) -> Result<PoseSequence> {
        if start + len > self.frames() {
            return Err(Error::shape(format!(
                "window [{start}, {}) out of {} frames",
                start + len,
                self.frames()
            )));
        }
        let stride = self.bones * self.dims;
        Ok(PoseSequence {
            dims: self.dims,
            bones: self.bones,
            fps: self.fps,
            data: self.data[start * stride..(start + len) * stride].to_vec(),
        })
    }
}

/// Convert joint positions to per-bone unit directions.
///
/// For each bone, `dir = (child - parent) / ||child - parent||`; the root
/// position is discarded (the representation is root-centered by
/// construction). Zero-length bones map to the zero sentinel.
pub fn joints_to_dirvec(joints: &JointSequence, skeleton: &SkeletonSpec) -> Result<PoseSequence> {
    check_dims(joints.dims)?;
    if joints.joints != skeleton.joint_count() {
        return Err(Error::shape(format!(
            "joint array has {} joints, skeleton has {}",
            joints.joints,
            skeleton.joint_count()
        )));
    }
    if joints.data.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("joint positions contain NaN or Inf".to_string()));
    }
    let frames = joints.frames();
    let bones = skeleton.bone_count();
    let dims = joints.dims;
    let mut data = Vec::with_capacity(frames * bones * dims);
    for f in 0..frames {
        for b in 0..bones {
            let child = skeleton.bone_child(b);
            let parent = skeleton.parent_of(child).expect("bone child has a parent");
            let c = joints.joint(f, child);
            let p = joints.joint(f, parent);
            let mut v: Vec<f64> = c.iter().zip(p).map(|(c, p)| c - p).collect();
            let n = norm(&v);
            if n < SENTINEL_EPS {
                v.iter_mut().for_each(|x| *x = 0.0);
            } else {
                v.iter_mut().for_each(|x| *x /= n);
            }
            data.extend_from_slice(&v);
        }
    }
    PoseSequence::new(dims, bones, joints.fps, data)
}

/// Reconstruct joint positions from directions: the root sits at the origin
/// and `child = parent + bone_length * dir`, traversed parent-first. A zero
/// sentinel leaves the child on top of its parent.
pub fn dirvec_to_joints(seq: &PoseSequence, skeleton: &SkeletonSpec) -> Result<JointSequence> {
    if seq.bones() != skeleton.bone_count() {
        return Err(Error::shape(format!(
            "sequence has {} bones, skeleton has {}",
            seq.bones(),
            skeleton.bone_count()
        )));
    }
    let dims = seq.dims();
    let joints = skeleton.joint_count();
    let frames = seq.frames();
    let mut data = vec![0.0; frames * joints * dims];
    for f in 0..frames {
        for &j in skeleton.topo_order() {
            let Some(p) = skeleton.parent_of(j) else {
                continue; // root stays at the origin
            };
            let b = skeleton.bone_of_joint(j).expect("non-root joint owns a bone");
            let len = skeleton.bone_length(b);
            let dir = seq.dir(f, b);
            let pbase = (f * joints + p) * dims;
            let jbase = (f * joints + j) * dims;
            for d in 0..dims {
                data[jbase + d] = data[pbase + d] + len * dir[d];
            }
        }
    }
    Ok(JointSequence {
        dims,
        joints,
        fps: seq.fps(),
        data,
    })
}

/// Drop the depth axis (third coordinate) and re-normalize the surviving
/// 2-vector; a pure-depth direction becomes the zero sentinel.
pub fn project_to_2d(seq: &PoseSequence) -> Result<PoseSequence> {
    if seq.dims() != 3 {
        return Err(Error::shape(format!(
            "project_to_2d expects a 3D sequence, got {}D",
            seq.dims()
        )));
    }
    let mut data = Vec::with_capacity(seq.frames() * seq.bones() * 2);
    for v in seq.data().chunks(3) {
        let mut x = v[0];
        let mut y = v[1];
        let n = (x * x + y * y).sqrt();
        if n < SENTINEL_EPS {
            x = 0.0;
            y = 0.0;
        } else {
            x /= n;
            y /= n;
        }
        data.push(x);
        data.push(y);
    }
    PoseSequence::new(2, seq.bones(), seq.fps(), data)
}

/// Embed a 2D sequence back into 3D with zero depth. Since the 2-vectors are
/// already unit (or sentinel), no renormalization changes them; this is the
/// naive lift the trained lifter has to beat.
pub fn embed_2d_as_3d(seq: &PoseSequence) -> Result<PoseSequence> {
    if seq.dims() != 2 {
        return Err(Error::shape(format!(
            "embed_2d_as_3d expects a 2D sequence, got {}D",
            seq.dims()
        )));
    }
    let mut data = Vec::with_capacity(seq.frames() * seq.bones() * 3);
    for v in seq.data().chunks(2) {
        data.push(v[0]);
        data.push(v[1]);
        data.push(0.0);
    }
    PoseSequence::new(3, seq.bones(), seq.fps(), data)
}

/// Channel-major view of a sequence for the networks: (bones*dims, frames),
/// channel c = bone * dims + component.
pub fn seq_to_tensor(seq: &PoseSequence) -> crate::tensor::Tensor {
    let frames = seq.frames();
    let channels = seq.bones() * seq.dims();
    let mut data = vec![0.0; channels * frames];
    for f in 0..frames {
        let frame = seq.frame(f);
        for (c, &v) in frame.iter().enumerate() {
            data[c * frames + f] = v;
        }
    }
    crate::tensor::Tensor::from_vec(&[channels, frames], data).expect("consistent shape")
}

/// Inverse of [`seq_to_tensor`] for raw network output: per-bone vectors are
/// renormalized to unit length (or the zero sentinel).
pub fn tensor_to_seq(t: &crate::tensor::Tensor, dims: usize, fps: f64) -> Result<PoseSequence> {
    let channels = t.shape()[0];
    let frames = t.shape()[1];
    if channels % dims != 0 {
        return Err(Error::shape(format!(
            "{channels} channels do not split into {dims}-vectors"
        )));
    }
    let bones = channels / dims;
    let mut data = vec![0.0; frames * channels];
    for c in 0..channels {
        let row = t.row(c);
        for f in 0..frames {
            data[f * channels + c] = row[f];
        }
    }
    PoseSequence::from_raw(dims, bones, fps, data)
}

/// Mean per-joint positional error: mean over frames and joints of the
/// Euclidean distance between corresponding joints. Units follow the input.
pub fn mpjpe(a: &JointSequence, b: &JointSequence) -> Result<f64> {
    if a.dims != b.dims || a.joints != b.joints || a.data.len() != b.data.len() {
        return Err(Error::shape(format!(
            "mpjpe shape mismatch: {}x{}x{} vs {}x{}x{}",
            a.frames(),
            a.joints,
            a.dims,
            b.frames(),
            b.joints,
            b.dims
        )));
    }
    if a.data.is_empty() {
        return Err(Error::invalid("mpjpe of empty sequences".to_string()));
    }
    let dims = a.dims;
    let count = a.data.len() / dims;
    let mut total = 0.0;
    for (va, vb) in a.data.chunks(dims).zip(b.data.chunks(dims)) {
        let d2: f64 = va.iter().zip(vb).map(|(x, y)| (x - y) * (x - y)).sum();
        total += d2.sqrt();
    }
    Ok(total / count as f64)
}

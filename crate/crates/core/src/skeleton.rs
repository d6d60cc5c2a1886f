//! Upper-body joint tree.
//!
//! The skeleton is a rooted tree of 10 joints / 9 bones. Bones are identified
//! with their child joint and listed in joint order (every non-root joint owns
//! exactly one bone to its parent).

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSpec {
    joint_names: Vec<String>,
    parent_index: Vec<Option<usize>>,
    /// One entry per non-root joint, in joint order; meters.
    bone_lengths: Vec<f64>,
    /// Child joint index of each bone, in joint order.
    bone_child: Vec<usize>,
    /// Joint indices in parent-before-child order, root first.
    topo_order: Vec<usize>,
}

impl SkeletonSpec {
    pub fn new(
        joint_names: Vec<String>,
        parent_index: Vec<Option<usize>>,
        bone_lengths: Vec<f64>,
    ) -> Result<Self> {
        let n = joint_names.len();
        if parent_index.len() != n {
            return Err(Error::shape(format!(
                "{} joints but {} parent entries",
                n,
                parent_index.len()
            )));
        }
        let roots = parent_index.iter().filter(|p| p.is_none()).count();
        if roots != 1 {
            return Err(Error::invalid(format!("expected exactly one root, found {roots}")));
        }
        if bone_lengths.len() != n - 1 {
            return Err(Error::shape(format!(
                "{} joints need {} bone lengths, got {}",
                n,
                n - 1,
                bone_lengths.len()
            )));
        }
        if let Some(bad) = bone_lengths.iter().find(|&&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::invalid(format!("bone length must be positive, got {bad}")));
        }
        for (j, p) in parent_index.iter().enumerate() {
            if let Some(p) = p {
                if *p >= n {
                    return Err(Error::invalid(format!("joint {j} has out-of-range parent {p}")));
                }
            }
        }
        // Walking to the root from every joint must terminate: tree, no cycles.
        for start in 0..n {
            let mut hops = 0;
            let mut j = start;
            while let Some(p) = parent_index[j] {
                j = p;
                hops += 1;
                if hops > n {
                    return Err(Error::invalid("parent graph contains a cycle".to_string()));
                }
            }
        }

        let bone_child: Vec<usize> = (0..n).filter(|&j| parent_index[j].is_some()).collect();

        // Parent-before-child order via repeated scan (n is tiny).
        let mut topo_order = Vec::with_capacity(n);
        let mut placed = vec![false; n];
        while topo_order.len() < n {
            for j in 0..n {
                if placed[j] {
                    continue;
                }
                let ready = match parent_index[j] {
                    None => true,
                    Some(p) => placed[p],
                };
                if ready {
                    placed[j] = true;
                    topo_order.push(j);
                }
            }
        }

        Ok(SkeletonSpec {
            joint_names,
            parent_index,
            bone_lengths,
            bone_child,
            topo_order,
        })
    }

    /// Default 10-joint upper body: spine base (root), spine chest, neck, head,
    /// left/right shoulder, left/right elbow, left/right wrist.
    pub fn default_upper_body() -> Self {
        let names = [
            "spine_base",
            "spine_chest",
            "neck",
            "head",
            "l_shoulder",
            "r_shoulder",
            "l_elbow",
            "r_elbow",
            "l_wrist",
            "r_wrist",
        ];
        let parents = vec![
            None,
            Some(0), // spine_chest <- spine_base
            Some(1), // neck <- spine_chest
            Some(2), // head <- neck
            Some(1), // l_shoulder <- spine_chest
            Some(1), // r_shoulder <- spine_chest
            Some(4), // l_elbow <- l_shoulder
            Some(5), // r_elbow <- r_shoulder
            Some(6), // l_wrist <- l_elbow
            Some(7), // r_wrist <- r_elbow
        ];
        let lengths = vec![0.25, 0.12, 0.12, 0.18, 0.18, 0.28, 0.28, 0.26, 0.26];
        SkeletonSpec::new(names.iter().map(|s| s.to_string()).collect(), parents, lengths)
            .expect("default skeleton is valid")
    }

    pub fn joint_count(&self) -> usize {
        self.joint_names.len()
    }

    pub fn bone_count(&self) -> usize {
        self.bone_child.len()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn parent_of(&self, joint: usize) -> Option<usize> {
        self.parent_index[joint]
    }

    /// Child joint of bone `b` (bones are indexed in joint order).
    pub fn bone_child(&self, b: usize) -> usize {
        self.bone_child[b]
    }

    /// Bone index owned by `joint`, if it is not the root.
    pub fn bone_of_joint(&self, joint: usize) -> Option<usize> {
        self.bone_child.iter().position(|&c| c == joint)
    }

    pub fn bone_length(&self, b: usize) -> f64 {
        self.bone_lengths[b]
    }

    pub fn bone_lengths(&self) -> &[f64] {
        &self.bone_lengths
    }

    pub fn topo_order(&self) -> &[usize] {
        &self.topo_order
    }

    pub fn with_bone_lengths(&self, lengths: Vec<f64>) -> Result<Self> {
        SkeletonSpec::new(self.joint_names.clone(), self.parent_index.clone(), lengths)
    }
}

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Kinematic tree. Joint 0 is the root; every other joint's parent has a
/// smaller index, so iterating joints in order visits parents first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    parents: Vec<Option<usize>>,
    offsets: Vec<[f64; 3]>,
    /// Left heel, left toe, right heel, right toe.
    foot_joints: [usize; 4],
    /// Left and right hip, used to derive the facing direction.
    hip_joints: [usize; 2],
}

impl Skeleton {
    pub fn new(
        parents: Vec<Option<usize>>,
        offsets: Vec<[f64; 3]>,
        foot_joints: [usize; 4],
        hip_joints: [usize; 2],
    ) -> Result<Self> {
        let n = parents.len();
        if n < 2 {
            return Err(Error::InvalidSkeleton("need at least two joints".into()));
        }
        if offsets.len() != n {
            return Err(Error::InvalidSkeleton(format!(
                "{} offsets for {n} joints",
                offsets.len()
            )));
        }
        if parents[0].is_some() {
            return Err(Error::InvalidSkeleton("joint 0 must be the root".into()));
        }
        for (j, p) in parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < j => {}
                _ => {
                    return Err(Error::InvalidSkeleton(format!(
                        "joint {j} has parent {p:?}; parents must precede children"
                    )))
                }
            }
            let len = offsets[j].iter().map(|x| x * x).sum::<f64>().sqrt();
            if len.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
                return Err(Error::InvalidSkeleton(format!("joint {j} has zero-length offset")));
            }
        }
        for (k, &f) in foot_joints.iter().enumerate() {
            if f >= n || foot_joints[..k].contains(&f) {
                return Err(Error::InvalidSkeleton(format!("bad foot joint list {foot_joints:?}")));
            }
        }
        if hip_joints[0] == hip_joints[1] || hip_joints.iter().any(|&h| h >= n) {
            return Err(Error::InvalidSkeleton(format!("bad hip joints {hip_joints:?}")));
        }
        Ok(Self {
            parents,
            offsets,
            foot_joints,
            hip_joints,
        })
    }

    /// The 22-joint skeleton used for toy data: SMPL-like ordering, y up,
    /// facing +z, person's left on +x. Offsets in meters.
    pub fn toy22() -> Self {
        let parents = [
            None,
            Some(0),
            Some(0),
            Some(0),
            Some(1),
            Some(2),
            Some(3),
            Some(4),
            Some(5),
            Some(6),
            Some(7),
            Some(8),
            Some(9),
            Some(9),
            Some(9),
            Some(12),
            Some(13),
            Some(14),
            Some(16),
            Some(17),
            Some(18),
            Some(19),
        ];
        let offsets = [
            [0.0, 0.0, 0.0],
            [0.09, -0.06, 0.0],   // l hip
            [-0.09, -0.06, 0.0],  // r hip
            [0.0, 0.11, 0.0],     // spine1
            [0.0, -0.38, 0.0],    // l knee
            [0.0, -0.38, 0.0],    // r knee
            [0.0, 0.13, 0.0],     // spine2
            [0.0, -0.40, 0.0],    // l ankle
            [0.0, -0.40, 0.0],    // r ankle
            [0.0, 0.06, 0.0],     // spine3
            [0.0, -0.05, 0.12],   // l toe
            [0.0, -0.05, 0.12],   // r toe
            [0.0, 0.21, 0.0],     // neck
            [0.07, 0.12, 0.0],    // l collar
            [-0.07, 0.12, 0.0],   // r collar
            [0.0, 0.09, 0.03],    // head
            [0.11, 0.03, 0.0],    // l shoulder
            [-0.11, 0.03, 0.0],   // r shoulder
            [0.26, 0.0, 0.0],     // l elbow
            [-0.26, 0.0, 0.0],    // r elbow
            [0.25, 0.0, 0.0],     // l wrist
            [-0.25, 0.0, 0.0],    // r wrist
        ];
        Self::new(parents.to_vec(), offsets.to_vec(), [7, 10, 8, 11], [1, 2])
            .expect("toy22 skeleton is valid")
    }

    /// Five joints: root, then heel→toe chains for each leg.
    pub fn toy5() -> Self {
        Self::new(
            vec![None, Some(0), Some(1), Some(0), Some(3)],
            vec![
                [0.0, 0.0, 0.0],
                [0.1, -0.5, 0.0],
                [0.0, -0.05, 0.1],
                [-0.1, -0.5, 0.0],
                [0.0, -0.05, 0.1],
            ],
            [1, 2, 3, 4],
            [1, 3],
        )
        .expect("toy5 skeleton is valid")
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    pub fn offset(&self, joint: usize) -> [f64; 3] {
        self.offsets[joint]
    }

    pub fn bone_length(&self, joint: usize) -> f64 {
        self.offsets[joint].iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn foot_joints(&self) -> [usize; 4] {
        self.foot_joints
    }

    pub fn hip_joints(&self) -> [usize; 2] {
        self.hip_joints
    }

    /// `(child, parent)` for every non-root joint, in joint order.
    pub fn bones(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.parents
            .iter()
            .enumerate()
            .filter_map(|(j, p)| p.map(|p| (j, p)))
    }

    /// Rest-pose height of the root above the lowest joint.
    pub fn rest_root_height(&self) -> f64 {
        let mut y = vec![0.0; self.joint_count()];
        for (j, p) in self.bones() {
            y[j] = y[p] + self.offsets[j][1];
        }
        -y.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_skeletons_are_valid() {
        let s = Skeleton::toy22();
        assert_eq!(s.joint_count(), 22);
        assert_eq!(s.bones().count(), 21);
        assert!((s.rest_root_height() - 0.89).abs() < 1e-9);
        assert_eq!(Skeleton::toy5().joint_count(), 5);
    }

    #[test]
    fn rejects_cycles_and_forward_parents() {
        let r = Skeleton::new(
            vec![None, Some(2), Some(1)],
            vec![[0.0; 3], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
            [0, 1, 2, 0],
            [1, 2],
        );
        assert!(matches!(r, Err(Error::InvalidSkeleton(_))));
    }

    #[test]
    fn rejects_zero_offsets_and_duplicate_feet() {
        let zero = Skeleton::new(
            vec![None, Some(0), Some(0), Some(0), Some(0)],
            vec![[0.0; 3], [0.0; 3], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
            [1, 2, 3, 4],
            [1, 2],
        );
        assert!(zero.is_err());
        let dup = Skeleton::new(
            vec![None, Some(0), Some(0), Some(0), Some(0)],
            vec![[0.0; 3], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
            [1, 2, 2, 4],
            [1, 2],
        );
        assert!(dup.is_err());
    }
}

//! Pose-parameter synthesis for the 22-joint toy skeleton. Drives both the
//! toy corpus and the keyword-driven single-person source.

use nalgebra::Matrix3;
use ndarray::{Array2, Array3};

use super::kinematics::{detect_foot_contacts, forward_kinematics, DEFAULT_CONTACT_THRESHOLD};
use super::representation::MotionSequence;
use super::rotation::{axis_angle_to_matrix, matrix_to_rot6d};
use super::skeleton::Skeleton;
use crate::{Error, Result};

const L_HIP: usize = 1;
const R_HIP: usize = 2;
const SPINE1: usize = 3;
const L_KNEE: usize = 4;
const R_KNEE: usize = 5;
const L_SHOULDER: usize = 16;
const R_SHOULDER: usize = 17;
const L_ELBOW: usize = 18;
const R_ELBOW: usize = 19;

/// One frame of pose parameters. Angles in radians; index 0 is the
/// person's left side, 1 the right.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Pose {
    pub root: [f64; 3],
    /// Heading about +y; 0 faces +z.
    pub yaw: f64,
    /// Positive swings the leg forward.
    pub hip_swing: [f64; 2],
    /// Positive bends the knee.
    pub knee: [f64; 2],
    /// Positive lifts the arm sideways toward vertical.
    pub arm_raise: [f64; 2],
    /// Positive brings the arm toward the front.
    pub arm_forward: [f64; 2],
    pub elbow: [f64; 2],
    /// Positive leans the torso forward.
    pub lean: f64,
}

impl Pose {
    pub fn standing(x: f64, z: f64, yaw: f64, skeleton: &Skeleton) -> Self {
        Self {
            root: [x, skeleton.rest_root_height(), z],
            yaw,
            ..Default::default()
        }
    }

    /// Unit heading on the ground plane as `(x, z)`.
    pub fn heading(&self) -> (f64, f64) {
        (self.yaw.sin(), self.yaw.cos())
    }
}

fn rx(a: f64) -> Matrix3<f64> {
    axis_angle_to_matrix([1.0, 0.0, 0.0], a)
}

fn ry(a: f64) -> Matrix3<f64> {
    axis_angle_to_matrix([0.0, 1.0, 0.0], a)
}

fn rz(a: f64) -> Matrix3<f64> {
    axis_angle_to_matrix([0.0, 0.0, 1.0], a)
}

/// Runs forward kinematics over a pose track and detects contacts.
pub fn synthesize(skeleton: &Skeleton, poses: &[Pose], fps: u16) -> Result<MotionSequence> {
    let n = skeleton.joint_count();
    if n != 22 {
        return Err(Error::InvalidSkeleton(format!("pose synthesis needs the 22-joint layout, got {n}")));
    }
    let t = poses.len();
    if t < 2 {
        return Err(Error::BadArgument("pose synthesis needs at least two frames".into()));
    }
    let mut root = Array2::zeros((t, 3));
    let mut root_rot = Array2::zeros((t, 6));
    let mut local = Array3::zeros((t, n - 1, 6));
    for (f, p) in poses.iter().enumerate() {
        for c in 0..3 {
            root[[f, c]] = p.root[c];
        }
        let r6 = matrix_to_rot6d(&ry(p.yaw))?;
        for k in 0..6 {
            root_rot[[f, k]] = r6[k];
        }
        let mut rots = vec![Matrix3::identity(); n];
        rots[L_HIP] = rx(-p.hip_swing[0]);
        rots[R_HIP] = rx(-p.hip_swing[1]);
        rots[L_KNEE] = rx(p.knee[0]);
        rots[R_KNEE] = rx(p.knee[1]);
        rots[SPINE1] = rx(p.lean);
        rots[L_SHOULDER] = ry(-p.arm_forward[0]) * rz(p.arm_raise[0]);
        rots[R_SHOULDER] = ry(p.arm_forward[1]) * rz(-p.arm_raise[1]);
        rots[L_ELBOW] = ry(-p.elbow[0]);
        rots[R_ELBOW] = ry(p.elbow[1]);
        for j in 1..n {
            let r6 = matrix_to_rot6d(&rots[j])?;
            for k in 0..6 {
                local[[f, j - 1, k]] = r6[k];
            }
        }
    }
    let pos = forward_kinematics(skeleton, root.view(), local.view(), root_rot.view())?;
    let contacts = detect_foot_contacts(pos.view(), skeleton, DEFAULT_CONTACT_THRESHOLD)?;
    MotionSequence::new(fps, pos.mapv(|v| v as f32), local.mapv(|v| v as f32), contacts)
}

/// Adds a walking gait to a pose: legs swing with the given phase and amplitude.
pub fn apply_gait(pose: &mut Pose, phase: f64, amplitude: f64) {
    let s = phase.sin();
    pose.hip_swing = [amplitude * s, -amplitude * s];
    pose.knee = [amplitude * (phase + 0.5).sin().max(0.0), amplitude * (-(phase + 0.5).sin()).max(0.0)];
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rest_pose_matches_skeleton() {
        let sk = Skeleton::toy22();
        let poses = vec![Pose::standing(0.0, 0.0, 0.0, &sk); 3];
        let m = synthesize(&sk, &poses, 30).unwrap();
        // standing still: every foot in contact
        assert!(m.contacts().iter().all(|&c| c == 1.0));
        let toe_y = m.positions()[[0, 10, 1]];
        assert!(toe_y.abs() < 1e-6, "toe height {toe_y}");
    }

    #[test]
    fn arm_raise_lifts_the_wrist() {
        let sk = Skeleton::toy22();
        let mut p = Pose::standing(0.0, 0.0, 0.0, &sk);
        let rest = synthesize(&sk, &[p, p], 30).unwrap();
        p.arm_raise = [1.2, 0.0];
        let up = synthesize(&sk, &[p, p], 30).unwrap();
        assert!(up.positions()[[0, 20, 1]] > rest.positions()[[0, 20, 1]] + 0.3);
        assert_eq!(up.positions()[[0, 21, 1]], rest.positions()[[0, 21, 1]]);
    }

    #[test]
    fn forward_swing_moves_the_foot_forward() {
        let sk = Skeleton::toy22();
        let mut p = Pose::standing(0.0, 0.0, 0.0, &sk);
        p.hip_swing = [0.5, 0.0];
        let m = synthesize(&sk, &[p, p], 30).unwrap();
        assert!(m.positions()[[0, 7, 2]] > 0.2);
    }

    #[test]
    fn yaw_turns_the_facing() {
        let sk = Skeleton::toy22();
        let p = Pose::standing(0.0, 0.0, std::f64::consts::FRAC_PI_2, &sk);
        let m = synthesize(&sk, &[p, p], 30).unwrap();
        // toes point along +x after a quarter turn
        assert!(m.positions()[[0, 10, 0]] > 0.1);
        assert_eq!(p.heading().0, 1.0);
    }
}

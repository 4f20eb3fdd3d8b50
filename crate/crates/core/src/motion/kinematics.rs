use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, Array3, ArrayView2, ArrayView3};

use super::rotation::{rot6d_to_matrix, Rot6d};
use super::skeleton::Skeleton;
use crate::{Error, Result};

/// Default foot speed threshold in meters/frame; contact holds while the
/// squared per-frame speed stays below `0.002` m²/frame².
pub const DEFAULT_CONTACT_THRESHOLD: f64 = 0.044_721_359_549_995_8;

fn row6(view: ndarray::ArrayView1<f64>) -> Rot6d {
    [view[0], view[1], view[2], view[3], view[4], view[5]]
}

/// Global joint positions from root translation, root orientation and the
/// local rotations of the non-root joints.
pub fn forward_kinematics(
    skeleton: &Skeleton,
    root_positions: ArrayView2<f64>,
    rotations6d: ArrayView3<f64>,
    root_rotations6d: ArrayView2<f64>,
) -> Result<Array3<f64>> {
    let n = skeleton.joint_count();
    let t = root_positions.nrows();
    if root_positions.ncols() != 3 {
        return Err(Error::shape(format!("root positions {:?}", root_positions.dim())));
    }
    if rotations6d.dim() != (t, n - 1, 6) {
        return Err(Error::shape(format!(
            "local rotations {:?}, expected ({t}, {}, 6)",
            rotations6d.dim(),
            n - 1
        )));
    }
    if root_rotations6d.dim() != (t, 6) {
        return Err(Error::shape(format!("root rotations {:?}", root_rotations6d.dim())));
    }

    let mut out = Array3::zeros((t, n, 3));
    let mut global = vec![Matrix3::identity(); n];
    let mut pos = vec![Vector3::zeros(); n];
    for f in 0..t {
        global[0] = rot6d_to_matrix(&row6(root_rotations6d.row(f)))?;
        pos[0] = Vector3::new(root_positions[[f, 0]], root_positions[[f, 1]], root_positions[[f, 2]]);
        for (j, p) in skeleton.bones() {
            let local = rot6d_to_matrix(&row6(rotations6d.slice(ndarray::s![f, j - 1, ..])))?;
            let off = skeleton.offset(j);
            pos[j] = pos[p] + global[p] * Vector3::new(off[0], off[1], off[2]);
            global[j] = global[p] * local;
        }
        for j in 0..n {
            for c in 0..3 {
                out[[f, j, c]] = pos[j][c];
            }
        }
        // the root keeps the input translation bit-for-bit
        for c in 0..3 {
            out[[f, 0, c]] = root_positions[[f, c]];
        }
    }
    Ok(out)
}

/// Binary contact flags for the skeleton's four foot joints.
///
/// A foot is in contact at frame `t ≥ 1` when its squared displacement since
/// frame `t-1` is below `threshold²`; frame 0 copies frame 1.
pub fn detect_foot_contacts(
    positions: ArrayView3<f64>,
    skeleton: &Skeleton,
    threshold: f64,
) -> Result<Array2<f32>> {
    let (t, n, c) = positions.dim();
    if n != skeleton.joint_count() || c != 3 {
        return Err(Error::shape(format!(
            "positions {:?} for a {}-joint skeleton",
            positions.dim(),
            skeleton.joint_count()
        )));
    }
    if t < 2 {
        return Err(Error::shape("contact detection needs at least two frames"));
    }
    let limit = threshold * threshold;
    let mut contacts = Array2::zeros((t, 4));
    for f in 1..t {
        for (k, &j) in skeleton.foot_joints().iter().enumerate() {
            let sq: f64 = (0..3)
                .map(|a| {
                    let d = positions[[f, j, a]] - positions[[f - 1, j, a]];
                    d * d
                })
                .sum();
            contacts[[f, k]] = if sq < limit { 1.0 } else { 0.0 };
        }
    }
    for k in 0..4 {
        contacts[[0, k]] = contacts[[1, k]];
    }
    Ok(contacts)
}

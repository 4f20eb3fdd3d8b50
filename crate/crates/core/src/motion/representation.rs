use std::collections::BTreeMap;
use std::ops::Range;

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_FPS: u16 = 30;

/// Channels per frame for `joints` joints: positions, velocities, 6D
/// rotations of the non-root joints and four contact flags.
pub fn representation_width(joints: usize) -> usize {
    3 * joints + 3 * joints + 6 * (joints - 1) + 4
}

/// Column ranges of the flat per-frame representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelLayout {
    pub joints: usize,
}

impl ChannelLayout {
    pub fn new(joints: usize) -> Self {
        Self { joints }
    }

    pub fn width(&self) -> usize {
        representation_width(self.joints)
    }

    pub fn positions(&self) -> Range<usize> {
        0..3 * self.joints
    }

    pub fn velocities(&self) -> Range<usize> {
        3 * self.joints..6 * self.joints
    }

    pub fn rotations(&self) -> Range<usize> {
        6 * self.joints..6 * self.joints + 6 * (self.joints - 1)
    }

    pub fn contacts(&self) -> Range<usize> {
        let start = 12 * self.joints - 6;
        start..start + 4
    }

    /// Infers the joint count from a representation width.
    pub fn from_width(width: usize) -> Result<Self> {
        if (width + 2) % 12 != 0 || width < 22 {
            return Err(Error::shape(format!("{width} is not a valid representation width")));
        }
        Ok(Self::new((width + 2) / 12))
    }
}

fn backward_difference(positions: ArrayView3<f32>) -> Array3<f32> {
    let mut v = Array3::zeros(positions.raw_dim());
    for t in 1..positions.dim().0 {
        let cur = positions.slice(s![t, .., ..]);
        let prev = positions.slice(s![t - 1, .., ..]);
        v.slice_mut(s![t, .., ..]).assign(&(&cur - &prev));
    }
    v
}

/// Flattens per-joint arrays into the `T × width` representation. Velocity
/// channels are derived from the positions.
pub fn build_representation(
    positions: ArrayView3<f32>,
    rotations6d: ArrayView3<f32>,
    contacts: ArrayView2<f32>,
) -> Result<Array2<f32>> {
    let (t, n, c) = positions.dim();
    if c != 3 || n < 2 {
        return Err(Error::shape(format!("positions {:?}", positions.dim())));
    }
    if rotations6d.dim() != (t, n - 1, 6) {
        return Err(Error::shape(format!(
            "rotations {:?}, expected ({t}, {}, 6)",
            rotations6d.dim(),
            n - 1
        )));
    }
    if contacts.dim() != (t, 4) {
        return Err(Error::shape(format!("contacts {:?}, expected ({t}, 4)", contacts.dim())));
    }
    let layout = ChannelLayout::new(n);
    let velocities = backward_difference(positions);
    let mut flat = Array2::zeros((t, layout.width()));
    for f in 0..t {
        let mut row = flat.row_mut(f);
        for j in 0..n {
            for a in 0..3 {
                row[3 * j + a] = positions[[f, j, a]];
                row[3 * n + 3 * j + a] = velocities[[f, j, a]];
            }
        }
        let r0 = layout.rotations().start;
        for j in 0..n - 1 {
            for k in 0..6 {
                row[r0 + 6 * j + k] = rotations6d[[f, j, k]];
            }
        }
        let c0 = layout.contacts().start;
        for k in 0..4 {
            row[c0 + k] = contacts[[f, k]];
        }
    }
    Ok(flat)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitRepresentation {
    pub positions: Array3<f32>,
    pub velocities: Array3<f32>,
    pub rotations6d: Array3<f32>,
    pub contacts: Array2<f32>,
}

/// Inverse of [`build_representation`]: returns the stored channels as-is.
pub fn split_representation(flat: ArrayView2<f32>, joints: usize) -> Result<SplitRepresentation> {
    let layout = ChannelLayout::new(joints);
    let (t, w) = flat.dim();
    if joints < 2 || w != layout.width() {
        return Err(Error::shape(format!(
            "width {w} does not match {joints} joints (expected {})",
            layout.width()
        )));
    }
    let positions = flat
        .slice(s![.., layout.positions()])
        .to_owned()
        .into_shape_with_order((t, joints, 3))
        .expect("contiguous");
    let velocities = flat
        .slice(s![.., layout.velocities()])
        .to_owned()
        .into_shape_with_order((t, joints, 3))
        .expect("contiguous");
    let rotations6d = flat
        .slice(s![.., layout.rotations()])
        .to_owned()
        .into_shape_with_order((t, joints - 1, 6))
        .expect("contiguous");
    let contacts = flat.slice(s![.., layout.contacts()]).to_owned();
    Ok(SplitRepresentation {
        positions,
        velocities,
        rotations6d,
        contacts,
    })
}

/// One person's motion. Velocities are always the backward difference of
/// the positions (zero at frame 0) and contacts are exactly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    fps: u16,
    positions: Array3<f32>,
    velocities: Array3<f32>,
    rotations6d: Array3<f32>,
    contacts: Array2<f32>,
}

impl MotionSequence {
    pub fn new(
        fps: u16,
        positions: Array3<f32>,
        rotations6d: Array3<f32>,
        contacts: Array2<f32>,
    ) -> Result<Self> {
        let (t, n, c) = positions.dim();
        if t == 0 || n < 2 || c != 3 {
            return Err(Error::shape(format!("positions {:?}", positions.dim())));
        }
        if rotations6d.dim() != (t, n - 1, 6) {
            return Err(Error::shape(format!("rotations {:?}", rotations6d.dim())));
        }
        if contacts.dim() != (t, 4) {
            return Err(Error::shape(format!("contacts {:?}", contacts.dim())));
        }
        if contacts.iter().any(|&x| x != 0.0 && x != 1.0) {
            return Err(Error::BadArgument("contact flags must be 0 or 1".into()));
        }
        if fps == 0 {
            return Err(Error::BadArgument("fps must be positive".into()));
        }
        let velocities = backward_difference(positions.view());
        Ok(Self {
            fps,
            positions,
            velocities,
            rotations6d,
            contacts,
        })
    }

    /// Builds a sequence from representation rows. Stored velocities are
    /// ignored (recomputed from positions) and contacts are thresholded at 0.5.
    pub fn from_representation(flat: ArrayView2<f32>, joints: usize, fps: u16) -> Result<Self> {
        let parts = split_representation(flat, joints)?;
        let contacts = parts.contacts.mapv(|c| if c >= 0.5 { 1.0 } else { 0.0 });
        Self::new(fps, parts.positions, parts.rotations6d, contacts)
    }

    pub fn to_representation(&self) -> Array2<f32> {
        build_representation(self.positions.view(), self.rotations6d.view(), self.contacts.view())
            .expect("sequence invariants guarantee consistent shapes")
    }

    pub fn frames(&self) -> usize {
        self.positions.dim().0
    }

    pub fn joint_count(&self) -> usize {
        self.positions.dim().1
    }

    pub fn fps(&self) -> u16 {
        self.fps
    }

    pub fn positions(&self) -> &Array3<f32> {
        &self.positions
    }

    pub fn velocities(&self) -> &Array3<f32> {
        &self.velocities
    }

    pub fn rotations6d(&self) -> &Array3<f32> {
        &self.rotations6d
    }

    pub fn contacts(&self) -> &Array2<f32> {
        &self.contacts
    }

    pub fn positions_f64(&self) -> Array3<f64> {
        self.positions.mapv(f64::from)
    }

    /// Frames `start..start + len`.
    pub fn crop(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.frames() {
            return Err(Error::OutOfRange(format!(
                "crop {start}+{len} of {} frames",
                self.frames()
            )));
        }
        Self::new(
            self.fps,
            self.positions.slice(s![start..start + len, .., ..]).to_owned(),
            self.rotations6d.slice(s![start..start + len, .., ..]).to_owned(),
            self.contacts.slice(s![start..start + len, ..]).to_owned(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Real,
    SyntheticRaw,
    SyntheticFiltered,
}

/// Two people moving together plus the text that describes them.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionSample {
    pub agents: [MotionSequence; 2],
    pub captions: Vec<String>,
    pub provenance: Provenance,
    pub metadata: BTreeMap<String, String>,
}

impl InteractionSample {
    pub fn new(
        agents: [MotionSequence; 2],
        captions: Vec<String>,
        provenance: Provenance,
    ) -> Result<Self> {
        let [a, b] = &agents;
        if a.frames() != b.frames() || a.joint_count() != b.joint_count() || a.fps() != b.fps() {
            return Err(Error::shape(format!(
                "agents differ: {}x{}@{} vs {}x{}@{}",
                a.frames(),
                a.joint_count(),
                a.fps(),
                b.frames(),
                b.joint_count(),
                b.fps()
            )));
        }
        if captions.is_empty() || captions.iter().all(|c| c.trim().is_empty()) {
            return Err(Error::BadArgument("an interaction needs at least one caption".into()));
        }
        Ok(Self {
            agents,
            captions,
            provenance,
            metadata: BTreeMap::new(),
        })
    }

    pub fn frames(&self) -> usize {
        self.agents[0].frames()
    }

    pub fn joint_count(&self) -> usize {
        self.agents[0].joint_count()
    }

    pub fn fps(&self) -> u16 {
        self.agents[0].fps()
    }

    pub fn caption(&self) -> &str {
        &self.captions[0]
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }
}

/// `out[t][i][j]` = distance between joint `i` of `a` and joint `j` of `b` at frame `t`.
pub fn joint_pair_distances(a: &MotionSequence, b: &MotionSequence) -> Result<Array3<f64>> {
    if a.frames() != b.frames() || a.joint_count() != b.joint_count() {
        return Err(Error::shape("agents must share frame and joint counts"));
    }
    let pa = a.positions_f64();
    let pb = b.positions_f64();
    Ok(pair_distances(pa.view(), pb.view()))
}

pub(crate) fn pair_distances(pa: ArrayView3<f64>, pb: ArrayView3<f64>) -> Array3<f64> {
    let (t, n, _) = pa.dim();
    let m = pb.dim().1;
    Array3::from_shape_fn((t, n, m), |(f, i, j)| {
        let dx = pa[[f, i, 0]] - pb[[f, j, 0]];
        let dy = pa[[f, i, 1]] - pb[[f, j, 1]];
        let dz = pa[[f, i, 2]] - pb[[f, j, 2]];
        (dx * dx + dy * dy + dz * dz).sqrt()
    })
}

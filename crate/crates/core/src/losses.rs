//! Training objective.
//!
//! Every term is built from tape operations so gradients come for free.
//! Geometric terms read the position and contact channels of physical-unit
//! representations; the base term works in whatever space it is given
//! (normalised, during training).

use serde::{Deserialize, Serialize};

use crate::motion::{ChannelLayout, Skeleton};
use crate::tape::{Mat, Tape, Var};
use crate::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 0.1;
const NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub base: f64,
    pub vel: f64,
    pub foot: f64,
    pub bone: f64,
    pub rel_orient: f64,
    pub ada_interact: f64,
    pub epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            base: 1.0,
            vel: 1.0,
            foot: 1.0,
            bone: 1.0,
            rel_orient: 1.0,
            ada_interact: 1.0,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl LossWeights {
    pub fn only_base() -> Self {
        Self {
            base: 1.0,
            vel: 0.0,
            foot: 0.0,
            bone: 0.0,
            rel_orient: 0.0,
            ada_interact: 0.0,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ws = [self.base, self.vel, self.foot, self.bone, self.rel_orient, self.ada_interact];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::BadArgument(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// How the two agents are supervised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossMode {
    #[default]
    Interaction,
    /// Agent 1 is given; only agent 2 is reconstructed and the geometric
    /// terms see the ground-truth agent 1.
    Reaction,
}

pub const TERM_NAMES: [&str; 6] = ["base", "vel", "foot", "bone", "rel_orient", "ada_interact"];

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    /// `(name, raw value, weighted contribution)` in [`TERM_NAMES`] order.
    pub terms: Vec<(&'static str, f64, f64)>,
    pub total: f64,
}

impl LossBreakdown {
    pub fn raw(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.0 == name).map(|t| t.1)
    }
}

/// Constant selection matrices for one skeleton.
#[derive(Debug, Clone)]
pub struct LossKit {
    layout: ChannelLayout,
    joints: usize,
    /// `3N × 12`: xyz of the four foot joints.
    foot_select: Mat,
    /// `12 × 4`: sums xyz groups.
    foot_group: Mat,
    /// `3N × 3B`: child minus parent per bone.
    bone_diff: Mat,
    /// `3B × B`.
    bone_group: Mat,
    /// `3N × 2`: horizontal facing direction from the hips.
    facing: Mat,
    /// `3N × N²` per axis: joint `i` of agent a placed at column `i·N + j`.
    pair_left: [Mat; 3],
    /// Same for agent b joint `j`.
    pair_right: [Mat; 3],
}

impl LossKit {
    pub fn new(skeleton: &Skeleton) -> Self {
        let n = skeleton.joint_count();
        let feet = skeleton.foot_joints();
        let mut foot_select = Mat::zeros((3 * n, 12));
        let mut foot_group = Mat::zeros((12, 4));
        for (k, &j) in feet.iter().enumerate() {
            for a in 0..3 {
                foot_select[[3 * j + a, 3 * k + a]] = 1.0;
                foot_group[[3 * k + a, k]] = 1.0;
            }
        }
        let bones: Vec<(usize, usize)> = skeleton.bones().collect();
        let nb = bones.len();
        let mut bone_diff = Mat::zeros((3 * n, 3 * nb));
        let mut bone_group = Mat::zeros((3 * nb, nb));
        for (b, &(child, parent)) in bones.iter().enumerate() {
            for a in 0..3 {
                bone_diff[[3 * child + a, 3 * b + a]] += 1.0;
                bone_diff[[3 * parent + a, 3 * b + a]] -= 1.0;
                bone_group[[3 * b + a, b]] = 1.0;
            }
        }
        // across = left hip - right hip; forward (x, z) = (-across_z, across_x)
        let [hl, hr] = skeleton.hip_joints();
        let mut facing = Mat::zeros((3 * n, 2));
        facing[[3 * hl + 2, 0]] = -1.0;
        facing[[3 * hr + 2, 0]] = 1.0;
        facing[[3 * hl, 1]] = 1.0;
        facing[[3 * hr, 1]] = -1.0;
        let pair = |left: bool| -> [Mat; 3] {
            std::array::from_fn(|a| {
                let mut m = Mat::zeros((3 * n, n * n));
                for i in 0..n {
                    for j in 0..n {
                        let joint = if left { i } else { j };
                        m[[3 * joint + a, i * n + j]] = 1.0;
                    }
                }
                m
            })
        };
        Self {
            layout: ChannelLayout::new(n),
            joints: n,
            foot_select,
            foot_group,
            bone_diff,
            bone_group,
            facing,
            pair_left: pair(true),
            pair_right: pair(false),
        }
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    fn check(&self, x: Var<'_>) -> Result<()> {
        if x.shape().1 != self.layout.width() {
            return Err(Error::shape(format!(
                "representation width {} != {}",
                x.shape().1,
                self.layout.width()
            )));
        }
        Ok(())
    }

    fn positions<'t>(&self, x: Var<'t>) -> Var<'t> {
        x.slice_cols(0, 3 * self.joints)
    }

    /// Frame-difference velocities with a zero first row (`T × 3N`).
    fn velocities<'t>(&self, p: Var<'t>) -> Var<'t> {
        let t = p.shape().0;
        let mut d = Mat::zeros((t, t));
        for f in 1..t {
            d[[f, f]] = 1.0;
            d[[f, f - 1]] = -1.0;
        }
        p.tape().constant(d).matmul(p)
    }

    /// Mean squared error of frame differences of positions.
    pub fn velocity<'t>(&self, x0: Var<'t>, xh: Var<'t>) -> Result<Var<'t>> {
        self.check(x0)?;
        check_pair(x0, xh)?;
        let t = x0.shape().0;
        if t < 2 {
            return Ok(x0.tape().scalar(0.0));
        }
        let v0 = self.velocities(self.positions(x0)).slice_rows(1, t - 1);
        let vh = self.velocities(self.positions(xh)).slice_rows(1, t - 1);
        Ok(vh.sub(v0).square().mean())
    }

    /// `mean_{t,k} c_gt[t,k] · |v̂_k(t) - v_k(t)|²` over the four foot joints.
    pub fn foot_contact<'t>(&self, x0: Var<'t>, xh: Var<'t>) -> Result<Var<'t>> {
        self.check(x0)?;
        check_pair(x0, xh)?;
        let tape = x0.tape();
        let c0 = self.layout.contacts().start;
        let contacts = x0.value().slice(ndarray::s![.., c0..c0 + 4]).mapv(|c| if c >= 0.5 { 1.0 } else { 0.0 });
        let vh = self.velocities(self.positions(xh)).sub(self.velocities(self.positions(x0)));
        let speed2 = vh
            .matmul(tape.constant(self.foot_select.clone()))
            .square()
            .matmul(tape.constant(self.foot_group.clone()));
        Ok(speed2.mul(tape.constant(contacts)).mean())
    }

    /// Per-frame bone-length squared error, summed over bones, averaged over frames.
    pub fn bone_length<'t>(&self, x0: Var<'t>, xh: Var<'t>) -> Result<Var<'t>> {
        self.check(x0)?;
        check_pair(x0, xh)?;
        let tape = x0.tape();
        let lengths = |x: Var<'t>| {
            self.positions(x)
                .matmul(tape.constant(self.bone_diff.clone()))
                .square()
                .matmul(tape.constant(self.bone_group.clone()))
                .sqrt()
        };
        let t = x0.shape().0 as f64;
        Ok(lengths(xh).sub(lengths(x0)).square().sum().scale(1.0 / t))
    }

    /// `(cos, sin)` of agent b's facing relative to agent a's, each `T × 1`.
    fn relative_facing<'t>(&self, a: Var<'t>, b: Var<'t>) -> (Var<'t>, Var<'t>) {
        let tape = a.tape();
        let m = tape.constant(self.facing.clone());
        let fa = self.positions(a).matmul(m);
        let fb = self.positions(b).matmul(m);
        let rot = tape.constant(ndarray::array![[0.0, -1.0], [1.0, 0.0]]);
        let ones = tape.constant(Mat::ones((2, 1)));
        let norm = |f: Var<'t>| f.square().matmul(ones).offset(NORM_EPS).sqrt();
        let denom = norm(fa).mul(norm(fb));
        let cos = fa.mul(fb).matmul(ones).div(denom);
        let sin = fa.mul(fb.matmul(rot)).matmul(ones).div(denom);
        (cos, sin)
    }

    /// Error between the relative yaw of the two agents, predicted vs ground
    /// truth, as the mean squared difference of the 6D encodings of the
    /// relative yaw rotation.
    pub fn relative_orientation<'t>(&self, x0: [Var<'t>; 2], xh: [Var<'t>; 2]) -> Result<Var<'t>> {
        for i in 0..2 {
            self.check(x0[i])?;
            check_pair(x0[i], xh[i])?;
        }
        let (c0, s0) = self.relative_facing(x0[0], x0[1]);
        let (ch, sh) = self.relative_facing(xh[0], xh[1]);
        let err = ch.sub(c0).square().add(sh.sub(s0).square());
        Ok(err.mean().scale(1.0 / 6.0))
    }

    /// `T × N²` inter-agent joint distances, column `i·N + j`.
    fn pair_distances<'t>(&self, a: Var<'t>, b: Var<'t>) -> Var<'t> {
        let tape = a.tape();
        let pa = self.positions(a);
        let pb = self.positions(b);
        let mut sq: Option<Var<'t>> = None;
        for axis in 0..3 {
            let d = pa
                .matmul(tape.constant(self.pair_left[axis].clone()))
                .sub(pb.matmul(tape.constant(self.pair_right[axis].clone())))
                .square();
            sq = Some(match sq {
                Some(s) => s.add(d),
                None => d,
            });
        }
        sq.expect("three axes").sqrt()
    }

    /// `1/(T N²) Σ_t Σ_ij |d_ij - d̂_ij| / (d_ij + ε)` with `d` from ground truth.
    pub fn adaptive_interaction<'t>(
        &self,
        x0: [Var<'t>; 2],
        xh: [Var<'t>; 2],
        epsilon: f64,
    ) -> Result<Var<'t>> {
        if !(epsilon > 0.0) {
            return Err(Error::BadArgument(format!("epsilon must be positive, got {epsilon}")));
        }
        for i in 0..2 {
            self.check(x0[i])?;
            check_pair(x0[i], xh[i])?;
        }
        let tape = x0[0].tape();
        let d = self.pair_distances(x0[0], x0[1]);
        let dh = self.pair_distances(xh[0], xh[1]);
        let w = tape.constant(d.value().mapv(|v| 1.0 / (v + epsilon)));
        let (t, nn) = d.shape();
        Ok(dh.sub(d).abs().mul(w).sum().scale(1.0 / (t * nn) as f64))
    }
}

fn check_pair(a: Var<'_>, b: Var<'_>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean squared error over every element of the given agents.
pub fn base_reconstruction_graph<'t>(x0: &[Var<'t>], xh: &[Var<'t>]) -> Result<Var<'t>> {
    if x0.is_empty() || x0.len() != xh.len() {
        return Err(Error::shape("need matching non-empty agent lists"));
    }
    let mut total: Option<Var<'t>> = None;
    let mut count = 0usize;
    for (&a, &b) in x0.iter().zip(xh) {
        check_pair(a, b)?;
        let s = b.sub(a).square().sum();
        count += a.shape().0 * a.shape().1;
        total = Some(match total {
            Some(t) => t.add(s),
            None => s,
        });
    }
    Ok(total.expect("non-empty").scale(1.0 / count as f64))
}

/// Affine map from normalised to physical units: `x · std + mean`.
#[derive(Debug, Clone, PartialEq)]
pub struct Denormalizer {
    pub mean: Mat,
    pub std: Mat,
}

impl Denormalizer {
    pub fn identity(width: usize) -> Self {
        Self {
            mean: Mat::zeros((1, width)),
            std: Mat::ones((1, width)),
        }
    }

    pub fn apply<'t>(&self, x: Var<'t>) -> Var<'t> {
        let tape = x.tape();
        x.mul_row(tape.constant(self.std.clone())).add_row(tape.constant(self.mean.clone()))
    }
}

/// Inputs to [`total_loss_graph`] that are fixed for a training run.
pub struct LossContext<'a> {
    pub kit: &'a LossKit,
    pub weights: &'a LossWeights,
    pub denorm: &'a Denormalizer,
    pub mode: LossMode,
}

/// Weighted sum of all terms. `x0`, `xh` are in normalised units;
/// `frame_mask` keeps the listed frames (a valid prefix for padded input).
pub fn total_loss_graph<'t>(
    ctx: &LossContext<'_>,
    x0: [Var<'t>; 2],
    xh: [Var<'t>; 2],
    frame_mask: Option<&[bool]>,
) -> Result<(Var<'t>, Vec<(&'static str, Var<'t>)>)> {
    ctx.weights.validate()?;
    let (x0, xh) = match frame_mask {
        Some(mask) => {
            if mask.len() != x0[0].shape().0 {
                return Err(Error::shape("frame mask length"));
            }
            let rows: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
            if rows.is_empty() {
                return Err(Error::BadArgument("frame mask selects no frames".into()));
            }
            (x0.map(|v| v.gather_rows(&rows)), xh.map(|v| v.gather_rows(&rows)))
        }
        None => (x0, xh),
    };
    let reaction = ctx.mode == LossMode::Reaction;
    let base = if reaction {
        base_reconstruction_graph(&x0[1..], &xh[1..])?
    } else {
        base_reconstruction_graph(&x0, &xh)?
    };
    let p0 = x0.map(|v| ctx.denorm.apply(v));
    let mut ph = xh.map(|v| ctx.denorm.apply(v));
    if reaction {
        ph[0] = p0[0];
    }
    let kit = ctx.kit;
    let agents: &[usize] = if reaction { &[1] } else { &[0, 1] };
    let per_agent = |f: &dyn Fn(Var<'t>, Var<'t>) -> Result<Var<'t>>| -> Result<Var<'t>> {
        let mut acc: Option<Var<'t>> = None;
        for &a in agents {
            let v = f(p0[a], ph[a])?;
            acc = Some(match acc {
                Some(s) => s.add(v),
                None => v,
            });
        }
        Ok(acc.expect("at least one agent").scale(1.0 / agents.len() as f64))
    };
    let vel = per_agent(&|a, b| kit.velocity(a, b))?;
    let foot = per_agent(&|a, b| kit.foot_contact(a, b))?;
    let bone = per_agent(&|a, b| kit.bone_length(a, b))?;
    let rel = kit.relative_orientation(p0, ph)?;
    let ada = kit.adaptive_interaction(p0, ph, ctx.weights.epsilon)?;
    let w = ctx.weights;
    let terms = vec![
        ("base", base),
        ("vel", vel),
        ("foot", foot),
        ("bone", bone),
        ("rel_orient", rel),
        ("ada_interact", ada),
    ];
    let weights = [w.base, w.vel, w.foot, w.bone, w.rel_orient, w.ada_interact];
    let mut total = x0[0].tape().scalar(0.0);
    for (&(_, v), &wt) in terms.iter().zip(&weights) {
        if wt != 0.0 {
            total = total.add(v.scale(wt));
        }
    }
    Ok((total, terms))
}

/// Value-level total with a per-term breakdown.
pub fn total_loss(
    skeleton: &Skeleton,
    weights: &LossWeights,
    denorm: &Denormalizer,
    mode: LossMode,
    x0: [&Mat; 2],
    xh: [&Mat; 2],
    frame_mask: Option<&[bool]>,
) -> Result<LossBreakdown> {
    let kit = LossKit::new(skeleton);
    let ctx = LossContext {
        kit: &kit,
        weights,
        denorm,
        mode,
    };
    let tape = Tape::new();
    let a = x0.map(|m| tape.constant(m.clone()));
    let b = xh.map(|m| tape.constant(m.clone()));
    let (total, terms) = total_loss_graph(&ctx, a, b, frame_mask)?;
    breakdown(weights, total, &terms)
}

pub(crate) fn breakdown(weights: &LossWeights, total: Var<'_>, terms: &[(&'static str, Var<'_>)]) -> Result<LossBreakdown> {
    let ws = [weights.base, weights.vel, weights.foot, weights.bone, weights.rel_orient, weights.ada_interact];
    let mut out = Vec::with_capacity(terms.len());
    for (&(name, v), &w) in terms.iter().zip(&ws) {
        let raw = v.item();
        if !raw.is_finite() {
            return Err(Error::NonFiniteLoss(name.to_string()));
        }
        out.push((name, raw, if w != 0.0 { w * raw } else { 0.0 }));
    }
    let total = total.item();
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss("total".into()));
    }
    Ok(LossBreakdown { terms: out, total })
}

fn eval1(f: impl for<'t> Fn(&'t Tape) -> Result<Var<'t>>) -> Result<f64> {
    let tape = Tape::new();
    Ok(f(&tape)?.item())
}

/// Plain base reconstruction over both agents.
pub fn base_reconstruction(x0: [&Mat; 2], xh: [&Mat; 2]) -> Result<f64> {
    eval1(|t| {
        let a = x0.map(|m| t.constant(m.clone()));
        let b = xh.map(|m| t.constant(m.clone()));
        base_reconstruction_graph(&a, &b)
    })
}

pub fn velocity_loss(skeleton: &Skeleton, x0: &Mat, xh: &Mat) -> Result<f64> {
    let kit = LossKit::new(skeleton);
    eval1(|t| kit.velocity(t.constant(x0.clone()), t.constant(xh.clone())))
}

pub fn foot_contact_loss(skeleton: &Skeleton, x0: &Mat, xh: &Mat) -> Result<f64> {
    let kit = LossKit::new(skeleton);
    eval1(|t| kit.foot_contact(t.constant(x0.clone()), t.constant(xh.clone())))
}

pub fn bone_length_loss(skeleton: &Skeleton, x0: &Mat, xh: &Mat) -> Result<f64> {
    let kit = LossKit::new(skeleton);
    eval1(|t| kit.bone_length(t.constant(x0.clone()), t.constant(xh.clone())))
}

pub fn relative_orientation_loss(skeleton: &Skeleton, x0: [&Mat; 2], xh: [&Mat; 2]) -> Result<f64> {
    let kit = LossKit::new(skeleton);
    eval1(|t| kit.relative_orientation(x0.map(|m| t.constant(m.clone())), xh.map(|m| t.constant(m.clone()))))
}

/// Adaptive interaction loss on physical-unit representations.
pub fn adaptive_interaction_loss(
    skeleton: &Skeleton,
    x1: &Mat,
    x2: &Mat,
    x1_hat: &Mat,
    x2_hat: &Mat,
    epsilon: f64,
) -> Result<f64> {
    if x1.nrows() != x2.nrows() || x1.dim() != x1_hat.dim() || x2.dim() != x2_hat.dim() {
        return Err(Error::shape("all four motions must share T and width"));
    }
    let kit = LossKit::new(skeleton);
    eval1(|t| {
        kit.adaptive_interaction(
            [t.constant(x1.clone()), t.constant(x2.clone())],
            [t.constant(x1_hat.clone()), t.constant(x2_hat.clone())],
            epsilon,
        )
    })
}

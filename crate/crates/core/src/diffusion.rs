//! Forward noising, the training step and DDIM sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::losses::{breakdown, total_loss_graph, Denormalizer, LossBreakdown, LossContext, LossKit, LossMode, LossWeights};
use crate::motion::{ChannelLayout, InteractionSample, MotionSequence, Provenance};
use crate::net::{AgentOrder, Denoiser};
use crate::params::accumulate;
use crate::tape::{Mat, Tape};
use crate::text::TokenizedPrompt;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub steps: usize,
    /// `steps + 1` values; `alpha_bar[0] == 1`.
    pub alpha_bar: Vec<f64>,
    pub betas: Vec<f64>,
}

pub const COSINE_OFFSET: f64 = 0.008;

pub fn cosine_alpha_bar(t: f64, steps: usize, s: f64) -> f64 {
    let f = |t: f64| {
        let c = ((t / steps as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos();
        c * c
    };
    f(t) / f(0.0)
}

/// Cosine schedule: `alpha_bar(t) = f(t)/f(0)`, `f(t) = cos²(((t/steps + s)/(1 + s))·π/2)`.
pub fn cosine_schedule(steps: usize, s: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::BadArgument("schedule needs at least one step".into()));
    }
    if !(s > 0.0) {
        return Err(Error::BadArgument(format!("offset s must be positive, got {s}")));
    }
    let alpha_bar: Vec<f64> = (0..=steps).map(|t| cosine_alpha_bar(t as f64, steps, s)).collect();
    let betas = (0..steps)
        .map(|t| (1.0 - alpha_bar[t + 1] / alpha_bar[t]).min(0.999))
        .collect();
    Ok(NoiseSchedule {
        steps,
        alpha_bar,
        betas,
    })
}

impl NoiseSchedule {
    /// Timesteps visited by DDIM, descending, always ending at 0.
    pub fn ddim_timesteps(&self, ddim_steps: usize) -> Vec<usize> {
        let last = self.steps - 1;
        if ddim_steps <= 1 {
            return vec![last];
        }
        let mut ts: Vec<usize> = (0..ddim_steps).map(|i| i * last / (ddim_steps - 1)).collect();
        ts.dedup();
        ts.reverse();
        ts
    }
}

/// `sqrt(ab_t)·x0 + sqrt(1 - ab_t)·noise`.
pub fn q_sample(x0: &Mat, t: usize, noise: &Mat, schedule: &NoiseSchedule) -> Result<Mat> {
    if x0.dim() != noise.dim() {
        return Err(Error::shape(format!("x0 {:?} vs noise {:?}", x0.dim(), noise.dim())));
    }
    if t > schedule.steps {
        return Err(Error::OutOfRange(format!("timestep {t}")));
    }
    let ab = schedule.alpha_bar[t];
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(ndarray::Zip::from(x0).and(noise).map_collect(|&x, &n| a * x + b * n))
}

/// `uncond + w·(cond - uncond)`, exact at `w ∈ {0, 1}`.
pub fn cfg_combine(cond: &Mat, uncond: &Mat, w: f64) -> Result<Mat> {
    if cond.dim() != uncond.dim() {
        return Err(Error::shape(format!("{:?} vs {:?}", cond.dim(), uncond.dim())));
    }
    if w == 1.0 {
        return Ok(cond.clone());
    }
    if w == 0.0 {
        return Ok(uncond.clone());
    }
    Ok(ndarray::Zip::from(cond).and(uncond).map_collect(|&c, &u| u + w * (c - u)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub ddim_steps: usize,
    pub guidance_weight: f64,
    pub eta: f64,
    pub seed: u64,
    /// Clamp predicted clean samples to `±clamp` (normalised units).
    pub clamp: Option<f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            ddim_steps: 50,
            guidance_weight: 3.5,
            eta: 0.0,
            seed: 0,
            clamp: Some(6.0),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        if self.ddim_steps == 0 || self.ddim_steps > schedule.steps {
            return Err(Error::Config(format!(
                "ddim_steps {} not in [1, {}]",
                self.ddim_steps, schedule.steps
            )));
        }
        if !(self.eta >= 0.0) || !self.guidance_weight.is_finite() {
            return Err(Error::Config("eta must be >= 0 and guidance weight finite".into()));
        }
        Ok(())
    }
}

/// Anything that predicts clean pairs from noisy pairs.
pub trait PairDenoiser: Sync {
    fn predict(&self, x1: &Mat, x2: &Mat, t: usize, prompt: &TokenizedPrompt) -> Result<(Mat, Mat)>;
    /// Representation width of one agent.
    fn channels(&self) -> usize;
    fn text_width(&self) -> usize;
}

impl PairDenoiser for Denoiser {
    fn predict(&self, x1: &Mat, x2: &Mat, t: usize, prompt: &TokenizedPrompt) -> Result<(Mat, Mat)> {
        self.denoise(x1, x2, t, prompt)
    }

    fn channels(&self) -> usize {
        self.config().channel_width()
    }

    fn text_width(&self) -> usize {
        self.config().text_width
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

fn guided(
    model: &dyn PairDenoiser,
    x: &(Mat, Mat),
    t: usize,
    prompt: &TokenizedPrompt,
    null: &TokenizedPrompt,
    w: f64,
) -> Result<(Mat, Mat)> {
    if w == 1.0 {
        return model.predict(&x.0, &x.1, t, prompt);
    }
    if w == 0.0 {
        return model.predict(&x.0, &x.1, t, null);
    }
    let c = model.predict(&x.0, &x.1, t, prompt)?;
    let u = model.predict(&x.0, &x.1, t, null)?;
    Ok((cfg_combine(&c.0, &u.0, w)?, cfg_combine(&c.1, &u.1, w)?))
}

/// Overwrites selected channels of agent 1 after every step.
struct Inpaint<'a> {
    /// Clean condition rows for the constrained columns (`T × k`).
    values: &'a Mat,
    cols: &'a [usize],
    noised: bool,
}

impl Inpaint<'_> {
    fn apply(&self, x: &mut Mat, ab: f64, rng: &mut ChaCha8Rng) {
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        for f in 0..x.nrows() {
            for (k, &c) in self.cols.iter().enumerate() {
                let v = self.values[[f, k]];
                x[[f, c]] = if self.noised && ab < 1.0 {
                    let n: f64 = rng.sample(StandardNormal);
                    a * v + b * n
                } else {
                    v
                };
            }
        }
    }
}

fn ddim_loop(
    model: &dyn PairDenoiser,
    prompt: &TokenizedPrompt,
    frames: usize,
    sampler: &SamplerConfig,
    schedule: &NoiseSchedule,
    inpaint: Option<&Inpaint<'_>>,
) -> Result<(Mat, Mat)> {
    sampler.validate(schedule)?;
    let c = model.channels();
    let null = crate::text::null_prompt(model.text_width());
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
    let mut x = (gaussian(&mut rng, frames, c), gaussian(&mut rng, frames, c));
    let ts = schedule.ddim_timesteps(sampler.ddim_steps);
    if let Some(ip) = inpaint {
        ip.apply(&mut x.0, schedule.alpha_bar[ts[0]], &mut rng);
    }
    let clamp = |m: Mat| match sampler.clamp {
        Some(c) => m.mapv(|v| v.clamp(-c, c)),
        None => m,
    };
    for (i, &t) in ts.iter().enumerate() {
        let (p1, p2) = guided(model, &x, t, prompt, &null, sampler.guidance_weight)?;
        let x0 = (clamp(p1), clamp(p2));
        let Some(&t_prev) = ts.get(i + 1) else {
            x = x0;
            break;
        };
        let ab = schedule.alpha_bar[t];
        let ab_prev = schedule.alpha_bar[t_prev];
        let sigma = sampler.eta * ((1.0 - ab_prev) / (1.0 - ab)).sqrt() * (1.0 - ab / ab_prev).max(0.0).sqrt();
        let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
        let step = |xt: &Mat, x0: &Mat, rng: &mut ChaCha8Rng| -> Mat {
            let eps = (xt - &(x0 * ab.sqrt())) / (1.0 - ab).sqrt();
            let mut next = x0 * ab_prev.sqrt() + eps * dir;
            if sigma > 0.0 {
                next += &(gaussian(rng, xt.nrows(), xt.ncols()) * sigma);
            }
            next
        };
        let n1 = step(&x.0, &x0.0, &mut rng);
        let n2 = step(&x.1, &x0.1, &mut rng);
        x = (n1, n2);
        if let Some(ip) = inpaint {
            ip.apply(&mut x.0, ab_prev, &mut rng);
        }
    }
    if let Some(ip) = inpaint {
        ip.apply(&mut x.0, 1.0, &mut rng);
    }
    Ok(x)
}

/// DDIM sampling from seeded noise with classifier-free guidance. Returns
/// both agents in normalised units.
pub fn ddim_sample(
    model: &dyn PairDenoiser,
    prompt: &TokenizedPrompt,
    frames: usize,
    sampler: &SamplerConfig,
    schedule: &NoiseSchedule,
) -> Result<(Mat, Mat)> {
    ddim_loop(model, prompt, frames, sampler, schedule, None)
}

/// How agent 1's constrained channels are imposed during reaction sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionMode {
    /// The clean condition at every step (matches reaction training).
    #[default]
    Clean,
    /// The condition noised to the current level; clean after the last step.
    Noised,
}

/// Position and velocity columns of agent 1, which a reaction model keeps clean.
pub fn condition_columns(joints: usize) -> Vec<usize> {
    let l = ChannelLayout::new(joints);
    l.positions().chain(l.velocities()).collect()
}

/// Normalised condition values for [`condition_columns`].
pub fn condition_values(positions: &ndarray::Array3<f32>, denorm: &Denormalizer) -> Result<Mat> {
    let (t, n, _) = positions.dim();
    let cols = condition_columns(n);
    if denorm.mean.ncols() != ChannelLayout::new(n).width() {
        return Err(Error::shape("normalisation stats do not match the joint count"));
    }
    let mut raw = Mat::zeros((t, cols.len()));
    for f in 0..t {
        for j in 0..n {
            for a in 0..3 {
                let p = positions[[f, j, a]] as f64;
                raw[[f, 3 * j + a]] = p;
                let v = if f == 0 { 0.0 } else { p - positions[[f - 1, j, a]] as f64 };
                raw[[f, 3 * n + 3 * j + a]] = v;
            }
        }
    }
    for (k, &c) in cols.iter().enumerate() {
        let (m, s) = (denorm.mean[[0, c]], denorm.std[[0, c]]);
        raw.column_mut(k).mapv_inplace(|v| (v - m) / s);
    }
    Ok(raw)
}

/// Generates agent 2 for a given agent-1 track. Agent 1's position and
/// velocity channels are imposed at every step; its output positions are
/// the condition, bit-exactly.
#[allow(clippy::too_many_arguments)]
pub fn reaction_sample(
    model: &dyn PairDenoiser,
    condition: &ndarray::Array3<f32>,
    prompt: &TokenizedPrompt,
    sampler: &SamplerConfig,
    schedule: &NoiseSchedule,
    denorm: &Denormalizer,
    mode: ConditionMode,
    fps: u16,
) -> Result<InteractionSample> {
    let (t, n, c) = condition.dim();
    if c != 3 || ChannelLayout::new(n).width() != model.channels() {
        return Err(Error::shape(format!("condition {:?} for a {}-channel model", condition.dim(), model.channels())));
    }
    if condition.iter().any(|v| !v.is_finite()) {
        return Err(Error::BadArgument("condition positions must be finite".into()));
    }
    let values = condition_values(condition, denorm)?;
    let cols = condition_columns(n);
    let ip = Inpaint {
        values: &values,
        cols: &cols,
        noised: mode == ConditionMode::Noised,
    };
    let (x1, x2) = ddim_loop(model, prompt, t, sampler, schedule, Some(&ip))?;
    let mut a1 = to_sequence(&x1, denorm, n, fps)?;
    a1 = MotionSequence::new(fps, condition.clone(), a1.rotations6d().clone(), a1.contacts().clone())?;
    let a2 = to_sequence(&x2, denorm, n, fps)?;
    InteractionSample::new([a1, a2], vec![prompt.text.clone()], Provenance::SyntheticRaw)
}

/// Normalised representation rows to a motion sequence in physical units.
pub fn to_sequence(x: &Mat, denorm: &Denormalizer, joints: usize, fps: u16) -> Result<MotionSequence> {
    let phys = x * &denorm.std + &denorm.mean;
    MotionSequence::from_representation(phys.mapv(|v| v as f32).view(), joints, fps)
}

/// [`ddim_sample`] followed by conversion to an interaction.
pub fn sample_interaction(
    model: &dyn PairDenoiser,
    prompt: &TokenizedPrompt,
    frames: usize,
    sampler: &SamplerConfig,
    schedule: &NoiseSchedule,
    denorm: &Denormalizer,
    fps: u16,
) -> Result<InteractionSample> {
    let (x1, x2) = ddim_sample(model, prompt, frames, sampler, schedule)?;
    let joints = ChannelLayout::from_width(model.channels())?.joints;
    InteractionSample::new(
        [to_sequence(&x1, denorm, joints, fps)?, to_sequence(&x2, denorm, joints, fps)?],
        vec![prompt.text.clone()],
        Provenance::SyntheticRaw,
    )
}

/// One training pair in normalised units with an embedded prompt.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub x1: Mat,
    pub x2: Mat,
    pub prompt: TokenizedPrompt,
}

/// Random choices for one item of a training step.
#[derive(Debug, Clone)]
pub struct Draw {
    pub t: usize,
    pub noise1: Mat,
    pub noise2: Mat,
    pub drop_text: bool,
}

pub struct TrainContext<'a> {
    pub schedule: &'a NoiseSchedule,
    pub kit: &'a LossKit,
    pub weights: &'a LossWeights,
    pub denorm: &'a Denormalizer,
    pub p_uncond: f64,
    pub mode: LossMode,
}

pub struct StepOutput {
    /// Per-term values averaged over the batch.
    pub losses: LossBreakdown,
    /// Gradient of the batch-mean total loss, in parameter-store order.
    pub grads: Vec<Mat>,
}

pub fn draw_for(item: &TrainItem, ctx: &TrainContext<'_>, rng: &mut ChaCha8Rng) -> Draw {
    let t = rng.random_range(0..ctx.schedule.steps);
    let (r, c) = item.x1.dim();
    let noise1 = gaussian(rng, r, c);
    let noise2 = gaussian(rng, r, c);
    let drop_text = rng.random::<f64>() < ctx.p_uncond;
    Draw {
        t,
        noise1,
        noise2,
        drop_text,
    }
}

/// Loss and parameter gradients for one item under fixed random choices.
pub fn item_loss(
    model: &Denoiser,
    item: &TrainItem,
    draw: &Draw,
    ctx: &TrainContext<'_>,
) -> Result<(LossBreakdown, Vec<Mat>)> {
    let tape = Tape::new();
    let p = model.params().bind(&tape, true);
    let mut x1t = q_sample(&item.x1, draw.t, &draw.noise1, ctx.schedule)?;
    let x2t = q_sample(&item.x2, draw.t, &draw.noise2, ctx.schedule)?;
    if ctx.mode == LossMode::Reaction {
        for c in condition_columns(model.config().joints) {
            x1t.column_mut(c).assign(&item.x1.column(c));
        }
    }
    let null;
    let prompt = if draw.drop_text {
        null = crate::text::null_prompt(model.config().text_width);
        &null
    } else {
        &item.prompt
    };
    let (h1, h2) = model.forward(
        &tape,
        &p,
        tape.constant(x1t),
        tape.constant(x2t),
        draw.t,
        prompt,
        AgentOrder::FirstThenSecond,
    )?;
    let lctx = LossContext {
        kit: ctx.kit,
        weights: ctx.weights,
        denorm: ctx.denorm,
        mode: ctx.mode,
    };
    let x0 = [tape.constant(item.x1.clone()), tape.constant(item.x2.clone())];
    let (total, terms) = total_loss_graph(&lctx, x0, [h1, h2], None)?;
    let report = breakdown(ctx.weights, total, &terms)?;
    let grads = tape.backward(total);
    Ok((report, p.grads(&grads)))
}

/// Samples a timestep, noise and text-drop per item, runs the denoiser and
/// returns batch-mean losses and gradients. Items run in parallel; results
/// are combined in batch order so the output is deterministic.
pub fn train_step(
    model: &Denoiser,
    batch: &[TrainItem],
    ctx: &TrainContext<'_>,
    rng: &mut ChaCha8Rng,
) -> Result<StepOutput> {
    if batch.is_empty() {
        return Err(Error::BadArgument("empty batch".into()));
    }
    let draws: Vec<Draw> = batch.iter().map(|it| draw_for(it, ctx, rng)).collect();
    let results: Vec<Result<(LossBreakdown, Vec<Mat>)>> = batch
        .par_iter()
        .zip(draws.par_iter())
        .map(|(it, d)| item_loss(model, it, d, ctx))
        .collect();
    let scale = 1.0 / batch.len() as f64;
    let mut grads = Vec::new();
    let mut terms: Vec<(&'static str, f64, f64)> = Vec::new();
    let mut total = 0.0;
    for r in results {
        let (b, g) = r?;
        accumulate(&mut grads, g);
        if terms.is_empty() {
            terms = b.terms.iter().map(|&(n, _, _)| (n, 0.0, 0.0)).collect();
        }
        for (acc, t) in terms.iter_mut().zip(&b.terms) {
            acc.1 += t.1 * scale;
            acc.2 += t.2 * scale;
        }
        total += b.total * scale;
    }
    grads.iter_mut().for_each(|g| *g *= scale);
    Ok(StepOutput {
        losses: LossBreakdown { terms, total },
        grads,
    })
}

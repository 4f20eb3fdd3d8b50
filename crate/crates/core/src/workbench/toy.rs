//! Procedural two-person toy corpus with a deterministic caption grammar.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{DatasetManifest, Split};
use crate::motion::procedural::{apply_gait, synthesize, Pose};
use crate::motion::{InteractionSample, Provenance, Skeleton, DEFAULT_FPS};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyClass {
    Approach,
    Circle,
    Mirror,
    PushRetreat,
}

impl ToyClass {
    pub const ALL: [ToyClass; 4] = [ToyClass::Approach, ToyClass::Circle, ToyClass::Mirror, ToyClass::PushRetreat];

    pub fn name(self) -> &'static str {
        match self {
            ToyClass::Approach => "approach",
            ToyClass::Circle => "circle",
            ToyClass::Mirror => "mirror",
            ToyClass::PushRetreat => "push_retreat",
        }
    }

    fn base_frames(self) -> f64 {
        match self {
            ToyClass::Approach => 40.0,
            ToyClass::Circle => 44.0,
            ToyClass::Mirror => 32.0,
            ToyClass::PushRetreat => 36.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Speed {
    Quick,
    Normal,
    Slow,
}

impl Speed {
    fn adverb(self) -> &'static str {
        match self {
            Speed::Quick => " quickly",
            Speed::Normal => "",
            Speed::Slow => " slowly and carefully",
        }
    }

    fn length_factor(self) -> f64 {
        match self {
            Speed::Quick => 0.7,
            Speed::Normal => 1.0,
            Speed::Slow => 1.4,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Speed::Quick => "quick",
            Speed::Normal => "normal",
            Speed::Slow => "slow",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub fps: u16,
    pub min_frames: usize,
    pub max_frames: usize,
    pub test_fraction: f64,
    pub heldout_fraction: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            fps: DEFAULT_FPS,
            min_frames: 24,
            max_frames: 64,
            test_fraction: 0.125,
            heldout_fraction: 0.125,
        }
    }
}

fn smooth(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

struct Scene {
    a: Vec<Pose>,
    b: Vec<Pose>,
    caption: String,
}

fn pick<'a>(rng: &mut ChaCha8Rng, options: &[&'a str]) -> &'a str {
    options[rng.random_range(0..options.len())]
}

fn stride_phase(distance: f64) -> f64 {
    2.0 * PI * distance / 0.9
}

fn scene(class: ToyClass, speed: Speed, left: bool, t: usize, rng: &mut ChaCha8Rng, sk: &Skeleton) -> Scene {
    let d: f64 = rng.random_range(1.6..2.4);
    let xa: f64 = rng.random_range(-0.15..0.15);
    let xb: f64 = rng.random_range(-0.15..0.15);
    let amp: f64 = rng.random_range(0.9..1.1);
    let side = if left { "left" } else { "right" };
    let adv = speed.adverb();
    let last = (t - 1) as f64;
    let mut a = Vec::with_capacity(t);
    let mut b = Vec::with_capacity(t);
    let caption;
    match class {
        ToyClass::Approach => {
            let travel = d - 0.7;
            let greet_both = left;
            for f in 0..t {
                let u = f as f64 / last;
                let s = travel * smooth(u);
                let mut pa = Pose::standing(xa, -d / 2.0 + s, 0.0, sk);
                apply_gait(&mut pa, stride_phase(s), 0.45 * amp * (1.0 - smooth((u - 0.85) / 0.15)));
                let mut pb = Pose::standing(xb, d / 2.0, PI, sk);
                let g = smooth((u - 0.5) / 0.3);
                if greet_both {
                    pb.arm_raise = [1.3 * g * amp; 2];
                } else {
                    pb.arm_raise[1] = 2.5 * g;
                    pb.elbow[1] = g * (0.7 + 0.4 * (0.6 * f as f64).sin());
                }
                a.push(pa);
                b.push(pb);
            }
            let verb = pick(rng, &["walks toward", "approaches"]);
            let reply = if greet_both {
                "raises both arms"
            } else {
                "waves the right hand"
            };
            caption = format!("one person {verb} the other person{adv}, and the other person {reply}");
        }
        ToyClass::Circle => {
            let dir = if left { 1.0 } else { -1.0 };
            let r = d / 2.0;
            for f in 0..t {
                let u = f as f64 / last;
                let sweep = dir * PI * smooth(u);
                for (k, out) in [&mut a, &mut b].into_iter().enumerate() {
                    let th = if k == 0 { PI } else { 0.0 } + sweep;
                    let (x, z) = (r * th.sin(), r * th.cos());
                    let yaw = (-th.sin()).atan2(-th.cos());
                    let mut p = Pose::standing(x, z, yaw, sk);
                    apply_gait(&mut p, stride_phase(r * PI * smooth(u)) + k as f64 * PI, 0.35 * amp);
                    p.arm_raise = [0.35; 2];
                    out.push(p);
                }
            }
            let verb = pick(rng, &["circle around each other", "move in a circle facing each other"]);
            let way = if left { "counterclockwise" } else { "clockwise" };
            caption = format!("two people {verb} {way}{adv}");
        }
        ToyClass::Mirror => {
            let reps = if rng.random_bool(0.5) { 1.0 } else { 2.0 };
            let (ia, ib) = if left { (0, 1) } else { (1, 0) };
            for f in 0..t {
                let u = f as f64 / last;
                let lift = (PI * reps * u).sin().abs();
                let mut pa = Pose::standing(xa, -d / 2.0, 0.0, sk);
                let mut pb = Pose::standing(xb, d / 2.0, PI, sk);
                pa.arm_raise[ia] = 2.3 * lift * amp;
                pb.arm_raise[ib] = 2.3 * lift * amp;
                pa.elbow[ia] = 0.3 * lift;
                pb.elbow[ib] = 0.3 * lift;
                a.push(pa);
                b.push(pb);
            }
            let verb = pick(rng, &["mirrors the gesture", "copies the movement"]);
            let times = if reps > 1.0 { " twice" } else { "" };
            caption = format!("one person raises the {side} arm{times}{adv} and the other person {verb}");
        }
        ToyClass::PushRetreat => {
            let step = 0.35;
            let back: f64 = rng.random_range(0.4..0.6);
            for f in 0..t {
                let u = f as f64 / last;
                let fwd = step * smooth(u / 0.5);
                let thrust = (PI * ((u - 0.25) / 0.4).clamp(0.0, 1.0)).sin();
                let mut pa = Pose::standing(xa, -d / 2.0 + fwd, 0.0, sk);
                apply_gait(&mut pa, stride_phase(fwd), 0.4 * amp * (1.0 - smooth((u - 0.4) / 0.1)));
                pa.arm_forward = [1.45 * thrust; 2];
                pa.arm_raise = [1.3 * thrust; 2];
                pa.lean = 0.2 * thrust;
                let rb = back * smooth((u - 0.45) / 0.5);
                let mut pb = Pose::standing(xb, d / 2.0 + rb, PI, sk);
                apply_gait(&mut pb, stride_phase(rb), 0.4 * amp * smooth((u - 0.45) / 0.1));
                pb.lean = -0.3 * (PI * ((u - 0.45) / 0.55).clamp(0.0, 1.0)).sin();
                pb.arm_raise = [0.6 * smooth((u - 0.45) / 0.2); 2];
                a.push(pa);
                b.push(pb);
            }
            let verb = pick(rng, &["pushes", "shoves"]);
            let reply = pick(rng, &["stumbles backward", "retreats"]);
            caption = format!("one person {verb} the other person{adv}, who {reply}");
        }
    }
    Scene { a, b, caption }
}

/// `n` samples cycling through the four classes with random modifiers.
/// Caption length grows with motion length through the speed adverbs.
pub fn generate_toy_samples(seed: u64, n: usize, cfg: &ToyConfig) -> Result<Vec<InteractionSample>> {
    if n < 8 {
        return Err(Error::BadArgument(format!("toy corpus needs at least 8 samples, asked for {n}")));
    }
    if cfg.min_frames < 2 || cfg.max_frames < cfg.min_frames {
        return Err(Error::Config("toy frame range is invalid".into()));
    }
    let sk = Skeleton::toy22();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let class = ToyClass::ALL[i % 4];
            let speed = [Speed::Quick, Speed::Normal, Speed::Slow][rng.random_range(0..3)];
            let left = rng.random_bool(0.5);
            let jitter: f64 = rng.random_range(0.92..1.08);
            let t = (class.base_frames() * speed.length_factor() * jitter).round() as usize;
            let t = t.clamp(cfg.min_frames, cfg.max_frames);
            let sc = scene(class, speed, left, t, &mut rng, &sk);
            let mut s = InteractionSample::new(
                [synthesize(&sk, &sc.a, cfg.fps)?, synthesize(&sk, &sc.b, cfg.fps)?],
                vec![sc.caption],
                Provenance::Real,
            )?;
            s.metadata.insert("class".into(), class.name().into());
            s.metadata.insert("speed".into(), speed.name().into());
            s.metadata.insert("side".into(), if left { "left" } else { "right" }.into());
            Ok(s)
        })
        .collect()
}

/// Seeded split assignment: the held-out and test shares are taken from a
/// shuffled order, everything else trains.
pub fn assign_splits(n: usize, cfg: &ToyConfig, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
    let held = (cfg.heldout_fraction * n as f64).round() as usize;
    let test = (cfg.test_fraction * n as f64).round() as usize;
    let mut splits = vec![Split::Train; n];
    for (rank, &i) in order.iter().enumerate() {
        if rank < held {
            splits[i] = Split::Heldout;
        } else if rank < held + test {
            splits[i] = Split::Test;
        }
    }
    splits
}

pub fn generate_toy_dataset(dir: &Path, seed: u64, n: usize, cfg: &ToyConfig) -> Result<DatasetManifest> {
    let samples = generate_toy_samples(seed, n, cfg)?;
    let splits = assign_splits(n, cfg, seed);
    let paired: Vec<(InteractionSample, Split)> = samples.into_iter().zip(splits).collect();
    DatasetManifest::write(dir, &paired)
}

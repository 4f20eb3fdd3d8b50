//! Single-person motion sources used as the agent-1 condition.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::motion::procedural::{apply_gait, synthesize, Pose};
use crate::motion::{MotionSequence, Skeleton, DEFAULT_FPS};
use crate::text::words;
use crate::{Error, Result};

pub trait SinglePersonSource: Send + Sync {
    fn generate(&self, text: &str, frames: usize, seed: u64) -> Result<MotionSequence>;
}

/// Keyword-driven locomotion and gesture primitives on the 22-joint toy
/// skeleton.
#[derive(Debug, Clone)]
pub struct ProceduralSource {
    pub skeleton: Skeleton,
    pub fps: u16,
    /// Ground-plane start `(x, z)` and heading.
    pub start: (f64, f64, f64),
}

impl Default for ProceduralSource {
    fn default() -> Self {
        Self {
            skeleton: Skeleton::toy22(),
            fps: DEFAULT_FPS,
            start: (0.0, -0.75, 0.0),
        }
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct Plan {
    forward: f64,
    turn: f64,
    wave: bool,
    raise: bool,
    push: bool,
    jump: bool,
    lean: f64,
    speed: f64,
}

fn plan(text: &str) -> Plan {
    let mut p = Plan {
        speed: 1.0,
        ..Default::default()
    };
    for w in words(text) {
        match w.as_str() {
            "walk" | "walks" | "approach" | "approaches" | "forward" | "steps" | "advances" => p.forward = 1.0,
            "back" | "backward" | "backs" | "retreat" | "retreats" | "away" => p.forward = -1.0,
            "turn" | "turns" => p.turn = PI,
            "circle" | "circles" | "around" => {
                p.turn = 2.0 * PI;
                p.forward = p.forward.max(0.6);
            }
            "wave" | "waves" => p.wave = true,
            "raise" | "raises" | "arms" | "clap" | "claps" => p.raise = true,
            "push" | "pushes" | "punch" | "punches" | "extend" | "extends" | "shove" | "shoves" => p.push = true,
            "jump" | "jumps" | "leap" | "leaps" => p.jump = true,
            "lean" | "leans" | "bows" | "bow" => p.lean = 0.35,
            "quickly" | "fast" | "swiftly" => p.speed = 1.6,
            "slowly" | "gently" => p.speed = 0.6,
            _ => {}
        }
    }
    p
}

impl ProceduralSource {
    pub fn poses(&self, text: &str, frames: usize, seed: u64) -> Vec<Pose> {
        let p = plan(text);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phase0: f64 = rng.random_range(0.0..2.0 * PI);
        let amp: f64 = rng.random_range(0.85..1.15);
        let (mut x, mut z, mut yaw) = self.start;
        let step = 0.018 * p.speed * amp;
        let gait_rate = 0.35 * p.speed;
        let dyaw = p.turn / frames.max(1) as f64;
        let mut out = Vec::with_capacity(frames);
        for f in 0..frames {
            let u = f as f64 / (frames.max(2) - 1) as f64;
            let mut pose = Pose::standing(x, z, yaw, &self.skeleton);
            if p.forward != 0.0 {
                apply_gait(&mut pose, phase0 + gait_rate * f as f64, 0.45 * amp);
            }
            let gesture = (PI * u).sin();
            if p.raise {
                pose.arm_raise = [1.4 * gesture * amp; 2];
            }
            if p.wave {
                pose.arm_raise[1] = 2.4 * gesture;
                pose.elbow[1] = 0.6 + 0.4 * (phase0 + 0.5 * f as f64).sin();
            }
            if p.push {
                let thrust = (2.0 * PI * u * p.speed).sin().max(0.0);
                pose.arm_forward = [1.4 * thrust; 2];
                pose.arm_raise = [pose.arm_raise[0].max(1.2 * thrust), pose.arm_raise[1].max(1.2 * thrust)];
                pose.lean = 0.15 * thrust;
            }
            if p.jump {
                let hop = (2.0 * PI * u * p.speed).sin().max(0.0);
                pose.root[1] += 0.25 * hop;
                pose.knee = [0.5 * (1.0 - hop); 2];
            }
            pose.lean += p.lean * gesture;
            out.push(pose);
            let (hx, hz) = (yaw.sin(), yaw.cos());
            x += p.forward * step * hx;
            z += p.forward * step * hz;
            yaw += dyaw;
        }
        out
    }
}

impl SinglePersonSource for ProceduralSource {
    fn generate(&self, text: &str, frames: usize, seed: u64) -> Result<MotionSequence> {
        if frames < 2 {
            return Err(Error::BadArgument("a single-person motion needs at least two frames".into()));
        }
        synthesize(&self.skeleton, &self.poses(text, frames, seed), self.fps)
    }
}

/// Runs an external generator. It is invoked as
/// `program [args..] --text T --frames N --seed S --out PATH` and must write
/// a single-agent motion file to `PATH`.
#[derive(Debug, Clone)]
pub struct ExternalSource {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl SinglePersonSource for ExternalSource {
    fn generate(&self, text: &str, frames: usize, seed: u64) -> Result<MotionSequence> {
        let dir = tempfile::tempdir()?;
        let out = dir.path().join("motion.t2imot");
        let status = Command::new(&self.program)
            .args(&self.args)
            .arg("--text")
            .arg(text)
            .arg("--frames")
            .arg(frames.to_string())
            .arg("--seed")
            .arg(seed.to_string())
            .arg("--out")
            .arg(&out)
            .status()
            .map_err(|e| Error::SourceUnavailable(format!("{}: {e}", self.program.display())))?;
        if !status.success() {
            return Err(Error::SourceUnavailable(format!("{} exited with {status}", self.program.display())));
        }
        let mut agents = crate::workbench::load_motion(&out)?;
        if agents.len() != 1 {
            return Err(Error::SourceUnavailable(format!("generator wrote {} agents, expected 1", agents.len())));
        }
        let m = agents.remove(0);
        if m.frames() != frames {
            return Err(Error::SourceUnavailable(format!("generator wrote {} frames, asked for {frames}", m.frames())));
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_keyword_driven() {
        let src = ProceduralSource::default();
        let a = src.generate("The person walks forward quickly.", 40, 3).unwrap();
        let b = src.generate("The person walks forward quickly.", 40, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.frames(), 40);
        let dz = a.positions()[[39, 0, 2]] - a.positions()[[0, 0, 2]];
        assert!(dz > 0.5, "walked {dz}");
        let back = src.generate("The person retreats slowly.", 40, 3).unwrap();
        assert!(back.positions()[[39, 0, 2]] < back.positions()[[0, 0, 2]]);
        let still = src.generate("The person waves.", 40, 3).unwrap();
        assert!((still.positions()[[39, 0, 2]] - still.positions()[[0, 0, 2]]).abs() < 1e-6);
        assert!(src.generate("x", 1, 0).is_err());
    }

    #[test]
    fn missing_program_is_unavailable() {
        let src = ExternalSource {
            program: "/nonexistent/generator".into(),
            args: vec![],
        };
        assert!(matches!(src.generate("x", 10, 0), Err(Error::SourceUnavailable(_))));
    }
}

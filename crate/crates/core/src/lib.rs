//! Two-person text-to-motion generation.
//!
//! The crate is organised by subsystem:
//!
//! - [`motion`]: skeletons, 6D rotations, forward kinematics, foot contacts
//!   and the flat per-frame motion representation.
//! - [`text`]: prompt tokenisation and pluggable word-level embedders.
//! - [`net`]: the dual-agent denoiser (word-level conditioning blocks
//!   interleaved with motion–motion interaction blocks).
//! - [`diffusion`]: cosine noise schedule, training step, DDIM sampling with
//!   classifier-free guidance and reaction (inpainting) sampling.
//! - [`losses`]: reconstruction, kinematic and adaptive interaction losses.
//! - [`eval`]: the contrastive text–motion evaluator and metric suite.
//! - [`compose`]: LLM prompt templates, composition of synthetic
//!   interactions and the two-stage filter.
//! - [`workbench`]: file formats, datasets, toy data, configuration and
//!   training loops.
//!
//! Numerical work is done in `f64` on a small reverse-mode autodiff
//! ([`tape`]); persisted tensors and motion data are `f32`.

pub mod compose;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod losses;
pub mod motion;
pub mod net;
pub mod optim;
pub mod params;
pub mod tape;
pub mod text;
pub mod workbench;

pub use error::{Error, Result};
pub use motion::{InteractionSample, MotionSequence, Provenance, Skeleton};
pub use tape::{Mat, Tape, Var};
pub use text::TokenizedPrompt;

//! Training loops and line-delimited JSON run reports.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use super::config::TrainConfig;
use super::dataset::NormStats;
use crate::diffusion::{train_step, NoiseSchedule, TrainContext, TrainItem};
use crate::eval::{EvalItem, Evaluator};
use crate::losses::{LossKit, LossMode, LossWeights};
use crate::motion::{InteractionSample, Skeleton};
use crate::net::Denoiser;
use crate::optim::{warmup_cosine, AdamW};
use crate::text::{embed_many, tokenize, WordEmbedder};
use crate::{Error, Result};

/// Appends one JSON object per line.
pub struct RunReport {
    out: Option<BufWriter<File>>,
    started: Instant,
    pub records: Vec<Value>,
}

impl RunReport {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            out: Some(BufWriter::new(File::create(path)?)),
            started: Instant::now(),
            records: Vec::new(),
        })
    }

    /// Keeps records in memory only.
    pub fn in_memory() -> Self {
        Self {
            out: None,
            started: Instant::now(),
            records: Vec::new(),
        }
    }

    pub fn log(&mut self, record: Value) -> Result<()> {
        if let Some(out) = &mut self.out {
            serde_json::to_writer(&mut *out, &record)?;
            out.write_all(b"\n")?;
            out.flush()?;
        }
        self.records.push(record);
        Ok(())
    }

    pub fn metric(&mut self, name: &str, value: f64) -> Result<()> {
        self.log(json!({"event": "metric", "name": name, "value": value}))
    }

    pub fn elapsed(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    /// Closing record with the command name and wall time.
    pub fn finish(&mut self, command: &str, extra: Value) -> Result<()> {
        let duration = self.elapsed();
        self.log(json!({"event": "summary", "command": command, "duration_s": duration, "details": extra}))
    }
}

/// Normalises samples and embeds their first caption.
pub fn prepare_train_items(
    samples: &[InteractionSample],
    stats: &NormStats,
    embedder: &dyn WordEmbedder,
) -> Result<Vec<TrainItem>> {
    let prompts = samples.iter().map(|s| tokenize(s.caption())).collect::<Result<Vec<_>>>()?;
    let prompts = embed_many(&prompts, embedder)?;
    samples
        .iter()
        .zip(prompts)
        .map(|(s, prompt)| {
            Ok(TrainItem {
                x1: stats.normalize(&s.agents[0])?,
                x2: stats.normalize(&s.agents[1])?,
                prompt,
            })
        })
        .collect()
}

pub fn prepare_eval_items(
    samples: &[InteractionSample],
    evaluator: &Evaluator,
    embedder: &dyn WordEmbedder,
) -> Result<Vec<EvalItem>> {
    let prompts = samples.iter().map(|s| tokenize(s.caption())).collect::<Result<Vec<_>>>()?;
    let prompts = embed_many(&prompts, embedder)?;
    samples
        .iter()
        .zip(prompts)
        .map(|(s, prompt)| {
            Ok(EvalItem {
                motion: evaluator.motion_input(s)?,
                prompt,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub first_loss: f64,
    pub last_loss: f64,
    /// Mean total loss over the final `log_every` steps.
    pub tail_loss: f64,
    pub duration_s: f64,
}

/// Options for one call of [`train_denoiser`].
pub struct TrainRun<'a> {
    pub config: &'a TrainConfig,
    pub schedule: &'a NoiseSchedule,
    pub weights: &'a LossWeights,
    pub stats: &'a NormStats,
    pub mode: LossMode,
    pub lr: f64,
    pub seed: u64,
}

/// AdamW with warm-up + cosine decay over shuffled mini-batches.
pub fn train_denoiser(
    model: &mut Denoiser,
    items: &[TrainItem],
    run: &TrainRun<'_>,
    report: &mut RunReport,
) -> Result<TrainSummary> {
    if items.is_empty() {
        return Err(Error::DatasetTooSmall("no training items".into()));
    }
    let cfg = run.config;
    let skeleton = skeleton_for(model.config().joints)?;
    let kit = LossKit::new(&skeleton);
    let denorm = run.stats.denormalizer();
    let ctx = TrainContext {
        schedule: run.schedule,
        kit: &kit,
        weights: run.weights,
        denorm: &denorm,
        p_uncond: cfg.p_uncond,
        mode: run.mode,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let mut opt = AdamW::new(cfg.optimizer.clone(), model.params());
    let mut order: Vec<usize> = Vec::new();
    let batch = cfg.batch_size.min(items.len());
    let started = Instant::now();
    let mut first = f64::NAN;
    let mut tail = Vec::new();
    let mut last = f64::NAN;
    let window = cfg.log_every.max(1);
    for step in 0..cfg.steps {
        if order.len() < batch {
            let mut fresh: Vec<usize> = (0..items.len()).collect();
            fresh.shuffle(&mut rng);
            order.extend(fresh);
        }
        let picked: Vec<TrainItem> = order.drain(..batch).map(|i| items[i].clone()).collect();
        let out = train_step(model, &picked, &ctx, &mut rng)?;
        let lr = warmup_cosine(step, run.lr, cfg.warmup_steps, cfg.steps);
        let grad_norm = opt.step(model.params_mut(), &out.grads, lr);
        last = out.losses.total;
        if step == 0 {
            first = last;
        }
        tail.push(last);
        if tail.len() > window {
            tail.remove(0);
        }
        if step % window == 0 || step + 1 == cfg.steps {
            let mut rec = json!({"event": "step", "step": step, "lr": lr, "loss": last, "grad_norm": grad_norm});
            for (name, raw, _) in &out.losses.terms {
                rec[*name] = json!(raw);
            }
            report.log(rec)?;
            log::info!("step {step} loss {last:.5} lr {lr:.2e}");
        }
    }
    Ok(TrainSummary {
        steps: cfg.steps,
        first_loss: first,
        last_loss: last,
        tail_loss: tail.iter().sum::<f64>() / tail.len() as f64,
        duration_s: started.elapsed().as_secs_f64(),
    })
}

/// Skeleton matching a joint count.
pub fn skeleton_for(joints: usize) -> Result<Skeleton> {
    match joints {
        22 => Ok(Skeleton::toy22()),
        5 => Ok(Skeleton::toy5()),
        n => Err(Error::InvalidSkeleton(format!("no built-in skeleton with {n} joints"))),
    }
}

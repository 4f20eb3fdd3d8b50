//! Model checkpoints with their normalisation statistics.

use std::path::Path;

use serde_json::json;

use super::dataset::NormStats;
use super::format::{load_checkpoint, save_checkpoint};
use crate::eval::{Evaluator, EvaluatorConfig};
use crate::net::{Denoiser, ModelConfig};
use crate::{Error, Result};

const DENOISER: &str = "denoiser";
const EVALUATOR: &str = "evaluator";

fn from_json<T: serde::de::DeserializeOwned>(path: &Path, v: serde_json::Value) -> Result<T> {
    serde_json::from_value(v).map_err(|e| Error::corrupt(path, e.to_string()))
}

pub fn save_denoiser(path: &Path, model: &Denoiser, stats: &NormStats) -> Result<()> {
    save_checkpoint(
        path,
        DENOISER,
        serde_json::to_value(model.config())?,
        json!({ "norm": stats }),
        model.params(),
    )
}

pub fn load_denoiser(path: &Path) -> Result<(Denoiser, NormStats)> {
    let (manifest, store) = load_checkpoint(path, DENOISER)?;
    let config: ModelConfig = from_json(path, manifest.config)?;
    let stats: NormStats = from_json(path, manifest.extra["norm"].clone())?;
    stats.validate()?;
    let mut model = Denoiser::new(config, 0)?;
    model.params_mut().load_from(&store)?;
    Ok((model, stats))
}

pub fn save_evaluator(path: &Path, evaluator: &Evaluator) -> Result<()> {
    let norm = NormStats {
        mean: evaluator.norm.mean.iter().copied().collect(),
        std: evaluator.norm.std.iter().copied().collect(),
    };
    save_checkpoint(
        path,
        EVALUATOR,
        serde_json::to_value(evaluator.config())?,
        json!({ "norm": norm, "trained": evaluator.is_trained() }),
        evaluator.params(),
    )
}

pub fn load_evaluator(path: &Path) -> Result<Evaluator> {
    let (manifest, store) = load_checkpoint(path, EVALUATOR)?;
    let config: EvaluatorConfig = from_json(path, manifest.config)?;
    let norm: NormStats = from_json(path, manifest.extra["norm"].clone())?;
    let mut ev = Evaluator::new(config, norm.denormalizer(), 0)?;
    ev.params_mut().load_from(&store)?;
    if manifest.extra["trained"].as_bool().unwrap_or(false) {
        ev.mark_trained();
    }
    Ok(ev)
}

//! Generation quality metrics for a trained denoiser.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::MetricsConfig;
use super::dataset::NormStats;
use crate::diffusion::{sample_interaction, NoiseSchedule, PairDenoiser, SamplerConfig};
use crate::eval::{diversity, fid, mm_dist, multimodality, r_precision, Evaluator};
use crate::motion::InteractionSample;
use crate::text::{encode, WordEmbedder};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalMetrics {
    pub fid: f64,
    pub r_precision_top1: f64,
    pub r_precision_top2: f64,
    pub r_precision_top3: f64,
    pub mm_dist: f64,
    pub diversity: f64,
    pub multimodality: f64,
}

impl EvalMetrics {
    pub fn named(&self) -> [(&'static str, f64); 7] {
        [
            ("fid", self.fid),
            ("r_precision_top1", self.r_precision_top1),
            ("r_precision_top2", self.r_precision_top2),
            ("r_precision_top3", self.r_precision_top3),
            ("mm_dist", self.mm_dist),
            ("diversity", self.diversity),
            ("multimodality", self.multimodality),
        ]
    }
}

/// Generates one interaction per reference caption (at the reference
/// length) and scores the set against the references.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_generation(
    model: &dyn PairDenoiser,
    evaluator: &Evaluator,
    embedder: &dyn WordEmbedder,
    reference: &[InteractionSample],
    sampler: &SamplerConfig,
    schedule: &NoiseSchedule,
    stats: &NormStats,
    metrics: &MetricsConfig,
    seed: u64,
) -> Result<EvalMetrics> {
    if reference.len() < 2 {
        return Err(Error::DatasetTooSmall("evaluation needs at least two reference samples".into()));
    }
    let denorm = stats.denormalizer();
    let prompts = reference
        .iter()
        .map(|s| encode(s.caption(), embedder))
        .collect::<Result<Vec<_>>>()?;
    let generate = |i: usize, k: u64| {
        let mut sc = sampler.clone();
        sc.seed = seed.wrapping_add(1000 * k).wrapping_add(i as u64);
        sample_interaction(model, &prompts[i], reference[i].frames(), &sc, schedule, &denorm, reference[i].fps())
    };
    let generated = (0..reference.len()).map(|i| generate(i, 0)).collect::<Result<Vec<_>>>()?;
    let real_m = evaluator.encode_motions(reference)?;
    let gen_m = evaluator.encode_motions(&generated)?;
    let text = evaluator.encode_texts(&prompts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = metrics.r_precision_pool.min(reference.len());
    let rp = r_precision(&text, &gen_m, pool, &mut rng)?;
    let groups = (0..metrics.multimodality_prompts.min(reference.len()))
        .map(|i| {
            let reps = (1..=metrics.multimodality_repeats.max(2) as u64)
                .map(|k| generate(i, k))
                .collect::<Result<Vec<_>>>()?;
            evaluator.encode_motions(&reps)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalMetrics {
        fid: fid(&real_m, &gen_m)?,
        r_precision_top1: rp[0],
        r_precision_top2: rp[1],
        r_precision_top3: rp[2],
        mm_dist: mm_dist(&text, &gen_m)?,
        diversity: diversity(&gen_m, metrics.diversity_pairs, &mut rng)?,
        multimodality: multimodality(&groups, metrics.multimodality_pairs, &mut rng)?,
    })
}

//! Synthetic interactions by composition: LLM prompting, role
//! decomposition, length estimation, reaction generation and filtering.

mod filter;
pub mod llm;
mod length;
mod source;
mod templates;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use filter::{
    calibrate, combine, filter_indices, filter_pipeline, knn_annulus_filter, mean_knn_distances, quantile,
    semantic_filter, semantic_keep, semantic_scores, AnnulusMode, FilterConfig, ANNULUS_PRESETS,
    DEFAULT_COSINE_THRESHOLD, DEFAULT_K_NEIGHBORS,
};
pub use length::LengthEstimator;
pub use llm::{FixtureClient, LlmClient};
pub use source::{ExternalSource, ProceduralSource, SinglePersonSource};
pub use templates::{
    build_decomposition_prompt, build_interaction_prompt, parse_llm_descriptions, Expected, Parsed,
    DECOMPOSITION_TEMPLATE, INTERACTION_TEMPLATE, INTERACTION_WORD_BUDGET, PERSON_WORD_BUDGET,
};

use crate::diffusion::{reaction_sample, ConditionMode, NoiseSchedule, PairDenoiser, SamplerConfig};
use crate::losses::Denormalizer;
use crate::motion::InteractionSample;
use crate::text::{encode, WordEmbedder};
use crate::{Error, Result};

/// A theme with its descriptive tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThemeSpec {
    pub theme: String,
    #[serde(default)]
    pub tags: Vec<String>,
}

/// One generated two-person description and its per-person split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub theme: String,
    pub tags: Vec<String>,
    pub two_person_text: String,
    pub person1_text: String,
    pub person2_text: String,
}

impl PromptBundle {
    pub fn new(theme: &ThemeSpec, two_person_text: &str, person1_text: &str, person2_text: &str) -> Result<Self> {
        let trimmed = [two_person_text.trim(), person1_text.trim(), person2_text.trim()];
        if trimmed.iter().any(|t| t.is_empty()) {
            return Err(Error::BadArgument("bundle texts must be non-empty".into()));
        }
        for (t, budget) in trimmed.iter().zip([INTERACTION_WORD_BUDGET, PERSON_WORD_BUDGET, PERSON_WORD_BUDGET]) {
            let n = t.split_whitespace().count();
            if n > budget {
                log::warn!("bundle text has {n} words (budget {budget}): {t:?}");
            }
        }
        Ok(Self {
            theme: theme.theme.clone(),
            tags: theme.tags.clone(),
            two_person_text: trimmed[0].to_string(),
            person1_text: trimmed[1].to_string(),
            person2_text: trimmed[2].to_string(),
        })
    }
}

/// Asks the LLM for `m` descriptions per theme, then splits each into
/// per-person texts.
pub fn draft_bundles(
    client: &dyn LlmClient,
    themes: &[ThemeSpec],
    examples: &[String],
    m: usize,
) -> Result<Vec<PromptBundle>> {
    let mut out = Vec::new();
    for theme in themes {
        let prompt = build_interaction_prompt(&theme.theme, &theme.tags, examples, m)?;
        let Parsed::Descriptions(texts) = parse_llm_descriptions(&client.complete(&prompt)?, Expected::ArrayOfStrings)?
        else {
            unreachable!("array parse returns descriptions")
        };
        for text in texts {
            let reply = client.complete(&build_decomposition_prompt(&text)?)?;
            let Parsed::Pair(p1, p2) = parse_llm_descriptions(&reply, Expected::PersonPair)? else {
                unreachable!("pair parse returns a pair")
            };
            out.push(PromptBundle::new(theme, &text, &p1, &p2)?);
        }
    }
    Ok(out)
}

/// Everything composition needs besides the bundle.
pub struct Composer<'a> {
    pub source: &'a dyn SinglePersonSource,
    pub model: &'a dyn PairDenoiser,
    pub estimator: &'a LengthEstimator,
    pub embedder: &'a dyn WordEmbedder,
    pub sampler: SamplerConfig,
    pub schedule: &'a NoiseSchedule,
    pub denorm: &'a Denormalizer,
    pub condition: ConditionMode,
}

impl Composer<'_> {
    /// Agent 1 comes from the single-person source for `person1_text` at the
    /// length estimated from the two-person text; agent 2 is generated as a
    /// reaction to it.
    pub fn compose(&self, bundle: &PromptBundle, seed: u64) -> Result<InteractionSample> {
        let prompt = encode(&bundle.two_person_text, self.embedder)?;
        let frames = self.estimator.estimate(&prompt)?;
        let agent1 = self.source.generate(&bundle.person1_text, frames, seed)?;
        let mut sampler = self.sampler.clone();
        sampler.seed = seed ^ 0x9e37_79b9_7f4a_7c15;
        let mut sample = reaction_sample(
            self.model,
            agent1.positions(),
            &prompt,
            &sampler,
            self.schedule,
            self.denorm,
            self.condition,
            agent1.fps(),
        )?;
        // positions already match bit-for-bit; keep the source's rotations
        // and contacts too so agent 1 is exactly what the source produced
        sample.agents[0] = agent1;
        sample.metadata.insert("theme".into(), bundle.theme.clone());
        sample.metadata.insert("tags".into(), bundle.tags.join(", "));
        sample.metadata.insert("person1_text".into(), bundle.person1_text.clone());
        sample.metadata.insert("person2_text".into(), bundle.person2_text.clone());
        sample.metadata.insert("seed".into(), seed.to_string());
        Ok(sample)
    }

    /// Bundle `i` uses seed `base_seed + i`; output order follows input.
    pub fn compose_all(&self, bundles: &[PromptBundle], base_seed: u64) -> Result<Vec<InteractionSample>> {
        bundles
            .par_iter()
            .enumerate()
            .map(|(i, b)| self.compose(b, base_seed.wrapping_add(i as u64)))
            .collect()
    }
}

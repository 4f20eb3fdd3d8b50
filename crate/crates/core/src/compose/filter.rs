//! Semantic and distributional filtering of synthetic interactions.

use serde::{Deserialize, Serialize};

use crate::eval::{EmbeddingBank, Evaluator};
use crate::motion::{InteractionSample, Provenance};
use crate::tape::Mat;
use crate::text::{encode, WordEmbedder};
use crate::{Error, Result};

pub const DEFAULT_COSINE_THRESHOLD: f64 = 0.58;
pub const DEFAULT_K_NEIGHBORS: usize = 20;
/// Inner and outer radii compared in the fine-tuning study.
pub const ANNULUS_PRESETS: [(f64, f64); 3] = [(0.25, 0.6), (0.30, 0.6), (0.35, 0.6)];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnulusMode {
    /// Mean distance from each generated embedding to its `k` nearest bank
    /// points must lie in `[r_min, r_max]`.
    #[default]
    MeanDistance,
    /// Each bank point picks its `k` nearest generated embeddings; a
    /// generated embedding survives when some bank point picked it at a
    /// distance strictly inside `(r_min, r_max)`.
    BankNeighbors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub cosine_threshold: f64,
    pub k_neighbors: usize,
    pub r_min: f64,
    pub r_max: f64,
    #[serde(default)]
    pub mode: AnnulusMode,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            cosine_threshold: DEFAULT_COSINE_THRESHOLD,
            k_neighbors: DEFAULT_K_NEIGHBORS,
            r_min: ANNULUS_PRESETS[2].0,
            r_max: ANNULUS_PRESETS[2].1,
            mode: AnnulusMode::MeanDistance,
        }
    }
}

impl FilterConfig {
    /// Thresholds that keep everything.
    pub fn pass_all() -> Self {
        Self {
            cosine_threshold: -1.0,
            k_neighbors: 1,
            r_min: 0.0,
            r_max: f64::INFINITY,
            mode: AnnulusMode::MeanDistance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.cosine_threshold) {
            return Err(Error::Config(format!("cosine threshold {} outside [-1, 1]", self.cosine_threshold)));
        }
        if self.k_neighbors == 0 {
            return Err(Error::Config("k_neighbors must be at least 1".into()));
        }
        if !(self.r_min >= 0.0 && self.r_min < self.r_max) {
            return Err(Error::Config(format!("annulus [{}, {}] is invalid", self.r_min, self.r_max)));
        }
        Ok(())
    }
}

pub fn semantic_keep(similarity: f64, threshold: f64) -> bool {
    similarity >= threshold
}

/// Caption-to-motion cosine similarity per sample.
pub fn semantic_scores(
    samples: &[InteractionSample],
    evaluator: &Evaluator,
    embedder: &dyn WordEmbedder,
) -> Result<Vec<f64>> {
    if !evaluator.is_trained() {
        return Err(Error::NotTrained("evaluator".into()));
    }
    samples
        .iter()
        .map(|s| {
            let text = evaluator.encode_text(&encode(s.caption(), embedder)?)?;
            let motion = evaluator.encode_motion(s)?;
            Ok(Evaluator::similarity(&text, &motion))
        })
        .collect()
}

/// Indices of samples whose similarity reaches `threshold`.
pub fn semantic_filter(
    samples: &[InteractionSample],
    evaluator: &Evaluator,
    embedder: &dyn WordEmbedder,
    threshold: f64,
) -> Result<Vec<usize>> {
    let scores = semantic_scores(samples, evaluator, embedder)?;
    Ok((0..scores.len()).filter(|&i| semantic_keep(scores[i], threshold)).collect())
}

fn distance(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Indices of the `k` smallest distances, ties broken by index.
fn nearest(dists: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dists.len()).collect();
    let cmp = |a: &usize, b: &usize| dists[*a].total_cmp(&dists[*b]).then(a.cmp(b));
    if k < idx.len() {
        idx.select_nth_unstable_by(k, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(cmp);
    idx
}

/// Mean distance from each row of `gen` to its `k` nearest rows of `bank`.
pub fn mean_knn_distances(gen: &Mat, bank: &Mat, k: usize) -> Result<Vec<f64>> {
    if bank.nrows() == 0 {
        return Err(Error::BadArgument("reference bank is empty".into()));
    }
    if k == 0 || k > bank.nrows() {
        return Err(Error::BadArgument(format!("k = {k} with a bank of {}", bank.nrows())));
    }
    if gen.ncols() != bank.ncols() && gen.nrows() > 0 {
        return Err(Error::BadArgument(format!("embedding widths {} and {}", gen.ncols(), bank.ncols())));
    }
    Ok(gen
        .rows()
        .into_iter()
        .map(|g| {
            let d: Vec<f64> = bank.rows().into_iter().map(|b| distance(g, b)).collect();
            nearest(&d, k).iter().map(|&i| d[i]).sum::<f64>() / k as f64
        })
        .collect())
}

/// Indices of generated embeddings that pass the annulus test, ascending.
pub fn knn_annulus_filter(gen: &Mat, bank: &EmbeddingBank, config: &FilterConfig) -> Result<Vec<usize>> {
    config.validate().map_err(|e| Error::BadArgument(e.to_string()))?;
    let bank = &bank.embeddings;
    match config.mode {
        AnnulusMode::MeanDistance => {
            let means = mean_knn_distances(gen, bank, config.k_neighbors)?;
            Ok((0..means.len())
                .filter(|&i| config.r_min <= means[i] && means[i] <= config.r_max)
                .collect())
        }
        AnnulusMode::BankNeighbors => {
            if bank.nrows() == 0 {
                return Err(Error::BadArgument("reference bank is empty".into()));
            }
            if gen.nrows() == 0 {
                return Ok(Vec::new());
            }
            if gen.ncols() != bank.ncols() {
                return Err(Error::BadArgument(format!("embedding widths {} and {}", gen.ncols(), bank.ncols())));
            }
            let k = config.k_neighbors.min(gen.nrows());
            let mut keep = vec![false; gen.nrows()];
            for h in bank.rows() {
                let d: Vec<f64> = gen.rows().into_iter().map(|g| distance(h, g)).collect();
                for i in nearest(&d, k) {
                    if config.r_min < d[i] && d[i] < config.r_max {
                        keep[i] = true;
                    }
                }
            }
            Ok((0..keep.len()).filter(|&i| keep[i]).collect())
        }
    }
}

/// Both filters evaluated on every sample and intersected. The survivors
/// are marked as filtered synthetic data.
pub fn filter_pipeline(
    samples: &[InteractionSample],
    evaluator: &Evaluator,
    embedder: &dyn WordEmbedder,
    bank: &EmbeddingBank,
    config: &FilterConfig,
) -> Result<Vec<InteractionSample>> {
    let keep = filter_indices(samples, evaluator, embedder, bank, config)?;
    Ok(keep
        .into_iter()
        .map(|i| samples[i].clone().with_provenance(Provenance::SyntheticFiltered))
        .collect())
}

pub fn filter_indices(
    samples: &[InteractionSample],
    evaluator: &Evaluator,
    embedder: &dyn WordEmbedder,
    bank: &EmbeddingBank,
    config: &FilterConfig,
) -> Result<Vec<usize>> {
    config.validate()?;
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let scores = semantic_scores(samples, evaluator, embedder)?;
    let gen = evaluator.encode_motions(samples)?;
    Ok(combine(&scores, &knn_annulus_filter(&gen, bank, config)?, config.cosine_threshold))
}

/// Intersection of a precomputed annulus pass list with the semantic test.
pub fn combine(scores: &[f64], annulus_kept: &[usize], threshold: f64) -> Vec<usize> {
    annulus_kept
        .iter()
        .copied()
        .filter(|&i| semantic_keep(scores[i], threshold))
        .collect()
}

/// Value below which a fraction `q` of `values` falls (linear interpolation).
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return Err(Error::BadArgument("quantile of an empty set or q outside [0, 1]".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// Suggested thresholds for a retrained evaluator: the cosine threshold is
/// the `q_sim` quantile of matched similarities on real validation pairs;
/// the annulus spans the `q_lo..q_hi` quantiles of real validation
/// embeddings' mean kNN distance to the bank.
pub fn calibrate(
    real_scores: &[f64],
    real_embs: &Mat,
    bank: &EmbeddingBank,
    k: usize,
    q_sim: f64,
    q_lo: f64,
    q_hi: f64,
) -> Result<FilterConfig> {
    let k = k.min(bank.len());
    let means = mean_knn_distances(real_embs, &bank.embeddings, k)?;
    let cfg = FilterConfig {
        cosine_threshold: quantile(real_scores, q_sim)?,
        k_neighbors: k,
        r_min: quantile(&means, q_lo)?,
        r_max: quantile(&means, q_hi)?,
        mode: AnnulusMode::MeanDistance,
    };
    cfg.validate()?;
    Ok(cfg)
}

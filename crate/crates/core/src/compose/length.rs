//! Frame-count estimation from a prompt.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::text::TokenizedPrompt;
use crate::{Error, Result};

/// Ridge regression on `[1, word count, mean word embedding]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthEstimator {
    pub min_frames: usize,
    pub max_frames: usize,
    pub ridge: f64,
    weights: Option<Vec<f64>>,
}

impl LengthEstimator {
    pub fn new(min_frames: usize, max_frames: usize, ridge: f64) -> Result<Self> {
        if min_frames < 2 || max_frames < min_frames {
            return Err(Error::Config(format!("frame clamp [{min_frames}, {max_frames}] is invalid")));
        }
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(Error::Config("ridge must be non-negative".into()));
        }
        Ok(Self {
            min_frames,
            max_frames,
            ridge,
            weights: None,
        })
    }

    pub fn is_trained(&self) -> bool {
        self.weights.is_some()
    }

    fn features(prompt: &TokenizedPrompt) -> Result<Vec<f64>> {
        let emb = prompt.embeddings()?;
        let content: Vec<usize> = prompt.valid_positions().into_iter().skip(1).take(prompt.content_len()).collect();
        let mut f = Vec::with_capacity(2 + emb.ncols());
        f.push(1.0);
        f.push(prompt.content_len() as f64);
        for c in 0..emb.ncols() {
            let s: f64 = content.iter().map(|&k| emb[[k, c]]).sum();
            f.push(if content.is_empty() { 0.0 } else { s / content.len() as f64 });
        }
        Ok(f)
    }

    /// Fits on embedded prompts and their frame counts. The intercept is
    /// not penalised.
    pub fn fit(&mut self, prompts: &[TokenizedPrompt], frames: &[usize]) -> Result<()> {
        if prompts.len() != frames.len() || prompts.is_empty() {
            return Err(Error::BadArgument("need one frame count per prompt".into()));
        }
        let rows: Vec<Vec<f64>> = prompts.iter().map(Self::features).collect::<Result<_>>()?;
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::shape("prompts have mixed embedding widths"));
        }
        let x = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        let y = DVector::from_iterator(frames.len(), frames.iter().map(|&f| f as f64));
        let mut gram = x.transpose() * &x;
        for j in 1..d {
            gram[(j, j)] += self.ridge;
        }
        // tiny jitter keeps the solve defined when features are collinear
        for j in 0..d {
            gram[(j, j)] += 1e-9;
        }
        let rhs = x.transpose() * y;
        let w = gram
            .cholesky()
            .ok_or_else(|| Error::DegenerateCovariance("length regression system is not positive definite".into()))?
            .solve(&rhs);
        self.weights = Some(w.iter().copied().collect());
        Ok(())
    }

    pub fn estimate(&self, prompt: &TokenizedPrompt) -> Result<usize> {
        let w = self
            .weights
            .as_ref()
            .ok_or_else(|| Error::NotTrained("length estimator".into()))?;
        let f = Self::features(prompt)?;
        if f.len() != w.len() {
            return Err(Error::shape(format!("estimator expects {} features, prompt gives {}", w.len(), f.len())));
        }
        let y: f64 = f.iter().zip(w).map(|(a, b)| a * b).sum();
        let y = if y.is_finite() { y.round() } else { self.min_frames as f64 };
        Ok((y.max(self.min_frames as f64) as usize).min(self.max_frames))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{encode, StubEmbedder};

    #[test]
    fn untrained_and_clamped() {
        let emb = StubEmbedder::new(8);
        let p = encode("one person walks", &emb).unwrap();
        let mut est = LengthEstimator::new(10, 20, 0.1).unwrap();
        assert!(matches!(est.estimate(&p), Err(Error::NotTrained(_))));
        let short = encode("a b", &emb).unwrap();
        let long = encode("a b c d e f g h i j k l m n", &emb).unwrap();
        est.fit(&[short.clone(), long.clone()], &[2, 400]).unwrap();
        assert_eq!(est.estimate(&short).unwrap(), 10);
        assert_eq!(est.estimate(&long).unwrap(), 20);
        assert_eq!(est.estimate(&p).unwrap(), est.estimate(&p).unwrap());
        assert!(LengthEstimator::new(5, 4, 0.0).is_err());
    }
}

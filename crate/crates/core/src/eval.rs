//! Contrastive text-motion evaluator and the metric suite.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::losses::Denormalizer;
use crate::motion::{representation_width, InteractionSample};
use crate::net::positional_encoding;
use crate::optim::{AdamW, AdamWConfig};
use crate::params::{init_linear, Bound, ParamId, ParamStore};
use crate::tape::{Mat, Tape, Var};
use crate::text::TokenizedPrompt;
use crate::{Error, Result};

pub const EMBED_DIM: usize = 512;
const BANK_MAGIC: &[u8; 8] = b"T2IBANK1";
const MAX_LOGIT_SCALE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluatorConfig {
    pub joints: usize,
    pub text_width: usize,
    pub model_width: usize,
    pub head_count: usize,
    pub layers: usize,
    pub embed_dim: usize,
    pub max_frames: usize,
}

impl EvaluatorConfig {
    pub fn toy() -> Self {
        Self {
            joints: 22,
            text_width: 32,
            model_width: 64,
            head_count: 4,
            layers: 1,
            embed_dim: EMBED_DIM,
            max_frames: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.head_count == 0 || self.model_width % self.head_count != 0 || self.model_width % 2 != 0 {
            return Err(Error::Config("evaluator width must be even and divisible by head_count".into()));
        }
        if self.embed_dim == 0 || self.text_width == 0 || self.joints < 2 {
            return Err(Error::Config("evaluator dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Per-frame input width: both agents side by side.
    pub fn motion_width(&self) -> usize {
        2 * representation_width(self.joints)
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerIds {
    ln1_g: ParamId,
    ln1_b: ParamId,
    q: ParamId,
    k: ParamId,
    v: ParamId,
    o_w: ParamId,
    o_b: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    mlp_w1: ParamId,
    mlp_b1: ParamId,
    mlp_w2: ParamId,
    mlp_b2: ParamId,
}

#[derive(Debug, Clone)]
struct EncoderIds {
    in_w: ParamId,
    in_b: ParamId,
    layers: Vec<LayerIds>,
    out_w: ParamId,
    out_b: ParamId,
}

fn build_encoder(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, input: usize, cfg: &EvaluatorConfig) -> EncoderIds {
    let w = cfg.model_width;
    let mut lin = |store: &mut ParamStore, name: String, i: usize, o: usize| store.add(name, init_linear(rng, i, o));
    let in_w = lin(store, format!("{prefix}.input.w"), input, w);
    let in_b = store.add(format!("{prefix}.input.b"), Mat::zeros((1, w)));
    let mut layers = Vec::new();
    for l in 0..cfg.layers {
        let p = format!("{prefix}.layer{l}");
        layers.push(LayerIds {
            ln1_g: store.add(format!("{p}.ln1.g"), Mat::ones((1, w))),
            ln1_b: store.add(format!("{p}.ln1.b"), Mat::zeros((1, w))),
            q: lin(store, format!("{p}.attn.q"), w, w),
            k: lin(store, format!("{p}.attn.k"), w, w),
            v: lin(store, format!("{p}.attn.v"), w, w),
            o_w: lin(store, format!("{p}.attn.o.w"), w, w),
            o_b: store.add(format!("{p}.attn.o.b"), Mat::zeros((1, w))),
            ln2_g: store.add(format!("{p}.ln2.g"), Mat::ones((1, w))),
            ln2_b: store.add(format!("{p}.ln2.b"), Mat::zeros((1, w))),
            mlp_w1: lin(store, format!("{p}.mlp.w1"), w, 2 * w),
            mlp_b1: store.add(format!("{p}.mlp.b1"), Mat::zeros((1, 2 * w))),
            mlp_w2: lin(store, format!("{p}.mlp.w2"), 2 * w, w),
            mlp_b2: store.add(format!("{p}.mlp.b2"), Mat::zeros((1, w))),
        });
    }
    let out_w = lin(store, format!("{prefix}.output.w"), w, cfg.embed_dim);
    let out_b = store.add(format!("{prefix}.output.b"), Mat::zeros((1, cfg.embed_dim)));
    EncoderIds {
        in_w,
        in_b,
        layers,
        out_w,
        out_b,
    }
}

fn encode_graph<'t>(tape: &'t Tape, p: &Bound<'t>, ids: &EncoderIds, x: Var<'t>, heads: usize) -> Var<'t> {
    let (rows, _) = x.shape();
    let width = p[ids.in_w].shape().1;
    let mut h = x
        .matmul(p[ids.in_w])
        .add_row(p[ids.in_b])
        .add(tape.constant(positional_encoding(rows, width)));
    for l in &ids.layers {
        let n = h.layer_norm(1e-5).mul_row(p[l.ln1_g]).add_row(p[l.ln1_b]);
        h = h.add(crate::net::attention(n, n, p[l.q], p[l.k], p[l.v], p[l.o_w], p[l.o_b], heads));
        let n = h.layer_norm(1e-5).mul_row(p[l.ln2_g]).add_row(p[l.ln2_b]);
        let m = n.matmul(p[l.mlp_w1]).add_row(p[l.mlp_b1]).silu().matmul(p[l.mlp_w2]).add_row(p[l.mlp_b2]);
        h = h.add(m);
    }
    let pooled = h.sum_rows().scale(1.0 / rows as f64);
    unit_rows(pooled.matmul(p[ids.out_w]).add_row(p[ids.out_b]))
}

/// Scales each row to unit length.
fn unit_rows(v: Var<'_>) -> Var<'_> {
    let inv = v.square().sum_cols().offset(1e-12).ln().scale(-0.5).exp();
    v.mul_col(inv)
}

/// Text and motion encoders sharing a 512-d space.
#[derive(Debug, Clone)]
pub struct Evaluator {
    config: EvaluatorConfig,
    params: ParamStore,
    motion: EncoderIds,
    text: EncoderIds,
    logit_scale: ParamId,
    trained: bool,
    /// Per-agent normalisation applied to motion input.
    pub norm: Denormalizer,
}

impl Evaluator {
    pub fn new(config: EvaluatorConfig, norm: Denormalizer, seed: u64) -> Result<Self> {
        config.validate()?;
        if norm.mean.ncols() != representation_width(config.joints) {
            return Err(Error::shape("normalisation width does not match joints"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let motion = build_encoder(&mut params, &mut rng, "motion", config.motion_width(), &config);
        let text = build_encoder(&mut params, &mut rng, "text", config.text_width, &config);
        let logit_scale = params.add("logit_scale", Mat::from_elem((1, 1), (1.0f64 / 0.07).ln()));
        Ok(Self {
            config,
            params,
            motion,
            text,
            logit_scale,
            trained: false,
            norm,
        })
    }

    pub fn config(&self) -> &EvaluatorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Set by training or when weights are restored from a checkpoint.
    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn mark_trained(&mut self) {
        self.trained = true;
    }

    pub fn temperature(&self) -> f64 {
        1.0 / self.params.get(self.logit_scale)[[0, 0]].exp().min(MAX_LOGIT_SCALE)
    }

    /// Normalised `T × 2C` input for an interaction.
    pub fn motion_input(&self, sample: &InteractionSample) -> Result<Mat> {
        let c = representation_width(self.config.joints);
        if sample.joint_count() != self.config.joints {
            return Err(Error::shape(format!(
                "sample has {} joints, evaluator expects {}",
                sample.joint_count(),
                self.config.joints
            )));
        }
        let t = sample.frames();
        let mut x = Mat::zeros((t, 2 * c));
        for (a, agent) in sample.agents.iter().enumerate() {
            let rep = agent.to_representation();
            for f in 0..t {
                for k in 0..c {
                    x[[f, a * c + k]] = (rep[[f, k]] as f64 - self.norm.mean[[0, k]]) / self.norm.std[[0, k]];
                }
            }
        }
        Ok(x)
    }

    fn motion_graph<'t>(&self, tape: &'t Tape, p: &Bound<'t>, x: &Mat, valid: usize) -> Result<Var<'t>> {
        if x.ncols() != self.config.motion_width() || valid == 0 || valid > x.nrows() {
            return Err(Error::shape(format!("motion input {:?} with {valid} valid frames", x.dim())));
        }
        let v = tape.constant(x.slice(ndarray::s![..valid, ..]).to_owned());
        Ok(encode_graph(tape, p, &self.motion, v, self.config.head_count))
    }

    fn text_graph<'t>(&self, tape: &'t Tape, p: &Bound<'t>, prompt: &TokenizedPrompt) -> Result<Var<'t>> {
        let x = crate::net::text_tokens(tape, prompt, self.config.text_width)?;
        Ok(encode_graph(tape, p, &self.text, x, self.config.head_count))
    }

    /// Unit-norm embedding of an interaction (`1 × embed_dim`).
    pub fn encode_motion(&self, sample: &InteractionSample) -> Result<Mat> {
        let x = self.motion_input(sample)?;
        self.encode_motion_input(&x, x.nrows())
    }

    /// Embedding of the first `valid` frames of a prepared input; anything
    /// after them is ignored.
    pub fn encode_motion_input(&self, x: &Mat, valid: usize) -> Result<Mat> {
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        Ok(self.motion_graph(&tape, &p, x, valid)?.value().as_ref().clone())
    }

    pub fn encode_text(&self, prompt: &TokenizedPrompt) -> Result<Mat> {
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        Ok(self.text_graph(&tape, &p, prompt)?.value().as_ref().clone())
    }

    pub fn encode_motions(&self, samples: &[InteractionSample]) -> Result<Mat> {
        stack(samples.iter().map(|s| self.encode_motion(s)), self.config.embed_dim)
    }

    pub fn encode_texts(&self, prompts: &[TokenizedPrompt]) -> Result<Mat> {
        stack(prompts.iter().map(|p| self.encode_text(p)), self.config.embed_dim)
    }

    /// Cosine similarity between a text and a motion embedding.
    pub fn similarity(text: &Mat, motion: &Mat) -> f64 {
        text.iter().zip(motion.iter()).map(|(a, b)| a * b).sum()
    }
}

fn stack(rows: impl Iterator<Item = Result<Mat>>, dim: usize) -> Result<Mat> {
    let rows: Vec<Mat> = rows.collect::<Result<_>>()?;
    let mut out = Mat::zeros((rows.len(), dim));
    for (i, r) in rows.iter().enumerate() {
        out.row_mut(i).assign(&r.row(0));
    }
    Ok(out)
}

fn contrastive_graph<'t>(text: Var<'t>, motion: Var<'t>, logit_scale: Var<'t>) -> Var<'t> {
    let b = text.shape().0;
    let logits = text.matmul(motion.t()).scale_by(logit_scale);
    let eye = text.tape().constant(Mat::eye(b));
    let t2m = logits.log_softmax().mul(eye).sum();
    let m2t = logits.t().log_softmax().mul(eye).sum();
    t2m.add(m2t).scale(-0.5 / b as f64)
}

/// Symmetric cross-entropy over `text · motionᵀ / temperature` with matched
/// pairs on the diagonal.
pub fn contrastive_loss(text: &Mat, motion: &Mat, temperature: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(Error::BadArgument(format!("temperature must be positive, got {temperature}")));
    }
    if text.dim() != motion.dim() || text.nrows() < 2 {
        return Err(Error::BadArgument(format!("need matching B >= 2 batches, got {:?} and {:?}", text.dim(), motion.dim())));
    }
    let tape = Tape::new();
    let scale = tape.scalar(1.0 / temperature);
    Ok(contrastive_graph(tape.constant(text.clone()), tape.constant(motion.clone()), scale).item())
}

/// One evaluator training example.
#[derive(Debug, Clone)]
pub struct EvalItem {
    /// Normalised `T × 2C` input (see [`Evaluator::motion_input`]).
    pub motion: Mat,
    pub prompt: TokenizedPrompt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub held_out: usize,
    pub seed: u64,
}

impl Default for EvalTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            optimizer: AdamWConfig {
                lr: 1e-3,
                ..AdamWConfig::default()
            },
            held_out: 500,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalTrainReport {
    pub epoch_losses: Vec<f64>,
    pub train_indices: Vec<usize>,
    pub held_out_indices: Vec<usize>,
    /// Motion embeddings of the held-out items, in `held_out_indices` order.
    pub bank: EmbeddingBank,
}

/// Trains the evaluator contrastively. `held_out` items (chosen by a seeded
/// shuffle) never receive gradient updates; their motion embeddings form
/// the reference bank.
pub fn train_evaluator(evaluator: &mut Evaluator, items: &[EvalItem], cfg: &EvalTrainConfig) -> Result<EvalTrainReport> {
    if items.len() <= cfg.held_out || items.len() - cfg.held_out < 2 {
        return Err(Error::DatasetTooSmall(format!(
            "{} items cannot hold out {} and still train",
            items.len(),
            cfg.held_out
        )));
    }
    if cfg.batch_size < 2 {
        return Err(Error::Config("evaluator batch_size must be at least 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut rng);
    let held_out_indices: Vec<usize> = order[..cfg.held_out].to_vec();
    let mut train_indices: Vec<usize> = order[cfg.held_out..].to_vec();
    let mut opt = AdamW::new(cfg.optimizer.clone(), &evaluator.params);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        train_indices.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in train_indices.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let tape = Tape::new();
            let p = evaluator.params.bind(&tape, true);
            let mut ms = Vec::new();
            let mut ts = Vec::new();
            for &i in chunk {
                ms.push(evaluator.motion_graph(&tape, &p, &items[i].motion, items[i].motion.nrows())?);
                ts.push(evaluator.text_graph(&tape, &p, &items[i].prompt)?);
            }
            let scale = p[evaluator.logit_scale];
            let clamped = if scale.value()[[0, 0]] > MAX_LOGIT_SCALE.ln() {
                tape.scalar(MAX_LOGIT_SCALE)
            } else {
                scale.exp()
            };
            let loss = contrastive_graph(Var::concat_rows(&ts), Var::concat_rows(&ms), clamped);
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss("contrastive".into()));
            }
            let grads = p.grads(&tape.backward(loss));
            opt.step(&mut evaluator.params, &grads, cfg.optimizer.lr);
            sum += value;
            batches += 1;
        }
        epoch_losses.push(sum / batches.max(1) as f64);
    }
    evaluator.trained = true;
    let bank = EmbeddingBank {
        embeddings: stack(
            held_out_indices
                .iter()
                .map(|&i| evaluator.encode_motion_input(&items[i].motion, items[i].motion.nrows())),
            evaluator.config.embed_dim,
        )?,
    };
    Ok(EvalTrainReport {
        epoch_losses,
        train_indices,
        held_out_indices,
        bank,
    })
}

/// Reference embeddings, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBank {
    pub embeddings: Mat,
}

impl EmbeddingBank {
    pub fn len(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(BANK_MAGIC)?;
        w.write_all(&(self.embeddings.nrows() as u32).to_le_bytes())?;
        w.write_all(&(self.embeddings.ncols() as u32).to_le_bytes())?;
        for &x in self.embeddings.iter() {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 16 || &bytes[..8] != BANK_MAGIC {
            return Err(Error::corrupt(path, "bad magic or header"));
        }
        let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let payload = &bytes[16..];
        if payload.len() != n * d * 4 {
            return Err(Error::corrupt(path, format!("expected {} payload bytes, found {}", n * d * 4, payload.len())));
        }
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok(Self {
            embeddings: Mat::from_shape_vec((n, d), values).expect("sized above"),
        })
    }
}

fn dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn mean_cov(x: &Mat) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, d) = x.dim();
    let mean = x.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let centered = x - &mean;
    let c = centered.t().dot(&centered) / (n as f64 - 1.0);
    (
        DMatrix::from_iterator(d, 1, mean.iter().copied()),
        DMatrix::from_row_iterator(d, d, c.iter().copied()),
    )
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

pub const FID_EPS: f64 = 1e-6;

/// Fréchet distance between Gaussian fits. Both covariances get `1e-6·I`.
pub fn fid(real: &Mat, generated: &Mat) -> Result<f64> {
    if real.nrows() < 2 || generated.nrows() < 2 {
        return Err(Error::DatasetTooSmall("FID needs at least two embeddings per set".into()));
    }
    if real.ncols() != generated.ncols() {
        return Err(Error::shape("embedding widths differ"));
    }
    let (mr, cr) = mean_cov(real);
    let (mg, cg) = mean_cov(generated);
    fid_gaussian(&mr, &cr, &mg, &cg)
}

/// `‖μr - μg‖² + tr(Σr + Σg - 2 (Σr^½ Σg Σr^½)^½)` after regularisation.
pub fn fid_gaussian(mr: &DMatrix<f64>, cr: &DMatrix<f64>, mg: &DMatrix<f64>, cg: &DMatrix<f64>) -> Result<f64> {
    let d = cr.nrows();
    let eye = DMatrix::<f64>::identity(d, d) * FID_EPS;
    let cr = cr + &eye;
    let cg = cg + &eye;
    if cr.iter().chain(cg.iter()).any(|v| !v.is_finite()) {
        return Err(Error::DegenerateCovariance("non-finite covariance".into()));
    }
    let sr = sym_sqrt(&cr);
    let inner = sym_sqrt(&(&sr * &cg * &sr));
    let diff = mr - mg;
    let v = diff.norm_squared() + cr.trace() + cg.trace() - 2.0 * inner.trace();
    Ok(v.max(0.0))
}

/// Top-1/2/3 retrieval rates. For each motion, its own text competes with
/// `pool_size - 1` distractor texts drawn from other items; ties go to the
/// true text.
pub fn r_precision(text: &Mat, motion: &Mat, pool_size: usize, rng: &mut ChaCha8Rng) -> Result<[f64; 3]> {
    let n = text.nrows();
    if text.dim() != motion.dim() {
        return Err(Error::shape("text and motion embeddings differ in shape"));
    }
    if pool_size < 1 || n < pool_size {
        return Err(Error::DatasetTooSmall(format!("{n} samples for pool size {pool_size}")));
    }
    let mut hits = [0usize; 3];
    let mut others: Vec<usize> = Vec::with_capacity(n - 1);
    for i in 0..n {
        others.clear();
        others.extend((0..n).filter(|&j| j != i));
        let (pool, _) = others.partial_shuffle(rng, pool_size - 1);
        let own = dist(motion.row(i), text.row(i));
        let rank = pool.iter().filter(|&&j| dist(motion.row(i), text.row(j)) < own).count();
        for (k, h) in hits.iter_mut().enumerate() {
            if rank <= k {
                *h += 1;
            }
        }
    }
    Ok(hits.map(|h| h as f64 / n as f64))
}

/// Mean distance between matched text and motion embeddings.
pub fn mm_dist(text: &Mat, motion: &Mat) -> Result<f64> {
    if text.dim() != motion.dim() || text.nrows() == 0 {
        return Err(Error::DatasetTooSmall("need matched, non-empty embeddings".into()));
    }
    Ok((0..text.nrows()).map(|i| dist(text.row(i), motion.row(i))).sum::<f64>() / text.nrows() as f64)
}

fn pair_mean(embs: &Mat, n_pairs: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let n = embs.nrows();
    if n < 2 {
        return Err(Error::DatasetTooSmall(format!("{n} embeddings")));
    }
    let all = n * (n - 1) / 2;
    if n_pairs >= all {
        let mut s = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                s += dist(embs.row(i), embs.row(j));
            }
        }
        return Ok(s / all as f64);
    }
    let mut s = 0.0;
    for _ in 0..n_pairs {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        s += dist(embs.row(i), embs.row(j));
    }
    Ok(s / n_pairs as f64)
}

/// Mean distance over `n_pairs` random distinct pairs (all pairs when
/// `n_pairs` covers them).
pub fn diversity(embs: &Mat, n_pairs: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    pair_mean(embs, n_pairs, rng)
}

/// Mean distance between generations for the same prompt, averaged over prompts.
pub fn multimodality(groups: &[Mat], n_pairs: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::DatasetTooSmall("no prompt groups".into()));
    }
    let mut s = 0.0;
    for g in groups {
        s += pair_mean(g, n_pairs, rng)?;
    }
    Ok(s / groups.len() as f64)
}

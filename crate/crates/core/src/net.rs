//! The dual-agent denoiser.
//!
//! Each round applies, per agent, a word-level conditioning block (motion
//! queries attending to individual text tokens) followed by a motion-motion
//! interaction block (self-attention, then cross-attention to the partner).
//! One weight set per round serves both agents.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::motion::representation_width;
use crate::params::{init_linear, init_normal, Bound, ParamId, ParamStore};
use crate::tape::{Mat, Tape, Var};
use crate::text::TokenizedPrompt;
use crate::{Error, Result};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpdateScheme {
    /// Both agents update from the partner's state at the start of the round.
    #[default]
    Parallel,
    /// One agent updates, then the other sees the fresh state.
    Alternating,
}

impl std::str::FromStr for UpdateScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parallel" => Ok(Self::Parallel),
            "alternating" => Ok(Self::Alternating),
            other => Err(Error::BadArgument(format!("unknown update scheme {other:?}"))),
        }
    }
}

/// Which agent goes first under [`UpdateScheme::Alternating`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AgentOrder {
    #[default]
    FirstThenSecond,
    SecondThenFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub joints: usize,
    pub block_pairs: usize,
    pub model_width: usize,
    pub head_count: usize,
    pub text_width: usize,
    pub max_frames: usize,
    pub diffusion_steps: usize,
    #[serde(default)]
    pub update_scheme: UpdateScheme,
}

impl ModelConfig {
    /// Full-size layout: 12 rounds, 22 joints, 768-wide text features.
    pub fn full() -> Self {
        Self {
            joints: 22,
            block_pairs: 12,
            model_width: 512,
            head_count: 8,
            text_width: 768,
            max_frames: 300,
            diffusion_steps: 1000,
            update_scheme: UpdateScheme::Parallel,
        }
    }

    pub fn toy() -> Self {
        Self {
            joints: 22,
            block_pairs: 2,
            model_width: 64,
            head_count: 4,
            text_width: 32,
            max_frames: 128,
            diffusion_steps: 1000,
            update_scheme: UpdateScheme::Parallel,
        }
    }

    pub fn channel_width(&self) -> usize {
        representation_width(self.joints)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.joints < 2 {
            return bad(format!("joints = {}", self.joints));
        }
        if self.block_pairs == 0 {
            return bad("block_pairs must be at least 1".into());
        }
        if self.head_count == 0 || self.model_width % self.head_count != 0 {
            return bad(format!(
                "model_width {} not divisible by head_count {}",
                self.model_width, self.head_count
            ));
        }
        if self.model_width % 2 != 0 {
            return bad("model_width must be even".into());
        }
        if self.text_width == 0 || self.max_frames == 0 || self.diffusion_steps == 0 {
            return bad("text_width, max_frames and diffusion_steps must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdaLnIds {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct AttnIds {
    pub q: ParamId,
    pub k: ParamId,
    pub v: ParamId,
    pub o_w: ParamId,
    pub o_b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct WordBlockIds {
    pub ada_motion: AdaLnIds,
    pub ada_text: AdaLnIds,
    pub attn: AttnIds,
}

#[derive(Debug, Clone, Copy)]
pub struct InteractionBlockIds {
    pub ada_self: AdaLnIds,
    pub self_attn: AttnIds,
    pub ada_query: AdaLnIds,
    pub ada_partner: AdaLnIds,
    pub cross_attn: AttnIds,
}

#[derive(Debug, Clone, Copy)]
pub struct RoundIds {
    pub word: WordBlockIds,
    pub interact: InteractionBlockIds,
}

#[derive(Debug, Clone)]
pub struct DenoiserIds {
    pub time_w1: ParamId,
    pub time_b1: ParamId,
    pub time_w2: ParamId,
    pub time_b2: ParamId,
    pub in_w: ParamId,
    pub in_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub rounds: Vec<RoundIds>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Standard,
    Dense,
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
    init: Init,
}

impl Builder<'_> {
    fn linear(&mut self, name: String, fan_in: usize, fan_out: usize) -> ParamId {
        let w = init_linear(&mut self.rng, fan_in, fan_out);
        self.store.add(name, w)
    }

    fn bias(&mut self, name: String, width: usize) -> ParamId {
        let b = match self.init {
            Init::Standard => Mat::zeros((1, width)),
            Init::Dense => init_normal(&mut self.rng, 1, width, 0.1),
        };
        self.store.add(name, b)
    }

    fn adaln(&mut self, prefix: &str, cond: usize, width: usize) -> AdaLnIds {
        let (w, b) = match self.init {
            Init::Standard => (Mat::zeros((cond, 2 * width)), Mat::zeros((1, 2 * width))),
            Init::Dense => (
                init_normal(&mut self.rng, cond, 2 * width, 0.3 / (cond as f64).sqrt()),
                init_normal(&mut self.rng, 1, 2 * width, 0.1),
            ),
        };
        AdaLnIds {
            w: self.store.add(format!("{prefix}.ada.w"), w),
            b: self.store.add(format!("{prefix}.ada.b"), b),
        }
    }

    fn attn(&mut self, prefix: &str, q_in: usize, kv_in: usize, width: usize) -> AttnIds {
        AttnIds {
            q: self.linear(format!("{prefix}.q"), q_in, width),
            k: self.linear(format!("{prefix}.k"), kv_in, width),
            v: self.linear(format!("{prefix}.v"), kv_in, width),
            o_w: self.linear(format!("{prefix}.o.w"), width, width),
            o_b: self.bias(format!("{prefix}.o.b"), width),
        }
    }
}

/// Denoiser weights plus their layout.
#[derive(Debug, Clone)]
pub struct Denoiser {
    config: ModelConfig,
    params: ParamStore,
    ids: DenoiserIds,
}

impl Denoiser {
    /// Standard initialisation: modulation producers and biases start at zero,
    /// so every AdaLN begins as a plain layer norm.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::build(config, seed, Init::Standard)
    }

    /// Every tensor random, including modulation producers and biases.
    /// Useful for gradient probes where zero-initialised paths would hide bugs.
    pub fn new_dense(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::build(config, seed, Init::Dense)
    }

    fn build(config: ModelConfig, seed: u64, init: Init) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let w = config.model_width;
        let d = config.text_width;
        let c = config.channel_width();
        let mut b = Builder {
            store: &mut params,
            rng: ChaCha8Rng::seed_from_u64(seed),
            init,
        };
        let time_w1 = b.linear("time.w1".into(), w, w);
        let time_b1 = b.bias("time.b1".into(), w);
        let time_w2 = b.linear("time.w2".into(), w, w);
        let time_b2 = b.bias("time.b2".into(), w);
        let in_w = b.linear("input.w".into(), c, w);
        let in_b = b.bias("input.b".into(), w);
        let mut rounds = Vec::with_capacity(config.block_pairs);
        for r in 0..config.block_pairs {
            let word = WordBlockIds {
                ada_motion: b.adaln(&format!("round{r}.word.motion"), w, w),
                ada_text: b.adaln(&format!("round{r}.word.text"), w, d),
                attn: b.attn(&format!("round{r}.word.attn"), w, d, w),
            };
            let interact = InteractionBlockIds {
                ada_self: b.adaln(&format!("round{r}.self"), w, w),
                self_attn: b.attn(&format!("round{r}.self.attn"), w, w, w),
                ada_query: b.adaln(&format!("round{r}.cross.query"), w, w),
                ada_partner: b.adaln(&format!("round{r}.cross.partner"), w, w),
                cross_attn: b.attn(&format!("round{r}.cross.attn"), w, w, w),
            };
            rounds.push(RoundIds { word, interact });
        }
        let out_w = b.linear("output.w".into(), w, c);
        let out_b = b.bias("output.b".into(), c);
        let ids = DenoiserIds {
            time_w1,
            time_b1,
            time_w2,
            time_b2,
            in_w,
            in_b,
            out_w,
            out_b,
            rounds,
        };
        Ok(Self { config, params, ids })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn ids(&self) -> &DenoiserIds {
        &self.ids
    }

    pub fn set_update_scheme(&mut self, scheme: UpdateScheme) {
        self.config.update_scheme = scheme;
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t >= self.config.diffusion_steps {
            return Err(Error::OutOfRange(format!(
                "timestep {t} not in [0, {})",
                self.config.diffusion_steps
            )));
        }
        Ok(())
    }

    /// Learned timestep embedding (sinusoid, linear, SiLU, linear).
    pub fn timestep_embedding(&self, t: usize) -> Result<Mat> {
        self.check_t(t)?;
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        Ok(self.time_graph(&tape, &p, t).value().as_ref().clone())
    }

    fn time_graph<'t>(&self, tape: &'t Tape, p: &Bound<'t>, t: usize) -> Var<'t> {
        let ids = &self.ids;
        let s = tape.constant(sinusoid(t as f64, self.config.model_width));
        s.matmul(p[ids.time_w1])
            .add_row(p[ids.time_b1])
            .silu()
            .matmul(p[ids.time_w2])
            .add_row(p[ids.time_b2])
    }

    /// Graph-level forward pass. `x1`, `x2` are `T × channels` in normalised
    /// units; returns the predicted clean representations.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        p: &Bound<'t>,
        x1: Var<'t>,
        x2: Var<'t>,
        t: usize,
        prompt: &TokenizedPrompt,
        order: AgentOrder,
    ) -> Result<(Var<'t>, Var<'t>)> {
        self.check_t(t)?;
        let cfg = &self.config;
        let (frames, ch) = x1.shape();
        if x2.shape() != (frames, ch) || ch != cfg.channel_width() {
            return Err(Error::shape(format!(
                "agent inputs {:?} and {:?}, expected T x {}",
                x1.shape(),
                x2.shape(),
                cfg.channel_width()
            )));
        }
        if frames == 0 || frames > cfg.max_frames {
            return Err(Error::OutOfRange(format!("{frames} frames (max {})", cfg.max_frames)));
        }
        let text = text_tokens(tape, prompt, cfg.text_width)?;
        let temb = self.time_graph(tape, p, t).silu();
        let pe = tape.constant(positional_encoding(frames, cfg.model_width));
        let ids = &self.ids;
        let embed = |x: Var<'t>| x.matmul(p[ids.in_w]).add_row(p[ids.in_b]).add(pe);
        let mut h1 = embed(x1);
        let mut h2 = embed(x2);
        let heads = cfg.head_count;
        for r in &ids.rounds {
            let step = |me: Var<'t>, partner: Var<'t>| {
                let u = word_conditioning_block(me, text, temb, p, &r.word, heads);
                interaction_block(u, partner, temb, p, &r.interact, heads)
            };
            match (cfg.update_scheme, order) {
                (UpdateScheme::Parallel, _) => {
                    let n1 = step(h1, h2);
                    let n2 = step(h2, h1);
                    h1 = n1;
                    h2 = n2;
                }
                (UpdateScheme::Alternating, AgentOrder::FirstThenSecond) => {
                    h1 = step(h1, h2);
                    h2 = step(h2, h1);
                }
                (UpdateScheme::Alternating, AgentOrder::SecondThenFirst) => {
                    h2 = step(h2, h1);
                    h1 = step(h1, h2);
                }
            }
        }
        let project = |h: Var<'t>| h.matmul(p[ids.out_w]).add_row(p[ids.out_b]);
        Ok((project(h1), project(h2)))
    }

    /// Value-level forward pass with the default agent order.
    pub fn denoise(&self, x1: &Mat, x2: &Mat, t: usize, prompt: &TokenizedPrompt) -> Result<(Mat, Mat)> {
        self.denoise_ordered(x1, x2, t, prompt, AgentOrder::FirstThenSecond)
    }

    pub fn denoise_ordered(
        &self,
        x1: &Mat,
        x2: &Mat,
        t: usize,
        prompt: &TokenizedPrompt,
        order: AgentOrder,
    ) -> Result<(Mat, Mat)> {
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let (a, b) = self.forward(
            &tape,
            &p,
            tape.constant(x1.clone()),
            tape.constant(x2.clone()),
            t,
            prompt,
            order,
        )?;
        let out = (a.value().as_ref().clone(), b.value().as_ref().clone());
        Ok(out)
    }
}

/// Valid text rows of an embedded prompt as a constant. Masked rows never
/// enter the graph, so their contents cannot influence anything.
pub fn text_tokens<'t>(tape: &'t Tape, prompt: &TokenizedPrompt, width: usize) -> Result<Var<'t>> {
    let emb = prompt.embeddings()?;
    if emb.ncols() != width || emb.nrows() != prompt.mask.len() {
        return Err(Error::shape(format!("text embeddings {:?}, expected width {width}", emb.dim())));
    }
    let rows = prompt.valid_positions();
    if rows.is_empty() {
        return Err(Error::BadArgument("prompt has no valid tokens".into()));
    }
    let mut m = Mat::zeros((rows.len(), width));
    for (k, &r) in rows.iter().enumerate() {
        m.row_mut(k).assign(&emb.row(r));
    }
    Ok(tape.constant(m))
}

/// `[sin(x f_0) .. sin(x f_{h-1}), cos(x f_0) .. cos(x f_{h-1})]` with
/// geometric frequencies `f_i = 10000^(-i/h)`, `h = width/2`.
pub fn sinusoid(x: f64, width: usize) -> Mat {
    let half = width / 2;
    let mut m = Mat::zeros((1, width));
    for i in 0..half {
        let f = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        m[[0, i]] = (x * f).sin();
        m[[0, half + i]] = (x * f).cos();
    }
    m
}

pub fn positional_encoding(frames: usize, width: usize) -> Mat {
    let mut m = Mat::zeros((frames, width));
    for t in 0..frames {
        m.row_mut(t).assign(&sinusoid(t as f64, width).row(0));
    }
    m
}

/// Layer norm without affine parameters, then `* (1 + scale) + shift` where
/// `[scale | shift] = cond · W + b`. `cond` is the activated timestep embedding.
pub fn adaln_modulate<'t>(x: Var<'t>, cond: Var<'t>, w: Var<'t>, b: Var<'t>) -> Var<'t> {
    let d = x.shape().1;
    let m = cond.matmul(w).add_row(b);
    let scale = m.slice_cols(0, d).offset(1.0);
    let shift = m.slice_cols(d, d);
    x.layer_norm(LN_EPS).mul_row(scale).add_row(shift)
}

fn modulate<'t>(x: Var<'t>, cond: Var<'t>, p: &Bound<'t>, ids: &AdaLnIds) -> Var<'t> {
    adaln_modulate(x, cond, p[ids.w], p[ids.b])
}

/// Multi-head scaled dot-product attention with output projection.
#[allow(clippy::too_many_arguments)]
pub fn attention<'t>(
    q_in: Var<'t>,
    kv_in: Var<'t>,
    wq: Var<'t>,
    wk: Var<'t>,
    wv: Var<'t>,
    wo: Var<'t>,
    bo: Var<'t>,
    heads: usize,
) -> Var<'t> {
    let q = q_in.matmul(wq);
    let k = kv_in.matmul(wk);
    let v = kv_in.matmul(wv);
    let width = q.shape().1;
    let dh = width / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let outs: Vec<Var<'t>> = (0..heads)
        .map(|h| {
            let qh = q.slice_cols(h * dh, dh);
            let kh = k.slice_cols(h * dh, dh);
            let vh = v.slice_cols(h * dh, dh);
            qh.matmul(kh.t()).scale(scale).softmax().matmul(vh)
        })
        .collect();
    let cat = if heads == 1 { outs[0] } else { Var::concat_cols(&outs) };
    cat.matmul(wo).add_row(bo)
}

fn attend<'t>(q_in: Var<'t>, kv_in: Var<'t>, p: &Bound<'t>, ids: &AttnIds, heads: usize) -> Var<'t> {
    attention(q_in, kv_in, p[ids.q], p[ids.k], p[ids.v], p[ids.o_w], p[ids.o_b], heads)
}

/// Motion tokens attend to the valid text tokens; residual update.
pub fn word_conditioning_block<'t>(
    tokens: Var<'t>,
    text: Var<'t>,
    cond: Var<'t>,
    p: &Bound<'t>,
    ids: &WordBlockIds,
    heads: usize,
) -> Var<'t> {
    let q_in = modulate(tokens, cond, p, &ids.ada_motion);
    let kv_in = modulate(text, cond, p, &ids.ada_text);
    tokens.add(attend(q_in, kv_in, p, &ids.attn, heads))
}

/// Self-attention then cross-attention to the partner, both residual.
pub fn interaction_block<'t>(
    tokens: Var<'t>,
    partner: Var<'t>,
    cond: Var<'t>,
    p: &Bound<'t>,
    ids: &InteractionBlockIds,
    heads: usize,
) -> Var<'t> {
    let n = modulate(tokens, cond, p, &ids.ada_self);
    let a = tokens.add(attend(n, n, p, &ids.self_attn, heads));
    let q_in = modulate(a, cond, p, &ids.ada_query);
    let kv_in = modulate(partner, cond, p, &ids.ada_partner);
    a.add(attend(q_in, kv_in, p, &ids.cross_attn, heads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{encode, StubEmbedder};
    use rand::Rng;

    fn tiny() -> ModelConfig {
        ModelConfig {
            joints: 3,
            block_pairs: 2,
            model_width: 8,
            head_count: 2,
            text_width: 6,
            max_frames: 16,
            diffusion_steps: 1000,
            update_scheme: UpdateScheme::Parallel,
        }
    }

    fn random_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn config_validation() {
        let mut c = tiny();
        c.head_count = 3;
        assert!(c.validate().is_err());
        c = tiny();
        c.block_pairs = 0;
        assert!(c.validate().is_err());
        assert!(ModelConfig::full().validate().is_ok());
        assert_eq!(ModelConfig::full().channel_width(), 262);
    }

    #[test]
    fn parameters_are_shared_between_agents() {
        let d = Denoiser::new(tiny(), 0).unwrap();
        assert!(d.params().names().iter().all(|n| !n.contains("agent")));
        let per_round = 2 * 2 + 5 + 3 * 2 + 2 * 5;
        assert_eq!(d.params().len(), 8 + 2 * per_round);
    }

    #[test]
    fn timestep_embedding_distinct_and_checked() {
        let d = Denoiser::new_dense(tiny(), 1).unwrap();
        let a = d.timestep_embedding(0).unwrap();
        let b = d.timestep_embedding(999).unwrap();
        assert!((&a - &b).iter().map(|x| x * x).sum::<f64>() > 0.0);
        assert_eq!(a, d.timestep_embedding(0).unwrap());
        assert!(matches!(d.timestep_embedding(1000), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn zero_producers_give_plain_layer_norm() {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = tape.constant(random_mat(&mut rng, 3, 4));
        let cond = tape.constant(random_mat(&mut rng, 1, 5));
        let out = adaln_modulate(x, cond, tape.constant(Mat::zeros((5, 8))), tape.constant(Mat::zeros((1, 8))));
        assert_eq!(*out.value(), *x.layer_norm(LN_EPS).value());
        let flat = tape.constant(Mat::from_elem((2, 4), 3.0));
        let out = adaln_modulate(flat, cond, tape.constant(Mat::zeros((5, 8))), tape.constant(Mat::zeros((1, 8))));
        assert!(out.value().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_rolled_attention_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_mat(&mut rng, 2, 4);
        let y = random_mat(&mut rng, 2, 4);
        let ws: Vec<Mat> = (0..4).map(|_| random_mat(&mut rng, 4, 4)).collect();
        let bo = random_mat(&mut rng, 1, 4);
        let tape = Tape::new();
        let out = attention(
            tape.constant(x.clone()),
            tape.constant(y.clone()),
            tape.constant(ws[0].clone()),
            tape.constant(ws[1].clone()),
            tape.constant(ws[2].clone()),
            tape.constant(ws[3].clone()),
            tape.constant(bo.clone()),
            2,
        );
        // scalar loops
        let mm = |a: &Mat, b: &Mat| {
            let mut o = Mat::zeros((a.nrows(), b.ncols()));
            for i in 0..a.nrows() {
                for j in 0..b.ncols() {
                    for k in 0..a.ncols() {
                        o[[i, j]] += a[[i, k]] * b[[k, j]];
                    }
                }
            }
            o
        };
        let (q, k, v) = (mm(&x, &ws[0]), mm(&y, &ws[1]), mm(&y, &ws[2]));
        let mut cat = Mat::zeros((2, 4));
        for h in 0..2 {
            for i in 0..2 {
                let mut s = [0.0; 2];
                for j in 0..2 {
                    for c in 0..2 {
                        s[j] += q[[i, 2 * h + c]] * k[[j, 2 * h + c]];
                    }
                    s[j] /= 2f64.sqrt();
                }
                let m = s[0].max(s[1]);
                let e = [(s[0] - m).exp(), (s[1] - m).exp()];
                let z = e[0] + e[1];
                for c in 0..2 {
                    cat[[i, 2 * h + c]] = (e[0] * v[[0, 2 * h + c]] + e[1] * v[[1, 2 * h + c]]) / z;
                }
            }
        }
        let mut expect = mm(&cat, &ws[3]);
        for i in 0..2 {
            for j in 0..4 {
                expect[[i, j]] += bo[[0, j]];
            }
        }
        for (a, b) in out.value().iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn single_valid_token_gets_all_the_weight() {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = tape.constant(random_mat(&mut rng, 5, 4));
        let k = tape.constant(random_mat(&mut rng, 1, 4));
        let w = q.matmul(k.t()).softmax();
        assert!(w.value().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn zero_output_projections_make_blocks_identity() {
        let mut d = Denoiser::new_dense(tiny(), 5).unwrap();
        let ids = d.ids().rounds[0];
        for id in [ids.word.attn.o_w, ids.word.attn.o_b, ids.interact.self_attn.o_w, ids.interact.self_attn.o_b, ids.interact.cross_attn.o_w, ids.interact.cross_attn.o_b] {
            d.params_mut().get_mut(id).fill(0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let tape = Tape::new();
        let p = d.params().bind(&tape, false);
        let x = tape.constant(random_mat(&mut rng, 4, 8));
        let y = tape.constant(random_mat(&mut rng, 4, 8));
        let text = tape.constant(random_mat(&mut rng, 3, 6));
        let cond = tape.constant(random_mat(&mut rng, 1, 8));
        let u = word_conditioning_block(x, text, cond, &p, &ids.word, 2);
        assert_eq!(*u.value(), *x.value());
        let v = interaction_block(x, y, cond, &p, &ids.interact, 2);
        assert_eq!(*v.value(), *x.value());
    }

    #[test]
    fn cross_attention_on_self_equals_self_attention_weights() {
        let d = Denoiser::new_dense(tiny(), 7).unwrap();
        let r = d.ids().rounds[0].interact;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let tape = Tape::new();
        let p = d.params().bind(&tape, false);
        let x = tape.constant(random_mat(&mut rng, 4, 8));
        let cond = tape.constant(random_mat(&mut rng, 1, 8));
        let n = modulate(x, cond, &p, &r.ada_self);
        let a = attention(n, n, p[r.cross_attn.q], p[r.cross_attn.k], p[r.cross_attn.v], p[r.cross_attn.o_w], p[r.cross_attn.o_b], 2);
        let b = attend(n, n, &p, &r.cross_attn, 2);
        assert_eq!(*a.value(), *b.value());
    }

    #[test]
    fn masked_text_positions_are_ignored() {
        let d = Denoiser::new_dense(tiny(), 9).unwrap();
        let stub = StubEmbedder::new(6);
        let prompt = encode("one person waves", &stub).unwrap();
        let mut noisy = prompt.clone();
        let e = noisy.embeddings.as_mut().unwrap();
        for k in prompt.valid_len()..77 {
            e.row_mut(k).fill(1e3 * k as f64);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x1 = random_mat(&mut rng, 5, 34);
        let x2 = random_mat(&mut rng, 5, 34);
        assert_eq!(d.denoise(&x1, &x2, 10, &prompt).unwrap(), d.denoise(&x1, &x2, 10, &noisy).unwrap());
    }

    #[test]
    fn residual_path_round_trips_through_projections() {
        let mut cfg = tiny();
        cfg.model_width = 34;
        cfg.head_count = 2;
        let mut d = Denoiser::new_dense(cfg, 11).unwrap();
        let names: Vec<String> = d.params().names().to_vec();
        for name in names {
            let id = d.params().id(&name).unwrap();
            if name.starts_with("round") || name == "input.b" || name == "output.b" {
                d.params_mut().get_mut(id).fill(0.0);
            }
        }
        let ids = d.ids().clone();
        *d.params_mut().get_mut(ids.in_w) = Mat::eye(34);
        *d.params_mut().get_mut(ids.out_w) = Mat::eye(34);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random_mat(&mut rng, 4, 34);
        let prompt = encode("hello", &StubEmbedder::new(6)).unwrap();
        let (a, _) = d.denoise(&x, &x, 3, &prompt).unwrap();
        let expect = &x + &positional_encoding(4, 34);
        assert_eq!(a, expect);
    }

    #[test]
    fn frame_and_width_checks() {
        let d = Denoiser::new(tiny(), 0).unwrap();
        let prompt = encode("hi", &StubEmbedder::new(6)).unwrap();
        let x = Mat::zeros((17, 34));
        assert!(matches!(d.denoise(&x, &x, 0, &prompt), Err(Error::OutOfRange(_))));
        let y = Mat::zeros((4, 33));
        assert!(matches!(d.denoise(&y, &y, 0, &prompt), Err(Error::ShapeMismatch(_))));
        let z = Mat::zeros((4, 34));
        assert!(matches!(d.denoise(&z, &z, 1000, &prompt), Err(Error::OutOfRange(_))));
    }
}

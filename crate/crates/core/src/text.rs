//! Prompt tokenisation and word-level embedding backends.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tape::Mat;
use crate::{Error, Result};

/// Padded prompt length: 75 content tokens plus start and end markers.
pub const MAX_TOKENS: usize = 77;
pub const MAX_CONTENT_TOKENS: usize = MAX_TOKENS - 2;
pub const START_TOKEN: u32 = 49406;
pub const END_TOKEN: u32 = 49407;
const CONTENT_VOCAB: u32 = 49406;

const EMBED_MAGIC: &[u8; 7] = b"T2IEMB1";

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedPrompt {
    pub text: String,
    /// Valid ids only, including both boundary markers.
    pub token_ids: Vec<u32>,
    /// `MAX_TOKENS` flags; true exactly at positions holding real tokens.
    pub mask: Vec<bool>,
    /// `MAX_TOKENS × D`, zero at masked positions. `None` until embedded.
    pub embeddings: Option<Mat>,
}

impl TokenizedPrompt {
    pub fn valid_len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn content_len(&self) -> usize {
        self.token_ids.len() - 2
    }

    pub fn valid_positions(&self) -> Vec<usize> {
        (0..MAX_TOKENS).filter(|&k| self.mask[k]).collect()
    }

    pub fn embeddings(&self) -> Result<&Mat> {
        self.embeddings
            .as_ref()
            .ok_or_else(|| Error::BadArgument("prompt has not been embedded".into()))
    }

    pub fn width(&self) -> Option<usize> {
        self.embeddings.as_ref().map(|e| e.ncols())
    }
}

fn fnv1a(word: &str) -> u32 {
    let mut h: u32 = 0x811c9dc5;
    for b in word.bytes() {
        h ^= b as u32;
        h = h.wrapping_mul(0x0100_0193);
    }
    h
}

/// Lower-cased words and single punctuation characters.
pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() || ch == '\'' {
            cur.push(ch);
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_string());
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub fn token_id(word: &str) -> u32 {
    fnv1a(word) % CONTENT_VOCAB
}

/// Word-level tokenizer. Content past 75 tokens is discarded.
pub fn tokenize(text: &str) -> Result<TokenizedPrompt> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    let mut token_ids = vec![START_TOKEN];
    token_ids.extend(words(trimmed).iter().take(MAX_CONTENT_TOKENS).map(|w| token_id(w)));
    token_ids.push(END_TOKEN);
    let mut mask = vec![false; MAX_TOKENS];
    mask[..token_ids.len()].iter_mut().for_each(|m| *m = true);
    Ok(TokenizedPrompt {
        text: trimmed.to_string(),
        token_ids,
        mask,
        embeddings: None,
    })
}

/// The unconditional prompt: only the two markers, all-zero embeddings.
pub fn null_prompt(width: usize) -> TokenizedPrompt {
    let mut mask = vec![false; MAX_TOKENS];
    mask[0] = true;
    mask[1] = true;
    TokenizedPrompt {
        text: String::new(),
        token_ids: vec![START_TOKEN, END_TOKEN],
        mask,
        embeddings: Some(Mat::zeros((MAX_TOKENS, width))),
    }
}

/// Produces per-token embeddings for a batch of prompts.
pub trait WordEmbedder: Send + Sync {
    fn width(&self) -> usize;
    /// One `MAX_TOKENS × width` matrix per prompt. Rows at masked positions
    /// may hold anything; [`embed_words`] zeroes them.
    fn embed_batch(&self, prompts: &[&TokenizedPrompt]) -> Result<Vec<Mat>>;
}

pub fn embed_words(prompt: &TokenizedPrompt, backend: &dyn WordEmbedder) -> Result<TokenizedPrompt> {
    Ok(embed_many(std::slice::from_ref(prompt), backend)?.remove(0))
}

pub fn embed_many(prompts: &[TokenizedPrompt], backend: &dyn WordEmbedder) -> Result<Vec<TokenizedPrompt>> {
    let refs: Vec<&TokenizedPrompt> = prompts.iter().collect();
    let mats = backend.embed_batch(&refs)?;
    if mats.len() != prompts.len() {
        return Err(Error::BackendUnavailable(format!(
            "backend returned {} embeddings for {} prompts",
            mats.len(),
            prompts.len()
        )));
    }
    prompts
        .iter()
        .zip(mats)
        .map(|(p, mut m)| {
            if m.dim() != (MAX_TOKENS, backend.width()) {
                return Err(Error::shape(format!(
                    "embedding {:?}, expected ({MAX_TOKENS}, {})",
                    m.dim(),
                    backend.width()
                )));
            }
            for (k, &valid) in p.mask.iter().enumerate() {
                if !valid {
                    m.row_mut(k).fill(0.0);
                }
            }
            let mut out = p.clone();
            out.embeddings = Some(m);
            Ok(out)
        })
        .collect()
}

/// Convenience: tokenize then embed.
pub fn encode(text: &str, backend: &dyn WordEmbedder) -> Result<TokenizedPrompt> {
    embed_words(&tokenize(text)?, backend)
}

/// Deterministic embedder: each token id maps to a fixed pseudo-random unit
/// vector, plus a small positional term so word order is visible. Like a
/// causal text encoder, every row also carries a summary of the prefix (the
/// normalised sum of token vectors so far), so the end marker sees the whole
/// prompt.
#[derive(Debug, Clone)]
pub struct StubEmbedder {
    width: usize,
    position_scale: f64,
    context_scale: f64,
}

impl StubEmbedder {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            position_scale: 0.25,
            context_scale: 1.0,
        }
    }

    pub fn token_vector(&self, id: u32) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000_0000 ^ id as u64);
        let mut v: Vec<f64> = (0..self.width).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.iter_mut().for_each(|x| *x /= n);
        v
    }

    fn position_vector(&self, pos: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.width).map(move |i| {
            let freq = 1.0 / 100f64.powf((i / 2 * 2) as f64 / self.width as f64);
            let a = pos as f64 * freq;
            self.position_scale * if i % 2 == 0 { a.sin() } else { a.cos() } / (self.width as f64).sqrt()
        })
    }
}

impl WordEmbedder for StubEmbedder {
    fn width(&self) -> usize {
        self.width
    }

    fn embed_batch(&self, prompts: &[&TokenizedPrompt]) -> Result<Vec<Mat>> {
        Ok(prompts
            .iter()
            .map(|p| {
                let mut m = Mat::zeros((MAX_TOKENS, self.width));
                let mut prefix = vec![0.0; self.width];
                for (k, &id) in p.token_ids.iter().enumerate() {
                    let tok = self.token_vector(id);
                    prefix.iter_mut().zip(&tok).for_each(|(s, t)| *s += t);
                    let norm = prefix.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                    let ctx = self.context_scale / norm;
                    for (((dst, t), q), c) in m.row_mut(k).iter_mut().zip(tok).zip(self.position_vector(k)).zip(&prefix) {
                        *dst = t + q + ctx * c;
                    }
                }
                m
            })
            .collect())
    }
}

/// Runs an out-of-process encoder: `program [args..] <prompts.txt> <out.bin>`.
/// The adapter writes one exchange record per prompt line.
#[derive(Debug, Clone)]
pub struct ExternalEmbedder {
    pub program: PathBuf,
    pub args: Vec<String>,
    pub width: usize,
}

impl ExternalEmbedder {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>, width: usize) -> Self {
        Self {
            program: program.into(),
            args,
            width,
        }
    }
}

impl WordEmbedder for ExternalEmbedder {
    fn width(&self) -> usize {
        self.width
    }

    fn embed_batch(&self, prompts: &[&TokenizedPrompt]) -> Result<Vec<Mat>> {
        let dir = tempfile::tempdir()?;
        let input = dir.path().join("prompts.txt");
        let output = dir.path().join("embeddings.bin");
        let mut f = std::fs::File::create(&input)?;
        for p in prompts {
            writeln!(f, "{}", p.text.replace(['\n', '\r'], " "))?;
        }
        drop(f);
        let status = Command::new(&self.program)
            .args(&self.args)
            .arg(&input)
            .arg(&output)
            .status()
            .map_err(|e| Error::BackendUnavailable(format!("{}: {e}", self.program.display())))?;
        if !status.success() {
            return Err(Error::BackendUnavailable(format!(
                "{} exited with {status}",
                self.program.display()
            )));
        }
        let records = read_embedding_records(&output)?;
        if records.len() != prompts.len() {
            return Err(Error::corrupt(
                &output,
                format!("{} records for {} prompts", records.len(), prompts.len()),
            ));
        }
        records
            .into_iter()
            .map(|m| {
                if m.ncols() != self.width || m.nrows() > MAX_TOKENS {
                    return Err(Error::shape(format!(
                        "external embedding {:?}, expected at most {MAX_TOKENS} x {}",
                        m.dim(),
                        self.width
                    )));
                }
                let mut full = Mat::zeros((MAX_TOKENS, self.width));
                full.slice_mut(ndarray::s![..m.nrows(), ..]).assign(&m);
                Ok(full)
            })
            .collect()
    }
}

pub fn write_embedding_record<W: Write>(w: &mut W, m: &Mat) -> Result<()> {
    w.write_all(EMBED_MAGIC)?;
    w.write_all(&(m.ncols() as u32).to_le_bytes())?;
    w.write_all(&(m.nrows() as u32).to_le_bytes())?;
    for &x in m.iter() {
        w.write_all(&(x as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn write_embedding_records(path: &Path, mats: &[Mat]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for m in mats {
        write_embedding_record(&mut w, m)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads every record in an exchange file.
pub fn read_embedding_records(path: &Path) -> Result<Vec<Mat>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let header = bytes
            .get(pos..pos + 15)
            .ok_or_else(|| Error::corrupt(path, "truncated header"))?;
        if &header[..7] != EMBED_MAGIC {
            return Err(Error::corrupt(path, "bad magic"));
        }
        let d = u32::from_le_bytes(header[7..11].try_into().unwrap()) as usize;
        let l = u32::from_le_bytes(header[11..15].try_into().unwrap()) as usize;
        pos += 15;
        let n = d * l * 4;
        let payload = bytes
            .get(pos..pos + n)
            .ok_or_else(|| Error::corrupt(path, "truncated payload"))?;
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        out.push(Mat::from_shape_vec((l, d), values).expect("sized above"));
        pos += n;
    }
    Ok(out)
}

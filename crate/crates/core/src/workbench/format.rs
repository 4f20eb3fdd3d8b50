//! Binary motion files and parameter checkpoints.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::motion::{representation_width, MotionSequence};
use crate::params::ParamStore;
use crate::tape::Mat;
use crate::{Error, Result};

pub const MOTION_MAGIC: &[u8; 7] = b"T2IMOT1";
pub const MOTION_VERSION: u16 = 1;
/// Positions, velocities, 6D rotations, contacts (`12N − 2` floats per frame).
pub const LAYOUT_FLAT: u8 = 1;
const HEADER_LEN: usize = 7 + 2 + 2 + 4 + 2 + 1 + 1;

const CKPT_MAGIC: &[u8; 8] = b"T2ICKPT1";

/// Writes one or more agents sharing frame count, joint count and fps.
pub fn save_motion(path: &Path, agents: &[&MotionSequence]) -> Result<()> {
    let first = agents
        .first()
        .ok_or_else(|| Error::BadArgument("no agents to save".into()))?;
    let (t, n, fps) = (first.frames(), first.joint_count(), first.fps());
    if agents.iter().any(|a| a.frames() != t || a.joint_count() != n || a.fps() != fps) {
        return Err(Error::shape("agents in one motion file must share T, N and fps"));
    }
    let count = u8::try_from(agents.len()).map_err(|_| Error::BadArgument("too many agents".into()))?;
    let frames = u32::try_from(t).map_err(|_| Error::BadArgument("too many frames".into()))?;
    let joints = u16::try_from(n).map_err(|_| Error::BadArgument("too many joints".into()))?;
    let mut buf = Vec::with_capacity(HEADER_LEN + agents.len() * t * representation_width(n) * 4);
    buf.extend_from_slice(MOTION_MAGIC);
    buf.extend_from_slice(&MOTION_VERSION.to_le_bytes());
    buf.extend_from_slice(&fps.to_le_bytes());
    buf.extend_from_slice(&frames.to_le_bytes());
    buf.extend_from_slice(&joints.to_le_bytes());
    buf.push(count);
    buf.push(LAYOUT_FLAT);
    for a in agents {
        for v in a.to_representation().iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_motion(path: &Path) -> Result<Vec<MotionSequence>> {
    let bytes = fs::read(path)?;
    let bad = |d: String| Error::corrupt(path, d);
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..7] != MOTION_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let version = u16_at(7);
    if version != MOTION_VERSION {
        return Err(bad(format!("version {version}, expected {MOTION_VERSION}")));
    }
    let fps = u16_at(9);
    let t = u32::from_le_bytes([bytes[11], bytes[12], bytes[13], bytes[14]]) as usize;
    let n = u16_at(15) as usize;
    let count = bytes[17] as usize;
    let layout = bytes[18];
    if layout != LAYOUT_FLAT {
        return Err(bad(format!("unknown channel layout {layout}")));
    }
    if n < 2 || t == 0 || count == 0 {
        return Err(bad(format!("header T={t} N={n} agents={count}")));
    }
    let width = representation_width(n);
    let expected = HEADER_LEN + count * t * width * 4;
    if bytes.len() != expected {
        return Err(bad(format!("{} bytes, header implies {expected}", bytes.len())));
    }
    let floats: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    floats
        .chunks_exact(t * width)
        .map(|chunk| {
            let flat = ndarray::ArrayView2::from_shape((t, width), chunk).expect("length checked above");
            if flat.iter().any(|v| !v.is_finite()) {
                return Err(bad("non-finite value in payload".into()));
            }
            MotionSequence::from_representation(flat, n, fps).map_err(|e| bad(e.to_string()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

/// JSON header of a checkpoint; the `f32` payload follows in entry order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub kind: String,
    pub config: serde_json::Value,
    #[serde(default)]
    pub extra: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(
    path: &Path,
    kind: &str,
    config: serde_json::Value,
    extra: serde_json::Value,
    params: &ParamStore,
) -> Result<()> {
    let manifest = CheckpointManifest {
        kind: kind.to_string(),
        config,
        extra,
        tensors: params
            .ids()
            .map(|id| {
                let v = params.get(id);
                TensorEntry {
                    name: params.name(id).to_string(),
                    rows: v.nrows(),
                    cols: v.ncols(),
                }
            })
            .collect(),
    };
    let header = serde_json::to_vec(&manifest)?;
    let mut buf = Vec::with_capacity(12 + header.len() + params.scalar_count() * 4);
    buf.extend_from_slice(CKPT_MAGIC);
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for v in params.values() {
        for x in v.iter() {
            buf.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, kind: &str) -> Result<(CheckpointManifest, ParamStore)> {
    let bytes = fs::read(path)?;
    let bad = |d: String| Error::corrupt(path, d);
    if bytes.len() < 12 || &bytes[..8] != CKPT_MAGIC {
        return Err(bad("not a checkpoint".into()));
    }
    let hlen = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    let header = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header".into()))?;
    let manifest: CheckpointManifest = serde_json::from_slice(header).map_err(|e| bad(e.to_string()))?;
    if manifest.kind != kind {
        return Err(bad(format!("checkpoint holds a {}, expected a {kind}", manifest.kind)));
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(t) = manifest.tensors.iter().find(|t| !seen.insert(t.name.as_str())) {
        return Err(bad(format!("duplicate tensor {}", t.name)));
    }
    let total: usize = manifest.tensors.iter().map(|t| t.rows * t.cols).sum();
    let payload = &bytes[12 + hlen..];
    if payload.len() != total * 4 {
        return Err(bad(format!("payload is {} bytes, manifest implies {}", payload.len(), total * 4)));
    }
    let mut floats = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
    let mut store = ParamStore::new();
    for t in &manifest.tensors {
        let data: Vec<f64> = floats.by_ref().take(t.rows * t.cols).collect();
        let m = Mat::from_shape_vec((t.rows, t.cols), data).map_err(|e| bad(e.to_string()))?;
        store.add(t.name.clone(), m);
    }
    Ok((manifest, store))
}

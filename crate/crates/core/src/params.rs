//! Named parameter storage shared by the denoiser and the evaluator.

use std::collections::HashMap;
use std::ops::Index;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::tape::{Gradients, Mat, Tape, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named 2-D tensors.
///
/// Values are kept exactly representable in `f32` (see
/// [`ParamStore::round_to_f32`]) so that checkpoints round-trip bit-exactly.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    lookup: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. Panics on duplicate names, which would be a
    /// programming error in a model constructor.
    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(!self.lookup.contains_key(&name), "duplicate parameter {name}");
        let id = self.values.len();
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value.mapv(|x| x as f32 as f64));
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn values(&self) -> &[Mat] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Mat] {
        &mut self.values
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn round_to_f32(&mut self) {
        for v in &mut self.values {
            v.mapv_inplace(|x| x as f32 as f64);
        }
    }

    /// Copies values from `other` by name. Every name here must exist there
    /// with the same shape; extra names in `other` are an error too.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::shape(format!(
                "parameter count {} does not match expected {}",
                other.len(),
                self.len()
            )));
        }
        for (i, name) in self.names.iter().enumerate() {
            let src = other
                .id(name)
                .ok_or_else(|| Error::shape(format!("missing parameter {name}")))?;
            let v = other.get(src);
            if v.dim() != self.values[i].dim() {
                return Err(Error::shape(format!(
                    "parameter {name}: shape {:?} != expected {:?}",
                    v.dim(),
                    self.values[i].dim()
                )));
            }
            self.values[i] = v.clone();
        }
        Ok(())
    }

    /// Binds every tensor to `tape` as a leaf.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Bound<'t> {
        let vars = self
            .values
            .iter()
            .map(|v| {
                if trainable {
                    tape.var(v.clone())
                } else {
                    tape.constant(v.clone())
                }
            })
            .collect();
        Bound { vars }
    }
}

/// Parameters bound to a tape. One leaf per tensor, so every use of a
/// parameter in a forward pass accumulates into the same gradient.
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn grads(&self, grads: &Gradients) -> Vec<Mat> {
        self.vars.iter().map(|&v| grads.get_or_zeros(v)).collect()
    }
}

impl<'t> Index<ParamId> for Bound<'t> {
    type Output = Var<'t>;

    fn index(&self, id: ParamId) -> &Var<'t> {
        &self.vars[id.0]
    }
}

/// Gaussian init with standard deviation `1/sqrt(fan_in)`.
pub fn init_linear<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Mat {
    let std = 1.0 / (fan_in as f64).sqrt();
    Mat::from_shape_fn((fan_in, fan_out), |_| rng.sample::<f64, _>(StandardNormal) * std)
}

pub fn init_normal<R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Mat {
    Mat::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal) * std)
}

/// Sum of squares over a gradient list.
pub fn global_norm(grads: &[Mat]) -> f64 {
    grads.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt()
}

/// Elementwise `acc += g`, growing `acc` on first use.
pub fn accumulate(acc: &mut Vec<Mat>, grads: Vec<Mat>) {
    if acc.is_empty() {
        *acc = grads;
    } else {
        for (a, g) in acc.iter_mut().zip(grads) {
            *a += &g;
        }
    }
}

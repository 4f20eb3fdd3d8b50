//! Independent reference implementations and fixtures shared by the
//! integration tests. Nothing here calls into the code it checks.
#![allow(dead_code)]

use interact_core::compose::{AnnulusMode, FilterConfig};
use interact_core::losses::LossWeights;
use interact_core::motion::{representation_width, ChannelLayout};
use interact_core::net::{ModelConfig, UpdateScheme};
use interact_core::{Mat, MotionSequence, Skeleton};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const GOLDEN_TWO_PERSON_TEXT: &str = "One person leans back, arms outstretched, while the other steps forward, pressing their chest lightly against the first's, hands resting on their hips.";

pub fn golden_interaction_inputs() -> (&'static str, Vec<String>, Vec<String>, usize) {
    let examples = [
        GOLDEN_TWO_PERSON_TEXT,
        "One person claps twice, and the other responds by jumping in place, their legs kicking out wildly with excitement.",
        "One person lunges with a punch, the other person blocks with crossed arms and counters with a swift kick to the thigh.",
    ];
    (
        "greeting",
        vec!["excited".into(), "synchronized".into()],
        examples.iter().map(|s| s.to_string()).collect(),
        5,
    )
}

/// Smallest skeletons the losses accept: a 4-joint chain or the 5-joint toy.
pub fn chain_skeleton(n: usize) -> Skeleton {
    match n {
        5 => Skeleton::toy5(),
        4 => Skeleton::new(
            vec![None, Some(0), Some(1), Some(2)],
            vec![[0.0, 0.0, 0.0], [0.0, -0.4, 0.0], [0.0, -0.4, 0.0], [0.0, -0.05, 0.1]],
            [0, 1, 2, 3],
            [1, 2],
        )
        .unwrap(),
        _ => panic!("no test skeleton with {n} joints"),
    }
}

/// Two rounds, width 8: small enough for finite differences.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        joints: 5,
        block_pairs: 2,
        model_width: 8,
        head_count: 2,
        text_width: 8,
        max_frames: 16,
        diffusion_steps: 1000,
        update_scheme: UpdateScheme::Parallel,
    }
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    Mat::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

pub fn unit_rows(m: &Mat) -> Mat {
    let mut out = m.clone();
    for mut r in out.rows_mut() {
        let n = r.dot(&r).sqrt();
        r.mapv_inplace(|v| v / n);
    }
    out
}

pub fn permutation(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Random representation whose contact channels hold 0/1 labels.
pub fn rep_with_contacts(rng: &mut ChaCha8Rng, frames: usize, joints: usize) -> Mat {
    let mut m = uniform(rng, frames, representation_width(joints), 1.0);
    for c in ChannelLayout::new(joints).contacts() {
        for f in 0..frames {
            m[[f, c]] = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
        }
    }
    m
}

/// Weights that switch on only the `k`-th term.
pub fn one_hot_weights(k: usize) -> LossWeights {
    let mut w = [0.0; 6];
    w[k] = 1.0;
    LossWeights {
        base: w[0],
        vel: w[1],
        foot: w[2],
        bone: w[3],
        rel_orient: w[4],
        ada_interact: w[5],
        ..LossWeights::default()
    }
}

/// Unnormalised double loop over frames and joint pairs, positions read
/// straight from the first `3N` columns.
pub fn brute_interaction_sum(x1: &Mat, x2: &Mat, h1: &Mat, h2: &Mat, n: usize, eps: f64) -> f64 {
    let d = |a: &Mat, b: &Mat, t: usize, i: usize, j: usize| {
        let mut s = 0.0;
        for c in 0..3 {
            let v = a[[t, 3 * i + c]] - b[[t, 3 * j + c]];
            s += v * v;
        }
        s.sqrt()
    };
    let mut total = 0.0;
    for t in 0..x1.nrows() {
        for i in 0..n {
            for j in 0..n {
                let gt = d(x1, x2, t, i, j);
                let pr = d(h1, h2, t, i, j);
                total += (pr - gt).abs() / (gt + eps);
            }
        }
    }
    total
}

pub const FD_STEP: f64 = 1e-5;

/// Central differences of `f` at every element of `base`.
pub fn finite_difference(base: &Mat, mut f: impl FnMut(&Mat) -> f64) -> Mat {
    let mut out = Mat::zeros(base.dim());
    let mut x = base.clone();
    for idx in 0..base.len() {
        let (r, c) = (idx / base.ncols(), idx % base.ncols());
        let v = base[[r, c]];
        x[[r, c]] = v + FD_STEP;
        let up = f(&x);
        x[[r, c]] = v - FD_STEP;
        let down = f(&x);
        x[[r, c]] = v;
        out[[r, c]] = (up - down) / (2.0 * FD_STEP);
    }
    out
}

pub fn rel_error(analytic: &Mat, fd: &Mat) -> f64 {
    let diff = (analytic - fd).mapv(|v| v * v).sum().sqrt();
    diff / (fd.mapv(|v| v * v).sum().sqrt() + 1e-6)
}

pub fn bits_equal(a: &Mat, b: &Mat) -> bool {
    a.dim() == b.dim() && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Least-squares slope of `y` against its index.
pub fn trend(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, v) in y.iter().enumerate() {
        sxy += (i as f64 - mx) * (v - my);
        sxx += (i as f64 - mx) * (i as f64 - mx);
    }
    sxy / sxx
}

pub fn cosine(a: &Mat, b: &Mat) -> f64 {
    let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn euclid(a: &Mat, i: usize, b: &Mat, j: usize) -> f64 {
    (0..a.ncols()).map(|c| (a[[i, c]] - b[[j, c]]).powi(2)).sum::<f64>().sqrt()
}

/// Annulus predicate by full sort.
pub fn brute_annulus(gen: &Mat, bank: &Mat, cfg: &FilterConfig) -> Vec<usize> {
    match cfg.mode {
        AnnulusMode::MeanDistance => (0..gen.nrows())
            .filter(|&i| {
                let mut d: Vec<f64> = (0..bank.nrows()).map(|j| euclid(gen, i, bank, j)).collect();
                d.sort_by(f64::total_cmp);
                let mean = d[..cfg.k_neighbors].iter().sum::<f64>() / cfg.k_neighbors as f64;
                cfg.r_min <= mean && mean <= cfg.r_max
            })
            .collect(),
        AnnulusMode::BankNeighbors => {
            let k = cfg.k_neighbors.min(gen.nrows());
            let mut keep = vec![false; gen.nrows()];
            for j in 0..bank.nrows() {
                let mut d: Vec<(f64, usize)> = (0..gen.nrows()).map(|i| (euclid(gen, i, bank, j), i)).collect();
                d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                for &(dist, i) in &d[..k] {
                    if cfg.r_min < dist && dist < cfg.r_max {
                        keep[i] = true;
                    }
                }
            }
            (0..keep.len()).filter(|&i| keep[i]).collect()
        }
    }
}

/// Mean per-joint position error of one agent against another, in meters.
pub fn mpjpe(a: &MotionSequence, b: &MotionSequence) -> f64 {
    let (pa, pb) = (a.positions(), b.positions());
    let (t, n, _) = pa.dim();
    let mut s = 0.0;
    for f in 0..t {
        for j in 0..n {
            s += (0..3)
                .map(|c| (pa[[f, j, c]] as f64 - pb[[f, j, c]] as f64).powi(2))
                .sum::<f64>()
                .sqrt();
        }
    }
    s / (t * n) as f64
}

/// Pair error under the better of the two agent assignments.
pub fn pair_mpjpe(real: &[MotionSequence; 2], gen: &[MotionSequence]) -> f64 {
    let direct = (mpjpe(&real[0], &gen[0]) + mpjpe(&real[1], &gen[1])) / 2.0;
    let swapped = (mpjpe(&real[0], &gen[1]) + mpjpe(&real[1], &gen[0])) / 2.0;
    direct.min(swapped)
}

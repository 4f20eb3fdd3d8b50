//! Inputs shared by the benchmarks.

use interact_core::diffusion::TrainItem;
use interact_core::net::{Denoiser, ModelConfig};
use interact_core::text::{encode, StubEmbedder, TokenizedPrompt};
use interact_core::workbench::{generate_toy_samples, prepare_train_items, NormStats, ToyConfig};
use interact_core::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TEXT_WIDTH: usize = 32;

pub fn toy_model() -> Denoiser {
    let cfg = ModelConfig {
        text_width: TEXT_WIDTH,
        ..ModelConfig::toy()
    };
    Denoiser::new(cfg, 0).expect("toy config is valid")
}

pub fn prompt(text: &str) -> TokenizedPrompt {
    encode(text, &StubEmbedder::new(TEXT_WIDTH)).expect("stub embedder never fails")
}

/// Normalised toy training items and their statistics.
pub fn toy_items(n: usize) -> (Vec<TrainItem>, NormStats) {
    let samples = generate_toy_samples(0, n.max(8), &ToyConfig::default()).expect("toy corpus");
    let stats = NormStats::from_samples(&samples).expect("stats");
    let items = prepare_train_items(&samples[..n], &stats, &StubEmbedder::new(TEXT_WIDTH)).expect("items");
    (items, stats)
}

pub fn random_rows(seed: u64, rows: usize, cols: usize) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mat::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

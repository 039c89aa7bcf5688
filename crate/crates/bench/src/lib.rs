//! Shared input builders for the criterion benchmarks.

use rand::Rng;
use stem_core::{seeded_rng, EmConfig, FeatureMap, ProjectionWeights, Seed};

pub fn random_video(n: usize, h: usize, w: usize, c: usize, seed: u64) -> FeatureMap {
    let mut rng = seeded_rng(Seed(seed));
    FeatureMap::new(
        n,
        h,
        w,
        c,
        (0..n * h * w * c).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
    )
    .unwrap()
}

pub fn projection(c: usize, d: usize, seed: u64) -> ProjectionWeights {
    ProjectionWeights::random(c, d, Seed(seed))
}

pub fn em_config(k: usize, iters: usize, seed: u64) -> EmConfig {
    EmConfig { num_bases: k, iterations: iters, seed: Seed(seed), ..EmConfig::default() }
}

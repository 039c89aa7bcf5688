//! Seeded synthetic inputs standing in for real video features: separated
//! Gaussian clusters for EM tests, a base frame plus per-frame noise for
//! temporal-stability tests, and a translating Gaussian blob whose exact
//! integer flow field is known by construction.

use rand::Rng;
use rand_distr::StandardNormal;
use stem_core::{seeded_rng, Seed};

use crate::error::{CliError, Result};
use crate::tensor_io::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Clusters,
    PerturbedVideo,
    MovingBlob,
}

impl SynthKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "clusters" => Ok(SynthKind::Clusters),
            "perturbed_video" => Ok(SynthKind::PerturbedVideo),
            "moving_blob" => Ok(SynthKind::MovingBlob),
            other => Err(CliError::Config(format!(
                "unknown synthetic kind '{other}' (expected clusters, perturbed_video, or moving_blob)"
            ))),
        }
    }
}

/// (centers * points) x channels feature matrix of well-separated Gaussian
/// clusters. Center i sits at distance `separation * (1 + i / channels)`
/// along axis `i % channels`, so pairwise center distances stay large for
/// any center count; points scatter around it with the given sigma.
pub fn gen_clusters(
    centers: usize,
    points: usize,
    channels: usize,
    sigma: f32,
    separation: f32,
    seed: Seed,
) -> Result<Tensor> {
    if centers == 0 || points == 0 || channels == 0 {
        return Err(CliError::Config("clusters need centers, points, channels >= 1".into()));
    }
    let mut rng = seeded_rng(seed);
    let mut data = Vec::with_capacity(centers * points * channels);
    for i in 0..centers {
        let axis = i % channels;
        let radius = separation * (1.0 + (i / channels) as f32);
        for _ in 0..points {
            for ch in 0..channels {
                let center = if ch == axis { radius } else { 0.0 };
                let noise: f32 = rng.sample(StandardNormal);
                data.push(center + sigma * noise);
            }
        }
    }
    Tensor::new(vec![centers * points, channels], data)
}

/// One seeded random base frame repeated N times with independent
/// per-frame Gaussian noise of the given sigma. Sigma 0 gives N identical
/// frames.
pub fn gen_perturbed_video(
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    sigma: f32,
    seed: Seed,
) -> Result<Tensor> {
    if n == 0 || h == 0 || w == 0 || c == 0 {
        return Err(CliError::Config("video dims must all be >= 1".into()));
    }
    let mut rng = seeded_rng(seed);
    let frame_len = h * w * c;
    let base: Vec<f32> = (0..frame_len).map(|_| rng.sample(StandardNormal)).collect();
    let mut data = Vec::with_capacity(n * frame_len);
    for _ in 0..n {
        for &b in &base {
            let noise: f32 = rng.sample(StandardNormal);
            data.push(b + sigma * noise);
        }
    }
    Tensor::new(vec![n, h, w, c], data)
}

/// A Gaussian blob translating exactly one pixel per frame in +x,
/// returned together with the matching (N-1, H, W, 2) flow field of
/// (dx, dy) = (1, 0) everywhere.
pub fn gen_moving_blob(n: usize, h: usize, w: usize, c: usize) -> Result<(Tensor, Tensor)> {
    if n < 2 || h == 0 || w == 0 || c == 0 {
        return Err(CliError::Config("moving blob needs >= 2 frames and nonzero dims".into()));
    }
    if w < n + 2 {
        return Err(CliError::Config(format!(
            "moving blob needs width >= frames + 2 so the blob stays in frame, got w={w}, n={n}"
        )));
    }
    let radius = (h.min(w) as f32 / 8.0).max(1.0);
    let cy = h as f32 / 2.0;
    let cx0 = w as f32 / 4.0;
    let mut video = Vec::with_capacity(n * h * w * c);
    for f in 0..n {
        let cx = cx0 + f as f32;
        for y in 0..h {
            for x in 0..w {
                let dy = y as f32 - cy;
                let dx = x as f32 - cx;
                let g = (-(dx * dx + dy * dy) / (2.0 * radius * radius)).exp();
                for ch in 0..c {
                    video.push(g * (ch + 1) as f32 / c as f32);
                }
            }
        }
    }
    let mut flow = Vec::with_capacity((n - 1) * h * w * 2);
    for _ in 0..(n - 1) * h * w {
        flow.push(1.0);
        flow.push(0.0);
    }
    Ok((Tensor::new(vec![n, h, w, c], video)?, Tensor::new(vec![n - 1, h, w, 2], flow)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clusters_are_well_separated() {
        let t = gen_clusters(2, 20, 4, 0.1, 20.0, Seed(3)).unwrap();
        assert_eq!(t.dims, vec![40, 4]);
        let mean = |cluster: usize| -> Vec<f64> {
            let mut m = vec![0f64; 4];
            for p in 0..20 {
                for ch in 0..4 {
                    m[ch] += t.data[(cluster * 20 + p) * 4 + ch] as f64 / 20.0;
                }
            }
            m
        };
        let (m0, m1) = (mean(0), mean(1));
        let inter: f64 = m0
            .iter()
            .zip(&m1)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let spread = |cluster: usize, m: &[f64]| -> f64 {
            let mut s = 0f64;
            for p in 0..20 {
                for ch in 0..4 {
                    let d = t.data[(cluster * 20 + p) * 4 + ch] as f64 - m[ch];
                    s += d * d;
                }
            }
            (s / 20.0).sqrt()
        };
        let intra = spread(0, &m0).max(spread(1, &m1));
        assert!(inter > 10.0 * intra, "inter {inter} vs intra {intra}");
    }

    #[test]
    fn zero_sigma_video_has_identical_frames() {
        let t = gen_perturbed_video(4, 3, 3, 2, 0.0, Seed(1)).unwrap();
        let frame_len = 3 * 3 * 2;
        for f in 1..4 {
            assert_eq!(t.data[..frame_len], t.data[f * frame_len..(f + 1) * frame_len]);
        }
    }

    #[test]
    fn blob_flow_is_unit_x_and_frames_shift() {
        let (video, flow) = gen_moving_blob(3, 16, 16, 1).unwrap();
        assert_eq!(flow.dims, vec![2, 16, 16, 2]);
        assert!(flow.data.chunks_exact(2).all(|p| p == [1.0, 0.0]));
        // Frame 1 at x equals frame 0 at x-1 by construction.
        let at = |f: usize, y: usize, x: usize| video.data[(f * 16 + y) * 16 + x];
        for y in 0..16 {
            for x in 1..16 {
                assert!((at(1, y, x) - at(0, y, x - 1)).abs() < 1e-6);
            }
        }
    }
}

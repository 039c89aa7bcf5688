//! Reconstruction quality and temporal-consistency metrics: PSNR, SSIM,
//! flow-warp error (flow fields are inputs, never estimated here), and
//! per-pixel feature cosine similarity.

use crate::error::{CoreError, Result};
use crate::tensor::{FeatureMap, Matrix};

/// PSNR of identical inputs: finite, sortable sentinel for zero MSE.
pub const PSNR_SENTINEL_DB: f64 = 99.0;

/// Dense displacement field mapping frame n to frame n+1, shape
/// (N-1) x H x W x 2 with (dx, dy) in pixels.
#[derive(Debug, Clone)]
pub struct FlowField {
    pairs: usize,
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl FlowField {
    pub fn new(pairs: usize, h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != pairs * h * w * 2 {
            return Err(CoreError::Shape(format!(
                "flow buffer length {} does not match {}x{}x{}x2",
                data.len(),
                pairs,
                h,
                w
            )));
        }
        for chunk in data.chunks_exact(2) {
            let (dx, dy) = (chunk[0], chunk[1]);
            if !dx.is_finite() || !dy.is_finite() {
                return Err(CoreError::Input("flow contains NaN or Inf".into()));
            }
            if dx.abs() >= w as f32 || dy.abs() >= h as f32 {
                return Err(CoreError::Input(format!(
                    "flow displacement ({dx},{dy}) exceeds frame extent {w}x{h}"
                )));
            }
        }
        Ok(Self { pairs, h, w, data })
    }

    pub fn pairs(&self) -> usize {
        self.pairs
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    fn at(&self, pair: usize, y: usize, x: usize) -> (f32, f32) {
        let base = ((pair * self.h + y) * self.w + x) * 2;
        (self.data[base], self.data[base + 1])
    }
}

/// Per-frame metric values plus their mean.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub metric: String,
    pub per_frame: Vec<f64>,
    pub mean: f64,
    pub params: Vec<(String, String)>,
}

impl MetricReport {
    pub fn new(metric: &str, per_frame: Vec<f64>, params: Vec<(String, String)>) -> Self {
        let mean = if per_frame.is_empty() {
            0.0
        } else {
            per_frame.iter().sum::<f64>() / per_frame.len() as f64
        };
        Self { metric: metric.to_string(), per_frame, mean, params }
    }
}

/// Peak signal-to-noise ratio in dB over all elements of two equal-shape
/// buffers. Zero MSE returns [`PSNR_SENTINEL_DB`], and values above the
/// sentinel clamp to it: beyond ~99 dB the residual is below f32
/// resolution, and the clamp keeps the scale finite and sortable.
pub fn psnr(a: &[f32], b: &[f32], peak: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CoreError::Shape(format!(
            "psnr inputs differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(CoreError::Parameter("psnr needs non-empty input".into()));
    }
    if !(peak > 0.0) {
        return Err(CoreError::Parameter(format!("peak must be positive, got {peak}")));
    }
    let mse: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_SENTINEL_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_SENTINEL_DB))
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let mut w: Vec<f64> = (0..size * size)
        .map(|i| {
            let y = (i / size) as f64 - half;
            let x = (i % size) as f64 - half;
            (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    w
}

/// Single-scale SSIM over a grayscale plane with the canonical 11x11
/// Gaussian window (sigma 1.5) and constants C1=(0.01 peak)^2,
/// C2=(0.03 peak)^2, averaged over valid window positions.
pub fn ssim(a: &Matrix, b: &Matrix, peak: f64) -> Result<f64> {
    const WIN: usize = 11;
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(CoreError::Shape("ssim inputs differ in shape".into()));
    }
    if a.rows() < WIN || a.cols() < WIN {
        return Err(CoreError::Parameter(format!(
            "ssim needs frames at least {WIN}x{WIN}, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !(peak > 0.0) {
        return Err(CoreError::Parameter(format!("peak must be positive, got {peak}")));
    }
    let window = gaussian_window(WIN, 1.5);
    let c1 = (0.01 * peak) * (0.01 * peak);
    let c2 = (0.03 * peak) * (0.03 * peak);
    let (h, w) = (a.rows(), a.cols());
    let mut total = 0f64;
    let mut count = 0usize;
    for cy in 0..=(h - WIN) {
        for cx in 0..=(w - WIN) {
            let (mut ma, mut mb) = (0f64, 0f64);
            for wy in 0..WIN {
                for wx in 0..WIN {
                    let g = window[wy * WIN + wx];
                    ma += g * a.get(cy + wy, cx + wx) as f64;
                    mb += g * b.get(cy + wy, cx + wx) as f64;
                }
            }
            let (mut va, mut vb, mut cov) = (0f64, 0f64, 0f64);
            for wy in 0..WIN {
                for wx in 0..WIN {
                    let g = window[wy * WIN + wx];
                    let da = a.get(cy + wy, cx + wx) as f64 - ma;
                    let db = b.get(cy + wy, cx + wx) as f64 - mb;
                    va += g * da * da;
                    vb += g * db * db;
                    cov += g * da * db;
                }
            }
            let val = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            total += val;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Channel-averaged grayscale plane of frame `frame`.
pub fn to_gray_plane(v: &FeatureMap, frame: usize) -> Result<Matrix> {
    let m = v.frame_matrix(frame)?;
    let (h, w, c) = (v.height(), v.width(), v.channels());
    let mut out = Matrix::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let row = m.row(y * w + x);
            let mean: f64 = row.iter().map(|&p| p as f64).sum::<f64>() / c as f64;
            out.set(y, x, mean as f32);
        }
    }
    Ok(out)
}

#[inline]
fn bilinear_clamped(frame: &Matrix, w: usize, h: usize, c: usize, sx: f32, sy: f32, ch: usize) -> f64 {
    let sx = sx.clamp(0.0, (w - 1) as f32);
    let sy = sy.clamp(0.0, (h - 1) as f32);
    let x0 = sx.floor() as usize;
    let y0 = sy.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = (sx - x0 as f32) as f64;
    let fy = (sy - y0 as f32) as f64;
    let at = |y: usize, x: usize| frame.get(y * w + x, ch) as f64;
    let _ = c;
    (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1))
        + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1))
}

/// Warps frame n forward by its flow (bilinear, border-clamped) and
/// reports the MSE against frame n+1 for every consecutive pair.
pub fn warp_error(frames: &FeatureMap, flow: &FlowField) -> Result<MetricReport> {
    if frames.frames() < 2 {
        return Err(CoreError::Parameter("warp error needs at least 2 frames".into()));
    }
    if flow.pairs() != frames.frames() - 1
        || flow.height() != frames.height()
        || flow.width() != frames.width()
    {
        return Err(CoreError::Shape(format!(
            "flow shape {}x{}x{} inconsistent with video {}x{}x{}",
            flow.pairs(),
            flow.height(),
            flow.width(),
            frames.frames() - 1,
            frames.height(),
            frames.width()
        )));
    }
    let (h, w, c) = (frames.height(), frames.width(), frames.channels());
    let mut per_pair = Vec::with_capacity(flow.pairs());
    for pair in 0..flow.pairs() {
        let src = frames.frame_matrix(pair)?;
        let dst = frames.frame_matrix(pair + 1)?;
        let mut se = 0f64;
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = flow.at(pair, y, x);
                let sx = x as f32 - dx;
                let sy = y as f32 - dy;
                for ch in 0..c {
                    let warped = bilinear_clamped(&src, w, h, c, sx, sy, ch);
                    let d = warped - dst.get(y * w + x, ch) as f64;
                    se += d * d;
                }
            }
        }
        per_pair.push(se / (h * w * c) as f64);
    }
    Ok(MetricReport::new(
        "warp_error",
        per_pair,
        vec![("pairs".into(), flow.pairs().to_string())],
    ))
}

/// Per-pixel cosine similarity of two equal-shape single-frame feature
/// maps, plus the spatial mean. Zero-norm pixels report 0.
pub fn cosine_similarity_map(f1: &FeatureMap, f2: &FeatureMap) -> Result<(Matrix, f64)> {
    if f1.frames() != 1 || f2.frames() != 1 {
        return Err(CoreError::Parameter(
            "cosine similarity map operates on single frames".into(),
        ));
    }
    if f1.height() != f2.height() || f1.width() != f2.width() || f1.channels() != f2.channels()
    {
        return Err(CoreError::Shape("cosine map inputs differ in shape".into()));
    }
    let (h, w) = (f1.height(), f1.width());
    let a = f1.flattened();
    let b = f2.flattened();
    let mut map = Matrix::zeros(h, w);
    let mut total = 0f64;
    for p in 0..h * w {
        let ra = a.row(p);
        let rb = b.row(p);
        let dot: f64 = ra.iter().zip(rb).map(|(&x, &y)| x as f64 * y as f64).sum();
        let na: f64 = ra.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = rb.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        let v = if na > 0.0 && nb > 0.0 { dot / (na * nb) } else { 0.0 };
        map.set(p / w, p % w, v as f32);
        total += v;
    }
    Ok((map, total / (h * w) as f64))
}

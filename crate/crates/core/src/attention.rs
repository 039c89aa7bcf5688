//! Self-attention variants over video features: per-frame self attention,
//! two-frame spatial-temporal attention (FateZero / Tune-A-Video frame
//! policies), all-frame attention, and the low-rank variant whose Key and
//! Value come from an EM basis set. Includes exact multiply-add
//! accounting for the complexity comparison.

use rand::Rng;

use crate::em::{run_em, EmConfig};
use crate::error::{CoreError, Result};
use crate::tensor::{matmul, matmul_transpose_b, seeded_rng, BasisSet, FeatureMap, Matrix, Seed};

/// Attention variant under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionVariant {
    /// Each frame attends only to itself.
    SelfOnly,
    /// Two-frame context, h = n and l = Round(N/2).
    TwoFrameFateZero,
    /// Two-frame context, h = 1 and l = n - 1 (l = 1 for the first frame).
    TwoFrameTuneAVideo,
    /// Every frame attends to the whole video.
    AllFrame,
    /// Key/Value are projections of the EM basis set.
    Stem,
}

impl AttentionVariant {
    pub const ALL: [AttentionVariant; 5] = [
        AttentionVariant::SelfOnly,
        AttentionVariant::TwoFrameFateZero,
        AttentionVariant::TwoFrameTuneAVideo,
        AttentionVariant::AllFrame,
        AttentionVariant::Stem,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AttentionVariant::SelfOnly => "self_only",
            AttentionVariant::TwoFrameFateZero => "two_frame_fatezero",
            AttentionVariant::TwoFrameTuneAVideo => "two_frame_tuneavideo",
            AttentionVariant::AllFrame => "all_frame",
            AttentionVariant::Stem => "stem",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "self_only" => Ok(AttentionVariant::SelfOnly),
            "two_frame_fatezero" => Ok(AttentionVariant::TwoFrameFateZero),
            "two_frame_tuneavideo" => Ok(AttentionVariant::TwoFrameTuneAVideo),
            "all_frame" => Ok(AttentionVariant::AllFrame),
            "stem" => Ok(AttentionVariant::Stem),
            other => Err(CoreError::Parameter(format!(
                "unknown attention variant '{other}'"
            ))),
        }
    }
}

/// Query/Key/Value projections, one set shared across space and time.
#[derive(Debug, Clone)]
pub struct ProjectionWeights {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
}

impl ProjectionWeights {
    pub fn new(w_q: Matrix, w_k: Matrix, w_v: Matrix) -> Result<Self> {
        if w_q.rows() != w_k.rows()
            || w_q.rows() != w_v.rows()
            || w_q.cols() != w_k.cols()
            || w_q.cols() != w_v.cols()
        {
            return Err(CoreError::Shape(
                "projection weights must share input and output dimensions".into(),
            ));
        }
        Ok(Self { w_q, w_k, w_v })
    }

    /// Seeded random projections with entries scaled by 1/sqrt(C).
    pub fn random(c: usize, d: usize, seed: Seed) -> Self {
        let mut rng = seeded_rng(seed);
        let scale = 1.0 / (c as f32).sqrt();
        let mut gen = |_| {
            Matrix::new(
                c,
                d,
                (0..c * d).map(|_| rng.gen_range(-1.0f32..1.0) * scale).collect(),
            )
            .unwrap()
        };
        Self { w_q: gen(0), w_k: gen(1), w_v: gen(2) }
    }

    pub fn input_dim(&self) -> usize {
        self.w_q.rows()
    }

    pub fn head_dim(&self) -> usize {
        self.w_q.cols()
    }
}

/// Full attention configuration: variant plus the EM parameters used when
/// the variant is [`AttentionVariant::Stem`].
#[derive(Debug, Clone)]
pub struct AttentionConfig {
    pub variant: AttentionVariant,
    pub em: EmConfig,
}

impl AttentionConfig {
    pub fn new(variant: AttentionVariant) -> Self {
        Self { variant, em: EmConfig::default() }
    }

    pub fn stem(em: EmConfig) -> Self {
        Self { variant: AttentionVariant::Stem, em }
    }
}

/// Itemized multiply-add counts for one attention pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopReport {
    pub variant: AttentionVariant,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub d: usize,
    pub k: usize,
    pub r: usize,
    /// QK^T and attention*V products only.
    pub attention_flops: u64,
    /// Q/K/V projection matmuls.
    pub projection_flops: u64,
    /// E and M step matmuls (stem only).
    pub em_flops: u64,
}

impl FlopReport {
    pub fn total(&self) -> u64 {
        self.attention_flops + self.projection_flops + self.em_flops
    }
}

/// Scaled dot-product attention: softmax(q k^T / sqrt(d)) v.
/// Query rows are processed in blocks so the logit matrix never has to
/// fit in memory at once.
pub fn attend(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<Matrix> {
    if q.cols() != k.cols() {
        return Err(CoreError::Shape(format!(
            "query dim {} != key dim {}",
            q.cols(),
            k.cols()
        )));
    }
    if k.rows() != v.rows() {
        return Err(CoreError::Shape(format!(
            "key count {} != value count {}",
            k.rows(),
            v.rows()
        )));
    }
    if k.rows() == 0 {
        return Err(CoreError::Parameter("attention needs at least one key".into()));
    }
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let s = k.rows();
    let mut out = Matrix::zeros(q.rows(), v.cols());
    const BLOCK: usize = 128;
    let mut start = 0;
    while start < q.rows() {
        let end = (start + BLOCK).min(q.rows());
        let block_rows: Vec<usize> = (start..end).collect();
        let qb = q.gather_rows(&block_rows)?;
        let mut logits = matmul_transpose_b(&qb, k)?;
        // row softmax with f64 sums
        for i in 0..logits.rows() {
            let row = logits.row_mut(i);
            let mut max = f64::NEG_INFINITY;
            for &l in row.iter() {
                max = max.max(l as f64 * scale);
            }
            let mut sum = 0f64;
            for l in row.iter_mut() {
                let e = ((*l as f64) * scale - max).exp();
                *l = e as f32;
                sum += e;
            }
            let inv = (1.0 / sum) as f32;
            for l in row.iter_mut() {
                *l *= inv;
            }
        }
        debug_assert_eq!(logits.cols(), s);
        let ob = matmul(&logits, v)?;
        for (bi, gi) in (start..end).enumerate() {
            out.row_mut(gi).copy_from_slice(ob.row(bi));
        }
        start = end;
    }
    Ok(out)
}

/// Context frame indices (1-based) for frame `n` of an N-frame video.
pub fn frame_context(
    variant: AttentionVariant,
    n: usize,
    num_frames: usize,
) -> Result<Vec<usize>> {
    if n == 0 || n > num_frames {
        return Err(CoreError::Parameter(format!(
            "frame index {n} out of range 1..={num_frames}"
        )));
    }
    Ok(match variant {
        AttentionVariant::SelfOnly => vec![n],
        // Round(N/2) with half rounded up.
        AttentionVariant::TwoFrameFateZero => vec![n, (num_frames + 1) / 2],
        // l = n - 1 is undefined for the first frame; it attends to itself
        // twice, keeping the context length uniform.
        AttentionVariant::TwoFrameTuneAVideo => vec![1, if n == 1 { 1 } else { n - 1 }],
        AttentionVariant::AllFrame => (1..=num_frames).collect(),
        AttentionVariant::Stem => {
            return Err(CoreError::Parameter(
                "stem variant draws context from the basis set, not frames".into(),
            ))
        }
    })
}

fn context_matrix(x: &FeatureMap, frames_1based: &[usize]) -> Result<Matrix> {
    let hw = x.height() * x.width();
    let c = x.channels();
    let mut data = Vec::with_capacity(frames_1based.len() * hw * c);
    for &f in frames_1based {
        let m = x.frame_matrix(f - 1)?;
        data.extend_from_slice(m.data());
    }
    Matrix::new(frames_1based.len() * hw, c, data)
}

/// Per-frame attention where Key/Value come from a policy-chosen frame
/// context. Output has the projection head dimension as channel count.
pub fn spatial_temporal_sa(
    x: &FeatureMap,
    w: &ProjectionWeights,
    cfg: &AttentionConfig,
) -> Result<FeatureMap> {
    if cfg.variant == AttentionVariant::Stem {
        return Err(CoreError::Parameter(
            "use stem_sa for the stem variant".into(),
        ));
    }
    if w.input_dim() != x.channels() {
        return Err(CoreError::Shape(format!(
            "projection input dim {} != feature channels {}",
            w.input_dim(),
            x.channels()
        )));
    }
    let n = x.frames();
    let d = w.head_dim();
    let mut out = Vec::with_capacity(x.pixels() * d);
    // All-frame context is the same for every frame: project K/V once.
    let shared_kv = if cfg.variant == AttentionVariant::AllFrame {
        let ctx = x.flattened();
        Some((matmul(ctx, &w.w_k)?, matmul(ctx, &w.w_v)?))
    } else {
        None
    };
    for frame in 1..=n {
        let q = matmul(&x.frame_matrix(frame - 1)?, &w.w_q)?;
        let of = match &shared_kv {
            Some((k, v)) => attend(&q, k, v)?,
            None => {
                let ctx = context_matrix(x, &frame_context(cfg.variant, frame, n)?)?;
                let k = matmul(&ctx, &w.w_k)?;
                let v = matmul(&ctx, &w.w_v)?;
                attend(&q, &k, &v)?
            }
        };
        out.extend_from_slice(of.data());
    }
    FeatureMap::new(n, x.height(), x.width(), d, out)
}

/// Attention with Key/Value projected from the converged basis set: runs
/// EM on the stacked frame features, then every frame attends to the same
/// K bases. Returns the output features and the bases used.
pub fn stem_sa(
    x: &FeatureMap,
    w: &ProjectionWeights,
    cfg: &AttentionConfig,
) -> Result<(FeatureMap, BasisSet)> {
    if cfg.variant != AttentionVariant::Stem {
        return Err(CoreError::Parameter(
            "stem_sa requires the stem variant".into(),
        ));
    }
    if w.input_dim() != x.channels() {
        return Err(CoreError::Shape(format!(
            "projection input dim {} != feature channels {}",
            w.input_dim(),
            x.channels()
        )));
    }
    let em = run_em(x, &cfg.em)?;
    let k = matmul(&em.bases.data, &w.w_k)?;
    let v = matmul(&em.bases.data, &w.w_v)?;
    let n = x.frames();
    let d = w.head_dim();
    let mut out = Vec::with_capacity(x.pixels() * d);
    for frame in 0..n {
        let q = matmul(&x.frame_matrix(frame)?, &w.w_q)?;
        out.extend_from_slice(attend(&q, &k, &v)?.data());
    }
    Ok((FeatureMap::new(n, x.height(), x.width(), d, out)?, em.bases))
}

/// Exact multiply-add counts for one attention pass at the given sizes.
/// `k` and `r` are only consulted for the stem variant.
pub fn count_flops(
    variant: AttentionVariant,
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    d: usize,
    k: usize,
    r: usize,
) -> Result<FlopReport> {
    if n == 0 || h == 0 || w == 0 || c == 0 || d == 0 {
        return Err(CoreError::Parameter("flop counting needs positive dims".into()));
    }
    let (n64, hw, c64, d64, k64, r64) = (
        n as u64,
        (h * w) as u64,
        c as u64,
        d as u64,
        k as u64,
        r as u64,
    );
    let m = n64 * hw;
    // context length per frame
    let s = match variant {
        AttentionVariant::SelfOnly => hw,
        AttentionVariant::TwoFrameFateZero | AttentionVariant::TwoFrameTuneAVideo => 2 * hw,
        AttentionVariant::AllFrame => m,
        AttentionVariant::Stem => k64,
    };
    if variant == AttentionVariant::Stem && k == 0 {
        return Err(CoreError::Parameter("stem flop count needs K >= 1".into()));
    }
    let attention_flops = n64 * hw * s * 2 * d64;
    let q_proj = m * c64 * d64;
    let kv_proj = match variant {
        AttentionVariant::Stem => 2 * k64 * c64 * d64,
        _ => 2 * n64 * s * c64 * d64,
    };
    let em_flops = match variant {
        AttentionVariant::Stem => r64 * 2 * m * k64 * c64,
        _ => 0,
    };
    Ok(FlopReport {
        variant,
        n,
        h,
        w,
        c,
        d,
        k: if variant == AttentionVariant::Stem { k } else { 0 },
        r: if variant == AttentionVariant::Stem { r } else { 0 },
        attention_flops,
        projection_flops: q_proj + kv_proj,
        em_flops,
    })
}

//! DDIM scheduler arithmetic, classifier-free guidance, and toy noise
//! predictors so the inversion/reconstruction loop runs end to end at
//! desk scale without pretrained weights.

use rand::Rng;

use crate::attention::{
    spatial_temporal_sa, stem_sa, AttentionConfig, AttentionVariant, ProjectionWeights,
};
use crate::error::{CoreError, Result};
use crate::tensor::{matmul, matmul_transpose_b, seeded_rng, FeatureMap, Matrix, Seed};

/// Beta interpolation used to build the training schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BetaSchedule {
    /// Linear interpolation of beta.
    Linear,
    /// Linear interpolation of sqrt(beta), then squared.
    ScaledLinear,
}

impl BetaSchedule {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(BetaSchedule::Linear),
            "scaled_linear" => Ok(BetaSchedule::ScaledLinear),
            other => Err(CoreError::Parameter(format!("unknown schedule '{other}'"))),
        }
    }
}

/// Noise schedule tables plus the strided inference timesteps.
/// `alphas_cumprod[i]` holds the cumulative product for t = i + 1;
/// alpha at t = 0 is defined as 1.
#[derive(Debug, Clone)]
pub struct DiffusionSchedule {
    pub betas: Vec<f64>,
    pub alphas_cumprod: Vec<f64>,
    pub num_train_steps: usize,
    pub inference_timesteps: Vec<usize>,
}

impl DiffusionSchedule {
    pub fn alpha_cumprod(&self, t: usize) -> Result<f64> {
        if t == 0 {
            Ok(1.0)
        } else if t <= self.num_train_steps {
            Ok(self.alphas_cumprod[t - 1])
        } else {
            Err(CoreError::Parameter(format!(
                "timestep {t} outside schedule of {} steps",
                self.num_train_steps
            )))
        }
    }
}

/// Builds the beta/alpha tables and an evenly strided ascending inference
/// timestep subsequence of [1, T_train].
pub fn make_schedule(
    kind: BetaSchedule,
    beta_start: f64,
    beta_end: f64,
    num_train_steps: usize,
    num_inference_steps: usize,
) -> Result<DiffusionSchedule> {
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(CoreError::Parameter(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
        )));
    }
    if num_train_steps == 0 {
        return Err(CoreError::Parameter("num_train_steps must be >= 1".into()));
    }
    if num_inference_steps == 0 || num_inference_steps > num_train_steps {
        return Err(CoreError::Parameter(format!(
            "num_inference_steps {num_inference_steps} must be in 1..={num_train_steps}"
        )));
    }
    let t = num_train_steps;
    let interp = |i: usize| {
        if t == 1 {
            0.0
        } else {
            i as f64 / (t - 1) as f64
        }
    };
    let betas: Vec<f64> = match kind {
        BetaSchedule::Linear => (0..t)
            .map(|i| beta_start + (beta_end - beta_start) * interp(i))
            .collect(),
        BetaSchedule::ScaledLinear => (0..t)
            .map(|i| {
                let s = beta_start.sqrt() + (beta_end.sqrt() - beta_start.sqrt()) * interp(i);
                s * s
            })
            .collect(),
    };
    let mut alphas_cumprod = Vec::with_capacity(t);
    let mut acc = 1f64;
    for &b in &betas {
        acc *= 1.0 - b;
        alphas_cumprod.push(acc);
    }
    let stride = num_train_steps / num_inference_steps;
    let inference_timesteps: Vec<usize> =
        (1..=num_inference_steps).map(|i| i * stride).collect();
    Ok(DiffusionSchedule { betas, alphas_cumprod, num_train_steps, inference_timesteps })
}

/// A latent-space video at one diffusion timestep.
#[derive(Debug, Clone)]
pub struct VideoLatent {
    pub features: FeatureMap,
    pub timestep: usize,
}

/// Deterministic noise prediction interface: same (z, t, condition)
/// always yields the same output.
pub trait NoisePredictor {
    fn predict(
        &self,
        z: &FeatureMap,
        t: usize,
        condition: Option<&[f32]>,
    ) -> Result<FeatureMap>;
}

/// Classifier-free guidance parameters.
#[derive(Debug, Clone)]
pub struct GuidanceConfig {
    pub scale: f32,
    pub cond: Vec<f32>,
    pub uncond: Vec<f32>,
}

fn step_coefficients(
    sched: &DiffusionSchedule,
    t_from: usize,
    t_to: usize,
) -> Result<(f64, f64)> {
    let a_from = sched.alpha_cumprod(t_from)?;
    let a_to = sched.alpha_cumprod(t_to)?;
    let coef_z = (a_to / a_from).sqrt();
    let coef_e = (1.0 / a_to - 1.0).sqrt() - (1.0 / a_from - 1.0).sqrt();
    Ok((coef_z, coef_e))
}

fn apply_step(
    z: &VideoLatent,
    eps: &FeatureMap,
    coef_z: f64,
    coef_e: f64,
    new_t: usize,
) -> Result<VideoLatent> {
    if eps.data().len() != z.features.data().len() {
        return Err(CoreError::Shape(
            "noise prediction shape differs from latent shape".into(),
        ));
    }
    let data: Vec<f32> = z
        .features
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&zv, &ev)| (coef_z * zv as f64 + coef_e * ev as f64) as f32)
        .collect();
    Ok(VideoLatent {
        features: FeatureMap::new(
            z.features.frames(),
            z.features.height(),
            z.features.width(),
            z.features.channels(),
            data,
        )?,
        timestep: new_t,
    })
}

/// One deterministic DDIM sampling step from timestep `t` down to `t_prev`.
pub fn ddim_sample_step(
    z_t: &VideoLatent,
    eps: &FeatureMap,
    t: usize,
    t_prev: usize,
    sched: &DiffusionSchedule,
) -> Result<VideoLatent> {
    if t_prev >= t {
        return Err(CoreError::Parameter(format!(
            "sample step needs t_prev < t, got {t_prev} >= {t}"
        )));
    }
    let (coef_z, coef_e) = step_coefficients(sched, t, t_prev)?;
    apply_step(z_t, eps, coef_z, coef_e, t_prev)
}

/// One DDIM inversion step from timestep `t` up to `t_next`.
pub fn ddim_invert_step(
    z_t: &VideoLatent,
    eps: &FeatureMap,
    t: usize,
    t_next: usize,
    sched: &DiffusionSchedule,
) -> Result<VideoLatent> {
    if t_next <= t {
        return Err(CoreError::Parameter(format!(
            "invert step needs t_next > t, got {t_next} <= {t}"
        )));
    }
    let (coef_z, coef_e) = step_coefficients(sched, t, t_next)?;
    apply_step(z_t, eps, coef_z, coef_e, t_next)
}

/// Classifier-free combination eps_u + s * (eps_c - eps_u). Scales 1 and 0
/// return the conditional/unconditional prediction exactly.
pub fn guided_eps(
    pred: &dyn NoisePredictor,
    z: &VideoLatent,
    t: usize,
    g: &GuidanceConfig,
) -> Result<FeatureMap> {
    if g.scale == 1.0 {
        return pred.predict(&z.features, t, Some(&g.cond));
    }
    let eps_u = pred.predict(&z.features, t, Some(&g.uncond))?;
    if g.scale == 0.0 {
        return Ok(eps_u);
    }
    let eps_c = pred.predict(&z.features, t, Some(&g.cond))?;
    let s = g.scale as f64;
    let data: Vec<f32> = eps_u
        .data()
        .iter()
        .zip(eps_c.data())
        .map(|(&u, &c)| (u as f64 + s * (c as f64 - u as f64)) as f32)
        .collect();
    FeatureMap::new(eps_u.frames(), eps_u.height(), eps_u.width(), eps_u.channels(), data)
}

fn eps_at(
    pred: &dyn NoisePredictor,
    z: &VideoLatent,
    t: usize,
    guidance: Option<&GuidanceConfig>,
) -> Result<FeatureMap> {
    match guidance {
        Some(g) => guided_eps(pred, z, t, g),
        None => pred.predict(&z.features, t, None),
    }
}

/// Runs DDIM inversion from the clean latent up through every inference
/// timestep, recording the full trajectory (initial latent included).
/// The attention behavior (baseline variant or basis-set attention) lives
/// inside the predictor.
pub fn invert_video(
    z0: &VideoLatent,
    pred: &dyn NoisePredictor,
    sched: &DiffusionSchedule,
    guidance: Option<&GuidanceConfig>,
) -> Result<(VideoLatent, Vec<VideoLatent>)> {
    let mut current = z0.clone();
    let mut trajectory = vec![current.clone()];
    for &t_next in &sched.inference_timesteps {
        let t = current.timestep;
        let eps = eps_at(pred, &current, t, guidance)?;
        current = ddim_invert_step(&current, &eps, t, t_next, sched)?;
        trajectory.push(current.clone());
    }
    Ok((current, trajectory))
}

/// Runs deterministic DDIM sampling from the noisy latent back down to
/// timestep 0 over the same inference timesteps, descending.
pub fn reconstruct_video(
    z_t: &VideoLatent,
    pred: &dyn NoisePredictor,
    sched: &DiffusionSchedule,
    guidance: Option<&GuidanceConfig>,
) -> Result<VideoLatent> {
    let mut current = z_t.clone();
    for i in (0..sched.inference_timesteps.len()).rev() {
        let t = sched.inference_timesteps[i];
        if t != current.timestep {
            return Err(CoreError::Parameter(format!(
                "latent timestep {} does not match schedule step {}",
                current.timestep, t
            )));
        }
        let t_prev = if i == 0 { 0 } else { sched.inference_timesteps[i - 1] };
        let eps = eps_at(pred, &current, t, guidance)?;
        current = ddim_sample_step(&current, &eps, t, t_prev, sched)?;
    }
    Ok(current)
}

/// Mean over trajectory states of the variance across frames of the
/// per-frame feature mean. A temporal-stability proxy: the flatter the
/// frames stay relative to each other during inversion, the smaller it is.
pub fn trajectory_frame_mean_variance(trajectory: &[VideoLatent]) -> f64 {
    if trajectory.is_empty() {
        return 0.0;
    }
    let mut total = 0f64;
    for latent in trajectory {
        let fm = &latent.features;
        let per_frame: Vec<f64> = (0..fm.frames())
            .map(|f| {
                let m = fm.frame_matrix(f).expect("frame in range");
                m.data().iter().map(|&v| v as f64).sum::<f64>() / m.data().len() as f64
            })
            .collect();
        let mean = per_frame.iter().sum::<f64>() / per_frame.len() as f64;
        let var = per_frame.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / per_frame.len() as f64;
        total += var;
    }
    total / trajectory.len() as f64
}

/// Which toy predictor to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictorKind {
    Zero,
    Linear,
    AttentionNet,
}

impl PredictorKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(PredictorKind::Zero),
            "linear" => Ok(PredictorKind::Linear),
            "attention_net" => Ok(PredictorKind::AttentionNet),
            other => Err(CoreError::Parameter(format!("unknown predictor '{other}'"))),
        }
    }
}

/// Sizes needed to build a toy predictor.
#[derive(Debug, Clone, Copy)]
pub struct PredictorDims {
    pub channels: usize,
    pub head_dim: usize,
    pub cond_dim: usize,
}

struct ZeroPredictor;

impl NoisePredictor for ZeroPredictor {
    fn predict(&self, z: &FeatureMap, _t: usize, _c: Option<&[f32]>) -> Result<FeatureMap> {
        FeatureMap::new(
            z.frames(),
            z.height(),
            z.width(),
            z.channels(),
            vec![0.0; z.data().len()],
        )
    }
}

struct LinearPredictor {
    /// C x C map applied to each pixel vector; spectral norm scaled to 0.5.
    a: Matrix,
    /// cond_dim x C bias projection applied when a condition is present.
    cond_proj: Matrix,
}

impl LinearPredictor {
    fn new(channels: usize, cond_dim: usize, seed: Seed) -> Self {
        let mut rng = seeded_rng(seed);
        let mut a = Matrix::new(
            channels,
            channels,
            (0..channels * channels).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
        )
        .unwrap();
        let sigma = estimate_spectral_norm(&a, 50);
        if sigma > 0.0 {
            let scale = (0.5 / sigma) as f32;
            for v in a.data_mut() {
                *v *= scale;
            }
        }
        let cond_proj = Matrix::new(
            cond_dim,
            channels,
            (0..cond_dim * channels)
                .map(|_| rng.gen_range(-1.0f32..1.0) * 0.1)
                .collect(),
        )
        .unwrap();
        Self { a, cond_proj }
    }
}

fn estimate_spectral_norm(a: &Matrix, iters: usize) -> f64 {
    let n = a.cols();
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64) * 0.01).collect();
    let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut sigma = 0.0;
    for _ in 0..iters {
        // u = A v
        let mut u = vec![0f64; a.rows()];
        for (i, ui) in u.iter_mut().enumerate() {
            *ui = a.row(i).iter().zip(&v).map(|(&w, x)| w as f64 * x).sum();
        }
        sigma = norm(&u);
        if sigma == 0.0 {
            return 0.0;
        }
        // v = A^T u, normalized
        let mut vt = vec![0f64; n];
        for i in 0..a.rows() {
            for (j, vj) in vt.iter_mut().enumerate() {
                *vj += a.get(i, j) as f64 * u[i];
            }
        }
        let nv = norm(&vt);
        for (dst, src) in v.iter_mut().zip(&vt) {
            *dst = src / nv;
        }
    }
    sigma
}

impl NoisePredictor for LinearPredictor {
    fn predict(&self, z: &FeatureMap, _t: usize, cond: Option<&[f32]>) -> Result<FeatureMap> {
        let mut out = matmul_transpose_b(z.flattened(), &self.a)?;
        if let Some(c) = cond {
            if c.len() != self.cond_proj.rows() {
                return Err(CoreError::Input(format!(
                    "condition length {} != expected {}",
                    c.len(),
                    self.cond_proj.rows()
                )));
            }
            let cm = Matrix::new(1, c.len(), c.to_vec())?;
            let bias = matmul(&cm, &self.cond_proj)?;
            for i in 0..out.rows() {
                for (o, &b) in out.row_mut(i).iter_mut().zip(bias.row(0)) {
                    *o += b;
                }
            }
        }
        z.with_flattened(out)
    }
}

struct AttentionNetPredictor {
    w_in: Matrix,
    w_out: Matrix,
    cond_proj: Matrix,
    freqs: Vec<f64>,
    phases: Vec<f64>,
    attn_weights: ProjectionWeights,
    attn_cfg: AttentionConfig,
    out_scale: f32,
}

impl AttentionNetPredictor {
    fn new(dims: PredictorDims, seed: Seed, attn_cfg: AttentionConfig) -> Self {
        let mut rng = seeded_rng(seed);
        let c = dims.channels;
        let d = dims.head_dim;
        let sc_in = 1.0 / (c as f32).sqrt();
        let w_in = Matrix::new(
            c,
            d,
            (0..c * d).map(|_| rng.gen_range(-1.0f32..1.0) * sc_in).collect(),
        )
        .unwrap();
        let sc_out = 1.0 / (d as f32).sqrt();
        let w_out = Matrix::new(
            d,
            c,
            (0..d * c).map(|_| rng.gen_range(-1.0f32..1.0) * sc_out).collect(),
        )
        .unwrap();
        let cond_proj = Matrix::new(
            dims.cond_dim,
            d,
            (0..dims.cond_dim * d)
                .map(|_| rng.gen_range(-1.0f32..1.0) * 0.1)
                .collect(),
        )
        .unwrap();
        let freqs: Vec<f64> = (0..d).map(|_| rng.gen_range(0.005..0.1f64)).collect();
        let phases: Vec<f64> =
            (0..d).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
        let attn_weights = ProjectionWeights::random(d, d, Seed(rng.gen::<u64>()));
        Self {
            w_in,
            w_out,
            cond_proj,
            freqs,
            phases,
            attn_weights,
            attn_cfg,
            out_scale: 0.1,
        }
    }
}

impl NoisePredictor for AttentionNetPredictor {
    fn predict(&self, z: &FeatureMap, t: usize, cond: Option<&[f32]>) -> Result<FeatureMap> {
        let mut h = matmul(z.flattened(), &self.w_in)?;
        let d = h.cols();
        let mut bias = vec![0f32; d];
        for j in 0..d {
            bias[j] = (0.1 * (t as f64 * self.freqs[j] + self.phases[j]).sin()) as f32;
        }
        if let Some(c) = cond {
            if c.len() != self.cond_proj.rows() {
                return Err(CoreError::Input(format!(
                    "condition length {} != expected {}",
                    c.len(),
                    self.cond_proj.rows()
                )));
            }
            let cm = Matrix::new(1, c.len(), c.to_vec())?;
            let cb = matmul(&cm, &self.cond_proj)?;
            for (b, &v) in bias.iter_mut().zip(cb.row(0)) {
                *b += v;
            }
        }
        for i in 0..h.rows() {
            for (o, &b) in h.row_mut(i).iter_mut().zip(&bias) {
                *o += b;
            }
        }
        let hmap = z.with_flattened(h)?;
        let attended = if self.attn_cfg.variant == AttentionVariant::Stem {
            stem_sa(&hmap, &self.attn_weights, &self.attn_cfg)?.0
        } else {
            spatial_temporal_sa(&hmap, &self.attn_weights, &self.attn_cfg)?
        };
        // residual connection around the attention block
        let y: Vec<f32> = hmap
            .data()
            .iter()
            .zip(attended.data())
            .map(|(&a, &b)| a + b)
            .collect();
        let ym = Matrix::new(hmap.pixels(), d, y)?;
        let mut out = matmul(&ym, &self.w_out)?;
        for v in out.data_mut() {
            *v *= self.out_scale;
        }
        z.with_flattened(out)
    }
}

/// Builds one of the toy predictors standing in for the pretrained
/// denoiser. All three are deterministic given the seed.
pub fn make_toy_predictor(
    kind: PredictorKind,
    seed: Seed,
    dims: PredictorDims,
    attn_cfg: AttentionConfig,
) -> Box<dyn NoisePredictor> {
    match kind {
        PredictorKind::Zero => Box::new(ZeroPredictor),
        PredictorKind::Linear => {
            Box::new(LinearPredictor::new(dims.channels, dims.cond_dim, seed))
        }
        PredictorKind::AttentionNet => {
            Box::new(AttentionNetPredictor::new(dims, seed, attn_cfg))
        }
    }
}

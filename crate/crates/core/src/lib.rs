//! Desk-scale, framework-free toolkit for low-rank video inversion:
//! estimate a compact basis set for a video's features via EM, use it as
//! the Key/Value source in low-rank self-attention, and drive DDIM
//! inversion/reconstruction with pluggable toy noise predictors, plus the
//! metrics and FLOP accounting needed to check the complexity and
//! consistency claims.

pub mod attention;
pub mod diffusion;
pub mod em;
pub mod error;
pub mod metrics;
pub mod tensor;

pub use attention::{
    attend, count_flops, frame_context, spatial_temporal_sa, stem_sa, AttentionConfig,
    AttentionVariant, FlopReport, ProjectionWeights,
};
pub use diffusion::{
    ddim_invert_step, ddim_sample_step, guided_eps, invert_video, make_schedule,
    make_toy_predictor, reconstruct_video, trajectory_frame_mean_variance, BetaSchedule,
    DiffusionSchedule, GuidanceConfig, NoisePredictor, PredictorDims, PredictorKind,
    VideoLatent,
};
pub use em::{e_step, hard_assign, init_bases, m_step, run_em, EmConfig, EmOutcome, InitStrategy};
pub use error::{CoreError, Result};
pub use metrics::{
    cosine_similarity_map, psnr, ssim, to_gray_plane, warp_error, FlowField, MetricReport,
    PSNR_SENTINEL_DB,
};
pub use tensor::{
    matmul, matmul_transpose_b, seeded_rng, softmax_dim, BasisSet, FeatureMap, Matrix,
    Responsibility, Seed, SoftmaxAxis,
};

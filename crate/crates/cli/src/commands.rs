//! Subcommand implementations. Each command reads its inputs fully,
//! computes, then writes every output file; nothing is written before the
//! inputs validate, so a failing run leaves no partial artifacts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{Map, Value};
use stem_core::{
    count_flops, invert_video, make_schedule, make_toy_predictor, psnr, reconstruct_video,
    run_em, spatial_temporal_sa, ssim, stem_sa, to_gray_plane, trajectory_frame_mean_variance,
    warp_error, cosine_similarity_map, AttentionConfig, AttentionVariant, EmConfig, FeatureMap,
    GuidanceConfig, InitStrategy, PredictorDims, PredictorKind, ProjectionWeights, Seed,
    VideoLatent,
};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::report::{fmt_float, json_num, write_csv, write_json};
use crate::synth::{gen_clusters, gen_moving_blob, gen_perturbed_video, SynthKind};
use crate::tensor_io::{
    feature_map_to_tensor, matrix_to_tensor, read_tensor, tensor_to_feature_map, tensor_to_flow,
    write_tensor, Tensor,
};

pub struct EmArgs {
    pub input: PathBuf,
    pub out: PathBuf,
}

pub struct InvertArgs {
    pub input: PathBuf,
    pub out: PathBuf,
    pub save_trajectory: bool,
}

pub struct BenchArgs {
    pub out: PathBuf,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub head_dim: usize,
    pub runs: usize,
}

pub struct SweepArgs {
    pub input: PathBuf,
    pub out: PathBuf,
}

pub struct MetricsArgs {
    pub input: PathBuf,
    pub reference: PathBuf,
    pub flow: Option<PathBuf>,
    pub feature_a: Option<PathBuf>,
    pub feature_b: Option<PathBuf>,
    pub out: PathBuf,
}

pub struct GenArgs {
    pub kind: SynthKind,
    pub out: PathBuf,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub centers: usize,
    pub points: usize,
    pub sigma: f32,
    pub separation: f32,
}

fn ensure_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(crate::error::io_err(dir))
}

fn em_config(cfg: &ExperimentConfig, k: usize) -> EmConfig {
    EmConfig {
        num_bases: k,
        temperature: cfg.tau,
        iterations: cfg.iters,
        init: InitStrategy::SamplePixels,
        normalize_bases: false,
        refresh_responsibilities: true,
        seed: cfg.seed,
    }
}

fn predictor_name(kind: PredictorKind) -> &'static str {
    match kind {
        PredictorKind::Zero => "zero",
        PredictorKind::Linear => "linear",
        PredictorKind::AttentionNet => "attention_net",
    }
}

/// Wall time in ms, zeroed when timing is disabled so reruns are
/// byte-identical.
fn elapsed_ms(cfg: &ExperimentConfig, start: Instant) -> f64 {
    if cfg.timing {
        start.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    }
}

fn common_fields(cfg: &ExperimentConfig, fields: &mut Map<String, Value>) {
    fields.insert("seed".into(), Value::from(cfg.seed.0));
    fields.insert("threads".into(), Value::from(cfg.threads as u64));
}

pub fn cmd_em(cfg: &ExperimentConfig, args: &EmArgs) -> Result<()> {
    let x = tensor_to_feature_map(&read_tensor(&args.input)?)?;
    let em = em_config(cfg, cfg.k());
    let start = Instant::now();
    let outcome = run_em(&x, &em)?;
    let wall = elapsed_ms(cfg, start);

    ensure_out(&args.out)?;
    write_tensor(&args.out.join("bases.stem"), &matrix_to_tensor(&outcome.bases.data))?;
    write_tensor(
        &args.out.join("responsibilities.stem"),
        &matrix_to_tensor(&outcome.responsibilities.data),
    )?;
    let mut fields = Map::new();
    fields.insert("k".into(), Value::from(em.num_bases as u64));
    fields.insert("tau".into(), json_num(em.temperature as f64));
    fields.insert("iters".into(), Value::from(em.iterations as u64));
    fields.insert(
        "basis_shifts".into(),
        Value::Array(outcome.basis_shifts.iter().map(|&s| json_num(s)).collect()),
    );
    fields.insert("wall_time_ms".into(), json_num(wall));
    common_fields(cfg, &mut fields);
    write_json(&args.out.join("em_summary.json"), fields)
}

struct InversionOutcome {
    z_final: VideoLatent,
    trajectory: Vec<VideoLatent>,
    recon: VideoLatent,
    psnr_per_frame: Vec<f64>,
    ssim_per_frame: Vec<f64>,
    frame_mean_variance: f64,
}

fn guidance_for(cfg: &ExperimentConfig) -> Option<GuidanceConfig> {
    cfg.guidance.map(|scale| {
        let dim = 4;
        let mut cond = vec![0.0f32; dim];
        cond[0] = 1.0;
        GuidanceConfig { scale, cond, uncond: vec![0.0; dim] }
    })
}

/// Full invert → reconstruct round trip plus per-frame reconstruction
/// quality against the input.
fn run_inversion(
    cfg: &ExperimentConfig,
    variant: AttentionVariant,
    k: usize,
    z0: &FeatureMap,
) -> Result<InversionOutcome> {
    let attn = AttentionConfig { variant, em: em_config(cfg, k) };
    let dims = PredictorDims {
        channels: z0.channels(),
        head_dim: z0.channels(),
        cond_dim: 4,
    };
    let pred = make_toy_predictor(cfg.predictor, cfg.seed, dims, attn);
    let sched = make_schedule(
        cfg.schedule,
        cfg.beta_start,
        cfg.beta_end,
        cfg.train_steps,
        cfg.steps,
    )?;
    let guidance = guidance_for(cfg);
    let start = VideoLatent { features: z0.clone(), timestep: 0 };
    let (z_final, trajectory) = invert_video(&start, pred.as_ref(), &sched, guidance.as_ref())?;
    let recon = reconstruct_video(&z_final, pred.as_ref(), &sched, guidance.as_ref())?;

    let mut psnr_per_frame = Vec::with_capacity(z0.frames());
    let mut ssim_per_frame = Vec::with_capacity(z0.frames());
    for f in 0..z0.frames() {
        let a = z0.frame_matrix(f)?;
        let b = recon.features.frame_matrix(f)?;
        psnr_per_frame.push(psnr(a.data(), b.data(), cfg.peak)?);
        ssim_per_frame.push(ssim(
            &to_gray_plane(z0, f)?,
            &to_gray_plane(&recon.features, f)?,
            cfg.peak,
        )?);
    }
    let frame_mean_variance = trajectory_frame_mean_variance(&trajectory);
    Ok(InversionOutcome {
        z_final,
        trajectory,
        recon,
        psnr_per_frame,
        ssim_per_frame,
        frame_mean_variance,
    })
}

fn trajectory_tensor(trajectory: &[VideoLatent]) -> Tensor {
    let fm = &trajectory[0].features;
    let mut data = Vec::with_capacity(trajectory.len() * fm.data().len());
    for latent in trajectory {
        data.extend_from_slice(latent.features.data());
    }
    Tensor {
        dims: vec![trajectory.len(), fm.frames(), fm.height(), fm.width(), fm.channels()],
        data,
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn cmd_invert(cfg: &ExperimentConfig, args: &InvertArgs) -> Result<()> {
    let z0 = tensor_to_feature_map(&read_tensor(&args.input)?)?;
    let start = Instant::now();
    let outcome = run_inversion(cfg, cfg.variant, cfg.k(), &z0)?;
    let wall = elapsed_ms(cfg, start);

    ensure_out(&args.out)?;
    write_tensor(
        &args.out.join("z_final.stem"),
        &feature_map_to_tensor(&outcome.z_final.features),
    )?;
    write_tensor(&args.out.join("recon.stem"), &feature_map_to_tensor(&outcome.recon.features))?;
    if args.save_trajectory {
        write_tensor(&args.out.join("trajectory.stem"), &trajectory_tensor(&outcome.trajectory))?;
    }
    let rows: Vec<Vec<String>> = (0..z0.frames())
        .map(|f| {
            vec![
                f.to_string(),
                fmt_float(outcome.psnr_per_frame[f]),
                fmt_float(outcome.ssim_per_frame[f]),
            ]
        })
        .collect();
    write_csv(&args.out.join("invert_metrics.csv"), &["frame", "psnr", "ssim"], &rows)?;

    let mut fields = Map::new();
    fields.insert("variant".into(), Value::from(cfg.variant.name()));
    fields.insert("k".into(), Value::from(cfg.k() as u64));
    fields.insert("tau".into(), json_num(cfg.tau as f64));
    fields.insert("iters".into(), Value::from(cfg.iters as u64));
    fields.insert("steps".into(), Value::from(cfg.steps as u64));
    fields.insert(
        "guidance".into(),
        cfg.guidance.map(|g| json_num(g as f64)).unwrap_or(Value::Null),
    );
    fields.insert("predictor".into(), Value::from(predictor_name(cfg.predictor)));
    fields.insert("mean_psnr".into(), json_num(mean(&outcome.psnr_per_frame)));
    fields.insert("mean_ssim".into(), json_num(mean(&outcome.ssim_per_frame)));
    fields.insert("frame_mean_variance".into(), json_num(outcome.frame_mean_variance));
    fields.insert("final_timestep".into(), Value::from(outcome.z_final.timestep as u64));
    fields.insert("wall_time_ms".into(), json_num(wall));
    common_fields(cfg, &mut fields);
    write_json(&args.out.join("invert_summary.json"), fields)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// One timed attention pass for a variant; stem includes its internal EM.
fn attention_pass(
    variant: AttentionVariant,
    k: usize,
    cfg: &ExperimentConfig,
    x: &FeatureMap,
    w: &ProjectionWeights,
) -> Result<()> {
    if variant == AttentionVariant::Stem {
        let attn = AttentionConfig::stem(em_config(cfg, k));
        stem_sa(x, w, &attn)?;
    } else {
        spatial_temporal_sa(x, w, &AttentionConfig::new(variant))?;
    }
    Ok(())
}

pub fn cmd_bench(cfg: &ExperimentConfig, args: &BenchArgs) -> Result<()> {
    let (n, h, w, c, d) = (args.frames, args.height, args.width, args.channels, args.head_dim);
    let runs = args.runs.max(5);
    let x = random_features(n, h, w, c, cfg.seed)?;
    let weights = ProjectionWeights::random(c, d, cfg.seed);

    // One row per non-stem variant, plus one stem row per K in the sweep.
    let mut plan: Vec<(AttentionVariant, usize)> = vec![
        (AttentionVariant::SelfOnly, 0),
        (AttentionVariant::TwoFrameFateZero, 0),
        (AttentionVariant::TwoFrameTuneAVideo, 0),
        (AttentionVariant::AllFrame, 0),
    ];
    for &k in &cfg.k_list {
        plan.push((AttentionVariant::Stem, k));
    }

    let mut rows = Vec::with_capacity(plan.len());
    for &(variant, k) in &plan {
        let r = if variant == AttentionVariant::Stem { cfg.iters } else { 0 };
        let report = count_flops(variant, n, h, w, c, d, k, r)?;
        let wall = if cfg.timing {
            attention_pass(variant, k, cfg, &x, &weights)?; // discarded warm-up
            let mut times = Vec::with_capacity(runs);
            for _ in 0..runs {
                let start = Instant::now();
                attention_pass(variant, k, cfg, &x, &weights)?;
                times.push(start.elapsed().as_secs_f64() * 1e3);
            }
            median(times)
        } else {
            0.0
        };
        rows.push(vec![
            variant.name().to_string(),
            k.to_string(),
            n.to_string(),
            h.to_string(),
            w.to_string(),
            c.to_string(),
            d.to_string(),
            r.to_string(),
            report.attention_flops.to_string(),
            report.projection_flops.to_string(),
            report.em_flops.to_string(),
            report.total().to_string(),
            fmt_float(wall),
        ]);
    }
    ensure_out(&args.out)?;
    write_csv(
        &args.out.join("bench.csv"),
        &[
            "variant",
            "k",
            "n",
            "h",
            "w",
            "c",
            "d",
            "r",
            "attention_flops",
            "projection_flops",
            "em_flops",
            "total_flops",
            "wall_time_ms",
        ],
        &rows,
    )
}

fn random_features(n: usize, h: usize, w: usize, c: usize, seed: Seed) -> Result<FeatureMap> {
    use rand::Rng;
    let mut rng = stem_core::seeded_rng(seed);
    let data = (0..n * h * w * c).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    Ok(FeatureMap::new(n, h, w, c, data)?)
}

pub fn cmd_sweep_k(cfg: &ExperimentConfig, args: &SweepArgs) -> Result<()> {
    let z0 = tensor_to_feature_map(&read_tensor(&args.input)?)?;
    let mut ks: Vec<usize> = Vec::new();
    for &k in &cfg.k_list {
        if ks.contains(&k) {
            eprintln!("warning: duplicate K={k} in sweep list, keeping the first occurrence");
        } else {
            ks.push(k);
        }
    }
    let mut rows = Vec::with_capacity(ks.len());
    for &k in &ks {
        let outcome = run_inversion(cfg, AttentionVariant::Stem, k, &z0)?;
        let flops = count_flops(
            AttentionVariant::Stem,
            z0.frames(),
            z0.height(),
            z0.width(),
            z0.channels(),
            z0.channels(),
            k,
            cfg.iters,
        )?;
        rows.push(vec![
            k.to_string(),
            fmt_float(mean(&outcome.psnr_per_frame)),
            fmt_float(mean(&outcome.ssim_per_frame)),
            flops.total().to_string(),
        ]);
    }
    ensure_out(&args.out)?;
    write_csv(&args.out.join("sweep_k.csv"), &["k", "mean_psnr", "mean_ssim", "flops"], &rows)
}

pub fn cmd_metrics(cfg: &ExperimentConfig, args: &MetricsArgs) -> Result<()> {
    // Validate and load every input before writing anything.
    let input = tensor_to_feature_map(&read_tensor(&args.input)?)?;
    let reference = tensor_to_feature_map(&read_tensor(&args.reference)?)?;
    let flow = match &args.flow {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::Config(format!(
                    "flow file {} does not exist",
                    path.display()
                )));
            }
            Some(tensor_to_flow(&read_tensor(path)?)?)
        }
        None => None,
    };
    let features = match (&args.feature_a, &args.feature_b) {
        (Some(a), Some(b)) => Some((
            tensor_to_feature_map(&read_tensor(a)?)?,
            tensor_to_feature_map(&read_tensor(b)?)?,
        )),
        (None, None) => None,
        _ => {
            return Err(CliError::Config(
                "cosine maps need both --feature-a and --feature-b".into(),
            ))
        }
    };

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut psnrs = Vec::with_capacity(input.frames());
    let mut ssims = Vec::with_capacity(input.frames());
    for f in 0..input.frames() {
        let a = input.frame_matrix(f)?;
        let b = reference.frame_matrix(f)?;
        let p = psnr(a.data(), b.data(), cfg.peak)?;
        let s = ssim(&to_gray_plane(&input, f)?, &to_gray_plane(&reference, f)?, cfg.peak)?;
        rows.push(vec!["psnr".into(), f.to_string(), fmt_float(p)]);
        rows.push(vec!["ssim".into(), f.to_string(), fmt_float(s)]);
        psnrs.push(p);
        ssims.push(s);
    }
    let warp = match &flow {
        Some(fl) => {
            let report = warp_error(&input, fl)?;
            for (pair, &v) in report.per_frame.iter().enumerate() {
                rows.push(vec!["warp_error".into(), pair.to_string(), fmt_float(v)]);
            }
            Some(report.mean)
        }
        None => None,
    };
    let cosine = match &features {
        Some((a, b)) => Some(cosine_similarity_map(a, b)?),
        None => None,
    };

    ensure_out(&args.out)?;
    write_csv(&args.out.join("metrics.csv"), &["metric", "frame", "value"], &rows)?;
    if let Some((map, _)) = &cosine {
        write_tensor(&args.out.join("cosine_map.stem"), &matrix_to_tensor(map))?;
    }
    let mut fields = Map::new();
    fields.insert("mean_psnr".into(), json_num(mean(&psnrs)));
    fields.insert("mean_ssim".into(), json_num(mean(&ssims)));
    fields.insert(
        "mean_warp_error".into(),
        warp.map(json_num).unwrap_or(Value::Null),
    );
    fields.insert(
        "mean_cosine".into(),
        cosine.as_ref().map(|(_, m)| json_num(*m)).unwrap_or(Value::Null),
    );
    fields.insert("peak".into(), json_num(cfg.peak));
    common_fields(cfg, &mut fields);
    write_json(&args.out.join("metrics_summary.json"), fields)
}

pub fn cmd_gen(cfg: &ExperimentConfig, args: &GenArgs) -> Result<()> {
    ensure_out(&args.out)?;
    match args.kind {
        SynthKind::Clusters => {
            let t = gen_clusters(
                args.centers,
                args.points,
                args.channels,
                args.sigma,
                args.separation,
                cfg.seed,
            )?;
            write_tensor(&args.out.join("data.stem"), &t)
        }
        SynthKind::PerturbedVideo => {
            let t = gen_perturbed_video(
                args.frames,
                args.height,
                args.width,
                args.channels,
                args.sigma,
                cfg.seed,
            )?;
            write_tensor(&args.out.join("data.stem"), &t)
        }
        SynthKind::MovingBlob => {
            let (video, flow) = gen_moving_blob(args.frames, args.height, args.width, args.channels)?;
            write_tensor(&args.out.join("data.stem"), &video)?;
            write_tensor(&args.out.join("flow.stem"), &flow)
        }
    }
}

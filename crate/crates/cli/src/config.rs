//! Experiment configuration: a flat key=value file plus command-line
//! overrides, where a flag always wins over the file. `--threads` falls
//! back to the STEM_THREADS environment variable when neither the flag
//! nor the file sets it.

use std::path::Path;

use stem_core::{AttentionVariant, BetaSchedule, PredictorKind, Seed};

use crate::error::{io_err, CliError, Result};

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub variant: AttentionVariant,
    pub k_list: Vec<usize>,
    pub tau: f32,
    pub iters: usize,
    pub schedule: BetaSchedule,
    pub beta_start: f64,
    pub beta_end: f64,
    pub train_steps: usize,
    pub steps: usize,
    pub guidance: Option<f32>,
    pub seed: Seed,
    pub threads: usize,
    pub predictor: PredictorKind,
    pub peak: f64,
    /// When false, wall-time fields in reports are written as zero so
    /// reruns are byte-identical.
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            variant: AttentionVariant::Stem,
            k_list: vec![256],
            tau: 0.05,
            iters: 3,
            schedule: BetaSchedule::ScaledLinear,
            beta_start: 0.00085,
            beta_end: 0.012,
            train_steps: 1000,
            steps: 50,
            guidance: None,
            seed: Seed(0),
            threads: 1,
            predictor: PredictorKind::AttentionNet,
            peak: 1.0,
            timing: true,
        }
    }
}

/// Values supplied on the command line; `None` means "not given".
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub variant: Option<String>,
    pub k: Option<String>,
    pub tau: Option<f32>,
    pub iters: Option<usize>,
    pub steps: Option<usize>,
    pub guidance: Option<f32>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub no_timing: bool,
}

impl ExperimentConfig {
    /// First value of the K list, the working basis count for single-K
    /// commands.
    pub fn k(&self) -> usize {
        self.k_list[0]
    }

    /// Loads the optional config file, then applies CLI overrides and the
    /// STEM_THREADS fallback.
    pub fn resolve(file: Option<&Path>, ov: &Overrides) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut threads_from_file = false;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            for (lineno, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    CliError::Config(format!(
                        "{}:{}: expected key=value, got '{raw}'",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                if key.trim() == "threads" {
                    threads_from_file = true;
                }
                cfg.apply(key.trim(), value.trim()).map_err(|e| {
                    CliError::Config(format!("{}:{}: {e}", path.display(), lineno + 1))
                })?;
            }
        }
        if let Some(v) = &ov.variant {
            cfg.variant = AttentionVariant::parse(v)?;
        }
        if let Some(k) = &ov.k {
            cfg.k_list = parse_k_list(k)?;
        }
        if let Some(t) = ov.tau {
            cfg.tau = t;
        }
        if let Some(r) = ov.iters {
            cfg.iters = r;
        }
        if let Some(s) = ov.steps {
            cfg.steps = s;
        }
        if let Some(g) = ov.guidance {
            cfg.guidance = Some(g);
        }
        if let Some(s) = ov.seed {
            cfg.seed = Seed(s);
        }
        if let Some(t) = ov.threads {
            cfg.threads = t;
        } else if !threads_from_file {
            if let Ok(env) = std::env::var("STEM_THREADS") {
                cfg.threads = env.parse().map_err(|_| {
                    CliError::Config(format!("STEM_THREADS must be an integer, got '{env}'"))
                })?;
            }
        }
        if ov.no_timing {
            cfg.timing = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| CliError::Config(format!("key '{key}': expected {what}, got '{value}'"));
        match key {
            "variant" => self.variant = AttentionVariant::parse(value)?,
            "k" => self.k_list = parse_k_list(value)?,
            "tau" => self.tau = value.parse().map_err(|_| bad("a number"))?,
            "iters" => self.iters = value.parse().map_err(|_| bad("an integer"))?,
            "schedule" => self.schedule = BetaSchedule::parse(value)?,
            "beta_start" => self.beta_start = value.parse().map_err(|_| bad("a number"))?,
            "beta_end" => self.beta_end = value.parse().map_err(|_| bad("a number"))?,
            "train_steps" => self.train_steps = value.parse().map_err(|_| bad("an integer"))?,
            "steps" => self.steps = value.parse().map_err(|_| bad("an integer"))?,
            "guidance" => self.guidance = Some(value.parse().map_err(|_| bad("a number"))?),
            "seed" => self.seed = Seed(value.parse().map_err(|_| bad("an integer"))?),
            "threads" => self.threads = value.parse().map_err(|_| bad("an integer"))?,
            "predictor" => self.predictor = PredictorKind::parse(value)?,
            "peak" => self.peak = value.parse().map_err(|_| bad("a number"))?,
            "timing" => self.timing = value.parse().map_err(|_| bad("true or false"))?,
            other => {
                return Err(CliError::Config(format!("unknown config key '{other}'")));
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.k_list.is_empty() {
            return Err(CliError::Config("k list must not be empty".into()));
        }
        if self.steps == 0 || self.train_steps == 0 {
            return Err(CliError::Config("steps and train_steps must be >= 1".into()));
        }
        if self.threads == 0 {
            return Err(CliError::Config("threads must be >= 1".into()));
        }
        if !(self.peak > 0.0) {
            return Err(CliError::Config("peak must be positive".into()));
        }
        Ok(())
    }
}

fn parse_k_list(s: &str) -> Result<Vec<usize>> {
    let list: Vec<usize> = s
        .split(',')
        .map(|p| {
            p.trim().parse().map_err(|_| {
                CliError::Config(format!("k list entries must be integers, got '{p}'"))
            })
        })
        .collect::<Result<_>>()?;
    if list.is_empty() || list.contains(&0) {
        return Err(CliError::Config("k list entries must be >= 1".into()));
    }
    Ok(list)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_setting() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.variant, AttentionVariant::Stem);
        assert_eq!(cfg.k_list, vec![256]);
        assert!((cfg.tau - 0.05).abs() < 1e-9);
        assert_eq!(cfg.iters, 3);
        assert_eq!(cfg.steps, 50);
        assert!(cfg.guidance.is_none());
    }

    #[test]
    fn file_parses_and_flags_win() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        std::fs::write(
            &path,
            "# sweep setup\nvariant = all_frame\nk = 128,256,512\ntau = 0.1\nsteps=10\n",
        )
        .unwrap();
        let ov = Overrides { tau: Some(0.2), ..Default::default() };
        let cfg = ExperimentConfig::resolve(Some(&path), &ov).unwrap();
        assert_eq!(cfg.variant, AttentionVariant::AllFrame);
        assert_eq!(cfg.k_list, vec![128, 256, 512]);
        assert!((cfg.tau - 0.2).abs() < 1e-9, "flag overrides file");
        assert_eq!(cfg.steps, 10);
    }

    #[test]
    fn unknown_key_is_rejected_with_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        std::fs::write(&path, "bogus = 1\n").unwrap();
        let err = ExperimentConfig::resolve(Some(&path), &Overrides::default()).unwrap_err();
        assert_eq!(err.code(), "config");
        assert!(err.to_string().contains(":1:"));
    }

    #[test]
    fn bad_k_list_is_rejected() {
        let ov = Overrides { k: Some("128,abc".into()), ..Default::default() };
        assert!(ExperimentConfig::resolve(None, &ov).is_err());
    }
}

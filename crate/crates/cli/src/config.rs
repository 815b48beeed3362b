//! Flat key=value run configuration.
//!
//! One line per setting, `#` starts a comment, unknown keys are rejected.
//! Every key has a default, so an empty file is the default benchmark run.

use evifuse_bench::{SynthConfig, TrainConfig};
use evifuse_core::fusion::{FusionConfig, LossMask};
use evifuse_core::multitask::TaskMask;
use std::path::{Path, PathBuf};

/// Full configuration of a run: dataset, fusion weights, optimizer, and
/// ablation switches.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub fusion: FusionConfig,
    pub train: TrainConfig,
    pub enable_cross_region: bool,
    pub enable_local_global: bool,
    pub enable_scene_task: bool,
    pub enable_distortion_task: bool,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            fusion: FusionConfig::default(),
            train: TrainConfig::default(),
            enable_cross_region: true,
            enable_local_global: true,
            enable_scene_task: true,
            enable_distortion_task: true,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// The ablation switches as a loss mask.
    pub fn loss_mask(&self) -> LossMask {
        LossMask {
            tasks: TaskMask {
                scene: self.enable_scene_task,
                distortion: self.enable_distortion_task,
            },
            cross_region: self.enable_cross_region,
            local_global: self.enable_local_global,
        }
    }

    /// Apply one seed to both dataset generation and training.
    pub fn set_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.train.seed = seed;
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut cfg = RunConfig::default();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key=value, got '{line}'", line_no + 1))?;
            let key = key.trim();
            let value = value.trim();
            let ctx = |what: &str| format!("line {}: bad {what} value '{value}'", line_no + 1);
            let parse_usize =
                |value: &str, what: &str| value.parse::<usize>().map_err(|_| ctx(what));
            let parse_u64 = |value: &str, what: &str| value.parse::<u64>().map_err(|_| ctx(what));
            let parse_f64 = |value: &str, what: &str| value.parse::<f64>().map_err(|_| ctx(what));
            let parse_bool = |value: &str, what: &str| match value {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(ctx(what)),
            };
            match key {
                "n_samples" => cfg.synth.n_samples = parse_usize(value, key)?,
                "n_subregions" => cfg.synth.n_subregions = parse_usize(value, key)?,
                "feature_dim" => cfg.synth.feature_dim = parse_usize(value, key)?,
                "scene_classes" => cfg.synth.scene_classes = parse_usize(value, key)?,
                "distortion_classes" => cfg.synth.distortion_classes = parse_usize(value, key)?,
                "noise_scale" => cfg.synth.noise_scale = parse_f64(value, key)?,
                "seed" => {
                    let seed = parse_u64(value, key)?;
                    cfg.set_seed(seed);
                }
                "lambda1" => cfg.fusion.lambda1 = parse_f64(value, key)?,
                "lambda2" => cfg.fusion.lambda2 = parse_f64(value, key)?,
                "tau" => cfg.fusion.tau = parse_f64(value, key)?,
                "n_fuse" => cfg.fusion.n_fuse = parse_usize(value, key)?,
                "epochs" => cfg.train.epochs = parse_usize(value, key)?,
                "learning_rate" => cfg.train.learning_rate = parse_f64(value, key)?,
                "batch_size" => cfg.train.batch_size = parse_usize(value, key)?,
                "holdout_frac" => cfg.train.holdout_frac = parse_f64(value, key)?,
                "train_crops" => cfg.train.train_crops = parse_usize(value, key)?,
                "eval_crops" => cfg.train.eval_crops = parse_usize(value, key)?,
                "enable_cross_region" => cfg.enable_cross_region = parse_bool(value, key)?,
                "enable_local_global" => cfg.enable_local_global = parse_bool(value, key)?,
                "enable_scene_task" => cfg.enable_scene_task = parse_bool(value, key)?,
                "enable_distortion_task" => cfg.enable_distortion_task = parse_bool(value, key)?,
                "out_dir" => cfg.out_dir = PathBuf::from(value),
                _ => return Err(format!("line {}: unknown key '{key}'", line_no + 1)),
            }
        }
        cfg.train.mask = cfg.loss_mask();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        Self::parse(&text)
    }
}

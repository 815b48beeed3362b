//! Training loop: gradient descent on the overall loss with hand-written
//! backpropagation through the scorer, joint softmax, projections, and
//! fusion operators.
//!
//! Single-threaded on purpose; given identical config and seed two runs
//! produce identical histories.

use crate::dataset::{split_dataset, Sample, QUALITY_LEVELS};
use crate::error::{BenchError, Result};
use crate::metrics::{evaluate, MetricsReport};
use crate::scorer::{ScorerDims, TinyScorer};
use evifuse_core::fusion::{FusionConfig, LossMask, LossReport, ViewSelection};
use evifuse_core::grad::{joint_softmax_vjp, overall_loss_with_grad};
use evifuse_core::joint::Task;
use evifuse_core::multitask::{dwa_update, BatchItem, TaskTargets, TaskWeights};
use evifuse_core::select_fusion_views;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::path::Path;

const EPOCH_SALT: u64 = 0x7a41_9e77_0c12_55aa;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Fraction of samples held out for per-epoch validation metrics.
    pub holdout_frac: f64,
    /// Local crops used per sample during training.
    pub train_crops: usize,
    /// Local crops aggregated at evaluation time.
    pub eval_crops: usize,
    pub seed: u64,
    /// Ablation switches for loss components.
    pub mask: LossMask,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 1e-2,
            batch_size: 16,
            holdout_frac: 0.2,
            train_crops: 4,
            eval_crops: 15,
            seed: 7,
            mask: LossMask::all(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.train_crops == 0 {
            return Err(BenchError::invalid_input(
                "epochs, batch_size, and train_crops must be positive",
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(BenchError::invalid_input(format!(
                "learning rate must be finite and > 0; got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.holdout_frac) {
            return Err(BenchError::invalid_input(format!(
                "holdout fraction must lie in [0, 1); got {}",
                self.holdout_frac
            )));
        }
        Ok(())
    }
}

/// One epoch's losses, weights, and validation metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_quality: f64,
    pub loss_scene: f64,
    pub loss_distortion: f64,
    pub multitask: f64,
    pub cross_region: f64,
    pub local_global: f64,
    pub total: f64,
    pub lambda_q: f64,
    pub lambda_s: f64,
    pub lambda_d: f64,
    pub val_srcc: f64,
    pub val_plcc: f64,
    pub val_acc_scene: f64,
    pub val_acc_distortion: f64,
    pub val_ci_width: f64,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub scorer: TinyScorer,
    pub history: Vec<EpochRecord>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Labels of one sample in core form.
pub fn sample_targets(sample: &Sample, scenes: usize, distortions: usize) -> TaskTargets {
    let mut scene = vec![0.0; scenes];
    scene[sample.scene] = 1.0;
    let mut distortion = vec![0.0; distortions];
    distortion[sample.distortion] = 1.0;
    TaskTargets {
        mos: sample.mos,
        scene,
        distortion,
    }
}

/// Loss and flat-parameter gradients for one batch of samples.
///
/// The flat layout matches [`TinyScorer::flatten`]. Selections choose which
/// local views feed the fusion losses, one list per sample.
pub fn batch_loss_and_grads(
    scorer: &TinyScorer,
    samples: &[&Sample],
    n_crops: usize,
    weights: &TaskWeights,
    fusion: &FusionConfig,
    selections: &[ViewSelection],
    mask: LossMask,
) -> Result<(f64, LossReport, Vec<f64>)> {
    let dims = scorer.dims;
    // Forward pass, caching logits for the softmax VJP.
    let mut local_logits: Vec<Vec<Vec<f64>>> = Vec::with_capacity(samples.len());
    let mut global_logits: Vec<Vec<f64>> = Vec::with_capacity(samples.len());
    let mut batch: Vec<BatchItem> = Vec::with_capacity(samples.len());
    for sample in samples {
        let take = n_crops.clamp(1, sample.local_features.len());
        let mut logits_per_view = Vec::with_capacity(take);
        let mut views = Vec::with_capacity(take);
        for features in &sample.local_features[..take] {
            let logits = scorer.logits(features)?;
            views.push(evifuse_core::joint_softmax(
                &logits,
                dims.quality_levels,
                dims.scenes,
                dims.distortions,
                scorer.kappa(),
            )?);
            logits_per_view.push(logits);
        }
        let g_logits = scorer.logits(&sample.global_features)?;
        let global_view = evifuse_core::joint_softmax(
            &g_logits,
            dims.quality_levels,
            dims.scenes,
            dims.distortions,
            scorer.kappa(),
        )?;
        local_logits.push(logits_per_view);
        global_logits.push(g_logits);
        batch.push(BatchItem {
            views: evifuse_core::ViewSet::new(views, global_view)?,
            targets: sample_targets(sample, dims.scenes, dims.distortions),
        });
    }

    let (total, report, grads) =
        overall_loss_with_grad(&batch, &scorer.proj, weights, fusion, selections, mask)?;

    // Pull joint cotangents back to scorer parameters.
    let mut d_weight = vec![0.0; scorer.weight.len()];
    let mut d_log_kappa = 0.0;
    let kappa = scorer.kappa();

    let mut pull_view = |logits: &[f64], probs: &[f64], d_probs: &[f64], features: &[f64]| {
        let (d_logits, d_kappa) = joint_softmax_vjp(logits, probs, kappa, d_probs);
        d_log_kappa += d_kappa * kappa;
        scorer.logits_vjp(features, &d_logits, &mut d_weight);
    };

    for (idx, sample) in samples.iter().enumerate() {
        let item = &batch[idx];
        for (v, view) in item.views.locals.iter().enumerate() {
            pull_view(
                &local_logits[idx][v],
                view.probs(),
                &grads.joints[idx].locals[v],
                &sample.local_features[v],
            );
        }
        pull_view(
            &global_logits[idx],
            item.views.global_view.probs(),
            &grads.joints[idx].global_view,
            &sample.global_features,
        );
    }

    // Assemble the flat gradient in flatten() order.
    let mut flat = Vec::with_capacity(scorer.param_count());
    flat.extend_from_slice(&d_weight);
    flat.push(d_log_kappa);
    for task in Task::ALL {
        let tp = grads.proj.task(task);
        for row in &tp.weights {
            flat.extend_from_slice(row);
        }
        flat.extend_from_slice(&tp.bias);
    }
    Ok((total, report, flat))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    lr: f64,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grads[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Train a fresh scorer on the samples.
///
/// The holdout split, parameter initialization, batch order, and fusion-view
/// sampling all derive from `cfg.seed`; the run is fully reproducible.
pub fn train(
    samples: &[Sample],
    scenes: usize,
    distortions: usize,
    fusion: &FusionConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    fusion.validate().map_err(BenchError::Core)?;
    let first = samples
        .first()
        .ok_or_else(|| BenchError::invalid_input("training needs at least one sample"))?;
    let dims = ScorerDims {
        quality_levels: QUALITY_LEVELS,
        scenes,
        distortions,
        feature_dim: first.global_features.len(),
    };
    for s in samples {
        if s.scene >= scenes || s.distortion >= distortions {
            return Err(BenchError::invalid_input(format!(
                "label out of range: scene {} / distortion {} with {scenes} scenes, {distortions} distortions",
                s.scene, s.distortion
            )));
        }
    }

    let (train_indices, val_indices) = split_dataset(samples.len(), cfg.holdout_frac, cfg.seed);
    if train_indices.len() < 2 {
        return Err(BenchError::invalid_input(
            "training split needs at least two samples",
        ));
    }
    let val_samples: Vec<Sample> = val_indices.iter().map(|&i| samples[i].clone()).collect();

    let mut scorer = TinyScorer::init(dims, cfg.seed);
    let mut params = scorer.flatten();
    let mut adam = Adam::new(params.len(), cfg.learning_rate);
    let mut weights = TaskWeights::initial();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ EPOCH_SALT);

    let mut order = train_indices.clone();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }

        let mut sums = LossSums::default();
        for chunk in order.chunks(cfg.batch_size) {
            let batch_samples: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let n_locals = batch_samples
                .iter()
                .map(|s| s.local_features.len().min(cfg.train_crops))
                .collect::<Vec<_>>();
            let selections: Vec<ViewSelection> = n_locals
                .iter()
                .map(|&n| select_fusion_views(n, fusion.n_fuse, Some(&mut rng)))
                .collect();

            let (total, report, grads) = batch_loss_and_grads(
                &scorer,
                &batch_samples,
                cfg.train_crops,
                &weights,
                fusion,
                &selections,
                cfg.mask,
            )?;
            if !total.is_finite() {
                return Err(BenchError::Diverged {
                    epoch,
                    detail: format!("loss became {total}; report {report:?}"),
                });
            }
            adam.step(&mut params, &grads);
            scorer.assign_from_flat(&params)?;
            sums.push(&report, chunk.len());
        }

        let record = sums.into_record(
            epoch,
            &weights,
            if val_samples.is_empty() {
                None
            } else {
                Some(evaluate(&scorer, &val_samples, fusion, cfg.eval_crops)?)
            },
        );
        weights = dwa_update(
            &weights,
            [
                record.loss_quality,
                record.loss_scene,
                record.loss_distortion,
            ],
        );
        history.push(record);
    }

    Ok(TrainOutcome {
        scorer,
        history,
        train_indices,
        val_indices,
    })
}

#[derive(Default)]
struct LossSums {
    n: usize,
    loss_quality: f64,
    loss_scene: f64,
    loss_distortion: f64,
    multitask: f64,
    cross_region: f64,
    local_global: f64,
    total: f64,
}

impl LossSums {
    fn push(&mut self, report: &LossReport, batch_len: usize) {
        let w = batch_len as f64;
        self.n += batch_len;
        self.loss_quality += report.loss_quality * w;
        self.loss_scene += report.loss_scene * w;
        self.loss_distortion += report.loss_distortion * w;
        self.multitask += report.multitask * w;
        self.cross_region += report.cross_region * w;
        self.local_global += report.local_global * w;
        self.total += report.total * w;
    }

    fn into_record(
        self,
        epoch: usize,
        weights: &TaskWeights,
        metrics: Option<MetricsReport>,
    ) -> EpochRecord {
        let n = self.n.max(1) as f64;
        let m = metrics.unwrap_or(MetricsReport {
            srcc: f64::NAN,
            plcc: f64::NAN,
            acc_scene: f64::NAN,
            acc_distortion: f64::NAN,
            mean_ci_width: f64::NAN,
        });
        EpochRecord {
            epoch,
            loss_quality: self.loss_quality / n,
            loss_scene: self.loss_scene / n,
            loss_distortion: self.loss_distortion / n,
            multitask: self.multitask / n,
            cross_region: self.cross_region / n,
            local_global: self.local_global / n,
            total: self.total / n,
            lambda_q: weights.lambda_q,
            lambda_s: weights.lambda_s,
            lambda_d: weights.lambda_d,
            val_srcc: m.srcc,
            val_plcc: m.plcc,
            val_acc_scene: m.acc_scene,
            val_acc_distortion: m.acc_distortion,
            val_ci_width: m.mean_ci_width,
        }
    }
}

const HISTORY_HEADER: &str = "epoch,loss_q,loss_s,loss_d,loss_m,loss_u,loss_f,total,\
lambda_q,lambda_s,lambda_d,val_srcc,val_plcc,val_acc_scene,val_acc_distortion,val_ci_width";

/// Write the per-epoch history as CSV.
pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in history {
        let _ = writeln!(
            out,
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            r.epoch,
            r.loss_quality,
            r.loss_scene,
            r.loss_distortion,
            r.multitask,
            r.cross_region,
            r.local_global,
            r.total,
            r.lambda_q,
            r.lambda_s,
            r.lambda_d,
            r.val_srcc,
            r.val_plcc,
            r.val_acc_scene,
            r.val_acc_distortion,
            r.val_ci_width,
        );
    }
    std::fs::write(path, out).map_err(|e| BenchError::io(path.display().to_string(), e))
}

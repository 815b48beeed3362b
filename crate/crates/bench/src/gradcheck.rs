//! Gradient verification against central finite differences.
//!
//! Two layers of checking: the closed-form evidential-loss gradient on random
//! parameter draws, and the full backpropagation path through scorer, joint
//! softmax, projections, and both fusion operators on a small batch.
//! Relative error uses max(|analytic|, |numeric|, 1) as denominator.

use crate::dataset::{generate_dataset, SynthConfig};
use crate::error::Result;
use crate::scorer::TinyScorer;
use crate::train::{batch_loss_and_grads, sample_targets};
use evifuse_core::evidential::{evidential_grad, evidential_loss};
use evifuse_core::fusion::{overall_loss, FusionConfig, LossMask, ViewSelection};
use evifuse_core::multitask::{BatchItem, TaskWeights};
use evifuse_core::nig::NigParams;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Worst relative error within one named parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub name: String,
    pub max_rel_err: f64,
}

/// Outcome of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    fn from_groups(groups: Vec<GroupReport>, tolerance: f64) -> Self {
        let max_rel_err = groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max);
        Self {
            groups,
            max_rel_err,
            tolerance,
            passed: max_rel_err < tolerance,
        }
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1.0)
}

/// Check the closed-form evidential gradient on `n` random draws.
pub fn gradcheck_evidential(seed: u64, n: usize, tolerance: f64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut worst = [0.0f64; 4];
    for _ in 0..n {
        let delta = rng.random_range(-5.0..5.0);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let y = delta + sign * rng.random_range(0.1..5.0);
        let v = rng.random_range(0.1..10.0);
        let alpha = rng.random_range(1.2..10.0);
        let beta = rng.random_range(0.1..10.0);
        let tau = rng.random_range(0.0..0.5);
        let p = NigParams::new(delta, v, alpha, beta).expect("sampled params valid");
        let g = evidential_grad(&p, y, tau);

        let total = |d: f64, vv: f64, a: f64, b: f64| {
            evidential_loss(&NigParams::new(d, vv, a, b).unwrap(), y, tau)
                .unwrap()
                .total
        };
        let fd = [
            (total(delta + h, v, alpha, beta) - total(delta - h, v, alpha, beta)) / (2.0 * h),
            (total(delta, v + h, alpha, beta) - total(delta, v - h, alpha, beta)) / (2.0 * h),
            (total(delta, v, alpha + h, beta) - total(delta, v, alpha - h, beta)) / (2.0 * h),
            (total(delta, v, alpha, beta + h) - total(delta, v, alpha, beta - h)) / (2.0 * h),
        ];
        let analytic = [g.d_delta, g.d_v, g.d_alpha, g.d_beta];
        for k in 0..4 {
            worst[k] = worst[k].max(rel_err(analytic[k], fd[k]));
        }
    }
    let names = ["delta", "v", "alpha", "beta"];
    let groups = names
        .iter()
        .zip(worst)
        .map(|(name, e)| GroupReport {
            name: format!("evidential.d_{name}"),
            max_rel_err: e,
        })
        .collect();
    GradCheckReport::from_groups(groups, tolerance)
}

/// Check the end-to-end gradient of the overall loss through every scorer
/// parameter on a 2-sample batch. `corrupt` injects an error into one
/// analytic gradient entry; the check must then fail.
pub fn gradcheck_end_to_end(seed: u64, tolerance: f64, corrupt: bool) -> Result<GradCheckReport> {
    let data_cfg = SynthConfig {
        n_samples: 2,
        seed,
        ..SynthConfig::default()
    };
    let samples = generate_dataset(&data_cfg)?;
    let sample_refs: Vec<&_> = samples.iter().collect();
    let scorer = TinyScorer::init(
        crate::scorer::ScorerDims {
            quality_levels: crate::dataset::QUALITY_LEVELS,
            scenes: data_cfg.scene_classes,
            distortions: data_cfg.distortion_classes,
            feature_dim: data_cfg.feature_dim,
        },
        seed,
    );
    let weights = TaskWeights::initial();
    let fusion = FusionConfig::default();
    let mask = LossMask::all();
    let n_crops = 4;
    let selections: Vec<ViewSelection> = samples
        .iter()
        .map(|s| (0..s.local_features.len().min(n_crops)).collect())
        .collect();

    let (_, _, mut analytic) = batch_loss_and_grads(
        &scorer,
        &sample_refs,
        n_crops,
        &weights,
        &fusion,
        &selections,
        mask,
    )?;
    if corrupt {
        analytic[0] += 1e-3;
    }

    let loss_at = |flat: &[f64]| -> Result<f64> {
        let mut probe = scorer.clone();
        probe.assign_from_flat(flat)?;
        let batch: Vec<BatchItem> = samples
            .iter()
            .map(|s| {
                let take = n_crops.min(s.local_features.len());
                Ok(BatchItem {
                    views: probe.forward(s, take)?,
                    targets: sample_targets(s, data_cfg.scene_classes, data_cfg.distortion_classes),
                })
            })
            .collect::<Result<_>>()?;
        let (total, _) = overall_loss(&batch, &probe.proj, &weights, &fusion, &selections, mask)?;
        Ok(total)
    };

    let base = scorer.flatten();
    let h = 1e-6;
    let mut groups = Vec::new();
    let mut offset = 0;
    for (name, rows, cols) in scorer.layout() {
        let len = rows * cols.max(1);
        let mut worst = 0.0f64;
        for i in offset..offset + len {
            let mut plus = base.clone();
            plus[i] += h;
            let mut minus = base.clone();
            minus[i] -= h;
            let fd = (loss_at(&plus)? - loss_at(&minus)?) / (2.0 * h);
            worst = worst.max(rel_err(analytic[i], fd));
        }
        groups.push(GroupReport {
            name,
            max_rel_err: worst,
        });
        offset += len;
    }
    Ok(GradCheckReport::from_groups(groups, tolerance))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evidential_gradients_within_tolerance() {
        let report = gradcheck_evidential(17, 100, 1e-5);
        assert!(
            report.passed,
            "evidential gradcheck failed: {:?}",
            report.groups
        );
    }

    #[test]
    fn end_to_end_gradients_within_tolerance() {
        let report = gradcheck_end_to_end(17, 1e-4, false).unwrap();
        assert!(
            report.passed,
            "end-to-end gradcheck failed: max {} groups {:?}",
            report.max_rel_err, report.groups
        );
    }

    #[test]
    fn corruption_is_detected() {
        let report = gradcheck_end_to_end(17, 1e-4, true).unwrap();
        assert!(!report.passed);
    }
}

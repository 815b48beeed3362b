//! Cross-sub-region fusion, local-global fusion, and the overall training
//! objective.
//!
//! Both fusion paths project per-view marginals to NIG evidence, constrain
//! once, combine (fuse across sub-regions; fuse-with-global then average),
//! and score the result with the evidential loss. Scene and distortion
//! evidence regresses the confidence mass on the true class, so their scalar
//! target is 1.

use crate::error::{CoreError, Result};
use crate::evidential::evidential_loss;
use crate::joint::{task_evidence, EvidenceProjection, Task, ViewSet};
use crate::multitask::{multitask_loss, BatchItem, MultitaskOutcome, TaskMask, TaskWeights};
use crate::nig::{constrain, nig_average, nig_fuse, nig_fuse_n, NigParams};
use rand::seq::index::sample;
use rand::Rng;

/// Weights and fan-in of the fusion losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    /// Weight of the cross-sub-region loss in the overall objective.
    pub lambda1: f64,
    /// Weight of the local-global loss in the overall objective.
    pub lambda2: f64,
    /// Evidence-penalty weight inside the evidential loss.
    pub tau: f64,
    /// Sub-regions combined per fusion.
    pub n_fuse: usize,
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda1, self.lambda2, self.tau]
            .iter()
            .any(|x| !x.is_finite() || *x < 0.0)
        {
            return Err(CoreError::invalid_input(
                "fusion weights lambda1, lambda2, tau must be non-negative",
            ));
        }
        if self.n_fuse < 2 {
            return Err(CoreError::invalid_input("n_fuse must be at least 2"));
        }
        Ok(())
    }
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 0.1,
            tau: 0.05,
            n_fuse: 4,
        }
    }
}

/// Local-view indices entering the fusion operators, one list per sample.
pub type ViewSelection = Vec<usize>;

/// Pick which local views feed fusion. With an RNG the choice is a uniform
/// sample without replacement; without one the first views are taken, which
/// is the deterministic evaluation path.
pub fn select_fusion_views(
    n_locals: usize,
    n_fuse: usize,
    rng: Option<&mut impl Rng>,
) -> ViewSelection {
    let k = n_fuse.min(n_locals).max(1);
    match rng {
        Some(rng) => sample(rng, n_locals, k).into_vec(),
        None => (0..k).collect(),
    }
}

fn constrained_view_params(
    views: &ViewSet,
    task: Task,
    proj: &EvidenceProjection,
    selection: &[usize],
) -> Result<Vec<NigParams>> {
    selection
        .iter()
        .map(|&i| {
            let view = views.locals.get(i).ok_or_else(|| {
                CoreError::invalid_input(format!(
                    "view selection index {i} out of range ({} locals)",
                    views.locals.len()
                ))
            })?;
            constrain(&task_evidence(view, task, proj)?)
        })
        .collect()
}

/// Fused NIG of the selected local views for one task.
pub fn cross_region_params(
    views: &ViewSet,
    task: Task,
    proj: &EvidenceProjection,
    selection: &[usize],
) -> Result<NigParams> {
    let params = constrained_view_params(views, task, proj, selection)?;
    nig_fuse_n(&params)
}

/// Fuse each selected local view with the global view, then average the
/// fused parameter tuples componentwise.
pub fn local_global_params(
    views: &ViewSet,
    task: Task,
    proj: &EvidenceProjection,
    selection: &[usize],
) -> Result<NigParams> {
    let global = constrain(&task_evidence(&views.global_view, task, proj)?)?;
    let locals = constrained_view_params(views, task, proj, selection)?;
    let fused: Vec<NigParams> = locals.iter().map(|p| nig_fuse(p, &global)).collect();
    nig_average(&fused)
}

/// Scalar regression target for a task: the MOS for quality, full confidence
/// (1) on the true class for scene and distortion.
pub fn task_target(targets: &crate::multitask::TaskTargets, task: Task) -> f64 {
    match task {
        Task::Quality => targets.mos,
        Task::Scene | Task::Distortion => 1.0,
    }
}

fn enabled_tasks(mask: TaskMask) -> impl Iterator<Item = Task> {
    Task::ALL.into_iter().filter(move |t| match t {
        Task::Quality => true,
        Task::Scene => mask.scene,
        Task::Distortion => mask.distortion,
    })
}

fn fusion_loss_with<F>(
    batch: &[BatchItem],
    cfg: &FusionConfig,
    selections: &[ViewSelection],
    mask: TaskMask,
    params_of: F,
) -> Result<f64>
where
    F: Fn(&ViewSet, Task, &[usize]) -> Result<NigParams>,
{
    if batch.is_empty() {
        return Err(CoreError::invalid_input("fusion loss needs a batch"));
    }
    if selections.len() != batch.len() {
        return Err(CoreError::dimension_mismatch(format!(
            "{} selections for {} samples",
            selections.len(),
            batch.len()
        )));
    }
    let mut total = 0.0;
    for (item, selection) in batch.iter().zip(selections) {
        for task in enabled_tasks(mask) {
            let fused = params_of(&item.views, task, selection)?;
            let y = task_target(&item.targets, task);
            total += evidential_loss(&fused, y, cfg.tau)?.total;
        }
    }
    Ok(total / batch.len() as f64)
}

/// Cross-sub-region loss: batch mean of the evidential loss on the fused
/// local evidence, summed over the enabled tasks.
pub fn cross_region_loss(
    batch: &[BatchItem],
    proj: &EvidenceProjection,
    cfg: &FusionConfig,
    selections: &[ViewSelection],
    mask: TaskMask,
) -> Result<f64> {
    fusion_loss_with(batch, cfg, selections, mask, |views, task, sel| {
        cross_region_params(views, task, proj, sel)
    })
}

/// Local-global loss: batch mean of the evidential loss on the averaged
/// local-global fusions, summed over the enabled tasks.
pub fn local_global_loss(
    batch: &[BatchItem],
    proj: &EvidenceProjection,
    cfg: &FusionConfig,
    selections: &[ViewSelection],
    mask: TaskMask,
) -> Result<f64> {
    fusion_loss_with(batch, cfg, selections, mask, |views, task, sel| {
        local_global_params(views, task, proj, sel)
    })
}

/// Full ablation switchboard for the overall loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossMask {
    pub tasks: TaskMask,
    pub cross_region: bool,
    pub local_global: bool,
}

impl LossMask {
    pub fn all() -> Self {
        Self {
            tasks: TaskMask::all(),
            cross_region: true,
            local_global: true,
        }
    }
}

impl Default for LossMask {
    fn default() -> Self {
        Self::all()
    }
}

/// Every component of one optimization step's loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
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
    pub quality_skipped: bool,
}

impl LossReport {
    pub(crate) fn assemble(
        multi: &MultitaskOutcome,
        cross_region: f64,
        local_global: f64,
        weights: &TaskWeights,
        cfg: &FusionConfig,
    ) -> Self {
        Self {
            loss_quality: multi.mean_quality,
            loss_scene: multi.mean_scene,
            loss_distortion: multi.mean_distortion,
            multitask: multi.total,
            cross_region,
            local_global,
            total: multi.total + cfg.lambda1 * cross_region + cfg.lambda2 * local_global,
            lambda_q: weights.lambda_q,
            lambda_s: weights.lambda_s,
            lambda_d: weights.lambda_d,
            quality_skipped: multi.quality_skipped,
        }
    }
}

/// Overall objective: multitask loss plus λ₁·cross-region plus λ₂·local-global.
pub fn overall_loss(
    batch: &[BatchItem],
    proj: &EvidenceProjection,
    weights: &TaskWeights,
    cfg: &FusionConfig,
    selections: &[ViewSelection],
    mask: LossMask,
) -> Result<(f64, LossReport)> {
    cfg.validate()?;
    let multi = multitask_loss(batch, weights, mask.tasks)?;
    let cross = if mask.cross_region {
        cross_region_loss(batch, proj, cfg, selections, mask.tasks)?
    } else {
        0.0
    };
    let local_global = if mask.local_global {
        local_global_loss(batch, proj, cfg, selections, mask.tasks)?
    } else {
        0.0
    };
    let report = LossReport::assemble(&multi, cross, local_global, weights, cfg);
    Ok((report.total, report))
}

//! Analytic gradients of the overall loss.
//!
//! Reverse-mode accumulation written out by hand: the loss is backpropagated
//! to every evidence-projection parameter and to the joint probabilities of
//! every view, so a caller owning the logits can keep going through
//! [`joint_softmax_vjp`]. Each vector-Jacobian product is closed form; no
//! tape or graph is built.

use crate::error::{CoreError, Result};
use crate::evidential::{evidential_grad, EvidentialGrad};
use crate::fusion::{
    overall_loss, task_target, FusionConfig, LossMask, LossReport, ViewSelection,
};
use crate::joint::{
    mean_distortion_marginal, mean_scene_marginal, quality_marginal, quality_expectation,
    task_input, EvidenceProjection, JointScore, Task,
};
use crate::multitask::{fidelity_dphat, BatchItem, PairLabel, TaskWeights};
use crate::nig::{constrain, nig_fuse, sigmoid, softplus, NigParams, RawEvidence};
use crate::nig::{EVIDENCE_FLOOR, SHAPE_FLOOR};

/// Loss cotangents on one sample's joint tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewCotangents {
    pub locals: Vec<Vec<f64>>,
    pub global_view: Vec<f64>,
}

/// Gradients of the overall loss for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct OverallGradients {
    /// d loss / d projection parameters, stored in projection shape.
    pub proj: EvidenceProjection,
    /// d loss / d joint probabilities, one entry per batch item.
    pub joints: Vec<ViewCotangents>,
}

impl OverallGradients {
    fn zeros(batch: &[BatchItem], proj: &EvidenceProjection) -> Self {
        let joints = batch
            .iter()
            .map(|item| {
                let cells = item.views.global_view.probs().len();
                ViewCotangents {
                    locals: vec![vec![0.0; cells]; item.views.locals.len()],
                    global_view: vec![0.0; cells],
                }
            })
            .collect();
        let mut z = proj.clone();
        for task in Task::ALL {
            let tp = z.task_mut(task);
            for row in tp.weights.iter_mut() {
                *row = [0.0; 4];
            }
            tp.bias = [0.0; 4];
        }
        Self { proj: z, joints }
    }
}

/// VJP of [`nig_fuse`]: cotangents of the fused parameters pulled back onto
/// both inputs.
///
/// Uses the identity v₁(δ₁−δ) + v₂(δ₂−δ) = 0, which collapses ∂β/∂δᵢ to
/// vᵢ(δᵢ−δ) and ∂β/∂vᵢ to ½(δᵢ−δ)².
pub fn nig_fuse_vjp(
    a: &NigParams,
    b: &NigParams,
    fused: &NigParams,
    g: &EvidentialGrad,
) -> (EvidentialGrad, EvidentialGrad) {
    let v_total = a.v() + b.v();
    let pull = |p: &NigParams| {
        let w = p.v() / v_total;
        let e = p.delta() - fused.delta();
        EvidentialGrad {
            d_delta: g.d_delta * w + g.d_beta * (p.v() * e),
            d_v: g.d_delta * (e / v_total) + g.d_v + g.d_beta * 0.5 * e * e,
            d_alpha: g.d_alpha,
            d_beta: g.d_beta,
        }
    };
    (pull(a), pull(b))
}

/// VJP of the temperature softmax: cotangents on the probabilities pulled
/// back onto the logits and onto κ.
pub fn joint_softmax_vjp(
    logits: &[f64],
    probs: &[f64],
    kappa: f64,
    d_probs: &[f64],
) -> (Vec<f64>, f64) {
    debug_assert_eq!(logits.len(), probs.len());
    debug_assert_eq!(logits.len(), d_probs.len());
    let dot: f64 = d_probs.iter().zip(probs).map(|(g, p)| g * p).sum();
    let mut d_logits = vec![0.0; logits.len()];
    let mut d_kappa = 0.0;
    for i in 0..logits.len() {
        let du = probs[i] * (d_probs[i] - dot);
        d_logits[i] = du / kappa;
        d_kappa -= du * logits[i] / (kappa * kappa);
    }
    (d_logits, d_kappa)
}

/// Derivative of the floored softplus used in [`constrain`]: zero once the
/// floor is active, sigmoid otherwise.
fn softplus_deriv_floored(x: f64, floor: f64) -> f64 {
    if softplus(x) <= floor {
        0.0
    } else {
        sigmoid(x)
    }
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn normal_cdf(z: f64) -> f64 {
    crate::multitask::thurstone_prob(z * std::f64::consts::SQRT_2, 0.0)
}

/// Scatter helpers over the flattened (c, s, d) layout.
fn add_quality_slice(d_joint: &mut [f64], view: &JointScore, c: usize, value: f64) {
    let span = view.scenes() * view.distortions();
    for cell in &mut d_joint[c * span..(c + 1) * span] {
        *cell += value;
    }
}

fn add_scene_slice(d_joint: &mut [f64], view: &JointScore, s: usize, value: f64) {
    for c in 0..view.quality_levels() {
        let base = (c * view.scenes() + s) * view.distortions();
        for cell in &mut d_joint[base..base + view.distortions()] {
            *cell += value;
        }
    }
}

fn add_distortion_slice(d_joint: &mut [f64], view: &JointScore, d: usize, value: f64) {
    let distortions = view.distortions();
    for (i, cell) in d_joint.iter_mut().enumerate() {
        if i % distortions == d {
            *cell += value;
        }
    }
}

/// Gradient of the implemented quality expectation with respect to marginal
/// entry c (levels are 1-based, mid is the level midpoint).
fn expectation_coeff(c: usize, levels: usize) -> f64 {
    (c + 1) as f64 - (levels as f64 + 1.0) / 2.0
}

/// Pull a cotangent on constrained NIG parameters back through the
/// projection for one view, accumulating projection gradients and the view's
/// joint cotangent.
#[allow(clippy::too_many_arguments)]
fn backprop_view(
    task: Task,
    view: &JointScore,
    input: &[f64],
    raw: &RawEvidence,
    g_params: &EvidentialGrad,
    proj: &EvidenceProjection,
    d_proj: &mut EvidenceProjection,
    d_joint: &mut [f64],
) {
    let d_raw = [
        g_params.d_delta,
        g_params.d_v * softplus_deriv_floored(raw.0[1], EVIDENCE_FLOOR),
        g_params.d_alpha * softplus_deriv_floored(raw.0[2], SHAPE_FLOOR),
        g_params.d_beta * softplus_deriv_floored(raw.0[3], EVIDENCE_FLOOR),
    ];
    let tp = proj.task(task);
    let dtp = d_proj.task_mut(task);
    let mut d_input = vec![0.0; input.len()];
    for (i, &x) in input.iter().enumerate() {
        for (k, &dr) in d_raw.iter().enumerate() {
            dtp.weights[i][k] += x * dr;
            d_input[i] += tp.weights[i][k] * dr;
        }
    }
    for (k, &dr) in d_raw.iter().enumerate() {
        dtp.bias[k] += dr;
    }

    match task {
        Task::Quality => {
            let levels = view.quality_levels();
            for c in 0..levels {
                let coeff = d_input[c] + expectation_coeff(c, levels) * d_input[levels];
                if coeff != 0.0 {
                    add_quality_slice(d_joint, view, c, coeff);
                }
            }
        }
        Task::Scene => {
            for (s, &g) in d_input.iter().enumerate() {
                if g != 0.0 {
                    add_scene_slice(d_joint, view, s, g);
                }
            }
        }
        Task::Distortion => {
            for (d, &g) in d_input.iter().enumerate() {
                if g != 0.0 {
                    add_distortion_slice(d_joint, view, d, g);
                }
            }
        }
    }
}

fn accumulate_multitask(
    batch: &[BatchItem],
    weights: &TaskWeights,
    mask: crate::multitask::TaskMask,
    grads: &mut OverallGradients,
) -> Result<()> {
    let n = batch.len() as f64;
    let q_hats: Vec<f64> = batch
        .iter()
        .map(|item| quality_expectation(&quality_marginal(&item.views.locals)?))
        .collect::<Result<_>>()?;

    // Pairwise quality term.
    let n_pairs = batch.len() * (batch.len() - 1) / 2;
    let mut g_qhat = vec![0.0; batch.len()];
    if n_pairs > 0 && weights.lambda_q != 0.0 {
        let scale = weights.lambda_q / n_pairs as f64;
        for i in 0..batch.len() {
            for j in (i + 1)..batch.len() {
                let label = PairLabel::from_mos(batch[i].targets.mos, batch[j].targets.mos);
                let z = (q_hats[i] - q_hats[j]) * INV_SQRT_2;
                let phat = normal_cdf(z);
                let d = scale * fidelity_dphat(label.prob(), phat) * normal_pdf(z) * INV_SQRT_2;
                g_qhat[i] += d;
                g_qhat[j] -= d;
            }
        }
    }

    for (idx, item) in batch.iter().enumerate() {
        let locals = &item.views.locals;
        let n_views = locals.len() as f64;
        let levels = locals[0].quality_levels();

        if g_qhat[idx] != 0.0 {
            for (v_idx, view) in locals.iter().enumerate() {
                for c in 0..levels {
                    let coeff = g_qhat[idx] * expectation_coeff(c, levels) / n_views;
                    add_quality_slice(&mut grads.joints[idx].locals[v_idx], view, c, coeff);
                }
            }
        }

        if mask.scene && weights.lambda_s != 0.0 {
            let m = mean_scene_marginal(locals)?;
            let scale = weights.lambda_s / (n * m.len() as f64);
            for (s, &p) in m.iter().enumerate() {
                let g = scale * fidelity_dphat(item.targets.scene[s], p) / n_views;
                for (v_idx, view) in locals.iter().enumerate() {
                    add_scene_slice(&mut grads.joints[idx].locals[v_idx], view, s, g);
                }
            }
        }

        if mask.distortion && weights.lambda_d != 0.0 {
            let m = mean_distortion_marginal(locals)?;
            let true_slot = item
                .targets
                .distortion
                .iter()
                .position(|t| *t == 1.0)
                .ok_or_else(|| CoreError::invalid_input("distortion truth must be one-hot"))?;
            let p = m[true_slot].clamp(1e-12, 1.0);
            let g = weights.lambda_d / n * (-0.5 / p.sqrt()) / n_views;
            for (v_idx, view) in locals.iter().enumerate() {
                add_distortion_slice(&mut grads.joints[idx].locals[v_idx], view, true_slot, g);
            }
        }
    }
    Ok(())
}

struct ViewForward {
    input: Vec<f64>,
    raw: RawEvidence,
    params: NigParams,
}

fn forward_view(
    view: &JointScore,
    task: Task,
    proj: &EvidenceProjection,
) -> Result<ViewForward> {
    let input = task_input(view, task)?;
    let raw = proj.task(task).apply(&input)?;
    let params = constrain(&raw)?;
    Ok(ViewForward { input, raw, params })
}

fn enabled(task: Task, mask: crate::multitask::TaskMask) -> bool {
    match task {
        Task::Quality => true,
        Task::Scene => mask.scene,
        Task::Distortion => mask.distortion,
    }
}

fn accumulate_cross_region(
    batch: &[BatchItem],
    proj: &EvidenceProjection,
    cfg: &FusionConfig,
    selections: &[ViewSelection],
    mask: crate::multitask::TaskMask,
    grads: &mut OverallGradients,
) -> Result<()> {
    let scale = cfg.lambda1 / batch.len() as f64;
    for (idx, (item, selection)) in batch.iter().zip(selections).enumerate() {
        for task in Task::ALL {
            if !enabled(task, mask) {
                continue;
            }
            let fwd: Vec<ViewForward> = selection
                .iter()
                .map(|&j| forward_view(&item.views.locals[j], task, proj))
                .collect::<Result<_>>()?;
            let mut accs = Vec::with_capacity(fwd.len());
            accs.push(fwd[0].params);
            for f in &fwd[1..] {
                let prev = *accs.last().unwrap();
                accs.push(nig_fuse(&prev, &f.params));
            }
            let y = task_target(&item.targets, task);
            let g_final = evidential_grad(accs.last().unwrap(), y, cfg.tau).scaled(scale);

            let mut g_views = vec![EvidentialGrad::default(); fwd.len()];
            let mut g_acc = g_final;
            for k in (1..fwd.len()).rev() {
                let (g_prev, g_k) = nig_fuse_vjp(&accs[k - 1], &fwd[k].params, &accs[k], &g_acc);
                g_views[k] = g_k;
                g_acc = g_prev;
            }
            g_views[0] = g_acc;

            for (slot, &j) in selection.iter().enumerate() {
                backprop_view(
                    task,
                    &item.views.locals[j],
                    &fwd[slot].input,
                    &fwd[slot].raw,
                    &g_views[slot],
                    proj,
                    &mut grads.proj,
                    &mut grads.joints[idx].locals[j],
                );
            }
        }
    }
    Ok(())
}

fn accumulate_local_global(
    batch: &[BatchItem],
    proj: &EvidenceProjection,
    cfg: &FusionConfig,
    selections: &[ViewSelection],
    mask: crate::multitask::TaskMask,
    grads: &mut OverallGradients,
) -> Result<()> {
    let scale = cfg.lambda2 / batch.len() as f64;
    for (idx, (item, selection)) in batch.iter().zip(selections).enumerate() {
        for task in Task::ALL {
            if !enabled(task, mask) {
                continue;
            }
            let global = forward_view(&item.views.global_view, task, proj)?;
            let fwd: Vec<ViewForward> = selection
                .iter()
                .map(|&j| forward_view(&item.views.locals[j], task, proj))
                .collect::<Result<_>>()?;
            let fused: Vec<NigParams> =
                fwd.iter().map(|f| nig_fuse(&f.params, &global.params)).collect();
            let avg = crate::nig::nig_average(&fused)?;
            let y = task_target(&item.targets, task);
            let g_avg = evidential_grad(&avg, y, cfg.tau).scaled(scale);
            let g_each = g_avg.scaled(1.0 / fused.len() as f64);

            let mut g_global = EvidentialGrad::default();
            for (slot, &j) in selection.iter().enumerate() {
                let (g_local, g_g) =
                    nig_fuse_vjp(&fwd[slot].params, &global.params, &fused[slot], &g_each);
                g_global.add(&g_g);
                backprop_view(
                    task,
                    &item.views.locals[j],
                    &fwd[slot].input,
                    &fwd[slot].raw,
                    &g_local,
                    proj,
                    &mut grads.proj,
                    &mut grads.joints[idx].locals[j],
                );
            }
            backprop_view(
                task,
                &item.views.global_view,
                &global.input,
                &global.raw,
                &g_global,
                proj,
                &mut grads.proj,
                &mut grads.joints[idx].global_view,
            );
        }
    }
    Ok(())
}

/// Overall loss plus its gradients with respect to the projection parameters
/// and every view's joint probabilities.
pub fn overall_loss_with_grad(
    batch: &[BatchItem],
    proj: &EvidenceProjection,
    weights: &TaskWeights,
    cfg: &FusionConfig,
    selections: &[ViewSelection],
    mask: LossMask,
) -> Result<(f64, LossReport, OverallGradients)> {
    let (total, report) = overall_loss(batch, proj, weights, cfg, selections, mask)?;
    let mut grads = OverallGradients::zeros(batch, proj);
    accumulate_multitask(batch, weights, mask.tasks, &mut grads)?;
    if mask.cross_region {
        accumulate_cross_region(batch, proj, cfg, selections, mask.tasks, &mut grads)?;
    }
    if mask.local_global {
        accumulate_local_global(batch, proj, cfg, selections, mask.tasks, &mut grads)?;
    }
    Ok((total, report, grads))
}

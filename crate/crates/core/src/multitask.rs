//! Fidelity-based task losses and their dynamically weighted combination.
//!
//! Quality is trained pairwise: predicted scores become a preference
//! probability under the Thurstone model and are scored against the
//! ground-truth preference with the fidelity loss. Scene and distortion
//! classification reuse the fidelity form on marginals. Task weights follow
//! the relative descent rate of each task's loss (dynamic weight averaging,
//! temperature 2, K = 3).

use crate::error::{CoreError, Result};
use crate::joint::{
    mean_distortion_marginal, mean_scene_marginal, quality_expectation, quality_marginal,
    ViewSet,
};
use statrs::distribution::{ContinuousCDF, Normal};

/// Temperature of the weight softmax.
pub const DWA_TEMPERATURE: f64 = 2.0;
const TASK_COUNT: usize = 3;

/// Ground-truth preference probability for an image pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairLabel {
    prob: f64,
}

impl PairLabel {
    pub fn new(prob: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&prob) || !prob.is_finite() {
            return Err(CoreError::invalid_input(format!(
                "pair label must lie in [0, 1]; got {prob}"
            )));
        }
        Ok(Self { prob })
    }

    /// 1 if the first score is higher, 0 if lower, ½ on an exact tie.
    pub fn from_mos(mos1: f64, mos2: f64) -> Self {
        let prob = match mos1.partial_cmp(&mos2) {
            Some(std::cmp::Ordering::Greater) => 1.0,
            Some(std::cmp::Ordering::Less) => 0.0,
            _ => 0.5,
        };
        Self { prob }
    }

    pub fn prob(&self) -> f64 {
        self.prob
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Thurstone preference probability Φ((q₁ − q₂)/√2).
pub fn thurstone_prob(q1: f64, q2: f64) -> f64 {
    std_normal().cdf((q1 - q2) / std::f64::consts::SQRT_2)
}

/// Fidelity loss 1 − √(p·p̂) − √((1−p)(1−p̂)); zero iff p = p̂.
pub fn fidelity(p: f64, phat: f64) -> Result<f64> {
    for (name, x) in [("p", p), ("phat", phat)] {
        if !(0.0..=1.0).contains(&x) || !x.is_finite() {
            return Err(CoreError::invalid_input(format!(
                "fidelity argument {name} must lie in [0, 1]; got {x}"
            )));
        }
    }
    Ok(1.0 - (p * phat).sqrt() - ((1.0 - p) * (1.0 - phat)).sqrt())
}

/// d fidelity / d p̂, with p̂ clamped away from {0, 1} so the derivative stays
/// finite at saturated predictions.
pub(crate) fn fidelity_dphat(p: f64, phat: f64) -> f64 {
    let q = phat.clamp(1e-12, 1.0 - 1e-12);
    -0.5 * (p / q).sqrt() + 0.5 * ((1.0 - p) / (1.0 - q)).sqrt()
}

/// Pairwise quality loss: fidelity between the ground-truth preference and
/// the Thurstone probability of the predicted scores.
pub fn quality_pair_loss(q1_hat: f64, q2_hat: f64, label: PairLabel) -> f64 {
    let phat = thurstone_prob(q1_hat, q2_hat);
    fidelity(label.prob, phat).expect("thurstone output lies in (0, 1)")
}

/// Scene classification loss: mean fidelity across scene slots. Truth entries
/// are binary and multiple scenes may be active.
pub fn scene_loss(phat: &[f64], truth: &[f64]) -> Result<f64> {
    if phat.len() != truth.len() {
        return Err(CoreError::dimension_mismatch(format!(
            "scene loss got {} predictions but {} labels",
            phat.len(),
            truth.len()
        )));
    }
    if truth.iter().any(|t| *t != 0.0 && *t != 1.0) {
        return Err(CoreError::invalid_input(
            "scene truth entries must be 0 or 1",
        ));
    }
    let mut total = 0.0;
    for (&t, &p) in truth.iter().zip(phat) {
        total += fidelity(t, p.clamp(0.0, 1.0))?;
    }
    Ok(total / phat.len() as f64)
}

/// Distortion classification loss 1 − √(p̂ at the true class).
pub fn distortion_loss(phat: &[f64], truth: &[f64]) -> Result<f64> {
    if phat.len() != truth.len() {
        return Err(CoreError::dimension_mismatch(format!(
            "distortion loss got {} predictions but {} labels",
            phat.len(),
            truth.len()
        )));
    }
    let ones = truth.iter().filter(|t| **t == 1.0).count();
    if ones != 1 || truth.iter().any(|t| *t != 0.0 && *t != 1.0) {
        return Err(CoreError::invalid_input(
            "distortion truth must be exactly one-hot",
        ));
    }
    let hit = truth
        .iter()
        .zip(phat)
        .find(|(t, _)| **t == 1.0)
        .map(|(_, p)| *p)
        .unwrap();
    Ok(1.0 - hit.clamp(0.0, 1.0).sqrt())
}

/// Per-task multitask weights plus the loss history that drives them.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskWeights {
    pub lambda_q: f64,
    pub lambda_s: f64,
    pub lambda_d: f64,
    history: [Option<[f64; TASK_COUNT]>; 2],
}

impl TaskWeights {
    /// Uniform weights, empty history.
    pub fn initial() -> Self {
        Self {
            lambda_q: 1.0,
            lambda_s: 1.0,
            lambda_d: 1.0,
            history: [None, None],
        }
    }

    pub fn lambdas(&self) -> [f64; TASK_COUNT] {
        [self.lambda_q, self.lambda_s, self.lambda_d]
    }
}

impl Default for TaskWeights {
    fn default() -> Self {
        Self::initial()
    }
}

/// Fold one epoch's mean task losses into the weights.
///
/// Until two epochs of history exist the weights stay at 1. Afterwards each
/// task's descent ratio r = L(t−1)/L(t−2) feeds a temperature-2 softmax scaled
/// by the task count, so Σλ = 3. A zero denominator substitutes r = 1.
pub fn dwa_update(weights: &TaskWeights, epoch_losses: [f64; TASK_COUNT]) -> TaskWeights {
    let mut next = weights.clone();
    let [newer, older] = weights.history;
    next.history = [Some(epoch_losses), newer];

    let (Some(prev), Some(prev_prev)) = (next.history[0], next.history[1]) else {
        return next;
    };
    // prev is the epoch that just finished; ratios compare it to the one
    // before, weighting the *next* epoch.
    let _ = older;
    let ratios: Vec<f64> = prev
        .iter()
        .zip(prev_prev.iter())
        .map(|(&a, &b)| if b == 0.0 { 1.0 } else { a / b })
        .collect();
    // Max-shifted softmax; extreme descent ratios must not overflow.
    let top = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = ratios
        .iter()
        .map(|r| ((r - top) / DWA_TEMPERATURE).exp())
        .collect();
    let denom: f64 = exps.iter().sum();
    let k = TASK_COUNT as f64;
    next.lambda_q = k * exps[0] / denom;
    next.lambda_s = k * exps[1] / denom;
    next.lambda_d = k * exps[2] / denom;
    next
}

/// Ground-truth labels for one sample across the three tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskTargets {
    /// Mean opinion score.
    pub mos: f64,
    /// Binary scene membership vector (multi-label allowed).
    pub scene: Vec<f64>,
    /// One-hot distortion vector.
    pub distortion: Vec<f64>,
}

/// One sample in a training batch: its views and its labels.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub views: ViewSet,
    pub targets: TaskTargets,
}

/// Which loss components participate; quality is always on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskMask {
    pub scene: bool,
    pub distortion: bool,
}

impl TaskMask {
    pub fn all() -> Self {
        Self {
            scene: true,
            distortion: true,
        }
    }
}

impl Default for TaskMask {
    fn default() -> Self {
        Self::all()
    }
}

/// Value and per-task breakdown of the multitask loss over one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultitaskOutcome {
    /// λ-weighted combination.
    pub total: f64,
    /// Unweighted mean pairwise quality loss.
    pub mean_quality: f64,
    /// Unweighted mean scene loss.
    pub mean_scene: f64,
    /// Unweighted mean distortion loss.
    pub mean_distortion: f64,
    /// Set when the batch had fewer than two samples and the pairwise quality
    /// term was skipped.
    pub quality_skipped: bool,
}

/// Predicted quality score of one sample: expectation of the averaged local
/// quality marginals.
pub fn predicted_quality(views: &ViewSet) -> Result<f64> {
    quality_expectation(&quality_marginal(&views.locals)?)
}

/// Multitask loss over a batch: mean λ_q-weighted pairwise quality loss over
/// all unordered pairs, plus per-sample λ_s/λ_d-weighted scene and distortion
/// losses.
pub fn multitask_loss(
    batch: &[BatchItem],
    weights: &TaskWeights,
    mask: TaskMask,
) -> Result<MultitaskOutcome> {
    if batch.is_empty() {
        return Err(CoreError::invalid_input("multitask loss needs a batch"));
    }

    let q_hats: Vec<f64> = batch
        .iter()
        .map(|item| predicted_quality(&item.views))
        .collect::<Result<_>>()?;

    let mut mean_quality = 0.0;
    let mut quality_skipped = false;
    let n_pairs = batch.len() * (batch.len() - 1) / 2;
    if n_pairs == 0 {
        quality_skipped = true;
    } else {
        for i in 0..batch.len() {
            for j in (i + 1)..batch.len() {
                let label =
                    PairLabel::from_mos(batch[i].targets.mos, batch[j].targets.mos);
                mean_quality += quality_pair_loss(q_hats[i], q_hats[j], label);
            }
        }
        mean_quality /= n_pairs as f64;
    }

    let mut mean_scene = 0.0;
    let mut mean_distortion = 0.0;
    for item in batch {
        if mask.scene {
            let phat = mean_scene_marginal(&item.views.locals)?;
            mean_scene += scene_loss(&phat, &item.targets.scene)?;
        }
        if mask.distortion {
            let phat = mean_distortion_marginal(&item.views.locals)?;
            mean_distortion += distortion_loss(&phat, &item.targets.distortion)?;
        }
    }
    mean_scene /= batch.len() as f64;
    mean_distortion /= batch.len() as f64;

    let total = weights.lambda_q * mean_quality
        + weights.lambda_s * mean_scene
        + weights.lambda_d * mean_distortion;
    Ok(MultitaskOutcome {
        total,
        mean_quality,
        mean_scene,
        mean_distortion,
        quality_skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::joint::{joint_softmax, JointScore};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn assert_close(actual: f64, expected: f64, tol: f64) {
        let diff = (actual - expected).abs();
        assert!(
            diff <= tol,
            "expected {expected}, got {actual}, |diff|={diff}, tol={tol}"
        );
    }

    #[test]
    fn thurstone_reference_values() {
        assert_eq!(thurstone_prob(2.0, 2.0), 0.5);
        assert_close(
            thurstone_prob(std::f64::consts::SQRT_2, 0.0),
            0.8413447460685429,
            1e-9,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..100 {
            let a = rng.random_range(-4.0..4.0);
            let b = rng.random_range(-4.0..4.0);
            assert_close(thurstone_prob(a, b) + thurstone_prob(b, a), 1.0, 1e-12);
            // Depends on the difference only.
            let c = rng.random_range(-3.0..3.0);
            assert_close(thurstone_prob(a + c, b + c), thurstone_prob(a, b), 1e-12);
        }
    }

    #[test]
    fn fidelity_reference_values() {
        assert_close(fidelity(0.3, 0.3).unwrap(), 0.0, 1e-15);
        assert_eq!(fidelity(1.0, 0.0).unwrap(), 1.0);
        assert_close(
            fidelity(1.0, 0.5).unwrap(),
            1.0 - 0.5f64.sqrt(),
            1e-15,
        );
        assert!(fidelity(-0.1, 0.5).is_err());
        assert!(fidelity(0.5, 1.2).is_err());
    }

    #[test]
    fn fidelity_bounds_and_zero_iff_equal() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..500 {
            let p = rng.random_range(0.0..=1.0);
            let q = rng.random_range(0.0..=1.0);
            let f = fidelity(p, q).unwrap();
            assert!((0.0..=1.0).contains(&f), "fidelity {f} out of [0,1]");
            if (p - q).abs() > 1e-9 {
                assert!(f > 0.0);
            }
        }
    }

    #[test]
    fn fidelity_derivative_matches_finite_differences() {
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..100 {
            let p = rng.random_range(0.05..0.95);
            let q = rng.random_range(0.05..0.95);
            let analytic = fidelity_dphat(p, q);
            let numeric =
                (fidelity(p, q + h).unwrap() - fidelity(p, q - h).unwrap()) / (2.0 * h);
            assert_close(analytic, numeric, 1e-6 * analytic.abs().max(1.0));
        }
    }

    #[test]
    fn pair_loss_reference_cases() {
        let tie = PairLabel::new(0.5).unwrap();
        assert_close(quality_pair_loss(2.5, 2.5, tie), 0.0, 1e-12);

        let first = PairLabel::new(1.0).unwrap();
        assert!(quality_pair_loss(50.0, 0.0, first) < 1e-9);
        // Largest gap on the 1..5 level scale still leaves a small residual.
        assert!(quality_pair_loss(5.0, 1.0, first) < 2e-3);
        assert_close(
            quality_pair_loss(3.0, 3.0, first),
            1.0 - 0.5f64.sqrt(),
            1e-12,
        );

        // Invariant under a common shift of both scores.
        assert_close(
            quality_pair_loss(4.1, 2.0, first),
            quality_pair_loss(2.1, 0.0, first),
            1e-12,
        );
    }

    #[test]
    fn pair_label_convention() {
        assert_eq!(PairLabel::from_mos(4.0, 2.0).prob(), 1.0);
        assert_eq!(PairLabel::from_mos(2.0, 4.0).prob(), 0.0);
        assert_eq!(PairLabel::from_mos(3.0, 3.0).prob(), 0.5);
        assert!(PairLabel::new(1.5).is_err());
    }

    #[test]
    fn scene_loss_reference_cases() {
        let truth = [1.0, 0.0, 0.0];
        assert_close(scene_loss(&truth, &truth).unwrap(), 0.0, 1e-15);

        // Uniform prediction over 3 scenes, one-hot truth (mpmath reference).
        let third = 1.0 / 3.0;
        assert_close(
            scene_loss(&[third; 3], &truth).unwrap(),
            0.2632188563183074,
            1e-12,
        );

        assert_eq!(scene_loss(&[0.0; 3], &[0.0; 3]).unwrap(), 0.0);
        assert!(scene_loss(&[0.5; 3], &[1.0, 0.0]).is_err());
        assert!(scene_loss(&[0.5; 3], &[0.4, 0.0, 0.0]).is_err());
    }

    #[test]
    fn distortion_loss_reference_cases() {
        let truth = [0.0, 1.0, 0.0, 0.0];
        assert_eq!(distortion_loss(&truth, &truth).unwrap(), 0.0);
        assert_close(distortion_loss(&[0.25; 4], &truth).unwrap(), 0.5, 1e-15);
        let mut phat = [0.0; 4];
        phat[1] = 0.81;
        assert_close(distortion_loss(&phat, &truth).unwrap(), 0.1, 1e-12);
        assert!(distortion_loss(&[0.25; 4], &[1.0, 1.0, 0.0, 0.0]).is_err());
        assert!(distortion_loss(&[0.25; 4], &[0.0; 4]).is_err());
    }

    #[test]
    fn dwa_warmup_and_equal_ratios() {
        let w0 = TaskWeights::initial();
        assert_eq!(w0.lambdas(), [1.0, 1.0, 1.0]);
        let w1 = dwa_update(&w0, [0.9, 0.8, 0.7]);
        assert_eq!(w1.lambdas(), [1.0, 1.0, 1.0]);
        // Equal descent ratios keep uniform weights.
        let w2 = dwa_update(&w1, [0.45, 0.40, 0.35]);
        for l in w2.lambdas() {
            assert_close(l, 1.0, 1e-12);
        }
    }

    #[test]
    fn dwa_matches_softmax_oracle() {
        let w0 = TaskWeights::initial();
        let w1 = dwa_update(&w0, [1.0, 1.0, 1.0]);
        // Ratios (2, 1, 1).
        let w2 = dwa_update(&w1, [2.0, 1.0, 1.0]);
        let exps = [(1.0f64).exp(), (0.5f64).exp(), (0.5f64).exp()];
        let denom: f64 = exps.iter().sum();
        assert_close(w2.lambda_q, 3.0 * exps[0] / denom, 1e-12);
        assert_close(w2.lambda_s, 3.0 * exps[1] / denom, 1e-12);
        assert_close(w2.lambda_d, 3.0 * exps[2] / denom, 1e-12);
        assert_close(w2.lambda_q + w2.lambda_s + w2.lambda_d, 3.0, 1e-12);
    }

    #[test]
    fn dwa_zero_denominator_substitutes_unit_ratio() {
        let w0 = TaskWeights::initial();
        let w1 = dwa_update(&w0, [0.0, 1.0, 1.0]);
        let w2 = dwa_update(&w1, [0.5, 1.0, 1.0]);
        // Task q had zero loss at t−2 → r_q = 1, same as the others.
        for l in w2.lambdas() {
            assert_close(l, 1.0, 1e-12);
        }
    }

    #[test]
    fn dwa_weights_always_sum_to_task_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let mut w = TaskWeights::initial();
        for _ in 0..50 {
            let losses = [
                rng.random_range(0.0..2.0),
                rng.random_range(0.0..2.0),
                rng.random_range(0.0..2.0),
            ];
            w = dwa_update(&w, losses);
            assert_close(w.lambda_q + w.lambda_s + w.lambda_d, 3.0, 1e-12);
            assert!(w.lambda_q >= 0.0 && w.lambda_s >= 0.0 && w.lambda_d >= 0.0);
        }
    }

    const C: usize = 5;
    const S: usize = 3;
    const D: usize = 3;

    fn view_from_logits(logits: &[f64]) -> JointScore {
        joint_softmax(logits, C, S, D, 0.5).unwrap()
    }

    fn item(rng: &mut impl Rng, mos: f64, scene_id: usize, distortion_id: usize) -> BatchItem {
        let locals: Vec<JointScore> = (0..4)
            .map(|_| {
                let logits: Vec<f64> =
                    (0..C * S * D).map(|_| rng.random_range(-1.0..1.0)).collect();
                view_from_logits(&logits)
            })
            .collect();
        let global_view = locals[0].clone();
        let mut scene = vec![0.0; S];
        scene[scene_id] = 1.0;
        let mut distortion = vec![0.0; D];
        distortion[distortion_id] = 1.0;
        BatchItem {
            views: ViewSet::new(locals, global_view).unwrap(),
            targets: TaskTargets {
                mos,
                scene,
                distortion,
            },
        }
    }

    #[test]
    fn multitask_loss_matches_component_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let batch = vec![item(&mut rng, 4.2, 0, 1), item(&mut rng, 2.1, 2, 0)];
        let weights = TaskWeights {
            lambda_q: 1.2,
            lambda_s: 0.8,
            lambda_d: 1.0,
            ..TaskWeights::initial()
        };
        let out = multitask_loss(&batch, &weights, TaskMask::all()).unwrap();

        // Recompute every term independently.
        let q1 = predicted_quality(&batch[0].views).unwrap();
        let q2 = predicted_quality(&batch[1].views).unwrap();
        let lq = quality_pair_loss(q1, q2, PairLabel::from_mos(4.2, 2.1));
        let mut ls = 0.0;
        let mut ld = 0.0;
        for it in &batch {
            ls += scene_loss(
                &mean_scene_marginal(&it.views.locals).unwrap(),
                &it.targets.scene,
            )
            .unwrap();
            ld += distortion_loss(
                &mean_distortion_marginal(&it.views.locals).unwrap(),
                &it.targets.distortion,
            )
            .unwrap();
        }
        ls /= 2.0;
        ld /= 2.0;
        assert_close(out.mean_quality, lq, 1e-12);
        assert_close(out.mean_scene, ls, 1e-12);
        assert_close(out.mean_distortion, ld, 1e-12);
        assert_close(out.total, 1.2 * lq + 0.8 * ls + 1.0 * ld, 1e-12);
        assert!(!out.quality_skipped);
    }

    #[test]
    fn multitask_loss_zero_weights_and_singleton() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let batch = vec![item(&mut rng, 4.2, 0, 1), item(&mut rng, 2.1, 2, 0)];
        let zero = TaskWeights {
            lambda_q: 0.0,
            lambda_s: 0.0,
            lambda_d: 0.0,
            ..TaskWeights::initial()
        };
        let out = multitask_loss(&batch, &zero, TaskMask::all()).unwrap();
        assert_eq!(out.total, 0.0);

        let single = vec![item(&mut rng, 3.3, 1, 2)];
        let out =
            multitask_loss(&single, &TaskWeights::initial(), TaskMask::all()).unwrap();
        assert!(out.quality_skipped);
        assert_eq!(out.mean_quality, 0.0);
        assert!(out.total > 0.0);
    }

    #[test]
    fn multitask_loss_zero_for_perfect_predictions() {
        // One-hot joints exactly matching the labels, identical MOS → tie.
        let mut probs_a = vec![0.0; C * S * D];
        probs_a[(4 * S) * D + 1] = 1.0; // c=5, s=0, d=1
        let view_a = JointScore::from_probs(probs_a, C, S, D).unwrap();
        let mut scene_a = vec![0.0; S];
        scene_a[0] = 1.0;
        let mut dist_a = vec![0.0; D];
        dist_a[1] = 1.0;
        let item_a = BatchItem {
            views: ViewSet::new(vec![view_a.clone(); 4], view_a.clone()).unwrap(),
            targets: TaskTargets {
                mos: 5.0,
                scene: scene_a,
                distortion: dist_a,
            },
        };
        let out = multitask_loss(
            &[item_a.clone(), item_a],
            &TaskWeights::initial(),
            TaskMask::all(),
        )
        .unwrap();
        assert_close(out.total, 0.0, 1e-12);
    }

    #[test]
    fn multitask_mask_drops_auxiliary_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let batch = vec![item(&mut rng, 4.2, 0, 1), item(&mut rng, 2.1, 2, 0)];
        let out = multitask_loss(
            &batch,
            &TaskWeights::initial(),
            TaskMask {
                scene: false,
                distortion: false,
            },
        )
        .unwrap();
        assert_eq!(out.mean_scene, 0.0);
        assert_eq!(out.mean_distortion, 0.0);
        assert_close(out.total, out.mean_quality, 1e-15);
    }
}

//! Joint probability tensors over (quality level, scene, distortion) and the
//! projections that turn per-view marginals into raw NIG evidence.

use crate::error::{CoreError, Result};
use crate::nig::RawEvidence;

/// Tolerance for "sums to one" checks on joint tensors and marginals.
pub const NORMALIZATION_TOL: f64 = 1e-6;

/// The three prediction tasks sharing one joint tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Quality,
    Scene,
    Distortion,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Quality, Task::Scene, Task::Distortion];

    pub fn name(&self) -> &'static str {
        match self {
            Task::Quality => "quality",
            Task::Scene => "scene",
            Task::Distortion => "distortion",
        }
    }
}

/// Joint probabilities p(c, s, d) for one view, flattened row-major with the
/// quality axis slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct JointScore {
    quality_levels: usize,
    scenes: usize,
    distortions: usize,
    probs: Vec<f64>,
}

impl JointScore {
    /// Wrap a probability tensor, checking shape, non-negativity, and
    /// normalization.
    pub fn from_probs(
        probs: Vec<f64>,
        quality_levels: usize,
        scenes: usize,
        distortions: usize,
    ) -> Result<Self> {
        if quality_levels == 0 || scenes == 0 || distortions == 0 {
            return Err(CoreError::invalid_input(
                "joint tensor axes must be non-empty",
            ));
        }
        if probs.len() != quality_levels * scenes * distortions {
            return Err(CoreError::dimension_mismatch(format!(
                "expected {} entries for a {}x{}x{} tensor, got {}",
                quality_levels * scenes * distortions,
                quality_levels,
                scenes,
                distortions,
                probs.len()
            )));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(CoreError::invalid_input(
                "joint probabilities must be finite and non-negative",
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(CoreError::invalid_input(format!(
                "joint probabilities must sum to 1 within {NORMALIZATION_TOL}; got {total}"
            )));
        }
        Ok(Self {
            quality_levels,
            scenes,
            distortions,
            probs,
        })
    }

    pub fn quality_levels(&self) -> usize {
        self.quality_levels
    }

    pub fn scenes(&self) -> usize {
        self.scenes
    }

    pub fn distortions(&self) -> usize {
        self.distortions
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn index(&self, c: usize, s: usize, d: usize) -> usize {
        (c * self.scenes + s) * self.distortions + d
    }

    pub fn prob(&self, c: usize, s: usize, d: usize) -> f64 {
        self.probs[self.index(c, s, d)]
    }

    fn same_shape(&self, other: &JointScore) -> bool {
        self.quality_levels == other.quality_levels
            && self.scenes == other.scenes
            && self.distortions == other.distortions
    }
}

/// Temperature softmax over the full (c, s, d) grid.
///
/// Entries are exp(logit/κ) normalized over the whole tensor; the max logit is
/// subtracted first so large scores cannot overflow.
pub fn joint_softmax(
    logits: &[f64],
    quality_levels: usize,
    scenes: usize,
    distortions: usize,
    kappa: f64,
) -> Result<JointScore> {
    if !kappa.is_finite() || kappa <= 0.0 {
        return Err(CoreError::invalid_input(format!(
            "kappa must be finite and > 0; got {kappa}"
        )));
    }
    if logits.len() != quality_levels * scenes * distortions {
        return Err(CoreError::dimension_mismatch(format!(
            "expected {} logits, got {}",
            quality_levels * scenes * distortions,
            logits.len()
        )));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(CoreError::invalid_input("logits must be finite"));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits.iter().map(|&z| ((z - max) / kappa).exp()).collect();
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    Ok(JointScore {
        quality_levels,
        scenes,
        distortions,
        probs,
    })
}

/// Quality marginal of a single view: p(c) = Σ_{s,d} p(c,s,d).
pub fn view_quality_marginal(view: &JointScore) -> Vec<f64> {
    let span = view.scenes * view.distortions;
    let mut out = vec![0.0; view.quality_levels];
    for (c, slot) in out.iter_mut().enumerate() {
        *slot = view.probs[c * span..(c + 1) * span].iter().sum();
    }
    out
}

/// Image-level quality marginal: the per-view quality marginals averaged over
/// all provided views.
pub fn quality_marginal(views: &[JointScore]) -> Result<Vec<f64>> {
    let first = views.first().ok_or_else(|| {
        CoreError::invalid_input("quality_marginal requires at least one view")
    })?;
    let mut out = vec![0.0; first.quality_levels];
    for view in views {
        if !first.same_shape(view) {
            return Err(CoreError::dimension_mismatch(
                "views must share the same joint shape",
            ));
        }
        for (acc, m) in out.iter_mut().zip(view_quality_marginal(view)) {
            *acc += m;
        }
    }
    let n = views.len() as f64;
    for x in &mut out {
        *x /= n;
    }
    Ok(out)
}

/// Scene marginal of a single view: p(s) = Σ_{c,d} p(c,s,d).
pub fn scene_marginal(view: &JointScore) -> Vec<f64> {
    let mut out = vec![0.0; view.scenes];
    for c in 0..view.quality_levels {
        for (s, slot) in out.iter_mut().enumerate() {
            let base = (c * view.scenes + s) * view.distortions;
            *slot += view.probs[base..base + view.distortions].iter().sum::<f64>();
        }
    }
    out
}

/// Distortion marginal of a single view: p(d) = Σ_{c,s} p(c,s,d).
pub fn distortion_marginal(view: &JointScore) -> Vec<f64> {
    let mut out = vec![0.0; view.distortions];
    for (i, p) in view.probs.iter().enumerate() {
        out[i % view.distortions] += p;
    }
    out
}

/// Average of per-view scene marginals.
pub fn mean_scene_marginal(views: &[JointScore]) -> Result<Vec<f64>> {
    mean_marginal(views, scene_marginal)
}

/// Average of per-view distortion marginals.
pub fn mean_distortion_marginal(views: &[JointScore]) -> Result<Vec<f64>> {
    mean_marginal(views, distortion_marginal)
}

fn mean_marginal(
    views: &[JointScore],
    f: fn(&JointScore) -> Vec<f64>,
) -> Result<Vec<f64>> {
    let first = views
        .first()
        .ok_or_else(|| CoreError::invalid_input("marginal requires at least one view"))?;
    let mut out = f(first);
    for view in &views[1..] {
        if !first.same_shape(view) {
            return Err(CoreError::dimension_mismatch(
                "views must share the same joint shape",
            ));
        }
        for (acc, m) in out.iter_mut().zip(f(view)) {
            *acc += m;
        }
    }
    let n = views.len() as f64;
    for x in &mut out {
        *x /= n;
    }
    Ok(out)
}

/// Expected quality level Σ c · p(c) over levels 1..=C.
///
/// Evaluated in the centered form mid + Σ (c − mid) p(c) with symmetric
/// pairing, so any all-equal input yields the midpoint exactly.
pub fn quality_expectation(pc: &[f64]) -> Result<f64> {
    if pc.is_empty() {
        return Err(CoreError::invalid_input("empty quality marginal"));
    }
    let total: f64 = pc.iter().sum();
    if (total - 1.0).abs() > 1e-4 {
        return Err(CoreError::invalid_input(format!(
            "quality marginal must sum to 1 within 1e-4; got {total}"
        )));
    }
    let n = pc.len();
    let mid = (n as f64 + 1.0) / 2.0;
    let mut corr = 0.0;
    for i in 0..n / 2 {
        let k = (n - 1 - 2 * i) as f64 / 2.0;
        corr += k * (pc[n - 1 - i] - pc[i]);
    }
    Ok(mid + corr)
}

/// Affine map from a task marginal to four raw evidence channels.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskProjection {
    /// One 4-channel weight row per input entry.
    pub weights: Vec<[f64; 4]>,
    pub bias: [f64; 4],
}

impl TaskProjection {
    pub fn zeros(input_dim: usize) -> Self {
        Self {
            weights: vec![[0.0; 4]; input_dim],
            bias: [0.0; 4],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.len()
    }

    pub fn apply(&self, input: &[f64]) -> Result<RawEvidence> {
        if input.len() != self.weights.len() {
            return Err(CoreError::dimension_mismatch(format!(
                "projection expects {} inputs, got {}",
                self.weights.len(),
                input.len()
            )));
        }
        let mut out = self.bias;
        for (x, row) in input.iter().zip(&self.weights) {
            for k in 0..4 {
                out[k] += x * row[k];
            }
        }
        Ok(RawEvidence(out))
    }
}

/// Per-task evidence projections.
///
/// The quality head reads the C-entry quality marginal plus one extra channel
/// carrying its expectation; scene and distortion heads read their marginals
/// directly.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceProjection {
    pub quality: TaskProjection,
    pub scene: TaskProjection,
    pub distortion: TaskProjection,
}

impl EvidenceProjection {
    pub fn zeros(quality_levels: usize, scenes: usize, distortions: usize) -> Self {
        Self {
            quality: TaskProjection::zeros(quality_levels + 1),
            scene: TaskProjection::zeros(scenes),
            distortion: TaskProjection::zeros(distortions),
        }
    }

    pub fn task(&self, task: Task) -> &TaskProjection {
        match task {
            Task::Quality => &self.quality,
            Task::Scene => &self.scene,
            Task::Distortion => &self.distortion,
        }
    }

    pub fn task_mut(&mut self, task: Task) -> &mut TaskProjection {
        match task {
            Task::Quality => &mut self.quality,
            Task::Scene => &mut self.scene,
            Task::Distortion => &mut self.distortion,
        }
    }
}

/// Input vector fed to a task's evidence projection for one view.
pub fn task_input(view: &JointScore, task: Task) -> Result<Vec<f64>> {
    match task {
        Task::Quality => {
            let mut m = view_quality_marginal(view);
            let expectation = quality_expectation(&m)?;
            m.push(expectation);
            Ok(m)
        }
        Task::Scene => Ok(scene_marginal(view)),
        Task::Distortion => Ok(distortion_marginal(view)),
    }
}

/// Raw 4-channel evidence for one view and task.
pub fn task_evidence(
    view: &JointScore,
    task: Task,
    proj: &EvidenceProjection,
) -> Result<RawEvidence> {
    let input = task_input(view, task)?;
    proj.task(task).apply(&input)
}

/// One sample's views: N local crops plus one global view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    pub locals: Vec<JointScore>,
    pub global_view: JointScore,
}

impl ViewSet {
    pub fn new(locals: Vec<JointScore>, global_view: JointScore) -> Result<Self> {
        let first = locals.first().ok_or_else(|| {
            CoreError::invalid_input("a view set needs at least one local view")
        })?;
        if !first.same_shape(&global_view)
            || locals.iter().any(|v| !first.same_shape(v))
        {
            return Err(CoreError::dimension_mismatch(
                "all views must share the same joint shape",
            ));
        }
        Ok(Self {
            locals,
            global_view,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const C: usize = 5;
    const S: usize = 3;
    const D: usize = 4;

    fn assert_close(actual: f64, expected: f64, tol: f64) {
        let diff = (actual - expected).abs();
        assert!(
            diff <= tol,
            "expected {expected}, got {actual}, |diff|={diff}, tol={tol}"
        );
    }

    fn random_view(rng: &mut impl Rng) -> JointScore {
        let logits: Vec<f64> = (0..C * S * D).map(|_| rng.random_range(-2.0..2.0)).collect();
        joint_softmax(&logits, C, S, D, 0.7).unwrap()
    }

    #[test]
    fn softmax_uniform_for_equal_logits() {
        let view = joint_softmax(&vec![0.3; C * S * D], C, S, D, 0.07).unwrap();
        for &p in view.probs() {
            assert_close(p, 1.0 / (C * S * D) as f64, 1e-15);
        }
    }

    #[test]
    fn softmax_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let logits: Vec<f64> = (0..C * S * D).map(|_| rng.random_range(-3.0..3.0)).collect();
        let shifted: Vec<f64> = logits.iter().map(|z| z + 7.25).collect();
        let a = joint_softmax(&logits, C, S, D, 0.4).unwrap();
        let b = joint_softmax(&shifted, C, S, D, 0.4).unwrap();
        for (x, y) in a.probs().iter().zip(b.probs()) {
            assert_close(*x, *y, 1e-12);
        }
    }

    #[test]
    fn softmax_saturates_on_dominant_logit() {
        let mut logits = vec![0.0; C * S * D];
        logits[17] = 20.0;
        let view = joint_softmax(&logits, C, S, D, 0.07).unwrap();
        assert!(view.probs()[17] > 1.0 - 1e-9);
        assert!(view.probs().iter().all(|p| *p > 0.0));
    }

    #[test]
    fn softmax_rejects_bad_inputs() {
        assert!(joint_softmax(&vec![0.0; C * S * D], C, S, D, 0.0).is_err());
        assert!(joint_softmax(&vec![0.0; C * S * D], C, S, D, -1.0).is_err());
        assert!(joint_softmax(&[0.0; 7], C, S, D, 0.1).is_err());
        let mut logits = vec![0.0; C * S * D];
        logits[0] = f64::NAN;
        assert!(joint_softmax(&logits, C, S, D, 0.1).is_err());
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn marginals_match_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let view = random_view(&mut rng);

        let mut q_oracle = vec![0.0; C];
        let mut s_oracle = vec![0.0; S];
        let mut d_oracle = vec![0.0; D];
        for c in 0..C {
            for s in 0..S {
                for d in 0..D {
                    let p = view.prob(c, s, d);
                    q_oracle[c] += p;
                    s_oracle[s] += p;
                    d_oracle[d] += p;
                }
            }
        }
        for (got, want) in view_quality_marginal(&view).iter().zip(&q_oracle) {
            assert_close(*got, *want, 1e-12);
        }
        for (got, want) in scene_marginal(&view).iter().zip(&s_oracle) {
            assert_close(*got, *want, 1e-12);
        }
        for (got, want) in distortion_marginal(&view).iter().zip(&d_oracle) {
            assert_close(*got, *want, 1e-12);
        }
    }

    #[test]
    fn marginals_stay_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..50 {
            let view = random_view(&mut rng);
            for marg in [
                view_quality_marginal(&view),
                scene_marginal(&view),
                distortion_marginal(&view),
            ] {
                let total: f64 = marg.iter().sum();
                assert_close(total, 1.0, 1e-6);
                assert!(marg.iter().all(|p| *p >= 0.0));
            }
        }
    }

    #[test]
    fn quality_marginal_single_uniform_view() {
        let uniform = joint_softmax(&vec![1.3; C * S * D], C, S, D, 0.2).unwrap();
        let m = quality_marginal(std::slice::from_ref(&uniform)).unwrap();
        for p in m {
            assert_close(p, 0.2, 1e-12);
        }
    }

    #[test]
    fn quality_marginal_averages_views() {
        // Two one-hot-ish views on opposite quality levels average to ½/½.
        let mut lo = vec![0.0; C * S * D];
        lo[0] = 1.0;
        let mut hi = vec![0.0; C * S * D];
        hi[(C - 1) * S * D] = 1.0;
        let a = JointScore::from_probs(lo, C, S, D).unwrap();
        let b = JointScore::from_probs(hi, C, S, D).unwrap();
        let m = quality_marginal(&[a, b]).unwrap();
        assert_eq!(m[0], 0.5);
        assert_eq!(m[C - 1], 0.5);
        assert_eq!(m[1..C - 1].iter().sum::<f64>(), 0.0);
        assert!(quality_marginal(&[]).is_err());
    }

    #[test]
    fn expectation_reference_values() {
        assert_eq!(quality_expectation(&[0.2; 5]).unwrap(), 3.0);
        assert_eq!(quality_expectation(&[0.0, 0.0, 0.0, 0.0, 1.0]).unwrap(), 5.0);
        assert_close(
            quality_expectation(&[0.1, 0.2, 0.3, 0.2, 0.2]).unwrap(),
            3.2,
            1e-15,
        );
        assert!(quality_expectation(&[0.5, 0.5, 0.5, 0.0, 0.0]).is_err());
    }

    #[test]
    fn expectation_stays_in_level_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        for _ in 0..200 {
            let view = random_view(&mut rng);
            let e = quality_expectation(&view_quality_marginal(&view)).unwrap();
            assert!((1.0..=5.0).contains(&e), "expectation {e} out of range");
        }
    }

    #[test]
    fn projection_bias_only() {
        let mut proj = EvidenceProjection::zeros(C, S, D);
        proj.quality.bias = [1.0, -2.0, 0.5, 3.0];
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let view = random_view(&mut rng);
        let raw = task_evidence(&view, Task::Quality, &proj).unwrap();
        assert_eq!(raw.0, [1.0, -2.0, 0.5, 3.0]);
    }

    #[test]
    fn projection_routes_expectation_channel() {
        let mut proj = EvidenceProjection::zeros(C, S, D);
        // Connect the expectation input (index C) straight to channel 0.
        proj.quality.weights[C][0] = 1.0;
        let uniform = joint_softmax(&vec![0.0; C * S * D], C, S, D, 0.07).unwrap();
        let raw = task_evidence(&uniform, Task::Quality, &proj).unwrap();
        assert_eq!(raw.0[0], 3.0);
        assert_eq!(raw.0[1..], [0.0, 0.0, 0.0]);
    }

    #[test]
    fn projection_matches_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let mut proj = EvidenceProjection::zeros(C, S, D);
        for row in proj.scene.weights.iter_mut() {
            for w in row.iter_mut() {
                *w = rng.random_range(-1.0..1.0);
            }
        }
        for b in proj.scene.bias.iter_mut() {
            *b = rng.random_range(-1.0..1.0);
        }
        let view = random_view(&mut rng);
        let raw = task_evidence(&view, Task::Scene, &proj).unwrap();
        let input = scene_marginal(&view);
        for k in 0..4 {
            let want: f64 = proj.scene.bias[k]
                + input
                    .iter()
                    .enumerate()
                    .map(|(i, x)| x * proj.scene.weights[i][k])
                    .sum::<f64>();
            assert_close(raw.0[k], want, 1e-12);
        }
    }

    #[test]
    fn projection_rejects_dimension_mismatch() {
        let proj = EvidenceProjection::zeros(C, S, D);
        let view = {
            let mut rng = ChaCha8Rng::seed_from_u64(37);
            let logits: Vec<f64> =
                (0..C * S * (D + 1)).map(|_| rng.random_range(-1.0..1.0)).collect();
            joint_softmax(&logits, C, S, D + 1, 0.5).unwrap()
        };
        assert!(task_evidence(&view, Task::Distortion, &proj).is_err());
    }

    #[test]
    fn view_set_validates_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        let a = random_view(&mut rng);
        let b = random_view(&mut rng);
        assert!(ViewSet::new(vec![a.clone()], b).is_ok());
        assert!(ViewSet::new(vec![], a.clone()).is_err());

        let odd = {
            let logits: Vec<f64> =
                (0..C * (S + 1) * D).map(|_| rng.random_range(-1.0..1.0)).collect();
            joint_softmax(&logits, C, S + 1, D, 0.5).unwrap()
        };
        assert!(ViewSet::new(vec![a], odd).is_err());
    }
}

//! Normal-inverse-gamma parameter algebra.
//!
//! A prediction is carried as the four NIG parameters (δ, v, α, β): δ is the
//! location estimate, v counts virtual observations backing it, and (α, β)
//! shape the inverse-gamma posterior over the noise variance. Everything in
//! this module is a pure function of its inputs.

use crate::error::{CoreError, Result};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Floor applied to v and β after constraint activation.
pub const EVIDENCE_FLOOR: f64 = 1e-8;
/// Floor applied to α − 1 after constraint activation.
pub const SHAPE_FLOOR: f64 = 1e-8;

/// Stable softplus, ln(1 + e^x). Linear branch for x > 30 where e^x would
/// dominate the 1.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of softplus: the logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Pre-activation output of an evidence projection: four unconstrained reals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawEvidence(pub [f64; 4]);

impl RawEvidence {
    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// Parameters of a normal-inverse-gamma distribution.
///
/// Invariants enforced at construction: δ finite, v > 0, α > 1, β > 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NigParams {
    delta: f64,
    v: f64,
    alpha: f64,
    beta: f64,
}

impl NigParams {
    pub fn new(delta: f64, v: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !delta.is_finite() {
            return Err(CoreError::invalid_input(format!(
                "NIG delta must be finite; got {delta}"
            )));
        }
        if !v.is_finite() || v <= 0.0 {
            return Err(CoreError::invalid_input(format!(
                "NIG v must be finite and > 0; got {v}"
            )));
        }
        if !alpha.is_finite() || alpha <= 1.0 {
            return Err(CoreError::domain(format!(
                "NIG alpha must be finite and > 1; got {alpha}"
            )));
        }
        if !beta.is_finite() || beta <= 0.0 {
            return Err(CoreError::invalid_input(format!(
                "NIG beta must be finite and > 0; got {beta}"
            )));
        }
        Ok(Self {
            delta,
            v,
            alpha,
            beta,
        })
    }

    /// Construct without validation. Callers must uphold the invariants.
    pub(crate) fn new_unchecked(delta: f64, v: f64, alpha: f64, beta: f64) -> Self {
        debug_assert!(delta.is_finite() && v > 0.0 && alpha > 1.0 && beta > 0.0);
        Self {
            delta,
            v,
            alpha,
            beta,
        }
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn v(&self) -> f64 {
        self.v
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// (δ, v, α, β) as a tuple.
    pub fn params(&self) -> (f64, f64, f64, f64) {
        (self.delta, self.v, self.alpha, self.beta)
    }

    /// Point prediction E[μ] = δ.
    pub fn mean_prediction(&self) -> f64 {
        self.delta
    }

    /// Total evidence φ = 2v + α.
    pub fn total_evidence(&self) -> f64 {
        2.0 * self.v + self.alpha
    }

    /// Expected noise variance E[σ²] = β / (α − 1).
    pub fn aleatoric(&self) -> f64 {
        self.beta / (self.alpha - 1.0)
    }

    /// Variance of the location estimate Var[μ] = β / (v (α − 1)).
    pub fn epistemic(&self) -> f64 {
        self.beta / (self.v * (self.alpha - 1.0))
    }
}

/// Map raw evidence onto valid NIG parameters.
///
/// δ passes through unchanged; v and β go through softplus; α through
/// 1 + softplus. Small floors keep downstream logs and divisions finite.
pub fn constrain(raw: &RawEvidence) -> Result<NigParams> {
    if !raw.is_finite() {
        return Err(CoreError::invalid_input(format!(
            "raw evidence must be finite; got {:?}",
            raw.0
        )));
    }
    let [d, rv, ra, rb] = raw.0;
    let v = softplus(rv).max(EVIDENCE_FLOOR);
    let alpha = (1.0 + softplus(ra)).max(1.0 + SHAPE_FLOOR);
    let beta = softplus(rb).max(EVIDENCE_FLOOR);
    Ok(NigParams::new_unchecked(d, v, alpha, beta))
}

/// Combine two NIG distributions into one.
///
/// The location becomes the v-weighted mean; evidence counts add; β picks up
/// the between-component spread so the fused variance honors the parallel-axis
/// decomposition. δ is computed through normalized weights so that fusing a
/// distribution with itself reproduces δ exactly.
pub fn nig_fuse(a: &NigParams, b: &NigParams) -> NigParams {
    let v_total = a.v + b.v;
    let w_a = a.v / v_total;
    let w_b = b.v / v_total;
    let delta = w_a * a.delta + w_b * b.delta;
    let alpha = (a.alpha + b.alpha) + 0.5;
    let e_a = a.delta - delta;
    let e_b = b.delta - delta;
    // Grouped so the sum commutes bitwise under operand swap.
    let spread = 0.5 * a.v * e_a * e_a + 0.5 * b.v * e_b * e_b;
    let beta = (a.beta + b.beta) + spread;
    NigParams::new_unchecked(delta, v_total, alpha, beta)
}

/// Left fold of [`nig_fuse`] over a non-empty list. A singleton is returned
/// unchanged. The result is order-independent up to rounding.
pub fn nig_fuse_n(params: &[NigParams]) -> Result<NigParams> {
    let (first, rest) = params.split_first().ok_or_else(|| {
        CoreError::invalid_input("nig_fuse_n requires a non-empty parameter list")
    })?;
    Ok(rest.iter().fold(*first, |acc, p| nig_fuse(&acc, p)))
}

/// Componentwise arithmetic mean of a non-empty list of NIG parameters.
pub fn nig_average(params: &[NigParams]) -> Result<NigParams> {
    if params.is_empty() {
        return Err(CoreError::invalid_input(
            "nig_average requires a non-empty parameter list",
        ));
    }
    let n = params.len() as f64;
    let mut sums = [0.0; 4];
    for p in params {
        sums[0] += p.delta;
        sums[1] += p.v;
        sums[2] += p.alpha;
        sums[3] += p.beta;
    }
    Ok(NigParams::new_unchecked(
        sums[0] / n,
        sums[1] / n,
        sums[2] / n,
        sums[3] / n,
    ))
}

/// Central predictive interval at the given coverage.
///
/// The posterior predictive of a NIG is Student-t with 2α degrees of freedom,
/// location δ, and scale sqrt(β(1+v)/(vα)).
pub fn predictive_interval(p: &NigParams, coverage: f64) -> Result<(f64, f64)> {
    if !(coverage > 0.0 && coverage < 1.0) {
        return Err(CoreError::invalid_input(format!(
            "coverage must lie in (0, 1); got {coverage}"
        )));
    }
    let dof = 2.0 * p.alpha;
    let scale = (p.beta * (1.0 + p.v) / (p.v * p.alpha)).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| CoreError::domain(format!("student-t with {dof} dof: {e}")))?;
    let half = scale * t.inverse_cdf(0.5 + coverage / 2.0);
    Ok((p.delta - half, p.delta + half))
}

//! Per-sample evidential regression loss and its analytic gradient.
//!
//! The negative log model evidence of a NIG-distributed prediction, an
//! evidence-weighted regression penalty, and their τ-weighted sum. Gradients
//! are closed-form in (δ, v, α, β) so callers can backpropagate without an
//! autodiff framework.

use crate::error::{CoreError, Result};
use crate::nig::NigParams;
use statrs::function::gamma::{digamma, ln_gamma};

/// Components of the evidential loss at one (prediction, target) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvidentialLossValue {
    pub nll: f64,
    pub reg: f64,
    pub total: f64,
    pub tau: f64,
}

/// Partial derivatives of the evidential loss with respect to (δ, v, α, β).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvidentialGrad {
    pub d_delta: f64,
    pub d_v: f64,
    pub d_alpha: f64,
    pub d_beta: f64,
}

impl EvidentialGrad {
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            d_delta: self.d_delta * factor,
            d_v: self.d_v * factor,
            d_alpha: self.d_alpha * factor,
            d_beta: self.d_beta * factor,
        }
    }

    pub fn add(&mut self, other: &Self) {
        self.d_delta += other.d_delta;
        self.d_v += other.d_v;
        self.d_alpha += other.d_alpha;
        self.d_beta += other.d_beta;
    }
}

/// Negative log model evidence.
///
/// With Ω = 2β(1+v):
/// ½ log(π/v) + log Γ(α) − log Γ(α+½) − α log Ω + (α+½) log((y−δ)²v + Ω)
pub fn nll_loss(p: &NigParams, y: f64) -> f64 {
    let (delta, v, alpha, beta) = p.params();
    let omega = 2.0 * beta * (1.0 + v);
    let resid = y - delta;
    let a = resid * resid * v + omega;
    0.5 * (std::f64::consts::PI / v).ln() + ln_gamma(alpha) - ln_gamma(alpha + 0.5)
        - alpha * omega.ln()
        + (alpha + 0.5) * a.ln()
}

/// Evidence-weighted regression penalty |y − δ| · (2v + α).
pub fn reg_loss(p: &NigParams, y: f64) -> f64 {
    (y - p.delta()).abs() * p.total_evidence()
}

/// Combined evidential loss: nll + τ·reg.
pub fn evidential_loss(p: &NigParams, y: f64, tau: f64) -> Result<EvidentialLossValue> {
    if !tau.is_finite() || tau < 0.0 {
        return Err(CoreError::invalid_input(format!(
            "tau must be non-negative; got {tau}"
        )));
    }
    let nll = nll_loss(p, y);
    let reg = reg_loss(p, y);
    Ok(EvidentialLossValue {
        nll,
        reg,
        total: nll + tau * reg,
        tau,
    })
}

/// Closed-form gradient of [`evidential_loss`] in (δ, v, α, β).
///
/// The |y − δ| kink takes subgradient 0 at y = δ.
pub fn evidential_grad(p: &NigParams, y: f64, tau: f64) -> EvidentialGrad {
    let (delta, v, alpha, beta) = p.params();
    let omega = 2.0 * beta * (1.0 + v);
    let resid = y - delta;
    let a = resid * resid * v + omega;

    let d_delta_nll = (alpha + 0.5) * (-2.0 * resid * v) / a;
    let d_v_nll = -0.5 / v - alpha / (1.0 + v) + (alpha + 0.5) * (resid * resid + 2.0 * beta) / a;
    let d_alpha_nll = digamma(alpha) - digamma(alpha + 0.5) - omega.ln() + a.ln();
    let d_beta_nll = -alpha / beta + (alpha + 0.5) * 2.0 * (1.0 + v) / a;

    let sign = if resid > 0.0 {
        1.0
    } else if resid < 0.0 {
        -1.0
    } else {
        0.0
    };
    let abs_resid = resid.abs();
    EvidentialGrad {
        d_delta: d_delta_nll + tau * (-sign) * p.total_evidence(),
        d_v: d_v_nll + tau * 2.0 * abs_resid,
        d_alpha: d_alpha_nll + tau * abs_resid,
        d_beta: d_beta_nll,
    }
}

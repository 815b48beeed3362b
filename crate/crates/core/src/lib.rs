//! Evidential multitask loss machinery for quality assessment.
//!
//! The crate carries the numerical core of an evidential fusion pipeline:
//! normal-inverse-gamma parameter algebra ([`nig`]), the evidential
//! regression loss with closed-form gradients ([`evidential`]), joint
//! probability heads ([`joint`]), fidelity-based multitask losses with
//! dynamic weight averaging ([`multitask`]), the two fusion losses and the
//! overall objective ([`fusion`]), and hand-written reverse-mode gradients
//! for all of it ([`grad`]).
//!
//! Every function is pure; nothing here owns an RNG or mutable state, so the
//! whole surface is safe for concurrent use.

pub mod error;
pub mod evidential;
pub mod fusion;
pub mod grad;
pub mod joint;
pub mod multitask;
pub mod nig;

pub use error::{CoreError, Result};
pub use evidential::{
    evidential_grad, evidential_loss, nll_loss, reg_loss, EvidentialGrad, EvidentialLossValue,
};
pub use fusion::{
    cross_region_loss, cross_region_params, local_global_loss, local_global_params,
    overall_loss, select_fusion_views, FusionConfig, LossMask, LossReport, ViewSelection,
};
pub use grad::{
    joint_softmax_vjp, nig_fuse_vjp, overall_loss_with_grad, OverallGradients, ViewCotangents,
};
pub use joint::{
    distortion_marginal, joint_softmax, quality_expectation, quality_marginal, scene_marginal,
    task_evidence, EvidenceProjection, JointScore, Task, TaskProjection, ViewSet,
};
pub use multitask::{
    distortion_loss, dwa_update, fidelity, multitask_loss, quality_pair_loss, scene_loss,
    thurstone_prob, BatchItem, MultitaskOutcome, PairLabel, TaskMask, TaskTargets, TaskWeights,
};
pub use nig::{
    constrain, nig_average, nig_fuse, nig_fuse_n, predictive_interval, softplus, NigParams,
    RawEvidence,
};

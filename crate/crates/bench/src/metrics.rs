//! Rank/linear correlation, classification accuracy, interval width, and a
//! normality diagnostic.

use crate::dataset::Sample;
use crate::error::{BenchError, Result};
use crate::scorer::TinyScorer;
use evifuse_core::fusion::{local_global_params, select_fusion_views, FusionConfig};
use evifuse_core::joint::{
    mean_distortion_marginal, mean_scene_marginal, quality_expectation, quality_marginal, Task,
};
use evifuse_core::predictive_interval;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use std::fmt::Write as _;
use std::path::Path;

/// Held-out evaluation summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub srcc: f64,
    pub plcc: f64,
    pub acc_scene: f64,
    pub acc_distortion: f64,
    pub mean_ci_width: f64,
}

/// Average ranks (1-based) with ties sharing their mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("no NaN in ranks"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mean_rank;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson linear correlation coefficient.
pub fn plcc(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.len() < 2 {
        return Err(BenchError::invalid_input(
            "plcc needs two equally long vectors with at least 2 entries",
        ));
    }
    let n = pred.len() as f64;
    let mean_p = pred.iter().sum::<f64>() / n;
    let mean_t = truth.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_p = 0.0;
    let mut var_t = 0.0;
    for (&p, &t) in pred.iter().zip(truth) {
        let dp = p - mean_p;
        let dt = t - mean_t;
        cov += dp * dt;
        var_p += dp * dp;
        var_t += dt * dt;
    }
    if var_p == 0.0 || var_t == 0.0 {
        return Err(BenchError::Degenerate(
            "plcc undefined for a constant vector".into(),
        ));
    }
    Ok(cov / (var_p.sqrt() * var_t.sqrt()))
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn srcc(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.len() < 2 {
        return Err(BenchError::invalid_input(
            "srcc needs two equally long vectors with at least 2 entries",
        ));
    }
    plcc(&average_ranks(pred), &average_ranks(truth))
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Evaluate a scorer: quality correlation from up-to-`eval_crops` local
/// views, scene/distortion accuracy from averaged marginals, and the mean
/// 95% interval width of the local-global fused quality evidence.
pub fn evaluate(
    scorer: &TinyScorer,
    samples: &[Sample],
    fusion: &FusionConfig,
    eval_crops: usize,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(BenchError::invalid_input("evaluation needs samples"));
    }
    let mut preds = Vec::with_capacity(samples.len());
    let mut truths = Vec::with_capacity(samples.len());
    let mut scene_hits = 0usize;
    let mut distortion_hits = 0usize;
    let mut width_sum = 0.0;

    for sample in samples {
        let views = scorer.forward(sample, eval_crops)?;
        preds.push(quality_expectation(&quality_marginal(&views.locals)?)?);
        truths.push(sample.mos);

        if argmax(&mean_scene_marginal(&views.locals)?) == sample.scene {
            scene_hits += 1;
        }
        if argmax(&mean_distortion_marginal(&views.locals)?) == sample.distortion {
            distortion_hits += 1;
        }

        // Fusion always works on the first n_fuse crops at evaluation time.
        let selection =
            select_fusion_views(views.locals.len(), fusion.n_fuse, None::<&mut ChaCha8Rng>);
        let fused = local_global_params(&views, Task::Quality, &scorer.proj, &selection)?;
        let (lo, hi) = predictive_interval(&fused, 0.95)?;
        width_sum += hi - lo;
    }

    Ok(MetricsReport {
        srcc: srcc(&preds, &truths)?,
        plcc: plcc(&preds, &truths)?,
        acc_scene: scene_hits as f64 / samples.len() as f64,
        acc_distortion: distortion_hits as f64 / samples.len() as f64,
        mean_ci_width: width_sum / samples.len() as f64,
    })
}

/// Correlation between sorted scores and standard normal quantiles (Blom
/// plotting positions). Values near 1 indicate normality.
pub fn normality_diag(scores: &[f64]) -> Result<f64> {
    if scores.len() < 20 {
        return Err(BenchError::invalid_input(format!(
            "normality diagnostic needs at least 20 scores; got {}",
            scores.len()
        )));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in scores"));
    let n = sorted.len() as f64;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let quantiles: Vec<f64> = (0..sorted.len())
        .map(|i| normal.inverse_cdf((i as f64 + 1.0 - 0.375) / (n + 0.25)))
        .collect();
    plcc(&sorted, &quantiles)
}

/// Render a metrics report as flat key=value text.
pub fn render_metrics(report: &MetricsReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "srcc={:?}", report.srcc);
    let _ = writeln!(out, "plcc={:?}", report.plcc);
    let _ = writeln!(out, "acc_scene={:?}", report.acc_scene);
    let _ = writeln!(out, "acc_distortion={:?}", report.acc_distortion);
    let _ = writeln!(out, "mean_ci_width={:?}", report.mean_ci_width);
    out
}

/// Write a metrics report to disk.
pub fn write_metrics(path: &Path, report: &MetricsReport) -> Result<()> {
    std::fs::write(path, render_metrics(report))
        .map_err(|e| BenchError::io(path.display().to_string(), e))
}

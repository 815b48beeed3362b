//! Subcommand implementations.
//!
//! Exit-code contract: 0 success, 1 check failure, 2 usage/input error,
//! 3 numerical divergence. Output files never carry timestamps, so reruns
//! with the same inputs are byte-identical.

use crate::config::RunConfig;
use evifuse_bench::{
    evaluate, generate_dataset, gradcheck_end_to_end, gradcheck_evidential, read_dataset_csv,
    render_metrics, train, write_dataset_csv, write_history_csv, write_metrics, BenchError,
    GradCheckReport, TinyScorer,
};
use evifuse_core::{nig_fuse, predictive_interval, NigParams};
use std::path::{Path, PathBuf};

/// Process outcome with its exit code.
#[derive(Debug)]
pub enum CliError {
    /// Exit 1: a verification failed.
    Check(String),
    /// Exit 2: bad usage or bad input.
    Usage(String),
    /// Exit 3: numerics blew up.
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Divergence(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Check(m) | CliError::Usage(m) | CliError::Divergence(m) => m,
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Diverged { .. } => CliError::Divergence(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

pub type CmdResult = Result<(), CliError>;

fn load_config(path: Option<&Path>, seed: Option<u64>, out: Option<&Path>) -> Result<RunConfig, CliError> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p).map_err(CliError::Usage)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = out {
        cfg.out_dir = out.to_path_buf();
    }
    Ok(cfg)
}

fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Usage(format!("cannot create output dir {}: {e}", dir.display())))
}

pub fn cmd_datagen(config: Option<&Path>, seed: Option<u64>, out: Option<&Path>) -> CmdResult {
    let cfg = load_config(config, seed, out)?;
    ensure_out_dir(&cfg.out_dir)?;
    let samples = generate_dataset(&cfg.synth).map_err(CliError::from)?;
    let path = cfg.out_dir.join("dataset.csv");
    write_dataset_csv(&path, &samples).map_err(CliError::from)?;
    println!(
        "wrote {} samples x ({} local + 1 global) views to {}",
        samples.len(),
        cfg.synth.n_subregions,
        path.display()
    );
    Ok(())
}

pub fn cmd_train(
    config: Option<&Path>,
    seed: Option<u64>,
    out: Option<&Path>,
    dataset: Option<&Path>,
) -> CmdResult {
    let cfg = load_config(config, seed, out)?;
    let dataset_path: PathBuf =
        dataset.map(Path::to_path_buf).unwrap_or_else(|| cfg.out_dir.join("dataset.csv"));
    if !dataset_path.exists() {
        return Err(CliError::Usage(format!(
            "dataset {} does not exist; run datagen first",
            dataset_path.display()
        )));
    }
    let samples = read_dataset_csv(&dataset_path).map_err(CliError::from)?;
    ensure_out_dir(&cfg.out_dir)?;

    let outcome = train(
        &samples,
        cfg.synth.scene_classes,
        cfg.synth.distortion_classes,
        &cfg.fusion,
        &cfg.train,
    )
    .map_err(CliError::from)?;

    let model_path = cfg.out_dir.join("model.txt");
    let history_path = cfg.out_dir.join("history.csv");
    outcome.scorer.save(&model_path).map_err(CliError::from)?;
    write_history_csv(&history_path, &outcome.history).map_err(CliError::from)?;

    let last = outcome.history.last().expect("at least one epoch");
    println!(
        "trained {} epochs on {} samples ({} held out); final total loss {:.6}",
        outcome.history.len(),
        outcome.train_indices.len(),
        outcome.val_indices.len(),
        last.total
    );
    println!(
        "validation srcc {:.4}, plcc {:.4}, scene acc {:.4}, distortion acc {:.4}, ci width {:.4}",
        last.val_srcc, last.val_plcc, last.val_acc_scene, last.val_acc_distortion, last.val_ci_width
    );
    println!("model: {}", model_path.display());
    println!("history: {}", history_path.display());
    Ok(())
}

pub fn cmd_eval(
    model: &Path,
    dataset: &Path,
    config: Option<&Path>,
    out: Option<&Path>,
) -> CmdResult {
    let cfg = load_config(config, None, out)?;
    let scorer = TinyScorer::load(model).map_err(CliError::from)?;
    let samples = read_dataset_csv(dataset).map_err(CliError::from)?;
    let sample = &samples[0];
    if sample.global_features.len() != scorer.dims.feature_dim {
        return Err(CliError::Usage(format!(
            "model expects {} features but dataset has {}",
            scorer.dims.feature_dim,
            sample.global_features.len()
        )));
    }
    if samples
        .iter()
        .any(|s| s.scene >= scorer.dims.scenes || s.distortion >= scorer.dims.distortions)
    {
        return Err(CliError::Usage(
            "dataset labels exceed the model's class counts".into(),
        ));
    }
    let report =
        evaluate(&scorer, &samples, &cfg.fusion, cfg.train.eval_crops).map_err(CliError::from)?;
    print!("{}", render_metrics(&report));
    ensure_out_dir(&cfg.out_dir)?;
    let path = cfg.out_dir.join("metrics.txt");
    write_metrics(&path, &report).map_err(CliError::from)?;
    println!("metrics: {}", path.display());
    Ok(())
}

fn print_gradcheck(name: &str, report: &GradCheckReport) {
    println!(
        "{name}: max relative error {:.3e} (tolerance {:.0e})",
        report.max_rel_err, report.tolerance
    );
    for group in &report.groups {
        println!("  {:>24}  {:.3e}", group.name, group.max_rel_err);
    }
}

pub fn cmd_gradcheck(seed: u64, inject_corruption: bool) -> CmdResult {
    let op_level = gradcheck_evidential(seed, 100, 1e-5);
    print_gradcheck("evidential loss gradients", &op_level);
    let end_to_end =
        gradcheck_end_to_end(seed, 1e-4, inject_corruption).map_err(CliError::from)?;
    print_gradcheck("end-to-end gradients", &end_to_end);
    if op_level.passed && end_to_end.passed {
        println!("gradcheck PASS");
        Ok(())
    } else {
        println!("gradcheck FAIL");
        Err(CliError::Check("gradient check failed".into()))
    }
}

fn parse_nig(tuple: &str) -> Result<NigParams, CliError> {
    let parts: Vec<&str> = tuple.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(CliError::Usage(format!(
            "--nig expects 'delta,v,alpha,beta'; got '{tuple}'"
        )));
    }
    let mut values = [0.0; 4];
    for (slot, part) in values.iter_mut().zip(&parts) {
        *slot = part
            .parse::<f64>()
            .map_err(|_| CliError::Usage(format!("bad number '{part}' in --nig '{tuple}'")))?;
    }
    NigParams::new(values[0], values[1], values[2], values[3])
        .map_err(|e| CliError::Usage(e.to_string()))
}

pub fn cmd_fusedemo(tuples: &[String], coverage: f64) -> CmdResult {
    if tuples.is_empty() {
        return Err(CliError::Usage("provide at least one --nig tuple".into()));
    }
    let params: Vec<NigParams> = tuples
        .iter()
        .map(|s| parse_nig(s))
        .collect::<Result<_, _>>()?;
    for (i, p) in params.iter().enumerate() {
        println!(
            "input {}: delta={:?} v={:?} alpha={:?} beta={:?}",
            i + 1,
            p.delta(),
            p.v(),
            p.alpha(),
            p.beta()
        );
    }
    let mut acc = params[0];
    for (i, p) in params.iter().enumerate().skip(1) {
        acc = nig_fuse(&acc, p);
        println!(
            "step {}: fused with input {} -> delta={:?} v={:?} alpha={:?} beta={:?}",
            i,
            i + 1,
            acc.delta(),
            acc.v(),
            acc.alpha(),
            acc.beta()
        );
    }
    println!(
        "result: delta={:?} v={:?} alpha={:?} beta={:?}",
        acc.delta(),
        acc.v(),
        acc.alpha(),
        acc.beta()
    );
    println!("aleatoric={:?}", acc.aleatoric());
    println!("epistemic={:?}", acc.epistemic());
    let (lo, hi) = predictive_interval(&acc, coverage)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    println!(
        "{:.0}% interval: [{:?}, {:?}] width={:?}",
        coverage * 100.0,
        lo,
        hi,
        hi - lo
    );
    Ok(())
}

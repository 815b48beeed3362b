//! Tiny differentiable scorer standing in for a vision-language backbone.
//!
//! Each (quality, scene, distortion) cell owns a learned embedding; a view's
//! logit for that cell is the cosine similarity between the embedding and
//! the view features, mirroring how a contrastive backbone scores
//! image-text pairs. Bounded logits keep the temperature-0.07 softmax out of
//! the saturated regime no matter how far training pushes the embeddings. A
//! learnable temperature (kept in log space) turns the logits into a joint
//! probability tensor; per-task evidence projections hang off the marginals.
//! All parameters flatten into one vector for the optimizer and the gradient
//! checker.

use crate::dataset::{Sample, QUALITY_LEVELS};
use crate::error::{BenchError, Result};
use evifuse_core::joint::{joint_softmax, EvidenceProjection, JointScore, Task, ViewSet};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::fmt::Write as _;
use std::path::Path;

/// Initial softmax temperature.
pub const KAPPA_INIT: f64 = 0.07;
/// Initial projection bias: neutral location, low starting evidence so the
/// untrained model reports wide intervals.
const PROJ_BIAS_INIT: [f64; 4] = [0.0, -1.0, -1.0, -1.0];
const PROJ_INIT_STD: f64 = 0.01;
/// Cell embeddings start at unit-ish scale; cosine logits ignore their norm.
const EMBED_INIT_STD: f64 = 1.0;
const INIT_SALT: u64 = 0x5c0e_e01d_1217_ab1e;
const NORM_EPS: f64 = 1e-12;

/// Label-space dimensions of a scorer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScorerDims {
    pub quality_levels: usize,
    pub scenes: usize,
    pub distortions: usize,
    pub feature_dim: usize,
}

impl ScorerDims {
    pub fn cells(&self) -> usize {
        self.quality_levels * self.scenes * self.distortions
    }
}

/// Cosine-similarity scorer + temperature + evidence projections.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyScorer {
    pub dims: ScorerDims,
    /// Cell embeddings, cells × feature_dim row-major.
    pub weight: Vec<f64>,
    pub log_kappa: f64,
    pub proj: EvidenceProjection,
}

impl TinyScorer {
    /// Seeded random initialization.
    pub fn init(dims: ScorerDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ INIT_SALT);
        let mut gauss = |scale: f64| -> f64 {
            let x: f64 = rng.sample(StandardNormal);
            x * scale
        };
        let weight: Vec<f64> = (0..dims.cells() * dims.feature_dim)
            .map(|_| gauss(EMBED_INIT_STD))
            .collect();
        let mut proj =
            EvidenceProjection::zeros(dims.quality_levels, dims.scenes, dims.distortions);
        for task in Task::ALL {
            let tp = proj.task_mut(task);
            for row in tp.weights.iter_mut() {
                for w in row.iter_mut() {
                    *w = gauss(PROJ_INIT_STD);
                }
            }
            tp.bias = PROJ_BIAS_INIT;
        }
        Self {
            dims,
            weight,
            log_kappa: KAPPA_INIT.ln(),
            proj,
        }
    }

    pub fn kappa(&self) -> f64 {
        self.log_kappa.exp()
    }

    fn embedding(&self, row: usize) -> &[f64] {
        let base = row * self.dims.feature_dim;
        &self.weight[base..base + self.dims.feature_dim]
    }

    /// Cosine-similarity logits for one feature vector. A zero embedding or
    /// zero feature vector scores 0.
    pub fn logits(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.dims.feature_dim {
            return Err(BenchError::invalid_input(format!(
                "scorer expects {} features, got {}",
                self.dims.feature_dim,
                features.len()
            )));
        }
        let f_norm = features.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut out = vec![0.0; self.dims.cells()];
        if f_norm < NORM_EPS {
            return Ok(out);
        }
        for (row, slot) in out.iter_mut().enumerate() {
            let w = self.embedding(row);
            let mut dot = 0.0;
            let mut w_sq = 0.0;
            for (i, &f) in features.iter().enumerate() {
                dot += w[i] * f;
                w_sq += w[i] * w[i];
            }
            let w_norm = w_sq.sqrt();
            if w_norm >= NORM_EPS {
                *slot = dot / (w_norm * f_norm);
            }
        }
        Ok(out)
    }

    /// VJP of [`Self::logits`]: cotangents on the logits pulled back onto the
    /// cell embeddings, accumulated into `d_weight`.
    pub fn logits_vjp(&self, features: &[f64], d_logits: &[f64], d_weight: &mut [f64]) {
        let f_norm = features.iter().map(|x| x * x).sum::<f64>().sqrt();
        if f_norm < NORM_EPS {
            return;
        }
        for (row, &dz) in d_logits.iter().enumerate() {
            if dz == 0.0 {
                continue;
            }
            let w = self.embedding(row);
            let mut dot = 0.0;
            let mut w_sq = 0.0;
            for (i, &f) in features.iter().enumerate() {
                dot += w[i] * f;
                w_sq += w[i] * w[i];
            }
            let w_norm = w_sq.sqrt();
            if w_norm < NORM_EPS {
                continue;
            }
            let cos = dot / (w_norm * f_norm);
            let base = row * self.dims.feature_dim;
            for (i, &f) in features.iter().enumerate() {
                d_weight[base + i] += dz * (f / (w_norm * f_norm) - cos * w[i] / w_sq);
            }
        }
    }

    /// Joint probabilities for one view.
    pub fn view_joint(&self, features: &[f64]) -> Result<JointScore> {
        let logits = self.logits(features)?;
        Ok(joint_softmax(
            &logits,
            self.dims.quality_levels,
            self.dims.scenes,
            self.dims.distortions,
            self.kappa(),
        )?)
    }

    /// Views for one sample using the first `n_locals` crops (all available
    /// ones if fewer).
    pub fn forward(&self, sample: &Sample, n_locals: usize) -> Result<ViewSet> {
        let take = n_locals.clamp(1, sample.local_features.len());
        let locals: Vec<JointScore> = sample.local_features[..take]
            .iter()
            .map(|f| self.view_joint(f))
            .collect::<Result<_>>()?;
        let global_view = self.view_joint(&sample.global_features)?;
        Ok(ViewSet::new(locals, global_view)?)
    }

    /// Parameter groups in flattening order: (name, rows, cols); cols = 0
    /// marks a scalar.
    pub fn layout(&self) -> Vec<(String, usize, usize)> {
        let d = &self.dims;
        vec![
            ("scorer.weight".into(), d.cells(), d.feature_dim),
            ("log_kappa".into(), 1, 0),
            ("proj.quality.weight".into(), d.quality_levels + 1, 4),
            ("proj.quality.bias".into(), 4, 1),
            ("proj.scene.weight".into(), d.scenes, 4),
            ("proj.scene.bias".into(), 4, 1),
            ("proj.distortion.weight".into(), d.distortions, 4),
            ("proj.distortion.bias".into(), 4, 1),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(|(_, r, c)| r * (*c).max(1)).sum()
    }

    /// All parameters as one vector, in [`Self::layout`] order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        flat.extend_from_slice(&self.weight);
        flat.push(self.log_kappa);
        for task in Task::ALL {
            let tp = self.proj.task(task);
            for row in &tp.weights {
                flat.extend_from_slice(row);
            }
            flat.extend_from_slice(&tp.bias);
        }
        flat
    }

    /// Load parameters back from a flat vector produced by [`Self::flatten`].
    pub fn assign_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(BenchError::invalid_input(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut cursor = 0;
        let take = |cursor: &mut usize, n: usize| {
            let slice = &flat[*cursor..*cursor + n];
            *cursor += n;
            slice
        };
        let n_weight = self.weight.len();
        self.weight.copy_from_slice(take(&mut cursor, n_weight));
        self.log_kappa = take(&mut cursor, 1)[0];
        for task in Task::ALL {
            let tp = self.proj.task_mut(task);
            for row in tp.weights.iter_mut() {
                row.copy_from_slice(take(&mut cursor, 4));
            }
            tp.bias.copy_from_slice(take(&mut cursor, 4));
        }
        Ok(())
    }

    /// Serialize as flat text: a header line per parameter group
    /// (name + shape) followed by row-major values.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "dims {} {} {} {}",
            self.dims.quality_levels, self.dims.scenes, self.dims.distortions, self.dims.feature_dim
        );
        let flat = self.flatten();
        let mut cursor = 0;
        for (name, rows, cols) in self.layout() {
            if cols == 0 {
                let _ = writeln!(out, "{name}");
                let _ = writeln!(out, "{:?}", flat[cursor]);
                cursor += 1;
                continue;
            }
            let _ = writeln!(out, "{name} {rows} {cols}");
            for _ in 0..rows {
                let row = &flat[cursor..cursor + cols];
                let rendered: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
                let _ = writeln!(out, "{}", rendered.join(" "));
                cursor += cols;
            }
        }
        std::fs::write(path, out).map_err(|e| BenchError::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::io(path.display().to_string(), e))?;
        let path_str = path.display().to_string();
        let mut tokens = text.split_whitespace();
        let mut next = |what: &str| {
            tokens
                .next()
                .ok_or_else(|| BenchError::parse(&path_str, format!("missing {what}")))
        };
        let expect = |got: &str, want: &str| {
            if got == want {
                Ok(())
            } else {
                Err(BenchError::parse(
                    &path_str,
                    format!("expected '{want}', found '{got}'"),
                ))
            }
        };
        let parse_usize = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| BenchError::parse(&path_str, format!("bad integer '{s}'")))
        };
        let parse_f64 = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| BenchError::parse(&path_str, format!("bad value '{s}'")))
        };

        expect(next("dims header")?, "dims")?;
        let dims = ScorerDims {
            quality_levels: parse_usize(next("quality levels")?)?,
            scenes: parse_usize(next("scenes")?)?,
            distortions: parse_usize(next("distortions")?)?,
            feature_dim: parse_usize(next("feature dim")?)?,
        };
        if dims.quality_levels != QUALITY_LEVELS {
            return Err(BenchError::parse(
                &path_str,
                format!(
                    "model has {} quality levels, expected {QUALITY_LEVELS}",
                    dims.quality_levels
                ),
            ));
        }
        let mut scorer = TinyScorer::init(dims, 0);
        let mut flat = Vec::with_capacity(scorer.param_count());
        for (name, rows, cols) in scorer.layout() {
            expect(next("group name")?, &name)?;
            if cols == 0 {
                flat.push(parse_f64(next("value")?)?);
                continue;
            }
            let r = parse_usize(next("rows")?)?;
            let c = parse_usize(next("cols")?)?;
            if r != rows || c != cols {
                return Err(BenchError::parse(
                    &path_str,
                    format!("group {name}: expected shape {rows}x{cols}, found {r}x{c}"),
                ));
            }
            for _ in 0..rows * cols {
                flat.push(parse_f64(next("value")?)?);
            }
        }
        if tokens.next().is_some() {
            return Err(BenchError::parse(&path_str, "trailing content"));
        }
        scorer.assign_from_flat(&flat)?;
        Ok(scorer)
    }
}

//! Additive angular-margin softmax loss, its analytic gradient, and a small
//! deterministic trainer that produces clustered embeddings.
//!
//! All arithmetic here is double precision.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Target cosines are clamped to `[-COS_CLAMP, COS_CLAMP]` before `acos`,
/// which keeps `d acos / d cos` finite.
pub const COS_CLAMP: f64 = 1.0 - 1e-7;

const UNIT_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginConfig {
    pub scale: f64,
    /// Angular margin in radians.
    pub margin: f64,
}

impl MarginConfig {
    pub fn new(scale: f64, margin: f64) -> Result<Self> {
        let cfg = MarginConfig { scale, margin };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::MarginConfig(format!("scale {} must be positive", self.scale)));
        }
        if !(0.0..PI / 2.0).contains(&self.margin) {
            return Err(Error::MarginConfig(format!(
                "margin {} outside [0, pi/2)",
                self.margin
            )));
        }
        Ok(())
    }
}

impl Default for MarginConfig {
    fn default() -> Self {
        MarginConfig {
            scale: 64.0,
            margin: 0.5,
        }
    }
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn normalize_rows(&mut self) {
        for i in 0..self.rows {
            normalize_in_place(self.row_mut(i));
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn normalize_in_place(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn check_unit(v: &[f64], what: &str) -> Result<()> {
    let n = norm(v);
    if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::MarginConfig(format!("{what} is not unit-norm (norm {n})")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarginOutput {
    pub loss: f64,
    pub logits: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarginGradient {
    pub loss: f64,
    pub d_embedding: Vec<f64>,
    pub d_centers: Matrix,
}

struct Forward {
    logits: Vec<f64>,
    /// d logit_j / d cos_j.
    slopes: Vec<f64>,
    loss: f64,
    probs: Vec<f64>,
}

fn validate_inputs(embedding: &[f64], centers: &Matrix, label: usize, cfg: &MarginConfig) -> Result<()> {
    cfg.validate()?;
    if label >= centers.rows {
        return Err(Error::LabelOutOfRange {
            label,
            classes: centers.rows,
        });
    }
    if embedding.len() != centers.cols {
        return Err(Error::DimensionMismatch {
            left: embedding.len(),
            right: centers.cols,
        });
    }
    check_unit(embedding, "embedding")?;
    for j in 0..centers.rows {
        check_unit(centers.row(j), "center")?;
    }
    Ok(())
}

fn forward(embedding: &[f64], centers: &Matrix, label: usize, cfg: &MarginConfig) -> Forward {
    let s = cfg.scale;
    let mut logits = Vec::with_capacity(centers.rows);
    let mut slopes = Vec::with_capacity(centers.rows);
    for j in 0..centers.rows {
        let c = dot(embedding, centers.row(j));
        if j != label || cfg.margin == 0.0 {
            logits.push(s * c);
            slopes.push(s);
            continue;
        }
        let clamped = c.clamp(-COS_CLAMP, COS_CLAMP);
        let theta = clamped.acos();
        let shifted = theta + cfg.margin;
        if shifted >= PI {
            // Past pi the shifted angle is pinned, so the logit is flat.
            logits.push(-s);
            slopes.push(0.0);
        } else {
            logits.push(s * shifted.cos());
            let slope = if clamped == c {
                s * shifted.sin() / theta.sin()
            } else {
                0.0
            };
            slopes.push(slope);
        }
    }

    let zy = logits[label];
    let zmax = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - zmax).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let probs = exps.iter().map(|e| e / sum).collect();
    let loss = if zy == zmax {
        // Stable for near-zero losses: log(1 + sum_{j != y} e^(z_j - z_y)).
        let rest: f64 = logits
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != label)
            .map(|(_, z)| (z - zy).exp())
            .sum();
        rest.ln_1p()
    } else {
        zmax + sum.ln() - zy
    };
    Forward {
        logits,
        slopes,
        loss,
        probs,
    }
}

/// Cross-entropy of the softmax over margin logits. The target logit is
/// `s * cos(theta_label + m)`, every other logit `s * cos(theta_j)`.
pub fn margin_loss(
    embedding: &[f64],
    centers: &Matrix,
    label: usize,
    cfg: &MarginConfig,
) -> Result<MarginOutput> {
    validate_inputs(embedding, centers, label, cfg)?;
    let f = forward(embedding, centers, label, cfg);
    Ok(MarginOutput {
        loss: f.loss,
        logits: f.logits,
    })
}

/// Analytic gradient of [`margin_loss`] with respect to the embedding and
/// every center.
pub fn margin_gradient(
    embedding: &[f64],
    centers: &Matrix,
    label: usize,
    cfg: &MarginConfig,
) -> Result<MarginGradient> {
    validate_inputs(embedding, centers, label, cfg)?;
    Ok(gradient_unchecked(embedding, centers, label, cfg))
}

fn gradient_unchecked(embedding: &[f64], centers: &Matrix, label: usize, cfg: &MarginConfig) -> MarginGradient {
    let f = forward(embedding, centers, label, cfg);
    let d = centers.cols;
    let mut d_embedding = vec![0.0; d];
    let mut d_centers = Matrix::zeros(centers.rows, d);
    for j in 0..centers.rows {
        let delta = if j == label { 1.0 } else { 0.0 };
        let d_cos = (f.probs[j] - delta) * f.slopes[j];
        if d_cos == 0.0 {
            continue;
        }
        for (g, w) in d_embedding.iter_mut().zip(centers.row(j)) {
            *g += d_cos * w;
        }
        for (g, x) in d_centers.row_mut(j).iter_mut().zip(embedding) {
            *g = d_cos * x;
        }
    }
    MarginGradient {
        loss: f.loss,
        d_embedding,
        d_centers,
    }
}

/// Class centers plus a learned linear map applied before normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel {
    pub centers: Matrix,
    pub projection: Matrix,
    pub config: MarginConfig,
}

impl ToyModel {
    /// Maps a raw input to a unit embedding: `normalize(P x)`.
    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        let mut e = project(&self.projection, x);
        normalize_in_place(&mut e);
        e
    }
}

fn project(p: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..p.rows).map(|i| dot(p.row(i), x)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub model: ToyModel,
    /// Refined unit embeddings of the training inputs.
    pub embeddings: Matrix,
    /// Mean loss before each step, then after the last step.
    pub trace: Vec<f64>,
}

/// Full-batch gradient descent on the projection and the centers. Centers
/// are re-normalized after every step and embeddings are always the
/// normalized projections, so both stay on the unit sphere. Centers start
/// at seeded random directions.
pub fn toy_train(
    inputs: &Matrix,
    labels: &[usize],
    cfg: &MarginConfig,
    steps: usize,
    step_size: f64,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if labels.len() != inputs.rows {
        return Err(Error::DimensionMismatch {
            left: labels.len(),
            right: inputs.rows,
        });
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let distinct = {
        let mut seen = vec![false; n_classes];
        labels.iter().for_each(|&l| seen[l] = true);
        seen.iter().filter(|&&b| b).count()
    };
    if distinct < 2 {
        return Err(Error::MarginConfig("training needs at least 2 classes".into()));
    }
    if !(step_size > 0.0) {
        return Err(Error::MarginConfig(format!("step size {step_size} must be positive")));
    }
    for i in 0..inputs.rows {
        check_unit(inputs.row(i), "training input")?;
    }

    let d = inputs.cols;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut centers = Matrix::zeros(n_classes, d);
    for v in centers.data.iter_mut() {
        *v = StandardNormal.sample(&mut rng);
    }
    centers.normalize_rows();
    let mut model = ToyModel {
        centers,
        projection: Matrix::identity(d),
        config: *cfg,
    };

    let n = inputs.rows as f64;
    let mut trace = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let mut loss_sum = 0.0;
        let mut d_proj = Matrix::zeros(d, d);
        let mut d_centers = Matrix::zeros(n_classes, d);
        let last = step == steps;
        for (i, &label) in labels.iter().enumerate() {
            let x = inputs.row(i);
            let mut e = project(&model.projection, x);
            let e_norm = norm(&e);
            e.iter_mut().for_each(|v| *v /= e_norm);
            if last {
                loss_sum += forward(&e, &model.centers, label, cfg).loss;
                continue;
            }
            let g = gradient_unchecked(&e, &model.centers, label, cfg);
            loss_sum += g.loss;
            // Back through e / |e|: (g - (g.e) e) / |e|.
            let radial = dot(&g.d_embedding, &e);
            for (r, (gr, er)) in g.d_embedding.iter().zip(&e).enumerate() {
                let d_pre = (gr - radial * er) / e_norm;
                for (dp, xc) in d_proj.row_mut(r).iter_mut().zip(x) {
                    *dp += d_pre * xc;
                }
            }
            for (acc, v) in d_centers.data.iter_mut().zip(&g.d_centers.data) {
                *acc += v;
            }
        }
        let mean = loss_sum / n;
        if !mean.is_finite() {
            return Err(Error::Diverged { step });
        }
        trace.push(mean);
        if last {
            break;
        }
        for (p, g) in model.projection.data.iter_mut().zip(&d_proj.data) {
            *p -= step_size * g / n;
        }
        for (c, g) in model.centers.data.iter_mut().zip(&d_centers.data) {
            *c -= step_size * g / n;
        }
        model.centers.normalize_rows();
    }

    let embeddings = Matrix::from_rows(
        &(0..inputs.rows)
            .map(|i| model.embed(inputs.row(i)))
            .collect::<Vec<_>>(),
    );
    Ok(TrainOutcome {
        model,
        embeddings,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centers(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    #[test]
    fn plain_softmax_two_classes() {
        let w = centers(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let cfg = MarginConfig::new(1.0, 0.0).unwrap();
        let out = margin_loss(&[1.0, 0.0], &w, 0, &cfg).unwrap();
        let e = std::f64::consts::E;
        assert!((out.loss - (-(e / (e + 1.0)).ln())).abs() < 1e-12);
        assert!((out.loss - 0.31326).abs() < 1e-5);
    }

    #[test]
    fn large_scale_near_zero_loss() {
        let w = centers(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let cfg = MarginConfig::default();
        let out = margin_loss(&[1.0, 0.0], &w, 0, &cfg).unwrap();
        // Clamping moves theta off zero by ~4.5e-4 rad.
        assert!((out.logits[0] - 64.0 * 0.5f64.cos()).abs() < 0.02);
        assert!(out.loss >= 0.0 && out.loss < 1e-20);
    }

    #[test]
    fn uniform_posterior_gradient() {
        let w = centers(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let x = [1.0 / 3f64.sqrt(); 3];
        let cfg = MarginConfig::new(2.0, 0.0).unwrap();
        let g = margin_gradient(&x, &w, 1, &cfg).unwrap();
        for r in 0..3 {
            let p = 1.0 / 3.0;
            let want: f64 = (0..3)
                .map(|j| 2.0 * (p - if j == 1 { 1.0 } else { 0.0 }) * w.row(j)[r])
                .sum();
            assert!((g.d_embedding[r] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let w = centers(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let cfg = MarginConfig::default();
        assert!(matches!(
            margin_loss(&[1.0, 0.0], &w, 2, &cfg),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
        assert!(margin_loss(&[2.0, 0.0], &w, 0, &cfg).is_err());
        assert!(MarginConfig::new(0.0, 0.1).is_err());
        assert!(MarginConfig::new(1.0, PI / 2.0).is_err());
    }

    #[test]
    fn shifted_angle_past_pi_is_flat() {
        let w = centers(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let cfg = MarginConfig::new(4.0, 0.5).unwrap();
        let x = [-1.0, 0.0];
        let g = margin_gradient(&x, &w, 0, &cfg).unwrap();
        assert_eq!(g.d_centers.row(0), &[0.0, 0.0]);
        let out = margin_loss(&x, &w, 0, &cfg).unwrap();
        assert_eq!(out.logits[0], -4.0);
    }

    #[test]
    fn zero_steps_returns_inputs() {
        let inputs = centers(&[&[1.0, 0.0], &[0.0, 1.0], &[0.6, 0.8]]);
        let out = toy_train(&inputs, &[0, 1, 1], &MarginConfig::new(8.0, 0.1).unwrap(), 0, 0.1, 1).unwrap();
        assert_eq!(out.embeddings, inputs);
        assert_eq!(out.trace.len(), 1);
    }

    #[test]
    fn training_needs_two_classes() {
        let inputs = centers(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let cfg = MarginConfig::new(8.0, 0.1).unwrap();
        assert!(toy_train(&inputs, &[0, 0], &cfg, 1, 0.1, 1).is_err());
        assert!(toy_train(&inputs, &[0, 1], &cfg, 1, 0.0, 1).is_err());
    }
}

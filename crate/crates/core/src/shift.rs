//! Data-distribution maps `D(theta)`: how a deployed model reshapes the data
//! it will next be evaluated and retrained on.
//!
//! Every map reads the *base* dataset and the deployed model and returns a
//! fresh dataset; the base is never mutated. All randomness flows from the
//! `seed` argument, so a map with a fixed seed is a deterministic function of
//! the deployed model.

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::dataset::{Dataset, PerformativeMask};
use crate::error::{invalid, Error, Result};
use crate::kernel::{KernelKind, KernelModel};
use crate::rng::{derive_seed, rng_from};

/// Anything that can be deployed: scores raw points and, when it has one,
/// exposes an explicit raw-space weight vector.
pub trait DecisionFunction {
    /// Raw feature width this model scores.
    fn raw_width(&self) -> usize;

    /// Decision value at a raw point. `tau` is the augmentation constant of
    /// the dataset the point belongs to; `scratch` is reusable workspace.
    fn score_raw(&self, raw: &[f64], tau: f64, scratch: &mut Vec<f64>) -> f64;

    /// Explicit weights over raw features (bias excluded), if the model is
    /// linear in the raw features.
    fn raw_weights(&self) -> Option<Vec<f64>>;

    fn scores(&self, data: &Dataset) -> Vec<f64> {
        let mut scratch = Vec::new();
        let mut row = vec![0.0; data.n_features()];
        (0..data.n_rows())
            .map(|i| {
                for (dst, src) in row.iter_mut().zip(data.row(i).iter()) {
                    *dst = *src;
                }
                self.score_raw(&row, data.tau(), &mut scratch)
            })
            .collect()
    }
}

impl DecisionFunction for KernelModel {
    fn raw_width(&self) -> usize {
        self.width() - 1
    }

    fn score_raw(&self, raw: &[f64], tau: f64, scratch: &mut Vec<f64>) -> f64 {
        scratch.clear();
        scratch.extend_from_slice(raw);
        scratch.push(tau);
        self.decision_unchecked(scratch)
    }

    fn raw_weights(&self) -> Option<Vec<f64>> {
        if self.spec().kind != KernelKind::Linear {
            return None;
        }
        self.explicit_weights().map(|w| {
            let p = w.len() - 1;
            w.iter().take(p).copied().collect()
        })
    }
}

/// How the label maps turn the logistic score `e^{s}/(1+e^{s})` of a point
/// into a flip probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlipRule {
    /// The logistic score is the probability of flipping. Larger intensity
    /// flips confidently-classified points more often.
    Flip,
    /// The logistic score is the probability of keeping the label, so points
    /// near the decision boundary flip most and larger intensity flips less.
    Retain,
}

impl FlipRule {
    pub fn flip_probability(self, intensity: f64, p_star: f64) -> f64 {
        let p = logistic(intensity * p_star);
        match self {
            FlipRule::Flip => p,
            FlipRule::Retain => 1.0 - p,
        }
    }
}

/// `e^z / (1 + e^z)` without overflow.
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Label intensity of the bankruptcy map as a function of `d`.
pub fn bankruptcy_intensity(d: f64) -> f64 {
    -0.01 * d + 15.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapKind {
    /// `X = X0 - d w` for explicit models; kernel models fall back to the
    /// candidate-sampling simulation.
    FeatureLinear,
    /// Candidate-sampling simulation of the feature shift.
    FeatureSimulated,
    LabelFlip,
    /// Masked feature shift plus one-sided label change of positives.
    Bankruptcy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapSpec {
    pub kind: MapKind,
    /// Sensitivity `d >= 0`.
    pub d: f64,
    /// Label intensity of the bankruptcy map.
    pub b: f64,
    pub n_candidates: usize,
    pub mask: Option<PerformativeMask>,
    pub flip_rule: FlipRule,
}

pub const DEFAULT_CANDIDATES: usize = 100;

impl MapSpec {
    fn base(kind: MapKind, d: f64) -> Self {
        Self {
            kind,
            d,
            b: 0.0,
            n_candidates: DEFAULT_CANDIDATES,
            mask: None,
            flip_rule: FlipRule::Retain,
        }
    }

    pub fn feature_linear(d: f64) -> Self {
        Self::base(MapKind::FeatureLinear, d)
    }

    pub fn feature_simulated(d: f64, n_candidates: usize) -> Self {
        Self {
            n_candidates,
            ..Self::base(MapKind::FeatureSimulated, d)
        }
    }

    pub fn label_flip(d: f64) -> Self {
        Self::base(MapKind::LabelFlip, d)
    }

    pub fn bankruptcy(d: f64, b: f64, mask: PerformativeMask) -> Self {
        Self {
            b,
            mask: Some(mask),
            ..Self::base(MapKind::Bankruptcy, d)
        }
    }

    pub fn with_flip_rule(mut self, rule: FlipRule) -> Self {
        self.flip_rule = rule;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d >= 0.0 && self.d.is_finite()) {
            return Err(invalid(format!("map sensitivity d must be >= 0, got {}", self.d)));
        }
        if !self.b.is_finite() {
            return Err(invalid("bankruptcy intensity b must be finite"));
        }
        if self.n_candidates == 0 {
            return Err(invalid("n_candidates must be at least 1"));
        }
        match (self.kind, &self.mask) {
            (MapKind::Bankruptcy, None) => Err(invalid("bankruptcy map needs a performative mask")),
            (MapKind::Bankruptcy, Some(_)) | (_, None) => Ok(()),
            (_, Some(_)) => Err(invalid("only the bankruptcy map takes a performative mask")),
        }
    }

    /// Draws `D(model)` from `base`.
    pub fn apply(&self, base: &Dataset, model: &dyn DecisionFunction, seed: u64) -> Result<Dataset> {
        self.validate()?;
        match self.kind {
            MapKind::FeatureLinear => match model.raw_weights() {
                Some(w) => apply_feature_linear(base, &w, self.d),
                None => apply_feature_simulated(base, model, self.d, self.n_candidates, seed),
            },
            MapKind::FeatureSimulated => {
                apply_feature_simulated(base, model, self.d, self.n_candidates, seed)
            }
            MapKind::LabelFlip => apply_label_flip(base, model, self.d, self.flip_rule, seed),
            MapKind::Bankruptcy => {
                let mask = self.mask.as_ref().expect("validated");
                apply_bankruptcy(base, model, self, mask, seed)
            }
        }
    }

    /// True when the map leaves every dataset unchanged.
    pub fn is_identity(&self) -> bool {
        matches!(self.kind, MapKind::FeatureLinear | MapKind::FeatureSimulated) && self.d == 0.0
    }
}

fn check_width(base: &Dataset, model: &dyn DecisionFunction) -> Result<()> {
    if base.n_features() != model.raw_width() {
        return Err(invalid(format!(
            "model scores {} raw features, data has {}",
            model.raw_width(),
            base.n_features()
        )));
    }
    Ok(())
}

/// Every row moves to `x0 - d w`; labels untouched.
pub fn apply_feature_linear(base: &Dataset, weights: &[f64], d: f64) -> Result<Dataset> {
    if weights.len() != base.n_features() {
        return Err(invalid(format!(
            "weight width {} does not match feature width {}",
            weights.len(),
            base.n_features()
        )));
    }
    let mut features = base.features().clone();
    for mut row in features.rows_mut() {
        for (v, w) in row.iter_mut().zip(weights) {
            *v -= d * w;
        }
    }
    base.with_features(features)
}

/// A point uniform in the closed ball of radius `d` around `center`, over
/// the coordinates listed in `cols` only. The returned point is guaranteed to
/// satisfy `|point - center| <= d` as computed in floating point.
fn sample_in_ball(
    rng: &mut crate::rng::Rng,
    center: &[f64],
    cols: &[usize],
    d: f64,
    out: &mut [f64],
    dir: &mut [f64],
) {
    let k = cols.len();
    let norm = loop {
        for v in dir.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            break n;
        }
    };
    let u: f64 = rng.random();
    let mut radius = d * u.powf(1.0 / k as f64);
    out.copy_from_slice(center);
    loop {
        for (&c, &v) in cols.iter().zip(dir.iter()) {
            out[c] = center[c] + radius * v / norm;
        }
        let dist = cols
            .iter()
            .map(|&c| (out[c] - center[c]).powi(2))
            .sum::<f64>()
            .sqrt();
        if dist <= d {
            break;
        }
        radius *= 1.0 - 1e-12;
    }
}

/// The candidates row `row` of a simulated shift with `seed` considers, the
/// unmoved row first, over every raw coordinate.
pub fn simulated_candidates(center: &[f64], row: usize, d: f64, n_candidates: usize, seed: u64) -> Vec<Vec<f64>> {
    let cols: Vec<usize> = (0..center.len()).collect();
    let mut rng = rng_from(derive_seed(seed, row as u64));
    let mut dir = vec![0.0; cols.len()];
    let mut out = vec![center.to_vec()];
    for _ in 0..n_candidates {
        let mut cand = vec![0.0; center.len()];
        sample_in_ball(&mut rng, center, &cols, d, &mut cand, &mut dir);
        out.push(cand);
    }
    out
}

/// Strategic feature shift by sampling: each row draws `n_candidates`
/// points uniformly from the ball of radius `d` around itself (restricted to
/// `cols`) and moves to whichever of those points, or itself, has the lowest
/// decision value. Row `i` uses its own generator derived from `(seed, i)`.
fn simulate_shift(
    base: &Dataset,
    model: &dyn DecisionFunction,
    d: f64,
    n_candidates: usize,
    cols: &[usize],
    seed: u64,
) -> Result<Dataset> {
    check_width(base, model)?;
    if !(d >= 0.0 && d.is_finite()) {
        return Err(invalid(format!("d must be >= 0, got {d}")));
    }
    if d == 0.0 {
        return Ok(base.clone());
    }
    let p = base.n_features();
    let tau = base.tau();
    let mut features = Array2::zeros((base.n_rows(), p));
    let mut scratch = Vec::with_capacity(p + 1);
    let mut center = vec![0.0; p];
    let mut best = vec![0.0; p];
    let mut cand = vec![0.0; p];
    let mut dir = vec![0.0; cols.len()];
    for i in 0..base.n_rows() {
        for (dst, src) in center.iter_mut().zip(base.row(i).iter()) {
            *dst = *src;
        }
        let mut rng = rng_from(derive_seed(seed, i as u64));
        best.copy_from_slice(&center);
        let mut best_score = model.score_raw(&center, tau, &mut scratch);
        for _ in 0..n_candidates {
            sample_in_ball(&mut rng, &center, cols, d, &mut cand, &mut dir);
            let s = model.score_raw(&cand, tau, &mut scratch);
            if s < best_score {
                best_score = s;
                best.copy_from_slice(&cand);
            }
        }
        for (dst, src) in features.row_mut(i).iter_mut().zip(&best) {
            *dst = *src;
        }
    }
    base.with_features(features)
}

/// Candidate-sampling feature shift over all raw coordinates.
pub fn apply_feature_simulated(
    base: &Dataset,
    model: &dyn DecisionFunction,
    d: f64,
    n_candidates: usize,
    seed: u64,
) -> Result<Dataset> {
    if n_candidates == 0 {
        return Err(invalid("n_candidates must be at least 1"));
    }
    let cols: Vec<usize> = (0..base.n_features()).collect();
    simulate_shift(base, model, d, n_candidates, &cols, seed)
}

const NORMALIZER_FLOOR: f64 = 1e-12;

/// Relative position `p*` of each row: `f / max(f)` for positives and
/// `f / min(f)` for negatives, extremes taken over the whole dataset.
/// Rows whose class has no correctly classified member get `None`.
fn relative_positions(labels: &[f64], scores: &[f64]) -> Result<Vec<Option<f64>>> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let need_pos = labels.iter().zip(scores).any(|(&y, &f)| y > 0.0 && y * f > 0.0);
    let need_neg = labels.iter().zip(scores).any(|(&y, &f)| y < 0.0 && y * f > 0.0);
    if need_pos && max <= NORMALIZER_FLOOR {
        return Err(Error::Map(format!("degenerate normalizer max(f) = {max}")));
    }
    if need_neg && min >= -NORMALIZER_FLOOR {
        return Err(Error::Map(format!("degenerate normalizer min(f) = {min}")));
    }
    Ok(labels
        .iter()
        .zip(scores)
        .map(|(&y, &f)| {
            if y * f <= 0.0 {
                None
            } else if y > 0.0 {
                Some(f / max)
            } else {
                Some(f / min)
            }
        })
        .collect())
}

/// Flip probability of every row under the label map; zero for rows the
/// model misclassifies (or scores exactly zero).
pub fn label_flip_probabilities(
    base: &Dataset,
    model: &dyn DecisionFunction,
    d: f64,
    rule: FlipRule,
) -> Result<Vec<f64>> {
    check_width(base, model)?;
    let scores = model.scores(base);
    Ok(relative_positions(base.labels(), &scores)?
        .into_iter()
        .map(|p| p.map_or(0.0, |p_star| rule.flip_probability(d, p_star)))
        .collect())
}

/// Label-only map: correctly classified rows flip with their flip
/// probability; misclassified rows keep their label. One uniform draw is
/// consumed per row regardless of class.
pub fn apply_label_flip(
    base: &Dataset,
    model: &dyn DecisionFunction,
    d: f64,
    rule: FlipRule,
    seed: u64,
) -> Result<Dataset> {
    if !(d >= 0.0 && d.is_finite()) {
        return Err(invalid(format!("d must be >= 0, got {d}")));
    }
    let probs = label_flip_probabilities(base, model, d, rule)?;
    let mut rng = rng_from(seed);
    let labels = base
        .labels()
        .iter()
        .zip(&probs)
        .map(|(&y, &p)| {
            let u: f64 = rng.random();
            if u < p {
                -y
            } else {
                y
            }
        })
        .collect();
    base.with_labels(labels)
}

/// Bankruptcy-style map. Performative columns shift (`X_P - d w_P` for
/// explicit models, masked candidate sampling otherwise); then every row
/// labeled `+1` turns `-1` with the flip probability of intensity `b` at
/// `p* = f / max(f)`, with `f` scored on the base features. Rows labeled
/// `-1` never change.
pub fn apply_bankruptcy(
    base: &Dataset,
    model: &dyn DecisionFunction,
    spec: &MapSpec,
    mask: &PerformativeMask,
    seed: u64,
) -> Result<Dataset> {
    check_width(base, model)?;
    if mask.width() != base.n_features() {
        return Err(invalid(format!(
            "mask width {} does not match feature width {}",
            mask.width(),
            base.n_features()
        )));
    }
    if !spec.d.is_finite() || !spec.b.is_finite() {
        return Err(invalid("bankruptcy map parameters must be finite"));
    }

    let shifted = match model.raw_weights() {
        Some(w) => {
            let masked: Vec<f64> = w
                .iter()
                .enumerate()
                .map(|(j, &v)| if mask.is_performative(j) { v } else { 0.0 })
                .collect();
            apply_feature_linear(base, &masked, spec.d)?
        }
        None => simulate_shift(
            base,
            model,
            spec.d,
            spec.n_candidates,
            &mask.performative_columns(),
            derive_seed(seed, u64::MAX),
        )?,
    };

    let scores = model.scores(base);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max <= NORMALIZER_FLOOR {
        return Err(Error::Map(format!("degenerate normalizer max(f) = {max}")));
    }
    let mut rng = rng_from(seed);
    let labels = base
        .labels()
        .iter()
        .zip(&scores)
        .map(|(&y, &f)| {
            let u: f64 = rng.random();
            if y > 0.0 && u < spec.flip_rule.flip_probability(spec.b, f / max) {
                -1.0
            } else {
                y
            }
        })
        .collect();
    shifted.with_labels(labels)
}

//! Logistic-regression baselines: repeated risk minimization (refit to
//! convergence after every deployment) and repeated gradient descent (one
//! gradient step per deployment).

use ndarray::{Array1, ArrayView1};

use crate::dataset::Dataset;
use crate::error::{invalid, Error, Result};
use crate::metrics::consistency_linear;
use crate::rrm::{self, Policy, RrmSettings, RrmTrace, Trained};
use crate::shift::{DecisionFunction, MapSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn zero(width: usize) -> Self {
        Self {
            weights: vec![0.0; width],
            bias: 0.0,
        }
    }

    /// `[w, b]`, the vector whose cosine defines consistency.
    pub fn stacked(&self) -> Vec<f64> {
        let mut v = self.weights.clone();
        v.push(self.bias);
        v
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    fn norm_diff(&self, other: &Self) -> f64 {
        self.stacked()
            .iter()
            .zip(other.stacked())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

impl DecisionFunction for LinearModel {
    fn raw_width(&self) -> usize {
        self.weights.len()
    }

    fn score_raw(&self, raw: &[f64], _tau: f64, _scratch: &mut Vec<f64>) -> f64 {
        self.decision(raw)
    }

    fn raw_weights(&self) -> Option<Vec<f64>> {
        Some(self.weights.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSettings {
    /// Ridge strength on the weights (bias unpenalized).
    pub l2: f64,
    /// First step size tried by [`lr_fit`], which then adapts it by
    /// doubling and halving.
    pub lr: f64,
    pub max_iters: usize,
    /// Gradient-norm stopping threshold.
    pub tol: f64,
}

impl Default for LrSettings {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            lr: 0.1,
            max_iters: 10_000,
            tol: 1e-6,
        }
    }
}

impl LrSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(invalid(format!("l2 must be >= 0, got {}", self.l2)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.tol > 0.0) {
            return Err(invalid("tol must be positive"));
        }
        Ok(())
    }
}

/// `log(1 + e^{-z})` without overflow.
fn log1p_exp_neg(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

fn margins(model: &LinearModel, data: &Dataset) -> Array1<f64> {
    let z = data.features().dot(&ArrayView1::from(&model.weights[..])) + model.bias;
    z * &ArrayView1::from(data.labels())
}

/// Mean log-loss plus `l2/2 |w|^2`.
pub fn lr_loss(model: &LinearModel, data: &Dataset, l2: f64) -> f64 {
    let n = data.n_rows() as f64;
    let total: f64 = margins(model, data).iter().map(|&m| log1p_exp_neg(m)).sum();
    total / n + 0.5 * l2 * model.weights.iter().map(|w| w * w).sum::<f64>()
}

/// Gradient of [`lr_loss`] as `(d/dw, d/db)`.
pub fn lr_gradient(model: &LinearModel, data: &Dataset, l2: f64) -> (Vec<f64>, f64) {
    let n = data.n_rows() as f64;
    // d/dz log(1 + e^{-yz}) = -y * sigma(-yz)
    let s: Array1<f64> = margins(model, data)
        .iter()
        .zip(data.labels())
        .map(|(&m, &y)| -y * crate::shift::logistic(-m) / n)
        .collect();
    let gw = data.features().t().dot(&s);
    let gw = gw.iter().zip(&model.weights).map(|(g, w)| g + l2 * w).collect();
    (gw, s.sum())
}

fn grad_norm(g: &(Vec<f64>, f64)) -> f64 {
    (g.0.iter().map(|v| v * v).sum::<f64>() + g.1 * g.1).sqrt()
}

fn step(model: &LinearModel, g: &(Vec<f64>, f64), lr: f64) -> LinearModel {
    LinearModel {
        weights: model.weights.iter().zip(&g.0).map(|(w, d)| w - lr * d).collect(),
        bias: model.bias - lr * g.1,
    }
}

/// One exact full-batch gradient step.
pub fn lr_gradient_step(model: &LinearModel, data: &Dataset, l2: f64, lr: f64) -> LinearModel {
    step(model, &lr_gradient(model, data, l2), lr)
}

/// Full-batch gradient descent from the zero model.
pub fn lr_fit(data: &Dataset, settings: &LrSettings) -> Result<LinearModel> {
    lr_fit_from(data, settings, LinearModel::zero(data.n_features()))
}

/// Full-batch gradient descent from `init`. Each iteration tries twice the
/// previously accepted step and halves it until the sufficient-decrease
/// condition holds; the first try is `settings.lr`.
pub fn lr_fit_from(data: &Dataset, settings: &LrSettings, init: LinearModel) -> Result<LinearModel> {
    settings.validate()?;
    let (neg, pos) = data.class_counts();
    if neg == 0 || pos == 0 {
        return Err(Error::Fit("logistic regression needs both classes".into()));
    }
    if init.weights.len() != data.n_features() {
        return Err(invalid("initial model width does not match data"));
    }
    let mut model = init;
    let mut loss = lr_loss(&model, data, settings.l2);
    let mut accepted = settings.lr / 2.0;
    for _ in 0..settings.max_iters {
        let g = lr_gradient(&model, data, settings.l2);
        let gn = grad_norm(&g);
        if gn <= settings.tol {
            break;
        }
        let mut lr = 2.0 * accepted;
        loop {
            let next = step(&model, &g, lr);
            let next_loss = lr_loss(&next, data, settings.l2);
            if next_loss <= loss - 0.5 * lr * gn * gn || lr < 1e-12 {
                model = next;
                loss = next_loss;
                accepted = lr;
                break;
            }
            lr *= 0.5;
        }
    }
    if model.stacked().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("logistic regression diverged".into()));
    }
    Ok(model)
}

pub fn lr_gradient_norm(model: &LinearModel, data: &Dataset, l2: f64) -> f64 {
    grad_norm(&lr_gradient(model, data, l2))
}

struct RrmLr {
    settings: LrSettings,
}

impl Policy for RrmLr {
    type Model = LinearModel;

    fn train(&mut self, _t: usize, data: &Dataset, prev: Option<&LinearModel>) -> Result<Trained<LinearModel>> {
        let init = prev.cloned().unwrap_or_else(|| LinearModel::zero(data.n_features()));
        let model = lr_fit_from(data, &self.settings, init)?;
        let residual = lr_gradient_norm(&model, data, self.settings.l2);
        Ok(Trained {
            model,
            c: f64::NAN,
            dual_gap: f64::NAN,
            solver_converged: residual <= self.settings.tol,
        })
    }

    fn model_gap(&self, a: &LinearModel, b: &LinearModel) -> Result<f64> {
        Ok(a.norm_diff(b))
    }

    fn consistency(&self, a: &LinearModel, b: &LinearModel) -> Result<f64> {
        consistency_linear(&a.stacked(), &b.stacked())
    }
}

struct RgdLr {
    settings: LrSettings,
    step_size: f64,
}

impl Policy for RgdLr {
    type Model = LinearModel;

    fn train(&mut self, _t: usize, data: &Dataset, prev: Option<&LinearModel>) -> Result<Trained<LinearModel>> {
        let model = match prev {
            None => lr_fit(data, &self.settings)?,
            Some(m) => lr_gradient_step(m, data, self.settings.l2, self.step_size),
        };
        if model.stacked().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("gradient step diverged".into()));
        }
        Ok(Trained {
            model,
            c: f64::NAN,
            dual_gap: f64::NAN,
            solver_converged: true,
        })
    }

    fn model_gap(&self, a: &LinearModel, b: &LinearModel) -> Result<f64> {
        Ok(a.norm_diff(b))
    }

    fn consistency(&self, a: &LinearModel, b: &LinearModel) -> Result<f64> {
        consistency_linear(&a.stacked(), &b.stacked())
    }
}

/// Repeated risk minimization with logistic regression.
pub fn run_rrm_lr(
    base: &Dataset,
    map: &MapSpec,
    settings: &RrmSettings,
    lr: &LrSettings,
) -> Result<RrmTrace<LinearModel>> {
    lr.validate()?;
    rrm::drive(base, map, settings, RrmLr { settings: *lr })
}

/// Repeated gradient descent with logistic regression: the first model is
/// fitted on the base data, every later deployment takes one gradient step
/// of size `step_size` on the previously induced data.
pub fn run_rgd_lr(
    base: &Dataset,
    map: &MapSpec,
    settings: &RrmSettings,
    lr: &LrSettings,
    step_size: f64,
) -> Result<RrmTrace<LinearModel>> {
    lr.validate()?;
    if !(step_size > 0.0 && step_size.is_finite()) {
        return Err(invalid(format!("step size must be positive, got {step_size}")));
    }
    rrm::drive(
        base,
        map,
        settings,
        RgdLr {
            settings: *lr,
            step_size,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn separable_pair_is_fit() {
        let d = Dataset::new(array![[1.0], [-1.0]], vec![1.0, -1.0]).unwrap();
        let m = lr_fit(&d, &LrSettings::default()).unwrap();
        assert_eq!(crate::metrics::accuracy(&m, &d).unwrap(), 1.0);
    }

    #[test]
    fn huge_ridge_kills_weights() {
        let d = crate::dataset::gen_linear_synthetic(20, 5, 3, 1.0, 1).unwrap();
        let s = LrSettings {
            l2: 1e6,
            ..Default::default()
        };
        let m = lr_fit(&d, &s).unwrap();
        let norm = m.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        assert!(norm <= 1e-3, "{norm}");
    }

    #[test]
    fn single_class_is_rejected() {
        let d = Dataset::new(array![[1.0], [2.0]], vec![1.0, 1.0]).unwrap();
        assert!(matches!(lr_fit(&d, &LrSettings::default()), Err(Error::Fit(_))));
    }

    #[test]
    fn symmetric_pair_keeps_bias() {
        let d = Dataset::new(array![[0.7, -0.2], [-0.7, 0.2]], vec![1.0, -1.0]).unwrap();
        let m = lr_gradient_step(&LinearModel::zero(2), &d, 1e-3, 0.1);
        assert_eq!(m.bias, 0.0);
        assert!(m.weights[0] > 0.0);
    }
}

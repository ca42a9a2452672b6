//! Exact minimizer of the regularized hinge objective
//!
//! ```text
//! 1/2 |theta|^2 + (C/n) sum_i max(0, 1 - y_i theta . phi(x_i))
//! ```
//!
//! over augmented points. The bias lives inside `theta` (the constant `tau`
//! column), so the dual has no equality constraint:
//!
//! ```text
//! max  sum_i a_i - 1/2 sum_ij a_i a_j y_i y_j K(x_i, x_j)   s.t. 0 <= a_i <= C/n
//! ```
//!
//! and each coordinate can be maximized in closed form. The solver cycles
//! over coordinates in a seeded random order until the largest projected
//! gradient is below `tol` and the duality gap is below
//! `tol * max(1, |primal|)`.

use ndarray::Array2;
use rand::seq::SliceRandom;

use crate::dataset::Dataset;
use crate::error::{invalid, Error, Result};
use crate::kernel::{gram, gram_symmetric, model_dot, predict, KernelModel, KernelSpec};
use crate::rng::rng_from;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveSettings {
    /// Balancing parameter `C`.
    pub c: f64,
    pub tol: f64,
    pub max_passes: usize,
    pub shrink: bool,
}

impl Default for SolveSettings {
    fn default() -> Self {
        Self {
            c: 1.0,
            tol: 1e-6,
            max_passes: 2000,
            shrink: true,
        }
    }
}

impl SolveSettings {
    pub fn with_c(mut self, c: f64) -> Self {
        self.c = c;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(invalid(format!("C must be positive and finite, got {}", self.c)));
        }
        if !(self.tol > 0.0) {
            return Err(invalid(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_passes == 0 {
            return Err(invalid("max_passes must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub model: KernelModel,
    /// Dual variables, one per training row, each in `[0, C/n]`.
    pub alpha: Vec<f64>,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    /// Largest projected-gradient magnitude at return.
    pub kkt_violation: f64,
    pub passes: usize,
    pub n_support: usize,
    pub converged: bool,
}

/// Cold-start solve.
pub fn solve(data: &Dataset, spec: &KernelSpec, settings: &SolveSettings, seed: u64) -> Result<SolveReport> {
    solve_warm(data, spec, settings, seed, None)
}

/// Solve starting from `warm` dual variables (clipped into the box). The
/// warm vector is indexed by row, so it must come from a dataset with the
/// same row count.
pub fn solve_warm(
    data: &Dataset,
    spec: &KernelSpec,
    settings: &SolveSettings,
    seed: u64,
    warm: Option<&[f64]>,
) -> Result<SolveReport> {
    settings.validate()?;
    spec.validate()?;
    let x = data.augment();
    let y = data.labels();
    let n = data.n_rows();
    let upper = settings.c / n as f64;

    let k = gram_symmetric(spec, x.view());
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("kernel matrix has non-finite entries".into()));
    }

    let mut alpha = match warm {
        Some(w) if w.len() == n => w.iter().map(|a| a.clamp(0.0, upper)).collect(),
        Some(w) => {
            return Err(invalid(format!(
                "warm start has {} entries for {n} rows",
                w.len()
            )))
        }
        None => vec![0.0; n],
    };
    // margins[i] = y_i f(x_i) = (Q alpha)_i
    let mut margins = margins_from_scratch(&k, y, &alpha);

    let mut rng = rng_from(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut active_len = n;
    let mut inner_tol = settings.tol;
    let mut shrink_bound = f64::INFINITY;
    let mut passes = 0;
    let mut converged = false;

    if warm.is_some() {
        let (primal, dual) = objectives(&alpha, &margins, upper);
        converged = max_projected_gradient(&alpha, &margins, upper) <= settings.tol
            && primal - dual <= settings.tol * primal.abs().max(1.0);
    }

    while !converged && passes < settings.max_passes {
        passes += 1;
        order[..active_len].shuffle(&mut rng);
        let mut max_viol: f64 = 0.0;
        let mut s = 0;
        while s < active_len {
            let i = order[s];
            let g = 1.0 - margins[i];
            let pg = if alpha[i] <= 0.0 {
                if settings.shrink && g < -shrink_bound {
                    active_len -= 1;
                    order.swap(s, active_len);
                    continue;
                }
                g.max(0.0)
            } else if alpha[i] >= upper {
                if settings.shrink && g > shrink_bound {
                    active_len -= 1;
                    order.swap(s, active_len);
                    continue;
                }
                g.min(0.0)
            } else {
                g
            };
            max_viol = max_viol.max(pg.abs());
            if pg != 0.0 {
                let qii = k[[i, i]];
                let next = if qii > 0.0 {
                    (alpha[i] + g / qii).clamp(0.0, upper)
                } else if g > 0.0 {
                    upper
                } else {
                    0.0
                };
                let delta = next - alpha[i];
                if delta != 0.0 {
                    alpha[i] = next;
                    let row = k.row(i);
                    let scale = delta * y[i];
                    for (j, m) in margins.iter_mut().enumerate() {
                        *m += scale * y[j] * row[j];
                    }
                }
            }
            s += 1;
        }
        shrink_bound = if max_viol > 0.0 { max_viol } else { f64::INFINITY };

        if max_viol <= inner_tol {
            if active_len < n {
                // Recheck everything before declaring victory.
                active_len = n;
                shrink_bound = f64::INFINITY;
                continue;
            }
            margins = margins_from_scratch(&k, y, &alpha);
            let (primal, dual) = objectives(&alpha, &margins, upper);
            let full_viol = max_projected_gradient(&alpha, &margins, upper);
            if full_viol <= settings.tol && primal - dual <= settings.tol * primal.abs().max(1.0) {
                converged = true;
                break;
            }
            inner_tol = (inner_tol * 0.1).max(1e-15);
        }
    }

    margins = margins_from_scratch(&k, y, &alpha);
    let (primal, dual) = objectives(&alpha, &margins, upper);
    let kkt_violation = max_projected_gradient(&alpha, &margins, upper);

    let support_rows: Vec<usize> = (0..n).filter(|&i| alpha[i] > 0.0).collect();
    let support = x.select(ndarray::Axis(0), &support_rows);
    let coeffs = support_rows.iter().map(|&i| alpha[i] * y[i]).collect();
    let model = KernelModel::new(support, coeffs, *spec)?;

    Ok(SolveReport {
        model,
        n_support: support_rows.len(),
        alpha,
        primal,
        dual,
        gap: primal - dual,
        kkt_violation,
        passes,
        converged,
    })
}

fn margins_from_scratch(k: &Array2<f64>, y: &[f64], alpha: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut margins = vec![0.0; n];
    for (i, m) in margins.iter_mut().enumerate() {
        let row = k.row(i);
        let mut acc = 0.0;
        for j in 0..n {
            if alpha[j] != 0.0 {
                acc += alpha[j] * y[j] * row[j];
            }
        }
        *m = y[i] * acc;
    }
    margins
}

/// `(primal, dual)` from dual variables and their margins.
fn objectives(alpha: &[f64], margins: &[f64], upper: f64) -> (f64, f64) {
    let quad: f64 = alpha.iter().zip(margins).map(|(a, m)| a * m).sum();
    let hinge: f64 = margins.iter().map(|m| (1.0 - m).max(0.0)).sum();
    let lin: f64 = alpha.iter().sum();
    (0.5 * quad + upper * hinge, lin - 0.5 * quad)
}

fn max_projected_gradient(alpha: &[f64], margins: &[f64], upper: f64) -> f64 {
    alpha
        .iter()
        .zip(margins)
        .map(|(&a, &m)| {
            let g = 1.0 - m;
            if a <= 0.0 {
                g.max(0.0)
            } else if a >= upper {
                (-g).max(0.0)
            } else {
                g.abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Dual objective `sum a - 1/2 a^T Q a` for arbitrary `alpha`.
pub fn dual_objective(data: &Dataset, spec: &KernelSpec, alpha: &[f64]) -> Result<f64> {
    if alpha.len() != data.n_rows() {
        return Err(invalid("alpha length does not match dataset"));
    }
    let k = gram_symmetric(spec, data.augment().view());
    let margins = margins_from_scratch(&k, data.labels(), alpha);
    let quad: f64 = alpha.iter().zip(&margins).map(|(a, m)| a * m).sum();
    Ok(alpha.iter().sum::<f64>() - 0.5 * quad)
}

fn check_width(data: &Dataset, model: &KernelModel) -> Result<()> {
    if model.width() != data.n_features() + 1 {
        return Err(invalid(format!(
            "model width {} does not match augmented data width {}",
            model.width(),
            data.n_features() + 1
        )));
    }
    Ok(())
}

/// `1/2 |theta|^2 + (C/n) sum_i max(0, 1 - y_i f(x_i))`.
pub fn primal_objective(data: &Dataset, model: &KernelModel, c: f64) -> Result<f64> {
    check_width(data, model)?;
    let f = predict(model, data.augment().view())?;
    let hinge: f64 = f
        .iter()
        .zip(data.labels())
        .map(|(fi, yi)| (1.0 - yi * fi).max(0.0))
        .sum();
    Ok(0.5 * model_dot(model, model)? + c / data.n_rows() as f64 * hinge)
}

/// Norm of the margin-violator subgradient
/// `theta - (C/n) sum_{y_i f(x_i) < 1} y_i phi(x_i)`.
///
/// Points exactly on the margin are not violators.
pub fn subgradient_norm(data: &Dataset, model: &KernelModel, c: f64) -> Result<f64> {
    check_width(data, model)?;
    let x = data.augment();
    let y = data.labels();
    let f = predict(model, x.view())?;
    let viol: Vec<usize> = (0..data.n_rows()).filter(|&i| y[i] * f[i] < 1.0).collect();
    let w = c / data.n_rows() as f64;
    let theta_sq = model_dot(model, model)?;
    let cross: f64 = viol.iter().map(|&i| y[i] * f[i]).sum();
    let xv = x.select(ndarray::Axis(0), &viol);
    let kv = gram(model.spec(), xv.view(), xv.view())?;
    let mut quad = 0.0;
    for (a, &i) in viol.iter().enumerate() {
        for (b, &j) in viol.iter().enumerate() {
            quad += y[i] * y[j] * kv[[a, b]];
        }
    }
    Ok((theta_sq - 2.0 * w * cross + w * w * quad).max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn two_point() -> Dataset {
        Dataset::new(array![[1.0], [-1.0]], vec![1.0, -1.0]).unwrap()
    }

    #[test]
    fn two_point_analytic() {
        let d = two_point();
        let r = solve(&d, &KernelSpec::linear(), &SolveSettings::default().with_c(4.0), 0).unwrap();
        assert_eq!(r.alpha, vec![0.5, 0.5]);
        let w = r.model.explicit_weights().unwrap();
        assert!((w[0] - 1.0).abs() < 1e-12 && w[1].abs() < 1e-12);
        assert!((r.primal - 0.5).abs() < 1e-12);
        assert!((primal_objective(&d, &r.model, 4.0).unwrap() - 0.5).abs() < 1e-12);
        assert!(r.converged);
    }

    #[test]
    fn tiny_c_gives_near_zero_model() {
        let d = crate::dataset::gen_circles(10, 0.1, 2).unwrap();
        let c = 1e-9;
        let r = solve(&d, &KernelSpec::rbf(0.5).unwrap(), &SolveSettings::default().with_c(c), 0).unwrap();
        assert!(crate::kernel::model_norm(&r.model) <= 1e-6);
        assert!((r.primal - c).abs() <= 1e-12);
    }

    #[test]
    fn zero_model_objective_is_c() {
        let d = two_point();
        let z = KernelModel::zero(2, KernelSpec::linear());
        assert_eq!(primal_objective(&d, &z, 3.0).unwrap(), 3.0);
    }

    #[test]
    fn single_violator_subgradient() {
        let d = Dataset::new(array![[0.5, 2.0]], vec![-1.0]).unwrap();
        let spec = KernelSpec::linear();
        let z = KernelModel::zero(3, spec);
        let c = 2.5;
        let kxx: f64 = 0.25 + 4.0 + 1.0;
        let got = subgradient_norm(&d, &z, c).unwrap();
        assert!((got - c * kxx.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn margin_points_are_not_violators() {
        // At the analytic optimum both points sit exactly on the margin, so
        // the violator sum is empty and the subgradient is theta itself.
        let d = two_point();
        let r = solve(&d, &KernelSpec::linear(), &SolveSettings::default().with_c(4.0), 0).unwrap();
        let g = subgradient_norm(&d, &r.model, 4.0).unwrap();
        assert!((g - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_at_bound_optimum_has_zero_subgradient() {
        // Small C puts every dual variable at C/n with every point violating
        // the margin, so theta equals the violator sum exactly.
        let d = crate::dataset::gen_circles(8, 0.2, 4).unwrap();
        let spec = KernelSpec::rbf(0.5).unwrap();
        let c = 1e-3;
        let r = solve(&d, &spec, &SolveSettings::default().with_c(c), 1).unwrap();
        assert!(r.alpha.iter().all(|&a| a == c / d.n_rows() as f64));
        assert!(subgradient_norm(&d, &r.model, c).unwrap() < 1e-12);
    }

    #[test]
    fn rejects_bad_settings() {
        let d = two_point();
        let bad = SolveSettings { c: 0.0, ..Default::default() };
        assert!(solve(&d, &KernelSpec::linear(), &bad, 0).is_err());
        let bad = SolveSettings { max_passes: 0, ..Default::default() };
        assert!(solve(&d, &KernelSpec::linear(), &bad, 0).is_err());
    }
}

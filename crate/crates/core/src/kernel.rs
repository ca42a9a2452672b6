//! Kernels, Gram matrices and algebra over implicitly represented models
//! `theta = sum_i beta_i phi(x_i)`.
//!
//! Two models may be anchored on different support sets; inner products
//! between them go through the cross Gram matrix, so nothing here ever needs
//! the feature map explicitly.

use std::collections::hash_map::{Entry, HashMap};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Linear,
    Rbf,
}

/// Kernel choice. For RBF, `squared_exponent = false` gives
/// `exp(-|x - x'| / (2 sigma^2))` and `true` the usual Gaussian
/// `exp(-|x - x'|^2 / (2 sigma^2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub sigma: f64,
    pub squared_exponent: bool,
}

impl KernelSpec {
    pub const fn linear() -> Self {
        Self {
            kind: KernelKind::Linear,
            sigma: 1.0,
            squared_exponent: false,
        }
    }

    pub fn rbf(sigma: f64) -> Result<Self> {
        let spec = Self {
            kind: KernelKind::Rbf,
            sigma,
            squared_exponent: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_squared_exponent(mut self, squared: bool) -> Self {
        self.squared_exponent = squared;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == KernelKind::Rbf && !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(invalid(format!("RBF bandwidth must be positive, got {}", self.sigma)));
        }
        Ok(())
    }

    /// Kernel value on two equal-length slices; no width check.
    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], z: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Linear => x.iter().zip(z).map(|(a, b)| a * b).sum(),
            KernelKind::Rbf => {
                let sq: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
                let dist = if self.squared_exponent { sq } else { sq.sqrt() };
                (dist * (-1.0 / (2.0 * self.sigma * self.sigma))).exp()
            }
        }
    }
}

/// `K(x, x')`.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], z: &[f64]) -> Result<f64> {
    if x.len() != z.len() {
        return Err(invalid(format!("point widths differ: {} vs {}", x.len(), z.len())));
    }
    Ok(spec.eval_unchecked(x, z))
}

fn contiguous_rows(m: &ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// `G[i, j] = K(a_i, b_j)`.
pub fn gram(spec: &KernelSpec, a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if a.ncols() != b.ncols() {
        return Err(invalid(format!("point widths differ: {} vs {}", a.ncols(), b.ncols())));
    }
    let (ra, rb) = (contiguous_rows(&a), contiguous_rows(&b));
    let mut out = Array2::zeros((ra.len(), rb.len()));
    for (i, x) in ra.iter().enumerate() {
        for (j, z) in rb.iter().enumerate() {
            out[[i, j]] = spec.eval_unchecked(x, z);
        }
    }
    Ok(out)
}

/// Symmetric Gram of a single point set; evaluates each pair once.
pub fn gram_symmetric(spec: &KernelSpec, a: ArrayView2<'_, f64>) -> Array2<f64> {
    let rows = contiguous_rows(&a);
    let n = rows.len();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let v = spec.eval_unchecked(&rows[i], &rows[j]);
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    out
}

/// `theta = sum_j coeffs[j] * phi(support_j)` over augmented support points.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelModel {
    support: Array2<f64>,
    coeffs: Vec<f64>,
    spec: KernelSpec,
}

impl KernelModel {
    pub fn new(support: Array2<f64>, coeffs: Vec<f64>, spec: KernelSpec) -> Result<Self> {
        spec.validate()?;
        if support.nrows() != coeffs.len() {
            return Err(invalid(format!(
                "{} support rows but {} coefficients",
                support.nrows(),
                coeffs.len()
            )));
        }
        if coeffs.iter().chain(support.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("model contains non-finite values".into()));
        }
        Ok(Self {
            support: support.as_standard_layout().into_owned(),
            coeffs,
            spec,
        })
    }

    /// The zero model on points of the given (augmented) width.
    pub fn zero(width: usize, spec: KernelSpec) -> Self {
        Self {
            support: Array2::zeros((0, width)),
            coeffs: Vec::new(),
            spec,
        }
    }

    pub fn support(&self) -> &Array2<f64> {
        &self.support
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    /// Augmented width of the points this model accepts.
    pub fn width(&self) -> usize {
        self.support.ncols()
    }

    pub fn n_support(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    /// Same support, coefficients multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            support: self.support.clone(),
            coeffs: self.coeffs.iter().map(|b| b * c).collect(),
            spec: self.spec,
        }
    }

    /// Decision value at one augmented point; no width check.
    #[inline]
    pub(crate) fn decision_unchecked(&self, x: &[f64]) -> f64 {
        let w = self.width();
        if w == 0 {
            return 0.0;
        }
        let flat = self
            .support
            .as_slice()
            .expect("support is kept in standard layout");
        let rows = flat.chunks_exact(w).zip(&self.coeffs);
        match self.spec.kind {
            KernelKind::Linear => rows
                .map(|(s, &beta)| beta * s.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
                .sum(),
            KernelKind::Rbf => {
                let scale = -1.0 / (2.0 * self.spec.sigma * self.spec.sigma);
                let sq_dist = |s: &[f64]| s.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                if self.spec.squared_exponent {
                    rows.map(|(s, &beta)| beta * (sq_dist(s) * scale).exp()).sum()
                } else {
                    rows.map(|(s, &beta)| beta * (sq_dist(s).sqrt() * scale).exp()).sum()
                }
            }
        }
    }

    /// Decision value at one augmented point.
    pub fn decision(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        if x.len() != self.width() {
            return Err(invalid(format!(
                "point width {} does not match model width {}",
                x.len(),
                self.width()
            )));
        }
        Ok(self.decision_unchecked(&x.to_vec()))
    }

    /// Explicit weight vector `sum_j beta_j x_j` (augmented width). Only
    /// meaningful for the linear kernel.
    pub fn explicit_weights(&self) -> Option<Array1<f64>> {
        (self.spec.kind == KernelKind::Linear).then(|| {
            let beta = ArrayView1::from(&self.coeffs[..]);
            self.support.t().dot(&beta)
        })
    }
}

/// `f_i = sum_j beta_j K(support_j, x_i)` for each row of `x`.
pub fn predict(model: &KernelModel, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    if x.ncols() != model.width() {
        return Err(invalid(format!(
            "point width {} does not match model width {}",
            x.ncols(),
            model.width()
        )));
    }
    if model.n_support() == 0 {
        return Ok(vec![0.0; x.nrows()]);
    }
    let mut buf = vec![0.0; x.ncols()];
    Ok(x.rows()
        .into_iter()
        .map(|row| {
            for (b, v) in buf.iter_mut().zip(row.iter()) {
                *b = *v;
            }
            model.decision_unchecked(&buf)
        })
        .collect())
}

fn check_compatible(m1: &KernelModel, m2: &KernelModel) -> Result<()> {
    if m1.spec != m2.spec {
        return Err(invalid("models use different kernels"));
    }
    if m1.width() != m2.width() {
        return Err(invalid(format!(
            "model widths differ: {} vs {}",
            m1.width(),
            m2.width()
        )));
    }
    Ok(())
}

/// `<theta_1, theta_2> = beta_1^T K(S_1, S_2) beta_2`.
pub fn model_dot(m1: &KernelModel, m2: &KernelModel) -> Result<f64> {
    check_compatible(m1, m2)?;
    if m1.n_support() == 0 || m2.n_support() == 0 {
        return Ok(0.0);
    }
    let w = m1.width();
    let s1 = m1.support.as_slice().expect("standard layout");
    let s2 = m2.support.as_slice().expect("standard layout");
    let mut total = 0.0;
    for (i, &b1) in m1.coeffs.iter().enumerate() {
        let xi = &s1[i * w..(i + 1) * w];
        let mut row = 0.0;
        for (j, &b2) in m2.coeffs.iter().enumerate() {
            row += b2 * m1.spec.eval_unchecked(xi, &s2[j * w..(j + 1) * w]);
        }
        total += b1 * row;
    }
    Ok(total)
}

/// `|theta|` via the kernel.
pub fn model_norm(m: &KernelModel) -> f64 {
    model_dot(m, m).map(|v| v.max(0.0).sqrt()).unwrap_or(0.0)
}

/// `|theta_1 - theta_2|`, with the squared value clamped at zero.
///
/// Support rows shared bit-for-bit by both models are merged, coefficients
/// subtracted, before the quadratic form is evaluated.
pub fn model_diff_norm(m1: &KernelModel, m2: &KernelModel) -> Result<f64> {
    check_compatible(m1, m2)?;
    let w = m1.width();
    let key = |row: &[f64]| row.iter().map(|v| v.to_bits()).collect::<Vec<u64>>();
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut rows: Vec<&[f64]> = Vec::new();
    let mut coeffs: Vec<f64> = Vec::new();
    for (model, sign) in [(m1, 1.0), (m2, -1.0)] {
        if w == 0 {
            break;
        }
        let flat = model.support.as_slice().expect("standard layout");
        for (row, &beta) in flat.chunks_exact(w).zip(&model.coeffs) {
            match index.entry(key(row)) {
                Entry::Occupied(e) => coeffs[*e.get()] += sign * beta,
                Entry::Vacant(e) => {
                    e.insert(rows.len());
                    rows.push(row);
                    coeffs.push(sign * beta);
                }
            }
        }
    }
    let mut sq = 0.0;
    for (i, &bi) in coeffs.iter().enumerate() {
        if bi == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for (j, &bj) in coeffs.iter().enumerate() {
            if bj != 0.0 {
                row += bj * m1.spec.eval_unchecked(rows[i], rows[j]);
            }
        }
        sq += bi * row;
    }
    Ok(sq.max(0.0).sqrt())
}

/// Cosine similarity of two models, clamped to `[-1, 1]`.
pub fn model_cosine(m1: &KernelModel, m2: &KernelModel) -> Result<f64> {
    let dot = model_dot(m1, m2)?;
    let n1 = model_dot(m1, m1)?.max(0.0).sqrt();
    let n2 = model_dot(m2, m2)?.max(0.0).sqrt();
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::UndefinedConsistency);
    }
    Ok((dot / (n1 * n2)).clamp(-1.0, 1.0))
}

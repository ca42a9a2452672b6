//! Labeled point sets, the synthetic generators, CSV ingestion and class
//! rebalancing.
//!
//! A [`Dataset`] always stores its *raw* features. The bias-absorbing view
//! used by the solver is produced on demand by [`Dataset::augment`], which
//! appends a constant column equal to `tau`.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::Path;

use ndarray::{s, Array2, ArrayView1, Axis};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::rng::rng_from;

/// Default augmentation constant.
pub const DEFAULT_TAU: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<f64>,
    tau: f64,
    meta: Option<String>,
}

impl Dataset {
    /// Builds a dataset with `tau = 1`.
    ///
    /// Labels must be exactly `-1.0` or `+1.0`, there must be at least one
    /// row, and every feature must be finite.
    pub fn new(features: Array2<f64>, labels: Vec<f64>) -> Result<Self> {
        Self::validate(&features, &labels)?;
        Ok(Self {
            features,
            labels,
            tau: DEFAULT_TAU,
            meta: None,
        })
    }

    fn validate(features: &Array2<f64>, labels: &[f64]) -> Result<()> {
        if features.nrows() == 0 {
            return Err(invalid("dataset must have at least one row"));
        }
        if features.nrows() != labels.len() {
            return Err(invalid(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&y| y != 1.0 && y != -1.0) {
            return Err(invalid(format!("label {} at row {i} is not +1/-1", labels[i])));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(invalid("feature matrix contains non-finite entries"));
        }
        Ok(())
    }

    pub fn with_tau(mut self, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(invalid(format!("tau must be positive and finite, got {tau}")));
        }
        self.tau = tau;
        Ok(self)
    }

    pub fn with_meta(mut self, meta: impl Into<String>) -> Self {
        self.meta = Some(meta.into());
        self
    }

    /// Same labels, tau and meta; new feature matrix of identical shape.
    pub fn with_features(&self, features: Array2<f64>) -> Result<Self> {
        if features.dim() != self.features.dim() {
            return Err(invalid(format!(
                "feature shape {:?} does not match dataset shape {:?}",
                features.dim(),
                self.features.dim()
            )));
        }
        Self::validate(&features, &self.labels)?;
        Ok(Self {
            features,
            labels: self.labels.clone(),
            tau: self.tau,
            meta: self.meta.clone(),
        })
    }

    /// Same features, tau and meta; new label vector.
    pub fn with_labels(&self, labels: Vec<f64>) -> Result<Self> {
        Self::validate(&self.features, &labels)?;
        Ok(Self {
            features: self.features.clone(),
            labels,
            tau: self.tau,
            meta: self.meta.clone(),
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn meta(&self) -> Option<&str> {
        self.meta.as_deref()
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    /// Raw (un-augmented) feature width.
    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    /// `(negatives, positives)`.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&y| y > 0.0).count();
        (self.labels.len() - pos, pos)
    }

    /// The `n x (p+1)` matrix whose last column is the constant `tau`.
    pub fn augment(&self) -> Array2<f64> {
        let (n, p) = self.features.dim();
        let mut out = Array2::from_elem((n, p + 1), self.tau);
        out.slice_mut(s![.., ..p]).assign(&self.features);
        out
    }

    /// Row subset in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(invalid("row selection is empty"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.n_rows()) {
            return Err(invalid(format!("row index {bad} out of range")));
        }
        Ok(Self {
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            tau: self.tau,
            meta: self.meta.clone(),
        })
    }

    /// Per-column z-score standardization. Constant columns are centered only.
    pub fn standardized(&self) -> Self {
        let mut features = self.features.clone();
        let n = features.nrows() as f64;
        for mut col in features.columns_mut() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            let scale = if sd > 0.0 { 1.0 / sd } else { 1.0 };
            col.mapv_inplace(|v| (v - mean) * scale);
        }
        Self {
            features,
            labels: self.labels.clone(),
            tau: self.tau,
            meta: self.meta.clone(),
        }
    }
}

/// Marks which raw features a strategic agent may modify.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerformativeMask {
    performative: Vec<bool>,
}

impl PerformativeMask {
    pub fn new(performative: Vec<bool>) -> Result<Self> {
        if !performative.iter().any(|&b| b) {
            return Err(invalid("performative mask has no modifiable feature"));
        }
        Ok(Self { performative })
    }

    pub fn all(width: usize) -> Result<Self> {
        Self::new(vec![true; width])
    }

    /// Marks the given column indices as performative.
    pub fn from_indices(width: usize, indices: &[usize]) -> Result<Self> {
        let mut performative = vec![false; width];
        for &i in indices {
            if i >= width {
                return Err(invalid(format!("mask index {i} exceeds width {width}")));
            }
            performative[i] = true;
        }
        Self::new(performative)
    }

    pub fn width(&self) -> usize {
        self.performative.len()
    }

    pub fn is_performative(&self, col: usize) -> bool {
        self.performative[col]
    }

    pub fn performative_columns(&self) -> Vec<usize> {
        self.performative
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }
}

/// Two Gaussian clusters with unit covariance. Class `-1` is centered at
/// `-class_sep / sqrt(n_informative)` on each informative coordinate and class
/// `+1` at the mirror image; the remaining `dim - n_informative` coordinates
/// are standard normal noise. Rows are ordered class `-1` first.
pub fn gen_linear_synthetic(
    n_per_class: usize,
    dim: usize,
    n_informative: usize,
    class_sep: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(invalid("n_per_class must be at least 1"));
    }
    if n_informative == 0 || n_informative > dim {
        return Err(invalid(format!(
            "need 0 < n_informative <= dim, got n_informative={n_informative}, dim={dim}"
        )));
    }
    if !class_sep.is_finite() {
        return Err(invalid("class_sep must be finite"));
    }
    let mut rng = rng_from(seed);
    let n = 2 * n_per_class;
    let shift = class_sep / (n_informative as f64).sqrt();
    let mut features = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = if i < n_per_class { -1.0 } else { 1.0 };
        labels.push(y);
        for j in 0..dim {
            let z: f64 = rng.sample(StandardNormal);
            features[[i, j]] = if j < n_informative { z + y * shift } else { z };
        }
    }
    Ok(Dataset::new(features, labels)?.with_meta("linear"))
}

/// Two concentric circles: outer radius 1 labeled `-1`, inner radius 0.5
/// labeled `+1`, angles evenly spaced, i.i.d. Gaussian noise of std
/// `noise_std` added to both coordinates.
pub fn gen_circles(n_per_class: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(invalid("n_per_class must be at least 1"));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(invalid(format!("noise_std must be >= 0, got {noise_std}")));
    }
    const OUTER: f64 = 1.0;
    const INNER: f64 = 0.5;
    let mut rng = rng_from(seed);
    let n = 2 * n_per_class;
    let mut features = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let (radius, y, k) = if i < n_per_class {
            (OUTER, -1.0, i)
        } else {
            (INNER, 1.0, i - n_per_class)
        };
        let angle = 2.0 * PI * k as f64 / n_per_class as f64;
        let (sin, cos) = angle.sin_cos();
        let (mut x0, mut x1) = (radius * cos, radius * sin);
        if noise_std > 0.0 {
            x0 += noise_std * rng.sample::<f64, _>(StandardNormal);
            x1 += noise_std * rng.sample::<f64, _>(StandardNormal);
        }
        features[[i, 0]] = x0;
        features[[i, 1]] = x1;
        labels.push(y);
    }
    Ok(Dataset::new(features, labels)?.with_meta("circles"))
}

/// Column selection for [`load_csv`].
#[derive(Debug, Clone, PartialEq)]
pub struct CsvColumns {
    pub label_column: String,
    /// Cell value (after trimming) that maps to `+1`.
    pub positive_label: String,
    /// When set, the only other accepted label value (maps to `-1`). When
    /// `None`, every other non-blank value maps to `-1`.
    pub negative_label: Option<String>,
    /// Feature columns in order; empty means every column except the label.
    pub feature_columns: Vec<String>,
}

/// Reads a headered CSV into a raw (unstandardized) dataset.
pub fn load_csv(path: impl AsRef<Path>, columns: &CsvColumns) -> Result<Dataset> {
    let path = path.as_ref();
    let csv_err = |message: String| Error::Csv {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(e.to_string()))?;
    let headers = reader.headers().map_err(|e| csv_err(e.to_string()))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| csv_err(format!("missing column `{name}`")))
    };
    let label_idx = find(&columns.label_column)?;
    let feature_names: Vec<String> = if columns.feature_columns.is_empty() {
        headers
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != label_idx)
            .map(|(_, h)| h.to_string())
            .collect()
    } else {
        columns.feature_columns.clone()
    };
    if feature_names.is_empty() {
        return Err(csv_err("no feature columns".into()));
    }
    let feature_idx = feature_names
        .iter()
        .map(|name| find(name))
        .collect::<Result<Vec<_>>>()?;

    let ingest = |row: usize, column: &str, message: String| Error::Ingestion {
        path: path.to_path_buf(),
        row,
        column: column.to_string(),
        message,
    };
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| csv_err(format!("row {row}: {e}")))?;
        let raw_label = record.get(label_idx).unwrap_or("");
        let label = if raw_label == columns.positive_label {
            1.0
        } else if raw_label.is_empty() {
            return Err(ingest(row, &columns.label_column, "blank label".into()));
        } else {
            match &columns.negative_label {
                Some(neg) if raw_label != neg => {
                    return Err(ingest(
                        row,
                        &columns.label_column,
                        format!("unknown label value `{raw_label}`"),
                    ))
                }
                _ => -1.0,
            }
        };
        labels.push(label);
        for (&idx, name) in feature_idx.iter().zip(&feature_names) {
            let cell = record.get(idx).unwrap_or("");
            if cell.is_empty() {
                return Err(ingest(row, name, "blank cell".into()));
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| ingest(row, name, format!("non-numeric cell `{cell}`")))?;
            if !v.is_finite() {
                return Err(ingest(row, name, format!("non-finite cell `{cell}`")));
            }
            values.push(v);
        }
    }
    if labels.is_empty() {
        return Err(csv_err("no data rows".into()));
    }
    let features = Array2::from_shape_vec((labels.len(), feature_idx.len()), values)
        .expect("row-major buffer matches shape");
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    Ok(Dataset::new(features, labels)?.with_meta(name))
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Indices of the `k` smallest values of `dist(j)` over `candidates`, ties
/// broken by lower index.
fn k_nearest(candidates: &[usize], k: usize, dist: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = candidates.iter().map(|&j| (dist(j), j)).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, j)| j).collect()
}

/// NearMiss-3 score of a majority row: mean Euclidean distance to its `k`
/// nearest minority rows.
pub(crate) fn nearmiss3_score(data: &Dataset, row: usize, minority: &[usize], k: usize) -> f64 {
    let x = data.row(row);
    let dists = k_nearest(minority, k, |j| sq_dist(x, data.row(j)));
    dists.iter().map(|&j| sq_dist(x, data.row(j)).sqrt()).sum::<f64>() / dists.len() as f64
}

/// Two-stage NearMiss-3 undersampling of the majority class.
///
/// Stage one collects, for every minority row, its `k` nearest majority rows.
/// Stage two ranks those candidates by mean distance to their `k` nearest
/// minority rows and keeps the largest, until the majority count equals the
/// minority count. If stage one yields fewer candidates than needed, the
/// remaining majority rows are ranked by the same score to fill the quota.
/// Ties are broken by lower row index. The output keeps input row order.
pub fn nearmiss3_undersample(data: &Dataset, minority_label: f64, k: usize) -> Result<Dataset> {
    if minority_label != 1.0 && minority_label != -1.0 {
        return Err(invalid("minority label must be +1 or -1"));
    }
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    let (minority, majority): (Vec<usize>, Vec<usize>) =
        (0..data.n_rows()).partition(|&i| data.labels()[i] == minority_label);
    if minority.is_empty() || majority.is_empty() {
        return Err(invalid("NearMiss-3 needs both classes present"));
    }
    let target = minority.len().min(majority.len());

    let mut candidates = BTreeSet::new();
    for &i in &minority {
        let xi = data.row(i);
        candidates.extend(k_nearest(&majority, k, |j| sq_dist(xi, data.row(j))));
    }

    let rank = |pool: &[usize]| -> Vec<usize> {
        let mut scored: Vec<(f64, usize)> = pool
            .iter()
            .map(|&j| (nearmiss3_score(data, j, &minority, k), j))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.into_iter().map(|(_, j)| j).collect()
    };
    let pool: Vec<usize> = candidates.iter().copied().collect();
    let mut kept: Vec<usize> = rank(&pool).into_iter().take(target).collect();
    if kept.len() < target {
        let rest: Vec<usize> = majority
            .iter()
            .copied()
            .filter(|j| !candidates.contains(j))
            .collect();
        kept.extend(rank(&rest).into_iter().take(target - kept.len()));
    }

    let kept: BTreeSet<usize> = kept.into_iter().collect();
    let rows: Vec<usize> = (0..data.n_rows())
        .filter(|i| data.labels()[*i] == minority_label || kept.contains(i))
        .collect();
    data.select_rows(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_bad_labels_and_empty() {
        assert!(Dataset::new(array![[1.0]], vec![0.0]).is_err());
        assert!(Dataset::new(Array2::zeros((0, 2)), vec![]).is_err());
        assert!(Dataset::new(array![[f64::NAN]], vec![1.0]).is_err());
        assert!(Dataset::new(array![[1.0]], vec![1.0]).unwrap().with_tau(0.0).is_err());
    }

    #[test]
    fn augment_appends_tau() {
        let d = Dataset::new(array![[2.0, 3.0]], vec![1.0]).unwrap();
        assert_eq!(d.augment(), array![[2.0, 3.0, 1.0]]);

        let d = Dataset::new(Array2::zeros((1, 4)), vec![-1.0])
            .unwrap()
            .with_tau(0.5)
            .unwrap();
        assert_eq!(d.augment(), array![[0.0, 0.0, 0.0, 0.0, 0.5]]);
    }

    #[test]
    fn augment_round_trips() {
        let d = gen_circles(7, 0.3, 1).unwrap();
        let aug = d.augment();
        assert_eq!(aug.slice(s![.., ..2]), d.features());
        assert!(aug.column(2).iter().all(|&v| v == d.tau()));
    }

    #[test]
    fn linear_generator_shape_and_determinism() {
        let a = gen_linear_synthetic(100, 50, 40, 1.0, 3).unwrap();
        assert_eq!(a.features().dim(), (200, 50));
        assert_eq!(a.class_counts(), (100, 100));
        let b = gen_linear_synthetic(100, 50, 40, 1.0, 3).unwrap();
        assert_eq!(a, b);
        assert!(gen_linear_synthetic(10, 5, 6, 1.0, 0).is_err());
        assert!(gen_linear_synthetic(10, 5, 0, 1.0, 0).is_err());
        assert!(gen_linear_synthetic(0, 5, 2, 1.0, 0).is_err());
    }

    #[test]
    fn linear_generator_noise_columns_are_standard_normal() {
        let d = gen_linear_synthetic(1000, 12, 8, 1.0, 11).unwrap();
        for j in 8..12 {
            let col = d.features().column(j);
            let n = col.len() as f64;
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() <= 0.2, "col {j} mean {mean}");
            assert!((var - 1.0).abs() <= 0.3, "col {j} var {var}");
        }
    }

    #[test]
    fn circles_zero_noise_radii() {
        let d = gen_circles(10, 0.0, 5).unwrap();
        for i in 0..d.n_rows() {
            let r = d.row(i).dot(&d.row(i)).sqrt();
            let want = if d.labels()[i] < 0.0 { 1.0 } else { 0.5 };
            assert!((r - want).abs() < 1e-12);
        }
        assert!(gen_circles(3, -0.1, 0).is_err());
    }

    #[test]
    fn circles_shape_and_radius_threshold() {
        let d = gen_circles(250, 0.2, 42).unwrap();
        assert_eq!(d.features().dim(), (500, 2));
        let correct = (0..d.n_rows())
            .filter(|&i| {
                let r = d.row(i).dot(&d.row(i)).sqrt();
                let pred = if r < 0.75 { 1.0 } else { -1.0 };
                pred == d.labels()[i]
            })
            .count();
        // Loose floor: noise 0.2 blurs the rings into each other.
        assert!(correct as f64 / 500.0 >= 0.75, "{correct}");
    }

    #[test]
    fn standardize_moments() {
        let d = gen_linear_synthetic(50, 4, 2, 2.0, 9).unwrap().standardized();
        for col in d.features().columns() {
            let n = col.len() as f64;
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_requires_a_performative_column() {
        assert!(PerformativeMask::new(vec![false, false]).is_err());
        let m = PerformativeMask::from_indices(4, &[1, 3]).unwrap();
        assert_eq!(m.performative_columns(), vec![1, 3]);
        assert!(PerformativeMask::from_indices(2, &[2]).is_err());
    }
}

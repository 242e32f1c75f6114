//! Gaussian models scored with the squared Mahalanobis distance, threshold
//! calibration on training scores, and fusion of the two views.
//!
//! No density is ever evaluated: only the mean, the covariance and the
//! inverse of the regularized covariance are kept.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::codec::Container;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"CGAU";
const VERSION: u32 = 1;

/// Default relative ridge: ε = 1e-6 · trace(Σ) / dim.
pub const DEFAULT_RELATIVE_EPSILON: f64 = 1e-6;
pub const DEFAULT_PERCENTILE: f64 = 99.0;
const MIN_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Normal,
    Anomaly,
}

/// A view's verdict on one cube.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchLabel {
    pub label: Label,
    /// Raw Mahalanobis score (for fused labels, the fused ratio).
    pub score: f64,
    /// Score divided by the calibrated (unscaled) threshold.
    pub ratio: f64,
}

impl PatchLabel {
    pub fn is_anomaly(&self) -> bool {
        self.label == Label::Anomaly
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    /// Anomaly only when both views flag the cube.
    #[default]
    Both,
    /// Anomaly when either view flags the cube.
    Either,
    /// Only the global view is consulted.
    GlobalOnly,
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FusionMode::Both => "both",
            FusionMode::Either => "either",
            FusionMode::GlobalOnly => "global-only",
        })
    }
}

impl std::str::FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(Self::Both),
            "either" => Ok(Self::Either),
            "global-only" => Ok(Self::GlobalOnly),
            _ => Err(Error::param(format!("unknown fusion mode `{s}`"))),
        }
    }
}

/// What a Gaussian model was fitted on; checked when models are loaded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DescriptorLayout {
    pub kind: String,
    pub detail: String,
}

impl DescriptorLayout {
    pub fn new(kind: &str, detail: &str) -> Self {
        Self {
            kind: kind.into(),
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    /// Inverse of `sigma + epsilon * I`.
    pub sigma_inv: DMatrix<f64>,
    /// Absolute ridge actually added to the diagonal.
    pub epsilon: f64,
    pub threshold: Option<f64>,
    pub layout: DescriptorLayout,
    pub fusion: FusionMode,
}

fn invert_spd(sigma: &DMatrix<f64>, mut epsilon: f64) -> Result<(DMatrix<f64>, f64)> {
    let n = sigma.nrows();
    let floor = if epsilon > 0.0 { epsilon } else { f64::EPSILON };
    for _ in 0..40 {
        let mut reg = sigma.clone();
        for i in 0..n {
            reg[(i, i)] += epsilon;
        }
        if let Some(ch) = reg.cholesky() {
            let inv = ch.inverse();
            if inv.iter().all(|v| v.is_finite()) {
                return Ok((inv, epsilon));
            }
        }
        epsilon = if epsilon > 0.0 { epsilon * 10.0 } else { floor };
    }
    Err(Error::Numeric("covariance is not positive definite even after regularization".into()))
}

impl GaussianModel {
    /// Model from given moments; `epsilon` is an absolute ridge.
    pub fn from_moments(mu: DVector<f64>, sigma: DMatrix<f64>, epsilon: f64) -> Result<Self> {
        if sigma.nrows() != mu.len() || sigma.ncols() != mu.len() {
            return Err(Error::dims(format!(
                "covariance is {}x{}, mean has {} entries",
                sigma.nrows(),
                sigma.ncols(),
                mu.len()
            )));
        }
        let (sigma_inv, epsilon) = invert_spd(&sigma, epsilon)?;
        Ok(Self {
            mu,
            sigma,
            sigma_inv,
            epsilon,
            threshold: None,
            layout: DescriptorLayout::new("generic", ""),
            fusion: FusionMode::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn with_layout(mut self, layout: DescriptorLayout) -> Self {
        self.layout = layout;
        self
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut c = Container::default();
        c.set("dim", self.dim());
        c.set("epsilon", self.epsilon);
        c.set(
            "threshold",
            self.threshold.map_or_else(|| "none".to_string(), |t| t.to_string()),
        );
        c.set("layout_kind", &self.layout.kind);
        c.set("layout_detail", &self.layout.detail);
        c.set("fusion", self.fusion);
        c.push("mu", self.mu.as_slice().to_vec());
        c.push("sigma", self.sigma.as_slice().to_vec());
        c.push("sigma_inv", self.sigma_inv.as_slice().to_vec());
        let mut w = BufWriter::new(File::create(path)?);
        c.write_to(&mut w, MAGIC, VERSION)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut c = Container::read_from(&mut BufReader::new(File::open(path)?), MAGIC, VERSION)?;
        let dim: usize = c.get("dim")?;
        let threshold = match c.get::<String>("threshold")?.as_str() {
            "none" => None,
            t => Some(
                t.parse()
                    .map_err(|_| Error::Format(format!("bad threshold `{t}`")))?,
            ),
        };
        Ok(Self {
            mu: DVector::from_vec(c.take("mu", dim)?),
            sigma: DMatrix::from_vec(dim, dim, c.take("sigma", dim * dim)?),
            sigma_inv: DMatrix::from_vec(dim, dim, c.take("sigma_inv", dim * dim)?),
            epsilon: c.get("epsilon")?,
            threshold,
            layout: DescriptorLayout::new(&c.get::<String>("layout_kind")?, &c.get::<String>("layout_detail")?),
            fusion: c.get::<String>("fusion")?.parse()?,
        })
    }
}

/// Fits mean and unbiased covariance; the ridge is
/// `relative_epsilon * trace(Σ) / dim` (or `relative_epsilon` when the
/// trace is zero).
pub fn fit_gaussian(descriptors: &[Vec<f64>], relative_epsilon: f64) -> Result<GaussianModel> {
    let n = descriptors.len();
    let dim = descriptors.first().map_or(0, Vec::len);
    if dim == 0 {
        return Err(Error::InsufficientData("no descriptors to fit".into()));
    }
    if n < dim + 1 {
        return Err(Error::InsufficientData(format!(
            "a {dim}-dimensional Gaussian needs at least {} samples, got {n}",
            dim + 1
        )));
    }
    if descriptors.iter().any(|d| d.len() != dim) {
        return Err(Error::dims("descriptors have inconsistent lengths"));
    }
    if descriptors.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite descriptor value".into()));
    }
    let x = DMatrix::from_fn(n, dim, |r, c| descriptors[r][c]);
    let mu = DVector::from_iterator(dim, x.column_iter().map(|c| c.sum() / n as f64));
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mu.transpose();
    }
    let mut sigma = centered.tr_mul(&centered) / (n - 1) as f64;
    // symmetrize away rounding
    sigma = (&sigma + sigma.transpose()) * 0.5;
    let trace = sigma.trace();
    let eps = if trace > 0.0 {
        relative_epsilon * trace / dim as f64
    } else {
        relative_epsilon
    };
    GaussianModel::from_moments(mu, sigma, eps)
}

/// Squared Mahalanobis distance under the regularized inverse.
pub fn mahalanobis(m: &GaussianModel, x: &[f64]) -> Result<f64> {
    if x.len() != m.dim() {
        return Err(Error::dims(format!(
            "descriptor has {} values, model expects {}",
            x.len(),
            m.dim()
        )));
    }
    let d = DVector::from_column_slice(x) - &m.mu;
    Ok(d.dot(&(&m.sigma_inv * &d)).max(0.0))
}

/// [`mahalanobis`] of many descriptors with one matrix product.
pub fn mahalanobis_batch(m: &GaussianModel, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
    if let Some(bad) = xs.iter().find(|x| x.len() != m.dim()) {
        return Err(Error::dims(format!(
            "descriptor has {} values, model expects {}",
            bad.len(),
            m.dim()
        )));
    }
    if xs.is_empty() {
        return Ok(Vec::new());
    }
    let mut d = DMatrix::from_fn(m.dim(), xs.len(), |r, c| xs[c][r]);
    for mut col in d.column_iter_mut() {
        col -= &m.mu;
    }
    let p = &m.sigma_inv * &d;
    Ok(d.column_iter()
        .zip(p.column_iter())
        .map(|(a, b)| a.dot(&b).max(0.0))
        .collect())
}

/// Percentile of `scores` with linear interpolation between order
/// statistics (rank `p/100 * (n-1)`).
pub fn percentile(scores: &[f64], p: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InsufficientData("no scores for percentile".into()));
    }
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::param(format!("percentile {p} not in (0, 100]")));
    }
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (s.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    Ok(s[lo] + (s[hi] - s[lo]) * (rank - lo as f64))
}

/// Sets the model threshold to the given percentile of its training scores.
pub fn calibrate_threshold(
    m: &mut GaussianModel,
    train_descriptors: &[Vec<f64>],
    pct: f64,
) -> Result<f64> {
    let scores = mahalanobis_batch(m, train_descriptors)?;
    calibrate_from_scores(m, &scores, pct)
}

pub fn calibrate_from_scores(m: &mut GaussianModel, scores: &[f64], pct: f64) -> Result<f64> {
    let t = percentile(scores, pct)?.max(MIN_THRESHOLD);
    m.threshold = Some(t);
    Ok(t)
}

/// Labels a raw score against `alpha * threshold`.
pub fn label_score(threshold: f64, score: f64, alpha: f64) -> PatchLabel {
    let label = if score <= alpha * threshold {
        Label::Normal
    } else {
        Label::Anomaly
    };
    PatchLabel {
        label,
        score,
        ratio: score / threshold,
    }
}

pub fn classify_patch(m: &GaussianModel, x: &[f64], alpha: f64) -> Result<PatchLabel> {
    let t = m
        .threshold
        .ok_or_else(|| Error::param("classifier has not been calibrated"))?;
    Ok(label_score(t, mahalanobis(m, x)?, alpha))
}

/// Combined score ratio used for ROC sweeps.
pub fn fuse_ratios(global: f64, local: Option<f64>, mode: FusionMode) -> f64 {
    match (mode, local) {
        (FusionMode::GlobalOnly, _) | (_, None) => global,
        (FusionMode::Both, Some(l)) => global.min(l),
        (FusionMode::Either, Some(l)) => global.max(l),
    }
}

/// Fuses two view labels. In `GlobalOnly` mode the local label is ignored.
pub fn fuse(c1: PatchLabel, c2: PatchLabel, mode: FusionMode) -> PatchLabel {
    let (a, b) = (c1.is_anomaly(), c2.is_anomaly());
    let anomalous = match mode {
        FusionMode::Both => a && b,
        FusionMode::Either => a || b,
        FusionMode::GlobalOnly => a,
    };
    let ratio = fuse_ratios(c1.ratio, Some(c2.ratio), mode);
    PatchLabel {
        label: if anomalous { Label::Anomaly } else { Label::Normal },
        score: ratio,
        ratio,
    }
}

//! Sparse auto-encoder for the global view.
//!
//! One sigmoid hidden layer of `s` units and a linear output layer, trained
//! on standardized small cubes by minibatch SGD on
//!
//! ```text
//! L = 1/m Σ ||x - W2 σ(W1 x + b1) - b2||²
//!     + λ (Σ W1² + Σ W2²)
//!     + β Σ_j KL(ρ || ρ'_j)
//! ```
//!
//! where `ρ'_j` is the mean activation of hidden unit `j` over the
//! minibatch. Features are the bare product `W1 · standardize(x)`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::Container;
use crate::videoio::{Cube, CubeDims, RASTER_ORDER_TAG};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"CSAE";
const VERSION: u32 = 1;

/// Lower bound for per-dimension standard deviations.
pub const SIGMA_FLOOR: f64 = 1e-8;
/// Mean activations are clamped to `[RHO_CLAMP, 1 - RHO_CLAMP]` inside KL.
pub const RHO_CLAMP: f64 = 1e-10;

/// How a standardized cube is turned into a global feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// `W1 · x`
    #[default]
    Linear,
    /// `σ(W1 · x + b1)`
    Sigmoid,
}

impl std::fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FeatureMode::Linear => "linear",
            FeatureMode::Sigmoid => "sigmoid",
        })
    }
}

impl std::str::FromStr for FeatureMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "sigmoid" => Ok(Self::Sigmoid),
            _ => Err(Error::param(format!("unknown feature mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AeHyper {
    /// Hidden layer size `s`, which is also the feature dimension.
    pub hidden: usize,
    /// Sparsity target ρ.
    pub rho: f64,
    /// Weight of the KL sparsity penalty.
    pub beta: f64,
    /// Weight decay on both weight matrices.
    pub lambda: f64,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub feature: FeatureMode,
}

impl Default for AeHyper {
    fn default() -> Self {
        Self {
            hidden: 1000,
            rho: 0.05,
            beta: 3.0,
            lambda: 3e-3,
            lr: 1e-3,
            batch: 64,
            epochs: 30,
            seed: 0,
            feature: FeatureMode::Linear,
        }
    }
}

impl AeHyper {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::param("hidden size must be at least 1"));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::param(format!("sparsity target {} not in (0, 1)", self.rho)));
        }
        if !(self.beta > 0.0 && self.lambda > 0.0 && self.lr > 0.0) {
            return Err(Error::param("beta, lambda and lr must be positive"));
        }
        if self.batch == 0 || self.epochs == 0 {
            return Err(Error::param("batch and epochs must be at least 1"));
        }
        Ok(())
    }
}

/// Per-dimension mean and standard deviation of the training inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::dims(format!(
                "input has {} values, standardizer expects {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }
}

pub fn standardize_fit(patches: &[Vec<f64>]) -> Result<Standardizer> {
    if patches.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "standardization needs at least 2 patches, got {}",
            patches.len()
        )));
    }
    let d = patches[0].len();
    if patches.iter().any(|p| p.len() != d) {
        return Err(Error::dims("patches have inconsistent lengths"));
    }
    let n = patches.len() as f64;
    let mut mean = vec![0.0; d];
    for p in patches {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for p in patches {
        for ((s, v), m) in var.iter_mut().zip(p).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var
        .into_iter()
        .map(|s| (s / n).sqrt().max(SIGMA_FLOOR))
        .collect();
    Ok(Standardizer { mean, std })
}

/// Network weights. `w1` is `s x D`, `w2` is `D x s`.
#[derive(Debug, Clone, PartialEq)]
pub struct AeParams {
    pub w1: DMatrix<f64>,
    pub w2: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub b2: DVector<f64>,
}

impl AeParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w1: DMatrix::zeros(hidden, input),
            w2: DMatrix::zeros(input, hidden),
            b1: DVector::zeros(hidden),
            b2: DVector::zeros(input),
        }
    }

    /// Uniform in ±sqrt(6 / (s + D + 1)), biases zero.
    pub fn random(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let r = (6.0 / (hidden + input + 1) as f64).sqrt();
        let w1 = DMatrix::from_fn(hidden, input, |_, _| rng.random_range(-r..r));
        let w2 = DMatrix::from_fn(input, hidden, |_, _| rng.random_range(-r..r));
        Self {
            w1,
            w2,
            b1: DVector::zeros(hidden),
            b2: DVector::zeros(input),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    fn is_finite(&self) -> bool {
        self.w1.iter().chain(self.w2.iter()).chain(self.b1.iter()).chain(self.b2.iter()).all(|v| v.is_finite())
    }
}

/// Gradient of the loss, shaped like [`AeParams`].
pub type Gradients = AeParams;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// KL divergence between Bernoulli(rho) and Bernoulli(rho_hat).
pub fn kl_divergence(rho: f64, rho_hat: f64) -> f64 {
    rho * (rho / rho_hat).ln() + (1.0 - rho) * ((1.0 - rho) / (1.0 - rho_hat)).ln()
}

fn batch_matrix(batch: &[Vec<f64>], d: usize) -> Result<DMatrix<f64>> {
    if batch.is_empty() {
        return Err(Error::InsufficientData("empty batch".into()));
    }
    if let Some(bad) = batch.iter().find(|x| x.len() != d) {
        return Err(Error::dims(format!(
            "batch vector has {} values, model expects {d}",
            bad.len()
        )));
    }
    Ok(DMatrix::from_fn(d, batch.len(), |r, c| batch[c][r]))
}

fn activations(p: &AeParams, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut z = &p.w1 * x;
    for mut col in z.column_iter_mut() {
        col += &p.b1;
        col.apply(|v| *v = sigmoid(*v));
    }
    z
}

fn reconstruct(p: &AeParams, a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut xhat = &p.w2 * a;
    for mut col in xhat.column_iter_mut() {
        col += &p.b2;
    }
    xhat
}

fn mean_activation(a: &DMatrix<f64>) -> Vec<f64> {
    let m = a.ncols() as f64;
    a.row_iter()
        .map(|r| (r.sum() / m).clamp(RHO_CLAMP, 1.0 - RHO_CLAMP))
        .collect()
}

/// Loss and gradient on a `D x m` batch matrix of standardized inputs.
fn loss_and_grad(p: &AeParams, x: &DMatrix<f64>, h: &AeHyper, want_grad: bool) -> (f64, Option<Gradients>) {
    let m = x.ncols() as f64;
    let a = activations(p, x);
    let xhat = reconstruct(p, &a);
    let resid = xhat - x;
    let rho_hat = mean_activation(&a);

    let recon = resid.norm_squared() / m;
    let decay = h.lambda * (p.w1.norm_squared() + p.w2.norm_squared());
    let sparsity = h.beta * rho_hat.iter().map(|&r| kl_divergence(h.rho, r)).sum::<f64>();
    let loss = recon + decay + sparsity;
    if !want_grad {
        return (loss, None);
    }

    let d_out = resid * (2.0 / m);
    let mut g_w2 = &d_out * a.transpose();
    g_w2 += &p.w2 * (2.0 * h.lambda);
    let g_b2 = row_sums(&d_out);

    let mut d_hidden = p.w2.transpose() * &d_out;
    let kl_term: Vec<f64> = rho_hat
        .iter()
        .map(|&r| h.beta / m * (-h.rho / r + (1.0 - h.rho) / (1.0 - r)))
        .collect();
    for (j, mut row) in d_hidden.row_iter_mut().enumerate() {
        row.add_scalar_mut(kl_term[j]);
    }
    d_hidden.zip_apply(&a, |g, act| *g *= act * (1.0 - act));
    let mut g_w1 = &d_hidden * x.transpose();
    g_w1 += &p.w1 * (2.0 * h.lambda);
    let g_b1 = row_sums(&d_hidden);

    (
        loss,
        Some(Gradients {
            w1: g_w1,
            w2: g_w2,
            b1: g_b1,
            b2: g_b2,
        }),
    )
}

fn row_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.nrows(), m.row_iter().map(|r| r.sum()))
}

/// Hidden activations and reconstruction of one standardized input.
pub fn forward(p: &AeParams, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let xm = batch_matrix(std::slice::from_ref(&x.to_vec()), p.input_dim())?;
    let a = activations(p, &xm);
    let xhat = reconstruct(p, &a);
    Ok((a.as_slice().to_vec(), xhat.as_slice().to_vec()))
}

/// Objective on a batch of standardized inputs.
pub fn loss(p: &AeParams, batch: &[Vec<f64>], h: &AeHyper) -> Result<f64> {
    let x = batch_matrix(batch, p.input_dim())?;
    Ok(loss_and_grad(p, &x, h, false).0)
}

/// Exact gradient of [`loss`] by backpropagation.
pub fn gradients(p: &AeParams, batch: &[Vec<f64>], h: &AeHyper) -> Result<Gradients> {
    let x = batch_matrix(batch, p.input_dim())?;
    Ok(loss_and_grad(p, &x, h, true).1.unwrap())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AeModel {
    pub params: AeParams,
    pub standardizer: Standardizer,
    pub hyper: AeHyper,
    /// Cube shape the model was trained on; `volume()` equals D.
    pub input_dims: CubeDims,
    /// Mean minibatch loss per epoch.
    pub loss_curve: Vec<f64>,
}

/// Learned descriptor of a cube.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalFeature(pub Vec<f64>);

pub fn train(patches: &[Vec<f64>], input_dims: CubeDims, h: &AeHyper) -> Result<AeModel> {
    h.validate()?;
    let d = input_dims.volume();
    if let Some(bad) = patches.iter().find(|p| p.len() != d) {
        return Err(Error::dims(format!(
            "patch has {} values, expected {d} for {input_dims} cubes",
            bad.len()
        )));
    }
    if patches.len() < h.batch.max(2) {
        return Err(Error::InsufficientData(format!(
            "auto-encoder needs at least {} patches, got {}",
            h.batch.max(2),
            patches.len()
        )));
    }
    let standardizer = standardize_fit(patches)?;
    let data: Vec<Vec<f64>> = patches
        .iter()
        .map(|p| standardizer.apply(p))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(h.seed);
    let mut params = AeParams::random(d, h.hidden, &mut rng);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss_curve = Vec::with_capacity(h.epochs);

    for epoch in 0..h.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(h.batch) {
            let x = DMatrix::from_fn(d, chunk.len(), |r, c| data[chunk[c]][r]);
            let (l, g) = loss_and_grad(&params, &x, h, true);
            let g = g.unwrap();
            params.w1 -= &g.w1 * h.lr;
            params.w2 -= &g.w2 * h.lr;
            params.b1.axpy(-h.lr, &g.b1, 1.0);
            params.b2.axpy(-h.lr, &g.b2, 1.0);
            total += l;
            batches += 1;
        }
        let mean = total / batches as f64;
        if !mean.is_finite() || !params.is_finite() {
            return Err(Error::Numeric(format!(
                "auto-encoder training diverged in epoch {epoch} (lr {})",
                h.lr
            )));
        }
        log::debug!("epoch {epoch}: loss {mean:.6}");
        loss_curve.push(mean);
    }

    Ok(AeModel {
        params,
        standardizer,
        hyper: *h,
        input_dims,
        loss_curve,
    })
}

impl AeModel {
    pub fn feature_dim(&self) -> usize {
        self.params.hidden_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.params.input_dim()
    }

    /// Global feature of one raw (unstandardized) rasterized cube.
    pub fn encode(&self, x_raw: &[f64]) -> Result<GlobalFeature> {
        let z = self.standardizer.apply(x_raw)?;
        Ok(GlobalFeature(self.map_standardized(&z)))
    }

    fn map_standardized(&self, z: &[f64]) -> Vec<f64> {
        let z = DVector::from_column_slice(z);
        let mut y = &self.params.w1 * z;
        if self.hyper.feature == FeatureMode::Sigmoid {
            y += &self.params.b1;
            y.apply(|v| *v = sigmoid(*v));
        }
        y.as_slice().to_vec()
    }

    /// Mean of the standardized rasterized sub-cubes of `big`.
    fn pooled_standardized(&self, big: &Cube) -> Result<Vec<f64>> {
        let subs = self.split(big)?;
        let n = subs.len() as f64;
        let mut acc = vec![0.0; self.input_dim()];
        for s in &subs {
            for ((a, &v), (m, sd)) in acc
                .iter_mut()
                .zip(s.data())
                .zip(self.standardizer.mean.iter().zip(&self.standardizer.std))
            {
                *a += (f64::from(v) - m) / sd;
            }
        }
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(acc)
    }

    fn split(&self, big: &Cube) -> Result<Vec<Cube>> {
        let d = big.dims();
        if d.t != self.input_dims.t {
            return Err(Error::dims(format!(
                "cube depth {} differs from model depth {}",
                d.t, self.input_dims.t
            )));
        }
        big.subdivide(self.input_dims.w, self.input_dims.h)
    }

    /// Mean of the features of the non-overlapping input-sized sub-cubes of
    /// `big`.
    pub fn encode_pooled(&self, big: &Cube) -> Result<GlobalFeature> {
        match self.hyper.feature {
            // W1 is linear: pool the standardized inputs, map once
            FeatureMode::Linear => Ok(GlobalFeature(self.map_standardized(&self.pooled_standardized(big)?))),
            FeatureMode::Sigmoid => {
                let subs = self.split(big)?;
                let mut acc = vec![0.0; self.feature_dim()];
                for s in &subs {
                    let f = self.encode(&s.rasterize())?;
                    acc.iter_mut().zip(&f.0).for_each(|(a, v)| *a += v);
                }
                acc.iter_mut().for_each(|a| *a /= subs.len() as f64);
                Ok(GlobalFeature(acc))
            }
        }
    }

    /// [`AeModel::encode_pooled`] over many cubes with a single matrix
    /// product.
    pub fn encode_pooled_batch(&self, bigs: &[Cube]) -> Result<Vec<GlobalFeature>> {
        if self.hyper.feature == FeatureMode::Sigmoid || bigs.is_empty() {
            return bigs.iter().map(|b| self.encode_pooled(b)).collect();
        }
        let pooled = crate::par::map(bigs, |b| self.pooled_standardized(b))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let d = self.input_dim();
        let mut z = DMatrix::zeros(d, pooled.len());
        for (mut col, p) in z.column_iter_mut().zip(&pooled) {
            col.copy_from_slice(p);
        }
        let y = &self.params.w1 * z;
        Ok(y.column_iter()
            .map(|c| GlobalFeature(c.iter().copied().collect()))
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut c = Container::default();
        let h = &self.hyper;
        c.set("input_w", self.input_dims.w);
        c.set("input_h", self.input_dims.h);
        c.set("input_t", self.input_dims.t);
        c.set("dim", self.input_dim());
        c.set("hidden", h.hidden);
        c.set("rho", h.rho);
        c.set("beta", h.beta);
        c.set("lambda", h.lambda);
        c.set("lr", h.lr);
        c.set("batch", h.batch);
        c.set("epochs", h.epochs);
        c.set("seed", h.seed);
        c.set("feature", h.feature);
        c.set("raster_order", RASTER_ORDER_TAG);
        c.push("w1", row_major(&self.params.w1));
        c.push("w2", row_major(&self.params.w2));
        c.push("b1", self.params.b1.as_slice().to_vec());
        c.push("b2", self.params.b2.as_slice().to_vec());
        c.push("mean", self.standardizer.mean.clone());
        c.push("std", self.standardizer.std.clone());
        c.push("loss_curve", self.loss_curve.clone());
        let mut w = BufWriter::new(File::create(path)?);
        c.write_to(&mut w, MAGIC, VERSION)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut c = Container::read_from(&mut BufReader::new(File::open(path)?), MAGIC, VERSION)?;
        let order: String = c.get("raster_order")?;
        if order != RASTER_ORDER_TAG {
            return Err(Error::Format(format!("unsupported raster order `{order}`")));
        }
        let input_dims = CubeDims::new(c.get("input_w")?, c.get("input_h")?, c.get("input_t")?);
        let d: usize = c.get("dim")?;
        if d != input_dims.volume() {
            return Err(Error::Format(format!("dim {d} does not match {input_dims}")));
        }
        let hyper = AeHyper {
            hidden: c.get("hidden")?,
            rho: c.get("rho")?,
            beta: c.get("beta")?,
            lambda: c.get("lambda")?,
            lr: c.get("lr")?,
            batch: c.get("batch")?,
            epochs: c.get("epochs")?,
            seed: c.get("seed")?,
            feature: c.get::<String>("feature")?.parse()?,
        };
        let s = hyper.hidden;
        let params = AeParams {
            w1: DMatrix::from_row_slice(s, d, &c.take("w1", s * d)?),
            w2: DMatrix::from_row_slice(d, s, &c.take("w2", s * d)?),
            b1: DVector::from_vec(c.take("b1", s)?),
            b2: DVector::from_vec(c.take("b2", d)?),
        };
        let standardizer = Standardizer {
            mean: c.take("mean", d)?,
            std: c.take("std", d)?,
        };
        if !params.is_finite() || standardizer.std.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Format("non-finite or non-positive model values".into()));
        }
        let loss_curve = c.take_any("loss_curve")?;
        Ok(Self {
            params,
            standardizer,
            hyper,
            input_dims,
            loss_curve,
        })
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

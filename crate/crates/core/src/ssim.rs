//! Structural similarity between frame patches and between cubes.
//!
//! The default is one SSIM window covering the whole patch with population
//! (1/N) statistics. A cube-to-cube similarity is the mean of the per-frame
//! similarities.

use serde::{Deserialize, Serialize};

use crate::videoio::Cube;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsimParams {
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range of the samples.
    pub dynamic_range: f64,
    /// Side of a square sliding window (stride 1). `None` computes a single
    /// global SSIM over the patch.
    pub window: Option<usize>,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 255.0,
            window: None,
        }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k2 > 0.0 && self.dynamic_range > 0.0) {
            return Err(Error::param("SSIM constants k1, k2 and L must be positive"));
        }
        if self.window == Some(0) {
            return Err(Error::param("SSIM window must be at least 1"));
        }
        Ok(())
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }
}

/// First and second moments of a pair of equally sized sample sets.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    sa: u64,
    sb: u64,
    saa: u64,
    sbb: u64,
    sab: u64,
    n: u64,
}

impl Moments {
    #[inline]
    fn push(&mut self, a: u8, b: u8) {
        let (a, b) = (u64::from(a), u64::from(b));
        self.sa += a;
        self.sb += b;
        self.saa += a * a;
        self.sbb += b * b;
        self.sab += a * b;
        self.n += 1;
    }

    fn ssim(&self, c1: f64, c2: f64) -> f64 {
        let n = self.n as f64;
        let ma = self.sa as f64 / n;
        let mb = self.sb as f64 / n;
        let va = self.saa as f64 / n - ma * ma;
        let vb = self.sbb as f64 / n - mb * mb;
        let cov = self.sab as f64 / n - ma * mb;
        ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
    }
}

/// SSIM of two equally sized patches; `width` is the row length and only
/// matters for windowed mode.
pub fn ssim_frame(a: &[u8], b: &[u8], width: usize, p: &SsimParams) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dims(format!(
            "SSIM patches differ in size: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() || width == 0 || !a.len().is_multiple_of(width) {
        return Err(Error::dims(format!(
            "patch of {} samples is not a whole number of {width}-wide rows",
            a.len()
        )));
    }
    Ok(ssim_unchecked(a, b, width, p))
}

fn ssim_unchecked(a: &[u8], b: &[u8], width: usize, p: &SsimParams) -> f64 {
    let (c1, c2) = (p.c1(), p.c2());
    match p.window {
        None => {
            let mut m = Moments::default();
            for (&x, &y) in a.iter().zip(b) {
                m.push(x, y);
            }
            m.ssim(c1, c2)
        }
        Some(win) => {
            let height = a.len() / width;
            let ww = win.min(width);
            let wh = win.min(height);
            let mut total = 0.0;
            let mut count = 0usize;
            for y0 in 0..=height - wh {
                for x0 in 0..=width - ww {
                    let mut m = Moments::default();
                    for r in y0..y0 + wh {
                        let row = r * width;
                        for c in x0..x0 + ww {
                            m.push(a[row + c], b[row + c]);
                        }
                    }
                    total += m.ssim(c1, c2);
                    count += 1;
                }
            }
            total / count as f64
        }
    }
}

/// Mean of per-frame SSIM over corresponding frames of two cubes.
pub fn ssim_cube(a: &Cube, b: &Cube, p: &SsimParams) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::dims(format!(
            "SSIM cubes differ in size: {} vs {}",
            a.dims(),
            b.dims()
        )));
    }
    let d = a.dims();
    let total: f64 = (0..d.t)
        .map(|k| ssim_unchecked(a.frame(k), b.frame(k), d.w, p))
        .sum();
    Ok(total / d.t as f64)
}

//! Frame-level, pixel-level and dual-pixel-level judging, ROC sweeps, EER
//! and AUC.
//!
//! * frame level: a frame is predicted anomalous when any pixel is flagged.
//! * pixel level: a ground-truth-positive frame is a hit when the detection
//!   covers at least 40% of its anomalous pixels.
//! * dual pixel level: pixel level, and in addition at least a fraction
//!   `beta` of the flagged pixels lie inside the ground truth. Scattered
//!   spurious detections ("lucky guesses") fail it.
//!
//! Ground-truth-negative frames are FP under every measure as soon as any
//! pixel is flagged.

use std::path::Path;

use crate::videoio::load_frame_sequence;
use crate::{Error, Result};

/// Fraction of ground-truth pixels that must be covered at pixel level.
pub const PIXEL_COVERAGE: f64 = 0.40;

/// A binary per-pixel mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bytes(width: usize, height: usize, data: &[u8]) -> Self {
        Self {
            width,
            height,
            bits: data.iter().map(|&v| v != 0).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Sets every pixel of the rectangle `[x, x+w) x [y, y+h)`, clipped.
    pub fn fill_rect(&mut self, x: usize, y: usize, w: usize, h: usize) {
        for r in y..(y + h).min(self.height) {
            for c in x..(x + w).min(self.width) {
                self.bits[r * self.width + c] = true;
            }
        }
    }

    /// Number of set pixels of `self` inside the rectangle.
    pub fn count_in_rect(&self, x: usize, y: usize, w: usize, h: usize) -> usize {
        let mut n = 0;
        for r in y..(y + h).min(self.height) {
            let row = &self.bits[r * self.width..(r + 1) * self.width];
            n += row[x.min(self.width)..(x + w).min(self.width)]
                .iter()
                .filter(|&&b| b)
                .count();
        }
        n
    }
}

/// Per-frame anomaly masks of a test video.
pub type GroundTruth = Vec<Mask>;

pub fn load_ground_truth(dir: &Path, pattern: &str) -> Result<GroundTruth> {
    let v = load_frame_sequence(dir, pattern)?;
    let (w, h) = (v.width(), v.height());
    Ok(v.frames().iter().map(|f| Mask::from_bytes(w, h, f)).collect())
}

/// Writes masks as `prefix%05d.pgm` (0 / 255).
pub fn save_masks(dir: &Path, prefix: &str, masks: &[Mask]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, m) in masks.iter().enumerate() {
        crate::pgm::write(&dir.join(format!("{prefix}{i:05}.pgm")), m.width, m.height, &m.to_bytes())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    TruePositive,
    FalsePositive,
    TrueNegative,
    FalseNegative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Measure {
    Frame,
    Pixel,
    /// Dual pixel level with the given precision fraction β.
    DualPixel(f64),
}

impl std::fmt::Display for Measure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Measure::Frame => f.write_str("frame"),
            Measure::Pixel => f.write_str("pixel"),
            Measure::DualPixel(b) => write!(f, "dual-pixel(beta={b})"),
        }
    }
}

/// Pixel counts that fully determine every verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Overlap {
    pub detected: usize,
    pub truth: usize,
    pub both: usize,
}

impl Overlap {
    pub fn of(mask: &Mask, gt: &Mask) -> Result<Self> {
        if mask.width != gt.width || mask.height != gt.height {
            return Err(Error::dims(format!(
                "mask is {}x{}, ground truth is {}x{}",
                mask.width, mask.height, gt.width, gt.height
            )));
        }
        let mut o = Overlap::default();
        for (&m, &g) in mask.bits.iter().zip(&gt.bits) {
            o.detected += m as usize;
            o.truth += g as usize;
            o.both += (m && g) as usize;
        }
        Ok(o)
    }
}

// counts are integers, so a tiny slack absorbs rounding in `frac * n`
fn at_least(count: usize, frac: f64, of: usize) -> bool {
    count as f64 + 1e-9 >= frac * of as f64
}

pub fn verdict(measure: Measure, o: Overlap) -> Verdict {
    let predicted = o.detected > 0;
    if o.truth == 0 {
        return if predicted {
            Verdict::FalsePositive
        } else {
            Verdict::TrueNegative
        };
    }
    let hit = match measure {
        Measure::Frame => predicted,
        Measure::Pixel => at_least(o.both, PIXEL_COVERAGE, o.truth),
        Measure::DualPixel(beta) => {
            at_least(o.both, PIXEL_COVERAGE, o.truth) && at_least(o.both, beta, o.detected)
        }
    };
    if hit {
        Verdict::TruePositive
    } else {
        Verdict::FalseNegative
    }
}

pub fn frame_level_judge(mask: &Mask, gt: &Mask) -> Result<Verdict> {
    Ok(verdict(Measure::Frame, Overlap::of(mask, gt)?))
}

pub fn pixel_level_judge(mask: &Mask, gt: &Mask) -> Result<Verdict> {
    Ok(verdict(Measure::Pixel, Overlap::of(mask, gt)?))
}

pub fn dual_pixel_judge(mask: &Mask, gt: &Mask, beta_frac: f64) -> Result<Verdict> {
    if !(0.0..=1.0).contains(&beta_frac) {
        return Err(Error::param(format!("beta {beta_frac} not in [0, 1]")));
    }
    Ok(verdict(Measure::DualPixel(beta_frac), Overlap::of(mask, gt)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn add(&mut self, v: Verdict) {
        match v {
            Verdict::TruePositive => self.tp += 1,
            Verdict::FalsePositive => self.fp += 1,
            Verdict::TrueNegative => self.tn += 1,
            Verdict::FalseNegative => self.fn_ += 1,
        }
    }

    pub fn fpr(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn)
    }

    pub fn tpr(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// A disjoint piece of a frame's detection (typically one cube footprint)
/// with its anomaly score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub score: f64,
    pub area: usize,
    pub gt_overlap: usize,
}

/// Everything needed to judge one frame at any operating point: the scored
/// regions (pairwise disjoint) and the number of ground-truth pixels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameRegions {
    pub regions: Vec<Region>,
    pub gt_pixels: usize,
}

impl FrameRegions {
    /// Regions are flagged when their score is strictly above `alpha`.
    pub fn overlap_at(&self, alpha: f64) -> Overlap {
        let mut o = Overlap {
            truth: self.gt_pixels,
            ..Default::default()
        };
        for r in self.regions.iter().filter(|r| r.score > alpha) {
            o.detected += r.area;
            o.both += r.gt_overlap;
        }
        o
    }

    /// A fixed binary mask as a single region with score 1.
    pub fn from_mask(mask: &Mask, gt: &Mask) -> Result<Self> {
        let o = Overlap::of(mask, gt)?;
        Ok(Self {
            regions: vec![Region {
                score: 1.0,
                area: o.detected,
                gt_overlap: o.both,
            }],
            gt_pixels: o.truth,
        })
    }

    pub fn max_score(&self) -> f64 {
        self.regions.iter().map(|r| r.score).fold(0.0, f64::max)
    }
}

pub fn confusion_at(frames: &[FrameRegions], measure: Measure, alpha: f64) -> Confusion {
    let mut c = Confusion::default();
    for f in frames {
        c.add(verdict(measure, f.overlap_at(alpha)));
    }
    c
}

/// ROC points with the (0,0) and (1,1) anchors, sorted by FPR then TPR.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
}

impl RocCurve {
    pub fn new(mut points: Vec<(f64, f64)>) -> Self {
        points.push((0.0, 0.0));
        points.push((1.0, 1.0));
        points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        Self { points }
    }
}

/// Sweep of `alpha` over the frames, one ROC point per value.
pub fn roc(frames: &[FrameRegions], measure: Measure, alphas: &[f64]) -> Result<RocCurve> {
    if alphas.is_empty() {
        return Err(Error::param("empty alpha sweep"));
    }
    let pts = alphas
        .iter()
        .map(|&a| {
            let c = confusion_at(frames, measure, a);
            (c.fpr(), c.tpr())
        })
        .collect();
    Ok(RocCurve::new(pts))
}

/// Every distinct region score plus zero: the sweep that traces the full
/// empirical curve. Thinned to at most `max_points` quantiles.
pub fn alpha_sweep(frames: &[FrameRegions], max_points: usize) -> Vec<f64> {
    let mut s: Vec<f64> = frames
        .iter()
        .flat_map(|f| f.regions.iter().map(|r| r.score))
        .filter(|v| v.is_finite())
        .collect();
    s.push(0.0);
    s.sort_by(f64::total_cmp);
    s.dedup();
    if s.len() > max_points && max_points >= 2 {
        let n = s.len() - 1;
        let mut thin: Vec<f64> = (0..max_points)
            .map(|k| s[k * n / (max_points - 1)])
            .collect();
        thin.dedup();
        s = thin;
    }
    s
}

/// Rate where FPR equals the miss rate, interpolated between the
/// bracketing curve points.
pub fn eer(c: &RocCurve) -> Result<f64> {
    let p = &c.points;
    if p.len() < 2 || p.iter().all(|&q| q == p[0]) {
        return Err(Error::param("degenerate ROC curve"));
    }
    let g = |q: (f64, f64)| q.0 - (1.0 - q.1);
    for w in p.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (ga, gb) = (g(a), g(b));
        if ga <= 0.0 && gb >= 0.0 {
            if ga == gb {
                return Ok(a.0);
            }
            let t = ga / (ga - gb);
            return Ok(a.0 + t * (b.0 - a.0));
        }
    }
    // only reachable without the anchors
    Err(Error::param("ROC curve never crosses the EER line"))
}

/// Trapezoidal area under the curve.
pub fn auc(c: &RocCurve) -> f64 {
    c.points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) * 0.5)
        .sum()
}

/// Summary of one measure.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureSummary {
    pub measure: Measure,
    pub curve: RocCurve,
    pub eer: f64,
    pub auc: f64,
    /// Confusion at alpha = 1 (the calibrated operating point).
    pub at_unit_alpha: Confusion,
}

pub fn summarize(frames: &[FrameRegions], measure: Measure, alphas: &[f64]) -> Result<MeasureSummary> {
    let curve = roc(frames, measure, alphas)?;
    Ok(MeasureSummary {
        measure,
        eer: eer(&curve)?,
        auc: auc(&curve),
        at_unit_alpha: confusion_at(frames, measure, 1.0),
        curve,
    })
}

/// Line-oriented evaluation report.
pub fn format_report(summaries: &[MeasureSummary], alphas: &[f64], header: &[(String, String)]) -> String {
    use std::fmt::Write;
    let mut out = String::from("# cubescan eval report v1\n");
    for (k, v) in header {
        let _ = writeln!(out, "# {k}={v}");
    }
    for s in summaries {
        let _ = writeln!(
            out,
            "summary measure={} eer={} auc={} tp={} fp={} tn={} fn={}",
            s.measure, s.eer, s.auc, s.at_unit_alpha.tp, s.at_unit_alpha.fp, s.at_unit_alpha.tn, s.at_unit_alpha.fn_
        );
    }
    let _ = writeln!(out, "alphas count={}", alphas.len());
    for s in summaries {
        for &(fpr, tpr) in &s.curve.points {
            let _ = writeln!(out, "roc measure={} fpr={fpr} tpr={tpr}", s.measure);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask(w: usize, h: usize, on: &[(usize, usize)]) -> Mask {
        let mut m = Mask::empty(w, h);
        for &(x, y) in on {
            m.bits[y * w + x] = true;
        }
        m
    }

    #[test]
    fn frame_level_cases() {
        let e = Mask::empty(4, 4);
        let gt = mask(4, 4, &[(3, 3)]);
        let det = mask(4, 4, &[(0, 0)]);
        assert_eq!(frame_level_judge(&e, &e).unwrap(), Verdict::TrueNegative);
        assert_eq!(frame_level_judge(&det, &gt).unwrap(), Verdict::TruePositive);
        assert_eq!(frame_level_judge(&det, &e).unwrap(), Verdict::FalsePositive);
        assert_eq!(frame_level_judge(&e, &gt).unwrap(), Verdict::FalseNegative);
        assert!(frame_level_judge(&e, &Mask::empty(4, 5)).is_err());
    }

    #[test]
    fn pixel_level_forty_percent_inclusive() {
        let mut gt = Mask::empty(10, 10);
        gt.fill_rect(0, 0, 10, 1);
        let mut det = Mask::empty(10, 10);
        det.fill_rect(0, 0, 4, 1);
        assert_eq!(pixel_level_judge(&det, &gt).unwrap(), Verdict::TruePositive);
        assert_eq!(pixel_level_judge(&gt, &gt).unwrap(), Verdict::TruePositive);
    }

    #[test]
    fn pixel_level_thirty_nine_percent_misses() {
        // 100-pixel truth, 39 covered, plus a large spurious block
        let mut gt = Mask::empty(20, 20);
        gt.fill_rect(0, 0, 10, 10);
        let mut det = Mask::empty(20, 20);
        det.fill_rect(0, 0, 10, 3);
        det.fill_rect(0, 3, 9, 1);
        det.fill_rect(10, 10, 10, 10);
        let o = Overlap::of(&det, &gt).unwrap();
        assert_eq!((o.both, o.truth), (39, 100));
        assert_eq!(pixel_level_judge(&det, &gt).unwrap(), Verdict::FalseNegative);
    }

    #[test]
    fn dual_pixel_rejects_lucky_guess() {
        // 40 of 100 truth pixels covered, but 95% of the detection is outside
        let mut gt = Mask::empty(40, 40);
        gt.fill_rect(0, 0, 10, 10);
        let mut det = Mask::empty(40, 40);
        det.fill_rect(0, 0, 10, 4);
        det.fill_rect(10, 10, 30, 30);
        det.fill_rect(0, 20, 10, 1);
        let o = Overlap::of(&det, &gt).unwrap();
        assert_eq!(o.both, 40);
        assert_eq!(o.detected, 40 + 900 + 10);
        assert!((o.both as f64 / o.detected as f64) < 0.05);
        assert_eq!(pixel_level_judge(&det, &gt).unwrap(), Verdict::TruePositive);
        assert_eq!(dual_pixel_judge(&det, &gt, 0.10).unwrap(), Verdict::FalseNegative);
        assert_eq!(dual_pixel_judge(&gt, &gt, 0.10).unwrap(), Verdict::TruePositive);
        assert!(dual_pixel_judge(&gt, &gt, 1.5).is_err());
    }

    #[test]
    fn perfect_detector_curve() {
        let frames: Vec<FrameRegions> = (0..20)
            .map(|i| {
                let pos = i % 3 == 0;
                FrameRegions {
                    regions: vec![Region {
                        score: if pos { 5.0 } else { 0.0 },
                        area: 10,
                        gt_overlap: if pos { 10 } else { 0 },
                    }],
                    gt_pixels: if pos { 10 } else { 0 },
                }
            })
            .collect();
        for m in [Measure::Frame, Measure::Pixel, Measure::DualPixel(0.1)] {
            let c = roc(&frames, m, &alpha_sweep(&frames, 100)).unwrap();
            assert!(c.points.contains(&(0.0, 1.0)));
            assert_eq!(auc(&c), 1.0);
            assert_eq!(eer(&c).unwrap(), 0.0);
        }
    }

    fn random_frames(n: usize, seed: u64, sign: f64) -> Vec<FrameRegions> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let pos = rng.random_bool(0.5);
                FrameRegions {
                    regions: vec![Region {
                        score: sign * rng.random_range(0.0..10.0) + if sign < 0.0 { 10.0 } else { 0.0 },
                        area: 1,
                        gt_overlap: pos as usize,
                    }],
                    gt_pixels: pos as usize,
                }
            })
            .collect()
    }

    #[test]
    fn random_scores_give_chance_auc() {
        let frames = random_frames(20_000, 1, 1.0);
        let a = auc(&roc(&frames, Measure::Frame, &alpha_sweep(&frames, 2000)).unwrap());
        assert!((a - 0.5).abs() < 0.05, "{a}");
    }

    #[test]
    fn inverted_scores_are_complementary() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut frames = vec![];
        for _ in 0..300 {
            let pos = rng.random_bool(0.4);
            let s: f64 = rng.random_range(0.0..1.0) + if pos { 0.3 } else { 0.0 };
            frames.push((s, pos));
        }
        let mk = |flip: bool| -> Vec<FrameRegions> {
            frames
                .iter()
                .map(|&(s, pos)| FrameRegions {
                    regions: vec![Region {
                        score: if flip { 2.0 - s } else { s },
                        area: 1,
                        gt_overlap: pos as usize,
                    }],
                    gt_pixels: pos as usize,
                })
                .collect()
        };
        let (a, b) = (mk(false), mk(true));
        let auc_a = auc(&roc(&a, Measure::Frame, &alpha_sweep(&a, 10_000)).unwrap());
        let auc_b = auc(&roc(&b, Measure::Frame, &alpha_sweep(&b, 10_000)).unwrap());
        assert!((auc_a + auc_b - 1.0).abs() < 1e-12, "{auc_a} {auc_b}");
    }

    #[test]
    fn eer_interpolation_and_extremes() {
        let c = RocCurve::new(vec![(0.1, 0.6), (0.19, 0.81), (0.5, 0.95)]);
        assert!((eer(&c).unwrap() - 0.19).abs() < 1e-12);
        assert_eq!(eer(&RocCurve::new(vec![(0.0, 1.0)])).unwrap(), 0.0);
        let diag = RocCurve::new(vec![(0.25, 0.25), (0.5, 0.5), (0.75, 0.75)]);
        assert!((eer(&diag).unwrap() - 0.5).abs() < 1e-12);
        let flat = RocCurve {
            points: vec![(0.3, 0.3); 3],
        };
        assert!(eer(&flat).is_err());
    }

    #[test]
    fn auc_trapezoids() {
        assert_eq!(auc(&RocCurve::new(vec![])), 0.5);
        assert_eq!(auc(&RocCurve::new(vec![(0.0, 1.0)])), 1.0);
        // staircase: (0,0) (0,.5) (.5,.5) (.5,1) (1,1)
        let c = RocCurve::new(vec![(0.0, 0.5), (0.5, 0.5), (0.5, 1.0)]);
        assert!((auc(&c) - 0.75).abs() < 1e-15);
        // (0,0) (.2,.6) (1,1): .2*.6/2 + .8*1.6/2
        let c = RocCurve::new(vec![(0.2, 0.6)]);
        assert!((auc(&c) - (0.06 + 0.64)).abs() < 1e-15);
    }

    #[test]
    fn duplicated_points_do_not_change_metrics() {
        let pts = vec![(0.1, 0.4), (0.3, 0.7), (0.6, 0.9)];
        let mut dup = pts.clone();
        dup.extend(pts.iter().copied());
        dup.push((0.3, 0.7));
        let (a, b) = (RocCurve::new(pts), RocCurve::new(dup));
        assert_eq!(auc(&a), auc(&b));
        assert_eq!(eer(&a).unwrap(), eer(&b).unwrap());
    }

    #[test]
    fn empty_sweep_rejected() {
        assert!(roc(&[], Measure::Frame, &[]).is_err());
    }

    #[test]
    fn rect_helpers_clip() {
        let mut m = Mask::empty(5, 5);
        m.fill_rect(3, 3, 10, 10);
        assert_eq!(m.count(), 4);
        assert_eq!(m.count_in_rect(0, 0, 4, 4), 1);
        assert_eq!(m.count_in_rect(4, 4, 9, 9), 1);
    }

    #[test]
    fn masks_round_trip_through_disk() {
        let mut a = Mask::empty(7, 5);
        a.fill_rect(2, 1, 3, 3);
        let masks = vec![Mask::empty(7, 5), a];
        let dir = tempfile::tempdir().unwrap();
        save_masks(dir.path(), "mask", &masks).unwrap();
        assert_eq!(load_ground_truth(dir.path(), "mask*.pgm").unwrap(), masks);
    }
}

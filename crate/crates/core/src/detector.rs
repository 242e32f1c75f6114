//! Training and streaming detection.
//!
//! Training fits the auto-encoder on small cubes of normal video, then one
//! Gaussian per view on big cubes: pooled auto-encoder features (global) and
//! SSIM neighbourhood descriptors (local). Detection consumes frames one at
//! a time and emits a [`SlabResult`] as soon as a slab of `cube_t` frames is
//! complete; only the current and the previous slab are ever needed.

use std::path::Path;
#[cfg(not(target_arch = "wasm32"))]
use std::time::Instant;

// No monotonic clock on bare wasm; slab timings read as zero there.
#[cfg(target_arch = "wasm32")]
struct Instant;

#[cfg(target_arch = "wasm32")]
impl Instant {
    fn now() -> Self {
        Instant
    }

    fn elapsed(&self) -> std::time::Duration {
        std::time::Duration::ZERO
    }
}

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autoenc::{self, AeHyper, AeModel};
use crate::classify::{
    calibrate_threshold, fit_gaussian, fuse, label_score, mahalanobis_batch, DescriptorLayout,
    FusionMode, GaussianModel, PatchLabel, DEFAULT_PERCENTILE, DEFAULT_RELATIVE_EPSILON,
};
use crate::eval::{FrameRegions, GroundTruth, Mask, Region};
use crate::localdesc::{descriptor_len, slab_descriptors, SlabView, LOCAL_LAYOUT_TAG};
use crate::ssim::SsimParams;
use crate::videoio::{build_grid, slab_cubes, Cube, CubeDims, CubeOrigin, FrameVolume, RASTER_ORDER_TAG};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Auto-encoder input cube.
    pub small: CubeDims,
    /// Classification cube.
    pub big: CubeDims,
    pub ae: AeHyper,
    pub ssim: SsimParams,
    pub global_percentile: f64,
    pub local_percentile: f64,
    /// Relative covariance ridge.
    pub epsilon: f64,
    pub fusion: FusionMode,
    /// Threshold multiplier used for the emitted masks.
    pub alpha: f64,
    /// Upper bound on small training cubes fed to the auto-encoder
    /// (sampled with `ae.seed`); 0 uses every cube.
    pub ae_max_patches: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            small: CubeDims::new(10, 10, 5),
            big: CubeDims::new(40, 40, 5),
            ae: AeHyper::default(),
            ssim: SsimParams::default(),
            global_percentile: DEFAULT_PERCENTILE,
            local_percentile: DEFAULT_PERCENTILE,
            epsilon: DEFAULT_RELATIVE_EPSILON,
            fusion: FusionMode::Both,
            alpha: 1.0,
            ae_max_patches: 10_000,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let (s, b) = (self.small, self.big);
        if s.volume() == 0 || b.volume() == 0 {
            return Err(Error::param("cube dimensions must be positive"));
        }
        if b.w % s.w != 0 || b.h % s.h != 0 {
            return Err(Error::param(format!("big cube {b} is not a multiple of small cube {s}")));
        }
        if b.t != s.t {
            return Err(Error::param(format!(
                "small and big cubes must share temporal depth ({} vs {})",
                s.t, b.t
            )));
        }
        if b.t < 2 {
            return Err(Error::param("temporal depth must be at least 2"));
        }
        for p in [self.global_percentile, self.local_percentile] {
            if !(p > 0.0 && p <= 100.0) {
                return Err(Error::param(format!("percentile {p} not in (0, 100]")));
            }
        }
        if !(self.alpha > 0.0) {
            return Err(Error::param("alpha must be positive"));
        }
        self.ae.validate()?;
        self.ssim.validate()
    }

    pub fn global_layout(&self) -> DescriptorLayout {
        DescriptorLayout::new(
            "global",
            &format!(
                "s={};small={};big={};feature={};order={RASTER_ORDER_TAG}",
                self.ae.hidden, self.small, self.big, self.ae.feature
            ),
        )
    }

    pub fn local_layout(&self) -> DescriptorLayout {
        DescriptorLayout::new(
            "local",
            &format!(
                "len={};big={};order={LOCAL_LAYOUT_TAG};ssim={},{},{},{}",
                descriptor_len(self.big.t),
                self.big,
                self.ssim.k1,
                self.ssim.k2,
                self.ssim.dynamic_range,
                self.ssim.window.map_or_else(|| "global".to_string(), |w| w.to_string())
            ),
        )
    }
}

/// Trained models for both views. `local` is absent in global-only mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    pub ae: AeModel,
    pub global: GaussianModel,
    pub local: Option<GaussianModel>,
}

pub const AE_FILE: &str = "autoencoder.bin";
pub const GLOBAL_FILE: &str = "global.bin";
pub const LOCAL_FILE: &str = "local.bin";
pub const LOSS_FILE: &str = "loss_curve.txt";

impl Models {
    /// Writes the model files plus a per-epoch loss log into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.ae.save(&dir.join(AE_FILE))?;
        self.global.save(&dir.join(GLOBAL_FILE))?;
        if let Some(l) = &self.local {
            l.save(&dir.join(LOCAL_FILE))?;
        }
        let log: String = self
            .ae
            .loss_curve
            .iter()
            .enumerate()
            .map(|(e, l)| format!("{e} {l}\n"))
            .collect();
        std::fs::write(dir.join(LOSS_FILE), log)?;
        Ok(())
    }

    /// Loads models from `dir`. The local classifier is not read in
    /// global-only mode.
    pub fn load(dir: &Path, fusion: FusionMode) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::MissingDirectory(dir.to_path_buf()));
        }
        let local = if fusion == FusionMode::GlobalOnly {
            None
        } else {
            Some(GaussianModel::load(&dir.join(LOCAL_FILE))?)
        };
        Ok(Self {
            ae: AeModel::load(&dir.join(AE_FILE))?,
            global: GaussianModel::load(&dir.join(GLOBAL_FILE))?,
            local,
        })
    }

    /// Rejects models that were trained for a different configuration.
    pub fn check(&self, cfg: &DetectorConfig) -> Result<()> {
        let mismatch = |what: &str| Err(Error::param(format!("model/config mismatch: {what}")));
        if self.ae.input_dims != cfg.small {
            return mismatch(&format!("auto-encoder input {} vs {}", self.ae.input_dims, cfg.small));
        }
        if self.global.layout != cfg.global_layout() || self.global.dim() != self.ae.feature_dim() {
            return mismatch("global descriptor layout");
        }
        if self.global.threshold.is_none() {
            return mismatch("global classifier is not calibrated");
        }
        if cfg.fusion != FusionMode::GlobalOnly {
            match &self.local {
                None => return mismatch("local classifier missing"),
                Some(l) if l.layout != cfg.local_layout() => return mismatch("local descriptor layout"),
                Some(l) if l.threshold.is_none() => return mismatch("local classifier is not calibrated"),
                _ => {}
            }
        }
        Ok(())
    }
}

fn small_training_patches(videos: &[FrameVolume], cfg: &DetectorConfig) -> Result<Vec<Vec<f64>>> {
    let mut cubes = Vec::new();
    for v in videos {
        let g = build_grid(v, cfg.small)?;
        cubes.extend(g.iter().map(|(_, c)| c.origin()).map(|o| (v, o)));
    }
    let picked: Vec<usize> = if cfg.ae_max_patches > 0 && cubes.len() > cfg.ae_max_patches {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.ae.seed ^ 0x5eed_cafe);
        let mut idx = sample(&mut rng, cubes.len(), cfg.ae_max_patches).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..cubes.len()).collect()
    };
    picked
        .into_iter()
        .map(|i| {
            let (v, o) = cubes[i];
            Ok(v.cube_at(o, cfg.small)?.rasterize())
        })
        .collect()
}

/// Global and local descriptors of every big cube of a video, in grid order.
fn big_descriptors(
    ae: &AeModel,
    v: &FrameVolume,
    cfg: &DetectorConfig,
    with_local: bool,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let g = build_grid(v, cfg.big)?;
    let mut global = Vec::with_capacity(g.len());
    let mut local = Vec::new();
    for s in 0..g.slabs() {
        global.extend(ae.encode_pooled_batch(g.slab(s))?.into_iter().map(|f| f.0));
        if with_local {
            let view = SlabView::from_grid(&g, s)?;
            local.extend(slab_descriptors(&view, &cfg.ssim)?.into_iter().map(|d| d.into_vec()));
        }
    }
    Ok((global, local))
}

/// Trains the auto-encoder and both classifiers on normal video only.
pub fn train_detector(normal_videos: &[FrameVolume], cfg: &DetectorConfig) -> Result<Models> {
    cfg.validate()?;
    if normal_videos.is_empty() {
        return Err(Error::InsufficientData("no training videos".into()));
    }
    let patches = small_training_patches(normal_videos, cfg)?;
    log::info!("training auto-encoder on {} patches of {}", patches.len(), cfg.small);
    let ae = autoenc::train(&patches, cfg.small, &cfg.ae)?;
    drop(patches);

    let with_local = cfg.fusion != FusionMode::GlobalOnly;
    let mut global_desc = Vec::new();
    let mut local_desc = Vec::new();
    for v in normal_videos {
        let (g, l) = big_descriptors(&ae, v, cfg, with_local)?;
        global_desc.extend(g);
        local_desc.extend(l);
    }
    log::info!("fitting classifiers on {} big cubes", global_desc.len());

    let need = |dim: usize, have: usize, view: &str| {
        Error::InsufficientData(format!(
            "{view} classifier needs at least {} big {} training cubes, got {have}",
            dim + 1,
            cfg.big
        ))
    };
    if global_desc.len() <= ae.feature_dim() {
        return Err(need(ae.feature_dim(), global_desc.len(), "global"));
    }
    let mut global = fit_gaussian(&global_desc, cfg.epsilon)?.with_layout(cfg.global_layout());
    global.fusion = cfg.fusion;
    calibrate_threshold(&mut global, &global_desc, cfg.global_percentile)?;

    let local = if with_local {
        let dim = descriptor_len(cfg.big.t);
        if local_desc.len() <= dim {
            return Err(need(dim, local_desc.len(), "local"));
        }
        let mut m = fit_gaussian(&local_desc, cfg.epsilon)?.with_layout(cfg.local_layout());
        m.fusion = cfg.fusion;
        calibrate_threshold(&mut m, &local_desc, cfg.local_percentile)?;
        Some(m)
    } else {
        None
    };
    Ok(Models { ae, global, local })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CubeResult {
    pub row: usize,
    pub col: usize,
    pub origin: CubeOrigin,
    pub global: PatchLabel,
    pub local: Option<PatchLabel>,
    pub fused: PatchLabel,
}

/// Verdicts for one temporal slab, row-major over the big grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SlabResult {
    pub slab: usize,
    pub t0: usize,
    pub rows: usize,
    pub cols: usize,
    pub cubes: Vec<CubeResult>,
    /// Processing time of the slab.
    pub seconds: f64,
}

impl SlabResult {
    pub fn max_fused(&self) -> f64 {
        self.cubes.iter().map(|c| c.fused.ratio).fold(0.0, f64::max)
    }
}

/// Push-based detector. Frames go in one at a time; a slab result comes out
/// as soon as its last frame arrives.
pub struct StreamingDetector<'m> {
    models: &'m Models,
    cfg: DetectorConfig,
    width: usize,
    height: usize,
    rows: usize,
    cols: usize,
    pending: Vec<Vec<u8>>,
    previous: Option<Vec<Cube>>,
    next_slab: usize,
}

impl<'m> StreamingDetector<'m> {
    pub fn new(models: &'m Models, cfg: &DetectorConfig, width: usize, height: usize) -> Result<Self> {
        cfg.validate()?;
        models.check(cfg)?;
        if cfg.big.w > width || cfg.big.h > height {
            return Err(Error::dims(format!(
                "big cube {} does not fit {width}x{height} frames",
                cfg.big
            )));
        }
        Ok(Self {
            models,
            cfg: cfg.clone(),
            width,
            height,
            rows: height / cfg.big.h,
            cols: width / cfg.big.w,
            pending: Vec::with_capacity(cfg.big.t),
            previous: None,
            next_slab: 0,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn push_frame(&mut self, frame: Vec<u8>) -> Result<Option<SlabResult>> {
        if frame.len() != self.width * self.height {
            return Err(Error::dims(format!(
                "frame has {} pixels, stream expects {}x{}",
                frame.len(),
                self.width,
                self.height
            )));
        }
        self.pending.push(frame);
        if self.pending.len() < self.cfg.big.t {
            return Ok(None);
        }
        let start = Instant::now();
        let slab = self.next_slab;
        let t0 = slab * self.cfg.big.t;
        let refs: Vec<&[u8]> = self.pending.iter().map(Vec::as_slice).collect();
        let cubes = slab_cubes(&refs, self.width, self.height, self.cfg.big, t0)?;
        let results = self.score_slab(&cubes)?;
        self.pending.clear();
        self.previous = Some(cubes);
        self.next_slab += 1;
        Ok(Some(SlabResult {
            slab,
            t0,
            rows: self.rows,
            cols: self.cols,
            cubes: results,
            seconds: start.elapsed().as_secs_f64(),
        }))
    }

    fn score_slab(&self, cubes: &[Cube]) -> Result<Vec<CubeResult>> {
        let m = self.models;
        let alpha = self.cfg.alpha;
        let feats: Vec<Vec<f64>> = m
            .ae
            .encode_pooled_batch(cubes)?
            .into_iter()
            .map(|f| f.0)
            .collect();
        let g_scores = mahalanobis_batch(&m.global, &feats)?;
        let g_thr = m.global.threshold.expect("checked at construction");

        let local = match (self.cfg.fusion, &m.local) {
            (FusionMode::GlobalOnly, _) | (_, None) => None,
            (_, Some(lm)) => {
                let view = SlabView {
                    rows: self.rows,
                    cols: self.cols,
                    current: cubes,
                    previous: self.previous.as_deref(),
                };
                let desc: Vec<Vec<f64>> = slab_descriptors(&view, &self.cfg.ssim)?
                    .into_iter()
                    .map(|d| d.into_vec())
                    .collect();
                let thr = lm.threshold.expect("checked at construction");
                Some((mahalanobis_batch(lm, &desc)?, thr))
            }
        };

        Ok(cubes
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let global = label_score(g_thr, g_scores[i], alpha);
                let local = local.as_ref().map(|(s, t)| label_score(*t, s[i], alpha));
                let fused = match local {
                    Some(l) => fuse(global, l, self.cfg.fusion),
                    None => fuse(global, global, FusionMode::GlobalOnly),
                };
                CubeResult {
                    row: i / self.cols,
                    col: i % self.cols,
                    origin: c.origin(),
                    global,
                    local,
                    fused,
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub big: CubeDims,
    pub slabs: Vec<SlabResult>,
    /// Fused-anomalous cube footprints per frame.
    pub masks: Vec<Mask>,
    /// Max fused score ratio over the cubes covering each frame (0 for
    /// frames past the last full slab).
    pub frame_scores: Vec<f64>,
    pub seconds_per_frame: f64,
}

impl DetectionResult {
    /// Scored cube footprints per frame, with their overlap against `gt`.
    pub fn frame_regions(&self, gt: &GroundTruth) -> Result<Vec<FrameRegions>> {
        if gt.len() != self.frames {
            return Err(Error::dims(format!(
                "{} ground-truth masks for {} frames",
                gt.len(),
                self.frames
            )));
        }
        let mut out: Vec<FrameRegions> = gt
            .iter()
            .map(|m| FrameRegions {
                regions: Vec::new(),
                gt_pixels: m.count(),
            })
            .collect();
        for s in &self.slabs {
            for t in s.t0..s.t0 + self.big.t {
                let g = &gt[t];
                if g.width != self.width || g.height != self.height {
                    return Err(Error::dims("ground-truth mask size differs from frames"));
                }
                out[t].regions = s
                    .cubes
                    .iter()
                    .map(|c| Region {
                        score: c.fused.ratio,
                        area: self.big.area(),
                        gt_overlap: g.count_in_rect(c.origin.x, c.origin.y, self.big.w, self.big.h),
                    })
                    .collect();
            }
        }
        Ok(out)
    }
}

/// Runs the streaming detector over a whole volume.
pub fn detect(models: &Models, test: &FrameVolume, cfg: &DetectorConfig) -> Result<DetectionResult> {
    let mut det = StreamingDetector::new(models, cfg, test.width(), test.height())?;
    let mut slabs = Vec::new();
    for f in test.frames() {
        if let Some(r) = det.push_frame(f.clone())? {
            slabs.push(r);
        }
    }
    let mut masks = vec![Mask::empty(test.width(), test.height()); test.len()];
    let mut frame_scores = vec![0.0; test.len()];
    for s in &slabs {
        let mut m = Mask::empty(test.width(), test.height());
        for c in s.cubes.iter().filter(|c| c.fused.is_anomaly()) {
            m.fill_rect(c.origin.x, c.origin.y, cfg.big.w, cfg.big.h);
        }
        for t in s.t0..s.t0 + cfg.big.t {
            masks[t] = m.clone();
            frame_scores[t] = s.max_fused();
        }
    }
    let processed = slabs.len() * cfg.big.t;
    let total: f64 = slabs.iter().map(|s| s.seconds).sum();
    Ok(DetectionResult {
        width: test.width(),
        height: test.height(),
        frames: test.len(),
        big: cfg.big,
        slabs,
        masks,
        frame_scores,
        seconds_per_frame: if processed > 0 { total / processed as f64 } else { 0.0 },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchStats {
    /// Seconds per frame, one sample per processed slab per repeat.
    pub samples: Vec<f64>,
    pub median: f64,
    pub p95: f64,
}

/// Times the detect path (no disk I/O) `repeats` times.
pub fn benchmark(models: &Models, test: &FrameVolume, cfg: &DetectorConfig, repeats: usize) -> Result<BenchStats> {
    let mut samples = Vec::new();
    for _ in 0..repeats.max(1) {
        let r = detect(models, test, cfg)?;
        samples.extend(r.slabs.iter().map(|s| s.seconds / cfg.big.t as f64));
    }
    if samples.is_empty() {
        return Err(Error::InsufficientData(format!(
            "video of {} frames holds no complete {}-frame slab",
            test.len(),
            cfg.big.t
        )));
    }
    let median = crate::classify::percentile(&samples, 50.0)?;
    let p95 = crate::classify::percentile(&samples, 95.0)?;
    Ok(BenchStats { samples, median, p95 })
}

/// Line-oriented detection report.
///
/// ```text
/// # cubescan detect report v1
/// # key=value                      (provenance header)
/// frame <t> slab=<s> max=<ratio> labels=<row>/<row>/...
/// cube slab=<s> row=<r> col=<c> x=<x> y=<y> global=<ratio> local=<ratio|-> fused=<ratio> label=<N|A>
/// ```
///
/// Label characters: `.` normal in both views, `g` global only, `l` local
/// only, `b` both views but fused normal, `A` fused anomaly.
pub fn format_report(r: &DetectionResult, header: &[(String, String)]) -> String {
    use std::fmt::Write;
    let mut out = String::from("# cubescan detect report v1\n");
    let _ = writeln!(out, "# width={}", r.width);
    let _ = writeln!(out, "# height={}", r.height);
    let _ = writeln!(out, "# frames={}", r.frames);
    let _ = writeln!(out, "# cube={}", r.big);
    for (k, v) in header {
        let _ = writeln!(out, "# {k}={v}");
    }
    let mut by_frame: Vec<Option<&SlabResult>> = vec![None; r.frames];
    for s in &r.slabs {
        for t in s.t0..s.t0 + r.big.t {
            by_frame[t] = Some(s);
        }
    }
    for (t, s) in by_frame.iter().enumerate() {
        match s {
            Some(s) => {
                let rows: Vec<String> = s
                    .cubes
                    .chunks(s.cols)
                    .map(|row| row.iter().map(label_char).collect())
                    .collect();
                let _ = writeln!(out, "frame {t} slab={} max={} labels={}", s.slab, s.max_fused(), rows.join("/"));
            }
            None => {
                let _ = writeln!(out, "frame {t} slab=- max=0 labels=-");
            }
        }
    }
    for s in &r.slabs {
        for c in &s.cubes {
            let local = c.local.map_or_else(|| "-".to_string(), |l| l.ratio.to_string());
            let _ = writeln!(
                out,
                "cube slab={} row={} col={} x={} y={} global={} local={} fused={} label={}",
                s.slab,
                c.row,
                c.col,
                c.origin.x,
                c.origin.y,
                c.global.ratio,
                local,
                c.fused.ratio,
                if c.fused.is_anomaly() { 'A' } else { 'N' }
            );
        }
    }
    out
}

fn label_char(c: &CubeResult) -> char {
    let g = c.global.is_anomaly();
    let l = c.local.is_some_and(|l| l.is_anomaly());
    match (c.fused.is_anomaly(), g, l) {
        (true, _, _) => 'A',
        (false, true, true) => 'b',
        (false, true, false) => 'g',
        (false, false, true) => 'l',
        (false, false, false) => '.',
    }
}

/// Cube records recovered from a detection report.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedReport {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub big: CubeDims,
    /// `(slab, x, y, fused ratio)`
    pub cubes: Vec<(usize, usize, usize, f64)>,
}

impl ParsedReport {
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: &str| Error::Format(format!("bad report line `{line}`"));
        let mut header = std::collections::HashMap::new();
        let mut cubes = Vec::new();
        for line in text.lines() {
            if let Some(kv) = line.strip_prefix("# ") {
                if let Some((k, v)) = kv.split_once('=') {
                    header.insert(k.to_string(), v.to_string());
                }
                continue;
            }
            if let Some(rest) = line.strip_prefix("cube ") {
                let fields: std::collections::HashMap<&str, &str> =
                    rest.split(' ').filter_map(|f| f.split_once('=')).collect();
                let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(line));
                let num = |k: &str| get(k)?.parse::<usize>().map_err(|_| bad(line));
                let fused = get("fused")?.parse::<f64>().map_err(|_| bad(line))?;
                cubes.push((num("slab")?, num("x")?, num("y")?, fused));
            }
        }
        let h = |k: &str| -> Result<usize> {
            header
                .get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("report header lacks `{k}`")))
        };
        let cube = header
            .get("cube")
            .ok_or_else(|| Error::Format("report header lacks `cube`".into()))?;
        let dims: Vec<usize> = cube.split('x').filter_map(|v| v.parse().ok()).collect();
        if dims.len() != 3 {
            return Err(Error::Format(format!("bad cube dims `{cube}`")));
        }
        Ok(Self {
            width: h("width")?,
            height: h("height")?,
            frames: h("frames")?,
            big: CubeDims::new(dims[0], dims[1], dims[2]),
            cubes,
        })
    }

    pub fn frame_regions(&self, gt: &GroundTruth) -> Result<Vec<FrameRegions>> {
        if gt.len() != self.frames {
            return Err(Error::dims(format!(
                "{} ground-truth masks for {} frames",
                gt.len(),
                self.frames
            )));
        }
        if gt.iter().any(|m| m.width != self.width || m.height != self.height) {
            return Err(Error::dims("ground-truth mask size differs from frames"));
        }
        let mut out: Vec<FrameRegions> = gt
            .iter()
            .map(|m| FrameRegions {
                regions: Vec::new(),
                gt_pixels: m.count(),
            })
            .collect();
        let b = self.big;
        for &(slab, x, y, score) in &self.cubes {
            for t in slab * b.t..((slab + 1) * b.t).min(self.frames) {
                out[t].regions.push(Region {
                    score,
                    area: b.area(),
                    gt_overlap: gt[t].count_in_rect(x, y, b.w, b.h),
                });
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate, AnomalySpec, SceneSpec};

    pub(crate) fn tiny_cfg() -> DetectorConfig {
        DetectorConfig {
            small: CubeDims::new(5, 5, 3),
            big: CubeDims::new(10, 10, 3),
            ae: AeHyper {
                hidden: 12,
                epochs: 3,
                batch: 32,
                lr: 1e-3,
                seed: 3,
                ..Default::default()
            },
            ae_max_patches: 1500,
            ..Default::default()
        }
    }

    fn scene(seed: u64, anomaly: bool) -> SceneSpec {
        SceneSpec {
            width: 80,
            height: 60,
            frames: 60,
            walkers: 5,
            walker_size: [4, 7],
            walker_speed: [0.5, 1.0],
            anomalies: if anomaly {
                vec![AnomalySpec {
                    size: [16, 20],
                    speed: [3.0, 4.0],
                    onset: 30,
                    ..Default::default()
                }]
            } else {
                vec![]
            },
            seed,
            ..Default::default()
        }
    }

    fn trained() -> (Models, DetectorConfig) {
        let cfg = tiny_cfg();
        let videos: Vec<FrameVolume> = (0..3).map(|s| generate(&scene(10 + s, false)).unwrap().0).collect();
        (train_detector(&videos, &cfg).unwrap(), cfg)
    }

    #[test]
    fn config_validation() {
        assert!(DetectorConfig::default().validate().is_ok());
        let bad = DetectorConfig {
            big: CubeDims::new(35, 40, 5),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = DetectorConfig {
            big: CubeDims::new(40, 40, 4),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn train_then_detect_shapes() {
        let (m, cfg) = trained();
        assert_eq!(m.global.dim(), 12);
        assert_eq!(m.local.as_ref().unwrap().dim(), descriptor_len(3));
        let (test, gt) = generate(&scene(50, true)).unwrap();
        let r = detect(&m, &test, &cfg).unwrap();
        assert_eq!(r.slabs.len(), 20);
        assert_eq!(r.masks.len(), 60);
        assert_eq!(r.slabs[0].cubes.len(), 6 * 8);
        let regions = r.frame_regions(&gt).unwrap();
        assert_eq!(regions[0].regions.len(), 48);
    }

    #[test]
    fn mask_matches_flagged_footprints() {
        let (m, mut cfg) = trained();
        cfg.alpha = 0.5;
        let (test, _) = generate(&scene(51, true)).unwrap();
        let r = detect(&m, &test, &cfg).unwrap();
        for s in &r.slabs {
            for t in s.t0..s.t0 + 3 {
                let mask = &r.masks[t];
                let mut expect = Mask::empty(80, 60);
                for c in s.cubes.iter().filter(|c| c.fused.is_anomaly()) {
                    assert_eq!(mask.count_in_rect(c.origin.x, c.origin.y, 10, 10), 100);
                    expect.fill_rect(c.origin.x, c.origin.y, 10, 10);
                }
                assert_eq!(mask, &expect);
            }
        }
    }

    #[test]
    fn training_video_at_full_percentile_is_clean() {
        let mut cfg = tiny_cfg();
        cfg.global_percentile = 100.0;
        cfg.local_percentile = 100.0;
        let v = generate(&scene(12, false)).unwrap().0;
        let m = train_detector(std::slice::from_ref(&v), &cfg).unwrap();
        let r = detect(&m, &v, &cfg).unwrap();
        assert!(r.masks.iter().all(Mask::is_empty));
    }

    #[test]
    fn growing_alpha_never_grows_mask() {
        let (m, mut cfg) = trained();
        let (test, _) = generate(&scene(52, true)).unwrap();
        let mut prev: Option<Vec<Mask>> = None;
        for alpha in [0.25, 0.5, 1.0, 2.0, 8.0] {
            cfg.alpha = alpha;
            let r = detect(&m, &test, &cfg).unwrap();
            if let Some(p) = &prev {
                for (a, b) in r.masks.iter().zip(p) {
                    assert!(a.bits.iter().zip(&b.bits).all(|(&x, &y)| !x || y));
                }
            }
            prev = Some(r.masks);
        }
    }

    #[test]
    fn streaming_is_causal() {
        let (m, cfg) = trained();
        let (test, _) = generate(&scene(53, true)).unwrap();
        let full = detect(&m, &test, &cfg).unwrap();
        // scramble everything after slab 6
        let mut frames = test.clone().into_frames();
        for f in frames.iter_mut().skip(21) {
            f.iter_mut().for_each(|v| *v = 255 - *v);
        }
        let altered = FrameVolume::new(80, 60, frames).unwrap();
        let other = detect(&m, &altered, &cfg).unwrap();
        for k in 0..7 {
            assert_eq!(full.slabs[k].cubes, other.slabs[k].cubes);
        }
        assert_ne!(full.slabs[7].cubes, other.slabs[7].cubes);
    }

    #[test]
    fn global_only_needs_no_local_model() {
        let (mut m, mut cfg) = trained();
        cfg.fusion = FusionMode::GlobalOnly;
        m.global.layout = cfg.global_layout();
        m.local = None;
        let (test, _) = generate(&scene(54, true)).unwrap();
        let r = detect(&m, &test, &cfg).unwrap();
        assert!(r.slabs.iter().flat_map(|s| &s.cubes).all(|c| c.local.is_none()));
        cfg.fusion = FusionMode::Both;
        assert!(detect(&m, &test, &cfg).is_err());
    }

    #[test]
    fn mismatched_config_rejected() {
        let (m, mut cfg) = trained();
        cfg.ssim.k1 = 0.02;
        let (test, _) = generate(&scene(55, false)).unwrap();
        assert!(matches!(detect(&m, &test, &cfg), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn too_little_training_data_reports_count() {
        let cfg = DetectorConfig {
            ae: AeHyper {
                hidden: 200,
                epochs: 1,
                ..tiny_cfg().ae
            },
            ..tiny_cfg()
        };
        let v = generate(&SceneSpec {
            frames: 9,
            ..scene(1, false)
        })
        .unwrap()
        .0;
        match train_detector(&[v], &cfg) {
            Err(Error::InsufficientData(msg)) => assert!(msg.contains("201"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn report_round_trips_regions() {
        let (m, cfg) = trained();
        let (test, gt) = generate(&scene(56, true)).unwrap();
        let r = detect(&m, &test, &cfg).unwrap();
        let text = format_report(&r, &[("seed".into(), "3".into())]);
        assert!(text.lines().filter(|l| l.starts_with("frame ")).count() == 60);
        let parsed = ParsedReport::parse(&text).unwrap();
        assert_eq!(parsed.frame_regions(&gt).unwrap(), r.frame_regions(&gt).unwrap());
    }

    #[test]
    fn model_dir_round_trip() {
        let (m, cfg) = trained();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = Models::load(dir.path(), cfg.fusion).unwrap();
        assert_eq!(back, m);
        std::fs::remove_file(dir.path().join(LOCAL_FILE)).unwrap();
        assert!(Models::load(dir.path(), FusionMode::Both).is_err());
        let g = Models::load(dir.path(), FusionMode::GlobalOnly).unwrap();
        assert!(g.local.is_none());
    }

    #[test]
    fn bench_single_slab() {
        let (m, cfg) = trained();
        let v = generate(&SceneSpec {
            frames: 3,
            ..scene(57, false)
        })
        .unwrap()
        .0;
        let b = benchmark(&m, &v, &cfg, 1).unwrap();
        assert_eq!(b.samples.len(), 1);
        assert!(b.median >= 0.0);
    }
}

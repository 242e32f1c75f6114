//! Browser demo: synthesize a small crowd scene, train a scaled-down
//! detector on normal footage, and scrub through the test video with the
//! detections and ground truth overlaid.

use cubescan::autoenc::AeHyper;
use cubescan::classify::FusionMode;
use cubescan::detector::{detect, train_detector, DetectionResult, DetectorConfig, Models};
use cubescan::eval::{alpha_sweep, summarize, GroundTruth, Measure};
use cubescan::synthgen::{generate, AnomalySpec, SceneSpec};
use cubescan::videoio::FrameVolume;
#[cfg(target_arch = "wasm32")]
use wasm_bindgen::prelude::wasm_bindgen;

const WIDTH: usize = 160;
const HEIGHT: usize = 120;
const FRAMES: usize = 80;
const TRAIN_SCENES: u64 = 3;

fn scene(seed: u64, anomalies: Vec<AnomalySpec>) -> SceneSpec {
    SceneSpec {
        width: WIDTH,
        height: HEIGHT,
        frames: FRAMES,
        walkers: 10,
        walker_size: [6, 10],
        anomalies,
        seed,
        ..Default::default()
    }
}

fn err(e: cubescan::Error) -> String {
    e.to_string()
}

#[cfg_attr(target_arch = "wasm32", wasm_bindgen)]
pub struct Demo {
    train: Vec<FrameVolume>,
    test: FrameVolume,
    gt: GroundTruth,
    cfg: DetectorConfig,
    models: Option<Models>,
    result: Option<DetectionResult>,
}

#[cfg_attr(target_arch = "wasm32", wasm_bindgen)]
impl Demo {
    /// Renders the normal training scenes and one test scene whose anomaly
    /// appears at `onset`.
    #[cfg_attr(target_arch = "wasm32", wasm_bindgen(constructor))]
    pub fn new(seed: u64, onset: usize) -> Result<Demo, String> {
        let train = (0..TRAIN_SCENES)
            .map(|i| generate(&scene(seed * 100 + i, Vec::new())).map(|(v, _)| v))
            .collect::<Result<Vec<_>, _>>()
            .map_err(err)?;
        let anomaly = AnomalySpec {
            size: [20, 26],
            speed: [3.0, 5.0],
            onset,
            ..Default::default()
        };
        let (test, gt) = generate(&scene(seed * 100 + 99, vec![anomaly])).map_err(err)?;
        let cfg = DetectorConfig {
            ae: AeHyper {
                hidden: 48,
                epochs: 3,
                seed,
                ..Default::default()
            },
            ae_max_patches: 2000,
            ..Default::default()
        };
        Ok(Demo {
            train,
            test,
            gt,
            cfg,
            models: None,
            result: None,
        })
    }

    pub fn width(&self) -> usize {
        WIDTH
    }

    pub fn height(&self) -> usize {
        HEIGHT
    }

    pub fn frames(&self) -> usize {
        self.test.len()
    }

    pub fn trained(&self) -> bool {
        self.models.is_some()
    }

    /// Fits the auto-encoder and both Gaussian models. Returns a one-line
    /// summary.
    pub fn train(&mut self, hidden: usize, epochs: usize) -> Result<String, String> {
        self.cfg.ae.hidden = hidden;
        self.cfg.ae.epochs = epochs;
        let models = train_detector(&self.train, &self.cfg).map_err(err)?;
        let line = format!(
            "loss {:.4}, global threshold {:.2}, local threshold {:.2}",
            models.ae.loss_curve.last().copied().unwrap_or(f64::NAN),
            models.global.threshold.unwrap_or(f64::NAN),
            models.local.as_ref().and_then(|l| l.threshold).unwrap_or(f64::NAN)
        );
        self.models = Some(models);
        self.result = None;
        Ok(line)
    }

    /// Scores the test video. `fusion` is 0 for both views, 1 for either
    /// view, 2 for the global view only.
    pub fn detect(&mut self, alpha: f64, fusion: u8) -> Result<usize, String> {
        let models = self.models.as_ref().ok_or("train first")?;
        self.cfg.alpha = alpha;
        self.cfg.fusion = match fusion {
            0 => FusionMode::Both,
            1 => FusionMode::Either,
            _ => FusionMode::GlobalOnly,
        };
        let r = detect(models, &self.test, &self.cfg).map_err(err)?;
        let flagged = r.masks.iter().filter(|m| !m.is_empty()).count();
        self.result = Some(r);
        Ok(flagged)
    }

    /// Frame `t` as RGBA: detections tinted red, ground truth outlined green.
    pub fn frame_rgba(&self, t: usize) -> Vec<u8> {
        let t = t.min(self.test.len() - 1);
        let frame = self.test.frame(t);
        let gt = &self.gt[t];
        let det = self.result.as_ref().map(|r| &r.masks[t]);
        let mut out = Vec::with_capacity(frame.len() * 4);
        for (i, &g) in frame.iter().enumerate() {
            let (x, y) = (i % WIDTH, i / WIDTH);
            let mut px = [g, g, g];
            if det.is_some_and(|m| m.bits[i]) {
                px = [g / 2 + 127, g / 2, g / 2];
            }
            if gt.bits[i] && on_edge(gt, x, y) {
                px = [0, 230, 0];
            }
            out.extend_from_slice(&[px[0], px[1], px[2], 255]);
        }
        out
    }

    /// Per-frame anomaly score (max fused ratio), or empty before detection.
    pub fn frame_scores(&self) -> Vec<f64> {
        self.result.as_ref().map(|r| r.frame_scores.clone()).unwrap_or_default()
    }

    /// Which frames carry ground truth, as 0/1.
    pub fn gt_frames(&self) -> Vec<u8> {
        self.gt.iter().map(|m| u8::from(!m.is_empty())).collect()
    }

    /// EER and AUC for the frame and pixel measures, one per line.
    pub fn evaluate(&self) -> Result<String, String> {
        let r = self.result.as_ref().ok_or("detect first")?;
        let frames = r.frame_regions(&self.gt).map_err(err)?;
        let alphas = alpha_sweep(&frames, 500);
        let mut out = String::new();
        for m in [Measure::Frame, Measure::Pixel, Measure::DualPixel(0.1)] {
            let s = summarize(&frames, m, &alphas).map_err(err)?;
            out += &format!("{m}: EER {:.3}, AUC {:.3}\n", s.eer, s.auc);
        }
        Ok(out)
    }
}

fn on_edge(m: &cubescan::eval::Mask, x: usize, y: usize) -> bool {
    let inside = |x: isize, y: isize| {
        x >= 0 && y >= 0 && (x as usize) < m.width && (y as usize) < m.height && m.bits[y as usize * m.width + x as usize]
    };
    let (x, y) = (x as isize, y as isize);
    !(inside(x - 1, y) && inside(x + 1, y) && inside(x, y - 1) && inside(x, y + 1))
}

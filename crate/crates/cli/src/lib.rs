//! Command implementations behind the `cubescan` binary.
//!
//! Each `cmd_*` function takes a fully resolved [`RunConfig`] and returns
//! the text it would print, so commands can be driven from tests.

mod config;

use std::path::{Path, PathBuf};

use cubescan::detector::{benchmark, detect, format_report, train_detector, Models, ParsedReport};
use cubescan::eval::{self, alpha_sweep, load_ground_truth, save_masks, summarize, FrameRegions};
use cubescan::synthgen::{generate, SceneSpec};
use cubescan::videoio::{load_frame_sequence, save_frame_sequence};

pub use config::{BenchConfig, Command, EvalConfig, MeasureKind, Paths, RunConfig};

pub const FRAMES_DIR: &str = "frames";
pub const GT_DIR: &str = "gt";
pub const MASKS_DIR: &str = "masks";
pub const REPORT_FILE: &str = "report.txt";
pub const EVAL_FILE: &str = "eval.txt";
pub const CONFIG_FILE: &str = "config.toml";
pub const SCENE_FILE: &str = "scene.toml";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] cubescan::Error),
}

impl CliError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numeric, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use cubescan::Error as E;
        match self {
            CliError::Config(_) | CliError::Core(E::InvalidParameter(_)) => 2,
            CliError::Core(E::Numeric(_)) => 4,
            CliError::Io { .. } | CliError::Core(E::Io(_)) => 1,
            CliError::Core(_) => 3,
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn load_scene(path: &Path) -> Result<SceneSpec, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Renders a scene into `out/frames` and `out/gt`, and records the spec used.
pub fn cmd_synth(spec: &SceneSpec, out: &Path) -> Result<String, CliError> {
    let (video, gt) = generate(spec)?;
    save_frame_sequence(&out.join(FRAMES_DIR), "frame", &video)?;
    save_masks(&out.join(GT_DIR), "gt", &gt)?;
    let text = toml::to_string(spec).map_err(|e| CliError::Config(e.to_string()))?;
    write_text(&out.join(SCENE_FILE), &text)?;
    let anomalous = gt.iter().filter(|m| !m.is_empty()).count();
    Ok(format!(
        "wrote {} frames ({}x{}), {} with anomalies, to {}\n",
        video.len(),
        video.width(),
        video.height(),
        anomalous,
        out.display()
    ))
}

pub fn cmd_train(cfg: &RunConfig) -> Result<String, CliError> {
    cfg.require(Command::Train)?;
    let det = cfg.detector();
    let videos = cfg
        .paths
        .train
        .iter()
        .map(|d| load_frame_sequence(d, &cfg.frame_pattern))
        .collect::<Result<Vec<_>, _>>()?;
    let models = train_detector(&videos, &det)?;
    let dir = cfg.paths.model.as_deref().expect("checked by require");
    models.save(dir)?;
    #[derive(serde::Serialize)]
    struct Used<'a> {
        detector: &'a cubescan::detector::DetectorConfig,
    }
    let used = toml::to_string(&Used { detector: &det }).map_err(|e| CliError::Config(e.to_string()))?;
    write_text(&dir.join(CONFIG_FILE), &used)?;

    let mut out = format!(
        "trained on {} videos; feature dim {}; sparsity {}\n",
        videos.len(),
        models.ae.feature_dim(),
        models.ae.hyper.rho
    );
    out += &format!(
        "final auto-encoder loss {}\n",
        models.ae.loss_curve.last().copied().unwrap_or(f64::NAN)
    );
    out += &format!("global threshold {}\n", models.global.threshold.unwrap_or(f64::NAN));
    if let Some(l) = &models.local {
        out += &format!("local threshold {}\n", l.threshold.unwrap_or(f64::NAN));
    }
    Ok(out)
}

pub fn cmd_detect(cfg: &RunConfig) -> Result<String, CliError> {
    cfg.require(Command::Detect)?;
    let det = cfg.detector();
    let p = &cfg.paths;
    let models = Models::load(p.model.as_deref().expect("checked"), det.fusion)?;
    let test = load_frame_sequence(p.test.as_deref().expect("checked"), &cfg.frame_pattern)?;
    let result = detect(&models, &test, &det)?;
    let out = p.out.as_deref().expect("checked");
    save_masks(&out.join(MASKS_DIR), "mask", &result.masks)?;
    let mut header = cfg.provenance();
    header.push(("global.threshold".into(), fmt_opt(models.global.threshold)));
    if let Some(l) = &models.local {
        header.push(("local.threshold".into(), fmt_opt(l.threshold)));
    }
    write_text(&out.join(REPORT_FILE), &format_report(&result, &header))?;
    let flagged = result.masks.iter().filter(|m| !m.is_empty()).count();
    Ok(format!(
        "{} frames, {} slabs, {} frames flagged; {:.4} s/frame\n",
        result.frames,
        result.slabs.len(),
        flagged,
        result.seconds_per_frame
    ))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |t| t.to_string())
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<String, CliError> {
    cfg.require(Command::Eval)?;
    let p = &cfg.paths;
    let gt = load_ground_truth(p.gt.as_deref().expect("checked"), &cfg.mask_pattern)?;
    let frames: Vec<FrameRegions> = match (&p.report, &p.masks) {
        (Some(r), _) => {
            let text = std::fs::read_to_string(r).map_err(|e| CliError::io(r, e))?;
            ParsedReport::parse(&text)?.frame_regions(&gt)?
        }
        (None, Some(dir)) => {
            let masks = load_ground_truth(dir, &cfg.mask_pattern)?;
            if masks.len() != gt.len() {
                return Err(cubescan::Error::DimensionMismatch(format!(
                    "{} masks for {} ground-truth frames",
                    masks.len(),
                    gt.len()
                ))
                .into());
            }
            masks
                .iter()
                .zip(&gt)
                .map(|(m, g)| FrameRegions::from_mask(m, g))
                .collect::<Result<_, _>>()?
        }
        (None, None) => unreachable!("checked by require"),
    };
    let alphas = if cfg.eval.alphas.is_empty() {
        alpha_sweep(&frames, cfg.eval.max_alphas)
    } else {
        cfg.eval.alphas.clone()
    };
    let summaries = cfg
        .eval
        .measures()
        .into_iter()
        .map(|m| summarize(&frames, m, &alphas))
        .collect::<Result<Vec<_>, _>>()?;
    let header = vec![
        ("frames".to_string(), gt.len().to_string()),
        (
            "source".to_string(),
            if p.report.is_some() { "report" } else { "masks" }.to_string(),
        ),
    ];
    let text = eval::format_report(&summaries, &alphas, &header);
    if let Some(out) = &p.out {
        std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
        write_text(&out.join(EVAL_FILE), &text)?;
    }
    Ok(summaries
        .iter()
        .map(|s| format!("{:<24} EER {:.4}  AUC {:.4}\n", s.measure.to_string(), s.eer, s.auc))
        .collect())
}

/// Outcome of a throughput run against the configured target and limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchStatus {
    Ok,
    Warn,
    Fail,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub median: f64,
    pub p95: f64,
    pub samples: usize,
    /// Median of each repeat.
    pub repeat_medians: Vec<f64>,
    pub status: BenchStatus,
}

impl BenchReport {
    pub fn render(&self, b: &BenchConfig) -> String {
        let spread = if self.median > 0.0 {
            let (lo, hi) = self
                .repeat_medians
                .iter()
                .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            (hi - lo) / self.median
        } else {
            0.0
        };
        let meds: Vec<String> = self.repeat_medians.iter().map(|v| format!("{v:.6}")).collect();
        format!(
            "# cubescan bench report v1\nmedian_s_per_frame={:.6}\np95_s_per_frame={:.6}\nsamples={}\nrepeat_medians={}\nrepeat_spread={:.3}\ntarget={}\nlimit={}\nstatus={}\n",
            self.median,
            self.p95,
            self.samples,
            meds.join(","),
            spread,
            b.target,
            b.limit,
            match self.status {
                BenchStatus::Ok => "ok",
                BenchStatus::Warn => "warn",
                BenchStatus::Fail => "fail",
            }
        )
    }
}

pub fn run_bench(cfg: &RunConfig) -> Result<BenchReport, CliError> {
    cfg.require(Command::Bench)?;
    let det = cfg.detector();
    let p = &cfg.paths;
    let models = Models::load(p.model.as_deref().expect("checked"), det.fusion)?;
    let test = load_frame_sequence(p.test.as_deref().expect("checked"), &cfg.frame_pattern)?;
    let repeats = cfg.bench.repeats;
    let stats = benchmark(&models, &test, &det, repeats)?;
    let per = stats.samples.len() / repeats;
    let repeat_medians = stats
        .samples
        .chunks(per)
        .map(|c| cubescan::classify::percentile(c, 50.0))
        .collect::<Result<Vec<_>, _>>()?;
    let status = if stats.median > cfg.bench.limit {
        BenchStatus::Fail
    } else if stats.median > cfg.bench.target {
        BenchStatus::Warn
    } else {
        BenchStatus::Ok
    };
    Ok(BenchReport {
        median: stats.median,
        p95: stats.p95,
        samples: stats.samples.len(),
        repeat_medians,
        status,
    })
}

pub fn cmd_bench(cfg: &RunConfig) -> Result<String, CliError> {
    let r = run_bench(cfg)?;
    if r.status == BenchStatus::Warn {
        log::warn!("median {:.4} s/frame is above the {} s target", r.median, cfg.bench.target);
    }
    Ok(r.render(&cfg.bench))
}

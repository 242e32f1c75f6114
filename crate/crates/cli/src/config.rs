use std::path::{Path, PathBuf};

use cubescan::detector::DetectorConfig;
use cubescan::eval::Measure;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything a command needs, loadable from one TOML file. Command-line
/// flags override individual fields after loading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides the auto-encoder seed when set.
    pub seed: Option<u64>,
    /// Glob for frame files inside frame directories.
    pub frame_pattern: String,
    /// Glob for mask files inside mask and ground-truth directories.
    pub mask_pattern: String,
    pub paths: Paths,
    pub detector: DetectorConfig,
    pub eval: EvalConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            frame_pattern: "*.pgm".into(),
            mask_pattern: "*.pgm".into(),
            paths: Paths::default(),
            detector: DetectorConfig::default(),
            eval: EvalConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directories of normal training frames.
    pub train: Vec<PathBuf>,
    pub test: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Detection report to evaluate.
    pub report: Option<PathBuf>,
    /// Binary masks to evaluate when no report is given.
    pub masks: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasureKind {
    Frame,
    Pixel,
    DualPixel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub measures: Vec<MeasureKind>,
    /// Precision fractions for the dual pixel-level measure.
    pub betas: Vec<f64>,
    /// Explicit threshold multipliers; empty sweeps every distinct score.
    pub alphas: Vec<f64>,
    /// Cap on swept multipliers.
    pub max_alphas: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            measures: vec![MeasureKind::Frame, MeasureKind::Pixel, MeasureKind::DualPixel],
            betas: vec![0.0, 0.05, 0.10],
            alphas: Vec::new(),
            max_alphas: 1000,
        }
    }
}

impl EvalConfig {
    pub fn measures(&self) -> Vec<Measure> {
        let mut out = Vec::new();
        for m in &self.measures {
            match m {
                MeasureKind::Frame => out.push(Measure::Frame),
                MeasureKind::Pixel => out.push(Measure::Pixel),
                MeasureKind::DualPixel => out.extend(self.betas.iter().map(|&b| Measure::DualPixel(b))),
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub repeats: usize,
    /// Seconds per frame considered real time.
    pub target: f64,
    /// Seconds per frame above which the benchmark fails.
    pub limit: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            repeats: 5,
            target: 0.04,
            limit: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Synth,
    Train,
    Detect,
    Eval,
    Bench,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Detector settings with the seed override applied.
    pub fn detector(&self) -> DetectorConfig {
        let mut d = self.detector.clone();
        if let Some(s) = self.seed {
            d.ae.seed = s;
        }
        d
    }

    /// Checks that the paths the command reads from are configured and
    /// exist, and that its output path is configured.
    pub fn require(&self, cmd: Command) -> Result<(), CliError> {
        let p = &self.paths;
        let need = |v: &Option<PathBuf>, name: &str| -> Result<PathBuf, CliError> {
            v.clone().ok_or_else(|| CliError::Config(format!("missing path `{name}`")))
        };
        let exists = |v: &Path| -> Result<(), CliError> {
            if v.exists() {
                Ok(())
            } else {
                Err(CliError::Config(format!("path does not exist: {}", v.display())))
            }
        };
        match cmd {
            Command::Synth => {
                need(&p.out, "out")?;
            }
            Command::Train => {
                if p.train.is_empty() {
                    return Err(CliError::Config("missing path `train`".into()));
                }
                p.train.iter().try_for_each(|d| exists(d))?;
                need(&p.model, "model")?;
            }
            Command::Detect => {
                exists(&need(&p.model, "model")?)?;
                exists(&need(&p.test, "test")?)?;
                need(&p.out, "out")?;
            }
            Command::Eval => {
                exists(&need(&p.gt, "gt")?)?;
                match (&p.report, &p.masks) {
                    (Some(r), _) => exists(r)?,
                    (None, Some(m)) => exists(m)?,
                    (None, None) => return Err(CliError::Config("eval needs `report` or `masks`".into())),
                }
            }
            Command::Bench => {
                exists(&need(&p.model, "model")?)?;
                exists(&need(&p.test, "test")?)?;
            }
        }
        self.detector().validate()?;
        if self.eval.betas.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(CliError::Config("betas must lie in [0, 1]".into()));
        }
        if self.bench.repeats == 0 {
            return Err(CliError::Config("bench.repeats must be at least 1".into()));
        }
        Ok(())
    }

    /// Detector and evaluation settings flattened to `key=value` pairs for
    /// report headers.
    pub fn provenance(&self) -> Vec<(String, String)> {
        #[derive(Serialize)]
        struct Prov<'a> {
            detector: &'a DetectorConfig,
            eval: &'a EvalConfig,
        }
        let d = self.detector();
        let v = toml::Value::try_from(Prov {
            detector: &d,
            eval: &self.eval,
        })
        .expect("config serializes");
        let mut out = Vec::new();
        flatten("", &v, &mut out);
        out
    }
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut Vec<(String, String)>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

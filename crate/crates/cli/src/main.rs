use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cubescan::classify::FusionMode;
use cubescan_cli::{
    cmd_bench, cmd_detect, cmd_eval, cmd_synth, cmd_train, load_scene, CliError, Command, RunConfig,
};

#[derive(Parser)]
#[command(name = "cubescan", version, about = "Spatio-temporal cube anomaly detection for video")]
struct Cli {
    /// TOML run configuration; flags override its fields.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Overrides the auto-encoder seed (or the scene seed for `synth`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a synthetic scene with ground truth.
    Synth {
        /// Scene spec TOML; defaults are used when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the auto-encoder and both classifiers on normal video.
    Train {
        /// Directory of normal frames; repeat for several videos.
        #[arg(long = "train")]
        train: Vec<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Score a test video; writes masks and a report.
    Detect {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
        /// both, either or global-only
        #[arg(long)]
        fusion: Option<FusionMode>,
    },
    /// Frame, pixel and dual pixel-level ROC against ground truth.
    Eval {
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dual pixel-level precision fractions (comma separated).
        #[arg(long, value_delimiter = ',')]
        beta: Vec<f64>,
    },
    /// Time the detect path.
    Bench {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        fusion: Option<FusionMode>,
    },
    /// Print the default run configuration.
    Defaults,
}

fn set<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

fn run(cli: Cli) -> Result<String, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Cmd::Synth { spec, out } = &cli.cmd {
        let mut scene = match spec {
            Some(p) => load_scene(p)?,
            None => Default::default(),
        };
        if let Some(s) = cli.seed {
            scene.seed = s;
        }
        set(&mut cfg.paths.out, out.clone());
        cfg.require(Command::Synth)?;
        return cmd_synth(&scene, cfg.paths.out.as_deref().expect("checked"));
    }
    set(&mut cfg.seed, cli.seed);
    let p = &mut cfg.paths;
    match cli.cmd {
        Cmd::Synth { .. } => unreachable!(),
        Cmd::Train { train, model } => {
            if !train.is_empty() {
                p.train = train;
            }
            set(&mut p.model, model);
            cmd_train(&cfg)
        }
        Cmd::Detect {
            model,
            test,
            out,
            alpha,
            fusion,
        } => {
            set(&mut p.model, model);
            set(&mut p.test, test);
            set(&mut p.out, out);
            if let Some(a) = alpha {
                cfg.detector.alpha = a;
            }
            if let Some(f) = fusion {
                cfg.detector.fusion = f;
            }
            cmd_detect(&cfg)
        }
        Cmd::Eval {
            report,
            masks,
            gt,
            out,
            beta,
        } => {
            set(&mut p.report, report);
            set(&mut p.masks, masks);
            set(&mut p.gt, gt);
            set(&mut p.out, out);
            if !beta.is_empty() {
                cfg.eval.betas = beta;
            }
            cmd_eval(&cfg)
        }
        Cmd::Bench {
            model,
            test,
            repeats,
            fusion,
        } => {
            set(&mut p.model, model);
            set(&mut p.test, test);
            if let Some(r) = repeats {
                cfg.bench.repeats = r;
            }
            if let Some(f) = fusion {
                cfg.detector.fusion = f;
            }
            cmd_bench(&cfg)
        }
        Cmd::Defaults => RunConfig::default().to_toml(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

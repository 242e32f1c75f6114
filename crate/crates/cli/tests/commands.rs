use std::path::Path;
use std::process::Command as Proc;

use cubescan::autoenc::AeHyper;
use cubescan::classify::FusionMode;
use cubescan::detector::{AE_FILE, GLOBAL_FILE, LOCAL_FILE};
use cubescan::eval::{load_ground_truth, save_masks, Mask};
use cubescan::synthgen::{AnomalySpec, SceneSpec};
use cubescan::videoio::CubeDims;
use cubescan_cli::{
    cmd_bench, cmd_detect, cmd_eval, cmd_synth, cmd_train, CliError, RunConfig, EVAL_FILE, FRAMES_DIR, GT_DIR,
    MASKS_DIR, REPORT_FILE,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scene(seed: u64, frames: usize, anomaly: bool) -> SceneSpec {
    SceneSpec {
        width: 80,
        height: 60,
        frames,
        walkers: 5,
        walker_size: [4, 7],
        walker_speed: [0.5, 1.0],
        anomalies: if anomaly {
            vec![AnomalySpec {
                size: [16, 20],
                speed: [3.0, 4.0],
                onset: frames / 2,
                ..Default::default()
            }]
        } else {
            vec![]
        },
        seed,
        ..Default::default()
    }
}

fn small_config(root: &Path, train: &[&str]) -> RunConfig {
    let mut c = RunConfig::default();
    c.detector.small = CubeDims::new(5, 5, 3);
    c.detector.big = CubeDims::new(10, 10, 3);
    c.detector.ae = AeHyper {
        hidden: 12,
        epochs: 2,
        ..Default::default()
    };
    c.detector.ae_max_patches = 1500;
    c.seed = Some(4);
    c.paths.train = train.iter().map(|t| root.join(t).join(FRAMES_DIR)).collect();
    c.paths.model = Some(root.join("model"));
    c
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_reproducible_and_counts_match() {
    let dir = tempfile::tempdir().unwrap();
    let spec = scene(1, 80, true);
    cmd_synth(&spec, &dir.path().join("a")).unwrap();
    cmd_synth(&spec, &dir.path().join("b")).unwrap();
    let a = tree_bytes(&dir.path().join("a"));
    assert_eq!(a, tree_bytes(&dir.path().join("b")));
    assert_eq!(a.iter().filter(|(n, _)| n.starts_with(FRAMES_DIR)).count(), 80);
    assert_eq!(a.iter().filter(|(n, _)| n.starts_with(GT_DIR)).count(), 80);

    cmd_synth(&scene(1, 20, false), &dir.path().join("c")).unwrap();
    let gt = load_ground_truth(&dir.path().join("c").join(GT_DIR), "*.pgm").unwrap();
    assert!(gt.iter().all(Mask::is_empty));
}

#[test]
fn train_records_defaults_in_model_files() {
    let dir = tempfile::tempdir().unwrap();
    // 54 big cubes per slab at 360x240; 20 slabs clear the 1001 needed
    let spec = SceneSpec {
        frames: 100,
        ..Default::default()
    };
    cmd_synth(&spec, &dir.path().join("t")).unwrap();
    let mut c = RunConfig::default();
    c.detector.ae.epochs = 1;
    c.detector.ae_max_patches = 400;
    c.paths.train = vec![dir.path().join("t").join(FRAMES_DIR)];
    c.paths.model = Some(dir.path().join("model"));
    let out = cmd_train(&c).unwrap();
    assert!(out.contains("feature dim 1000"), "{out}");
    let ae = std::fs::read(dir.path().join("model").join(AE_FILE)).unwrap();
    let text = String::from_utf8_lossy(&ae[..ae.len().min(4096)]).into_owned();
    assert!(text.contains("hidden=1000"), "{text}");
    assert!(text.contains("rho=0.05"), "{text}");
    let g = std::fs::read(dir.path().join("model").join(GLOBAL_FILE)).unwrap();
    assert!(String::from_utf8_lossy(&g[..256]).contains("dim=1000"));
}

#[test]
fn train_twice_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    cmd_synth(&scene(2, 45, false), &dir.path().join("n")).unwrap();
    let mut c = small_config(dir.path(), &["n"]);
    cmd_train(&c).unwrap();
    c.paths.model = Some(dir.path().join("model2"));
    cmd_train(&c).unwrap();
    assert_eq!(tree_bytes(&dir.path().join("model")), tree_bytes(&dir.path().join("model2")));
}

#[test]
fn detect_train_on_test_at_full_percentile_is_clean() {
    let dir = tempfile::tempdir().unwrap();
    cmd_synth(&scene(3, 45, false), &dir.path().join("n")).unwrap();
    let mut c = small_config(dir.path(), &["n"]);
    c.detector.global_percentile = 100.0;
    c.detector.local_percentile = 100.0;
    cmd_train(&c).unwrap();
    c.paths.test = Some(dir.path().join("n").join(FRAMES_DIR));
    c.paths.out = Some(dir.path().join("det"));
    cmd_detect(&c).unwrap();
    let masks = load_ground_truth(&dir.path().join("det").join(MASKS_DIR), "*.pgm").unwrap();
    assert_eq!(masks.len(), 45);
    assert!(masks.iter().all(Mask::is_empty));
}

#[test]
fn detect_flags_anomaly_frames_and_eval_reads_report() {
    let dir = tempfile::tempdir().unwrap();
    for (i, s) in [10, 11, 12].into_iter().enumerate() {
        cmd_synth(&scene(s, 60, false), &dir.path().join(format!("n{i}"))).unwrap();
    }
    cmd_synth(&scene(20, 60, true), &dir.path().join("a")).unwrap();
    let mut c = small_config(dir.path(), &["n0", "n1", "n2"]);
    cmd_train(&c).unwrap();
    c.paths.test = Some(dir.path().join("a").join(FRAMES_DIR));
    c.paths.out = Some(dir.path().join("det"));
    cmd_detect(&c).unwrap();
    let masks = load_ground_truth(&dir.path().join("det").join(MASKS_DIR), "*.pgm").unwrap();
    let gt = load_ground_truth(&dir.path().join("a").join(GT_DIR), "*.pgm").unwrap();
    let hits = masks
        .iter()
        .zip(&gt)
        .filter(|(m, g)| !g.is_empty() && !m.is_empty())
        .count();
    let anomalous = gt.iter().filter(|g| !g.is_empty()).count();
    assert!(hits * 2 >= anomalous, "{hits} of {anomalous}");

    c.paths.report = Some(dir.path().join("det").join(REPORT_FILE));
    c.paths.gt = Some(dir.path().join("a").join(GT_DIR));
    c.paths.out = Some(dir.path().join("eval"));
    let summary = cmd_eval(&c).unwrap();
    assert_eq!(summary.lines().count(), 5);
    let text = std::fs::read_to_string(dir.path().join("eval").join(EVAL_FILE)).unwrap();
    // dual pixel-level with beta 0 reproduces the pixel-level line
    let stats = |name: &str| -> String {
        let l = text
            .lines()
            .find(|l| l.starts_with(&format!("summary measure={name} ")))
            .unwrap();
        l.split_once(' ').unwrap().1.split_once(' ').unwrap().1.to_string()
    };
    assert_eq!(stats("pixel"), stats("dual-pixel(beta=0)"));
}

#[test]
fn global_only_detect_needs_no_local_model() {
    let dir = tempfile::tempdir().unwrap();
    cmd_synth(&scene(5, 45, false), &dir.path().join("n")).unwrap();
    cmd_synth(&scene(6, 45, true), &dir.path().join("a")).unwrap();
    let mut c = small_config(dir.path(), &["n"]);
    cmd_train(&c).unwrap();
    std::fs::remove_file(dir.path().join("model").join(LOCAL_FILE)).unwrap();
    c.paths.test = Some(dir.path().join("a").join(FRAMES_DIR));
    c.paths.out = Some(dir.path().join("det"));
    assert!(cmd_detect(&c).is_err());
    c.detector.fusion = FusionMode::GlobalOnly;
    // the stored global layout does not depend on fusion
    cmd_detect(&c).unwrap();
    let report = std::fs::read_to_string(dir.path().join("det").join(REPORT_FILE)).unwrap();
    assert!(report.lines().filter(|l| l.starts_with("cube ")).all(|l| l.contains("local=-")));
}

fn eval_masks(dir: &Path, masks: &[Mask], gt: &[Mask]) -> String {
    save_masks(&dir.join("m"), "m", masks).unwrap();
    save_masks(&dir.join("g"), "g", gt).unwrap();
    let mut c = RunConfig::default();
    c.paths.masks = Some(dir.join("m"));
    c.paths.gt = Some(dir.join("g"));
    cmd_eval(&c).unwrap()
}

#[test]
fn eval_perfect_masks() {
    let dir = tempfile::tempdir().unwrap();
    let gt: Vec<Mask> = (0..20)
        .map(|i| {
            let mut m = Mask::empty(16, 12);
            if i % 3 == 0 {
                m.fill_rect(i % 8, 2, 5, 4);
            }
            m
        })
        .collect();
    let out = eval_masks(dir.path(), &gt, &gt);
    for line in out.lines() {
        assert!(line.contains("EER 0.0000") && line.contains("AUC 1.0000"), "{line}");
    }
}

#[test]
fn eval_random_masks_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut gt = Vec::new();
    let mut masks = Vec::new();
    for _ in 0..2000 {
        let mut g = Mask::empty(8, 8);
        if rng.random_bool(0.5) {
            g.fill_rect(rng.random_range(0..6), rng.random_range(0..6), 3, 3);
        }
        let mut m = Mask::empty(8, 8);
        if rng.random_bool(0.5) {
            m.fill_rect(0, 0, 8, 8);
        }
        gt.push(g);
        masks.push(m);
    }
    let out = eval_masks(dir.path(), &masks, &gt);
    let frame = out.lines().find(|l| l.starts_with("frame")).unwrap();
    let auc: f64 = frame.rsplit(' ').next().unwrap().parse().unwrap();
    assert!((auc - 0.5).abs() < 0.05, "{frame}");
}

#[test]
fn bench_one_slab_single_sample() {
    let dir = tempfile::tempdir().unwrap();
    cmd_synth(&scene(7, 45, false), &dir.path().join("n")).unwrap();
    cmd_synth(&scene(8, 3, false), &dir.path().join("one")).unwrap();
    let mut c = small_config(dir.path(), &["n"]);
    cmd_train(&c).unwrap();
    c.paths.test = Some(dir.path().join("one").join(FRAMES_DIR));
    c.bench.repeats = 1;
    let out = cmd_bench(&c).unwrap();
    assert!(out.contains("samples=1\n"), "{out}");
    assert!(out.contains("median_s_per_frame="));
}

#[test]
fn mismatched_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    cmd_synth(&scene(9, 45, false), &dir.path().join("n")).unwrap();
    let mut c = small_config(dir.path(), &["n"]);
    cmd_train(&c).unwrap();
    c.detector.big = CubeDims::new(20, 20, 3);
    c.paths.test = Some(dir.path().join("n").join(FRAMES_DIR));
    c.paths.out = Some(dir.path().join("det"));
    let err = cmd_detect(&c).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
    assert!(matches!(err, CliError::Core(_)));
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_cubescan");
    let dir = tempfile::tempdir().unwrap();

    let ok = Proc::new(bin).arg("defaults").output().unwrap();
    assert!(ok.status.success());
    let text = String::from_utf8(ok.stdout).unwrap();
    assert_eq!(RunConfig::from_toml(&text).unwrap(), RunConfig::default());

    // missing required path: config error
    let st = Proc::new(bin).arg("train").output().unwrap().status;
    assert_eq!(st.code(), Some(2));

    // empty frame directory: data error
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let st = Proc::new(bin)
        .args(["train", "--train"])
        .arg(&empty)
        .arg("--model")
        .arg(dir.path().join("m"))
        .output()
        .unwrap()
        .status;
    assert_eq!(st.code(), Some(3));

    // bad config file: config error
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "nonsense = 1\n").unwrap();
    let st = Proc::new(bin).arg("-c").arg(&bad).arg("defaults").output().unwrap().status;
    assert_eq!(st.code(), Some(2));
}

#[test]
fn binary_synth_then_train() {
    let bin = env!("CARGO_BIN_EXE_cubescan");
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("scene.toml");
    std::fs::write(&spec, toml::to_string(&scene(1, 30, false)).unwrap()).unwrap();
    let st = Proc::new(bin)
        .args(["synth", "--seed", "5", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(dir.path().join("s"))
        .output()
        .unwrap()
        .status;
    assert!(st.success());
    let written = std::fs::read_to_string(dir.path().join("s").join("scene.toml")).unwrap();
    assert!(written.contains("seed = 5"));
    let cfg = dir.path().join("run.toml");
    let mut c = small_config(dir.path(), &["s"]);
    c.paths.model = Some(dir.path().join("model"));
    std::fs::write(&cfg, c.to_toml().unwrap()).unwrap();
    let st = Proc::new(bin).arg("-c").arg(&cfg).arg("train").output().unwrap().status;
    assert!(st.success());
    assert!(dir.path().join("model").join(AE_FILE).exists());
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::GrayImage;
use irbseg::cli::{self, RunConfig};
use irbseg::datamodel::{self, ClassSet, DatasetManifest, SampleRecord};
use irbseg::irb::{IterationOutcome, IterationRunner};
use irbseg::metrics::{ConfusionMatrix, IoUReport};
use irbseg::trainer::MaskPredictor;
use irbseg::{util, Error};
use serde_json::json;
use sha2::{Digest, Sha256};

const BIN: &str = env!("CARGO_BIN_EXE_irbseg");

fn tiny_config(dir: &Path) -> PathBuf {
    let doc = json!({
        "seed": 7,
        "output_dir": "out",
        "run_name": "tiny",
        "scene": {"image_size": [16, 16]},
        "generate": {"n_sim": 12, "n_real": 30, "real_split": [0.6, 0.2, 0.2]},
        "blend": {"total_budget": 10},
        "trainer": {"epochs": 1, "batch_size": 4, "image_size": [16, 16], "base_channels": 2}
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn digest(paths: &[PathBuf]) -> String {
    let mut h = Sha256::new();
    for p in paths {
        h.update(std::fs::read(p).unwrap());
    }
    format!("{:x}", h.finalize())
}

fn data_files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"style": {"beta": 0.9}}"#).unwrap();
    let out = run(&["generate", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("style.beta"), "{stderr}");

    std::fs::write(&bad, r#"{"trainer": {"epochz": 3}}"#).unwrap();
    assert_eq!(run(&["train", "--config", bad.to_str().unwrap()]).status.code(), Some(2));

    let missing = dir.path().join("missing.json");
    assert_eq!(run(&["generate", "--config", missing.to_str().unwrap()]).status.code(), Some(2));

    // a missing input manifest is a configuration problem too
    let cfg = tiny_config(dir.path());
    assert_eq!(run(&["train", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));

    // unknown subcommand or missing flag is a usage error
    assert_eq!(run(&["generate"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let c = cfg.to_str().unwrap();
    assert!(run(&["generate", "--config", c]).status.success());
    // corrupt one training image
    let sim_train = datamodel::load_manifest(&dir.path().join("out/data/splits/sim_train.json")).unwrap();
    std::fs::write(&sim_train.samples[0].image_path, b"garbage").unwrap();
    let out = run(&["train", "--config", c]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn generate_twice_is_identical_and_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let c = cfg.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let s = dir.path().join("s");
    assert!(run(&["generate", "--config", c, "--out", a.to_str().unwrap()]).status.success());
    assert!(run(&["generate", "--config", c, "--out", b.to_str().unwrap()]).status.success());
    assert!(run(&["generate", "--config", c, "--out", s.to_str().unwrap(), "--seed", "8"]).status.success());
    let rel = |root: &Path| data_files(root).iter().map(|p| p.strip_prefix(root).unwrap().to_path_buf()).collect::<Vec<_>>();
    assert_eq!(rel(&a), rel(&b));
    assert_eq!(digest(&data_files(&a.join("data/sim"))), digest(&data_files(&b.join("data/sim"))));
    assert_eq!(digest(&data_files(&a.join("data/real"))), digest(&data_files(&b.join("data/real"))));
    for name in ["sim_train", "real_pool", "real_val", "real_test"] {
        let pa = a.join(format!("data/splits/{name}.json"));
        let pb = b.join(format!("data/splits/{name}.json"));
        assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap(), "{name}");
    }
    // empty splits are not written
    assert_eq!(a.join("data/splits/sim_val.json").exists(), b.join("data/splits/sim_val.json").exists());
    assert_ne!(digest(&data_files(&a.join("data/sim"))), digest(&data_files(&s.join("data/sim"))));

    let pool = datamodel::load_manifest(&a.join("data/splits/real_pool.json")).unwrap();
    let val = datamodel::load_manifest(&a.join("data/splits/real_val.json")).unwrap();
    let test = datamodel::load_manifest(&a.join("data/splits/real_test.json")).unwrap();
    assert_eq!((pool.len(), val.len(), test.len()), (18, 6, 6));
    datamodel::check_disjoint(&[&pool, &val, &test]).unwrap();
}

#[test]
fn stylize_train_evaluate_and_report_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let c = cfg.to_str().unwrap();
    let out = dir.path().join("out");
    assert!(run(&["generate", "--config", c]).status.success());

    assert!(run(&["stylize", "--config", c, "--beta", "0.1", "--target-sampling", "fixed"]).status.success());
    let stylized = datamodel::load_manifest(&out.join("stylized/manifest.json")).unwrap();
    let source = datamodel::load_manifest(&out.join("data/splits/sim_train.json")).unwrap();
    assert_eq!(stylized.len(), source.len());

    let zero = dir.path().join("zero.json");
    std::fs::write(
        &zero,
        r#"{"seed": 7, "output_dir": "out", "scene": {"image_size": [16, 16]},
            "trainer": {"epochs": 0, "image_size": [16, 16], "base_channels": 2}}"#,
    )
    .unwrap();
    let z = zero.to_str().unwrap();
    let o = run(&["train", "--config", z, "--cpu-only"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("checkpoint/weights.bin").is_file());

    assert!(run(&["evaluate", "--config", z]).status.success());
    let eval: cli::EvaluationFile =
        serde_json::from_str(&std::fs::read_to_string(out.join("evaluation.json")).unwrap()).unwrap();
    assert_eq!(eval.eval_set, "real_val");
    assert!((0.0..=1.0).contains(&eval.report.miou));

    let o = run(&["irb-run", "--config", c, "--max-iterations", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("irb/report.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 1, "{csv}");
    assert!(rows[0].starts_with("tiny,0,10-r,"), "{csv}");
    assert!(rows[0].ends_with(",1"), "{csv}");

    assert!(run(&["report", "--config", c]).status.success());
    let first = std::fs::read(out.join("report.csv")).unwrap();
    let first_txt = std::fs::read(out.join("report.txt")).unwrap();
    let first_png = std::fs::read(out.join("report_iou.png")).unwrap();
    assert!(run(&["report", "--config", c]).status.success());
    assert_eq!(std::fs::read(out.join("report.csv")).unwrap(), first);
    assert_eq!(std::fs::read(out.join("report.txt")).unwrap(), first_txt);
    assert_eq!(std::fs::read(out.join("report_iou.png")).unwrap(), first_png);
    assert_eq!(std::fs::read(out.join("irb/report.csv")).unwrap(), first);
}

fn load_cfg(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::load(&tiny_config(dir)).unwrap();
    cfg.style.enabled = false;
    cfg
}

struct Oracle(ClassSet);

impl MaskPredictor for Oracle {
    fn class_set(&self) -> &ClassSet {
        &self.0
    }
    fn predict_sample(&self, sample: &SampleRecord) -> irbseg::Result<GrayImage> {
        util::read_mask(&sample.mask_path)
    }
}

#[test]
fn evaluate_with_oracle_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load_cfg(dir.path());
    cli::cmd_generate(&cfg).unwrap();
    let path = cli::cmd_evaluate_with(&cfg, &Oracle(ClassSet::oropharyngeal())).unwrap();
    let eval: cli::EvaluationFile = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(eval.report.miou, 1.0);
    assert_eq!(eval.report.macc, 1.0);
}

/// Reports the same fixed per-class IoU every round, so the ranking never changes.
struct FixedRanking;

impl IterationRunner for FixedRanking {
    fn train_and_evaluate(
        &mut self,
        _iteration: usize,
        trainset: &DatasetManifest,
        _eval: &DatasetManifest,
    ) -> irbseg::Result<IterationOutcome> {
        let mut cm = ConfusionMatrix::zeros(&trainset.class_set);
        // class k is right on k+1 of 4 pixels and predicted as background otherwise
        let mut gt = vec![0u8];
        let mut pred = vec![0u8];
        for k in 1..4u8 {
            for i in 0..4 {
                gt.push(k);
                pred.push(if i <= k { k } else { 0 });
            }
        }
        cm.accumulate(&gt, &pred)?;
        Ok(IterationOutcome {
            report: IoUReport::from_confusion(&cm)?,
            checkpoint: None,
        })
    }
}

#[test]
fn fixed_ranking_stub_stops_after_two_rounds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load_cfg(dir.path());
    let outputs = cli::cmd_irb_run_with(&cfg, true, &mut FixedRanking).unwrap();
    assert_eq!(outputs.state.iterations.len(), 2);
    assert_eq!(outputs.state.iterations[1].allocation.label, "10-532");
    let csv = std::fs::read_to_string(&outputs.report.csv).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
    // equal scores: the earlier round is best
    assert!(csv.lines().nth(1).unwrap().ends_with(",1"), "{csv}");

    // the run log survives a load/save cycle byte for byte
    let state = irbseg::irb::IrbRunState::load(&outputs.run_log).unwrap();
    let copy = dir.path().join("copy.json");
    state.save(&copy).unwrap();
    assert_eq!(std::fs::read(&outputs.run_log).unwrap(), std::fs::read(&copy).unwrap());
}

struct FailsOnSecond;

impl IterationRunner for FailsOnSecond {
    fn train_and_evaluate(
        &mut self,
        iteration: usize,
        trainset: &DatasetManifest,
        eval: &DatasetManifest,
    ) -> irbseg::Result<IterationOutcome> {
        if iteration == 1 {
            return Err(Error::Argument("boom".into()));
        }
        FixedRanking.train_and_evaluate(iteration, trainset, eval)
    }
}

#[test]
fn failing_round_leaves_a_partial_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load_cfg(dir.path());
    let err = cli::cmd_irb_run_with(&cfg, true, &mut FailsOnSecond).unwrap_err();
    assert!(matches!(err, Error::Loop { iteration: 1, .. }), "{err}");
    assert_eq!(cli::exit_code(&err), 1);
    let partial = irbseg::irb::IrbRunState::load(&cfg.irb_dir().join("run_log.partial.json")).unwrap();
    assert_eq!(partial.iterations.len(), 1);
    assert!(!cfg.run_log_path().exists());
}

#[test]
fn report_rejects_inconsistent_logs_and_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = load_cfg(dir.path());
    let outputs = cli::cmd_irb_run_with(&cfg, true, &mut FixedRanking).unwrap();

    let mut other = irbseg::irb::IrbRunState::load(&outputs.run_log).unwrap();
    other.class_set = ClassSet::new(ClassSet::oropharyngeal().entries()[..3].to_vec()).unwrap();
    let other_path = dir.path().join("other.json");
    other.save(&other_path).unwrap();

    cfg.report.run_logs = vec![outputs.run_log.clone(), other_path];
    assert!(matches!(cli::cmd_report(&cfg), Err(Error::Report(_))));

    cfg.report.run_logs = vec![dir.path().join("absent.json")];
    match cli::cmd_report(&cfg) {
        Err(Error::Config { field, .. }) => assert_eq!(field, "report.run_logs[0]"),
        other => panic!("{other:?}"),
    }
}

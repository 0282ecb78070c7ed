//! Command implementations behind the `irbseg` binary.
//!
//! Every command takes a resolved [`RunConfig`]. Sub-config seeds are derived
//! from the single global seed, so `--seed` reseeds the whole pipeline.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datamodel::{self, DatasetManifest};
use crate::error::{Error, Result};
use crate::irb::{self, BlendPolicy, IrbRunState, IterationRunner, LoopOptions};
use crate::metrics::IoUReport;
use crate::report::{self, ReportFiles};
use crate::styletransfer::{self, SpectralConfig, StyleJob, TargetSampling};
use crate::synthgen::{self, SceneSpec};
use crate::trainer::{self, Checkpoint, DeviceHint, MaskPredictor, ReferenceRunner, TrainerConfig};
use crate::util;

/// Exit status for a failed command: 2 for configuration errors, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_config() {
        2
    } else {
        1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub n_sim: usize,
    pub n_real: usize,
    /// Train/val/test fractions of the simulated set.
    pub sim_split: [f64; 3],
    /// Blend-pool/val/test fractions of the real set.
    pub real_split: [f64; 3],
    /// Split each dominant-class group separately so every blend bucket keeps its share.
    pub stratify: bool,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            n_sim: 200,
            n_real: 80,
            sim_split: [0.9, 0.1, 0.0],
            real_split: [0.75, 0.125, 0.125],
            stratify: true,
        }
    }
}

/// Manifest locations. Unset entries default to the layout `generate` writes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub source: Option<PathBuf>,
    pub sim_val: Option<PathBuf>,
    pub target_pool: Option<PathBuf>,
    pub target_val: Option<PathBuf>,
    pub target_test: Option<PathBuf>,
    /// Trainset for `train`; defaults to `source`.
    pub train: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StyleConfig {
    pub enabled: bool,
    pub beta: f64,
    pub target_sampling: TargetSampling,
}

impl Default for StyleConfig {
    fn default() -> Self {
        let d = SpectralConfig::default();
        Self {
            enabled: true,
            beta: d.beta,
            target_sampling: d.target_sampling,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Defaults to `<output_dir>/checkpoint`.
    pub checkpoint: Option<PathBuf>,
    /// Defaults to `data.target_val`.
    pub eval_set: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// IRB run logs to tabulate; defaults to this run's own log.
    pub run_logs: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Name of the IRB run in logs and reports.
    pub run_name: String,
    pub scene: SceneSpec,
    pub generate: GenerateConfig,
    pub data: DataPaths,
    pub blend: BlendPolicy,
    pub style: StyleConfig,
    pub trainer: TrainerConfig,
    pub evaluate: EvaluateConfig,
    pub report: ReportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("irbseg-out"),
            run_name: "IRB".into(),
            scene: SceneSpec::default(),
            generate: GenerateConfig::default(),
            data: DataPaths::default(),
            blend: BlendPolicy::default(),
            style: StyleConfig::default(),
            trainer: TrainerConfig::default(),
            evaluate: EvaluateConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

/// Command-line flags that override config values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub cpu_only: bool,
    pub max_iterations: Option<usize>,
    pub beta: Option<f64>,
    pub target_sampling: Option<TargetSampling>,
}

fn split_sum_ok(fractions: &[f64; 3]) -> bool {
    fractions.iter().all(|f| f.is_finite() && *f >= 0.0) && (fractions.iter().sum::<f64>() - 1.0).abs() <= 1e-9
}

impl RunConfig {
    /// Parses a JSON config; parse errors carry the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." { "<root>".to_string() } else { path };
            Error::config(field, e.into_inner().to_string())
        })
    }

    /// Reads a config file; relative paths inside are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        let d = &mut self.data;
        for p in [&mut d.source, &mut d.sim_val, &mut d.target_pool, &mut d.target_val, &mut d.target_test, &mut d.train]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        for p in [&mut self.evaluate.checkpoint, &mut self.evaluate.eval_set].into_iter().flatten() {
            fix(p);
        }
        self.report.run_logs.iter_mut().for_each(fix);
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(out) = &overrides.out {
            self.output_dir = out.clone();
        }
        if overrides.cpu_only {
            self.trainer.device_hint = DeviceHint::CpuOnly;
        }
        if let Some(n) = overrides.max_iterations {
            self.blend.max_iterations = n;
        }
        if let Some(beta) = overrides.beta {
            self.style.beta = beta;
        }
        if let Some(sampling) = overrides.target_sampling {
            self.style.target_sampling = sampling;
        }
    }

    /// Checks every sub-config; failures name the field.
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.trainer().validate()?;
        if !(0.0..=0.5).contains(&self.style.beta) {
            return Err(Error::config("style.beta", format!("must lie in [0, 0.5], got {}", self.style.beta)));
        }
        let b = &self.blend;
        if b.total_budget == 0 {
            return Err(Error::config("blend.total_budget", "must be positive"));
        }
        if b.ratio_weights.is_empty() || b.ratio_weights.contains(&0) {
            return Err(Error::config("blend.ratio_weights", "must be a non-empty list of positive integers"));
        }
        if b.max_iterations == 0 {
            return Err(Error::config("blend.max_iterations", "must be at least 1"));
        }
        let g = &self.generate;
        if g.n_sim == 0 || g.n_real == 0 {
            return Err(Error::config("generate", "n_sim and n_real must be positive"));
        }
        for (field, split) in [("generate.sim_split", &g.sim_split), ("generate.real_split", &g.real_split)] {
            if !split_sum_ok(split) {
                return Err(Error::config(field, "fractions must be non-negative and sum to 1"));
            }
        }
        if self.run_name.is_empty() {
            return Err(Error::config("run_name", "must not be empty"));
        }
        Ok(())
    }

    pub fn scene(&self) -> SceneSpec {
        SceneSpec {
            seed: util::derive_seed(self.seed, "scene"),
            ..self.scene.clone()
        }
    }

    pub fn trainer(&self) -> TrainerConfig {
        TrainerConfig {
            seed: util::derive_seed(self.seed, "trainer"),
            ..self.trainer.clone()
        }
    }

    pub fn blend_policy(&self) -> BlendPolicy {
        BlendPolicy {
            seed: util::derive_seed(self.seed, "blend"),
            ..self.blend.clone()
        }
    }

    pub fn spectral(&self) -> SpectralConfig {
        SpectralConfig {
            beta: self.style.beta,
            target_sampling: self.style.target_sampling,
            seed: util::derive_seed(self.seed, "style"),
        }
    }

    fn splits_dir(&self) -> PathBuf {
        self.output_dir.join("data").join("splits")
    }

    fn data_path(&self, explicit: &Option<PathBuf>, split_file: &str) -> PathBuf {
        explicit
            .clone()
            .unwrap_or_else(|| self.splits_dir().join(format!("{split_file}.json")))
    }

    pub fn source_path(&self) -> PathBuf {
        self.data_path(&self.data.source, "sim_train")
    }

    pub fn sim_val_path(&self) -> PathBuf {
        self.data_path(&self.data.sim_val, "sim_val")
    }

    pub fn target_pool_path(&self) -> PathBuf {
        self.data_path(&self.data.target_pool, "real_pool")
    }

    pub fn target_val_path(&self) -> PathBuf {
        self.data_path(&self.data.target_val, "real_val")
    }

    pub fn target_test_path(&self) -> PathBuf {
        self.data_path(&self.data.target_test, "real_test")
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.evaluate
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.output_dir.join("checkpoint"))
    }

    pub fn irb_dir(&self) -> PathBuf {
        self.output_dir.join("irb")
    }

    pub fn run_log_path(&self) -> PathBuf {
        self.irb_dir().join("run_log.json")
    }
}

/// Loads a manifest named by a config field; a missing file is a config error.
fn load_input(field: &str, path: &Path) -> Result<DatasetManifest> {
    if !path.is_file() {
        return Err(Error::config(
            field,
            format!("{} does not exist (run `generate` first or set the path)", path.display()),
        ));
    }
    datamodel::load_manifest(path)
}

/// Manifests written by [`cmd_generate`].
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub sim: PathBuf,
    pub real: PathBuf,
    /// Non-empty split manifests, by file stem (`sim_train`, `real_pool`, ...).
    pub splits: Vec<(String, PathBuf)>,
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<GeneratedData> {
    cfg.validate()?;
    let data_dir = cfg.output_dir.join("data");
    let g = &cfg.generate;
    let (sim, real) = synthgen::generate_domain_pair(&cfg.scene(), g.n_sim, g.n_real, &data_dir)?;
    log::info!("generated {} sim and {} real samples under {}", sim.len(), real.len(), data_dir.display());
    let mut splits = Vec::new();
    let dir = cfg.splits_dir();
    for (manifest, fractions, names, tag) in [
        (&sim, g.sim_split, ["sim_train", "sim_val", "sim_test"], "split-sim"),
        (&real, g.real_split, ["real_pool", "real_val", "real_test"], "split-real"),
    ] {
        let split = if g.stratify {
            datamodel::split_dataset_stratified
        } else {
            datamodel::split_dataset
        };
        let parts = split(manifest, fractions, util::derive_seed(cfg.seed, tag))?;
        for (mut part, name) in parts.into_iter().zip(names) {
            if part.is_empty() {
                continue;
            }
            part.name = name.to_string();
            let path = dir.join(format!("{name}.json"));
            datamodel::save_manifest(&part, &path)?;
            log::info!("{name}: {} samples", part.len());
            splits.push((name.to_string(), path));
        }
    }
    Ok(GeneratedData {
        sim: data_dir.join("sim").join("manifest.json"),
        real: data_dir.join("real").join("manifest.json"),
        splits,
    })
}

/// Stylizes the source set toward the blend pool; returns the new manifest path.
pub fn cmd_stylize(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let source = load_input("data.source", &cfg.source_path())?;
    let pool = load_input("data.target_pool", &cfg.target_pool_path())?;
    let out = cfg.output_dir.join("stylized");
    let stylized = styletransfer::batch_stylize(&source, &pool, &cfg.spectral(), &out)?;
    log::info!("stylized {} images into {}", stylized.len(), out.display());
    Ok(out.join("manifest.json"))
}

pub fn cmd_train(cfg: &RunConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    let (field, path) = match &cfg.data.train {
        Some(p) => ("data.train", p.clone()),
        None => ("data.source", cfg.source_path()),
    };
    let trainset = load_input(field, &path)?;
    let dir = cfg.output_dir.join("checkpoint");
    let (checkpoint, log) = trainer::train_model(&cfg.trainer(), &trainset, &dir)?;
    log::info!(
        "trained on {} samples for {} epochs; final loss {:?}; checkpoint {}",
        trainset.len(),
        log.epoch_losses.len(),
        log.epoch_losses.last(),
        dir.display()
    );
    Ok(checkpoint)
}

/// Serialized output of `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationFile {
    pub eval_set: String,
    pub report: IoUReport,
}

fn eval_set(cfg: &RunConfig) -> Result<DatasetManifest> {
    match &cfg.evaluate.eval_set {
        Some(p) => load_input("evaluate.eval_set", p),
        None => load_input("data.target_val", &cfg.target_val_path()),
    }
}

/// Scores `predictor` on the configured evaluation set; writes `<out>/evaluation.json`.
pub fn cmd_evaluate_with(cfg: &RunConfig, predictor: &dyn MaskPredictor) -> Result<PathBuf> {
    cfg.validate()?;
    let set = eval_set(cfg)?;
    let report = trainer::evaluate_with(predictor, &set)?;
    log::info!("{}: mIoU {:.4}, mAcc {:.4}", set.name, report.miou, report.macc);
    let path = cfg.output_dir.join("evaluation.json");
    util::write_json(
        &path,
        &EvaluationFile {
            eval_set: set.name.clone(),
            report,
        },
    )?;
    Ok(path)
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let dir = cfg.checkpoint_dir();
    if !dir.is_dir() {
        return Err(Error::config("evaluate.checkpoint", format!("{} is not a checkpoint directory", dir.display())));
    }
    let model = Checkpoint::open(&dir)?.load_model()?;
    cmd_evaluate_with(cfg, &model)
}

#[derive(Debug, Clone)]
pub struct IrbRunOutputs {
    pub state: IrbRunState,
    pub run_log: PathBuf,
    pub report: ReportFiles,
}

/// Runs the IRB loop with the reference trainer.
pub fn cmd_irb_run(cfg: &RunConfig, generate: bool) -> Result<IrbRunOutputs> {
    let mut runner = ReferenceRunner {
        config: cfg.trainer(),
        out_dir: cfg.irb_dir(),
    };
    cmd_irb_run_with(cfg, generate, &mut runner)
}

/// Runs the IRB loop with any runner, then writes the run log and report.
///
/// If the loop fails part-way, the completed iterations are saved to
/// `run_log.partial.json` before the error is returned.
pub fn cmd_irb_run_with(cfg: &RunConfig, generate: bool, runner: &mut dyn IterationRunner) -> Result<IrbRunOutputs> {
    cfg.validate()?;
    if generate {
        cmd_generate(cfg)?;
    }
    let source = load_input("data.source", &cfg.source_path())?;
    let pool = load_input("data.target_pool", &cfg.target_pool_path())?;
    let val = load_input("data.target_val", &cfg.target_val_path())?;
    let irb_dir = cfg.irb_dir();
    let options = LoopOptions {
        name: cfg.run_name.clone(),
        stylize: cfg.style.enabled.then(|| StyleJob {
            target_pool: &pool,
            config: cfg.spectral(),
            out_dir: irb_dir.join("stylized"),
        }),
    };
    let state = match irb::irb_loop(&cfg.blend_policy(), &source, &pool, &val, runner, options) {
        Ok(state) => state,
        Err(Error::Loop { iteration, partial, source }) => {
            let partial_path = irb_dir.join("run_log.partial.json");
            partial.save(&partial_path)?;
            log::error!("partial run log written to {}", partial_path.display());
            return Err(Error::Loop { iteration, partial, source });
        }
        Err(e) => return Err(e),
    };
    let run_log = cfg.run_log_path();
    state.save(&run_log)?;
    let report = report::emit_report(std::slice::from_ref(&state), &irb_dir.join("report"))?;
    if let Some(best) = state.best_iteration() {
        log::info!(
            "{} iterations; best {} ({}) with mIoU {:.4}",
            state.iterations.len(),
            best.index,
            best.allocation.label,
            best.report.miou
        );
    }
    Ok(IrbRunOutputs { state, run_log, report })
}

/// Tabulates the configured run logs (or this run's own log) under `<out>/report`.
pub fn cmd_report(cfg: &RunConfig) -> Result<ReportFiles> {
    cfg.validate()?;
    let paths = if cfg.report.run_logs.is_empty() {
        vec![cfg.run_log_path()]
    } else {
        cfg.report.run_logs.clone()
    };
    let mut logs = Vec::with_capacity(paths.len());
    for (i, p) in paths.iter().enumerate() {
        if !p.is_file() {
            return Err(Error::config(format!("report.run_logs[{i}]"), format!("{} does not exist", p.display())));
        }
        logs.push(IrbRunState::load(p)?);
    }
    let files = report::emit_report(&logs, &cfg.output_dir.join("report"))?;
    log::info!("report written to {}", files.text.display());
    Ok(files)
}

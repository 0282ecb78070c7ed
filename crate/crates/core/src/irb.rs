//! IoU-ranking blend scheduling.
//!
//! After each training round the foreground classes are ranked by validation
//! IoU, worst first. A fixed budget of real images is then split across the
//! classes with the ratio weights applied in ranking order (5:3:2 by default),
//! so the weakest class receives the most real data in the next round. Rounds
//! repeat until a ranking recurs; the round with the best mIoU is kept.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    check_disjoint, dominant_foreground_class, ClassId, ClassSet, DatasetManifest, Domain,
    SampleRecord, Split,
};
use crate::error::{Error, Result};
use crate::metrics::IoUReport;
use crate::styletransfer::{self, StyleJob};
use crate::util;

fn default_weights() -> Vec<u32> {
    vec![5, 3, 2]
}

fn default_max_iterations() -> usize {
    10
}

/// How the first round's blend is chosen, before any ranking exists.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialMode {
    /// `total_budget` images drawn uniformly from the classified pool.
    #[default]
    Random,
    /// Equal share per foreground class.
    Uniform,
    /// Caller-provided per-class counts.
    Explicit(BTreeMap<ClassId, usize>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlendPolicy {
    pub total_budget: usize,
    /// Applied worst to best.
    #[serde(default = "default_weights")]
    pub ratio_weights: Vec<u32>,
    #[serde(default)]
    pub initial_mode: InitialMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
}

impl Default for BlendPolicy {
    fn default() -> Self {
        Self::new(40)
    }
}

impl BlendPolicy {
    pub fn new(total_budget: usize) -> Self {
        Self {
            total_budget,
            ratio_weights: default_weights(),
            initial_mode: InitialMode::Random,
            seed: 0,
            max_iterations: default_max_iterations(),
        }
    }

    pub fn validate(&self, class_set: &ClassSet, pool_size: usize) -> Result<()> {
        let fg = class_set.foreground_ids().len();
        if self.ratio_weights.len() != fg {
            return Err(Error::Argument(format!(
                "{} ratio weights for {fg} foreground classes",
                self.ratio_weights.len()
            )));
        }
        if self.ratio_weights.contains(&0) {
            return Err(Error::Argument("ratio weights must be positive".into()));
        }
        if self.total_budget == 0 {
            return Err(Error::Argument("blend budget must be positive".into()));
        }
        if self.total_budget > pool_size {
            return Err(Error::Argument(format!(
                "blend budget {} exceeds pool of {pool_size}",
                self.total_budget
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Argument("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlendAllocation {
    pub per_class_counts: BTreeMap<ClassId, usize>,
    pub label: String,
}

impl BlendAllocation {
    pub fn total(&self) -> usize {
        self.per_class_counts.values().sum()
    }

    /// `"N-abc"`: each digit is a class's share of N in tenths, classes in id order.
    fn tenths_label(counts: &BTreeMap<ClassId, usize>) -> String {
        let total: usize = counts.values().sum();
        let digits: String = counts
            .values()
            .map(|&c| {
                let tenths = if total == 0 { 0 } else { (10 * c + total / 2) / total };
                char::from_digit(tenths.min(9) as u32, 10).unwrap_or('9')
            })
            .collect();
        format!("{total}-{digits}")
    }
}

/// Orders foreground classes by IoU, worst first.
///
/// Undefined IoU counts as 0. Ties put the smaller class id first.
pub fn rank_classes(per_class_iou: &BTreeMap<ClassId, Option<f64>>) -> Result<Vec<ClassId>> {
    if per_class_iou.is_empty() {
        return Err(Error::Argument("cannot rank an empty class map".into()));
    }
    let score = |v: Option<f64>| v.filter(|x| !x.is_nan()).unwrap_or(0.0);
    let mut ranked: Vec<(ClassId, f64)> = per_class_iou
        .iter()
        .map(|(&id, &v)| (id, score(v)))
        .collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(ranked.into_iter().map(|(id, _)| id).collect())
}

/// Splits the budget over `ranking` (worst first) by the policy's ratio weights.
pub fn allocate_blend(policy: &BlendPolicy, ranking: &[ClassId]) -> Result<BlendAllocation> {
    if policy.ratio_weights.len() != ranking.len() {
        return Err(Error::Argument(format!(
            "{} ratio weights for a ranking of {} classes",
            policy.ratio_weights.len(),
            ranking.len()
        )));
    }
    let mut sorted = ranking.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != ranking.len() {
        return Err(Error::Argument(format!("ranking {ranking:?} repeats a class")));
    }
    let weights: Vec<u64> = policy.ratio_weights.iter().map(|&w| u64::from(w)).collect();
    let counts = util::apportion_weighted(policy.total_budget, &weights);
    let per_class_counts: BTreeMap<ClassId, usize> =
        ranking.iter().copied().zip(counts).collect();
    let label = BlendAllocation::tenths_label(&per_class_counts);
    Ok(BlendAllocation {
        per_class_counts,
        label,
    })
}

/// Allocation for the first round, per the policy's initial mode.
pub fn initial_allocation(policy: &BlendPolicy, pool: &DatasetManifest) -> Result<BlendAllocation> {
    let class_set = &pool.class_set;
    let fg = class_set.foreground_ids();
    let n = policy.total_budget;
    match &policy.initial_mode {
        InitialMode::Random => {
            let mut classified: Vec<ClassId> = pool
                .samples
                .iter()
                .filter_map(|s| dominant_foreground_class(s, class_set))
                .collect();
            if classified.len() < n {
                return Err(Error::Argument(format!(
                    "random blend of {n} needs that many pool images with foreground, found {}",
                    classified.len()
                )));
            }
            classified.shuffle(&mut ChaCha8Rng::seed_from_u64(util::derive_seed(policy.seed, "initial")));
            let mut per_class_counts: BTreeMap<ClassId, usize> = fg.iter().map(|&id| (id, 0)).collect();
            for id in &classified[..n] {
                *per_class_counts.entry(*id).or_default() += 1;
            }
            Ok(BlendAllocation {
                per_class_counts,
                label: format!("{n}-r"),
            })
        }
        InitialMode::Uniform => {
            let counts = util::apportion_weighted(n, &vec![1; fg.len()]);
            Ok(BlendAllocation {
                per_class_counts: fg.into_iter().zip(counts).collect(),
                label: format!("{n}-u"),
            })
        }
        InitialMode::Explicit(counts) => {
            if let Some(bad) = counts.keys().find(|id| !class_set.is_foreground(**id)) {
                return Err(Error::Argument(format!("explicit allocation names non-foreground class {bad}")));
            }
            let total: usize = counts.values().sum();
            if total != n {
                return Err(Error::Argument(format!(
                    "explicit allocation sums to {total}, budget is {n}"
                )));
            }
            let per_class_counts: BTreeMap<ClassId, usize> = fg
                .iter()
                .map(|&id| (id, counts.get(&id).copied().unwrap_or(0)))
                .collect();
            let label = BlendAllocation::tenths_label(&per_class_counts);
            Ok(BlendAllocation {
                per_class_counts,
                label,
            })
        }
    }
}

/// Draws `per_class_counts[k]` images without replacement from each class-k bucket.
///
/// Buckets are formed by dominant foreground class. Output is ordered by class
/// id, then draw order.
pub fn select_blend_images(
    pool: &DatasetManifest,
    allocation: &BlendAllocation,
    seed: u64,
) -> Result<Vec<SampleRecord>> {
    let mut buckets: BTreeMap<ClassId, Vec<&SampleRecord>> = BTreeMap::new();
    for sample in &pool.samples {
        if let Some(id) = dominant_foreground_class(sample, &pool.class_set) {
            buckets.entry(id).or_default().push(sample);
        }
    }
    let mut selected = Vec::with_capacity(allocation.total());
    for (&class_id, &needed) in &allocation.per_class_counts {
        if needed == 0 {
            continue;
        }
        let bucket = buckets.get(&class_id).map(Vec::as_slice).unwrap_or(&[]);
        if bucket.len() < needed {
            return Err(Error::Capacity {
                class_id,
                needed,
                available: bucket.len(),
            });
        }
        let mut order: Vec<usize> = (0..bucket.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(util::derive_seed(seed, &format!("class-{class_id}")));
        order.shuffle(&mut rng);
        selected.extend(order[..needed].iter().map(|&i| bucket[i].clone()));
    }
    Ok(selected)
}

/// The simulated source plus the blended real images.
///
/// With a style job the source images are first stylized toward the target
/// domain; blended real images are never altered.
pub fn build_blended_trainset(
    source: &DatasetManifest,
    blended: &[SampleRecord],
    stylize: Option<&StyleJob<'_>>,
) -> Result<DatasetManifest> {
    if source.domain != Domain::SourceSim {
        return Err(Error::Argument(format!("source `{}` is not a simulated domain", source.name)));
    }
    if let Some(s) = blended.iter().find(|s| s.domain != Domain::TargetReal) {
        return Err(Error::Argument(format!("blended sample `{}` is not a real-domain sample", s.sample_id)));
    }
    if blended.is_empty() && stylize.is_none() {
        return Ok(source.clone());
    }
    let base = match stylize {
        Some(job) => styletransfer::batch_stylize(source, job.target_pool, &job.config, &job.out_dir)?,
        None => source.clone(),
    };
    let mut ids = base.sample_ids().into_iter().map(str::to_owned).collect::<std::collections::BTreeSet<_>>();
    for s in blended {
        if !ids.insert(s.sample_id.clone()) {
            return Err(Error::Build(format!("sample_id `{}` collides", s.sample_id)));
        }
    }
    let mut trainset = base;
    trainset.split = Split::Train;
    trainset.samples.extend(blended.iter().cloned());
    Ok(trainset)
}

/// Result of training a fresh model and scoring it on the validation set.
#[derive(Debug, Clone)]
pub struct IterationOutcome {
    pub report: IoUReport,
    pub checkpoint: Option<PathBuf>,
}

/// The training and test step of one IRB round.
pub trait IterationRunner {
    fn train_and_evaluate(
        &mut self,
        iteration: usize,
        trainset: &DatasetManifest,
        eval_set: &DatasetManifest,
    ) -> Result<IterationOutcome>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrbIteration {
    pub index: usize,
    pub allocation: BlendAllocation,
    pub blended_ids: Vec<String>,
    pub report: IoUReport,
    pub checkpoint: Option<PathBuf>,
}

/// Full history of one IRB run; also the on-disk run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrbRunState {
    pub name: String,
    pub class_set: ClassSet,
    pub policy: BlendPolicy,
    pub stylized: bool,
    pub iterations: Vec<IrbIteration>,
    /// Insertion-ordered set of the rankings observed so far.
    pub rankings_seen: Vec<Vec<ClassId>>,
    pub best: Option<usize>,
}

impl IrbRunState {
    pub fn new(name: impl Into<String>, class_set: ClassSet, policy: BlendPolicy, stylized: bool) -> Self {
        Self {
            name: name.into(),
            class_set,
            policy,
            stylized,
            iterations: Vec::new(),
            rankings_seen: Vec::new(),
            best: None,
        }
    }

    fn record(&mut self, iteration: IrbIteration) {
        let better = match self.best {
            None => true,
            Some(b) => iteration.report.miou > self.iterations[b].report.miou,
        };
        if better {
            self.best = Some(self.iterations.len());
        }
        self.iterations.push(iteration);
    }

    pub fn best_iteration(&self) -> Option<&IrbIteration> {
        self.best.map(|b| &self.iterations[b])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        util::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        util::read_json(path)
    }
}

/// Options of [`irb_loop`] that are not part of the blend policy.
#[derive(Default)]
pub struct LoopOptions<'a> {
    pub name: String,
    pub stylize: Option<StyleJob<'a>>,
}

/// Runs blend → train → evaluate → re-rank until a ranking repeats or the
/// iteration cap is hit.
pub fn irb_loop(
    policy: &BlendPolicy,
    source: &DatasetManifest,
    target_pool: &DatasetManifest,
    target_val: &DatasetManifest,
    runner: &mut dyn IterationRunner,
    options: LoopOptions<'_>,
) -> Result<IrbRunState> {
    check_disjoint(&[target_pool, target_val])
        .map_err(|e| Error::Argument(format!("blend pool and validation set overlap: {e}")))?;
    if source.class_set != target_pool.class_set || source.class_set != target_val.class_set {
        return Err(Error::Argument("source, pool and validation class sets differ".into()));
    }
    policy.validate(&source.class_set, target_pool.len())?;

    let class_set = source.class_set.clone();
    let mut state = IrbRunState::new(options.name, class_set.clone(), policy.clone(), options.stylize.is_some());
    let fail = |state: &IrbRunState, iteration: usize, err: Error| Error::Loop {
        iteration,
        partial: Box::new(state.clone()),
        source: Box::new(err),
    };

    // Stylization is deterministic, so doing it once is equivalent to doing it per round.
    let source = match &options.stylize {
        Some(job) => build_blended_trainset(source, &[], Some(job)).map_err(|e| fail(&state, 0, e))?,
        None => source.clone(),
    };

    let mut allocation = initial_allocation(policy, target_pool).map_err(|e| fail(&state, 0, e))?;
    for iteration in 0..policy.max_iterations {
        let mut step = || -> Result<(Vec<String>, IterationOutcome, Vec<ClassId>)> {
            let blended = select_blend_images(target_pool, &allocation, policy.seed)?;
            let trainset = build_blended_trainset(&source, &blended, None)?;
            log::info!(
                "IRB round {iteration}: blend {} ({} images), trainset {}",
                allocation.label,
                blended.len(),
                trainset.len()
            );
            let outcome = runner.train_and_evaluate(iteration, &trainset, target_val)?;
            let ranking = rank_classes(&outcome.report.foreground_iou(&class_set))?;
            Ok((blended.into_iter().map(|s| s.sample_id).collect(), outcome, ranking))
        };
        let (blended_ids, outcome, ranking) = step().map_err(|e| fail(&state, iteration, e))?;
        log::info!(
            "IRB round {iteration}: mIoU {:.4}, ranking {ranking:?}",
            outcome.report.miou
        );
        state.record(IrbIteration {
            index: iteration,
            allocation: allocation.clone(),
            blended_ids,
            report: outcome.report,
            checkpoint: outcome.checkpoint,
        });
        if state.rankings_seen.contains(&ranking) {
            break;
        }
        allocation = allocate_blend(policy, &ranking).map_err(|e| fail(&state, iteration, e))?;
        state.rankings_seen.push(ranking);
    }
    Ok(state)
}

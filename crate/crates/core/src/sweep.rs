//! The evaluation grid: train once per training seed, then unlearn with every
//! method under every unlearning seed of that row.
//!
//! Each cell `(method, i, j)` is a pure function of the plan, so the grid is
//! identical whether cells run serially or on a thread pool.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{self, DatasetSpec, ForgetSplit, ForgetTarget, LabelMode};
use crate::error::{Error, Result};
use crate::nncore::{self, Architecture, ModelParams, TrainConfig};
use crate::seedkit::Seed;
use crate::unlearners::{self, MethodKind, UnlearnMethod};

/// Everything a plan needs besides its seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub dataset: DatasetSpec,
    pub dataset_seed: Seed,
    pub target: ForgetTarget,
    pub label_mode: LabelMode,
    pub arch: Architecture,
    pub train: TrainConfig,
    pub methods: Vec<UnlearnMethod>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// One training seed, J unlearning seeds.
    CommonPractice,
    /// Several training seeds, J unlearning seeds each.
    Recommended,
    /// Any I ≥ 1, J ≥ 1.
    Custom,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::CommonPractice => "common_practice",
            Protocol::Recommended => "recommended",
            Protocol::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Protocol::CommonPractice, Protocol::Recommended, Protocol::Custom]
            .into_iter()
            .find(|p| p.as_str() == s)
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub protocol: Protocol,
    pub root_seed: Seed,
    pub training_seeds: Vec<Seed>,
    /// Row `i` holds the unlearning seeds paired with training seed `i`.
    pub unlearning_seeds: Vec<Vec<Seed>>,
    #[serde(flatten)]
    pub experiment: Experiment,
}

fn require(cond: bool, path: &str, message: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::config(path, message))
    }
}

/// Training seed `i` is `derive(root, "train/i")`; unlearning seed `(i, j)`
/// is `derive(root, "unlearn/i/j")`.
fn derive_seeds(i_count: usize, j_count: usize, root: Seed) -> (Vec<Seed>, Vec<Vec<Seed>>) {
    let training = (0..i_count).map(|i| root.derive(&format!("train/{i}"))).collect();
    let unlearning = (0..i_count)
        .map(|i| (0..j_count).map(|j| root.derive(&format!("unlearn/{i}/{j}"))).collect())
        .collect();
    (training, unlearning)
}

impl SweepPlan {
    /// General grid with `i_count` training seeds and `j_count` unlearning
    /// seeds per training seed.
    pub fn custom(i_count: usize, j_count: usize, root: Seed, experiment: Experiment) -> Result<Self> {
        require(
            i_count >= 1,
            "protocol.i",
            format!("I ≥ 1 required (got I = {i_count})"),
        )?;
        require(
            j_count >= 1,
            "protocol.j",
            format!("J ≥ 1 required (got J = {j_count})"),
        )?;
        let (training_seeds, unlearning_seeds) = derive_seeds(i_count, j_count, root);
        let plan = SweepPlan {
            protocol: Protocol::Custom,
            root_seed: root,
            training_seeds,
            unlearning_seeds,
            experiment,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn i_count(&self) -> usize {
        self.training_seeds.len()
    }

    pub fn j_count(&self) -> usize {
        self.unlearning_seeds.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let (i, j) = (self.i_count(), self.j_count());
        require(i >= 1, "protocol.i", format!("I ≥ 1 required (got I = {i})"))?;
        require(j >= 1, "protocol.j", format!("J ≥ 1 required (got J = {j})"))?;
        if self.protocol == Protocol::CommonPractice {
            require(i == 1, "protocol.i", "common practice uses exactly one training seed")?;
        }
        if self.protocol == Protocol::Recommended {
            require(
                i >= 2,
                "protocol.i",
                format!("the recommended protocol needs I ≥ 2 (got I = {i})"),
            )?;
        }
        require(
            self.unlearning_seeds.len() == i && self.unlearning_seeds.iter().all(|r| r.len() == j),
            "unlearning_seeds",
            "unlearning seeds must form an I×J matrix",
        )?;
        require(
            self.training_seeds.iter().collect::<HashSet<_>>().len() == i,
            "training_seeds",
            "training seeds must be pairwise distinct",
        )?;
        for (k, row) in self.unlearning_seeds.iter().enumerate() {
            require(
                row.iter().collect::<HashSet<_>>().len() == j,
                &format!("unlearning_seeds[{k}]"),
                "unlearning seeds must be pairwise distinct within a row",
            )?;
        }
        let e = &self.experiment;
        e.dataset.validate()?;
        e.target.validate(&e.dataset)?;
        e.arch.validate()?;
        e.train.validate()?;
        require(!e.methods.is_empty(), "methods", "at least one method is required")?;
        for (k, m) in e.methods.iter().enumerate() {
            m.validate(&format!("methods[{k}]"))?;
        }
        require(
            e.arch.input_dim == e.dataset.dim,
            "arch.input_dim",
            format!(
                "input_dim {} does not match dataset dim {}",
                e.arch.input_dim, e.dataset.dim
            ),
        )?;
        let classes = e.dataset.n_classes(e.label_mode);
        require(
            e.arch.n_classes == classes,
            "arch.n_classes",
            format!("n_classes {} does not match {classes} labels", e.arch.n_classes),
        )
    }
}

/// Single-training-seed protocol: I = 1, J unlearning seeds.
pub fn plan_common_practice(j_count: usize, root: Seed, experiment: Experiment) -> Result<SweepPlan> {
    let mut plan = SweepPlan::custom(1, j_count, root, experiment)?;
    plan.protocol = Protocol::CommonPractice;
    Ok(plan)
}

/// Multi-training-seed protocol: I ≥ 2 training seeds, J unlearning seeds each.
pub fn plan_recommended(i_count: usize, j_count: usize, root: Seed, experiment: Experiment) -> Result<SweepPlan> {
    let mut plan = SweepPlan::custom(i_count, j_count, root, experiment)?;
    plan.protocol = Protocol::Recommended;
    plan.validate()?;
    Ok(plan)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    RetainTrainAcc,
    ForgetTrainAcc,
    RetainTestAcc,
    ForgetTestAcc,
}

impl MetricName {
    pub const ALL: [MetricName; 4] = [
        MetricName::RetainTrainAcc,
        MetricName::ForgetTrainAcc,
        MetricName::RetainTestAcc,
        MetricName::ForgetTestAcc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::RetainTrainAcc => "retain_train_acc",
            MetricName::ForgetTrainAcc => "forget_train_acc",
            MetricName::RetainTestAcc => "retain_test_acc",
            MetricName::ForgetTestAcc => "forget_test_acc",
        }
    }
}

impl FromStr for MetricName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricName::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config("metric", format!("unknown metric `{s}`")))
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Metrics of one unlearned model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub method: MethodKind,
    pub hyper_digest: String,
    pub protocol: Protocol,
    pub target: ForgetTarget,
    pub train_seed: Seed,
    pub unlearn_seed: Seed,
    pub retain_train_acc: f64,
    pub forget_train_acc: f64,
    pub retain_test_acc: f64,
    pub forget_test_acc: f64,
    pub wall_ms: f64,
}

impl MetricRecord {
    pub fn metric(&self, name: MetricName) -> f64 {
        match name {
            MetricName::RetainTrainAcc => self.retain_train_acc,
            MetricName::ForgetTrainAcc => self.forget_train_acc,
            MetricName::RetainTestAcc => self.retain_test_acc,
            MetricName::ForgetTestAcc => self.forget_test_acc,
        }
    }

    /// Equality ignoring `wall_ms`.
    pub fn same_outcome(&self, other: &MetricRecord) -> bool {
        MetricRecord {
            wall_ms: 0.0,
            ..self.clone()
        } == MetricRecord {
            wall_ms: 0.0,
            ..other.clone()
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub seed: Seed,
    pub params: ModelParams,
}

/// A completed sweep. `records` is ordered by method, then `i`, then `j`.
#[derive(Clone, Debug)]
pub struct SweepGrid {
    pub plan: SweepPlan,
    pub records: Vec<MetricRecord>,
    pub trained: Vec<TrainedModel>,
    /// Number of `train` invocations performed for the original models.
    pub models_trained: usize,
}

impl SweepGrid {
    pub fn record(&self, method_index: usize, i: usize, j: usize) -> &MetricRecord {
        let (ni, nj) = (self.plan.i_count(), self.plan.j_count());
        &self.records[(method_index * ni + i) * nj + j]
    }
}

/// Extracts an I×J matrix of `metric` for the first plan method of `method`.
pub fn grid_metric(grid: &SweepGrid, method: MethodKind, metric: &str) -> Result<Vec<Vec<f64>>> {
    let metric: MetricName = metric.parse()?;
    let m = grid
        .plan
        .experiment
        .methods
        .iter()
        .position(|u| u.kind() == method)
        .ok_or_else(|| Error::config("method", format!("method `{method}` is not part of this sweep")))?;
    Ok((0..grid.plan.i_count())
        .map(|i| {
            (0..grid.plan.j_count())
                .map(|j| grid.record(m, i, j).metric(metric))
                .collect()
        })
        .collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Schedule {
    Serial,
    /// Cells run on the current rayon pool.
    #[default]
    Parallel,
}

/// Outcome of [`execute`]: on failure, `failure` holds the first failing
/// cell (in grid order) and `records` every cell that did complete.
#[derive(Debug)]
pub struct SweepRun {
    pub records: Vec<MetricRecord>,
    pub trained: Vec<TrainedModel>,
    pub models_trained: usize,
    pub failure: Option<Error>,
}

fn cell_error(method: &str, i: usize, j: usize, e: Error) -> Error {
    Error::CellFailed {
        method: method.to_owned(),
        i,
        j,
        source: Box::new(e),
    }
}

fn evaluate_cell(
    plan: &SweepPlan,
    split: &ForgetSplit,
    method: &UnlearnMethod,
    trained: &ModelParams,
    i: usize,
    j: usize,
) -> Result<MetricRecord> {
    let e = &plan.experiment;
    let unlearn_seed = plan.unlearning_seeds[i][j];
    let start = Instant::now();
    let u = unlearners::unlearn(method, trained, split, &e.arch, &e.train, unlearn_seed)?;
    let acc = |set: &[datagen::LabeledExample]| nncore::accuracy(&u, set, split.label_mode);
    let record = MetricRecord {
        method: method.kind(),
        hyper_digest: method.hyper_digest(&e.train),
        protocol: plan.protocol,
        target: split.target,
        train_seed: plan.training_seeds[i],
        unlearn_seed,
        retain_train_acc: acc(&split.retain_train)?,
        forget_train_acc: acc(&split.forget_train)?,
        retain_test_acc: acc(&split.retain_test)?,
        forget_test_acc: acc(&split.forget_test)?,
        wall_ms: 0.0,
    };
    Ok(MetricRecord {
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        ..record
    })
}

fn map_ordered<T, R, F>(schedule: Schedule, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match schedule {
        Schedule::Serial => items.iter().map(f).collect(),
        Schedule::Parallel => items.par_iter().map(f).collect(),
    }
}

/// Runs the grid, keeping partial results on failure.
pub fn execute(plan: &SweepPlan, schedule: Schedule) -> SweepRun {
    let empty = |failure| SweepRun {
        records: Vec::new(),
        trained: Vec::new(),
        models_trained: 0,
        failure: Some(failure),
    };
    if let Err(e) = plan.validate() {
        return empty(e);
    }
    let e = &plan.experiment;
    let split = match datagen::generate(&e.dataset, e.dataset_seed)
        .and_then(|ds| Ok((ds.split_forget(e.target, e.label_mode)?, ds.train)))
    {
        Ok(v) => v,
        Err(err) => return empty(err),
    };
    let (split, full_train) = split;

    let rows: Vec<usize> = (0..plan.i_count()).collect();
    let trained: Vec<Result<TrainedModel>> = map_ordered(schedule, &rows, |&i| {
        let seed = plan.training_seeds[i];
        nncore::train(&e.arch, &full_train, &e.train, e.label_mode, seed)
            .map(|params| TrainedModel { seed, params })
            .map_err(|err| cell_error("train", i, 0, err))
    });
    let models_trained = trained.len();
    let mut models = Vec::with_capacity(trained.len());
    for t in trained {
        match t {
            Ok(m) => models.push(m),
            Err(err) => {
                return SweepRun {
                    records: Vec::new(),
                    trained: models,
                    models_trained,
                    failure: Some(err),
                }
            }
        }
    }

    let cells: Vec<(usize, usize, usize)> = (0..e.methods.len())
        .flat_map(|m| (0..plan.i_count()).flat_map(move |i| (0..plan.j_count()).map(move |j| (m, i, j))))
        .collect();
    let results = map_ordered(schedule, &cells, |&(m, i, j)| {
        let method = &e.methods[m];
        evaluate_cell(plan, &split, method, &models[i].params, i, j)
            .map_err(|err| cell_error(method.kind().as_str(), i, j, err))
    });

    let mut records = Vec::with_capacity(results.len());
    let mut failure = None;
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(err) => {
                failure.get_or_insert(err);
            }
        }
    }
    SweepRun {
        records,
        trained: models,
        models_trained,
        failure,
    }
}

pub fn run_sweep(plan: &SweepPlan) -> Result<SweepGrid> {
    run_sweep_with(plan, Schedule::Parallel)
}

pub fn run_sweep_with(plan: &SweepPlan, schedule: Schedule) -> Result<SweepGrid> {
    let run = execute(plan, schedule);
    if let Some(err) = run.failure {
        return Err(err);
    }
    Ok(SweepGrid {
        plan: plan.clone(),
        records: run.records,
        trained: run.trained,
        models_trained: run.models_trained,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_experiment(methods: Vec<UnlearnMethod>) -> Experiment {
        let dataset = DatasetSpec {
            superclasses: 3,
            subclasses_per_superclass: 2,
            n_per_subclass_train: 8,
            n_per_subclass_test: 4,
            ..DatasetSpec::default()
        };
        Experiment {
            arch: Architecture::new(dataset.dim, vec![8], 3).unwrap(),
            dataset,
            dataset_seed: Seed(1),
            target: ForgetTarget::full_class(0),
            label_mode: LabelMode::Superclass,
            train: TrainConfig {
                epochs: 4,
                ..TrainConfig::default()
            },
            methods,
        }
    }

    fn all_methods() -> Vec<UnlearnMethod> {
        MethodKind::ALL.into_iter().map(UnlearnMethod::with_defaults).collect()
    }

    #[test]
    fn plan_shapes() {
        let e = small_experiment(all_methods());
        let a = plan_common_practice(11, Seed(7), e.clone()).unwrap();
        assert_eq!(
            (a.i_count(), a.j_count(), a.protocol),
            (1, 11, Protocol::CommonPractice)
        );
        let a3 = plan_common_practice(3, Seed(7), e.clone()).unwrap();
        assert_eq!((a3.i_count(), a3.j_count()), (1, 3));
        assert!(plan_common_practice(0, Seed(7), e.clone()).is_err());

        let b = plan_recommended(11, 1, Seed(7), e.clone()).unwrap();
        assert_eq!((b.i_count(), b.j_count(), b.protocol), (11, 1, Protocol::Recommended));
        assert!(matches!(
            plan_recommended(1, 5, Seed(7), e.clone()),
            Err(Error::Config { .. })
        ));
        assert!(plan_recommended(3, 0, Seed(7), e).is_err());
    }

    #[test]
    fn derived_seeds_are_distinct() {
        let plan = SweepPlan::custom(20, 20, Seed(123), small_experiment(all_methods())).unwrap();
        let mut train = HashSet::new();
        assert!(plan.training_seeds.iter().all(|s| train.insert(*s)));
        let mut all = HashSet::new();
        for row in &plan.unlearning_seeds {
            let mut seen = HashSet::new();
            assert!(row.iter().all(|s| seen.insert(*s)));
            all.extend(row.iter().copied());
        }
        // distinct across rows too
        assert_eq!(all.len(), 400);
    }

    #[test]
    fn plan_validation_catches_inconsistency() {
        let mut e = small_experiment(all_methods());
        e.arch.n_classes = 6;
        assert!(SweepPlan::custom(1, 1, Seed(0), e.clone()).is_err());
        e.label_mode = LabelMode::Subclass;
        assert!(SweepPlan::custom(1, 1, Seed(0), e).is_ok());

        let mut plan = SweepPlan::custom(2, 2, Seed(0), small_experiment(all_methods())).unwrap();
        plan.training_seeds[1] = plan.training_seeds[0];
        assert!(plan.validate().is_err());
        let mut plan = SweepPlan::custom(2, 2, Seed(0), small_experiment(all_methods())).unwrap();
        plan.unlearning_seeds[1][1] = plan.unlearning_seeds[1][0];
        assert!(plan.validate().is_err());
        assert!(SweepPlan::custom(1, 1, Seed(0), small_experiment(vec![])).is_err());
    }

    #[test]
    fn ssd_row_is_constant() {
        let plan = plan_common_practice(
            11,
            Seed(3),
            small_experiment(vec![UnlearnMethod::with_defaults(MethodKind::Ssd)]),
        )
        .unwrap();
        let grid = run_sweep(&plan).unwrap();
        assert_eq!(grid.records.len(), 11);
        let first = &grid.records[0];
        for r in &grid.records {
            for m in MetricName::ALL {
                assert_eq!(r.metric(m).to_bits(), first.metric(m).to_bits());
            }
        }
        assert_eq!(grid.models_trained, 1);
    }

    #[test]
    fn rerun_is_identical_and_cache_is_sound() {
        let plan = SweepPlan::custom(2, 2, Seed(5), small_experiment(vec![UnlearnMethod::Retrain])).unwrap();
        let a = run_sweep(&plan).unwrap();
        let b = run_sweep(&plan).unwrap();
        assert_eq!(a.records.len(), 4);
        assert_eq!(a.models_trained, 2);
        for (x, y) in a.records.iter().zip(&b.records) {
            assert!(x.same_outcome(y));
        }
        let e = &plan.experiment;
        let ds = datagen::generate(&e.dataset, e.dataset_seed).unwrap();
        for (i, t) in a.trained.iter().enumerate() {
            let fresh = nncore::train(&e.arch, &ds.train, &e.train, e.label_mode, plan.training_seeds[i]).unwrap();
            assert!(t.params.bit_eq(&fresh));
        }
    }

    #[test]
    fn serial_and_parallel_agree() {
        let plan = SweepPlan::custom(3, 2, Seed(9), small_experiment(all_methods())).unwrap();
        let serial = run_sweep_with(&plan, Schedule::Serial).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let parallel = pool.install(|| run_sweep_with(&plan, Schedule::Parallel)).unwrap();
        assert_eq!(serial.records.len(), 3 * 2 * 6);
        for (x, y) in serial.records.iter().zip(&parallel.records) {
            assert!(x.same_outcome(y));
        }
    }

    #[test]
    fn grid_metric_extraction() {
        let plan = SweepPlan::custom(2, 3, Seed(2), small_experiment(vec![UnlearnMethod::Retrain])).unwrap();
        let grid = run_sweep(&plan).unwrap();
        let m = grid_metric(&grid, MethodKind::Retrain, "retain_test_acc").unwrap();
        assert_eq!((m.len(), m[0].len()), (2, 3));
        for (i, row) in m.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let r = grid.record(0, i, j);
                assert_eq!(v, r.retain_test_acc);
                assert_eq!(r.train_seed, plan.training_seeds[i]);
                assert_eq!(r.unlearn_seed, plan.unlearning_seeds[i][j]);
            }
        }
        assert!(grid_metric(&grid, MethodKind::Retrain, "mia").is_err());
        assert!(grid_metric(&grid, MethodKind::Ssd, "retain_test_acc").is_err());
    }

    #[test]
    fn failing_cell_is_named_and_partial_results_kept() {
        let mut e = small_experiment(vec![
            UnlearnMethod::Retrain,
            UnlearnMethod::with_defaults(MethodKind::Unsir),
        ]);
        e.target = ForgetTarget::sub_class(1);
        let plan = SweepPlan::custom(1, 2, Seed(0), e).unwrap();
        let run = execute(&plan, Schedule::Serial);
        assert_eq!(run.records.len(), 2);
        match run.failure {
            Some(Error::CellFailed { method, i, j, .. }) => assert_eq!((method.as_str(), i, j), ("unsir", 0, 0)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(run_sweep(&plan).is_err());
    }
}

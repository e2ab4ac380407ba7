//! Confidence-gated instance transfer from auxiliary sets.
//!
//! A model fitted on the original training set is applied to every
//! auxiliary instance. Instances whose predicted label matches their given
//! label with a vote margin of at least `beta` join the transferable set,
//! which is added to the training set before refitting.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{common_dimension, LabeledInstance, NUM_CLASSES};
use crate::error::{self, Result};
use crate::evaluation::{accuracy, mean_std, separation_ratio};
use crate::forest::{confidence, train_forest, Forest, ForestParams};
use crate::seed;

/// Named auxiliary image set.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxSet {
    pub name: String,
    pub instances: Vec<LabeledInstance>,
}

impl AuxSet {
    pub fn new(name: impl Into<String>, instances: Vec<LabeledInstance>) -> Self {
        AuxSet {
            name: name.into(),
            instances,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    /// Minimum vote margin for transfer, in `[0, 1]`.
    pub beta: f64,
    pub forest: ForestParams,
    /// Also fit one model per auxiliary source using only that source's
    /// transferable instances.
    pub per_source: bool,
    /// Also fit a model on the training set plus every auxiliary instance,
    /// ungated.
    pub pooled_baseline: bool,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            beta: 0.10,
            forest: ForestParams::default(),
            per_source: true,
            pooled_baseline: false,
        }
    }
}

impl TransferConfig {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return error::parameter(format!("beta {} is outside [0, 1]", self.beta));
        }
        if self.forest.trees == 0 {
            return error::parameter("a forest needs at least one tree");
        }
        Ok(())
    }
}

/// Auxiliary instances accepted by the gate, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferableSet {
    pub instances: Vec<LabeledInstance>,
    /// Vote margin of each accepted instance under the gating model.
    pub confidences: Vec<f64>,
    /// Accepted instances per source tag.
    pub per_source: BTreeMap<String, usize>,
}

impl TransferableSet {
    pub fn empty() -> Self {
        TransferableSet {
            instances: Vec::new(),
            confidences: Vec::new(),
            per_source: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    fn push(&mut self, x: LabeledInstance, conf: f64) {
        *self.per_source.entry(x.source.clone()).or_default() += 1;
        self.instances.push(x);
        self.confidences.push(conf);
    }

    fn extend(&mut self, other: TransferableSet) {
        for (x, c) in other.instances.into_iter().zip(other.confidences) {
            self.push(x, c);
        }
    }

    /// Re-applies the gate to every member, returning the ids that fail.
    pub fn verify(&self, model: &Forest, beta: f64) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for x in &self.instances {
            let tally = model.predict_votes(&x.features)?;
            if tally.winner() != x.label || confidence(&tally, model.n_trees())? < beta {
                bad.push(x.id.clone());
            }
        }
        Ok(bad)
    }
}

/// Keeps the auxiliary instances that `model` predicts as their given label
/// with vote margin at least `beta`.
pub fn tma_transfer(model: &Forest, aux: &[LabeledInstance], trees: usize, beta: f64) -> Result<TransferableSet> {
    if trees != model.n_trees() {
        return error::validation(format!(
            "model has {} trees but T = {trees} was given",
            model.n_trees()
        ));
    }
    if !(0.0..=1.0).contains(&beta) {
        return error::parameter(format!("beta {beta} is outside [0, 1]"));
    }
    let tallies = model.predict_votes_batch(aux)?;
    let mut out = TransferableSet::empty();
    for (x, tally) in aux.iter().zip(tallies) {
        if tally.winner() != x.label {
            continue;
        }
        let conf = confidence(&tally, trees)?;
        if conf >= beta {
            out.push(x.clone(), conf);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceOutcome {
    pub name: String,
    /// Auxiliary instances offered after de-duplication.
    pub candidates: usize,
    pub transferred: usize,
    /// Test accuracy when only this source's transferable instances are
    /// added. Present when per-source evaluation is enabled.
    pub accuracy_source_only: Option<f64>,
}

/// Outcome of one train/test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    pub accuracy_without_transfer: f64,
    pub accuracy_with_transfer: f64,
    pub accuracy_pooled: Option<f64>,
    pub transferred: usize,
    pub sources: Vec<SourceOutcome>,
    /// Class separation ratio of the original training set; null when it
    /// has fewer than two classes or coincident classes.
    pub rho_before: Option<f64>,
    /// Same, for the training set enlarged by the transferable set.
    pub rho_after: Option<f64>,
    /// The gating model saw a single label.
    pub degenerate_model: bool,
    pub test_ids: Vec<String>,
}

fn fit(train: &[LabeledInstance], extra: &[LabeledInstance], params: &ForestParams) -> Result<Forest> {
    if extra.is_empty() {
        return train_forest(train, params);
    }
    let mut all = Vec::with_capacity(train.len() + extra.len());
    all.extend_from_slice(train);
    all.extend_from_slice(extra);
    train_forest(&all, params)
}

fn test_accuracy(model: &Forest, test: &[LabeledInstance]) -> Result<f64> {
    let predicted = model.predict_labels(test)?;
    let given: Vec<_> = test.iter().map(|x| x.label).collect();
    accuracy(&predicted, &given)
}

fn rho_of(train: &[LabeledInstance], extra: &[LabeledInstance]) -> Option<f64> {
    let mut all = train.to_vec();
    all.extend_from_slice(extra);
    separation_ratio(&all).ok().map(|b| b.rho).filter(|r| r.is_finite())
}

/// Drops auxiliary instances already seen in an earlier source; the first
/// source keeps a shared image.
fn dedup_aux(aux_sets: &[AuxSet]) -> Vec<AuxSet> {
    let mut seen = HashSet::new();
    aux_sets
        .iter()
        .map(|s| AuxSet {
            name: s.name.clone(),
            instances: s
                .instances
                .iter()
                .filter(|x| seen.insert(x.id.clone()))
                .cloned()
                .collect(),
        })
        .collect()
}

/// Fits the gating model on `train`, gathers the transferable set from every
/// auxiliary set in order, refits and scores both models on `test`.
///
/// Both arms use the same derived forest seed, so with an empty
/// transferable set the two accuracies coincide.
pub fn tma_score(train: &[LabeledInstance], aux_sets: &[AuxSet], test: &[LabeledInstance], config: &TransferConfig) -> Result<RunReport> {
    config.validate()?;
    if train.is_empty() || test.is_empty() {
        return error::validation("training and test sets must be non-empty");
    }
    let p = common_dimension(train)?;
    if common_dimension(test)? != p {
        return error::validation("test features differ in dimension from training features");
    }
    let train_ids: HashSet<&str> = train.iter().map(|x| x.id.as_str()).collect();
    let test_ids: HashSet<&str> = test.iter().map(|x| x.id.as_str()).collect();
    if let Some(x) = test.iter().find(|x| train_ids.contains(x.id.as_str())) {
        return error::validation(format!("`{}` appears in both training and test sets", x.id));
    }
    for set in aux_sets {
        if let Some(x) = set.instances.iter().find(|x| test_ids.contains(x.id.as_str()) || train_ids.contains(x.id.as_str())) {
            return error::validation(format!(
                "auxiliary set `{}` contains `{}`, which is already a training or test image",
                set.name, x.id
            ));
        }
        if !set.instances.is_empty() && common_dimension(&set.instances)? != p {
            return error::validation(format!("auxiliary set `{}` differs in feature dimension", set.name));
        }
    }
    let aux_sets = dedup_aux(aux_sets);

    let params = config.forest.with_seed(seed::derive_tag(config.forest.seed, "refit"));
    let gate = train_forest(train, &params)?;
    let mut transfer = TransferableSet::empty();
    let mut per_source_sets = Vec::with_capacity(aux_sets.len());
    for set in &aux_sets {
        let found = tma_transfer(&gate, &set.instances, gate.n_trees(), config.beta)?;
        log::debug!("{}: {} of {} transferable", set.name, found.len(), set.instances.len());
        per_source_sets.push(found.instances.clone());
        transfer.extend(found);
    }

    let accuracy_without_transfer = test_accuracy(&gate, test)?;
    let accuracy_with_transfer = if transfer.is_empty() {
        accuracy_without_transfer
    } else {
        test_accuracy(&fit(train, &transfer.instances, &params)?, test)?
    };

    let accuracy_pooled = if config.pooled_baseline {
        let pooled: Vec<LabeledInstance> = aux_sets.iter().flat_map(|s| s.instances.iter().cloned()).collect();
        Some(test_accuracy(&fit(train, &pooled, &params)?, test)?)
    } else {
        None
    };

    let mut sources = Vec::with_capacity(aux_sets.len());
    for (set, found) in aux_sets.iter().zip(&per_source_sets) {
        let accuracy_source_only = if !config.per_source {
            None
        } else if found.is_empty() {
            Some(accuracy_without_transfer)
        } else if found.len() == transfer.len() {
            Some(accuracy_with_transfer)
        } else {
            Some(test_accuracy(&fit(train, found, &params)?, test)?)
        };
        sources.push(SourceOutcome {
            name: set.name.clone(),
            candidates: set.instances.len(),
            transferred: found.len(),
            accuracy_source_only,
        });
    }

    Ok(RunReport {
        seed: config.forest.seed,
        train_size: train.len(),
        test_size: test.len(),
        accuracy_without_transfer,
        accuracy_with_transfer,
        accuracy_pooled,
        transferred: transfer.len(),
        sources,
        rho_before: rho_of(train, &[]),
        rho_after: rho_of(train, &transfer.instances),
        degenerate_model: gate.is_degenerate(),
        test_ids: test.iter().map(|x| x.id.clone()).collect(),
    })
}

/// How the primary set is divided into training and test halves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitOptions {
    /// Fraction of the primary set used for training.
    pub train_fraction: f64,
    /// Split each class separately instead of the whole set at once.
    pub stratified: bool,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions {
            train_fraction: 0.5,
            stratified: false,
        }
    }
}

/// Random train/test split, returned as (train, test).
pub fn split(data: &[LabeledInstance], opts: &SplitOptions, seed: u64) -> Result<(Vec<LabeledInstance>, Vec<LabeledInstance>)> {
    if !(opts.train_fraction > 0.0 && opts.train_fraction < 1.0) {
        return error::parameter(format!("split fraction {} must lie strictly between 0 and 1", opts.train_fraction));
    }
    if data.len() < 2 {
        return error::validation("need at least two primary instances to split");
    }
    let mut rng = seed::rng(seed);
    let take = |n: usize| ((n as f64 * opts.train_fraction).round() as usize).clamp(1, n - 1);
    let mut is_train = vec![false; data.len()];
    if opts.stratified {
        for c in 0..NUM_CLASSES {
            let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data[i].label.index() == c).collect();
            if idx.is_empty() {
                continue;
            }
            idx.shuffle(&mut rng);
            let k = if idx.len() == 1 { 1 } else { take(idx.len()) };
            idx[..k].iter().for_each(|&i| is_train[i] = true);
        }
    } else {
        let mut idx: Vec<usize> = (0..data.len()).collect();
        idx.shuffle(&mut rng);
        idx[..take(data.len())].iter().for_each(|&i| is_train[i] = true);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (x, t) in data.iter().zip(is_train) {
        if t {
            train.push(x.clone());
        } else {
            test.push(x.clone());
        }
    }
    if test.is_empty() {
        return error::validation("split left no test instances");
    }
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let (mean, std) = mean_std(values);
        Some(Summary { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSummary {
    pub name: String,
    pub mean_transferred: f64,
    pub accuracy_source_only: Option<Summary>,
}

/// Aggregate over runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub runs: usize,
    pub accuracy_with_transfer: Summary,
    pub accuracy_without_transfer: Summary,
    pub accuracy_pooled: Option<Summary>,
    pub mean_transferred: f64,
    pub sources: Vec<SourceSummary>,
    /// Mean over runs with a finite value.
    pub rho_before: Option<f64>,
    pub rho_after: Option<f64>,
    pub seeds: Vec<u64>,
    pub run_records: Vec<RunReport>,
}

impl ScoreReport {
    pub fn from_runs(run_records: Vec<RunReport>) -> Result<Self> {
        if run_records.is_empty() {
            return error::validation("no runs to summarize");
        }
        let col = |f: &dyn Fn(&RunReport) -> Option<f64>| run_records.iter().filter_map(f).collect::<Vec<f64>>();
        let with = col(&|r| Some(r.accuracy_with_transfer));
        let without = col(&|r| Some(r.accuracy_without_transfer));
        let pooled = col(&|r| r.accuracy_pooled);
        let transferred = col(&|r| Some(r.transferred as f64));
        let mean = |v: Vec<f64>| Summary::of(&v).map(|s| s.mean);
        let sources = run_records[0]
            .sources
            .iter()
            .enumerate()
            .map(|(k, s)| SourceSummary {
                name: s.name.clone(),
                mean_transferred: mean(col(&|r| Some(r.sources[k].transferred as f64))).unwrap_or(0.0),
                accuracy_source_only: Summary::of(&col(&|r| r.sources[k].accuracy_source_only)),
            })
            .collect();
        Ok(ScoreReport {
            runs: run_records.len(),
            accuracy_with_transfer: Summary::of(&with).unwrap(),
            accuracy_without_transfer: Summary::of(&without).unwrap(),
            accuracy_pooled: Summary::of(&pooled),
            mean_transferred: mean(transferred).unwrap_or(0.0),
            sources,
            rho_before: mean(col(&|r| r.rho_before)),
            rho_after: mean(col(&|r| r.rho_after)),
            seeds: run_records.iter().map(|r| r.seed).collect(),
            run_records,
        })
    }
}

/// Repeats [`tma_score`] over `runs` random splits of `primary`. Run `r`
/// uses the seed derived from `(config.forest.seed, r)` for both the split
/// and the forests.
pub fn run_experiment(primary: &[LabeledInstance], aux_sets: &[AuxSet], config: &TransferConfig, split_opts: &SplitOptions, runs: usize) -> Result<ScoreReport> {
    if runs == 0 {
        return error::parameter("runs must be at least 1");
    }
    config.validate()?;
    let records = (0..runs)
        .into_par_iter()
        .map(|r| {
            let run_seed = seed::derive(config.forest.seed, r as u64);
            let (train, test) = split(primary, split_opts, seed::derive_tag(run_seed, "split"))?;
            let cfg = TransferConfig {
                forest: config.forest.with_seed(run_seed),
                ..config.clone()
            };
            tma_score(&train, aux_sets, &test, &cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    ScoreReport::from_runs(records)
}

/// Repeats [`tma_score`] on a fixed train/test division with `runs`
/// different forest seeds.
pub fn run_fixed_split(train: &[LabeledInstance], aux_sets: &[AuxSet], test: &[LabeledInstance], config: &TransferConfig, runs: usize) -> Result<ScoreReport> {
    if runs == 0 {
        return error::parameter("runs must be at least 1");
    }
    let records = (0..runs)
        .into_par_iter()
        .map(|r| {
            let cfg = TransferConfig {
                forest: config.forest.with_seed(seed::derive(config.forest.seed, r as u64)),
                ..config.clone()
            };
            tma_score(train, aux_sets, test, &cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    ScoreReport::from_runs(records)
}

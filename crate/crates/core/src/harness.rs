//! Training and evaluation: single-fold training, repeated stratified
//! cross-validation, and fusion-method sweeps.
//!
//! Determinism contract: every random decision made by a run is derived
//! from the master seed before any training starts — one fold-plan seed per
//! repeat plus one training seed per (repeat, fold), drawn in a fixed
//! order. Fold tasks can therefore execute in any order (or on several
//! threads) and still produce the identical report.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{make_batch, stratified_folds, FoldPlan, GraphRecord, TuDataset};
use crate::error::{Error, Result};
use crate::layers::FusionMethod;
use crate::model::{Model, ModelConfig};
use crate::optim::{Adam, Schedule};
use crate::autodiff::Tape;

/// Everything a training run needs besides the dataset itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    /// Learning-rate decay factor applied at each milestone epoch.
    pub gamma: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub milestones: Vec<usize>,
    pub batch_size: usize,
    pub folds: usize,
    pub repeats: usize,
    /// Master seed; all other randomness is derived from it.
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let cfg = |key: &str, reason: &str| Error::Config {
            key: key.into(),
            reason: reason.into(),
        };
        if self.epochs == 0 {
            return Err(cfg("epochs", "need at least one epoch"));
        }
        if self.batch_size == 0 {
            return Err(cfg("batch_size", "batch size must be positive"));
        }
        if self.repeats == 0 {
            return Err(cfg("repeats", "need at least one repeat"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(cfg("lr", "learning rate must be positive and finite"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(cfg("gamma", "decay factor must be in (0, 1]"));
        }
        if self.weight_decay < 0.0 {
            return Err(cfg("weight_decay", "weight decay cannot be negative"));
        }
        Ok(())
    }
}

/// The result of training on one fold.
pub struct FoldOutcome {
    pub test_accuracy: f64,
    pub train_accuracy: f64,
    pub model: Model,
}

fn accuracy(model: &Model, ds: &TuDataset, indices: &[usize], batch_size: usize) -> Result<f64> {
    if indices.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for chunk in indices.chunks(batch_size) {
        let records: Vec<&GraphRecord> = chunk.iter().map(|&i| &ds.records[i]).collect();
        let batch = make_batch(&records)?;
        let predictions = model.predict(&batch)?;
        correct += predictions
            .iter()
            .zip(&batch.labels)
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(correct as f64 / indices.len() as f64)
}

/// Train a fresh model on `train_idx` and report final-epoch accuracy on
/// both splits. All randomness (initialization, batch order, dropout)
/// derives from `seed`.
pub fn train_fold(
    tc: &TrainConfig,
    ds: &TuDataset,
    train_idx: &[usize],
    test_idx: &[usize],
    seed: u64,
) -> Result<FoldOutcome> {
    tc.validate()?;
    if tc.model.n_classes != ds.n_classes {
        return Err(Error::Config {
            key: "n_classes".into(),
            reason: format!(
                "model expects {} classes, dataset has {}",
                tc.model.n_classes, ds.n_classes
            ),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Model::build(tc.model.clone(), ds.x_in, &mut rng)?;
    let mut opt = Adam::new(model.params(), tc.weight_decay);
    let schedule = Schedule::new(tc.lr, tc.gamma, tc.milestones.clone());

    let mut order: Vec<usize> = train_idx.to_vec();
    for epoch in 0..tc.epochs {
        let lr = schedule.lr_at(epoch);
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        for chunk in order.chunks(tc.batch_size) {
            let records: Vec<&GraphRecord> = chunk.iter().map(|&i| &ds.records[i]).collect();
            let batch = make_batch(&records)?;
            let tape = Tape::new();
            let logits = model.forward_train(&tape, &batch, &mut rng)?;
            let loss = model.loss(&logits, &batch.labels);
            opt.zero_grad();
            loss.backward()?;
            opt.step(lr)?;
        }
    }

    Ok(FoldOutcome {
        test_accuracy: accuracy(&model, ds, test_idx, tc.batch_size)?,
        train_accuracy: accuracy(&model, ds, train_idx, tc.batch_size)?,
        model,
    })
}

/// A cross-validation run's results. Serialized forms ([`RunReport::to_text`],
/// [`RunReport::to_csv`]) render floats exactly (shortest round-trip form)
/// and omit wall-clock time, so identical seeds produce identical bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    /// Effective configuration, echoed verbatim (filled by the caller).
    pub config_echo: String,
    pub master_seed: u64,
    pub folds: usize,
    pub repeats: usize,
    /// `accuracies[repeat][fold]`, final-epoch test accuracy.
    pub accuracies: Vec<Vec<f64>>,
    pub mean: f64,
    /// Sample standard deviation (N−1) over all repeat×fold accuracies.
    pub std: f64,
    /// Not included in serialized reports.
    pub wall_clock_secs: f64,
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

impl RunReport {
    /// Human-readable report; identical bytes for identical seeds.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("dataset: {}\n", self.dataset));
        out.push_str(&format!("master_seed: {}\n", self.master_seed));
        out.push_str(&format!("folds: {}\n", self.folds));
        out.push_str(&format!("repeats: {}\n", self.repeats));
        if !self.config_echo.is_empty() {
            out.push_str("config:\n");
            for line in self.config_echo.lines() {
                out.push_str(&format!("  {line}\n"));
            }
        }
        out.push_str("test accuracy per fold:\n");
        for (r, row) in self.accuracies.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|a| a.to_string()).collect();
            out.push_str(&format!("  repeat {r}: {}\n", cells.join(" ")));
        }
        out.push_str(&format!("mean: {}\n", self.mean));
        out.push_str(&format!("std: {}\n", self.std));
        out
    }

    /// One row per (repeat, fold) accuracy.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("repeat,fold,accuracy\n");
        for (r, row) in self.accuracies.iter().enumerate() {
            for (f, a) in row.iter().enumerate() {
                out.push_str(&format!("{r},{f},{a}\n"));
            }
        }
        out
    }

    /// Per-fold accuracy averaged over repeats.
    pub fn fold_means(&self) -> Vec<f64> {
        (0..self.folds)
            .map(|f| {
                self.accuracies.iter().map(|row| row[f]).sum::<f64>() / self.repeats as f64
            })
            .collect()
    }
}

/// Pre-drawn seeds: one fold plan per repeat, one training seed per task.
struct SeedPlan {
    plans: Vec<FoldPlan>,
    fold_seeds: Vec<Vec<u64>>,
}

fn derive_seeds(tc: &TrainConfig, ds: &TuDataset) -> Result<SeedPlan> {
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let labels = ds.labels();
    let mut plans = Vec::with_capacity(tc.repeats);
    let mut fold_seeds = Vec::with_capacity(tc.repeats);
    for _ in 0..tc.repeats {
        let plan_seed = rng.random::<u64>();
        let seeds: Vec<u64> = (0..tc.folds).map(|_| rng.random::<u64>()).collect();
        plans.push(stratified_folds(&labels, tc.folds, plan_seed)?);
        fold_seeds.push(seeds);
    }
    Ok(SeedPlan { plans, fold_seeds })
}

/// Repeated stratified cross-validation, invoking `sink` with every fold's
/// outcome (e.g. to persist checkpoints). With `jobs > 1`, folds train on
/// that many threads; results are identical to a serial run.
pub fn cross_validate_with<F>(
    tc: &TrainConfig,
    ds: &TuDataset,
    jobs: usize,
    sink: F,
) -> Result<RunReport>
where
    F: Fn(usize, usize, &FoldOutcome) -> Result<()> + Sync,
{
    tc.validate()?;
    let started = Instant::now();
    let seeds = derive_seeds(tc, ds)?;
    let mut accuracies = vec![vec![0.0; tc.folds]; tc.repeats];

    if jobs <= 1 {
        for r in 0..tc.repeats {
            for f in 0..tc.folds {
                let (train, test) = seeds.plans[r].train_test(f);
                let outcome = train_fold(tc, ds, &train, &test, seeds.fold_seeds[r][f])?;
                sink(r, f, &outcome)?;
                accuracies[r][f] = outcome.test_accuracy;
            }
        }
    } else {
        let tasks: Mutex<VecDeque<(usize, usize)>> = Mutex::new(
            (0..tc.repeats)
                .flat_map(|r| (0..tc.folds).map(move |f| (r, f)))
                .collect(),
        );
        let results: Mutex<Vec<(usize, usize, f64)>> = Mutex::new(Vec::new());
        let failure: Mutex<Option<Error>> = Mutex::new(None);
        std::thread::scope(|scope| {
            for _ in 0..jobs {
                scope.spawn(|| loop {
                    if failure.lock().unwrap().is_some() {
                        return;
                    }
                    let Some((r, f)) = tasks.lock().unwrap().pop_front() else {
                        return;
                    };
                    let (train, test) = seeds.plans[r].train_test(f);
                    let run = train_fold(tc, ds, &train, &test, seeds.fold_seeds[r][f])
                        .and_then(|outcome| {
                            sink(r, f, &outcome)?;
                            Ok(outcome.test_accuracy)
                        });
                    match run {
                        Ok(acc) => results.lock().unwrap().push((r, f, acc)),
                        Err(e) => {
                            let mut slot = failure.lock().unwrap();
                            if slot.is_none() {
                                *slot = Some(e);
                            }
                            return;
                        }
                    }
                });
            }
        });
        if let Some(e) = failure.into_inner().unwrap() {
            return Err(e);
        }
        for (r, f, acc) in results.into_inner().unwrap() {
            accuracies[r][f] = acc;
        }
    }

    let flat: Vec<f64> = accuracies.iter().flatten().copied().collect();
    let (mean, std) = mean_std(&flat);
    Ok(RunReport {
        dataset: ds.name.clone(),
        config_echo: String::new(),
        master_seed: tc.seed,
        folds: tc.folds,
        repeats: tc.repeats,
        accuracies,
        mean,
        std,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

/// Cross-validation without a per-fold callback.
pub fn cross_validate(tc: &TrainConfig, ds: &TuDataset, jobs: usize) -> Result<RunReport> {
    cross_validate_with(tc, ds, jobs, |_, _, _| Ok(()))
}

/// One sweep entry: a (fusion, filter order) combination's results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub fusion: FusionMethod,
    pub k_order: usize,
    /// Per-fold accuracy averaged over repeats.
    pub fold_accs: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Folds (across this row's filter order) where this fusion was best;
    /// ties award the win to every tied method.
    pub wins: usize,
}

/// Compare fusion methods across filter orders under identical fold plans.
///
/// Every combination runs from the same master seed, so fold plans and
/// per-fold training seeds coincide and per-fold accuracies are paired.
/// `single` fusion runs without learned edges; every other method adds the
/// learned relation.
pub fn fusion_sweep(
    base: &TrainConfig,
    ds: &TuDataset,
    fusions: &[FusionMethod],
    k_orders: &[usize],
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &k in k_orders {
        for &fusion in fusions {
            let mut tc = base.clone();
            tc.model.fusion = fusion;
            tc.model.k_order = k;
            tc.model.use_learned_edges = fusion != FusionMethod::Single;
            tc.model.validate()?;
            let report = cross_validate(&tc, ds, jobs)?;
            let fold_accs = report.fold_means();
            rows.push(SweepRow {
                fusion,
                k_order: k,
                fold_accs,
                mean: report.mean,
                std: report.std,
                wins: 0,
            });
        }
    }

    // Wins: one per (filter order, fold), awarded to the best method;
    // ties go to the method listed first, so wins per K sum to the fold
    // count.
    for &k in k_orders {
        let group: Vec<usize> = rows
            .iter()
            .enumerate()
            .filter(|(_, row)| row.k_order == k)
            .map(|(i, _)| i)
            .collect();
        for f in 0..base.folds {
            let winner = group
                .iter()
                .copied()
                .max_by(|&a, &b| {
                    rows[a].fold_accs[f]
                        .partial_cmp(&rows[b].fold_accs[f])
                        .expect("accuracies are finite")
                        // max_by keeps the later of equal elements, so
                        // order descending by index to keep the earliest.
                        .then(b.cmp(&a))
                })
                .expect("at least one fusion per filter order");
            rows[winner].wins += 1;
        }
    }
    Ok(rows)
}

/// CSV rendering of sweep rows: one line per (fusion, k) with per-fold columns.
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let folds = rows.first().map_or(0, |r| r.fold_accs.len());
    let mut out = String::from("fusion,k_order,mean,std,wins");
    for f in 0..folds {
        out.push_str(&format!(",fold{f}"));
    }
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{}",
            row.fusion, row.k_order, row.mean, row.std, row.wins
        ));
        for a in &row.fold_accs {
            out.push_str(&format!(",{a}"));
        }
        out.push('\n');
    }
    out
}

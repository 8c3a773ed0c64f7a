//! Repeated-seed runs, optionally spread over worker threads.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use crate::data::{Dataset, Sample};
use crate::error::{contract, Result};
use crate::stats::{summarize, Summary};
use crate::train::{evaluate, train, Metrics, Model, TrainConfig, TrainLog};

pub struct RunOutcome {
    pub model: Model,
    pub log: TrainLog,
    pub metrics: Metrics,
    pub wall_time_s: f64,
}

/// Training samples for a final run: train split, plus val when merging.
pub fn training_set(ds: &Dataset, merge_val: bool) -> Vec<Sample> {
    let mut s = ds.train.clone();
    if merge_val {
        s.extend(ds.val.iter().cloned());
    }
    s
}

/// Trains on `train_set` and evaluates on `eval_set`.
pub fn run_once(
    cfg: &TrainConfig,
    train_set: &[Sample],
    eval_set: &[Sample],
    class_names: &[String],
) -> Result<RunOutcome> {
    let start = Instant::now();
    let (model, log) = train(cfg, train_set, class_names)?;
    let metrics = evaluate(&model, eval_set, cfg.seed, cfg.epochs)?;
    Ok(RunOutcome {
        model,
        log,
        metrics,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Runs every config on up to `jobs` threads. Results come back in input
/// order and do not depend on the thread count.
pub fn run_many(
    configs: &[TrainConfig],
    train_set: &[Sample],
    eval_set: &[Sample],
    class_names: &[String],
    jobs: usize,
) -> Vec<Result<RunOutcome>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunOutcome>>>> =
        Mutex::new((0..configs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, configs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= configs.len() {
                    break;
                }
                let r = run_once(&configs[i], train_set, eval_set, class_names);
                slots.lock().expect("no worker panicked holding the lock")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

/// Mean and sample std of each headline metric over runs.
#[derive(Clone, Debug)]
pub struct RepeatSummary {
    pub image_acc: Summary,
    pub study_acc: Summary,
    pub attention_mass: Option<Summary>,
}

pub fn summarize_runs(metrics: &[Metrics]) -> Result<RepeatSummary> {
    contract!(!metrics.is_empty(), "no runs to summarize");
    let pick = |f: fn(&Metrics) -> f64| -> Vec<f64> { metrics.iter().map(f).collect() };
    let masses: Option<Vec<f64>> = metrics.iter().map(|m| m.attention_mass).collect();
    Ok(RepeatSummary {
        image_acc: summarize(&pick(|m| m.image_acc))?,
        study_acc: summarize(&pick(|m| m.study_acc))?,
        attention_mass: masses.map(|m| summarize(&m)).transpose()?,
    })
}

/// `config` repeated over seeds `seed, seed+1, …` (n ≥ 2).
pub fn repeat_runs(
    config: &TrainConfig,
    n_seeds: usize,
    train_set: &[Sample],
    eval_set: &[Sample],
    class_names: &[String],
    jobs: usize,
) -> Result<(Vec<Metrics>, RepeatSummary)> {
    contract!(
        n_seeds >= 2,
        "repeat_runs needs at least 2 seeds, got {n_seeds}"
    );
    let configs: Vec<TrainConfig> = (0..n_seeds as u64)
        .map(|k| TrainConfig {
            seed: config.seed + k,
            ..config.clone()
        })
        .collect();
    let metrics = run_many(&configs, train_set, eval_set, class_names, jobs)
        .into_iter()
        .map(|r| r.map(|o| o.metrics))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize_runs(&metrics)?;
    Ok((metrics, summary))
}

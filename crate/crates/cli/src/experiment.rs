//! Seed sweeps, paired clean baselines and ablation variants.

use fedmmx_core::fed::{run_simulation, FedError, RoundLog, SimulationResult, TrustMode};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::HarnessError;

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub result: SimulationResult,
}

impl SeedRun {
    pub fn final_log(&self) -> Option<&RoundLog> {
        self.result.logs.last()
    }
}

/// Runs one simulation per seed on a pool of `threads` workers. Results come
/// back in the order of `seeds` and do not depend on `threads`.
pub fn run_seeds(cfg: &ExperimentConfig, seeds: &[u64], threads: usize) -> Result<Vec<SeedRun>, HarnessError> {
    let threads = threads.max(1);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let mut sim = cfg.simulation(seed);
                sim.parallel = threads > 1;
                let result = run_simulation(&sim).map_err(|source| seed_error(seed, source))?;
                log::info!("seed {seed}: {} rounds done", result.logs.len());
                Ok(SeedRun { seed, result })
            })
            .collect()
    })
}

fn seed_error(seed: u64, source: FedError) -> HarnessError {
    HarnessError::Seed { seed, source }
}

/// Final-round metrics of one seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub accuracy: f64,
    pub ec: Option<f64>,
    pub fs: f64,
    pub ece: f64,
    /// Final accuracy relative to the paired clean run.
    pub retained: Option<f64>,
}

/// Mean and sample standard deviation of a column; `None` entries are
/// skipped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Stat {
        let v: Vec<f64> = values.into_iter().flatten().collect();
        if v.is_empty() {
            return Stat { mean: None, std: None };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = (v.len() > 1).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Stat { mean: Some(mean), std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub seeds: Vec<SeedSummary>,
    pub accuracy: Stat,
    pub ec: Stat,
    pub fs: Stat,
    pub ece: Stat,
    pub retained: Stat,
}

impl RunSummary {
    /// `clean` must hold the same seeds as `runs`, in order. Seeds without
    /// rounds are left out.
    pub fn new(runs: &[SeedRun], clean: Option<&[SeedRun]>) -> RunSummary {
        let seeds: Vec<SeedSummary> = runs
            .iter()
            .enumerate()
            .filter_map(|(i, run)| {
                let m = run.final_log()?.metrics;
                let retained = clean.and_then(|c| {
                    debug_assert_eq!(c[i].seed, run.seed);
                    let base = c[i].final_log()?.metrics.accuracy;
                    (base > 0.0).then(|| m.accuracy / base)
                });
                Some(SeedSummary { seed: run.seed, accuracy: m.accuracy, ec: m.ec, fs: m.fs, ece: m.ece, retained })
            })
            .collect();
        RunSummary {
            accuracy: Stat::of(seeds.iter().map(|s| Some(s.accuracy))),
            ec: Stat::of(seeds.iter().map(|s| s.ec)),
            fs: Stat::of(seeds.iter().map(|s| Some(s.fs))),
            ece: Stat::of(seeds.iter().map(|s| Some(s.ece))),
            retained: Stat::of(seeds.iter().map(|s| s.retained)),
            seeds,
        }
    }
}

/// A run under its configured attack plus, when an attack is configured, the
/// paired clean run over the same seeds.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub runs: Vec<SeedRun>,
    pub clean: Option<Vec<SeedRun>>,
    pub summary: RunSummary,
}

pub fn run_experiment(cfg: &ExperimentConfig, seeds: &[u64], threads: usize) -> Result<Experiment, HarnessError> {
    let runs = run_seeds(cfg, seeds, threads)?;
    let clean = match cfg.attack {
        Some(_) => Some(run_seeds(&cfg.clean(), seeds, threads)?),
        None => None,
    };
    let summary = RunSummary::new(&runs, clean.as_deref());
    Ok(Experiment { runs, clean, summary })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    NoTrust,
    NoConsistency,
    NoInterp,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoTrust, Variant::NoConsistency, Variant::NoInterp];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoTrust => "no-trust",
            Variant::NoConsistency => "no-consistency",
            Variant::NoInterp => "no-interp",
        }
    }

    pub fn apply(self, cfg: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = cfg.clone();
        match self {
            Variant::Full => {}
            Variant::NoTrust => cfg.trust.mode = TrustMode::Off,
            Variant::NoConsistency => cfg.hyper.lambda_consistency = 0.0,
            Variant::NoInterp => cfg.hyper.lambda_interp = 0.0,
        }
        cfg
    }
}

/// Outcome of an expected-direction check; `None` when a side is undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionCheck {
    pub description: &'static str,
    pub holds: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct Ablation {
    pub variants: Vec<(Variant, RunSummary)>,
    pub checks: Vec<DirectionCheck>,
}

impl Ablation {
    pub fn summary(&self, variant: Variant) -> &RunSummary {
        &self.variants.iter().find(|(v, _)| *v == variant).expect("all variants run").1
    }
}

fn greater(a: Option<f64>, b: Option<f64>) -> Option<bool> {
    Some(a? > b?)
}

/// Runs every variant over the same seeds.
pub fn run_ablation(cfg: &ExperimentConfig, seeds: &[u64], threads: usize) -> Result<Ablation, HarnessError> {
    let mut variants = Vec::with_capacity(Variant::ALL.len());
    for v in Variant::ALL {
        log::info!("ablation variant {}", v.name());
        let exp = run_experiment(&v.apply(cfg), seeds, threads)?;
        variants.push((v, exp.summary));
    }
    let mut ablation = Ablation { variants, checks: Vec::new() };
    let full = ablation.summary(Variant::Full);
    let checks = vec![
        DirectionCheck {
            description: "mean EC(full) > mean EC(no-consistency)",
            holds: greater(full.ec.mean, ablation.summary(Variant::NoConsistency).ec.mean),
        },
        DirectionCheck {
            description: "mean retained accuracy(full) > mean retained accuracy(no-trust)",
            holds: greater(full.retained.mean, ablation.summary(Variant::NoTrust).retained.mean),
        },
    ];
    ablation.checks = checks;
    Ok(ablation)
}

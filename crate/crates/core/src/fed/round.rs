//! The federation round loop.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{aggregate, compute_trust, local_train, sample_participants, uniform_trust, update_history};
use super::{ClientState, ClientUpdate, FedError, TrustConfig, TrustReport};
use crate::adversary::{corrupt_labels, corrupt_update, select_adversaries, AttackSpec};
use crate::data::{generate_dataset, Sample, SyntheticSpec};
use crate::metrics::{evaluate, EvalConfig, MetricReport};
use crate::nam::{Hyperparams, NamLayout, NamParams};
use crate::rng::{derived_rng, stream};

/// Everything a round needs besides the client states and global model.
#[derive(Debug, Clone, Copy)]
pub struct RoundContext<'a> {
    pub hyper: &'a Hyperparams,
    pub trust: &'a TrustConfig,
    pub eval: &'a EvalConfig,
    pub participation: f64,
    pub master_seed: u64,
    pub test: &'a [Sample],
    /// Train participants on the current rayon pool.
    pub parallel: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    /// 1-based round index.
    pub round: usize,
    pub participants: Vec<usize>,
    /// Participants that are adversarial.
    pub adversarial: Vec<usize>,
    pub trust: TrustReport,
    pub metrics: MetricReport,
    pub duration: Duration,
}

impl RoundLog {
    fn mean_trust_where(&self, adversarial: bool) -> Option<f64> {
        let vals: Vec<f64> = self
            .trust
            .entries
            .iter()
            .filter(|e| self.adversarial.contains(&e.client_id) == adversarial)
            .map(|e| e.trust)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn mean_trust_honest(&self) -> Option<f64> {
        self.mean_trust_where(false)
    }

    pub fn mean_trust_adversarial(&self) -> Option<f64> {
        self.mean_trust_where(true)
    }
}

fn train_one(client: &ClientState, global: &NamParams, round: usize, ctx: &RoundContext<'_>) -> Result<ClientUpdate, FedError> {
    let mut rng = derived_rng(ctx.master_seed, &[stream::CLIENT_TRAIN, client.id as u64, round as u64]);
    let update = local_train(client, global, ctx.hyper, ctx.eval.ece_bins, ctx.trust.validate_on, &mut rng)?;
    match client.attack {
        Some(spec) if !spec.kind.poisons_data() => {
            let mut rng = derived_rng(
                ctx.master_seed,
                &[stream::UPDATE_ATTACK, client.id as u64, round as u64, spec.seed_offset],
            );
            Ok(corrupt_update(&update, global, &spec, &mut rng)?)
        }
        _ => Ok(update),
    }
}

/// One round: sample participants, train them locally, apply update-level
/// attacks, calibrate trust, aggregate and evaluate on the test set.
///
/// Trust uses the histories from before this round; histories are then
/// updated with each participant's validation accuracy.
pub fn run_round(
    round: usize,
    global: &NamParams,
    clients: &mut [ClientState],
    ctx: &RoundContext<'_>,
) -> Result<(NamParams, RoundLog), FedError> {
    if clients.is_empty() {
        return Err(FedError::NoClients);
    }
    let started = Instant::now();
    let mut rng = derived_rng(ctx.master_seed, &[stream::PARTICIPATION, round as u64]);
    let participants = sample_participants(clients.len(), ctx.participation, &mut rng)?;

    let shared: &[ClientState] = clients;
    let results: Vec<Result<ClientUpdate, FedError>> = if ctx.parallel {
        participants
            .par_iter()
            .map(|&id| train_one(&shared[id], global, round, ctx))
            .collect()
    } else {
        participants
            .iter()
            .map(|&id| train_one(&shared[id], global, round, ctx))
            .collect()
    };
    let updates = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let histories: Vec<f64> = participants.iter().map(|&id| clients[id].history).collect();
    let cfg = ctx.trust;
    let trust = if cfg.mode.is_calibrated() {
        compute_trust(&updates, &histories, cfg.weights(), cfg.floor, cfg.neutral_ec)?
    } else {
        uniform_trust(&updates, &histories, cfg.neutral_ec)?
    };
    for u in &updates {
        let c = &mut clients[u.client_id];
        c.history = update_history(c.history, u.val_accuracy, cfg.decay)?;
    }

    let next = aggregate(global, &updates, &trust)?;
    let metrics = evaluate(&next, ctx.test, ctx.eval)?;
    let adversarial = participants
        .iter()
        .copied()
        .filter(|&id| clients[id].is_adversarial())
        .collect();
    let log = RoundLog {
        round,
        participants,
        adversarial,
        trust,
        metrics,
        duration: started.elapsed(),
    };
    Ok((next, log))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub data: SyntheticSpec,
    pub hyper: Hyperparams,
    pub trust: TrustConfig,
    pub attack: Option<AttackSpec>,
    pub eval: EvalConfig,
    pub rounds: usize,
    pub participation: f64,
    pub validation_fraction: f64,
    /// Master seed for initialization, splits, sampling and attacks.
    pub seed: u64,
    pub parallel: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            data: SyntheticSpec::default(),
            hyper: Hyperparams::default(),
            trust: TrustConfig::default(),
            attack: None,
            eval: EvalConfig::default(),
            rounds: 30,
            participation: 1.0,
            validation_fraction: 0.2,
            seed: 0,
            parallel: false,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), FedError> {
        self.data.validate()?;
        self.hyper.validate()?;
        self.trust.validate()?;
        if let Some(a) = &self.attack {
            a.validate()?;
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(FedError::InvalidConfig { field: "participation", reason: "must lie in (0, 1]".into() });
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(FedError::InvalidConfig { field: "validation_fraction", reason: "must lie in [0, 1)".into() });
        }
        if !(self.eval.mask_fraction > 0.0 && self.eval.mask_fraction <= 1.0) {
            return Err(FedError::InvalidConfig { field: "mask_fraction", reason: "must lie in (0, 1]".into() });
        }
        if self.eval.ece_bins == 0 {
            return Err(FedError::InvalidConfig { field: "ece_bins", reason: "must be at least 1".into() });
        }
        Ok(())
    }

    pub fn layout(&self) -> NamLayout {
        NamLayout::new(self.data.modality_ids(), self.data.dims(), self.hyper.hidden, self.data.num_classes)
    }
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub logs: Vec<RoundLog>,
    pub initial_params: NamParams,
    pub final_params: NamParams,
    pub adversaries: Vec<usize>,
}

/// Client states after data generation, adversary selection and data
/// poisoning.
pub fn build_clients(cfg: &SimulationConfig) -> Result<(Vec<ClientState>, Vec<Sample>, Vec<usize>), FedError> {
    let split = generate_dataset(&cfg.data)?;
    let adversaries = match &cfg.attack {
        Some(a) => {
            let mut rng = derived_rng(cfg.seed, &[stream::ADVERSARY_SELECT, a.seed_offset]);
            select_adversaries(split.clients.len(), a.fraction, &mut rng)?
        }
        None => Vec::new(),
    };
    let mut clients = Vec::with_capacity(split.clients.len());
    for mut data in split.clients {
        let attack = cfg.attack.filter(|_| adversaries.contains(&data.id));
        if let Some(spec) = attack.filter(|s| s.kind.poisons_data()) {
            let mut rng = derived_rng(cfg.seed, &[stream::LABEL_FLIP, data.id as u64, spec.seed_offset]);
            data.samples = corrupt_labels(&data.samples, spec.intensity, cfg.data.num_classes, &mut rng)?;
        }
        let mut state = ClientState::new(data, cfg.seed, cfg.validation_fraction, cfg.trust.initial_history);
        state.attack = attack;
        clients.push(state);
    }
    Ok((clients, split.test, adversaries))
}

/// Runs `rounds` rounds from a seeded initialization. Errors carry the
/// failing round.
pub fn run_simulation(cfg: &SimulationConfig) -> Result<SimulationResult, FedError> {
    cfg.validate()?;
    let (mut clients, test, adversaries) = build_clients(cfg)?;
    let initial = NamParams::init(cfg.layout(), &mut derived_rng(cfg.seed, &[stream::INIT]));
    let ctx = RoundContext {
        hyper: &cfg.hyper,
        trust: &cfg.trust,
        eval: &cfg.eval,
        participation: cfg.participation,
        master_seed: cfg.seed,
        test: &test,
        parallel: cfg.parallel,
    };
    let mut global = initial.clone();
    let mut logs = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        let (next, log) = run_round(round, &global, &mut clients, &ctx)
            .map_err(|e| FedError::Round { round, source: Box::new(e) })?;
        log::debug!(
            "seed {} round {round}: accuracy {:.4}, honest trust {:?}, adversarial trust {:?}",
            cfg.seed,
            log.metrics.accuracy,
            log.mean_trust_honest(),
            log.mean_trust_adversarial()
        );
        global = next;
        logs.push(log);
    }
    Ok(SimulationResult { logs, initial_params: initial, final_params: global, adversaries })
}

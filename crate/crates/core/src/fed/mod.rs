//! Federated protocol: local training, trust calibration, per-modality
//! trust-weighted aggregation, participation sampling and the round loop.

mod aggregate;
mod record;
mod round;
mod trust;

pub use aggregate::{aggregate, sample_participants};
pub use record::{parse_round_log, ClientRecord, GlobalRecord, RoundRecord};
pub use round::{build_clients, run_round, run_simulation, RoundContext, RoundLog, SimulationConfig, SimulationResult};
pub use trust::{apply_floor, compute_trust, uniform_trust, update_history, TrustConfig, TrustEntry, TrustMode, TrustReport, TrustWeights, ValidationTarget};

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::adversary::{AttackError, AttackSpec};
use crate::data::{ClientData, DataError, Sample};
use crate::metrics::{dataset_ec, ece, predictions, MetricError};
use crate::modality::ModalitySet;
use crate::nam::{loss_and_grad, Hyperparams, LossBreakdown, NamError, NamParams};
use crate::rng::{derived_rng, stream, SimRng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FedError {
    #[error("client {0} has no training samples")]
    EmptyClient(usize),
    #[error("update from client {client} does not match the global layout")]
    LayoutMismatch { client: usize },
    #[error("no client updates")]
    NoUpdates,
    #[error("no clients")]
    NoClients,
    #[error("`{field}` out of range: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("history inputs must lie in [0, 1] with decay in [0, 1)")]
    HistoryOutOfRange,
    #[error("round {round}: {source}")]
    Round { round: usize, source: Box<FedError> },
    #[error(transparent)]
    Model(#[from] NamError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Attack(#[from] AttackError),
}

/// Server-side view of one client.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub modalities: ModalitySet,
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    /// Exponential moving average of validation accuracy, in `[0, 1]`.
    pub history: f64,
    pub attack: Option<AttackSpec>,
}

impl ClientState {
    /// Splits `data` into train and validation parts. The validation share is
    /// `⌊n·validation_fraction⌋`, capped so at least one training sample
    /// remains.
    pub fn new(data: ClientData, master_seed: u64, validation_fraction: f64, initial_history: f64) -> Self {
        let mut samples = data.samples;
        let mut rng = derived_rng(master_seed, &[stream::CLIENT_SPLIT, data.id as u64]);
        samples.shuffle(&mut rng);
        let n = samples.len();
        let n_val = ((n as f64 * validation_fraction).floor() as usize).min(n.saturating_sub(1));
        let train = samples.split_off(n_val);
        ClientState {
            id: data.id,
            modalities: data.modalities,
            train,
            validation: samples,
            history: initial_history,
            attack: None,
        }
    }

    /// `n_k`: size of the client's whole dataset.
    pub fn num_samples(&self) -> usize {
        self.train.len() + self.validation.len()
    }

    pub fn is_adversarial(&self) -> bool {
        self.attack.is_some()
    }

    /// Samples used for local evaluation; the training set when no
    /// validation samples exist.
    pub fn evaluation_set(&self) -> &[Sample] {
        if self.validation.is_empty() {
            &self.train
        } else {
            &self.validation
        }
    }
}

/// Trained parameters of one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalitySegment {
    pub modality: usize,
    pub values: Vec<f64>,
}

/// What a client sends back after local training. Carries segments only for
/// the client's own modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub modalities: ModalitySet,
    pub segments: Vec<ModalitySegment>,
    pub n: usize,
    /// Loss on the local training set after training.
    pub loss: LossBreakdown,
    /// Validation accuracy of the model chosen by [`ValidationTarget`].
    pub val_accuracy: f64,
    /// Explanation consistency of the trained model on the validation
    /// split; `None` for single-modality clients.
    pub val_ec: Option<f64>,
    /// Validation calibration error of the model chosen by
    /// [`ValidationTarget`].
    pub val_ece: f64,
}

impl ClientUpdate {
    pub fn segment(&self, modality: usize) -> Option<&[f64]> {
        self.segments
            .iter()
            .find(|s| s.modality == modality)
            .map(|s| s.values.as_slice())
    }
}

/// Runs `local_epochs` of shuffled mini-batch SGD starting from `global`,
/// touching only the client's modalities.
///
/// Validation accuracy and calibration error are measured on the model picked
/// by `target`. Scoring the received global model measures how well the
/// consensus fits the client's data, which separates clients with corrupted
/// labels; a model trained on corrupted labels looks calibrated on them.
/// Explanation consistency is always measured on the trained model.
pub fn local_train(
    client: &ClientState,
    global: &NamParams,
    hyper: &Hyperparams,
    ece_bins: usize,
    target: ValidationTarget,
    rng: &mut SimRng,
) -> Result<ClientUpdate, FedError> {
    if client.train.is_empty() {
        return Err(FedError::EmptyClient(client.id));
    }
    if client.modalities.is_empty() || !client.modalities.is_subset_of(global.layout().all_modalities()) {
        return Err(FedError::LayoutMismatch { client: client.id });
    }
    let mods = client.modalities;
    let eval = client.evaluation_set();
    let score = |model: &NamParams| -> Result<(f64, f64), FedError> {
        let (conf, correct, _) = predictions(model, eval)?;
        let accuracy = correct.iter().filter(|&&c| c).count() as f64 / eval.len() as f64;
        Ok((accuracy, ece(&conf, &correct, ece_bins)?))
    };
    let received = match target {
        ValidationTarget::Received => Some(score(global)?),
        ValidationTarget::Trained => None,
    };

    let mut params = global.clone();
    let mut order: Vec<usize> = (0..client.train.len()).collect();
    for _ in 0..hyper.local_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(hyper.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &client.train[i]).collect();
            let (_, grads) = loss_and_grad(&params, &batch, mods, hyper)?;
            params.apply_sgd(&grads, hyper.lr, mods)?;
        }
    }
    if !params.is_finite() {
        log::warn!("client {} produced non-finite parameters", client.id);
    }

    let (loss, _) = loss_and_grad(&params, &client.train, mods, hyper)?;
    let (val_accuracy, val_ece) = match received {
        Some(scored) => scored,
        None => score(&params)?,
    };
    let val_ec = if mods.len() >= 2 {
        dataset_ec(&params, eval, mods)?.value()
    } else {
        None
    };

    Ok(ClientUpdate {
        client_id: client.id,
        modalities: mods,
        segments: mods
            .iter()
            .map(|m| ModalitySegment { modality: m, values: params.segment(m).to_vec() })
            .collect(),
        n: client.num_samples(),
        loss,
        val_accuracy,
        val_ec,
        val_ece,
    })
}

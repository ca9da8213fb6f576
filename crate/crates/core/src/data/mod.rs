//! Seeded synthetic multi-modal data and its federated partitioning.
//!
//! Each class `c` owns one prototype vector per modality, drawn once from
//! the seeded generator. A sample of class `c` observed through modality `m`
//! is that prototype plus isotropic Gaussian noise. Prototypes of different
//! modalities are independent, so agreement between modality heads has to be
//! learned.

mod export;
mod partition;

pub use export::{from_json, to_json, DATASET_FORMAT, DATASET_VERSION};
pub use partition::{assign_modalities, dirichlet_partition, largest_remainder_counts, ModalityAssignment, ModalityRepair};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::modality::{ModalitySet, MAX_MODALITIES};
use crate::rng::{derived_rng, stream, SimRng};

/// Tolerance on the sum of modality-profile fractions.
pub const PROFILE_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("invalid synthetic spec: `{field}` {reason}")]
    InvalidSpec { field: String, reason: String },
    #[error("cannot partition {samples} samples across {clients} clients")]
    TooFewSamples { samples: usize, clients: usize },
    #[error("modality profile has no nonempty subset")]
    AllEmptyProfile,
    #[error("modality profile entry {index} is empty but has a positive fraction")]
    EmptyProfileEntry { index: usize },
    #[error("malformed dataset document: {0}")]
    Document(String),
}

impl DataError {
    fn spec(field: impl Into<String>, reason: impl Into<String>) -> Self {
        DataError::InvalidSpec {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalitySpec {
    pub id: String,
    pub dim: usize,
}

/// Fraction of clients that receive exactly the listed modalities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileEntry {
    pub modalities: Vec<String>,
    pub fraction: f64,
}

/// Generation targets for a synthetic federated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub modalities: Vec<ModalitySpec>,
    pub noise_std: f64,
    pub num_clients: usize,
    pub dirichlet_alpha: f64,
    pub samples_per_client: usize,
    pub test_samples: usize,
    pub modality_profile: Vec<ProfileEntry>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let both = vec!["vision".to_string(), "text".to_string()];
        SyntheticSpec {
            num_classes: 4,
            modalities: vec![
                ModalitySpec { id: "vision".into(), dim: 8 },
                ModalitySpec { id: "text".into(), dim: 6 },
            ],
            noise_std: 0.5,
            num_clients: 10,
            dirichlet_alpha: 0.5,
            samples_per_client: 100,
            test_samples: 1000,
            modality_profile: vec![
                ProfileEntry { modalities: both, fraction: 0.5 },
                ProfileEntry { modalities: vec!["vision".into()], fraction: 0.25 },
                ProfileEntry { modalities: vec!["text".into()], fraction: 0.25 },
            ],
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// Checks every invariant, naming the first offending field.
    pub fn validate(&self) -> Result<(), DataError> {
        if self.num_classes < 2 {
            return Err(DataError::spec("num_classes", "must be at least 2"));
        }
        if self.modalities.is_empty() {
            return Err(DataError::spec("modalities", "must list at least one modality"));
        }
        if self.modalities.len() > MAX_MODALITIES {
            return Err(DataError::spec(
                "modalities",
                format!("at most {MAX_MODALITIES} modalities are supported"),
            ));
        }
        for (i, m) in self.modalities.iter().enumerate() {
            if m.dim == 0 {
                return Err(DataError::spec(format!("modalities[{i}].dim"), "must be at least 1"));
            }
            if m.id.is_empty() {
                return Err(DataError::spec(format!("modalities[{i}].id"), "must be nonempty"));
            }
            if self.modalities[..i].iter().any(|o| o.id == m.id) {
                return Err(DataError::spec(
                    format!("modalities[{i}].id"),
                    format!("duplicate modality id `{}`", m.id),
                ));
            }
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(DataError::spec("noise_std", "must be a finite nonnegative number"));
        }
        if self.num_clients == 0 {
            return Err(DataError::spec("num_clients", "must be at least 1"));
        }
        if !(self.dirichlet_alpha.is_finite() && self.dirichlet_alpha > 0.0) {
            return Err(DataError::spec("dirichlet_alpha", "must be a finite positive number"));
        }
        if self.samples_per_client == 0 {
            return Err(DataError::spec("samples_per_client", "must be at least 1"));
        }
        if self.test_samples == 0 {
            return Err(DataError::spec("test_samples", "must be at least 1"));
        }
        self.profile_sets()?;
        Ok(())
    }

    pub fn num_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.modalities.iter().map(|m| m.dim).collect()
    }

    pub fn modality_ids(&self) -> Vec<String> {
        self.modalities.iter().map(|m| m.id.clone()).collect()
    }

    pub fn modality_index(&self, id: &str) -> Option<usize> {
        self.modalities.iter().position(|m| m.id == id)
    }

    /// Resolves the profile's modality ids into index sets.
    pub fn profile_sets(&self) -> Result<Vec<(ModalitySet, f64)>, DataError> {
        if self.modality_profile.is_empty() {
            return Err(DataError::spec("modality_profile", "must have at least one entry"));
        }
        let mut out = Vec::with_capacity(self.modality_profile.len());
        let mut sum = 0.0;
        for (i, entry) in self.modality_profile.iter().enumerate() {
            if !(entry.fraction.is_finite() && entry.fraction >= 0.0) {
                return Err(DataError::spec(
                    format!("modality_profile[{i}].fraction"),
                    "must be a finite nonnegative number",
                ));
            }
            let mut set = ModalitySet::EMPTY;
            for id in &entry.modalities {
                let idx = self.modality_index(id).ok_or_else(|| {
                    DataError::spec(
                        format!("modality_profile[{i}].modalities"),
                        format!("references unknown modality `{id}`"),
                    )
                })?;
                set = set.with(idx);
            }
            sum += entry.fraction;
            out.push((set, entry.fraction));
        }
        if (sum - 1.0).abs() > PROFILE_SUM_TOLERANCE {
            return Err(DataError::spec(
                "modality_profile",
                format!("fractions must sum to 1 (got {sum})"),
            ));
        }
        Ok(out)
    }
}

/// One labelled observation. `features[m]` is present iff modality `m` was
/// observed for this sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub label: usize,
    pub features: Vec<Option<Vec<f64>>>,
}

impl Sample {
    pub fn available(&self) -> ModalitySet {
        ModalitySet::from_indices(
            self.features
                .iter()
                .enumerate()
                .filter(|(_, f)| f.is_some())
                .map(|(i, _)| i),
        )
    }

    /// Features of modality `m`; panics if absent.
    pub fn modality(&self, m: usize) -> &[f64] {
        self.features[m]
            .as_deref()
            .unwrap_or_else(|| panic!("modality {m} not present in sample"))
    }
}

/// A client's private dataset `D_k` together with its modality set `M_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientData {
    pub id: usize,
    pub modalities: ModalitySet,
    pub samples: Vec<Sample>,
}

impl ClientData {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn label_histogram(&self, num_classes: usize) -> Vec<usize> {
        let mut h = vec![0; num_classes];
        for s in &self.samples {
            h[s.label] += 1;
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederatedSplit {
    pub spec: SyntheticSpec,
    pub clients: Vec<ClientData>,
    /// Held-out test set with every modality observed.
    pub test: Vec<Sample>,
    /// Modalities added to clients so every modality has an owner.
    pub repairs: Vec<ModalityRepair>,
}

impl FederatedSplit {
    pub fn total_train_samples(&self) -> usize {
        self.clients.iter().map(ClientData::len).sum()
    }
}

/// Class prototypes `prototypes[m][c]`, each of length `d_m`.
pub type Prototypes = Vec<Vec<Vec<f64>>>;

fn draw_prototypes(spec: &SyntheticSpec, rng: &mut SimRng) -> Prototypes {
    spec.modalities
        .iter()
        .map(|m| {
            (0..spec.num_classes)
                .map(|_| (0..m.dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                .collect()
        })
        .collect()
}

fn draw_sample(
    prototypes: &Prototypes,
    label: usize,
    modalities: ModalitySet,
    noise_std: f64,
    rng: &mut SimRng,
) -> Sample {
    let features = prototypes
        .iter()
        .enumerate()
        .map(|(m, per_class)| {
            modalities.contains(m).then(|| {
                per_class[label]
                    .iter()
                    .map(|&mu| mu + noise_std * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
        })
        .collect();
    Sample { label, features }
}

/// Prototypes that `generate_dataset` uses for this spec.
pub fn prototypes(spec: &SyntheticSpec) -> Prototypes {
    let mut rng = derived_rng(spec.seed, &[stream::DATA]);
    draw_prototypes(spec, &mut rng)
}

/// Generates the full federated split. Pure function of `spec`.
pub fn generate_dataset(spec: &SyntheticSpec) -> Result<FederatedSplit, DataError> {
    spec.validate()?;
    let mut rng = derived_rng(spec.seed, &[stream::DATA]);
    let protos = draw_prototypes(spec, &mut rng);

    let profile = spec.profile_sets()?;
    let assignment = assign_modalities(spec.num_clients, &profile, spec.num_modalities(), &mut rng)?;

    let total = spec.num_clients * spec.samples_per_client;
    let labels: Vec<usize> = (0..total).map(|i| i % spec.num_classes).collect();
    let parts = dirichlet_partition(&labels, spec.num_clients, spec.dirichlet_alpha, &mut rng)?;

    let clients = parts
        .iter()
        .enumerate()
        .map(|(k, idx)| {
            let mods = assignment.sets[k];
            let samples = idx
                .iter()
                .map(|&i| draw_sample(&protos, labels[i], mods, spec.noise_std, &mut rng))
                .collect();
            ClientData { id: k, modalities: mods, samples }
        })
        .collect();

    let all = ModalitySet::full(spec.num_modalities());
    let test = (0..spec.test_samples)
        .map(|i| draw_sample(&protos, i % spec.num_classes, all, spec.noise_std, &mut rng))
        .collect();

    Ok(FederatedSplit {
        spec: spec.clone(),
        clients,
        test,
        repairs: assignment.repairs,
    })
}

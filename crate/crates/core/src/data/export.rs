//! Versioned JSON document for generated datasets.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ClientData, DataError, FederatedSplit, ModalityRepair, Sample, SyntheticSpec};
use crate::modality::ModalitySet;

pub const DATASET_FORMAT: &str = "fedmmx-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleDoc {
    features: BTreeMap<String, Vec<f64>>,
    label: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RepairDoc {
    client: usize,
    modality: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClientDoc {
    id: usize,
    modalities: Vec<String>,
    samples: Vec<SampleDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetDoc {
    format: String,
    version: u32,
    spec: SyntheticSpec,
    modality_repairs: Vec<RepairDoc>,
    clients: Vec<ClientDoc>,
    test: Vec<SampleDoc>,
}

fn sample_doc(s: &Sample, ids: &[String]) -> SampleDoc {
    SampleDoc {
        features: s
            .features
            .iter()
            .enumerate()
            .filter_map(|(m, f)| f.as_ref().map(|v| (ids[m].clone(), v.clone())))
            .collect(),
        label: s.label,
    }
}

/// Serializes a split as pretty-printed JSON. Output is byte-stable.
pub fn to_json(split: &FederatedSplit) -> String {
    let ids = split.spec.modality_ids();
    let doc = DatasetDoc {
        format: DATASET_FORMAT.to_string(),
        version: DATASET_VERSION,
        spec: split.spec.clone(),
        modality_repairs: split
            .repairs
            .iter()
            .map(|r| RepairDoc { client: r.client, modality: ids[r.modality].clone() })
            .collect(),
        clients: split
            .clients
            .iter()
            .map(|c| ClientDoc {
                id: c.id,
                modalities: c.modalities.iter().map(|m| ids[m].clone()).collect(),
                samples: c.samples.iter().map(|s| sample_doc(s, &ids)).collect(),
            })
            .collect(),
        test: split.test.iter().map(|s| sample_doc(s, &ids)).collect(),
    };
    serde_json::to_string_pretty(&doc).expect("dataset document serializes")
}

fn bad(msg: impl Into<String>) -> DataError {
    DataError::Document(msg.into())
}

fn resolve(spec: &SyntheticSpec, id: &str) -> Result<usize, DataError> {
    spec.modality_index(id)
        .ok_or_else(|| bad(format!("unknown modality `{id}`")))
}

fn sample_from_doc(doc: SampleDoc, spec: &SyntheticSpec, expected: ModalitySet) -> Result<Sample, DataError> {
    if doc.label >= spec.num_classes {
        return Err(bad(format!("label {} out of range", doc.label)));
    }
    let mut features = vec![None; spec.num_modalities()];
    for (id, v) in doc.features {
        let m = resolve(spec, &id)?;
        if v.len() != spec.modalities[m].dim {
            return Err(bad(format!(
                "modality `{id}` has {} features, expected {}",
                v.len(),
                spec.modalities[m].dim
            )));
        }
        features[m] = Some(v);
    }
    let sample = Sample { label: doc.label, features };
    if sample.available() != expected {
        return Err(bad("sample modalities do not match its owner's modality set"));
    }
    Ok(sample)
}

/// Parses and validates a dataset document.
pub fn from_json(text: &str) -> Result<FederatedSplit, DataError> {
    let doc: DatasetDoc = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
    if doc.format != DATASET_FORMAT {
        return Err(bad(format!("unexpected format `{}`", doc.format)));
    }
    if doc.version != DATASET_VERSION {
        return Err(bad(format!("unsupported version {}", doc.version)));
    }
    let spec = doc.spec;
    spec.validate()?;

    let repairs = doc
        .modality_repairs
        .into_iter()
        .map(|r| Ok(ModalityRepair { client: r.client, modality: resolve(&spec, &r.modality)? }))
        .collect::<Result<Vec<_>, DataError>>()?;

    let mut clients = Vec::with_capacity(doc.clients.len());
    for (pos, c) in doc.clients.into_iter().enumerate() {
        if c.id != pos {
            return Err(bad(format!("client ids must be consecutive from 0 (found {} at {pos})", c.id)));
        }
        let mut mods = ModalitySet::EMPTY;
        for id in &c.modalities {
            mods = mods.with(resolve(&spec, id)?);
        }
        let samples = c
            .samples
            .into_iter()
            .map(|s| sample_from_doc(s, &spec, mods))
            .collect::<Result<Vec<_>, _>>()?;
        clients.push(ClientData { id: c.id, modalities: mods, samples });
    }
    let all = ModalitySet::full(spec.num_modalities());
    let test = doc
        .test
        .into_iter()
        .map(|s| sample_from_doc(s, &spec, all))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FederatedSplit { spec, clients, test, repairs })
}

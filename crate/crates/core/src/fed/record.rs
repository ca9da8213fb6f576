//! Newline-delimited JSON round records.

use serde::{Deserialize, Serialize};

use super::RoundLog;
use crate::metrics::rescaled_ec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRecord {
    pub id: usize,
    pub adversarial: bool,
    pub n: usize,
    pub ec: f64,
    pub calib: f64,
    pub hist: f64,
    pub raw: f64,
    pub trust: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalRecord {
    pub accuracy: f64,
    /// Raw mean cosine in `[-1, 1]`.
    pub ec: Option<f64>,
    /// `(1 + ec)/2` expressed in percent.
    pub ec_rescaled_pct: Option<f64>,
    pub fs: f64,
    pub ece: f64,
    pub entropy: f64,
}

/// One line of the round-log stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub participants: Vec<usize>,
    pub clients: Vec<ClientRecord>,
    pub global: GlobalRecord,
}

impl From<&RoundLog> for RoundRecord {
    fn from(log: &RoundLog) -> Self {
        RoundRecord {
            round: log.round,
            participants: log.participants.clone(),
            clients: log
                .trust
                .entries
                .iter()
                .map(|e| ClientRecord {
                    id: e.client_id,
                    adversarial: log.adversarial.contains(&e.client_id),
                    n: e.n,
                    ec: e.ec_component,
                    calib: e.calib_component,
                    hist: e.hist_component,
                    raw: e.raw_score,
                    trust: e.trust,
                })
                .collect(),
            global: GlobalRecord {
                accuracy: log.metrics.accuracy,
                ec: log.metrics.ec,
                ec_rescaled_pct: log.metrics.ec.map(|e| 100.0 * rescaled_ec(e)),
                fs: log.metrics.fs,
                ece: log.metrics.ece,
                entropy: log.metrics.mean_entropy,
            },
        }
    }
}

impl RoundRecord {
    pub fn to_json_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("round record serializes");
        s.push('\n');
        s
    }

    pub fn mean_trust(&self, adversarial: bool) -> Option<f64> {
        let v: Vec<f64> = self.clients.iter().filter(|c| c.adversarial == adversarial).map(|c| c.trust).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Parses a whole NDJSON stream, skipping blank lines.
pub fn parse_round_log(text: &str) -> Result<Vec<RoundRecord>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

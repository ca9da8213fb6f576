//! Reads run directories back and lines them up round by round.

use std::fs;
use std::path::{Path, PathBuf};

use fedmmx_core::fed::{parse_round_log, RoundRecord};

use crate::output::{fmt_opt, short, CsvDoc, ACCURACY_CURVE_SCHEMA, TRUST_CURVE_SCHEMA};
use crate::HarnessError;

/// Seed-averaged values of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub round: usize,
    pub accuracy: f64,
    pub trust_honest: Option<f64>,
    pub trust_adversarial: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunCurves {
    pub label: String,
    pub seeds: Vec<u64>,
    pub points: Vec<CurvePoint>,
}

fn corrupt(path: &Path, reason: impl Into<String>) -> HarnessError {
    HarnessError::Log { path: path.into(), reason: reason.into() }
}

fn seed_of(name: &str) -> Option<u64> {
    name.strip_prefix("rounds-seed")?.strip_suffix(".ndjson")?.parse().ok()
}

fn mean_defined(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Loads every `rounds-seed*.ndjson` in `dir`.
pub fn load_run(dir: &Path) -> Result<RunCurves, HarnessError> {
    let entries = fs::read_dir(dir).map_err(|source| HarnessError::Io { path: dir.into(), source })?;
    let mut logs: Vec<(u64, PathBuf)> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| HarnessError::Io { path: dir.into(), source })?;
        if let Some(seed) = entry.file_name().to_str().and_then(seed_of) {
            logs.push((seed, entry.path()));
        }
    }
    if logs.is_empty() {
        return Err(corrupt(dir, "no rounds-seed*.ndjson logs found"));
    }
    logs.sort();

    let mut per_seed: Vec<Vec<RoundRecord>> = Vec::with_capacity(logs.len());
    for (_, path) in &logs {
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.clone(), source })?;
        let records = parse_round_log(&text).map_err(|e| corrupt(path, e.to_string()))?;
        if let Some(first) = per_seed.first() {
            if first.len() != records.len() {
                return Err(corrupt(path, format!("{} rounds, expected {}", records.len(), first.len())));
            }
        }
        for (i, r) in records.iter().enumerate() {
            if r.round != i + 1 {
                return Err(corrupt(path, format!("line {} holds round {}", i + 1, r.round)));
            }
        }
        per_seed.push(records);
    }

    let rounds = per_seed[0].len();
    let points = (0..rounds)
        .map(|i| {
            let at = || per_seed.iter().map(move |recs| &recs[i]);
            CurvePoint {
                round: i + 1,
                accuracy: at().map(|r| r.global.accuracy).sum::<f64>() / per_seed.len() as f64,
                trust_honest: mean_defined(at().map(|r| r.mean_trust(false))),
                trust_adversarial: mean_defined(at().map(|r| r.mean_trust(true))),
            }
        })
        .collect();
    Ok(RunCurves { label: dir.display().to_string(), seeds: logs.iter().map(|(s, _)| *s).collect(), points })
}

pub fn trust_curve_csv(runs: &[RunCurves]) -> Result<String, HarnessError> {
    let mut doc = CsvDoc::new(TRUST_CURVE_SCHEMA, &["run", "round", "mean_trust_honest", "mean_trust_adversarial"])?;
    for run in runs {
        for p in &run.points {
            doc.row([run.label.clone(), p.round.to_string(), fmt_opt(p.trust_honest), fmt_opt(p.trust_adversarial)])?;
        }
    }
    doc.finish()
}

pub fn accuracy_curve_csv(runs: &[RunCurves]) -> Result<String, HarnessError> {
    let mut doc = CsvDoc::new(ACCURACY_CURVE_SCHEMA, &["run", "round", "accuracy"])?;
    for run in runs {
        for p in &run.points {
            doc.row([run.label.clone(), p.round.to_string(), p.accuracy.to_string()])?;
        }
    }
    doc.finish()
}

/// Final-round values of each run, with accuracy differences taken against
/// the first run.
pub fn summary_table(runs: &[RunCurves]) -> String {
    let mut out = format!(
        "{:<32} {:>6} {:>6} {:>10} {:>10} {:>12} {:>12}\n",
        "run", "seeds", "rounds", "accuracy", "Δaccuracy", "trust_hon", "trust_adv"
    );
    let base = runs.first().and_then(|r| r.points.last()).map(|p| p.accuracy);
    for run in runs {
        let last = run.points.last();
        let acc = last.map(|p| p.accuracy);
        let delta = acc.zip(base).map(|(a, b)| a - b);
        out.push_str(&format!(
            "{:<32} {:>6} {:>6} {:>10} {:>10} {:>12} {:>12}\n",
            run.label,
            run.seeds.len(),
            run.points.len(),
            short(acc),
            delta.map(|d| format!("{d:+.4}")).unwrap_or_else(|| "-".into()),
            short(last.and_then(|p| p.trust_honest)),
            short(last.and_then(|p| p.trust_adversarial)),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_file_names() {
        assert_eq!(seed_of("rounds-seed12.ndjson"), Some(12));
        assert_eq!(seed_of("rounds-seedx.ndjson"), None);
        assert_eq!(seed_of("params-seed1.bin"), None);
    }

    #[test]
    fn mean_skips_missing() {
        assert_eq!(mean_defined([Some(1.0), None, Some(2.0)]), Some(1.5));
        assert_eq!(mean_defined([None]), None);
    }
}

//! Output files. Every CSV starts with a `# schema: <name> v<version>` line.
//! Missing values are empty fields; floats use the shortest representation
//! that round-trips.

use std::fs;
use std::path::{Path, PathBuf};

use fedmmx_core::fed::RoundRecord;

use crate::experiment::{Ablation, RunSummary, SeedRun, Stat};
use crate::HarnessError;

pub const METRICS_SCHEMA: &str = "fedmmx-metrics v1";
pub const SUMMARY_SCHEMA: &str = "fedmmx-summary v1";
pub const ABLATION_SCHEMA: &str = "fedmmx-ablation v1";
pub const TRUST_CURVE_SCHEMA: &str = "fedmmx-trust-curve v1";
pub const ACCURACY_CURVE_SCHEMA: &str = "fedmmx-accuracy-curve v1";

pub const METRICS_HEADER: [&str; 8] =
    ["seed", "round", "accuracy", "ec", "fs", "ece", "mean_trust_honest", "mean_trust_adversarial"];

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Builds a CSV document in memory, schema line first.
pub struct CsvDoc {
    writer: csv::Writer<Vec<u8>>,
}

impl CsvDoc {
    pub fn new(schema: &str, header: &[&str]) -> Result<Self, HarnessError> {
        let mut buf = format!("# schema: {schema}\n").into_bytes();
        buf.reserve(1024);
        let mut writer = csv::Writer::from_writer(buf);
        writer.write_record(header)?;
        Ok(CsvDoc { writer })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<(), HarnessError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        Ok(self.writer.write_record(fields)?)
    }

    pub fn finish(self) -> Result<String, HarnessError> {
        let bytes = self.writer.into_inner().map_err(|e| HarnessError::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// One row per (seed, round), seeds in the given order.
pub fn metrics_csv(runs: &[SeedRun]) -> Result<String, HarnessError> {
    let mut doc = CsvDoc::new(METRICS_SCHEMA, &METRICS_HEADER)?;
    for run in runs {
        for log in &run.result.logs {
            let m = &log.metrics;
            doc.row([
                run.seed.to_string(),
                log.round.to_string(),
                m.accuracy.to_string(),
                fmt_opt(m.ec),
                m.fs.to_string(),
                m.ece.to_string(),
                fmt_opt(log.mean_trust_honest()),
                fmt_opt(log.mean_trust_adversarial()),
            ])?;
        }
    }
    doc.finish()
}

pub fn round_log_ndjson(run: &SeedRun) -> String {
    run.result.logs.iter().map(|l| RoundRecord::from(l).to_json_line()).collect()
}

const SUMMARY_HEADER: [&str; 6] = ["seed", "accuracy", "ec", "fs", "ece", "retained"];

fn stat_rows(label: &str, summary: &RunSummary) -> [Vec<String>; 2] {
    let pick = |f: fn(&Stat) -> Option<f64>| {
        vec![
            fmt_opt(f(&summary.accuracy)),
            fmt_opt(f(&summary.ec)),
            fmt_opt(f(&summary.fs)),
            fmt_opt(f(&summary.ece)),
            fmt_opt(f(&summary.retained)),
        ]
    };
    let mut mean = vec![label.to_string(), "mean".to_string()];
    mean.extend(pick(|s| s.mean));
    let mut std = vec![label.to_string(), "std".to_string()];
    std.extend(pick(|s| s.std));
    [mean, std]
}

fn seed_rows(label: &str, summary: &RunSummary) -> Vec<Vec<String>> {
    summary
        .seeds
        .iter()
        .map(|s| {
            vec![
                label.to_string(),
                s.seed.to_string(),
                s.accuracy.to_string(),
                fmt_opt(s.ec),
                s.fs.to_string(),
                s.ece.to_string(),
                fmt_opt(s.retained),
            ]
        })
        .collect()
}

/// Per-seed final metrics followed by `mean` and `std` rows.
pub fn summary_csv(summary: &RunSummary) -> Result<String, HarnessError> {
    let mut doc = CsvDoc::new(SUMMARY_SCHEMA, &SUMMARY_HEADER)?;
    for row in seed_rows("", summary).into_iter().chain(stat_rows("", summary)) {
        doc.row(&row[1..])?;
    }
    doc.finish()
}

pub fn ablation_csv(ablation: &Ablation) -> Result<String, HarnessError> {
    let mut doc = CsvDoc::new(ABLATION_SCHEMA, &["variant", "seed", "accuracy", "ec", "fs", "ece", "retained"])?;
    for (variant, summary) in &ablation.variants {
        for row in seed_rows(variant.name(), summary).into_iter().chain(stat_rows(variant.name(), summary)) {
            doc.row(&row)?;
        }
    }
    doc.finish()
}

pub fn ablation_report(ablation: &Ablation) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<16} {:>10} {:>10} {:>10} {:>10} {:>10}\n", "variant", "accuracy", "ec", "fs", "ece", "retained"));
    for (variant, s) in &ablation.variants {
        out.push_str(&format!(
            "{:<16} {:>10} {:>10} {:>10} {:>10} {:>10}\n",
            variant.name(),
            short(s.accuracy.mean),
            short(s.ec.mean),
            short(s.fs.mean),
            short(s.ece.mean),
            short(s.retained.mean)
        ));
    }
    out.push('\n');
    for check in &ablation.checks {
        let verdict = match check.holds {
            Some(true) => "holds",
            Some(false) => "VIOLATED",
            None => "undefined",
        };
        out.push_str(&format!("expected direction: {} ... {verdict}\n", check.description));
    }
    out
}

pub fn summary_table(summary: &RunSummary) -> String {
    let mut out = format!("{:<8} {:>10} {:>10} {:>10} {:>10} {:>10}\n", "seed", "accuracy", "ec", "fs", "ece", "retained");
    for s in &summary.seeds {
        out.push_str(&format!(
            "{:<8} {:>10} {:>10} {:>10} {:>10} {:>10}\n",
            s.seed,
            short(Some(s.accuracy)),
            short(s.ec),
            short(Some(s.fs)),
            short(Some(s.ece)),
            short(s.retained)
        ));
    }
    let pm = |st: &Stat| match (st.mean, st.std) {
        (Some(m), Some(s)) => format!("{m:.4}±{s:.4}"),
        (Some(m), None) => format!("{m:.4}"),
        _ => "-".to_string(),
    };
    out.push_str(&format!(
        "{:<8} {:>10} {:>10} {:>10} {:>10} {:>10}\n",
        "mean",
        pm(&summary.accuracy),
        pm(&summary.ec),
        pm(&summary.fs),
        pm(&summary.ece),
        pm(&summary.retained)
    ));
    out
}

pub fn short(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".to_string())
}

pub fn write_file(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf, HarnessError> {
    fs::create_dir_all(dir).map_err(|source| HarnessError::Io { path: dir.into(), source })?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| HarnessError::Io { path: path.clone(), source })?;
    Ok(path)
}

/// Writes round logs, final parameters and `metrics.csv` for a sweep.
pub fn write_runs(dir: &Path, runs: &[SeedRun]) -> Result<(), HarnessError> {
    for run in runs {
        write_file(dir, &format!("rounds-seed{}.ndjson", run.seed), round_log_ndjson(run))?;
        write_file(dir, &format!("params-seed{}.bin", run.seed), run.result.final_params.to_snapshot())?;
    }
    write_file(dir, "metrics.csv", metrics_csv(runs)?)?;
    Ok(())
}

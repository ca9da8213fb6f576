//! The four subcommands. Each writes its files and returns the text it
//! prints.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fedmmx_core::data::{generate_dataset, to_json};

use crate::compare::{accuracy_curve_csv, load_run, summary_table as compare_table, trust_curve_csv};
use crate::config::ExperimentConfig;
use crate::experiment::{run_ablation, run_experiment};
use crate::output::{ablation_csv, ablation_report, summary_csv, summary_table, write_file, write_runs};
use crate::HarnessError;

/// Resolved settings shared by `generate`, `train` and `ablate`.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    pub threads: usize,
}

impl RunOptions {
    /// Command-line values override the config file; without a file the
    /// defaults apply.
    pub fn resolve(
        config: Option<&Path>,
        out: Option<PathBuf>,
        seeds: Option<Vec<u64>>,
        threads: usize,
    ) -> Result<Self, HarnessError> {
        let mut cfg = match config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seeds) = seeds {
            cfg.seeds = seeds;
            cfg.validate()?;
        }
        let out = out.unwrap_or_else(|| cfg.output_dir.clone());
        Ok(RunOptions { config: cfg, out, threads: threads.max(1) })
    }
}

/// Writes `dataset-seed{s}.json` per seed.
pub fn generate(opts: &RunOptions) -> Result<String, HarnessError> {
    let mut report = String::new();
    for &seed in &opts.config.seeds {
        let spec = opts.config.simulation(seed).data;
        let split = generate_dataset(&spec).map_err(|source| HarnessError::Data { seed, source })?;
        let path = write_file(&opts.out, &format!("dataset-seed{seed}.json"), to_json(&split))?;
        let ids = spec.modality_ids();
        writeln!(report, "seed {seed} -> {}", path.display()).unwrap();
        for client in &split.clients {
            let mods: Vec<&str> = client.modalities.iter().map(|m| ids[m].as_str()).collect();
            let mut hist = vec![0usize; spec.num_classes];
            for s in &client.samples {
                hist[s.label] += 1;
            }
            writeln!(report, "  client {:>3}  n={:<5} modalities=[{}]  labels={:?}", client.id, client.samples.len(), mods.join(","), hist)
                .unwrap();
        }
        for r in &split.repairs {
            writeln!(report, "  coverage repair: client {} gained {}", r.client, ids[r.modality]).unwrap();
        }
    }
    Ok(report)
}

/// Runs every seed, plus the paired clean sweep under `clean/` when an
/// attack is configured.
pub fn train(opts: &RunOptions) -> Result<String, HarnessError> {
    let cfg = &opts.config;
    let exp = run_experiment(cfg, &cfg.seeds, opts.threads)?;
    write_file(&opts.out, "config.toml", cfg.to_toml_string())?;
    write_runs(&opts.out, &exp.runs)?;
    if let Some(clean) = &exp.clean {
        write_runs(&opts.out.join("clean"), clean)?;
    }
    write_file(&opts.out, "summary.csv", summary_csv(&exp.summary)?)?;
    Ok(summary_table(&exp.summary))
}

pub fn ablate(opts: &RunOptions) -> Result<String, HarnessError> {
    let cfg = &opts.config;
    let ablation = run_ablation(cfg, &cfg.seeds, opts.threads)?;
    let report = ablation_report(&ablation);
    write_file(&opts.out, "config.toml", cfg.to_toml_string())?;
    write_file(&opts.out, "ablation.csv", ablation_csv(&ablation)?)?;
    write_file(&opts.out, "ablation.txt", &report)?;
    Ok(report)
}

/// Writes `trust_curve.csv`, `accuracy_curve.csv` and `compare.txt`.
pub fn compare(dirs: &[PathBuf], out: &Path) -> Result<String, HarnessError> {
    if dirs.is_empty() {
        return Err(HarnessError::NoRuns);
    }
    let runs = dirs.iter().map(|d| load_run(d)).collect::<Result<Vec<_>, _>>()?;
    let table = compare_table(&runs);
    write_file(out, "trust_curve.csv", trust_curve_csv(&runs)?)?;
    write_file(out, "accuracy_curve.csv", accuracy_curve_csv(&runs)?)?;
    write_file(out, "compare.txt", &table)?;
    Ok(table)
}

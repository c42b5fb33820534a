//! `osrkit report`: aggregate fold results into a summary table and a tidy
//! long-format CSV for external plotting.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::run::RESULTS_HEADER;
use crate::CliError;

const METRICS: [&str; 4] = ["inner", "outer", "halfpoint", "overall"];

#[derive(Debug, Clone)]
struct ResultRow {
    config_id: usize,
    openness: f64,
    fold: usize,
    epoch: usize,
    scores: [f64; 4],
}

fn parse_results(path: &Path) -> Result<Vec<ResultRow>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {}", path.display(), e)))?;

    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Validation(format!("{}: {}", path.display(), e)))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    if header.join(",") != RESULTS_HEADER {
        return Err(CliError::Validation(format!(
            "unexpected header {:?}, expected {:?}",
            header.join(","),
            RESULTS_HEADER
        )));
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record =
            record.map_err(|e| CliError::Validation(format!("{}: {}", path.display(), e)))?;
        let line = record
            .position()
            .map(|p| p.line().to_string())
            .unwrap_or_else(|| "?".into());
        let bad = |what: &str| {
            CliError::Validation(format!("{} line {}: {}", path.display(), line, what))
        };
        if record.len() != 8 {
            return Err(bad(&format!("expected 8 fields, got {}", record.len())));
        }
        let field = |i: usize| record.get(i).unwrap_or_default();
        let config_id: usize = field(0).parse().map_err(|_| bad("bad config_id"))?;
        let openness: f64 = field(1).parse().map_err(|_| bad("bad openness"))?;
        let fold: usize = field(2).parse().map_err(|_| bad("bad fold"))?;
        let epoch: usize = field(3).parse().map_err(|_| bad("bad epoch"))?;
        let mut scores = [0.0; 4];
        for (slot, name) in METRICS.iter().enumerate() {
            let value: f64 = field(4 + slot)
                .parse()
                .map_err(|_| bad(&format!("bad {}", name)))?;
            if !(0.0..=1.0).contains(&value) {
                return Err(bad(&format!("{} {} outside [0, 1]", name, value)));
            }
            scores[slot] = value;
        }
        rows.push(ResultRow {
            config_id,
            openness,
            fold,
            epoch,
            scores,
        });
    }
    if rows.is_empty() {
        return Err(CliError::Validation("results file has no rows".into()));
    }
    Ok(rows)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn cmd_report(input: &Path, out: Option<&Path>) -> Result<PathBuf, CliError> {
    let rows = parse_results(input)?;

    // (config_id, epoch, metric) → fold values
    let mut grouped: BTreeMap<(usize, usize, usize), Vec<f64>> = BTreeMap::new();
    let mut config_openness: BTreeMap<usize, f64> = BTreeMap::new();
    let mut config_folds: BTreeMap<usize, usize> = BTreeMap::new();
    for row in &rows {
        config_openness.entry(row.config_id).or_insert(row.openness);
        let folds = config_folds.entry(row.config_id).or_insert(0);
        *folds = (*folds).max(row.fold + 1);
        for (slot, &score) in row.scores.iter().enumerate() {
            grouped
                .entry((row.config_id, row.epoch, slot))
                .or_default()
                .push(score);
        }
    }

    // summary table: per config, the final epoch's fold mean ± std
    for (&config_id, &openness) in &config_openness {
        let last_epoch = rows
            .iter()
            .filter(|r| r.config_id == config_id)
            .map(|r| r.epoch)
            .max()
            .expect("config has rows");
        println!(
            "config {}  openness {:.3}  folds {}  final epoch {}",
            config_id, openness, config_folds[&config_id], last_epoch
        );
        for (slot, name) in METRICS.iter().enumerate() {
            let values = &grouped[&(config_id, last_epoch, slot)];
            let (mean, std) = mean_std(values);
            println!("  {:<9} {:.4} ± {:.4}", name, mean, std);
        }
    }

    let out_path = match out {
        Some(p) => p.to_path_buf(),
        None => {
            let mut name = input
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "results".into());
            name.push_str(".report.csv");
            input.with_file_name(name)
        }
    };
    let mut file = std::fs::File::create(&out_path)
        .map_err(|e| CliError::Runtime(format!("creating {}: {}", out_path.display(), e)))?;
    writeln!(file, "config_id,epoch,metric,mean,std")
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    for (&(config_id, epoch, slot), values) in &grouped {
        let (mean, std) = mean_std(values);
        writeln!(
            file,
            "{},{},{},{:.6},{:.6}",
            config_id, epoch, METRICS[slot], mean, std
        )
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    println!("epoch series written to {}", out_path.display());
    Ok(out_path)
}

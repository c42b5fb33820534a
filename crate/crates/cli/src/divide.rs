//! `osrkit divide`: generate and persist problem configurations.

use std::path::Path;

use osrkit_core::{
    configure_division, configure_division_outlier, configure_oneclass_division, DivisionList,
};

use crate::config::{ExperimentConfig, Protocol};
use crate::CliError;

pub fn cmd_divide(config_path: &Path, out_path: &Path) -> Result<(), CliError> {
    let config = ExperimentConfig::load(config_path)?;
    let base = config.dataset.load()?;

    let (configs, _openness_values) = match config.protocol {
        Protocol::Holdout => {
            configure_division(&base, config.n_openness, config.repeats, config.seed)
        }
        Protocol::Oneclass => {
            configure_oneclass_division(&base, config.n_openness, config.repeats, config.seed)
        }
        Protocol::Outlier => {
            let outlier = config
                .outlier_dataset
                .as_ref()
                .expect("validated outlier dataset")
                .load()?;
            configure_division_outlier(
                &base,
                &outlier,
                config.n_openness,
                config.repeats,
                config.seed,
            )
        }
    }
    .map_err(|e| CliError::Validation(e.to_string()))?;

    let list = DivisionList {
        seed: config.seed,
        configs,
    };
    let json = serde_json::to_string_pretty(&list)
        .map_err(|e| CliError::Runtime(format!("serializing division: {}", e)))?;
    std::fs::write(out_path, json.as_bytes())
        .map_err(|e| CliError::Runtime(format!("writing {}: {}", out_path.display(), e)))?;

    println!("{:>6}  {:>9}  {:<24} {}", "config", "openness", "kkc", "uuc");
    for (i, c) in list.configs.iter().enumerate() {
        println!(
            "{:>6}  {:>9.3}  {:<24} {:?}",
            format!("C{}", i),
            c.openness,
            format!("{:?}", c.kkc),
            c.uuc
        );
    }
    println!(
        "{} configurations written to {}",
        list.configs.len(),
        out_path.display()
    );
    Ok(())
}

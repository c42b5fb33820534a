//! `osrkit run`: train and score every configuration × fold cell.
//!
//! Cells are independent: each derives its own RNG streams from
//! (seed, config_id, fold), so they can run in parallel under `--jobs`.
//! Rows flow through a single writer that commits cells in deterministic
//! order (buffering finished cells until their turn) and flushes after each
//! cell, so a failed cell never disturbs rows already on disk.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use serde::Serialize;

use osrkit_core::{
    derive_stream_seed, fc_lower_stack, get_openmax_epsilon, get_softmax_epsilon,
    get_train_test, get_train_test_outlier, osrci_lower_stack, rng_from_seed, ConfusionSet,
    DivisionConfig, DivisionList, LabeledDataset, Openmax, TSoftmax, TrainState, WrappedDataset,
};

use crate::config::{ExperimentConfig, ModelSpec, Protocol, StackSpec};
use crate::CliError;

pub const RESULTS_HEADER: &str = "config_id,openness,fold,epoch,inner,outer,halfpoint,overall";

#[derive(Debug)]
pub struct CellFailure {
    pub config_id: usize,
    pub fold: usize,
    pub message: String,
}

#[derive(Debug)]
pub struct RunSummary {
    pub cells: usize,
    pub rows_written: usize,
    pub failures: Vec<CellFailure>,
}

struct CellOutcome {
    rows: Vec<String>,
    conf: Option<ConfusionSet>,
    failure: Option<String>,
}

/// Commits cell outcomes in index order regardless of completion order.
struct OrderedWriter<W: Write> {
    out: W,
    next: usize,
    pending: BTreeMap<usize, CellOutcome>,
    rows_written: usize,
    conf: BTreeMap<usize, ConfusionSet>,
    failures: Vec<(usize, String)>,
}

impl<W: Write> OrderedWriter<W> {
    fn new(out: W) -> Self {
        Self {
            out,
            next: 0,
            pending: BTreeMap::new(),
            rows_written: 0,
            conf: BTreeMap::new(),
            failures: Vec::new(),
        }
    }

    fn submit(&mut self, index: usize, outcome: CellOutcome) -> std::io::Result<()> {
        self.pending.insert(index, outcome);
        while let Some(outcome) = self.pending.remove(&self.next) {
            for row in &outcome.rows {
                writeln!(self.out, "{}", row)?;
                self.rows_written += 1;
            }
            self.out.flush()?;
            if let Some(set) = outcome.conf {
                self.conf.insert(self.next, set);
            }
            if let Some(message) = outcome.failure {
                self.failures.push((self.next, message));
            }
            self.next += 1;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct ConfEntry {
    config_id: usize,
    fold: usize,
    inner: osrkit_core::ConfusionMatrix,
    outer: osrkit_core::ConfusionMatrix,
    halfpoint: osrkit_core::ConfusionMatrix,
    overall: osrkit_core::ConfusionMatrix,
}

enum ModelInstance {
    TSoftmax(TSoftmax),
    Openmax(Openmax),
}

impl ModelInstance {
    fn train_epoch(
        &mut self,
        data: &WrappedDataset,
        state: &mut TrainState,
    ) -> osrkit_core::Result<f64> {
        match self {
            ModelInstance::TSoftmax(m) => m.train_epoch(data, state),
            ModelInstance::Openmax(m) => m.train_epoch(data, state),
        }
    }

    fn test_epoch(
        &mut self,
        data: &WrappedDataset,
        conf: bool,
    ) -> osrkit_core::Result<osrkit_core::ScoreReport> {
        match self {
            ModelInstance::TSoftmax(m) => m.test_epoch(data, conf),
            ModelInstance::Openmax(m) => m.test_epoch(data, conf),
        }
    }
}

fn validate_division(
    list: &DivisionList,
    config: &ExperimentConfig,
    base: &LabeledDataset,
    outlier: Option<&LabeledDataset>,
) -> Result<(), CliError> {
    if list.configs.is_empty() {
        return Err(CliError::Validation("division file has no configs".into()));
    }
    for (i, c) in list.configs.iter().enumerate() {
        let bad = |msg: String| Err(CliError::Validation(format!("division config {}: {}", i, msg)));
        if c.kkc.is_empty() {
            return bad("empty kkc".into());
        }
        if c.kkc.iter().any(|&x| x >= base.class_count()) {
            return bad(format!("kkc ids exceed {} base classes", base.class_count()));
        }
        let uuc_budget = match config.protocol {
            Protocol::Outlier => outlier.expect("outlier dataset loaded").class_count(),
            _ => base.class_count(),
        };
        if c.uuc.iter().any(|&x| x >= uuc_budget) {
            return bad(format!("uuc ids exceed {} classes", uuc_budget));
        }
        if config.protocol != Protocol::Outlier && c.kkc.iter().any(|x| c.uuc.contains(x)) {
            return bad("kkc and uuc overlap".into());
        }
        let expected = osrkit_core::openness(c.kkc.len(), c.uuc.len());
        if (c.openness - expected).abs() > 1e-9 {
            return bad(format!(
                "stored openness {} does not match sizes (expected {})",
                c.openness, expected
            ));
        }
    }
    Ok(())
}

struct CellContext<'a> {
    config: &'a ExperimentConfig,
    base: &'a LabeledDataset,
    outlier: Option<&'a LabeledDataset>,
    want_conf: bool,
}

fn run_cell(
    ctx: &CellContext<'_>,
    division: &DivisionConfig,
    config_id: usize,
    fold: usize,
) -> CellOutcome {
    let cfg = ctx.config;
    let mut rows = Vec::with_capacity(cfg.epochs);
    let mut conf = None;

    let mut work = || -> Result<(), String> {
        let (train, test) = match cfg.protocol {
            Protocol::Holdout | Protocol::Oneclass => get_train_test(
                ctx.base,
                &division.kkc,
                &division.uuc,
                cfg.tunning,
                fold,
                cfg.n_folds,
                cfg.seed,
            ),
            Protocol::Outlier => get_train_test_outlier(
                ctx.base,
                ctx.outlier.expect("outlier dataset loaded"),
                &division.kkc,
                &division.uuc,
                cfg.tunning,
                fold,
                cfg.n_folds,
                cfg.seed,
                cfg.outlier_shuffle,
                &cfg.outlier_transforms,
            ),
        }
        .map_err(|e| e.to_string())?;

        let k = division.kkc.len();
        let (depth, height, width) = ctx.base.sample_dims();
        if height != width {
            return Err(format!(
                "lower stacks expect square images, dataset has {}×{}",
                height, width
            ));
        }

        let mut rng = rng_from_seed(derive_stream_seed(
            cfg.seed,
            config_id as u64,
            fold as u64,
            0,
        ));
        let lower = match cfg.lower_stack {
            StackSpec::Fc { n_out_channels } => {
                fc_lower_stack(depth, height, n_out_channels, &mut rng)
            }
            StackSpec::Osrci { n_out_channels } => {
                osrci_lower_stack(depth, height, n_out_channels, &mut rng)
            }
        }
        .map_err(|e| e.to_string())?;

        let mut model = match cfg.model {
            ModelSpec::Tsoftmax { epsilon } => {
                let epsilon = epsilon.unwrap_or_else(|| get_softmax_epsilon(k));
                ModelInstance::TSoftmax(
                    TSoftmax::new(lower, k, epsilon, &mut rng).map_err(|e| e.to_string())?,
                )
            }
            ModelSpec::Openmax {
                epsilon,
                tail,
                alpha,
            } => {
                let epsilon = epsilon.unwrap_or_else(|| get_openmax_epsilon(k));
                ModelInstance::Openmax(
                    Openmax::new(lower, k, epsilon, tail, alpha, &mut rng)
                        .map_err(|e| e.to_string())?,
                )
            }
        };

        let mut state = TrainState::new(
            cfg.learning_rate,
            cfg.batch_size,
            derive_stream_seed(cfg.seed, config_id as u64, fold as u64, 1),
        )
        .map_err(|e| e.to_string())?;

        for epoch in 0..cfg.epochs {
            model.train_epoch(&train, &mut state).map_err(|e| e.to_string())?;
            let last = epoch + 1 == cfg.epochs;
            let report = model
                .test_epoch(&test, ctx.want_conf && last)
                .map_err(|e| e.to_string())?;
            rows.push(format!(
                "{},{:.6},{},{},{:.6},{:.6},{:.6},{:.6}",
                config_id,
                division.openness,
                fold,
                epoch,
                report.inner,
                report.outer,
                report.halfpoint,
                report.overall
            ));
            if last {
                conf = report.matrices;
            }
        }
        Ok(())
    };

    let failure = work().err();
    CellOutcome {
        rows,
        conf,
        failure,
    }
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_run(
    config_path: &Path,
    division_path: &Path,
    out_path: &Path,
    conf_out: Option<&Path>,
    jobs: usize,
) -> Result<RunSummary, CliError> {
    let config = ExperimentConfig::load(config_path)?;
    let division_text = std::fs::read_to_string(division_path).map_err(|e| {
        CliError::Validation(format!("cannot read division {}: {}", division_path.display(), e))
    })?;
    let division: DivisionList = serde_json::from_str(&division_text)
        .map_err(|e| CliError::Validation(format!("division {}: {}", division_path.display(), e)))?;

    let base = config.dataset.load()?;
    let outlier = match (&config.protocol, &config.outlier_dataset) {
        (Protocol::Outlier, Some(spec)) => Some(spec.load()?),
        _ => None,
    };
    validate_division(&division, &config, &base, outlier.as_ref())?;

    let out_file = std::fs::File::create(out_path)
        .map_err(|e| CliError::Runtime(format!("creating {}: {}", out_path.display(), e)))?;
    let mut writer = OrderedWriter::new(std::io::BufWriter::new(out_file));
    writeln!(writer.out, "{}", RESULTS_HEADER)
        .and_then(|_| writer.out.flush())
        .map_err(|e| CliError::Runtime(format!("writing {}: {}", out_path.display(), e)))?;

    let ctx = CellContext {
        config: &config,
        base: &base,
        outlier: outlier.as_ref(),
        want_conf: conf_out.is_some(),
    };
    let cells: Vec<(usize, usize)> = (0..division.configs.len())
        .flat_map(|c| (0..config.n_folds).map(move |f| (c, f)))
        .collect();

    let writer = Mutex::new(writer);
    let io_error = Mutex::new(None::<std::io::Error>);
    let process = |index: usize| {
        let (config_id, fold) = cells[index];
        let outcome = run_cell(&ctx, &division.configs[config_id], config_id, fold);
        if let Some(msg) = &outcome.failure {
            eprintln!("cell config={} fold={} failed: {}", config_id, fold, msg);
        } else {
            eprintln!("cell config={} fold={} done", config_id, fold);
        }
        let mut w = writer.lock().expect("writer lock");
        if let Err(e) = w.submit(index, outcome) {
            io_error.lock().expect("error lock").get_or_insert(e);
        }
    };

    if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| CliError::Runtime(format!("thread pool: {}", e)))?;
        pool.install(|| {
            use rayon::prelude::*;
            (0..cells.len()).into_par_iter().for_each(process);
        });
    } else {
        (0..cells.len()).for_each(process);
    }

    if let Some(e) = io_error.into_inner().expect("error lock") {
        return Err(CliError::Runtime(format!("writing {}: {}", out_path.display(), e)));
    }
    let writer = writer.into_inner().expect("writer lock");
    debug_assert_eq!(writer.next, cells.len(), "all cells committed");

    if let Some(conf_path) = conf_out {
        let entries: Vec<ConfEntry> = writer
            .conf
            .iter()
            .map(|(&index, set)| ConfEntry {
                config_id: cells[index].0,
                fold: cells[index].1,
                inner: set.inner.clone(),
                outer: set.outer.clone(),
                halfpoint: set.halfpoint.clone(),
                overall: set.overall.clone(),
            })
            .collect();
        let json = serde_json::to_string_pretty(&entries)
            .map_err(|e| CliError::Runtime(format!("serializing matrices: {}", e)))?;
        std::fs::write(conf_path, json.as_bytes())
            .map_err(|e| CliError::Runtime(format!("writing {}: {}", conf_path.display(), e)))?;
    }

    Ok(RunSummary {
        cells: cells.len(),
        rows_written: writer.rows_written,
        failures: writer
            .failures
            .into_iter()
            .map(|(index, message)| CellFailure {
                config_id: cells[index].0,
                fold: cells[index].1,
                message,
            })
            .collect(),
    })
}

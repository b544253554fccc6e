use std::fs;
use std::path::{Path, PathBuf};

use attrib_audit::csvout::{self, fmt_f64};
use attrib_audit::faithfulness::{faithfulness_suite, AUC_HEADER, CURVE_HEADER};
use attrib_audit::graph::ModelGraph;
use attrib_audit::sanity::{run_sanity, SanityRunConfig, SANITY_HEADER};
use attrib_audit::seed::derive_seed;
use attrib_audit::theory::{
    activation_stats, overtaking_rows, quantile_overtaking_grid, quantile_rows, OVERTAKING_HEADER, QUANTILE_HEADER,
    THEORY_HEADER,
};
use attrib_audit::zoo::{build, deserialize, serialize, train, RandomizationPlan, TrainConfig};

use crate::config::*;
use crate::CliError;

pub const MODEL_FILE: &str = "model.bin";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const SANITY_CSV: &str = "sanity.csv";
pub const CURVES_CSV: &str = "occlusion_curves.csv";
pub const AUC_CSV: &str = "occlusion_auc.csv";
pub const THEORY_CSV: &str = "theory.csv";
pub const QUANTILES_CSV: &str = "quantiles.csv";
pub const NONPOSITIVE_CSV: &str = "nonpositive.csv";
pub const OVERTAKING_CSV: &str = "overtaking.csv";

const TRAIN_LOG_HEADER: [&str; 3] = ["epoch", "loss", "accuracy"];
const NONPOSITIVE_HEADER: [&str; 3] = ["layer", "node", "nonpositive_fraction"];

/// Files written and the grid cells that produced no row.
#[derive(Debug, Default)]
pub struct Report {
    pub written: Vec<PathBuf>,
    pub failed: Vec<String>,
}

impl Report {
    fn csv(&mut self, out: &Path, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let path = out.join(name);
        csvout::write(&path, header, rows)?;
        self.written.push(path);
        Ok(())
    }
}

fn load_model(path: &Path) -> Result<ModelGraph, CliError> {
    Ok(deserialize(path)?)
}

pub fn cmd_train(cfg: &TrainCommand, seed: u64, out: &Path) -> Result<Report, CliError> {
    let data = cfg.data.load(seed)?;
    let model = build(&cfg.arch, derive_seed(seed, &[TASK_INIT]))?;
    let tc = TrainConfig {
        epochs: cfg.epochs,
        lr: cfg.lr,
        batch_size: cfg.batch_size,
        seed: derive_seed(seed, &[TASK_TRAIN]),
    };
    let (trained, log) = train(&model, &data, &tc)?;
    let mut report = Report::default();
    let path = out.join(MODEL_FILE);
    serialize(&trained, &path)?;
    report.written.push(path);
    let rows: Vec<Vec<String>> =
        log.iter().map(|e| vec![e.epoch.to_string(), fmt_f64(e.loss), fmt_f64(e.accuracy)]).collect();
    report.csv(out, TRAIN_LOG, &TRAIN_LOG_HEADER, &rows)?;
    Ok(report)
}

fn plan_for(model: &ModelGraph, groups: &Option<Vec<Group>>) -> Result<RandomizationPlan, CliError> {
    let groups = match groups {
        Some(gs) => gs
            .iter()
            .map(|g| {
                let ids = g
                    .layers
                    .iter()
                    .map(|l| model.find(l).ok_or_else(|| CliError::Config(format!("no layer named {l:?}"))))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok((g.name.clone(), ids))
            })
            .collect::<Result<Vec<_>, CliError>>()?,
        None => model
            .parameterized_nodes()
            .into_iter()
            .rev()
            .map(|n| (model.node(n).name().to_string(), vec![n]))
            .collect(),
    };
    Ok(RandomizationPlan::new(groups, 0)?)
}

pub fn cmd_sanity(cfg: &SanityCommand, seed: u64, out: &Path) -> Result<Report, CliError> {
    let model = load_model(&cfg.model)?;
    let data = cfg.data.load(seed)?;
    let name = cfg.model_name.clone().unwrap_or_else(|| {
        cfg.model.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into())
    });
    let run = SanityRunConfig {
        model_name: name,
        methods: cfg.methods.clone(),
        metrics: cfg.metrics.clone(),
        plan: plan_for(&model, &cfg.groups)?,
        mode: cfg.mode,
        seeds: (0..cfg.runs as u64).map(|r| derive_seed(seed, &[TASK_RUN, r])).collect(),
        preprocessing: cfg.preprocessing,
        ssim: cfg.ssim,
        n_images: cfg.n_images,
    };
    let result = run_sanity(&model, &data, &run)?;
    let failed = result
        .rows
        .iter()
        .filter(|r| r.mean.is_none())
        .map(|r| format!("{}/{}/{}/{} seed {}", r.method, r.stage_name, r.metric.as_str(), r.prep, r.seed))
        .collect();
    let mut report = Report { written: Vec::new(), failed };
    report.csv(out, SANITY_CSV, &SANITY_HEADER, &result.csv_rows())?;
    Ok(report)
}

pub fn cmd_faithfulness(cfg: &FaithfulnessCommand, seed: u64, out: &Path) -> Result<Report, CliError> {
    let data = cfg.data.load(seed)?;
    let models = cfg
        .models
        .iter()
        .map(|m| Ok((m.name.clone(), load_model(&m.path)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let stream = derive_seed(seed, &[TASK_FAITHFULNESS]);
    let mut report = Report::default();
    let (mut curves, mut aucs) = (Vec::new(), Vec::new());
    for m in &models {
        for method in &cfg.methods {
            match faithfulness_suite(std::slice::from_ref(m), std::slice::from_ref(method), &data, cfg.n_images, &cfg.occlusion, stream) {
                Ok(r) => {
                    curves.extend(r.curve_rows());
                    aucs.extend(r.auc_rows());
                }
                Err(e) => report.failed.push(format!("{}/{}: {e}", m.0, method.name())),
            }
        }
    }
    report.csv(out, CURVES_CSV, &CURVE_HEADER, &curves)?;
    report.csv(out, AUC_CSV, &AUC_HEADER, &aucs)?;
    Ok(report)
}

pub fn cmd_theory(cfg: &TheoryCommand, seed: u64, out: &Path) -> Result<Report, CliError> {
    let mut report = Report::default();
    let mut rows = Vec::new();
    for (i, exp) in cfg.experiments.iter().enumerate() {
        match exp.run(derive_seed(seed, &[TASK_EXPERIMENT, i as u64])) {
            Ok(r) => rows.extend(r.iter().map(|row| row.fields())),
            Err(e) => report.failed.push(format!("experiment {i} ({}): {e}", exp.name())),
        }
    }
    report.csv(out, THEORY_CSV, &THEORY_HEADER, &rows)?;
    Ok(report)
}

pub fn cmd_stats(cfg: &StatsCommand, seed: u64, out: &Path) -> Result<Report, CliError> {
    let model = load_model(&cfg.model)?;
    let data = cfg.data.load(seed)?;
    let table = activation_stats(&model, &data, cfg.n_images)?;
    let mut report = Report::default();
    report.csv(out, QUANTILES_CSV, &QUANTILE_HEADER, &quantile_rows(&table))?;
    let fractions: Vec<Vec<String>> = table
        .layers
        .iter()
        .map(|l| vec![l.name.clone(), l.node.to_string(), fmt_f64(l.nonpositive_fraction)])
        .collect();
    report.csv(out, NONPOSITIVE_CSV, &NONPOSITIVE_HEADER, &fractions)?;
    if cfg.overtaking {
        let cells = quantile_overtaking_grid(&table)?;
        report.csv(out, OVERTAKING_CSV, &OVERTAKING_HEADER, &overtaking_rows(&cells))?;
    }
    Ok(report)
}

pub fn ensure_dir(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::Path(format!("cannot create {}: {e}", out.display())))
}

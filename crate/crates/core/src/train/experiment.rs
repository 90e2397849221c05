//! Experiment matrices: train/evaluate a grid of cells with shared seeds
//! and emit one CSV row per (cell, seed).
//!
//! Column order is fixed: `cell_id, seed, n_train, n_val, n_test`, then
//! `mae_<c>, mae_std_<c>, rmae_<c>, acc_<c>` for each pose component
//! (empty when the cell's label mode omits it), then pooled
//! `pos_mae, pos_mae_std, pos_rmae, pos_acc, ori_mae, ori_mae_std,
//! ori_rmae, ori_acc`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arch::{ArchitectureSpec, Family, LongRange};
use crate::error::{CoreError, Result};
use crate::sim::{Dataset, Split};
use crate::train::{
    evaluate, train, LabelMode, Metrics, Representation, TrainedModel, TrainingConfig,
    COMPONENT_NAMES,
};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellConfig {
    pub id: String,
    /// Dataset directory, relative to the experiment config location.
    pub dataset: String,
    pub family: Family,
    #[serde(default)]
    pub long_range: LongRange,
    pub width_scale: f64,
    pub label_mode: LabelMode,
    #[serde(default = "default_repr")]
    pub representation: Representation,
    pub max_epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Evaluate on this dataset's test split instead of the training one.
    #[serde(default)]
    pub eval_dataset: Option<String>,
}

fn default_repr() -> Representation {
    Representation::Volume
}
fn default_lr() -> f64 {
    1e-4
}
fn default_batch() -> usize {
    15
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    pub cells: Vec<CellConfig>,
}

impl ExperimentConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| CoreError::Format {
            path: "<experiment config>".into(),
            msg: e.to_string(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub cell_id: String,
    pub seed: u64,
    pub split_sizes: [usize; 3],
    pub metrics: Metrics,
}

fn fmt(v: f64) -> String {
    format!("{:.6}", v)
}

pub fn csv_header() -> String {
    let mut cols = vec![
        "cell_id".to_string(),
        "seed".into(),
        "n_train".into(),
        "n_val".into(),
        "n_test".into(),
    ];
    for name in COMPONENT_NAMES {
        for m in ["mae", "mae_std", "rmae", "acc"] {
            cols.push(format!("{m}_{name}"));
        }
    }
    for p in ["pos", "ori"] {
        for m in ["mae", "mae_std", "rmae", "acc"] {
            cols.push(format!("{p}_{m}"));
        }
    }
    cols.join(",")
}

pub fn csv_row(r: &CellResult) -> String {
    let mut cols = vec![
        r.cell_id.clone(),
        r.seed.to_string(),
        r.split_sizes[0].to_string(),
        r.split_sizes[1].to_string(),
        r.split_sizes[2].to_string(),
    ];
    for comp in 0..6 {
        match r.metrics.component(comp) {
            Some(c) => {
                cols.push(fmt(c.mae));
                cols.push(fmt(c.mae_std));
                cols.push(fmt(c.rmae));
                cols.push(fmt(c.acc));
            }
            None => cols.extend(std::iter::repeat_n(String::new(), 4)),
        }
    }
    for pooled in [&r.metrics.position, &r.metrics.orientation] {
        match pooled {
            Some(p) => {
                cols.push(fmt(p.mae));
                cols.push(fmt(p.mae_std));
                cols.push(fmt(p.rmae));
                cols.push(fmt(p.acc));
            }
            None => cols.extend(std::iter::repeat_n(String::new(), 4)),
        }
    }
    cols.join(",")
}

pub fn results_to_csv(results: &[CellResult]) -> String {
    let mut out = csv_header();
    out.push('\n');
    for r in results {
        out.push_str(&csv_row(r));
        out.push('\n');
    }
    out
}

/// Train and evaluate one cell with one seed.
pub fn run_cell(cell: &CellConfig, base_dir: &Path, seed: u64) -> Result<CellResult> {
    let ds_dir = base_dir.join(&cell.dataset);
    let dataset = Dataset::open(&ds_dir)?;

    let mut arch = ArchitectureSpec::new(cell.family);
    arch.width_scale = cell.width_scale;
    if cell.family == Family::Inception3D {
        arch.long_range = cell.long_range;
    }

    let mut tc = TrainingConfig::new(cell.label_mode, cell.max_epochs, seed);
    tc.lr = cell.lr;
    tc.batch_size = cell.batch_size;
    tc.representation = cell.representation;

    let outcome = train(&arch, &dataset, &tc)?;
    let mut model = TrainedModel::from_checkpoint(&outcome.checkpoint)?;

    let (eval_ds, eval_dir): (Dataset, PathBuf) = match &cell.eval_dataset {
        Some(d) => {
            let dir = base_dir.join(d);
            (Dataset::open(&dir)?, dir)
        }
        None => (Dataset::open(&ds_dir)?, ds_dir.clone()),
    };
    let _ = eval_dir;
    let metrics = evaluate(&mut model, &eval_ds, Split::Test)?;

    let sizes = [
        dataset.manifest.split_ids(Split::Train).len(),
        dataset.manifest.split_ids(Split::Val).len(),
        eval_ds.manifest.split_ids(Split::Test).len(),
    ];
    Ok(CellResult {
        cell_id: cell.id.clone(),
        seed,
        split_sizes: sizes,
        metrics,
    })
}

/// Run the whole matrix: every cell with every seed, in declaration order.
pub fn run_experiment(config: &ExperimentConfig, base_dir: &Path) -> Result<Vec<CellResult>> {
    let mut results = Vec::with_capacity(config.cells.len() * config.seeds.len());
    for cell in &config.cells {
        for &seed in &config.seeds {
            results.push(run_cell(cell, base_dir, seed)?);
        }
    }
    Ok(results)
}

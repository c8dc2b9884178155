//! Cartesian-product sweeps over configuration keys.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, hash_label};

use super::config::ExperimentConfig;
use super::experiment::{run_experiment, RunOutcome};
use super::metrics::{write_csv, write_summary, SummaryRow};

/// Grid keys mapped to the values they take, in key order.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    axes: Vec<(String, Vec<Value>)>,
}

impl Grid {
    pub fn from_value(value: Value) -> Result<Self> {
        let Value::Object(map) = value else {
            return Err(Error::Config("grid must be an object of key -> list of values".into()));
        };
        if map.is_empty() {
            return Err(Error::Config("grid is empty".into()));
        }
        let mut axes = Vec::with_capacity(map.len());
        for (key, values) in map {
            match values {
                Value::Array(vs) if !vs.is_empty() => axes.push((key, vs)),
                _ => return Err(Error::Config(format!("grid key `{key}` needs a non-empty list"))),
            }
        }
        Ok(Self { axes })
    }

    pub fn parse(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_value(value)
    }

    /// Every assignment of one value per key; the last key varies fastest.
    pub fn cells(&self) -> Vec<Vec<(String, Value)>> {
        let mut cells = vec![Vec::new()];
        for (key, values) in &self.axes {
            cells = cells
                .into_iter()
                .flat_map(|cell| {
                    values.iter().map(move |v| {
                        let mut next = cell.clone();
                        next.push((key.clone(), v.clone()));
                        next
                    })
                })
                .collect();
        }
        cells
    }
}

pub fn cell_label(cell: &[(String, Value)]) -> String {
    cell.iter()
        .map(|(k, v)| match v {
            Value::String(s) => format!("{k}={s}"),
            other => format!("{k}={other}"),
        })
        .collect::<Vec<_>>()
        .join(",")
}

/// Base config with the cell's overrides applied and its seed re-derived from
/// the label, so cells never share random streams.
pub fn cell_config(base: &ExperimentConfig, cell: &[(String, Value)]) -> Result<ExperimentConfig> {
    let Value::Object(mut doc) = base.to_value() else {
        unreachable!("config serializes to an object");
    };
    for (key, value) in cell {
        if !doc.contains_key(key) {
            return Err(Error::Config(format!("unknown grid key `{key}`")));
        }
        doc.insert(key.clone(), value.clone());
    }
    let mut cfg = ExperimentConfig::from_value(Value::Object(doc))?;
    cfg.seed = derive_seed(cfg.seed, hash_label(&cell_label(cell)));
    Ok(cfg)
}

#[derive(Debug)]
pub struct CellResult {
    pub summary: SummaryRow,
    pub outcome: Option<RunOutcome>,
}

/// Runs every cell; a failing cell is recorded in its summary row.
pub fn sweep(base: &ExperimentConfig, grid: &Grid) -> Vec<CellResult> {
    let cells = grid.cells();
    cells
        .par_iter()
        .enumerate()
        .map(|(index, cell)| {
            let label = cell_label(cell);
            let result = cell_config(base, cell).and_then(|cfg| run_experiment(&cfg));
            let summary = match &result {
                Ok(outcome) => SummaryRow {
                    cell: index,
                    label,
                    final_test_accuracy: outcome.final_accuracy(),
                    final_test_loss: outcome.metrics.iter().rev().find_map(|r| r.test_loss),
                    error: String::new(),
                },
                Err(e) => SummaryRow {
                    cell: index,
                    label,
                    final_test_accuracy: None,
                    final_test_loss: None,
                    error: e.to_string(),
                },
            };
            CellResult {
                summary,
                outcome: result.ok(),
            }
        })
        .collect()
}

/// Runs the sweep and writes `cell_NNN.csv` per successful cell plus
/// `summary.csv` into `out_dir`.
pub fn sweep_to_dir(base: &ExperimentConfig, grid: &Grid, out_dir: &Path) -> Result<Vec<SummaryRow>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let results = sweep(base, grid);
    for r in &results {
        if let Some(outcome) = &r.outcome {
            write_csv(&outcome.metrics, &out_dir.join(format!("cell_{:03}.csv", r.summary.cell)))?;
        }
    }
    let rows: Vec<SummaryRow> = results.into_iter().map(|r| r.summary).collect();
    write_summary(&rows, &out_dir.join("summary.csv"))?;
    Ok(rows)
}

pub fn grid_from_pairs(pairs: &[(&str, Vec<Value>)]) -> Result<Grid> {
    let map: Map<String, Value> = pairs
        .iter()
        .map(|(k, vs)| (k.to_string(), Value::Array(vs.clone())))
        .collect();
    Grid::from_value(Value::Object(map))
}

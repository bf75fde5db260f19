//! Cartesian hyperparameter sweeps over one scenario.
//!
//! A grid file lists candidate values for any of the five hyperparameters;
//! every combination runs over all configured seeds and is summarized by the
//! mean and population standard deviation of each task's converged risk —
//! the risk in the last reported round of the run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use crate::config::{ConfigError, ScenarioConfig};
use crate::csvout::CsvError;
use crate::scenario::{run_scenario, ScenarioError};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(rename = "C", default)]
    pub c: Option<Vec<f64>>,
    #[serde(default)]
    pub eps1: Option<Vec<f64>>,
    #[serde(default)]
    pub eps2: Option<Vec<f64>>,
    #[serde(default)]
    pub eta1: Option<Vec<f64>>,
    #[serde(default)]
    pub eta2: Option<Vec<f64>>,
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let axes = [
            ("C", &self.c),
            ("eps1", &self.eps1),
            ("eps2", &self.eps2),
            ("eta1", &self.eta1),
            ("eta2", &self.eta2),
        ];
        let mut any = false;
        for (name, axis) in axes {
            if let Some(values) = axis {
                if values.is_empty() {
                    return Err(ConfigError::Invalid(format!(
                        "grid {name} lists no values"
                    )));
                }
                for &v in values {
                    if !(v.is_finite() && v > 0.0) {
                        return Err(ConfigError::Invalid(format!(
                            "grid {name} values must be > 0, got {v}"
                        )));
                    }
                }
                any = true;
            }
        }
        if !any {
            return Err(ConfigError::Invalid(
                "grid must set at least one of C, eps1, eps2, eta1, eta2".into(),
            ));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        [&self.c, &self.eps1, &self.eps2, &self.eta1, &self.eta2]
            .iter()
            .map(|axis| axis.as_ref().map_or(1, |v| v.len()))
            .product()
    }
}

pub fn parse_grid(path: &Path) -> Result<GridSpec, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let grid: GridSpec = serde_json::from_str(&text)?;
    grid.validate()?;
    Ok(grid)
}

/// Seed-aggregated result of one grid cell for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub c: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub task: usize,
    pub mean_risk: f64,
    pub std_risk: f64,
    pub seeds: usize,
}

/// Risk of each task in its last reported round, keyed by task.
fn converged_risks(records: &[crate::csvout::RunRecord]) -> BTreeMap<usize, f64> {
    let mut last: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.node.is_none()) {
        let entry = last.entry(r.task).or_insert((r.round, r.risk));
        if r.round >= entry.0 {
            *entry = (r.round, r.risk);
        }
    }
    last.into_iter().map(|(t, (_, risk))| (t, risk)).collect()
}

pub fn sweep(cfg: &ScenarioConfig, grid: &GridSpec) -> Result<Vec<CellSummary>, ScenarioError> {
    cfg.validate()?;
    grid.validate()?;
    let axis = |vals: &Option<Vec<f64>>, base: f64| vals.clone().unwrap_or_else(|| vec![base]);
    let cs = axis(&grid.c, cfg.hyper.c);
    let eps1s = axis(&grid.eps1, cfg.hyper.eps1);
    let eps2s = axis(&grid.eps2, cfg.hyper.eps2);
    let eta1s = axis(&grid.eta1, cfg.hyper.eta1);
    let eta2s = axis(&grid.eta2, cfg.hyper.eta2);

    let mut out = Vec::new();
    for &c in &cs {
        for &eps1 in &eps1s {
            for &eps2 in &eps2s {
                for &eta1 in &eta1s {
                    for &eta2 in &eta2s {
                        let mut cell = cfg.clone();
                        cell.hyper.c = c;
                        cell.hyper.eps1 = eps1;
                        cell.hyper.eps2 = eps2;
                        cell.hyper.eta1 = eta1;
                        cell.hyper.eta2 = eta2;
                        let mut by_task: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
                        for &seed in &cfg.seeds {
                            let records = run_scenario(&cell, seed)?;
                            for (task, risk) in converged_risks(&records) {
                                by_task.entry(task).or_default().push(risk);
                            }
                        }
                        for (task, risks) in by_task {
                            let n = risks.len() as f64;
                            let mean = risks.iter().sum::<f64>() / n;
                            let var =
                                risks.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
                            out.push(CellSummary {
                                c,
                                eps1,
                                eps2,
                                eta1,
                                eta2,
                                task,
                                mean_risk: mean,
                                std_risk: var.sqrt(),
                                seeds: risks.len(),
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub const SUMMARY_HEADER: &str =
    "scenario,C,eps1,eps2,eta1,eta2,task,mean_risk,std_risk,seeds";

pub fn summary_csv(scenario: &str, cells: &[CellSummary]) -> Result<String, CsvError> {
    if cells.is_empty() {
        return Err(CsvError::Empty);
    }
    let mut out = String::new();
    out.push_str(SUMMARY_HEADER);
    out.push('\n');
    for cell in cells {
        let _ = writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e},{:.16e},{}",
            scenario,
            cell.c,
            cell.eps1,
            cell.eps2,
            cell.eta1,
            cell.eta2,
            cell.task,
            cell.mean_risk,
            cell.std_risk,
            cell.seeds,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{AssignmentSpec, DataSpec, HyperSpec, Mode, TopologySpec};

    fn tiny() -> ScenarioConfig {
        ScenarioConfig {
            name: "sweepy".into(),
            mode: Mode::Dtsvm,
            nodes: 2,
            topology: TopologySpec::Full,
            data: DataSpec::Synthetic {
                p: 2,
                tasks: 1,
                relatedness: 1.0,
                noise_sigma: 0.5,
                train_per_class: 20,
                test_per_class: 10,
            },
            assignments: vec![AssignmentSpec {
                task: 0,
                nodes: None,
                per_node: (4, 4),
            }],
            hyper: HyperSpec {
                c: 0.1,
                eps1: 1.0,
                eps2: 1.0,
                eta1: 1.0,
                eta2: 1.0,
                penalty: None,
            },
            max_rounds: 4,
            consensus_tol: 0.0,
            risk_stride: 1,
            seeds: vec![1, 2, 3],
            dsvm_task: None,
            online: None,
            out: None,
        }
    }

    #[test]
    fn single_value_grid_matches_plain_runs() {
        let cfg = tiny();
        let grid = GridSpec {
            eps2: Some(vec![1.0]),
            ..GridSpec::default()
        };
        let cells = sweep(&cfg, &grid).unwrap();
        assert_eq!(cells.len(), 1);
        let mut risks = Vec::new();
        for &seed in &cfg.seeds {
            let records = run_scenario(&cfg, seed).unwrap();
            risks.push(converged_risks(&records)[&0]);
        }
        let mean = risks.iter().sum::<f64>() / risks.len() as f64;
        assert_eq!(cells[0].mean_risk, mean);
        assert_eq!(cells[0].seeds, 3);
    }

    #[test]
    fn two_by_two_grid_yields_four_rows() {
        let cfg = tiny();
        let grid = GridSpec {
            c: Some(vec![0.05, 0.2]),
            eps2: Some(vec![1.0, 4.0]),
            ..GridSpec::default()
        };
        assert_eq!(grid.cell_count(), 4);
        let cells = sweep(&cfg, &grid).unwrap();
        assert_eq!(cells.len(), 4);
        let distinct: std::collections::BTreeSet<(u64, u64)> = cells
            .iter()
            .map(|c| (c.c.to_bits(), c.eps2.to_bits()))
            .collect();
        assert_eq!(distinct.len(), 4);
        assert!(cells.iter().all(|c| c.seeds == 3));
    }

    #[test]
    fn empty_grid_is_rejected() {
        let grid = GridSpec::default();
        let err = grid.validate().unwrap_err().to_string();
        assert!(err.contains("at least one"), "{err}");
        let grid = GridSpec {
            eta1: Some(vec![]),
            ..GridSpec::default()
        };
        let err = grid.validate().unwrap_err().to_string();
        assert!(err.contains("eta1"), "{err}");
    }

    #[test]
    fn nonpositive_grid_value_names_the_parameter() {
        let grid = GridSpec {
            eta2: Some(vec![1.0, -2.0]),
            ..GridSpec::default()
        };
        let err = grid.validate().unwrap_err().to_string();
        assert!(err.contains("eta2"), "{err}");
    }

    #[test]
    fn unknown_grid_keys_are_rejected() {
        let err = serde_json::from_str::<GridSpec>(r#"{"epsilon_one": [1.0]}"#).unwrap_err();
        assert!(err.to_string().contains("epsilon_one"));
    }

    #[test]
    fn summary_csv_shape() {
        let cells = vec![CellSummary {
            c: 0.1,
            eps1: 1.0,
            eps2: 2.0,
            eta1: 1.0,
            eta2: 1.0,
            task: 0,
            mean_risk: 0.25,
            std_risk: 0.05,
            seeds: 3,
        }];
        let text = summary_csv("demo", &cells).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], SUMMARY_HEADER);
        assert!(lines[1].starts_with("demo,"));
        assert!(lines[1].ends_with(",3"));
        assert!(summary_csv("demo", &[]).is_err());
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use benchcli::config::{dsvm_config, parse_config, ConfigError};
use benchcli::csvout::{dataset_csv, write_csv, CsvError};
use benchcli::scenario::{run_all, run_scenario, ScenarioError};
use benchcli::sweep::{parse_grid, summary_csv, sweep};
use dtsvm::datakit::{gen_synthetic, load_idx, pca_fit, pca_transform, SyntheticSpec};

#[derive(Parser)]
#[command(
    name = "benchcli",
    version,
    about = "Scenario benchmarks for consensus transfer SVMs"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and write per-round records as CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run a single seed instead of every seed listed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output path; defaults to the config's `out`, then `<name>.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also run the single-task baseline rewrite and append its records.
        #[arg(long)]
        with_dsvm_baseline: bool,
    },
    /// Cartesian hyperparameter sweep; writes one summary row per grid cell
    /// and task.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        /// Output path; defaults to `<name>_sweep.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate synthetic tasks from a spec file and export
    /// `task<N>_{train,test}.csv`.
    Datagen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Fit PCA on an IDX image/label pair and export the projection.
    Pca {
        /// IDX image file followed by the matching IDX label file.
        #[arg(long = "in", num_args = 2, value_names = ["IMAGES", "LABELS"])]
        input: Vec<PathBuf>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => Failure::Runtime(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Config(c) => c.into(),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<CsvError> for Failure {
    fn from(e: CsvError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Run {
            config,
            seed,
            out,
            with_dsvm_baseline,
        } => {
            let cfg = parse_config(&config)?;
            let mut records = match seed {
                Some(s) => run_scenario(&cfg, s)?,
                None => run_all(&cfg)?,
            };
            if with_dsvm_baseline {
                let baseline = dsvm_config(&cfg)?;
                match seed {
                    Some(s) => records.extend(run_scenario(&baseline, s)?),
                    None => records.extend(run_all(&baseline)?),
                }
            }
            let path = out
                .or_else(|| cfg.out.clone())
                .unwrap_or_else(|| PathBuf::from(format!("{}.csv", cfg.name)));
            write_csv(&records, &path)?;
            println!("wrote {} records to {}", records.len(), path.display());
            Ok(())
        }
        Cmd::Sweep { config, grid, out } => {
            let cfg = parse_config(&config)?;
            let grid = parse_grid(&grid)?;
            let cells = sweep(&cfg, &grid)?;
            let path = out.unwrap_or_else(|| PathBuf::from(format!("{}_sweep.csv", cfg.name)));
            let text = summary_csv(&cfg.name, &cells)?;
            std::fs::write(&path, text)
                .map_err(|e| Failure::Runtime(format!("failed to write {}: {e}", path.display())))?;
            println!("wrote {} summary rows to {}", cells.len(), path.display());
            Ok(())
        }
        Cmd::Datagen { spec, out_dir } => {
            let text = std::fs::read_to_string(&spec).map_err(|e| {
                Failure::Runtime(format!("failed to read {}: {e}", spec.display()))
            })?;
            let spec: SyntheticSpec = serde_json::from_str(&text)
                .map_err(|e| Failure::Validation(format!("spec is not valid JSON: {e}")))?;
            let tasks =
                gen_synthetic(&spec).map_err(|e| Failure::Validation(e.to_string()))?;
            std::fs::create_dir_all(&out_dir).map_err(|e| {
                Failure::Runtime(format!("failed to create {}: {e}", out_dir.display()))
            })?;
            for (t, task) in tasks.iter().enumerate() {
                for (split, ds) in [("train", &task.train), ("test", &task.test)] {
                    let path = out_dir.join(format!("task{t}_{split}.csv"));
                    let text = dataset_csv(&ds.features, ds.labels.iter().map(|&y| y as i64))?;
                    std::fs::write(&path, text).map_err(|e| {
                        Failure::Runtime(format!("failed to write {}: {e}", path.display()))
                    })?;
                }
            }
            println!("wrote {} tasks to {}", tasks.len(), out_dir.display());
            Ok(())
        }
        Cmd::Pca { input, k, out } => {
            let raw = load_idx(&input[0], &input[1])
                .map_err(|e| Failure::Runtime(e.to_string()))?;
            let model = pca_fit(&raw.images, k).map_err(|e| {
                use dtsvm::datakit::DatakitError as E;
                match e {
                    E::ZeroCount(_) | E::KTooLarge { .. } => Failure::Validation(e.to_string()),
                    other => Failure::Runtime(other.to_string()),
                }
            })?;
            let proj = pca_transform(&model, &raw.images)
                .map_err(|e| Failure::Runtime(e.to_string()))?;
            let text = dataset_csv(&proj, raw.labels.iter().copied())?;
            std::fs::write(&out, text).map_err(|e| {
                Failure::Runtime(format!("failed to write {}: {e}", out.display()))
            })?;
            println!(
                "projected {} samples to {} components at {}",
                proj.nrows(),
                k,
                out.display()
            );
            Ok(())
        }
    }
}

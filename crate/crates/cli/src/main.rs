use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use zobilevel::validation::default_suite;
use zobilevel_cli::experiment::{read_aggregate, read_merged, run_experiment, write_csv, write_text, MergedRow};
use zobilevel_cli::svg::{render, Axes, Series};
use zobilevel_cli::{compare, AggregatePoint, CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "zobilevel", version, about = "Zeroth-order bilevel optimization experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment and write its CSVs.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// `dotted.key=value`, repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run several experiments on one problem and merge their aggregates.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        configs: Vec<PathBuf>,
        /// Merged CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Also draw the merged curves.
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Applied to every config.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Draw aggregate or merged CSVs.
    Plot {
        #[arg(long = "in", num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        linear_y: bool,
        #[arg(long)]
        title: Option<String>,
    },
    /// Run the estimator validation suite.
    Validate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Run { config, overrides } => {
            let cfg = ExperimentConfig::load(&config, &overrides)?;
            let (result, files) = run_experiment(&cfg)?;
            for t in result.trials.iter().filter(|t| t.failed()) {
                eprintln!("trial {}: {}", t.trial, t.outcome.error.as_ref().map(ToString::to_string).unwrap_or_default());
            }
            if let (Some(first), Some(last)) = (result.aggregate.first(), result.aggregate.last()) {
                println!(
                    "{} ({}): mean norm {:.4e} -> {:.4e} over {} scaled queries",
                    result.label, result.algorithm, first.mean_norm, last.mean_norm, last.scaled_queries
                );
            }
            println!("wrote {}", files.aggregate.display());
            Ok(())
        }
        Cmd::Compare { configs, out, svg, overrides } => {
            let cfgs = configs
                .iter()
                .map(|p| ExperimentConfig::load(p, &overrides))
                .collect::<Result<Vec<_>, _>>()?;
            let results = compare(&cfgs)?;
            let rows: Vec<MergedRow> = results.iter().flat_map(|r| r.merged_rows()).collect();
            write_csv(&out, &rows)?;
            println!("wrote {}", out.display());
            if let Some(path) = svg {
                let series: Vec<Series> = results
                    .iter()
                    .map(|r| Series {
                        label: r.label.clone(),
                        points: r.aggregate.clone(),
                    })
                    .collect();
                write_text(&path, &render(&series, &Axes::default())?)?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Cmd::Plot { inputs, out, linear_y, title } => {
            let mut series = Vec::new();
            for p in &inputs {
                series.extend(load_series(p)?);
            }
            let axes = Axes {
                log_y: !linear_y,
                title,
                ..Axes::default()
            };
            write_text(&out, &render(&series, &axes)?)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Cmd::Validate { seed } => {
            let records = default_suite(seed)?;
            let mut failed = 0;
            for r in &records {
                println!("{} {} measured {:.4e} target {:.4e}", if r.pass { "pass" } else { "FAIL" }, r.name, r.measured, r.target);
                failed += usize::from(!r.pass);
            }
            if failed > 0 {
                return Err(CliError::Failed(format!("{failed} of {} checks failed", records.len())));
            }
            Ok(())
        }
    }
}

/// One series per aggregate file, or one per label in a merged file.
fn load_series(path: &Path) -> Result<Vec<Series>, CliError> {
    let header = csv::Reader::from_path(path)
        .and_then(|mut r| r.headers().cloned())
        .map_err(|e| CliError::csv(path, e))?;
    if header.iter().any(|h| h == "label") {
        let mut series: Vec<Series> = Vec::new();
        for row in read_merged(path)? {
            let point = AggregatePoint {
                scaled_queries: row.scaled_queries,
                mean_norm: row.mean_norm,
                min_norm: row.min_norm,
                max_norm: row.max_norm,
                n_trials: row.n_trials,
            };
            match series.iter_mut().find(|s| s.label == row.label) {
                Some(s) => s.points.push(point),
                None => series.push(Series { label: row.label, points: vec![point] }),
            }
        }
        Ok(series)
    } else {
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().trim_end_matches(".aggregate").to_string())
            .unwrap_or_default();
        Ok(vec![Series { label, points: read_aggregate(path)? }])
    }
}

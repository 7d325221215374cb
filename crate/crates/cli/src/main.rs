use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use scatter_cli::campaign::{run_campaign, CampaignOverrides};
use scatter_cli::export::{write_positions, write_summary};
use scatter_cli::scenario_file::{self, Overrides};
use scatter_cli::OUT_DIR_ENV;
use scatter_core::analysis::suites::{run_suite, Suite};
use scatter_core::engine::{self, ReplayVerdict};
use scatter_core::Trace;

#[derive(Parser)]
#[command(name = "scatter", version, about = "Randomized scattering of oblivious robots: simulate, replay, verify")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write its trace.
    Run {
        scenario: PathBuf,
        /// Trace path (default: <out dir>/<scenario stem>.trace).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Scheduler as kind[:param], e.g. bernoulli:0.3.
        #[arg(long)]
        scheduler: Option<String>,
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Run a named verification suite.
    Verify {
        /// closure, separation, decay, impossibility, gather, pattern,
        /// fairness or voronoi-oracle.
        suite: String,
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-execute a trace and compare it bit for bit.
    Replay { trace: PathBuf },
    /// Export traces as CSV.
    Export {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(long, value_enum)]
        format: ExportFormat,
        /// Output file (default: standard output).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a seeded campaign and write campaign.csv and report.txt.
    Campaign {
        spec: PathBuf,
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        scheduler: Option<String>,
        #[arg(long)]
        max_steps: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportFormat {
    CsvPositions,
    CsvSummary,
}

fn out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from("."), PathBuf::from)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn read_trace(path: &Path) -> anyhow::Result<Trace> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    Trace::parse(&text).with_context(|| format!("{}", path.display()))
}

fn execute(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Run {
            scenario,
            out,
            seed,
            scheduler,
            max_steps,
        } => {
            let overrides = Overrides {
                seed,
                scheduler,
                max_steps,
            };
            let (_, s) = scenario_file::load(&scenario, &overrides)?;
            let trace = engine::run(&s)?;
            let path = out.unwrap_or_else(|| {
                let stem = scenario.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                out_dir().join(format!("{stem}.trace"))
            });
            let mut w = create(&path)?;
            w.write_all(trace.to_text().as_bytes())?;
            w.flush()?;
            let status = match trace.stop_instant() {
                Some(at) => format!("stopped at={at}"),
                None => "budget_exhausted".to_string(),
            };
            println!(
                "status={status} instants={} multiplicity_points={} trace={}",
                trace.records.len(),
                trace.final_configuration().multiplicity_points().len(),
                path.display()
            );
            Ok(true)
        }
        Command::Verify {
            suite,
            trials,
            seed,
            out,
        } => {
            let suite: Suite = suite.parse().map_err(|e: String| Usage(e))?;
            let report = run_suite(suite, trials, seed)?;
            println!("{report}");
            if let Some(path) = out {
                let mut w = create(&path)?;
                writeln!(w, "scatter verify report v1\n{report}")?;
                w.flush()?;
            }
            Ok(report.passed())
        }
        Command::Replay { trace } => {
            let t = read_trace(&trace)?;
            match engine::replay(&t)? {
                ReplayVerdict::Identical => {
                    println!("identical");
                    Ok(true)
                }
                ReplayVerdict::Diverged { instant, detail } => {
                    println!("diverged at instant {instant}: {detail}");
                    Ok(false)
                }
            }
        }
        Command::Export { traces, format, out } => {
            let loaded = traces
                .iter()
                .map(|p| read_trace(p).map(|t| (p.display().to_string(), t)))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let sink: Box<dyn Write> = match &out {
                Some(p) => Box::new(create(p)?),
                None => Box::new(BufWriter::new(io::stdout().lock())),
            };
            match format {
                ExportFormat::CsvPositions => {
                    if loaded.len() != 1 {
                        return Err(Usage("csv-positions takes exactly one trace".into()).into());
                    }
                    write_positions(&loaded[0].1, sink)?;
                }
                ExportFormat::CsvSummary => {
                    write_summary(loaded.iter().map(|(s, t)| (s.as_str(), t)), sink)?;
                }
            }
            Ok(true)
        }
        Command::Campaign {
            spec,
            trials,
            seed,
            scheduler,
            max_steps,
            out,
        } => {
            let result = run_campaign(
                &spec,
                &CampaignOverrides {
                    seed,
                    trials,
                    scheduler,
                    max_steps,
                },
            )?;
            let dir = out.unwrap_or_else(out_dir);
            let mut csv = create(&dir.join("campaign.csv"))?;
            result.write_csv(&mut csv)?;
            csv.flush()?;
            let report = result.report();
            let mut w = create(&dir.join("report.txt"))?;
            w.write_all(report.as_bytes())?;
            w.flush()?;
            print!("{report}");
            Ok(true)
        }
    }
}

/// A command-line misuse detected after argument parsing.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            if e.is::<Usage>() {
                eprintln!("usage error: {e}");
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(2)
        }
    }
}

//! Seeded campaigns over a base scenario.
//!
//! ```toml
//! version = 1
//! scenario = "gather.toml"     # relative to this file
//! seed = 1000                  # first trial seed; trial k uses seed + k
//! trials = 200                 # per sweep cell
//!
//! [sweep]                      # optional; every combination is run
//! n = [3, 4, 5]
//! scheduler = ["bounded_delay:4", "bernoulli:0.5"]
//! sigma = [0.5, 1.0]
//! ```
//!
//! A trial succeeds when the base scenario's stop rule holds within its
//! step budget. Outputs:
//!
//! * `campaign.csv`: `# scatter-campaign v1`, then
//!   `trial,seed,n,scheduler,sigma,status,instants,stop_instant,multiplicity_points`.
//! * `report.txt`: `scatter campaign report v1`, then one line per cell with
//!   the success count, a Wilson 95% interval and the mean/max stop instant.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rayon::prelude::*;
use serde::Deserialize;

use scatter_core::analysis::{wilson_interval, Z_95};
use scatter_core::engine;
use scatter_core::StopRule;

use crate::scenario_file::{Overrides, ScenarioFile, Sigma};

pub const CAMPAIGN_VERSION: u32 = 1;
pub const CSV_HEADER: &str = "# scatter-campaign v1";
pub const REPORT_HEADER: &str = "scatter campaign report v1";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignFile {
    pub version: u32,
    pub scenario: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: u64,
    #[serde(default)]
    pub sweep: Sweep,
}

fn default_trials() -> u64 {
    100
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub n: Option<Vec<usize>>,
    pub scheduler: Option<Vec<String>>,
    pub sigma: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default)]
pub struct CampaignOverrides {
    pub seed: Option<u64>,
    pub trials: Option<u64>,
    pub scheduler: Option<String>,
    pub max_steps: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub n: usize,
    pub scheduler: String,
    pub sigma: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub trial: u64,
    pub seed: u64,
    pub cell: usize,
    pub stop_instant: Option<u64>,
    pub instants: usize,
    pub multiplicity_points: usize,
}

#[derive(Debug, Clone)]
pub struct CampaignResult {
    pub cells: Vec<Cell>,
    pub rows: Vec<TrialRow>,
    pub trials_per_cell: u64,
}

struct Prepared {
    cell: Cell,
    file: ScenarioFile,
}

/// Loads the campaign and its base scenario and runs every trial. Seeds are
/// `seed + k` for the global trial index `k`, so no two trials share one.
pub fn run_campaign(path: &Path, o: &CampaignOverrides) -> anyhow::Result<CampaignResult> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read campaign {}", path.display()))?;
    let spec: CampaignFile = toml::from_str(&text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1);
        match line {
            Some(l) => anyhow::anyhow!("{}:{l}: {}", path.display(), e.message().trim()),
            None => anyhow::anyhow!("{}: {}", path.display(), e.message().trim()),
        }
    })?;
    if spec.version != CAMPAIGN_VERSION {
        bail!(
            "{}: unsupported campaign version {} (this build reads {CAMPAIGN_VERSION})",
            path.display(),
            spec.version
        );
    }
    let base_path = path.parent().unwrap_or(Path::new(".")).join(&spec.scenario);
    let source = std::fs::read_to_string(&base_path)
        .with_context(|| format!("cannot read scenario {}", base_path.display()))?;
    let mut base = ScenarioFile::parse(&source).map_err(|d| anyhow::anyhow!(d.render(&base_path)))?;
    base.apply(&Overrides {
        seed: None,
        scheduler: o.scheduler.clone(),
        max_steps: o.max_steps,
    });
    if base.stop_rule == StopRule::None {
        bail!("{}: a campaign needs a stop_rule to measure", base_path.display());
    }
    let trials = o.trials.unwrap_or(spec.trials);
    if trials == 0 {
        bail!("trials must be at least 1");
    }
    let first_seed = o.seed.unwrap_or(spec.seed);

    let ns: Vec<Option<usize>> = match &spec.sweep.n {
        Some(v) => v.iter().map(|&n| Some(n)).collect(),
        None => vec![None],
    };
    let scheds: Vec<Option<String>> = match (&o.scheduler, &spec.sweep.scheduler) {
        (None, Some(v)) => v.iter().cloned().map(Some).collect(),
        _ => vec![None],
    };
    let sigmas: Vec<Option<f64>> = match &spec.sweep.sigma {
        Some(v) => v.iter().map(|&s| Some(s)).collect(),
        None => vec![None],
    };
    let mut prepared = Vec::new();
    for n in &ns {
        for sched in &scheds {
            for sigma in &sigmas {
                let mut f = base.clone();
                if let Some(n) = n {
                    if f.robots.positions.is_some() {
                        bail!("sweeping n needs a base scenario without explicit positions");
                    }
                    f.robots.count = Some(*n);
                }
                if let Some(s) = sched {
                    f.scheduler = s.clone();
                }
                if let Some(s) = sigma {
                    f.robots.sigma = Sigma::Uniform(*s);
                }
                // Surface configuration errors once, before any trial runs.
                let probe = f.to_scenario(&source).map_err(|d| {
                    anyhow::anyhow!("{} (cell n={n:?} scheduler={sched:?} sigma={sigma:?})", d.render(&base_path))
                })?;
                prepared.push(Prepared {
                    cell: Cell {
                        n: probe.n(),
                        scheduler: probe.scheduler.to_string(),
                        sigma: f.robots.sigma.to_string(),
                    },
                    file: f,
                });
            }
        }
    }

    let total = trials * prepared.len() as u64;
    let rows = (0..total)
        .into_par_iter()
        .map(|k| {
            let cell = (k / trials) as usize;
            let seed = first_seed.wrapping_add(k);
            let mut f = prepared[cell].file.clone();
            f.seed = seed;
            let scenario = f.to_scenario(&source).map_err(|d| anyhow::anyhow!(d.render(&base_path)))?;
            let trace = engine::run(&scenario)?;
            Ok(TrialRow {
                trial: k,
                seed,
                cell,
                stop_instant: trace.stop_instant(),
                instants: trace.records.len(),
                multiplicity_points: trace.final_configuration().multiplicity_points().len(),
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(CampaignResult {
        cells: prepared.into_iter().map(|p| p.cell).collect(),
        rows,
        trials_per_cell: trials,
    })
}

impl CampaignResult {
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut out = out;
        writeln!(out, "{CSV_HEADER}")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "trial",
            "seed",
            "n",
            "scheduler",
            "sigma",
            "status",
            "instants",
            "stop_instant",
            "multiplicity_points",
        ])?;
        for r in &self.rows {
            let c = &self.cells[r.cell];
            w.write_record([
                r.trial.to_string(),
                r.seed.to_string(),
                c.n.to_string(),
                c.scheduler.clone(),
                c.sigma.clone(),
                if r.stop_instant.is_some() { "stopped" } else { "budget_exhausted" }.to_string(),
                r.instants.to_string(),
                r.stop_instant.map(|s| s.to_string()).unwrap_or_default(),
                r.multiplicity_points.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn report(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{REPORT_HEADER}").unwrap();
        for (i, c) in self.cells.iter().enumerate() {
            let rows: Vec<&TrialRow> = self.rows.iter().filter(|r| r.cell == i).collect();
            let done: Vec<u64> = rows.iter().filter_map(|r| r.stop_instant).collect();
            let (lo, hi) = wilson_interval(done.len() as u64, rows.len() as u64, Z_95);
            write!(
                out,
                "n={} scheduler={} sigma={}: {}/{} stopped (Wilson 95% {lo:.3}..{hi:.3})",
                c.n,
                c.scheduler,
                c.sigma,
                done.len(),
                rows.len()
            )
            .unwrap();
            if !done.is_empty() {
                let mean = done.iter().sum::<u64>() as f64 / done.len() as f64;
                write!(out, ", mean {mean:.2}, max {} instants", done.iter().max().unwrap()).unwrap();
            }
            if done.len() == rows.len() {
                write!(out, "; consistent with probability 1").unwrap();
            }
            writeln!(out).unwrap();
        }
        out
    }

    pub fn all_stopped(&self) -> bool {
        self.rows.iter().all(|r| r.stop_instant.is_some())
    }
}

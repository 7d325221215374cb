//! Named verification campaigns. Each produces one [`CriterionResult`] per
//! checked property, with the measured value and the tolerance applied.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand_core::SeedableRng;
use serde::Serialize;

use super::*;
use crate::engine::{Trace, TraceStatus};
use crate::protocols::{DeterministicStub, Scatter, StubKind};
use crate::scheduler::{audit_fairness, SchedulerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Closure,
    Separation,
    Decay,
    Impossibility,
    Gather,
    Pattern,
    Fairness,
    VoronoiOracle,
}

impl Suite {
    pub const ALL: [Suite; 8] = [
        Suite::Closure,
        Suite::Separation,
        Suite::Decay,
        Suite::Impossibility,
        Suite::Gather,
        Suite::Pattern,
        Suite::Fairness,
        Suite::VoronoiOracle,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Closure => "closure",
            Suite::Separation => "separation",
            Suite::Decay => "decay",
            Suite::Impossibility => "impossibility",
            Suite::Gather => "gather",
            Suite::Pattern => "pattern",
            Suite::Fairness => "fairness",
            Suite::VoronoiOracle => "voronoi-oracle",
        }
    }

    /// Trial count used when none is given.
    pub fn default_trials(&self) -> u64 {
        match self {
            Suite::Closure => 1_000,
            Suite::Separation | Suite::Decay => 100_000,
            Suite::Impossibility => 100,
            Suite::Gather => 1_000,
            Suite::Pattern => 500,
            Suite::Fairness => 100,
            Suite::VoronoiOracle => 10_000,
        }
    }
}

impl FromStr for Suite {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Suite::ALL.iter().map(|s| s.name()).collect();
                format!("unknown suite `{s}` (expected one of: {})", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionResult {
    pub name: String,
    pub measured: String,
    pub tolerance: String,
    pub passed: bool,
}

impl CriterionResult {
    pub fn new(name: impl Into<String>, measured: impl Into<String>, tolerance: impl Into<String>, passed: bool) -> Self {
        CriterionResult {
            name: name.into(),
            measured: measured.into(),
            tolerance: tolerance.into(),
            passed,
        }
    }
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}: {} (required: {})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub trials: u64,
    pub seed: u64,
    pub criteria: Vec<CriterionResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "suite {} (trials {}, seed {})", self.suite, self.trials, self.seed)?;
        for c in &self.criteria {
            writeln!(f, "{c}")?;
        }
        write!(f, "{}", if self.passed() { "suite PASSED" } else { "suite FAILED" })
    }
}

/// The scheduler kinds exercised by the mixed campaigns.
pub fn scheduler_mix() -> [SchedulerKind; 5] {
    [
        SchedulerKind::FullSynchronous,
        SchedulerKind::Bernoulli { p: 0.5 },
        SchedulerKind::Bernoulli { p: 0.2 },
        SchedulerKind::RoundRobin { window: 1 },
        SchedulerKind::BoundedDelay { delay: 4 },
    ]
}

pub fn run_suite(suite: Suite, trials: Option<u64>, seed: u64) -> Result<SuiteReport, AnalysisError> {
    let trials = trials.unwrap_or_else(|| suite.default_trials()).max(1);
    let criteria = match suite {
        Suite::Closure => closure_suite(trials, seed)?,
        Suite::Separation => separation_suite(trials, seed)?,
        Suite::Decay => decay_suite(trials, seed)?,
        Suite::Impossibility => impossibility_suite(trials)?,
        Suite::Gather => gather_suite(trials, seed)?,
        Suite::Pattern => pattern_suite(trials, seed)?,
        Suite::Fairness => fairness_suite(trials, seed)?,
        Suite::VoronoiOracle => oracle_suite(trials, seed),
    };
    Ok(SuiteReport {
        suite: suite.name().to_string(),
        trials,
        seed,
        criteria,
    })
}

/// Scatter from a configuration with duplicates, `n` in `2..=8`, random
/// frames, scheduler cycling through [`scheduler_mix`].
pub fn closure_scenario(seed: u64, trial: u64, max_steps: u64) -> Scenario {
    let mix = scheduler_mix();
    let s = trial_seed(seed, trial);
    let mut rng = SimRng::seed_from_u64(s);
    let n = 2 + rng::below(&mut rng, 7) as usize;
    let positions = random_positions_with_duplicates(n, 5.0, &mut rng);
    Scenario::new(positions, ProtocolSpec::Scatter, mix[(trial % mix.len() as u64) as usize])
        .with_seed(s)
        .with_max_steps(max_steps)
        .with_sigma(0.5)
        .with_random_frames(5.0)
}

fn closure_suite(trials: u64, seed: u64) -> Result<Vec<CriterionResult>, AnalysisError> {
    let results: Vec<(ClosureVerdict, bool, bool)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let trace = engine::run(&closure_scenario(seed, i, 200))?;
            let reached = trace.configurations().any(|c| c.all_distinct());
            let stats = ConvergenceStats::from_traces([&trace], (0, 1));
            let k = stats.steps_to_all_distinct[0].unwrap_or(trace.records.len() as u64);
            Ok((check_closure(&trace), reached, stats.elapsed(0) == k))
        })
        .collect::<Result<_, EngineError>>()?;
    let violations = results.iter().filter(|r| !r.0.passed()).count();
    let reached = results.iter().filter(|r| r.1).count();
    let balanced = results.iter().filter(|r| r.2).count();
    Ok(vec![
        CriterionResult::new(
            "closure: no multiplicity after first all-distinct instant",
            format!("{violations} violations in {trials} runs x 200 instants"),
            "0 violations",
            violations == 0,
        ),
        CriterionResult::new(
            "convergence: runs reaching all-distinct within budget",
            format!("{reached}/{trials} (consistent with probability 1)"),
            "all runs",
            reached as u64 == trials,
        ),
        CriterionResult::new(
            "pair bookkeeping a + na = k",
            format!("{balanced}/{trials} runs"),
            "every run",
            balanced as u64 == trials,
        ),
    ])
}

fn separation_suite(trials: u64, seed: u64) -> Result<Vec<CriterionResult>, AnalysisError> {
    let mut out = Vec::new();
    let fsync = estimate_pair_separation(SchedulerKind::FullSynchronous, trials, seed)?;
    out.push(CriterionResult::new(
        "full_synchronous separation rate",
        format!("{:.4} (95% CI {:.4}..{:.4}, {} trials)", fsync.rate, fsync.ci_low, fsync.ci_high, fsync.trials),
        "0.75 +/- 0.01",
        (fsync.rate - 0.75).abs() <= 0.01,
    ));
    let single = estimate_pair_separation(SchedulerKind::RoundRobin { window: 1 }, trials, seed)?;
    out.push(CriterionResult::new(
        "singleton activation separation rate",
        format!("{:.4} ({} trials)", single.rate, single.trials),
        "0.50 +/- 0.01",
        (single.rate - 0.5).abs() <= 0.01,
    ));
    let mut tally = fsync.tally.merge(single.tally);
    for kind in scheduler_mix() {
        let est = if kind == SchedulerKind::FullSynchronous {
            fsync.clone()
        } else if kind == (SchedulerKind::RoundRobin { window: 1 }) {
            single.clone()
        } else {
            let e = estimate_pair_separation(kind, trials, seed)?;
            tally = tally.merge(e.tally);
            e
        };
        let bound = 0.75 + 3.0 * proportion_se(0.75, est.trials);
        out.push(CriterionResult::new(
            format!("{kind} persistence per active instant"),
            format!("{:.4}", est.persistence()),
            format!("<= 3/4 + 3 SE = {bound:.4}"),
            est.persistence() <= bound,
        ));
    }
    let single_n = tally.single_active();
    let stay_rate = tally.one_active_stayed as f64 / single_n.max(1) as f64;
    let stay_bound = 0.5 + 3.0 * proportion_se(stay_rate, single_n);
    out.push(CriterionResult::new(
        "lone active robot stays (Pr[Y=0|X=1])",
        format!("{stay_rate:.4} over {single_n} instants"),
        format!("<= 1/2 + 3 SE = {stay_bound:.4}"),
        stay_rate <= stay_bound,
    ));
    out.push(CriterionResult::new(
        "event tallies partition the classified instants",
        format!("{} events over {} classified instants", tally.total(), tally.active_instants() + tally.both_inactive),
        "equal",
        tally.total() == tally.single_active() + tally.both_active() + tally.both_inactive,
    ));
    let total = tally.active_instants();
    let both_rate = tally.both_moved() as f64 / total.max(1) as f64;
    let both_bound = 0.25 + 3.0 * proportion_se(both_rate, total);
    out.push(CriterionResult::new(
        "both robots move (Pr[X=2, Y=2])",
        format!("{both_rate:.4} over {total} instants"),
        format!("<= 1/4 + 3 SE = {both_bound:.4}"),
        both_rate <= both_bound,
    ));
    out.push(CriterionResult::new(
        "both robots move to the same point",
        format!("{} of {} both-move instants", tally.both_moved_together, tally.both_moved()),
        "0 (continuous sampling)",
        tally.both_moved_together == 0,
    ));
    Ok(out)
}

fn decay_suite(trials: u64, seed: u64) -> Result<Vec<CriterionResult>, AnalysisError> {
    let mut out = Vec::new();
    for kind in [SchedulerKind::FullSynchronous, SchedulerKind::Bernoulli { p: 0.5 }] {
        let runs = simulate_pairs(kind, trials, seed, 15)?;
        let verdict = verify_decay_bound(&runs, 15);
        for row in &verdict.rows {
            out.push(CriterionResult::new(
                format!("{kind} survival after a={} active instants", row.active_instants),
                format!("{:.6} ({} trials)", row.fraction, row.trials),
                format!("<= (3/4)^a + 3 SE = {:.6}", row.bound + 3.0 * row.standard_error),
                row.passed,
            ));
        }
    }
    Ok(out)
}

fn impossibility_suite(steps: u64) -> Result<Vec<CriterionResult>, AnalysisError> {
    let mut out = Vec::new();
    for kind in StubKind::ALL {
        let report = impossibility_demo(&DeterministicStub(kind), 5, steps, Capabilities::ALL)?;
        out.push(CriterionResult::new(
            format!("coin-free `{}` stays co-located", kind.name()),
            format!("{}/{} steps co-located", report.colocated_instants, report.steps),
            "every step",
            report.demonstrated(),
        ));
    }
    let rejected = matches!(
        impossibility_demo(&Scatter, 5, steps, Capabilities::NONE),
        Err(AnalysisError::NotDeterministic { .. })
    );
    out.push(CriterionResult::new(
        "randomized scatter rejected as non-deterministic input",
        if rejected { "rejected" } else { "accepted" },
        "rejected",
        rejected,
    ));
    Ok(out)
}

/// Two robots at distance 1 running `pair_gather`, `sigma = 1`.
pub fn pair_gather_scenario(seed: u64) -> Scenario {
    Scenario::new(
        vec![Point::new(0.0, 0.0), Point::new(0.6, 0.8)],
        ProtocolSpec::PairGather,
        SchedulerKind::FullSynchronous,
    )
    .with_seed(seed)
    .with_max_steps(10_000)
    .with_stop_rule(StopRule::Gathered)
    .with_random_frames(3.0)
}

/// `ssa_gp` from a random configuration with duplicates.
pub fn ssa_gp_scenario(n: usize, seed: u64, scheduler: SchedulerKind) -> Scenario {
    let mut rng = SimRng::seed_from_u64(seed ^ 0x5eed_0f9a7);
    let positions = random_positions_with_duplicates(n, 10.0, &mut rng);
    Scenario::new(positions, ProtocolSpec::SsaGp, scheduler)
        .with_seed(seed)
        .with_max_steps(10_000)
        .with_capabilities(Capabilities::ALL)
        .with_stop_rule(StopRule::Gathered)
}

/// The fixed pattern used by the pattern-formation campaigns (first `n`
/// points).
pub fn reference_pattern(n: usize) -> Vec<Point> {
    const PATTERN: [(f64, f64); 8] = [
        (0.0, 0.0),
        (4.0, 0.0),
        (2.0, 3.0),
        (6.0, 3.0),
        (1.0, 6.0),
        (5.0, 6.0),
        (3.0, 9.0),
        (7.0, 9.0),
    ];
    assert!(n <= PATTERN.len());
    PATTERN[..n].iter().map(|&(x, y)| Point::new(x, y)).collect()
}

/// `ssa_pf` toward [`reference_pattern`] from a configuration with
/// duplicates.
pub fn ssa_pf_scenario(n: usize, seed: u64, scheduler: SchedulerKind) -> Scenario {
    let mut rng = SimRng::seed_from_u64(seed ^ 0x9a7_7e2);
    let positions = random_positions_with_duplicates(n, 10.0, &mut rng);
    Scenario::new(
        positions,
        ProtocolSpec::SsaPf {
            pattern: reference_pattern(n),
        },
        scheduler,
    )
    .with_seed(seed)
    .with_max_steps(10_000)
    .with_capabilities(Capabilities::ALL)
    .with_stop_rule(StopRule::PatternReached)
}

fn gather_suite(trials: u64, seed: u64) -> Result<Vec<CriterionResult>, AnalysisError> {
    let mut out = Vec::new();
    let pair_trials = trials.max(10_000);
    let pairs: Vec<Scenario> = (0..pair_trials).map(|i| pair_gather_scenario(trial_seed(seed, i))).collect();
    let summary = gather_stats(&pairs)?;
    let instants: u64 = summary.trials.iter().map(|t| t.steps.unwrap_or(t.instants_run)).sum();
    let meet_rate = summary.successes() as f64 / instants.max(1) as f64;
    let mean = summary.mean_steps().unwrap_or(f64::NAN);
    out.push(CriterionResult::new(
        "n=2 per-instant meet probability",
        format!("{meet_rate:.4} over {instants} instants"),
        "0.50 +/- 0.01",
        (meet_rate - 0.5).abs() <= 0.01,
    ));
    out.push(CriterionResult::new(
        "n=2 mean steps to gather",
        format!("{mean:.3} over {pair_trials} trials"),
        "2.0 +/- 0.1",
        (mean - 2.0).abs() <= 0.1,
    ));
    let sched = SchedulerKind::BoundedDelay { delay: 4 };
    for n in 3..=8 {
        let batch: Vec<Scenario> = (0..trials)
            .map(|i| ssa_gp_scenario(n, trial_seed(seed, i), sched))
            .collect();
        let s = gather_stats(&batch)?;
        out.push(CriterionResult::new(
            format!("ssa_gp n={n} gathered within 10^4 instants"),
            format!(
                "{}/{} (mean {:.1}, max {}; consistent with probability 1)",
                s.successes(),
                s.trials.len(),
                s.mean_steps().unwrap_or(f64::NAN),
                s.max_steps().unwrap_or(0)
            ),
            "100%",
            s.successes() == s.trials.len(),
        ));
    }
    Ok(out)
}

fn pattern_suite(trials: u64, seed: u64) -> Result<Vec<CriterionResult>, AnalysisError> {
    let sched = SchedulerKind::BoundedDelay { delay: 4 };
    let mut out = Vec::new();
    for n in 3..=6 {
        let batch: Vec<Scenario> = (0..trials)
            .map(|i| ssa_pf_scenario(n, trial_seed(seed, i), sched))
            .collect();
        let s = pattern_stats(&batch)?;
        out.push(CriterionResult::new(
            format!("ssa_pf n={n} pattern reached exactly within 10^4 instants"),
            format!(
                "{}/{} (mean {:.1}, max {})",
                s.successes(),
                s.trials.len(),
                s.mean_steps().unwrap_or(f64::NAN),
                s.max_steps().unwrap_or(0)
            ),
            "100%",
            s.successes() == s.trials.len(),
        ));
    }
    Ok(out)
}

/// A trace over three robots in which robot 2 is never activated.
pub fn starved_trace(instants: u64) -> Trace {
    let scenario = Scenario::new(
        vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(2.0, 0.0)],
        ProtocolSpec::Stub { stub: StubKind::Stay },
        SchedulerKind::RoundRobin { window: 1 },
    )
    .with_max_steps(instants);
    let records = (0..instants)
        .map(|t| StepRecord {
            t,
            activation: ActivationSet::new(vec![(t % 2) as usize]),
            coins: vec![None],
            targets: vec![scenario.initial.positions[(t % 2) as usize]],
            positions: scenario.initial.clone(),
        })
        .collect();
    Trace {
        digest: scenario.digest(),
        seed: scenario.seed,
        scenario,
        records,
        status: TraceStatus::BudgetExhausted,
    }
}

fn fairness_suite(trials: u64, seed: u64) -> Result<Vec<CriterionResult>, AnalysisError> {
    let delay = 4;
    let verdicts: Vec<_> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let s = Scenario::new(
                vec![Point::ORIGIN; 5],
                ProtocolSpec::Scatter,
                SchedulerKind::BoundedDelay { delay },
            )
            .with_seed(trial_seed(seed, i))
            .with_max_steps(1_000);
            engine::run(&s).map(|t| audit_fairness(&t, delay))
        })
        .collect::<Result<_, EngineError>>()?;
    let passed = verdicts.iter().filter(|v| v.passed()).count();
    let worst = verdicts.iter().map(|v| v.max_gap()).max().unwrap_or(0);
    let starved = audit_fairness(&starved_trace(50), 10);
    let caught = matches!(starved, crate::scheduler::FairnessVerdict::Fail { culprit: 2, .. });
    Ok(vec![
        CriterionResult::new(
            format!("bounded_delay:{delay} traces pass window {delay}"),
            format!("{passed}/{trials} (worst idle gap {worst})"),
            "all seeds",
            passed as u64 == trials,
        ),
        CriterionResult::new(
            "starved robot detected",
            format!("{starved:?}"),
            "fail with culprit robot 2",
            caught,
        ),
    ])
}

fn oracle_suite(queries: u64, seed: u64) -> Vec<CriterionResult> {
    let start = Instant::now();
    let r = voronoi_oracle_check(queries, seed, 1e-9);
    let secs = start.elapsed().as_secs_f64();
    vec![
        CriterionResult::new(
            "cell membership equals nearest-site oracle",
            format!("{} mismatches in {} queries ({} within 1e-9 of a bisector excluded)", r.mismatches, r.queries, r.excluded),
            "0 mismatches",
            r.mismatches == 0,
        ),
        CriterionResult::new("oracle runtime", format!("{secs:.3} s"), "< 5 s", secs < 5.0),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("bogus".parse::<Suite>().is_err());
    }

    #[test]
    fn small_suites_pass() {
        for (suite, trials) in [
            (Suite::Impossibility, 100),
            (Suite::Fairness, 10),
            (Suite::VoronoiOracle, 1_000),
            (Suite::Closure, 40),
        ] {
            let r = run_suite(suite, Some(trials), 7).unwrap();
            assert!(r.passed(), "{r}");
        }
    }
}

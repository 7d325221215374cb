//! Property checkers and estimators that hold simulation output against the
//! closure and convergence properties of the scatter procedure, its
//! probability bounds, and the impossibility of a deterministic solution.
//!
//! Probability-one statements are checked as bounded-budget campaigns with
//! no observed failure. Reports say "consistent with probability 1", never
//! "proved".

pub mod suites;

use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::engine::{self, matches_pattern, EngineError, Scenario, StepRecord, StopRule, Trace};
use crate::geometry::{distance, Point};
use crate::protocols::{Protocol, ProtocolError, ProtocolSpec};
use crate::rng::{self, CountingRng, SimRng};
use crate::scheduler::{ActivationSet, SchedulerKind};
use crate::world::{Capabilities, Configuration, Robot};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("protocol is not deterministic: it drew {draws} random words by instant {instant}")]
    NotDeterministic { draws: u64, instant: u64 },
    #[error("protocol failed: {0}")]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Seed of trial `i` in a campaign rooted at `base`. Seeds of one campaign
/// are pairwise distinct.
pub fn trial_seed(base: u64, i: u64) -> u64 {
    base.wrapping_add(i)
}

/// Wilson score interval for `successes` out of `trials`.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Standard error of a proportion.
pub fn proportion_se(p: f64, trials: u64) -> f64 {
    if trials == 0 {
        return 0.0;
    }
    (p * (1.0 - p) / trials as f64).sqrt()
}

// ---------------------------------------------------------------------------
// Closure

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClosureVerdict {
    /// No strict multiplicity after the first all-distinct instant (if any).
    Pass { first_distinct: Option<u64> },
    Fail { first_distinct: u64, violation: u64 },
}

impl ClosureVerdict {
    pub fn passed(&self) -> bool {
        matches!(self, ClosureVerdict::Pass { .. })
    }
}

/// Instants are numbered over `P(t_0), P(t_1), ...`, the initial
/// configuration being instant 0.
pub fn check_closure(trace: &Trace) -> ClosureVerdict {
    check_closure_configs(trace.configurations())
}

pub fn check_closure_configs<'a>(configs: impl IntoIterator<Item = &'a Configuration>) -> ClosureVerdict {
    let mut first_distinct = None;
    for (t, c) in configs.into_iter().enumerate() {
        let distinct = c.all_distinct();
        match first_distinct {
            None if distinct => first_distinct = Some(t as u64),
            Some(first) if !distinct => {
                return ClosureVerdict::Fail {
                    first_distinct: first,
                    violation: t as u64,
                }
            }
            _ => {}
        }
    }
    ClosureVerdict::Pass { first_distinct }
}

// ---------------------------------------------------------------------------
// Pair events

/// What one instant does to a co-located pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PairEvent {
    /// Neither robot active (Event 1).
    BothInactive,
    /// Exactly one active, and it stays (Event 2).
    OneActiveStayed,
    /// Exactly one active, and it moves: separation.
    OneActiveMoved,
    /// Both active, neither moves.
    BothActiveStayed,
    /// Both active, exactly one moves: separation.
    BothActiveOneMoved,
    /// Both move to the same point (Event 3).
    BothMovedTogether,
    /// Both move, to different points: separation.
    BothMovedApart,
}

impl PairEvent {
    pub const ALL: [PairEvent; 7] = [
        PairEvent::BothInactive,
        PairEvent::OneActiveStayed,
        PairEvent::OneActiveMoved,
        PairEvent::BothActiveStayed,
        PairEvent::BothActiveOneMoved,
        PairEvent::BothMovedTogether,
        PairEvent::BothMovedApart,
    ];

    pub fn separates(&self) -> bool {
        matches!(
            self,
            PairEvent::OneActiveMoved | PairEvent::BothActiveOneMoved | PairEvent::BothMovedApart
        )
    }

    pub fn active(&self) -> usize {
        match self {
            PairEvent::BothInactive => 0,
            PairEvent::OneActiveStayed | PairEvent::OneActiveMoved => 1,
            _ => 2,
        }
    }

    pub fn moved(&self) -> usize {
        match self {
            PairEvent::BothInactive | PairEvent::OneActiveStayed | PairEvent::BothActiveStayed => 0,
            PairEvent::OneActiveMoved | PairEvent::BothActiveOneMoved => 1,
            PairEvent::BothMovedTogether | PairEvent::BothMovedApart => 2,
        }
    }
}

/// Classifies the step `before -> record.positions` for robots `pair`, which
/// must share a position in `before`.
pub fn classify_pair_instant(before: &Configuration, record: &StepRecord, pair: (usize, usize)) -> PairEvent {
    let (i, j) = pair;
    debug_assert_eq!(before.positions[i], before.positions[j]);
    let after = &record.positions;
    let active_i = record.activation.contains(i);
    let active_j = record.activation.contains(j);
    let moved_i = after.positions[i] != before.positions[i];
    let moved_j = after.positions[j] != before.positions[j];
    match (active_i, active_j) {
        (false, false) => PairEvent::BothInactive,
        (true, false) | (false, true) => {
            if moved_i || moved_j {
                PairEvent::OneActiveMoved
            } else {
                PairEvent::OneActiveStayed
            }
        }
        (true, true) => match (moved_i, moved_j) {
            (false, false) => PairEvent::BothActiveStayed,
            (true, true) if after.positions[i] == after.positions[j] => PairEvent::BothMovedTogether,
            (true, true) => PairEvent::BothMovedApart,
            _ => PairEvent::BothActiveOneMoved,
        },
    }
}

/// Counts of [`PairEvent`]s; every classified instant lands in exactly one
/// field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct PairEventTally {
    pub both_inactive: u64,
    pub one_active_stayed: u64,
    pub one_active_moved: u64,
    pub both_active_stayed: u64,
    pub both_active_one_moved: u64,
    pub both_moved_together: u64,
    pub both_moved_apart: u64,
}

impl PairEventTally {
    pub fn add(&mut self, e: PairEvent) {
        *self.slot(e) += 1;
    }

    fn slot(&mut self, e: PairEvent) -> &mut u64 {
        match e {
            PairEvent::BothInactive => &mut self.both_inactive,
            PairEvent::OneActiveStayed => &mut self.one_active_stayed,
            PairEvent::OneActiveMoved => &mut self.one_active_moved,
            PairEvent::BothActiveStayed => &mut self.both_active_stayed,
            PairEvent::BothActiveOneMoved => &mut self.both_active_one_moved,
            PairEvent::BothMovedTogether => &mut self.both_moved_together,
            PairEvent::BothMovedApart => &mut self.both_moved_apart,
        }
    }

    pub fn get(&self, e: PairEvent) -> u64 {
        let mut copy = *self;
        *copy.slot(e)
    }

    pub fn merge(mut self, other: PairEventTally) -> PairEventTally {
        for e in PairEvent::ALL {
            *self.slot(e) += other.get(e);
        }
        self
    }

    pub fn total(&self) -> u64 {
        PairEvent::ALL.iter().map(|&e| self.get(e)).sum()
    }

    pub fn separated(&self) -> u64 {
        PairEvent::ALL.iter().filter(|e| e.separates()).map(|&e| self.get(e)).sum()
    }

    /// Instants where at least one of the pair was active.
    pub fn active_instants(&self) -> u64 {
        self.total() - self.both_inactive
    }

    pub fn single_active(&self) -> u64 {
        self.one_active_stayed + self.one_active_moved
    }

    pub fn both_active(&self) -> u64 {
        self.both_active_stayed + self.both_active_one_moved + self.both_moved_together + self.both_moved_apart
    }

    pub fn both_moved(&self) -> u64 {
        self.both_moved_together + self.both_moved_apart
    }
}

/// Per-trial bookkeeping of a tracked pair up to the first all-distinct
/// instant: `k` elapsed instants, `a` with at least one of the pair active,
/// `na` with both inactive, so `a + na = k`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ConvergenceStats {
    pub trials: usize,
    /// `None` when the trace never became all-distinct.
    pub steps_to_all_distinct: Vec<Option<u64>>,
    pub active_pair_instants: Vec<u64>,
    pub inactive_pair_instants: Vec<u64>,
}

impl ConvergenceStats {
    pub fn from_traces<'a>(traces: impl IntoIterator<Item = &'a Trace>, pair: (usize, usize)) -> Self {
        let mut s = ConvergenceStats::default();
        for trace in traces {
            let configs: Vec<&Configuration> = trace.configurations().collect();
            let k = configs.iter().position(|c| c.all_distinct());
            let elapsed = k.unwrap_or(trace.records.len());
            let a = trace.records[..elapsed]
                .iter()
                .filter(|r| r.activation.contains(pair.0) || r.activation.contains(pair.1))
                .count() as u64;
            s.trials += 1;
            s.steps_to_all_distinct.push(k.map(|k| k as u64));
            s.active_pair_instants.push(a);
            s.inactive_pair_instants.push(elapsed as u64 - a);
        }
        s
    }

    /// Elapsed instants per trial (`k`, or the trace length if never
    /// distinct).
    pub fn elapsed(&self, trial: usize) -> u64 {
        self.active_pair_instants[trial] + self.inactive_pair_instants[trial]
    }
}

/// History of one co-located pair until separation or an activation cap.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairRun {
    pub seed: u64,
    pub events: Vec<PairEvent>,
}

impl PairRun {
    pub fn separated(&self) -> bool {
        self.events.last().is_some_and(|e| e.separates())
    }

    /// Active instants elapsed before separation, or `None` if the run
    /// ended still co-located.
    pub fn active_instants_to_separation(&self) -> Option<usize> {
        self.separated()
            .then(|| self.events.iter().filter(|e| e.active() > 0).count())
    }

    /// Whether the pair was still co-located after `a` active instants.
    /// `None` if the run stopped before reaching `a` active instants.
    pub fn colocated_after(&self, a: usize) -> Option<bool> {
        if a == 0 {
            return Some(true);
        }
        let mut seen = 0;
        for e in &self.events {
            if e.active() > 0 {
                seen += 1;
            }
            if e.separates() {
                return Some(seen > a);
            }
            if seen == a {
                return Some(true);
            }
        }
        None
    }

    pub fn tally(&self) -> PairEventTally {
        self.events.iter().fold(PairEventTally::default(), |mut t, &e| {
            t.add(e);
            t
        })
    }
}

/// Two robots at the origin running scatter under `scheduler`.
pub fn colocated_pair_scenario(scheduler: SchedulerKind, seed: u64, max_steps: u64) -> Scenario {
    Scenario::new(vec![Point::ORIGIN; 2], ProtocolSpec::Scatter, scheduler)
        .with_seed(seed)
        .with_max_steps(max_steps)
        .with_capabilities(Capabilities {
            multiplicity_detection: true,
            localization_knowledge: false,
        })
        .with_stop_rule(StopRule::NoMultiplicity)
}

/// Runs one co-located pair until it separates or has been active
/// `max_active` times (`max_active >= 1`).
pub fn simulate_pair(scheduler: SchedulerKind, seed: u64, max_active: usize) -> Result<PairRun, EngineError> {
    // With two robots every instant activates at least one of them.
    let scenario = colocated_pair_scenario(scheduler, seed, max_active as u64);
    let trace = engine::run(&scenario)?;
    let mut events = Vec::with_capacity(trace.records.len());
    let mut before = &trace.scenario.initial;
    for r in &trace.records {
        let e = classify_pair_instant(before, r, (0, 1));
        events.push(e);
        if e.separates() {
            break;
        }
        before = &r.positions;
    }
    Ok(PairRun { seed, events })
}

pub fn simulate_pairs(
    scheduler: SchedulerKind,
    trials: u64,
    base_seed: u64,
    max_active: usize,
) -> Result<Vec<PairRun>, EngineError> {
    (0..trials)
        .into_par_iter()
        .map(|i| simulate_pair(scheduler, trial_seed(base_seed, i), max_active))
        .collect()
}

/// Separation frequency at the first instant a co-located pair is active.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeparationEstimate {
    pub scheduler: String,
    pub trials: u64,
    pub separations: u64,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Events at that first active instant, one per trial.
    pub tally: PairEventTally,
}

impl SeparationEstimate {
    /// Probability of still being co-located after one active instant.
    pub fn persistence(&self) -> f64 {
        1.0 - self.rate
    }

    pub fn from_runs(scheduler: SchedulerKind, runs: &[PairRun]) -> Self {
        let mut tally = PairEventTally::default();
        for run in runs {
            if let Some(&e) = run.events.iter().find(|e| e.active() > 0) {
                tally.add(e);
            }
        }
        let trials = tally.active_instants();
        let separations = tally.separated();
        let rate = if trials > 0 { separations as f64 / trials as f64 } else { 0.0 };
        let (ci_low, ci_high) = wilson_interval(separations, trials, Z_95);
        SeparationEstimate {
            scheduler: scheduler.to_string(),
            trials,
            separations,
            rate,
            ci_low,
            ci_high,
            tally,
        }
    }
}

/// Estimates the per-active-instant separation probability of a co-located
/// scattering pair, with a Wilson 95% interval.
pub fn estimate_pair_separation(
    scheduler: SchedulerKind,
    trials: u64,
    seed: u64,
) -> Result<SeparationEstimate, EngineError> {
    let runs = simulate_pairs(scheduler, trials, seed, 1)?;
    Ok(SeparationEstimate::from_runs(scheduler, &runs))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayRow {
    pub active_instants: usize,
    pub trials: u64,
    pub colocated: u64,
    pub fraction: f64,
    /// `(3/4)^a`.
    pub bound: f64,
    pub standard_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayVerdict {
    pub rows: Vec<DecayRow>,
}

impl DecayVerdict {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }
}

/// Survival after `a` active instants against `(3/4)^a + 3 SE` for
/// `a = 0..=max_a`. The standard error is that of the empirical fraction.
pub fn verify_decay_bound(runs: &[PairRun], max_a: usize) -> DecayVerdict {
    let rows = (0..=max_a)
        .map(|a| {
            let observed: Vec<bool> = runs.iter().filter_map(|r| r.colocated_after(a)).collect();
            let trials = observed.len() as u64;
            let colocated = observed.iter().filter(|&&c| c).count() as u64;
            let fraction = if trials > 0 { colocated as f64 / trials as f64 } else { 0.0 };
            let bound = 0.75f64.powi(a as i32);
            let standard_error = proportion_se(fraction, trials);
            DecayRow {
                active_instants: a,
                trials,
                colocated,
                fraction,
                bound,
                standard_error,
                passed: trials > 0 && fraction <= bound + 3.0 * standard_error,
            }
        })
        .collect();
    DecayVerdict { rows }
}

// ---------------------------------------------------------------------------
// Impossibility

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImpossibilityReport {
    pub protocol: String,
    pub robots: usize,
    pub steps: u64,
    /// Instants (out of `steps`, after each step) with every robot on one
    /// point.
    pub colocated_instants: u64,
}

impl ImpossibilityReport {
    /// The robots never separated.
    pub fn demonstrated(&self) -> bool {
        self.colocated_instants == self.steps
    }
}

/// Runs `n` co-located robots with identical frames under full synchrony.
/// Rejects any protocol that draws randomness.
pub fn impossibility_demo(
    protocol: &dyn Protocol,
    n: usize,
    steps: u64,
    caps: Capabilities,
) -> Result<ImpossibilityReport, AnalysisError> {
    let robots: Vec<Robot> = (0..n).map(|i| Robot::new(i, 1.0)).collect();
    let mut config = Configuration::colocated(n, Point::new(0.25, -0.5));
    let mut rng = CountingRng::new(SimRng::seed_from_u64(0));
    let all = ActivationSet::all(n);
    let mut colocated_instants = 0;
    for t in 0..steps {
        let (next, _, _) = engine::step(&config, &robots, &all, protocol, &caps, &mut rng)
            .map_err(|(_, e)| AnalysisError::Protocol(e))?;
        if rng.draws() > 0 {
            return Err(AnalysisError::NotDeterministic {
                draws: rng.draws(),
                instant: t,
            });
        }
        if next.gathered() {
            colocated_instants += 1;
        }
        config = next;
    }
    Ok(ImpossibilityReport {
        protocol: protocol.name().to_string(),
        robots: n,
        steps,
        colocated_instants,
    })
}

// ---------------------------------------------------------------------------
// Campaigns

/// Uniform positions in `[0, extent)^2`.
pub fn random_distinct_positions(n: usize, extent: f64, rng: &mut dyn RngCore) -> Vec<Point> {
    (0..n)
        .map(|_| Point::new(extent * rng::unit_f64(rng), extent * rng::unit_f64(rng)))
        .collect()
}

/// `n >= 2` positions in `[0, extent)^2` drawn from between 1 and `n - 1`
/// distinct sites, so at least one site is shared. Every robot is placed on
/// a random site after each site has received one robot.
pub fn random_positions_with_duplicates(n: usize, extent: f64, rng: &mut dyn RngCore) -> Vec<Point> {
    assert!(n >= 2, "duplicates need at least two robots");
    let sites_count = 1 + rng::below(rng, (n - 1) as u64) as usize;
    let sites = random_distinct_positions(sites_count, extent, rng);
    let mut positions: Vec<Point> = sites.clone();
    while positions.len() < n {
        positions.push(sites[rng::below(rng, sites_count as u64) as usize]);
    }
    // Shuffle so that ordinals carry no structure.
    for i in (1..n).rev() {
        let j = rng::below(rng, (i + 1) as u64) as usize;
        positions.swap(i, j);
    }
    positions
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub seed: u64,
    pub n: usize,
    /// First instant at which the goal held.
    pub steps: Option<u64>,
    pub instants_run: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignSummary {
    pub trials: Vec<TrialOutcome>,
}

impl CampaignSummary {
    pub fn successes(&self) -> usize {
        self.trials.iter().filter(|t| t.steps.is_some()).count()
    }

    pub fn fraction(&self) -> f64 {
        if self.trials.is_empty() {
            return 0.0;
        }
        self.successes() as f64 / self.trials.len() as f64
    }

    pub fn mean_steps(&self) -> Option<f64> {
        let done: Vec<u64> = self.trials.iter().filter_map(|t| t.steps).collect();
        (!done.is_empty()).then(|| done.iter().sum::<u64>() as f64 / done.len() as f64)
    }

    pub fn max_steps(&self) -> Option<u64> {
        self.trials.iter().filter_map(|t| t.steps).max()
    }
}

fn campaign(
    scenarios: &[Scenario],
    goal: impl Fn(&Scenario, &Configuration) -> bool + Sync,
) -> Result<CampaignSummary, EngineError> {
    let trials = scenarios
        .par_iter()
        .map(|s| {
            let trace = engine::run(s)?;
            let steps = trace.configurations().position(|c| goal(s, c)).map(|k| k as u64);
            Ok(TrialOutcome {
                seed: s.seed,
                n: s.n(),
                steps,
                instants_run: trace.records.len() as u64,
            })
        })
        .collect::<Result<Vec<_>, EngineError>>()?;
    Ok(CampaignSummary { trials })
}

/// Instants until every robot stands on one point, per scenario.
pub fn gather_stats(scenarios: &[Scenario]) -> Result<CampaignSummary, EngineError> {
    campaign(scenarios, |_, c| c.gathered())
}

/// Instants until the configuration equals the scenario's `ssa_pf` pattern.
pub fn pattern_stats(scenarios: &[Scenario]) -> Result<CampaignSummary, EngineError> {
    campaign(scenarios, |s, c| match &s.protocol {
        ProtocolSpec::SsaPf { pattern } => matches_pattern(c, pattern),
        _ => false,
    })
}

/// Instants until all positions are distinct, per scenario.
pub fn scatter_stats(scenarios: &[Scenario]) -> Result<CampaignSummary, EngineError> {
    campaign(scenarios, |_, c| c.all_distinct())
}

/// Fraction of random queries for which the half-plane membership of
/// `compute_voronoi` disagrees with the nearest-site rule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub queries: u64,
    pub excluded: u64,
    pub mismatches: u64,
}

/// Distance from `q` to the nearest bisector between its nearest site and
/// any other site, and the nearest site's index.
pub fn nearest_site_with_margin(sites: &[Point], q: Point) -> (usize, f64) {
    let mut best = 0;
    for (i, s) in sites.iter().enumerate() {
        if distance(*s, q) < distance(sites[best], q) {
            best = i;
        }
    }
    let d1 = distance(sites[best], q);
    let margin = sites
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != best)
        .map(|(_, s)| {
            let dj = distance(*s, q);
            (dj * dj - d1 * d1) / (2.0 * distance(*s, sites[best]))
        })
        .fold(f64::INFINITY, f64::min);
    (best, margin)
}

/// Checks `queries` random points against diagrams of 2 to 10 random sites.
pub fn voronoi_oracle_check(queries: u64, seed: u64, boundary_eps: f64) -> OracleReport {
    let mut rng = SimRng::seed_from_u64(seed);
    let mut report = OracleReport {
        queries,
        excluded: 0,
        mismatches: 0,
    };
    let per_diagram = 100;
    let mut done = 0;
    while done < queries {
        let n = 2 + rng::below(&mut rng, 9) as usize;
        let sites: Vec<Point> = random_distinct_positions(n, 20.0, &mut rng)
            .into_iter()
            .map(|p| p - Point::new(10.0, 10.0))
            .collect();
        let diagram = crate::geometry::compute_voronoi(&sites).expect("random sites are distinct");
        for _ in 0..per_diagram.min(queries - done) {
            let q = Point::new(30.0 * rng::unit_f64(&mut rng) - 15.0, 30.0 * rng::unit_f64(&mut rng) - 15.0);
            done += 1;
            let (nearest, margin) = nearest_site_with_margin(&sites, q);
            if margin < boundary_eps {
                report.excluded += 1;
                continue;
            }
            if diagram.locate(q) != Some(nearest) {
                report.mismatches += 1;
            }
        }
    }
    report
}

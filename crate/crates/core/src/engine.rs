//! The semi-synchronous execution loop.
//!
//! Each instant the scheduler picks a non-empty set of robots; every active
//! robot builds its view from the same pre-step configuration, asks the
//! protocol for a target, and moves toward it by at most its `sigma`.
//!
//! Random draws per instant are taken from one root generator in a fixed
//! order: the scheduler first, then each active robot in ascending ordinal
//! order (its coin, then any sampling draws). Given a scenario and seed,
//! runs are bit-for-bit reproducible; see [`Trace::to_text`] for the record
//! format.

use std::fmt::Write as _;

use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{distance, Point};
use crate::protocols::{Protocol, ProtocolError, ProtocolSpec};
use crate::rng::{Coin, SimRng};
use crate::scheduler::{ActivationSet, Scheduler, SchedulerError, SchedulerKind};
use crate::world::{build_view, Capabilities, Configuration, LocalFrame, Robot};

/// Version tag written in the first line of every trace file.
pub const TRACE_FORMAT: &str = "scatter-trace v1";

/// Mixed into the seed for frame generation so frames never consume the
/// root stream.
const FRAME_STREAM: u64 = 0x6672_616d_6573_2121;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid scenario: {field}: {reason}")]
    InvalidScenario { field: String, reason: String },
    #[error("invalid scenario: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("invalid scenario: {0}")]
    Scheduler(#[from] SchedulerError),
    #[error("protocol failed at instant {instant} for robot {robot}: {source}")]
    Decision {
        instant: u64,
        robot: usize,
        source: ProtocolError,
    },
    #[error("trace digest {recorded} does not match its scenario ({computed}); refusing to replay")]
    DigestMismatch { recorded: String, computed: String },
    #[error("malformed trace at line {line}: {reason}")]
    Format { line: usize, reason: String },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> EngineError {
    EngineError::InvalidScenario {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    #[default]
    None,
    /// No position holds two or more robots.
    NoMultiplicity,
    /// All robots share one position.
    Gathered,
    /// The occupied positions equal the pattern of an `ssa_pf` protocol.
    PatternReached,
}

impl std::str::FromStr for StopRule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(StopRule::None),
            "no_multiplicity" => Ok(StopRule::NoMultiplicity),
            "gathered" => Ok(StopRule::Gathered),
            "pattern_reached" => Ok(StopRule::PatternReached),
            _ => Err(format!(
                "unknown stop rule `{s}` (expected none, no_multiplicity, gathered or pattern_reached)"
            )),
        }
    }
}

/// A complete, self-contained experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub robots: Vec<Robot>,
    pub initial: Configuration,
    pub capabilities: Capabilities,
    pub scheduler: SchedulerKind,
    pub protocol: ProtocolSpec,
    pub seed: u64,
    pub max_steps: u64,
    pub stop_rule: StopRule,
}

impl Scenario {
    /// Unit `sigma`, identity frames, no capabilities, seed 0, 1000 steps,
    /// no stop rule.
    pub fn new(positions: Vec<Point>, protocol: ProtocolSpec, scheduler: SchedulerKind) -> Self {
        let robots = (0..positions.len()).map(|i| Robot::new(i, 1.0)).collect();
        Scenario {
            robots,
            initial: Configuration::new(positions),
            capabilities: Capabilities::NONE,
            scheduler,
            protocol,
            seed: 0,
            max_steps: 1000,
            stop_rule: StopRule::None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_steps(mut self, max_steps: u64) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn with_stop_rule(mut self, rule: StopRule) -> Self {
        self.stop_rule = rule;
        self
    }

    pub fn with_capabilities(mut self, caps: Capabilities) -> Self {
        self.capabilities = caps;
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        for r in &mut self.robots {
            r.sigma = sigma;
        }
        self
    }

    /// Gives every robot a random frame derived from the seed, without
    /// touching the stream used by the run itself.
    pub fn with_random_frames(mut self, extent: f64) -> Self {
        let mut rng = SimRng::seed_from_u64(self.seed ^ FRAME_STREAM);
        for r in &mut self.robots {
            r.frame = LocalFrame::random(extent, &mut rng);
        }
        self
    }

    pub fn n(&self) -> usize {
        self.robots.len()
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let n = self.robots.len();
        if n == 0 {
            return Err(invalid("robots", "at least one robot is required"));
        }
        if self.initial.len() != n {
            return Err(invalid(
                "positions",
                format!("{} positions for {} robots", self.initial.len(), n),
            ));
        }
        for (i, r) in self.robots.iter().enumerate() {
            if r.index != i {
                return Err(invalid(format!("robots[{i}].index"), "ordinals must be 0..n in order"));
            }
            if !(r.sigma.is_finite() && r.sigma > 0.0) {
                return Err(invalid(
                    format!("robots[{i}].sigma"),
                    format!("sigma must be a positive finite length, got {}", r.sigma),
                ));
            }
            if !r.frame.is_valid() {
                return Err(invalid(format!("robots[{i}].frame"), "not an invertible similarity"));
            }
        }
        if let Some(i) = self.initial.positions.iter().position(|p| !p.is_finite()) {
            return Err(invalid(format!("positions[{i}]"), "coordinates must be finite"));
        }
        if self.max_steps == 0 {
            return Err(invalid("max_steps", "must be at least 1"));
        }
        self.scheduler.validate()?;
        self.protocol.validate(n, &self.capabilities)?;
        match self.stop_rule {
            StopRule::NoMultiplicity if !self.capabilities.multiplicity_detection => Err(invalid(
                "stop_rule",
                "no_multiplicity needs multiplicity detection",
            )),
            StopRule::PatternReached if !matches!(self.protocol, ProtocolSpec::SsaPf { .. }) => Err(invalid(
                "stop_rule",
                "pattern_reached needs an ssa_pf protocol with a pattern",
            )),
            _ => Ok(()),
        }
    }

    /// Canonical one-line JSON encoding.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("scenario serializes")
    }

    /// SHA-256 of the canonical encoding, hex.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn stop_rule_holds(&self, config: &Configuration) -> bool {
        match self.stop_rule {
            StopRule::None => false,
            StopRule::NoMultiplicity => config.all_distinct(),
            StopRule::Gathered => config.gathered(),
            StopRule::PatternReached => match &self.protocol {
                ProtocolSpec::SsaPf { pattern } => matches_pattern(config, pattern),
                _ => false,
            },
        }
    }
}

/// True iff the occupied positions are exactly the pattern points.
pub fn matches_pattern(config: &Configuration, pattern: &[Point]) -> bool {
    if config.len() != pattern.len() {
        return false;
    }
    let mut a = config.positions.clone();
    let mut b = pattern.to_vec();
    a.sort_by(|p, q| p.lex_cmp(q));
    b.sort_by(|p, q| p.lex_cmp(q));
    a == b
}

/// Number of robots among the active ones (`activated`) and those whose
/// position changed (`moved`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepOutcome {
    pub activated: usize,
    pub moved: usize,
}

/// One active robot's decision, in global coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannedMove {
    pub robot: usize,
    pub coin: Option<Coin>,
    /// Intended target before the travel cap.
    pub target: Point,
    /// Where the robot ends up.
    pub destination: Point,
}

/// Straight-line move toward `target`, stopping after `sigma`.
pub fn capped_move(from: Point, target: Point, sigma: f64) -> Point {
    let d = distance(from, target);
    if d <= sigma {
        return target;
    }
    let delta = target - from;
    let mut k = sigma / d;
    loop {
        let p = from + delta * k;
        if distance(from, p) <= sigma {
            return p;
        }
        k *= 1.0 - f64::EPSILON;
    }
}

/// Lets one robot look and compute against `config`.
pub fn plan_move(
    config: &Configuration,
    robot: &Robot,
    protocol: &dyn Protocol,
    caps: &Capabilities,
    rng: &mut dyn RngCore,
) -> Result<PlannedMove, ProtocolError> {
    let view = build_view(config, robot, caps);
    let frame = robot.effective_frame(caps);
    let decision = protocol.decide(&view, caps, frame.length_to_local(robot.sigma), rng)?;
    let current = config.positions[robot.index];
    // Targets on an observed position resolve to that position exactly, so
    // staying and joining another robot survive the frame round trip.
    let target = if decision.target == view.own {
        current
    } else if view.points.contains(&decision.target) {
        config
            .positions
            .iter()
            .copied()
            .find(|&q| frame.to_local(q) == decision.target)
            .unwrap_or_else(|| frame.to_global(decision.target))
    } else {
        frame.to_global(decision.target)
    };
    Ok(PlannedMove {
        robot: robot.index,
        coin: decision.coin,
        target,
        destination: capped_move(current, target, robot.sigma),
    })
}

/// Applies planned moves; robots without a plan stay put.
pub fn apply_moves(config: &Configuration, plans: &[PlannedMove]) -> (Configuration, StepOutcome) {
    let mut next = config.clone();
    let mut moved = 0;
    for plan in plans {
        if plan.destination != config.positions[plan.robot] {
            moved += 1;
        }
        next.positions[plan.robot] = plan.destination;
    }
    (
        next,
        StepOutcome {
            activated: plans.len(),
            moved,
        },
    )
}

/// One computation step: every active robot decides on `config`, then all
/// move at once.
pub fn step(
    config: &Configuration,
    robots: &[Robot],
    activation: &ActivationSet,
    protocol: &dyn Protocol,
    caps: &Capabilities,
    rng: &mut dyn RngCore,
) -> Result<(Configuration, StepOutcome, Vec<PlannedMove>), (usize, ProtocolError)> {
    assert!(!activation.is_empty(), "activation sets are never empty");
    let plans = activation
        .members
        .iter()
        .map(|&i| plan_move(config, &robots[i], protocol, caps, rng).map_err(|e| (i, e)))
        .collect::<Result<Vec<_>, _>>()?;
    let (next, outcome) = apply_moves(config, &plans);
    Ok((next, outcome, plans))
}

/// What happened during one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Index `j` of the step from `t_j` to `t_{j+1}`.
    pub t: u64,
    pub activation: ActivationSet,
    /// Per active robot, aligned with `activation.members`.
    pub coins: Vec<Option<Coin>>,
    /// Per active robot, intended global targets.
    pub targets: Vec<Point>,
    /// Configuration at `t_{j+1}`.
    pub positions: Configuration,
}

impl StepRecord {
    pub fn moved(&self, before: &Configuration) -> usize {
        self.activation
            .members
            .iter()
            .filter(|&&i| self.positions.positions[i] != before.positions[i])
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceStatus {
    /// The stop rule held at instant `at`; `at` steps were executed.
    Stopped { at: u64 },
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub digest: String,
    pub seed: u64,
    pub scenario: Scenario,
    pub records: Vec<StepRecord>,
    pub status: TraceStatus,
}

impl Trace {
    pub fn n(&self) -> usize {
        self.scenario.n()
    }

    /// `P(t_0), P(t_1), ...` including the initial configuration.
    pub fn configurations(&self) -> impl Iterator<Item = &Configuration> {
        std::iter::once(&self.scenario.initial).chain(self.records.iter().map(|r| &r.positions))
    }

    pub fn final_configuration(&self) -> &Configuration {
        self.records
            .last()
            .map_or(&self.scenario.initial, |r| &r.positions)
    }

    /// Instants executed before the stop rule held, if it did.
    pub fn stop_instant(&self) -> Option<u64> {
        match self.status {
            TraceStatus::Stopped { at } => Some(at),
            TraceStatus::BudgetExhausted => None,
        }
    }

    /// Serializes to the line-oriented trace format:
    ///
    /// ```text
    /// scatter-trace v1 digest=<sha256 hex> seed=<u64>
    /// scenario <canonical scenario JSON>
    /// t=<j>\tactive=<i,i,..>\tcoins=<0|1|-,..>\ttargets=<x y;..>\tpositions=<x y;..>
    /// ...
    /// end status=stopped at=<j>   |   end status=budget_exhausted
    /// ```
    ///
    /// Floats are written with 17 significant digits (`{:.16e}`), which
    /// round-trips every `f64` exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{TRACE_FORMAT} digest={} seed={}", self.digest, self.seed).unwrap();
        writeln!(out, "scenario {}", self.scenario.canonical_json()).unwrap();
        for r in &self.records {
            let active = join(r.activation.members.iter().map(|m| m.to_string()), ",");
            let coins = join(
                r.coins.iter().map(|c| c.map_or("-".to_string(), |c| c.as_u8().to_string())),
                ",",
            );
            let targets = join(r.targets.iter().map(|p| fmt_point(*p)), ";");
            let positions = join(r.positions.positions.iter().map(|p| fmt_point(*p)), ";");
            writeln!(
                out,
                "t={}\tactive={active}\tcoins={coins}\ttargets={targets}\tpositions={positions}",
                r.t
            )
            .unwrap();
        }
        match self.status {
            TraceStatus::Stopped { at } => writeln!(out, "end status=stopped at={at}").unwrap(),
            TraceStatus::BudgetExhausted => writeln!(out, "end status=budget_exhausted").unwrap(),
        }
        out
    }

    /// Parses the format written by [`Trace::to_text`].
    pub fn parse(text: &str) -> Result<Trace, EngineError> {
        let bad = |line: usize, reason: &str| EngineError::Format {
            line,
            reason: reason.to_string(),
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

        let (ln, header) = lines.next().ok_or_else(|| bad(1, "empty trace"))?;
        let rest = header
            .strip_prefix(TRACE_FORMAT)
            .ok_or_else(|| bad(ln, "missing `scatter-trace v1` header"))?;
        let mut digest = None;
        let mut seed = None;
        for field in rest.split_whitespace() {
            match field.split_once('=') {
                Some(("digest", v)) => digest = Some(v.to_string()),
                Some(("seed", v)) => seed = Some(v.parse::<u64>().map_err(|_| bad(ln, "bad seed"))?),
                _ => return Err(bad(ln, "unexpected header field")),
            }
        }
        let digest = digest.ok_or_else(|| bad(ln, "header lacks digest"))?;
        let seed = seed.ok_or_else(|| bad(ln, "header lacks seed"))?;

        let (ln, scen) = lines.next().ok_or_else(|| bad(2, "missing scenario line"))?;
        let json = scen
            .strip_prefix("scenario ")
            .ok_or_else(|| bad(ln, "expected `scenario <json>`"))?;
        let scenario: Scenario =
            serde_json::from_str(json).map_err(|e| bad(ln, &format!("scenario: {e}")))?;
        let n = scenario.n();

        let mut records = Vec::new();
        let mut status = None;
        for (ln, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            if status.is_some() {
                return Err(bad(ln, "content after end line"));
            }
            if let Some(end) = line.strip_prefix("end ") {
                status = Some(match end.trim() {
                    "status=budget_exhausted" => TraceStatus::BudgetExhausted,
                    s => {
                        let at = s
                            .strip_prefix("status=stopped at=")
                            .and_then(|v| v.parse().ok())
                            .ok_or_else(|| bad(ln, "bad end line"))?;
                        TraceStatus::Stopped { at }
                    }
                });
                continue;
            }
            records.push(parse_record(line, n).map_err(|reason| bad(ln, &reason))?);
        }
        let status = status.ok_or_else(|| bad(text.lines().count(), "missing end line"))?;
        Ok(Trace {
            digest,
            seed,
            scenario,
            records,
            status,
        })
    }
}

fn join(items: impl Iterator<Item = String>, sep: &str) -> String {
    items.collect::<Vec<_>>().join(sep)
}

/// 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_point(p: Point) -> String {
    format!("{} {}", fmt_f64(p.x), fmt_f64(p.y))
}

fn parse_point(s: &str) -> Result<Point, String> {
    let mut it = s.split_whitespace();
    let (Some(x), Some(y), None) = (it.next(), it.next(), it.next()) else {
        return Err(format!("bad point `{s}`"));
    };
    let x: f64 = x.parse().map_err(|_| format!("bad coordinate `{x}`"))?;
    let y: f64 = y.parse().map_err(|_| format!("bad coordinate `{y}`"))?;
    Ok(Point::new(x, y))
}

fn parse_list<T>(s: &str, sep: char, f: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(sep).map(f).collect()
}

fn parse_record(line: &str, n: usize) -> Result<StepRecord, String> {
    let mut t = None;
    let mut active = None;
    let mut coins = None;
    let mut targets = None;
    let mut positions = None;
    for field in line.split('\t') {
        let (k, v) = field.split_once('=').ok_or_else(|| format!("bad field `{field}`"))?;
        match k {
            "t" => t = Some(v.parse::<u64>().map_err(|_| "bad instant index".to_string())?),
            "active" => {
                active = Some(parse_list(v, ',', |s| {
                    s.parse::<usize>().map_err(|_| format!("bad ordinal `{s}`"))
                })?)
            }
            "coins" => {
                coins = Some(parse_list(v, ',', |s| match s {
                    "-" => Ok(None),
                    "0" => Ok(Some(Coin::Zero)),
                    "1" => Ok(Some(Coin::One)),
                    _ => Err(format!("bad coin `{s}`")),
                })?)
            }
            "targets" => targets = Some(parse_list(v, ';', parse_point)?),
            "positions" => positions = Some(parse_list(v, ';', parse_point)?),
            _ => return Err(format!("unknown field `{k}`")),
        }
    }
    let (Some(t), Some(active), Some(coins), Some(targets), Some(positions)) =
        (t, active, coins, targets, positions)
    else {
        return Err("record lacks a field".into());
    };
    if coins.len() != active.len() || targets.len() != active.len() {
        return Err("coins/targets not aligned with active robots".into());
    }
    if positions.len() != n {
        return Err(format!("{} positions for {} robots", positions.len(), n));
    }
    if active.is_empty() || active.iter().any(|&i| i >= n) || active.windows(2).any(|w| w[0] >= w[1]) {
        return Err("activation set must be non-empty, ascending and within the population".into());
    }
    Ok(StepRecord {
        t,
        activation: ActivationSet { members: active },
        coins,
        targets,
        positions: Configuration::new(positions),
    })
}

/// Runs a validated scenario to its stop rule or step budget.
pub fn run(scenario: &Scenario) -> Result<Trace, EngineError> {
    scenario.validate()?;
    let protocol = scenario.protocol.build();
    let mut rng = SimRng::seed_from_u64(scenario.seed);
    run_with(scenario, protocol.as_ref(), &mut rng)
}

/// The loop behind [`run`], with the protocol and generator supplied by the
/// caller. The scenario is not re-validated.
pub fn run_with(
    scenario: &Scenario,
    protocol: &dyn Protocol,
    rng: &mut dyn RngCore,
) -> Result<Trace, EngineError> {
    let mut scheduler = Scheduler::new(scenario.scheduler, scenario.n());
    let mut config = scenario.initial.clone();
    let mut records = Vec::new();
    let mut status = TraceStatus::BudgetExhausted;
    for t in 0..scenario.max_steps {
        if scenario.stop_rule_holds(&config) {
            status = TraceStatus::Stopped { at: t };
            break;
        }
        let activation = scheduler.next_activation(rng);
        let (next, _, plans) = step(
            &config,
            &scenario.robots,
            &activation,
            protocol,
            &scenario.capabilities,
            rng,
        )
        .map_err(|(robot, source)| EngineError::Decision {
            instant: t,
            robot,
            source,
        })?;
        records.push(StepRecord {
            t,
            coins: plans.iter().map(|p| p.coin).collect(),
            targets: plans.iter().map(|p| p.target).collect(),
            activation,
            positions: next.clone(),
        });
        config = next;
    }
    if status == TraceStatus::BudgetExhausted && scenario.stop_rule_holds(&config) {
        status = TraceStatus::Stopped {
            at: scenario.max_steps,
        };
    }
    Ok(Trace {
        digest: scenario.digest(),
        seed: scenario.seed,
        scenario: scenario.clone(),
        records,
        status,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReplayVerdict {
    Identical,
    Diverged { instant: u64, detail: String },
}

impl ReplayVerdict {
    pub fn is_identical(&self) -> bool {
        matches!(self, ReplayVerdict::Identical)
    }
}

fn same_bits(a: &Point, b: &Point) -> bool {
    a.x.to_bits() == b.x.to_bits() && a.y.to_bits() == b.y.to_bits()
}

fn same_points(a: &[Point], b: &[Point]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(p, q)| same_bits(p, q))
}

/// Re-executes the trace's scenario and compares every instant bit-for-bit.
pub fn replay(trace: &Trace) -> Result<ReplayVerdict, EngineError> {
    let computed = trace.scenario.digest();
    if computed != trace.digest || trace.seed != trace.scenario.seed {
        return Err(EngineError::DigestMismatch {
            recorded: trace.digest.clone(),
            computed,
        });
    }
    let fresh = run(&trace.scenario)?;
    for (i, (old, new)) in trace.records.iter().zip(&fresh.records).enumerate() {
        let what = if old.t != new.t {
            Some("instant index")
        } else if old.activation != new.activation {
            Some("activation set")
        } else if old.coins != new.coins {
            Some("coins")
        } else if !same_points(&old.targets, &new.targets) {
            Some("targets")
        } else if !same_points(&old.positions.positions, &new.positions.positions) {
            Some("positions")
        } else {
            None
        };
        if let Some(what) = what {
            return Ok(ReplayVerdict::Diverged {
                instant: i as u64,
                detail: format!("{what} differ"),
            });
        }
    }
    if trace.records.len() != fresh.records.len() {
        let instant = trace.records.len().min(fresh.records.len()) as u64;
        return Ok(ReplayVerdict::Diverged {
            instant,
            detail: format!(
                "trace has {} records, replay produced {}",
                trace.records.len(),
                fresh.records.len()
            ),
        });
    }
    if trace.status != fresh.status {
        return Ok(ReplayVerdict::Diverged {
            instant: trace.records.len() as u64,
            detail: format!("final status {:?} vs {:?}", trace.status, fresh.status),
        });
    }
    Ok(ReplayVerdict::Identical)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::{DeterministicStub, ReferenceAgp, StubKind};

    fn p(x: f64, y: f64) -> Point {
        Point::new(x, y)
    }

    #[test]
    fn inactive_robot_keeps_exact_position() {
        let config = Configuration::new(vec![p(0.1, 0.2), p(0.1 + 1e-9, 0.2)]);
        let robots = [Robot::new(0, 1.0), Robot::new(1, 1.0)];
        let mut rng = SimRng::seed_from_u64(1);
        let act = ActivationSet::new(vec![0]);
        let (next, out, _) = step(
            &config,
            &robots,
            &act,
            &DeterministicStub(StubKind::UnitStepX),
            &Capabilities::NONE,
            &mut rng,
        )
        .unwrap();
        assert_eq!(next.positions[1].x.to_bits(), config.positions[1].x.to_bits());
        assert_eq!(next.positions[1].y.to_bits(), config.positions[1].y.to_bits());
        assert_eq!(out, StepOutcome { activated: 1, moved: 1 });
    }

    #[test]
    fn travel_cap() {
        assert_eq!(capped_move(p(0.0, 0.0), p(5.0, 0.0), 2.0), p(2.0, 0.0));
        assert_eq!(capped_move(p(0.0, 0.0), p(0.5, 0.5), 2.0), p(0.5, 0.5));
        let q = capped_move(p(0.3, 0.7), p(-4.1, 9.9), 1.3);
        assert!(distance(p(0.3, 0.7), q) <= 1.3);
        assert!((distance(p(0.3, 0.7), q) - 1.3).abs() < 1e-12);
    }

    #[test]
    fn capped_gathering_move() {
        // Multiplicity at the origin, third robot at (5,0), sigma 1.
        let config = Configuration::new(vec![p(0.0, 0.0), p(0.0, 0.0), p(5.0, 0.0)]);
        let robots: Vec<Robot> = (0..3).map(|i| Robot::new(i, 1.0)).collect();
        let mut rng = SimRng::seed_from_u64(0);
        let (next, _, plans) = step(
            &config,
            &robots,
            &ActivationSet::all(3),
            &ReferenceAgp,
            &Capabilities::ALL,
            &mut rng,
        )
        .unwrap();
        assert_eq!(plans[2].target, p(0.0, 0.0));
        assert_eq!(next.positions[2], p(4.0, 0.0));
    }

    #[test]
    fn evaluation_order_does_not_matter() {
        let config = Configuration::new(vec![p(0.0, 0.0), p(1.0, 0.0), p(3.0, 1.0), p(-2.0, 2.0)]);
        let robots: Vec<Robot> = (0..4).map(|i| Robot::new(i, 0.5)).collect();
        let proto = DeterministicStub(StubKind::CentroidOffset);
        let mut rng = SimRng::seed_from_u64(0);
        let forward: Vec<PlannedMove> = (0..4)
            .map(|i| plan_move(&config, &robots[i], &proto, &Capabilities::NONE, &mut rng).unwrap())
            .collect();
        let backward: Vec<PlannedMove> = (0..4)
            .rev()
            .map(|i| plan_move(&config, &robots[i], &proto, &Capabilities::NONE, &mut rng).unwrap())
            .collect();
        assert_eq!(apply_moves(&config, &forward).0, apply_moves(&config, &backward).0);
    }

    #[test]
    fn stops_immediately_when_already_distinct() {
        let s = Scenario::new(
            vec![p(0.0, 0.0), p(1.0, 0.0), p(2.0, 5.0)],
            ProtocolSpec::Scatter,
            SchedulerKind::FullSynchronous,
        )
        .with_capabilities(Capabilities {
            multiplicity_detection: true,
            localization_knowledge: false,
        })
        .with_stop_rule(StopRule::NoMultiplicity);
        let trace = run(&s).unwrap();
        assert!(trace.records.is_empty());
        assert_eq!(trace.status, TraceStatus::Stopped { at: 0 });
    }

    #[test]
    fn validation_errors() {
        let base = Scenario::new(vec![p(0.0, 0.0), p(1.0, 0.0)], ProtocolSpec::Scatter, SchedulerKind::FullSynchronous);
        let bad_sigma = base.clone().with_sigma(0.0);
        let err = bad_sigma.validate().unwrap_err().to_string();
        assert!(err.contains("robots[0].sigma"), "{err}");
        let mut gp = base.clone().with_capabilities(Capabilities::ALL);
        gp.protocol = ProtocolSpec::SsaGp;
        let err = gp.validate().unwrap_err().to_string();
        assert!(err.contains(">= 3"), "{err}");
        let err = base.clone().with_stop_rule(StopRule::NoMultiplicity).validate().unwrap_err();
        assert!(err.to_string().contains("multiplicity detection"));
        assert!(base.clone().with_max_steps(0).validate().is_err());
        assert!(run(&base.with_max_steps(0)).is_err());
    }

    #[test]
    fn trace_text_round_trip_and_replay() {
        let s = Scenario::new(
            vec![p(0.0, 0.0), p(0.0, 0.0), p(0.3, -0.1)],
            ProtocolSpec::Scatter,
            "bernoulli:0.5".parse().unwrap(),
        )
        .with_seed(99)
        .with_max_steps(25)
        .with_random_frames(3.0);
        let trace = run(&s).unwrap();
        assert_eq!(trace.records.len(), 25);
        let text = trace.to_text();
        let parsed = Trace::parse(&text).unwrap();
        assert_eq!(parsed, trace);
        assert_eq!(parsed.to_text(), text);
        assert_eq!(replay(&parsed).unwrap(), ReplayVerdict::Identical);
    }

    #[test]
    fn replay_detects_perturbation_and_digest_mismatch() {
        let s = Scenario::new(vec![p(0.0, 0.0); 3], ProtocolSpec::Scatter, SchedulerKind::FullSynchronous)
            .with_seed(5)
            .with_max_steps(10);
        let trace = run(&s).unwrap();
        let mut bad = trace.clone();
        bad.records[4].positions.positions[1].x += 1e-12;
        assert_eq!(
            replay(&bad).unwrap(),
            ReplayVerdict::Diverged {
                instant: 4,
                detail: "positions differ".into()
            }
        );
        let mut wrong = trace.clone();
        wrong.scenario.seed = 6;
        assert!(matches!(replay(&wrong), Err(EngineError::DigestMismatch { .. })));
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(Trace::parse("").is_err());
        assert!(Trace::parse("hello\n").is_err());
        let s = Scenario::new(vec![p(0.0, 0.0)], ProtocolSpec::Scatter, SchedulerKind::FullSynchronous).with_max_steps(2);
        let text = run(&s).unwrap().to_text();
        let truncated: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert!(matches!(Trace::parse(&truncated), Err(EngineError::Format { .. })));
        let corrupted = text.replace("positions=", "positions=x");
        assert!(matches!(Trace::parse(&corrupted), Err(EngineError::Format { line: 3, .. })));
    }
}

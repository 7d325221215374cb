//! Activation schedulers for the semi-synchronous model and a bounded-gap
//! fairness auditor.
//!
//! Schedulers see only their own counters and the random source, never robot
//! positions or coin outcomes.

use std::fmt;
use std::str::FromStr;

use rand_core::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::Trace;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchedulerError {
    #[error("unknown scheduler kind `{0}` (expected full_synchronous, bernoulli:<p>, round_robin[:<k>] or bounded_delay:<D>)")]
    UnknownKind(String),
    #[error("invalid parameter `{value}` for scheduler `{kind}`: {reason}")]
    BadParameter {
        kind: &'static str,
        value: String,
        reason: &'static str,
    },
}

/// Which activation policy to run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchedulerKind {
    /// Every robot, every instant.
    FullSynchronous,
    /// Each robot independently with probability `p`; an empty draw is
    /// redrawn whole.
    Bernoulli { p: f64 },
    /// `window` consecutive ordinals per instant, cycling.
    RoundRobin { window: usize },
    /// Fair-coin draws per robot, plus any robot idle for `delay - 1`
    /// instants; every robot is active at least once per `delay` instants.
    BoundedDelay { delay: usize },
}

impl SchedulerKind {
    pub fn validate(&self) -> Result<(), SchedulerError> {
        match *self {
            SchedulerKind::Bernoulli { p } if !(p > 0.0 && p <= 1.0) => {
                Err(SchedulerError::BadParameter {
                    kind: "bernoulli",
                    value: p.to_string(),
                    reason: "p must lie in (0, 1]",
                })
            }
            SchedulerKind::RoundRobin { window: 0 } => Err(SchedulerError::BadParameter {
                kind: "round_robin",
                value: "0".into(),
                reason: "window must be at least 1",
            }),
            SchedulerKind::BoundedDelay { delay: 0 } => Err(SchedulerError::BadParameter {
                kind: "bounded_delay",
                value: "0".into(),
                reason: "delay must be at least 1",
            }),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SchedulerKind::FullSynchronous => "full_synchronous",
            SchedulerKind::Bernoulli { .. } => "bernoulli",
            SchedulerKind::RoundRobin { .. } => "round_robin",
            SchedulerKind::BoundedDelay { .. } => "bounded_delay",
        }
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchedulerKind::FullSynchronous => write!(f, "full_synchronous"),
            SchedulerKind::Bernoulli { p } => write!(f, "bernoulli:{p}"),
            SchedulerKind::RoundRobin { window } => write!(f, "round_robin:{window}"),
            SchedulerKind::BoundedDelay { delay } => write!(f, "bounded_delay:{delay}"),
        }
    }
}

impl FromStr for SchedulerKind {
    type Err = SchedulerError;

    /// Parses `kind[:param]`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, param) = match s.split_once(':') {
            Some((k, v)) => (k.trim(), Some(v.trim())),
            None => (s.trim(), None),
        };
        let bad = |kind: &'static str, value: &str, reason: &'static str| SchedulerError::BadParameter {
            kind,
            value: value.to_string(),
            reason,
        };
        let parsed = match (kind, param) {
            ("full_synchronous" | "fsync" | "synchronous", None) => SchedulerKind::FullSynchronous,
            ("bernoulli", Some(v)) => SchedulerKind::Bernoulli {
                p: v.parse().map_err(|_| bad("bernoulli", v, "not a number"))?,
            },
            ("bernoulli", None) => SchedulerKind::Bernoulli { p: 0.5 },
            ("round_robin", None) => SchedulerKind::RoundRobin { window: 1 },
            ("round_robin", Some(v)) => SchedulerKind::RoundRobin {
                window: v.parse().map_err(|_| bad("round_robin", v, "not an integer"))?,
            },
            ("bounded_delay", Some(v)) => SchedulerKind::BoundedDelay {
                delay: v.parse().map_err(|_| bad("bounded_delay", v, "not an integer"))?,
            },
            ("bounded_delay", None) => {
                return Err(bad("bounded_delay", "", "the delay bound D is required"))
            }
            _ => return Err(SchedulerError::UnknownKind(s.to_string())),
        };
        parsed.validate()?;
        Ok(parsed)
    }
}

/// Robots activated at one instant: ascending, non-empty ordinals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationSet {
    pub members: Vec<usize>,
}

impl ActivationSet {
    pub fn new(mut members: Vec<usize>) -> Self {
        members.sort_unstable();
        members.dedup();
        ActivationSet { members }
    }

    pub fn all(n: usize) -> Self {
        ActivationSet {
            members: (0..n).collect(),
        }
    }

    pub fn contains(&self, robot: usize) -> bool {
        self.members.binary_search(&robot).is_ok()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Mutable scheduler state for one population.
#[derive(Debug, Clone)]
pub struct Scheduler {
    kind: SchedulerKind,
    n: usize,
    cursor: usize,
    idle: Vec<usize>,
}

impl Scheduler {
    pub fn new(kind: SchedulerKind, n: usize) -> Self {
        assert!(n >= 1, "a scheduler needs at least one robot");
        Scheduler {
            kind,
            n,
            cursor: 0,
            idle: vec![0; n],
        }
    }

    pub fn kind(&self) -> SchedulerKind {
        self.kind
    }

    /// Emits the next non-empty activation set.
    pub fn next_activation(&mut self, rng: &mut dyn RngCore) -> ActivationSet {
        let n = self.n;
        let members: Vec<usize> = match self.kind {
            SchedulerKind::FullSynchronous => (0..n).collect(),
            SchedulerKind::Bernoulli { p } => loop {
                let drawn: Vec<usize> = (0..n).filter(|_| rng::bernoulli(rng, p)).collect();
                if !drawn.is_empty() {
                    break drawn;
                }
            },
            SchedulerKind::RoundRobin { window } => {
                let k = window.min(n);
                let mut m: Vec<usize> = (0..k).map(|i| (self.cursor + i) % n).collect();
                self.cursor = (self.cursor + k) % n;
                m.sort_unstable();
                m
            }
            SchedulerKind::BoundedDelay { delay } => loop {
                let drawn: Vec<usize> = (0..n)
                    .filter(|&i| {
                        let forced = self.idle[i] + 1 >= delay;
                        let coin = rng::coin(rng) == rng::Coin::Zero;
                        forced || coin
                    })
                    .collect();
                if !drawn.is_empty() {
                    break drawn;
                }
            },
        };
        let set = ActivationSet { members };
        for (i, idle) in self.idle.iter_mut().enumerate() {
            if set.contains(i) {
                *idle = 0;
            } else {
                *idle += 1;
            }
        }
        set
    }
}

/// Free-function form of [`Scheduler::next_activation`].
pub fn next_activation(sched: &mut Scheduler, rng: &mut dyn RngCore) -> ActivationSet {
    sched.next_activation(rng)
}

/// Result of checking a finite trace for bounded activation gaps.
///
/// Fairness proper is a statement about infinite executions; the auditor
/// checks the surrogate "every robot active at least once in every `window`
/// consecutive instants".
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FairnessVerdict {
    Pass {
        max_gap: usize,
    },
    Fail {
        culprit: usize,
        gap: usize,
        /// First instant of the offending idle run.
        from_instant: usize,
    },
    /// The trace is shorter than the window.
    Inconclusive {
        max_gap: usize,
    },
}

impl FairnessVerdict {
    pub fn passed(&self) -> bool {
        matches!(self, FairnessVerdict::Pass { .. })
    }

    pub fn max_gap(&self) -> usize {
        match *self {
            FairnessVerdict::Pass { max_gap } | FairnessVerdict::Inconclusive { max_gap } => max_gap,
            FairnessVerdict::Fail { gap, .. } => gap,
        }
    }
}

/// Audits a sequence of activation sets over `n` robots. The gap of a robot
/// is its longest run of consecutive instants without activation.
pub fn audit_activations(n: usize, sets: &[ActivationSet], window: usize) -> FairnessVerdict {
    assert!(window >= 1, "window must be positive");
    let mut worst: Option<(usize, usize, usize)> = None; // (gap, robot, start)
    for robot in 0..n {
        let mut run = 0;
        let mut start = 0;
        for (t, set) in sets.iter().enumerate() {
            if set.contains(robot) {
                run = 0;
            } else {
                if run == 0 {
                    start = t;
                }
                run += 1;
                if worst.is_none_or(|(g, _, _)| run > g) {
                    worst = Some((run, robot, start));
                }
            }
        }
    }
    let (max_gap, culprit, from_instant) = worst.unwrap_or((0, 0, 0));
    if max_gap >= window && max_gap > 0 {
        FairnessVerdict::Fail {
            culprit,
            gap: max_gap,
            from_instant,
        }
    } else if window > sets.len() {
        FairnessVerdict::Inconclusive { max_gap }
    } else {
        FairnessVerdict::Pass { max_gap }
    }
}

pub fn audit_fairness(trace: &Trace, window: usize) -> FairnessVerdict {
    let sets: Vec<ActivationSet> = trace.records.iter().map(|r| r.activation.clone()).collect();
    audit_activations(trace.n(), &sets, window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use rand_core::SeedableRng;

    #[test]
    fn parse_and_display() {
        for s in ["full_synchronous", "bernoulli:0.25", "round_robin:2", "bounded_delay:4"] {
            let k: SchedulerKind = s.parse().unwrap();
            assert_eq!(k.to_string(), s);
        }
        assert!("bernoulli:0".parse::<SchedulerKind>().is_err());
        assert!("bernoulli:1.5".parse::<SchedulerKind>().is_err());
        assert!("bounded_delay".parse::<SchedulerKind>().is_err());
        assert!("demonic".parse::<SchedulerKind>().is_err());
    }

    #[test]
    fn full_synchronous_activates_all() {
        let mut s = Scheduler::new(SchedulerKind::FullSynchronous, 3);
        let mut rng = SimRng::seed_from_u64(0);
        assert_eq!(s.next_activation(&mut rng).members, vec![0, 1, 2]);
    }

    #[test]
    fn round_robin_cycles_singletons() {
        let mut s = Scheduler::new(SchedulerKind::RoundRobin { window: 1 }, 4);
        let mut rng = SimRng::seed_from_u64(0);
        let got: Vec<Vec<usize>> = (0..5).map(|_| s.next_activation(&mut rng).members).collect();
        assert_eq!(got, vec![vec![0], vec![1], vec![2], vec![3], vec![0]]);
        let mut s = Scheduler::new(SchedulerKind::RoundRobin { window: 3 }, 4);
        assert_eq!(s.next_activation(&mut rng).members, vec![0, 1, 2]);
        assert_eq!(s.next_activation(&mut rng).members, vec![0, 1, 3]);
    }

    #[test]
    fn bernoulli_never_empty() {
        let mut s = Scheduler::new(SchedulerKind::Bernoulli { p: 0.5 }, 1);
        let mut rng = SimRng::seed_from_u64(5);
        for _ in 0..1_000_000 {
            assert!(!s.next_activation(&mut rng).is_empty());
        }
    }

    #[test]
    fn bernoulli_inclusion_rate() {
        let n = 4;
        let mut s = Scheduler::new(SchedulerKind::Bernoulli { p: 0.3 }, n);
        let mut rng = SimRng::seed_from_u64(6);
        let draws = 100_000;
        let mut hits = vec![0usize; n];
        for _ in 0..draws {
            for m in s.next_activation(&mut rng).members {
                hits[m] += 1;
            }
        }
        // Conditioned on non-empty: p / (1 - (1-p)^n).
        let expected = 0.3 / (1.0 - 0.7f64.powi(4));
        for h in hits {
            assert!((h as f64 / draws as f64 - expected).abs() < 0.01);
        }
    }

    #[test]
    fn bounded_delay_gap() {
        for seed in 0..100 {
            let mut s = Scheduler::new(SchedulerKind::BoundedDelay { delay: 3 }, 6);
            let mut rng = SimRng::seed_from_u64(seed);
            let sets: Vec<ActivationSet> = (0..1000).map(|_| s.next_activation(&mut rng)).collect();
            let v = audit_activations(6, &sets, 3);
            assert!(v.passed(), "{v:?}");
            assert!(v.max_gap() <= 2);
        }
    }

    #[test]
    fn audit_detects_starved_robot() {
        let sets: Vec<ActivationSet> = (0..10).map(|_| ActivationSet::new(vec![0, 1])).collect();
        match audit_activations(3, &sets, 5) {
            FairnessVerdict::Fail { culprit, gap, from_instant } => {
                assert_eq!((culprit, gap, from_instant), (2, 10, 0));
            }
            v => panic!("expected failure, got {v:?}"),
        }
        let full: Vec<ActivationSet> = (0..10).map(|_| ActivationSet::all(3)).collect();
        assert_eq!(audit_activations(3, &full, 1), FairnessVerdict::Pass { max_gap: 0 });
        assert_eq!(
            audit_activations(3, &full[..2], 5),
            FairnessVerdict::Inconclusive { max_gap: 0 }
        );
    }
}

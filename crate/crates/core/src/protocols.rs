//! Per-robot decision functions.
//!
//! A protocol maps a view (plus capabilities, the robot's travel bound in
//! local units and a random source) to an intended target in the robot's
//! local frame. Nothing else is visible to it: no ordinal, no history. The
//! engine converts the target to global coordinates and applies the travel
//! cap.

use std::fmt;
use std::str::FromStr;

use rand_core::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, compute_voronoi, distance, GeometryError, Point};
use crate::rng::{self, Coin};
use crate::world::{Capabilities, View};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("{protocol} requires multiplicity detection")]
    NeedsMultiplicityDetection { protocol: &'static str },
    #[error("{protocol} requires localization knowledge (a shared coordinate system)")]
    NeedsLocalization { protocol: &'static str },
    #[error("{protocol} requires n {requirement}, got n = {actual}")]
    Population {
        protocol: &'static str,
        requirement: &'static str,
        actual: usize,
    },
    #[error("{protocol} expects at most one position with a strict multiplicity, found {found}")]
    TooManyMultiplicities { protocol: &'static str, found: usize },
    #[error("pattern formation requires pairwise distinct robot positions")]
    DuplicatePositions,
    #[error("pattern has {pattern} points but there are {robots} robots")]
    PatternSize { pattern: usize, robots: usize },
    #[error("pattern points must be finite and pairwise distinct")]
    BadPattern,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Which rule produced a decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Scatter,
    PatternFormation,
    Gathering,
    PairGather,
    Deterministic,
}

/// An intended target in the deciding robot's local frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub target: Point,
    pub coin: Option<Coin>,
    pub branch: Branch,
}

impl Decision {
    fn fixed(target: Point, branch: Branch) -> Self {
        Decision {
            target,
            coin: None,
            branch,
        }
    }
}

/// A uniform, oblivious robot program.
pub trait Protocol: Send + Sync {
    fn name(&self) -> &'static str;

    fn decide(
        &self,
        view: &View,
        caps: &Capabilities,
        sigma: f64,
        rng: &mut dyn RngCore,
    ) -> Result<Decision, ProtocolError>;
}

fn population(view: &View) -> usize {
    view.population().unwrap_or(view.points.len())
}

fn require_counts(caps: &Capabilities, view: &View, protocol: &'static str) -> Result<(), ProtocolError> {
    if caps.multiplicity_detection && view.counts.is_some() {
        Ok(())
    } else {
        Err(ProtocolError::NeedsMultiplicityDetection { protocol })
    }
}

fn require_localization(caps: &Capabilities, protocol: &'static str) -> Result<(), ProtocolError> {
    if caps.localization_knowledge {
        Ok(())
    } else {
        Err(ProtocolError::NeedsLocalization { protocol })
    }
}

/// The scatter procedure with the coin already drawn.
pub fn scatter_with_coin(view: &View, sigma: f64, coin: Coin, rng: &mut dyn RngCore) -> Decision {
    let target = match coin {
        Coin::One => view.own,
        Coin::Zero => {
            let diagram = compute_voronoi(&view.points)
                .expect("view points are distinct and finite by construction");
            let cell = diagram
                .cell_of(view.own)
                .expect("observer position is one of the view points");
            geometry::sample_in_cell(cell, view.own, sigma, rng)
        }
    };
    Decision {
        target,
        coin: Some(coin),
        branch: Branch::Scatter,
    }
}

/// One activation of the scatter procedure: flip a fair coin; on 1 stay, on
/// 0 move to a fresh point of the robot's own open Voronoi cell.
pub fn scatter_step(view: &View, sigma: f64, rng: &mut dyn RngCore) -> Decision {
    let c = rng::coin(rng);
    scatter_with_coin(view, sigma, c, rng)
}

/// Scatter while some position holds two or more robots, otherwise run the
/// pattern-formation plug-in.
pub fn ssa_pf_step(
    view: &View,
    caps: &Capabilities,
    sigma: f64,
    rng: &mut dyn RngCore,
    apf: &dyn Protocol,
) -> Result<Decision, ProtocolError> {
    require_counts(caps, view, "ssa_pf")?;
    let strict = view.multiplicity_points().map_or(0, |m| m.len());
    if strict >= 1 {
        Ok(scatter_step(view, sigma, rng))
    } else {
        apf.decide(view, caps, sigma, rng)
    }
}

/// Scatter while two or more positions hold several robots, otherwise run
/// the gathering plug-in.
pub fn ssa_gp_step(
    view: &View,
    caps: &Capabilities,
    sigma: f64,
    rng: &mut dyn RngCore,
    agp: &dyn Protocol,
) -> Result<Decision, ProtocolError> {
    require_counts(caps, view, "ssa_gp")?;
    let n = population(view);
    if n < 3 {
        return Err(ProtocolError::Population {
            protocol: "ssa_gp",
            requirement: ">= 3",
            actual: n,
        });
    }
    let strict = view.multiplicity_points().map_or(0, |m| m.len());
    if strict >= 2 {
        Ok(scatter_step(view, sigma, rng))
    } else {
        agp.decide(view, caps, sigma, rng)
    }
}

/// Two-robot randomized gathering: on coin 0 jump to the other robot's
/// position, on coin 1 stay.
pub fn pair_gather_step(view: &View, _sigma: f64, rng: &mut dyn RngCore) -> Result<Decision, ProtocolError> {
    let n = population(view);
    if view.points.len() > 2 || n > 2 || (view.counts.is_some() && n != 2) {
        return Err(ProtocolError::Population {
            protocol: "pair_gather",
            requirement: "= 2",
            actual: n,
        });
    }
    let c = rng::coin(rng);
    let target = match c {
        Coin::Zero => view.others().next().unwrap_or(view.own),
        Coin::One => view.own,
    };
    Ok(Decision {
        target,
        coin: Some(c),
        branch: Branch::PairGather,
    })
}

/// Reference deterministic gathering for `n >= 3` under a shared frame.
///
/// Without a multiplicity point, the robot at the lexicographically second
/// occupied position walks to the smallest one. With exactly one
/// multiplicity point `m`, the robot nearest to `m` (lexicographic
/// tie-break) walks to it. One robot moves per configuration, and no other
/// robot lies on its path, so no second multiplicity point can appear.
pub fn reference_agp_step(view: &View, caps: &Capabilities, _sigma: f64) -> Result<Decision, ProtocolError> {
    require_localization(caps, "reference_agp")?;
    require_counts(caps, view, "reference_agp")?;
    let n = population(view);
    if n < 3 {
        return Err(ProtocolError::Population {
            protocol: "reference_agp",
            requirement: ">= 3",
            actual: n,
        });
    }
    let strict = view.multiplicity_points().unwrap_or_default();
    let stay = Decision::fixed(view.own, Branch::Gathering);
    match strict.as_slice() {
        [] => {
            let (p_min, p_second) = (view.points[0], view.points[1]);
            if view.own == p_second {
                Ok(Decision::fixed(p_min, Branch::Gathering))
            } else {
                Ok(stay)
            }
        }
        [(m, _)] => {
            let m = *m;
            let mut mover: Option<(f64, Point)> = None;
            for q in view.points.iter().copied().filter(|q| *q != m) {
                let d = distance(q, m);
                if mover.is_none_or(|(best, _)| d < best) {
                    mover = Some((d, q));
                }
            }
            match mover {
                Some((_, q)) if q == view.own => Ok(Decision::fixed(m, Branch::Gathering)),
                _ => Ok(stay),
            }
        }
        more => Err(ProtocolError::TooManyMultiplicities {
            protocol: "reference_agp",
            found: more.len(),
        }),
    }
}

/// Reference deterministic pattern formation under a shared frame.
///
/// Robots and pattern points are both sorted lexicographically and paired by
/// rank. The mover is the highest-ranked robot lying before its target, or
/// failing that the lowest-ranked robot lying after its target. No other
/// robot lies lexicographically between that robot and its target, so ranks
/// never change while it travels and it cannot run into anyone.
pub fn reference_apf_step(
    view: &View,
    caps: &Capabilities,
    _sigma: f64,
    pattern: &[Point],
) -> Result<Decision, ProtocolError> {
    require_localization(caps, "reference_apf")?;
    if view.counts.as_ref().is_some_and(|c| c.iter().any(|&k| k > 1)) {
        return Err(ProtocolError::DuplicatePositions);
    }
    if view.points.len() != pattern.len() {
        return Err(ProtocolError::PatternSize {
            pattern: pattern.len(),
            robots: view.points.len(),
        });
    }
    let mut targets = pattern.to_vec();
    targets.sort_by(|a, b| a.lex_cmp(b));
    let robots = &view.points;

    let before = (0..robots.len())
        .rev()
        .find(|&i| robots[i].lex_cmp(&targets[i]).is_lt());
    let mover = before.or_else(|| (0..robots.len()).find(|&i| robots[i].lex_cmp(&targets[i]).is_gt()));
    match mover {
        Some(i) if robots[i] == view.own => Ok(Decision::fixed(targets[i], Branch::PatternFormation)),
        _ => Ok(Decision::fixed(view.own, Branch::PatternFormation)),
    }
}

/// Coin-free programs used to exhibit the impossibility of deterministic
/// scattering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StubKind {
    /// One local unit along local +x.
    UnitStepX,
    Stay,
    /// Centroid of the occupied points, offset by (0.5, 0.25).
    CentroidOffset,
    /// Two units directly away from the farthest other point, or along +y
    /// when alone.
    FleeFarthest,
    /// A fixed affine map of the own position.
    Affine,
}

impl StubKind {
    pub const ALL: [StubKind; 5] = [
        StubKind::UnitStepX,
        StubKind::Stay,
        StubKind::CentroidOffset,
        StubKind::FleeFarthest,
        StubKind::Affine,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            StubKind::UnitStepX => "unit_step_x",
            StubKind::Stay => "stay",
            StubKind::CentroidOffset => "centroid_offset",
            StubKind::FleeFarthest => "flee_farthest",
            StubKind::Affine => "affine",
        }
    }
}

impl FromStr for StubKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StubKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown deterministic stub `{s}`"))
    }
}

/// Default coin-free program: step one local unit along +x.
pub fn deterministic_scatter_stub(view: &View) -> Point {
    stub_target(StubKind::UnitStepX, view)
}

pub fn stub_target(kind: StubKind, view: &View) -> Point {
    let own = view.own;
    match kind {
        StubKind::UnitStepX => own + Point::new(1.0, 0.0),
        StubKind::Stay => own,
        StubKind::CentroidOffset => {
            let k = view.points.len() as f64;
            let sum = view.points.iter().fold(Point::ORIGIN, |acc, &p| acc + p);
            sum * (1.0 / k) + Point::new(0.5, 0.25)
        }
        StubKind::FleeFarthest => {
            let far = view
                .others()
                .fold(None::<Point>, |best, q| match best {
                    Some(b) if distance(b, own) >= distance(q, own) => Some(b),
                    _ => Some(q),
                });
            match far {
                Some(q) => {
                    let away = own - q;
                    own + away * (2.0 / away.norm())
                }
                None => own + Point::new(0.0, 2.0),
            }
        }
        StubKind::Affine => Point::new(0.5 * own.x - own.y + 1.0, 0.5 * own.y + own.x - 2.0),
    }
}

pub struct Scatter;

impl Protocol for Scatter {
    fn name(&self) -> &'static str {
        "scatter"
    }

    fn decide(&self, view: &View, _caps: &Capabilities, sigma: f64, rng: &mut dyn RngCore) -> Result<Decision, ProtocolError> {
        Ok(scatter_step(view, sigma, rng))
    }
}

pub struct SsaPf {
    pub apf: Box<dyn Protocol>,
}

impl Protocol for SsaPf {
    fn name(&self) -> &'static str {
        "ssa_pf"
    }

    fn decide(&self, view: &View, caps: &Capabilities, sigma: f64, rng: &mut dyn RngCore) -> Result<Decision, ProtocolError> {
        ssa_pf_step(view, caps, sigma, rng, self.apf.as_ref())
    }
}

pub struct SsaGp {
    pub agp: Box<dyn Protocol>,
}

impl Protocol for SsaGp {
    fn name(&self) -> &'static str {
        "ssa_gp"
    }

    fn decide(&self, view: &View, caps: &Capabilities, sigma: f64, rng: &mut dyn RngCore) -> Result<Decision, ProtocolError> {
        ssa_gp_step(view, caps, sigma, rng, self.agp.as_ref())
    }
}

pub struct PairGather;

impl Protocol for PairGather {
    fn name(&self) -> &'static str {
        "pair_gather"
    }

    fn decide(&self, view: &View, _caps: &Capabilities, sigma: f64, rng: &mut dyn RngCore) -> Result<Decision, ProtocolError> {
        pair_gather_step(view, sigma, rng)
    }
}

pub struct ReferenceAgp;

impl Protocol for ReferenceAgp {
    fn name(&self) -> &'static str {
        "reference_agp"
    }

    fn decide(&self, view: &View, caps: &Capabilities, sigma: f64, _rng: &mut dyn RngCore) -> Result<Decision, ProtocolError> {
        reference_agp_step(view, caps, sigma)
    }
}

pub struct ReferenceApf {
    pub pattern: Vec<Point>,
}

impl Protocol for ReferenceApf {
    fn name(&self) -> &'static str {
        "reference_apf"
    }

    fn decide(&self, view: &View, caps: &Capabilities, sigma: f64, _rng: &mut dyn RngCore) -> Result<Decision, ProtocolError> {
        reference_apf_step(view, caps, sigma, &self.pattern)
    }
}

/// Gathering for any `n >= 2`: the pair rule for two robots, the
/// scatter-guarded reference gathering otherwise.
pub struct Gather {
    ssa_gp: SsaGp,
}

impl Default for Gather {
    fn default() -> Self {
        Gather {
            ssa_gp: SsaGp {
                agp: Box::new(ReferenceAgp),
            },
        }
    }
}

impl Protocol for Gather {
    fn name(&self) -> &'static str {
        "gather"
    }

    fn decide(&self, view: &View, caps: &Capabilities, sigma: f64, rng: &mut dyn RngCore) -> Result<Decision, ProtocolError> {
        require_counts(caps, view, "gather")?;
        match population(view) {
            1 => Ok(Decision::fixed(view.own, Branch::Gathering)),
            2 => pair_gather_step(view, sigma, rng),
            _ => self.ssa_gp.decide(view, caps, sigma, rng),
        }
    }
}

pub struct DeterministicStub(pub StubKind);

impl Protocol for DeterministicStub {
    fn name(&self) -> &'static str {
        self.0.name()
    }

    fn decide(&self, view: &View, _caps: &Capabilities, _sigma: f64, _rng: &mut dyn RngCore) -> Result<Decision, ProtocolError> {
        Ok(Decision::fixed(stub_target(self.0, view), Branch::Deterministic))
    }
}

/// Serializable protocol selection, as carried by scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProtocolSpec {
    Scatter,
    /// Self-stabilizing pattern formation with the reference plug-in.
    SsaPf { pattern: Vec<Point> },
    /// Self-stabilizing gathering (`n >= 3`) with the reference plug-in.
    SsaGp,
    PairGather,
    /// `pair_gather` for two robots, `ssa_gp` otherwise.
    Gather,
    Stub { stub: StubKind },
}

impl ProtocolSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ProtocolSpec::Scatter => "scatter",
            ProtocolSpec::SsaPf { .. } => "ssa_pf",
            ProtocolSpec::SsaGp => "ssa_gp",
            ProtocolSpec::PairGather => "pair_gather",
            ProtocolSpec::Gather => "gather",
            ProtocolSpec::Stub { stub } => stub.name(),
        }
    }

    pub fn build(&self) -> Box<dyn Protocol> {
        match self {
            ProtocolSpec::Scatter => Box::new(Scatter),
            ProtocolSpec::SsaPf { pattern } => Box::new(SsaPf {
                apf: Box::new(ReferenceApf {
                    pattern: pattern.clone(),
                }),
            }),
            ProtocolSpec::SsaGp => Box::new(SsaGp {
                agp: Box::new(ReferenceAgp),
            }),
            ProtocolSpec::PairGather => Box::new(PairGather),
            ProtocolSpec::Gather => Box::new(Gather::default()),
            ProtocolSpec::Stub { stub } => Box::new(DeterministicStub(*stub)),
        }
    }

    /// Checks population size and capabilities before any step runs.
    pub fn validate(&self, n: usize, caps: &Capabilities) -> Result<(), ProtocolError> {
        let needs_md = |protocol| {
            if caps.multiplicity_detection {
                Ok(())
            } else {
                Err(ProtocolError::NeedsMultiplicityDetection { protocol })
            }
        };
        match self {
            ProtocolSpec::Scatter | ProtocolSpec::Stub { .. } => Ok(()),
            ProtocolSpec::SsaPf { pattern } => {
                needs_md("ssa_pf")?;
                require_localization(caps, "ssa_pf")?;
                if pattern.len() != n {
                    return Err(ProtocolError::PatternSize {
                        pattern: pattern.len(),
                        robots: n,
                    });
                }
                let mut sorted = pattern.clone();
                sorted.sort_by(|a, b| a.lex_cmp(b));
                if sorted.iter().any(|p| !p.is_finite()) || sorted.windows(2).any(|w| w[0] == w[1]) {
                    return Err(ProtocolError::BadPattern);
                }
                Ok(())
            }
            ProtocolSpec::SsaGp => {
                needs_md("ssa_gp")?;
                require_localization(caps, "ssa_gp")?;
                if n < 3 {
                    return Err(ProtocolError::Population {
                        protocol: "ssa_gp",
                        requirement: ">= 3",
                        actual: n,
                    });
                }
                Ok(())
            }
            ProtocolSpec::PairGather => {
                if n != 2 {
                    return Err(ProtocolError::Population {
                        protocol: "pair_gather",
                        requirement: "= 2",
                        actual: n,
                    });
                }
                Ok(())
            }
            ProtocolSpec::Gather => {
                needs_md("gather")?;
                require_localization(caps, "gather")?;
                if n < 2 {
                    return Err(ProtocolError::Population {
                        protocol: "gather",
                        requirement: ">= 2",
                        actual: n,
                    });
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for ProtocolSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

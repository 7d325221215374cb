//! Robot population state: configurations, multiplicity structure, local
//! frames and view construction.

use std::fmt;

use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::geometry::Point;
use crate::rng;

/// Rotation stored as a unit vector so that frames serialize exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation {
    pub cos: f64,
    pub sin: f64,
}

impl Rotation {
    pub const IDENTITY: Rotation = Rotation { cos: 1.0, sin: 0.0 };

    pub fn from_angle(radians: f64) -> Self {
        Rotation {
            cos: radians.cos(),
            sin: radians.sin(),
        }
    }

    pub fn angle(&self) -> f64 {
        self.sin.atan2(self.cos)
    }
}

/// A robot's private coordinate system: a similarity of the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalFrame {
    /// Global position of the local origin.
    pub origin: Point,
    pub rotation: Rotation,
    /// Mirror the local y axis (chirality).
    pub reflect: bool,
    /// Global length of one local unit.
    pub unit: f64,
}

impl Default for LocalFrame {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl LocalFrame {
    pub const IDENTITY: LocalFrame = LocalFrame {
        origin: Point::ORIGIN,
        rotation: Rotation::IDENTITY,
        reflect: false,
        unit: 1.0,
    };

    pub fn new(origin: Point, angle: f64, reflect: bool, unit: f64) -> Self {
        LocalFrame {
            origin,
            rotation: Rotation::from_angle(angle),
            reflect,
            unit,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    pub fn is_valid(&self) -> bool {
        let r = self.rotation;
        self.origin.is_finite()
            && self.unit.is_finite()
            && self.unit > 0.0
            && r.cos.is_finite()
            && r.sin.is_finite()
            && ((r.cos * r.cos + r.sin * r.sin) - 1.0).abs() < 1e-9
    }

    /// Draws a frame with origin in `[-extent, extent)^2`, uniform rotation,
    /// fair-coin chirality and unit in `[0.5, 2)`.
    pub fn random(extent: f64, rng: &mut dyn RngCore) -> Self {
        let origin = Point::new(
            extent * (2.0 * rng::unit_f64(rng) - 1.0),
            extent * (2.0 * rng::unit_f64(rng) - 1.0),
        );
        let dir = rng::unit_direction(rng);
        let reflect = rng::coin(rng) == rng::Coin::One;
        let unit = 0.5 + 1.5 * rng::unit_f64(rng);
        LocalFrame {
            origin,
            rotation: Rotation {
                cos: dir.x,
                sin: dir.y,
            },
            reflect,
            unit,
        }
    }

    /// Global point to local coordinates.
    pub fn to_local(&self, q: Point) -> Point {
        if self.is_identity() {
            return q;
        }
        let d = (q - self.origin) * (1.0 / self.unit);
        let Rotation { cos, sin } = self.rotation;
        let x = cos * d.x - sin * d.y;
        let y = sin * d.x + cos * d.y;
        Point::new(x, if self.reflect { -y } else { y })
    }

    /// Local point to global coordinates.
    pub fn to_global(&self, p: Point) -> Point {
        if self.is_identity() {
            return p;
        }
        let y = if self.reflect { -p.y } else { p.y };
        let Rotation { cos, sin } = self.rotation;
        let x = cos * p.x + sin * y;
        let y = -sin * p.x + cos * y;
        Point::new(x, y) * self.unit + self.origin
    }

    /// Global length to local length.
    pub fn length_to_local(&self, len: f64) -> f64 {
        len / self.unit
    }
}

pub fn to_global(frame: &LocalFrame, p_local: Point) -> Point {
    frame.to_global(p_local)
}

pub fn to_local(frame: &LocalFrame, q: Point) -> Point {
    frame.to_local(q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Capabilities {
    pub multiplicity_detection: bool,
    pub localization_knowledge: bool,
}

impl Capabilities {
    pub const NONE: Capabilities = Capabilities {
        multiplicity_detection: false,
        localization_knowledge: false,
    };
    pub const ALL: Capabilities = Capabilities {
        multiplicity_detection: true,
        localization_knowledge: true,
    };
}

/// Bookkeeping record for one robot. The ordinal is never shown to protocols.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Robot {
    pub index: usize,
    pub sigma: f64,
    pub frame: LocalFrame,
}

impl Robot {
    pub fn new(index: usize, sigma: f64) -> Self {
        Robot {
            index,
            sigma,
            frame: LocalFrame::IDENTITY,
        }
    }

    /// The frame the robot actually observes through.
    pub fn effective_frame(&self, caps: &Capabilities) -> LocalFrame {
        if caps.localization_knowledge {
            LocalFrame::IDENTITY
        } else {
            self.frame
        }
    }
}

/// Positions of all robots at one instant, indexed by ordinal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub positions: Vec<Point>,
}

impl Configuration {
    pub fn new(positions: Vec<Point>) -> Self {
        Configuration { positions }
    }

    pub fn colocated(n: usize, at: Point) -> Self {
        Configuration {
            positions: vec![at; n],
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Occupied positions with their robot counts, lexicographically sorted.
    pub fn occupancy(&self) -> Vec<(Point, usize)> {
        occupancy(&self.positions)
    }

    pub fn multiplicity_points(&self) -> Vec<(Point, usize)> {
        multiplicity_points(self)
    }

    pub fn all_distinct(&self) -> bool {
        all_distinct(self)
    }

    /// True iff every robot stands on one exact position.
    pub fn gathered(&self) -> bool {
        self.positions.windows(2).all(|w| w[0] == w[1])
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, p) in self.positions.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{p}")?;
        }
        write!(f, "]")
    }
}

fn occupancy(points: &[Point]) -> Vec<(Point, usize)> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.lex_cmp(b));
    let mut out: Vec<(Point, usize)> = Vec::new();
    for p in sorted {
        match out.last_mut() {
            Some((q, count)) if *q == p => *count += 1,
            _ => out.push((p, 1)),
        }
    }
    out
}

/// Positions occupied by at least two robots (exact equality), with counts.
pub fn multiplicity_points(config: &Configuration) -> Vec<(Point, usize)> {
    config
        .occupancy()
        .into_iter()
        .filter(|&(_, c)| c >= 2)
        .collect()
}

pub fn all_distinct(config: &Configuration) -> bool {
    multiplicity_points(config).is_empty()
}

/// The configuration as one robot perceives it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct View {
    /// Distinct occupied positions in the observer's frame, lexicographically
    /// sorted so that nothing depends on robot ordinals.
    pub points: Vec<Point>,
    /// Robots per entry of `points`, present iff multiplicity detection is on.
    pub counts: Option<Vec<usize>>,
    /// The observer's own position in its frame.
    pub own: Point,
}

impl View {
    /// Builds a view directly from local points (used by tests and plug-ins).
    pub fn from_local(points: &[Point], own: Point, with_counts: bool) -> Self {
        let occ = occupancy(points);
        View {
            points: occ.iter().map(|&(p, _)| p).collect(),
            counts: with_counts.then(|| occ.iter().map(|&(_, c)| c).collect()),
            own,
        }
    }

    /// Number of robots, when it can be known from the view.
    pub fn population(&self) -> Option<usize> {
        self.counts.as_ref().map(|c| c.iter().sum())
    }

    /// Points carrying a strict multiplicity; `None` without counts.
    pub fn multiplicity_points(&self) -> Option<Vec<(Point, usize)>> {
        self.counts.as_ref().map(|counts| {
            self.points
                .iter()
                .zip(counts)
                .filter(|&(_, &c)| c >= 2)
                .map(|(&p, &c)| (p, c))
                .collect()
        })
    }

    pub fn others(&self) -> impl Iterator<Item = Point> + '_ {
        self.points.iter().copied().filter(move |p| *p != self.own)
    }
}

/// Expresses `config` in `observer`'s frame, collapsing or counting
/// co-located robots according to `caps`.
pub fn build_view(config: &Configuration, observer: &Robot, caps: &Capabilities) -> View {
    assert!(
        observer.index < config.len(),
        "robot {} is not part of a configuration of {} robots",
        observer.index,
        config.len()
    );
    let frame = observer.effective_frame(caps);
    let local: Vec<Point> = config.positions.iter().map(|&q| frame.to_local(q)).collect();
    View::from_local(
        &local,
        local[observer.index],
        caps.multiplicity_detection,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::distance;
    use crate::rng::SimRng;
    use proptest::prelude::*;
    use rand_core::SeedableRng;

    fn p(x: f64, y: f64) -> Point {
        Point::new(x, y)
    }

    #[test]
    fn identity_view_is_global() {
        let config = Configuration::new(vec![p(0.0, 0.0), p(3.0, 1.0), p(-2.0, 5.0)]);
        for caps in [Capabilities::NONE, Capabilities::ALL] {
            let v = build_view(&config, &Robot::new(1, 1.0), &caps);
            let mut expected = config.positions.clone();
            expected.sort_by(|a, b| a.lex_cmp(b));
            assert_eq!(v.points, expected);
            assert_eq!(v.own, p(3.0, 1.0));
        }
    }

    #[test]
    fn scaled_translated_frame() {
        let frame = LocalFrame::new(p(1.0, 0.0), 0.0, false, 2.0);
        assert_eq!(frame.to_local(p(3.0, 0.0)), p(1.0, 0.0));
        assert_eq!(frame.to_global(p(1.0, 0.0)), p(3.0, 0.0));
        assert_eq!(LocalFrame::IDENTITY.to_global(p(7.5, -2.0)), p(7.5, -2.0));
    }

    #[test]
    fn localization_knowledge_forces_identity() {
        let config = Configuration::new(vec![p(3.0, 0.0), p(0.0, 0.0)]);
        let mut robot = Robot::new(0, 1.0);
        robot.frame = LocalFrame::new(p(1.0, 0.0), 1.0, true, 2.0);
        let caps = Capabilities {
            multiplicity_detection: false,
            localization_knowledge: true,
        };
        assert_eq!(build_view(&config, &robot, &caps).own, p(3.0, 0.0));
        assert_ne!(build_view(&config, &robot, &Capabilities::NONE).own, p(3.0, 0.0));
    }

    #[test]
    fn colocated_robots_collapse_or_count() {
        let config = Configuration::new(vec![p(1.0, 1.0), p(1.0, 1.0), p(4.0, 0.0)]);
        let off = build_view(&config, &Robot::new(0, 1.0), &Capabilities::NONE);
        assert_eq!(off.points, vec![p(1.0, 1.0), p(4.0, 0.0)]);
        assert!(off.counts.is_none());
        let caps = Capabilities {
            multiplicity_detection: true,
            localization_knowledge: false,
        };
        let on = build_view(&config, &Robot::new(0, 1.0), &caps);
        assert_eq!(on.counts, Some(vec![2, 1]));
        assert_eq!(on.population(), Some(3));
        assert_eq!(on.multiplicity_points(), Some(vec![(p(1.0, 1.0), 2)]));
    }

    #[test]
    fn colocated_robots_get_identical_views() {
        let config = Configuration::new(vec![p(1.0, 1.0), p(5.0, 2.0), p(1.0, 1.0)]);
        let a = build_view(&config, &Robot::new(0, 1.0), &Capabilities::NONE);
        let b = build_view(&config, &Robot::new(2, 1.0), &Capabilities::NONE);
        assert_eq!(a, b);
    }

    #[test]
    fn multiplicity_examples() {
        let distinct = Configuration::new(vec![p(0.0, 0.0), p(1.0, 0.0)]);
        assert!(multiplicity_points(&distinct).is_empty());
        assert!(all_distinct(&distinct));
        assert_eq!(
            multiplicity_points(&Configuration::colocated(5, p(0.0, 0.0))),
            vec![(p(0.0, 0.0), 5)]
        );
        let mixed = Configuration::new(vec![
            p(0.0, 0.0),
            p(0.0, 0.0),
            p(1.0, 1.0),
            p(2.0, 2.0),
            p(2.0, 2.0),
        ]);
        assert_eq!(
            multiplicity_points(&mixed),
            vec![(p(0.0, 0.0), 2), (p(2.0, 2.0), 2)]
        );
        assert!(!all_distinct(&Configuration::colocated(2, p(0.0, 0.0))));
        assert!(all_distinct(&Configuration::new(vec![p(9.0, 9.0)])));
        // Signed zeros are the same position.
        assert!(!all_distinct(&Configuration::new(vec![p(0.0, -0.0), p(-0.0, 0.0)])));
    }

    #[test]
    fn round_trip_random_frames() {
        let mut rng = SimRng::seed_from_u64(77);
        for _ in 0..10_000 {
            let frame = LocalFrame::random(100.0, &mut rng);
            assert!(frame.is_valid());
            let q = p(
                200.0 * rng::unit_f64(&mut rng) - 100.0,
                200.0 * rng::unit_f64(&mut rng) - 100.0,
            );
            let back = frame.to_global(frame.to_local(q));
            let scale = q.norm().max(frame.origin.norm()).max(1.0);
            assert!(distance(back, q) <= 1e-12 * scale * 4.0, "{q} -> {back}");
        }
    }

    proptest! {
        #[test]
        fn views_are_anonymous(
            pts in prop::collection::vec((-50i32..50, -50i32..50), 1..8),
            shift in 0usize..8,
        ) {
            let positions: Vec<Point> = pts.iter().map(|&(x, y)| p(x as f64, y as f64)).collect();
            let n = positions.len();
            let mut rotated = positions.clone();
            rotated.rotate_left(shift % n);
            let a = Configuration::new(positions);
            let b = Configuration::new(rotated);
            // The robot that was ordinal 0 is now at ordinal (n - shift) % n.
            let caps = Capabilities { multiplicity_detection: true, localization_knowledge: false };
            let va = build_view(&a, &Robot::new(0, 1.0), &caps);
            let vb = build_view(&b, &Robot::new((n - shift % n) % n, 1.0), &caps);
            prop_assert_eq!(va, vb);
        }

        #[test]
        fn views_preserve_distance_ratios(seed in any::<u64>()) {
            let mut rng = SimRng::seed_from_u64(seed);
            let frame = LocalFrame::random(10.0, &mut rng);
            let pts: Vec<Point> = (0..3)
                .map(|_| p(20.0 * rng::unit_f64(&mut rng) - 10.0, 20.0 * rng::unit_f64(&mut rng) - 10.0))
                .collect();
            let l: Vec<Point> = pts.iter().map(|&q| frame.to_local(q)).collect();
            let g01 = distance(pts[0], pts[1]);
            let g02 = distance(pts[0], pts[2]);
            prop_assume!(g01 > 1e-6 && g02 > 1e-6);
            let ratio_global = g01 / g02;
            let ratio_local = distance(l[0], l[1]) / distance(l[0], l[2]);
            prop_assert!((ratio_global - ratio_local).abs() <= 1e-9 * ratio_global.max(1.0));
        }
    }
}

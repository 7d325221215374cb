//! Planar geometry: points, Voronoi cells as intersections of open
//! half-planes, and sampling of movement targets strictly inside a cell.
//!
//! Membership is a strict comparison everywhere. A point lying exactly on a
//! bisector belongs to no cell.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use rand_core::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

/// Smallest step drawn by [`sample_in_cell`], as a fraction of `sigma`.
pub const MIN_STEP_FRACTION: f64 = 1e-3;

const MAX_SAMPLE_ATTEMPTS: usize = 64;
const MAX_STEP_HALVINGS: usize = 80;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("at least one site is required")]
    NoSites,
    #[error("sites {first} and {second} coincide at {point}; sites must be pairwise distinct")]
    DuplicateSite {
        first: usize,
        second: usize,
        point: Point,
    },
    #[error("site {index} has a non-finite coordinate")]
    NonFinite { index: usize },
}

/// A point (or free vector) in the Euclidean plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn midpoint(self, other: Point) -> Point {
        Point::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }

    /// Lexicographic order on (x, y). Coordinates are finite, so this is total;
    /// `-0.0` and `0.0` compare equal, consistent with `==`.
    pub fn lex_cmp(&self, other: &Point) -> Ordering {
        self.x
            .partial_cmp(&other.x)
            .unwrap_or(Ordering::Equal)
            .then(self.y.partial_cmp(&other.y).unwrap_or(Ordering::Equal))
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }
}

impl Neg for Point {
    type Output = Point;
    fn neg(self) -> Point {
        Point::new(-self.x, -self.y)
    }
}

/// Euclidean distance. Zero iff the coordinates are exactly equal.
pub fn distance(p: Point, q: Point) -> f64 {
    (p - q).norm()
}

/// Open half-plane `{ q : normal · q < offset }`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfPlane {
    pub normal: Point,
    pub offset: f64,
}

impl HalfPlane {
    /// The open half-plane of points strictly nearer to `site` than to `other`.
    pub fn nearer_to(site: Point, other: Point) -> Self {
        let normal = other - site;
        HalfPlane {
            normal,
            offset: normal.dot(site.midpoint(other)),
        }
    }

    #[inline]
    pub fn contains(&self, q: Point) -> bool {
        self.normal.dot(q) < self.offset
    }

    /// Signed slack `offset - normal·q`; positive strictly inside.
    pub fn slack(&self, q: Point) -> f64 {
        self.offset - self.normal.dot(q)
    }
}

/// The open Voronoi cell of one site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoronoiCell {
    pub site: Point,
    pub halfplanes: Vec<HalfPlane>,
    pub bounded: bool,
}

impl VoronoiCell {
    /// The cell of a lone site: the whole plane.
    pub fn whole_plane(site: Point) -> Self {
        VoronoiCell {
            site,
            halfplanes: Vec::new(),
            bounded: false,
        }
    }

    pub fn contains(&self, q: Point) -> bool {
        cell_contains(self, q)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoronoiDiagram {
    pub sites: Vec<Point>,
    pub cells: Vec<VoronoiCell>,
}

impl VoronoiDiagram {
    /// Index of the cell strictly containing `q`, if any.
    pub fn locate(&self, q: Point) -> Option<usize> {
        self.cells.iter().position(|c| cell_contains(c, q))
    }

    pub fn cell_of(&self, site: Point) -> Option<&VoronoiCell> {
        self.sites
            .iter()
            .position(|s| *s == site)
            .map(|i| &self.cells[i])
    }
}

/// Builds the Voronoi diagram of pairwise distinct sites, one cell per site,
/// each the intersection of the open half-planes nearer to it than to every
/// other site. Constraints that cannot touch the cell boundary are dropped.
pub fn compute_voronoi(sites: &[Point]) -> Result<VoronoiDiagram, GeometryError> {
    if sites.is_empty() {
        return Err(GeometryError::NoSites);
    }
    if let Some(index) = sites.iter().position(|p| !p.is_finite()) {
        return Err(GeometryError::NonFinite { index });
    }
    let mut order: Vec<usize> = (0..sites.len()).collect();
    order.sort_by(|&a, &b| sites[a].lex_cmp(&sites[b]));
    for w in order.windows(2) {
        if sites[w[0]] == sites[w[1]] {
            let (first, second) = (w[0].min(w[1]), w[0].max(w[1]));
            return Err(GeometryError::DuplicateSite {
                first,
                second,
                point: sites[first],
            });
        }
    }

    let cells = sites
        .iter()
        .enumerate()
        .map(|(i, &site)| {
            let all: Vec<HalfPlane> = sites
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &other)| HalfPlane::nearer_to(site, other))
                .collect();
            let halfplanes = reduce_halfplanes(&all);
            let bounded = is_bounded(&halfplanes);
            VoronoiCell {
                site,
                halfplanes,
                bounded,
            }
        })
        .collect();

    Ok(VoronoiDiagram {
        sites: sites.to_vec(),
        cells,
    })
}

/// Keeps a constraint unless the other constraints clearly exclude every
/// point of its boundary line. Borderline cases are kept: a redundant
/// constraint never changes the intersection, a dropped live one would.
fn reduce_halfplanes(all: &[HalfPlane]) -> Vec<HalfPlane> {
    let mut kept = Vec::with_capacity(all.len());
    'outer: for (i, h) in all.iter().enumerate() {
        let n2 = h.normal.norm_sq();
        // Foot of the boundary line and its direction.
        let base = h.normal * (h.offset / n2);
        let dir = Point::new(-h.normal.y, h.normal.x);
        let scale = h.normal.norm();
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for (j, g) in all.iter().enumerate() {
            if i == j {
                continue;
            }
            let a = g.normal.dot(dir);
            let b = g.slack(base);
            let tol = 1e-12 * (g.normal.norm() * (base.norm() + scale) + g.offset.abs());
            if a.abs() <= 1e-14 * g.normal.norm() * dir.norm() {
                if b < -tol {
                    continue 'outer;
                }
                continue;
            }
            let t = b / a;
            if a > 0.0 {
                hi = hi.min(t);
            } else {
                lo = lo.max(t);
            }
        }
        let span_tol = 1e-9 * (1.0 + lo.abs().min(hi.abs()));
        if hi - lo > -span_tol || hi.is_infinite() || lo.is_infinite() {
            kept.push(*h);
        }
    }
    kept
}

/// A cell is unbounded iff some direction makes a non-acute angle with every
/// constraint normal, i.e. the normals leave an angular gap of at least pi.
fn is_bounded(halfplanes: &[HalfPlane]) -> bool {
    if halfplanes.len() < 3 {
        return false;
    }
    let mut angles: Vec<f64> = halfplanes
        .iter()
        .map(|h| h.normal.y.atan2(h.normal.x))
        .collect();
    angles.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let mut max_gap = angles[0] + std::f64::consts::TAU - angles[angles.len() - 1];
    for w in angles.windows(2) {
        max_gap = max_gap.max(w[1] - w[0]);
    }
    max_gap < std::f64::consts::PI - 1e-12
}

/// True iff `q` satisfies every half-plane constraint of the cell strictly.
pub fn cell_contains(cell: &VoronoiCell, q: Point) -> bool {
    cell.halfplanes.iter().all(|h| h.contains(q))
}

/// Distance along the ray `origin + t·dir` (unit `dir`) to the nearest
/// constraint boundary; infinite if the ray never leaves the cell.
pub fn ray_exit_distance(cell: &VoronoiCell, origin: Point, dir: Point) -> f64 {
    cell.halfplanes
        .iter()
        .filter_map(|h| {
            let rate = h.normal.dot(dir);
            (rate > 0.0).then(|| h.slack(origin) / rate)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Draws a point strictly inside `cell`, different from `current`, within
/// `sigma` of it.
///
/// A direction is drawn uniformly; the step length is uniform on
/// `[sigma·MIN_STEP_FRACTION, min(sigma, d/2)]` where `d` is the distance to
/// the cell boundary along that direction. When that interval is empty the
/// step is `min(sigma, d/2) / 2`. Draws that fail the postconditions under
/// rounding are retried with a shorter step, then with a new direction.
///
/// Panics if `current` is not strictly inside `cell` or `sigma` is not
/// positive.
pub fn sample_in_cell(
    cell: &VoronoiCell,
    current: Point,
    sigma: f64,
    rng: &mut dyn RngCore,
) -> Point {
    assert!(sigma > 0.0 && sigma.is_finite(), "sigma must be positive");
    assert!(
        cell_contains(cell, current),
        "current position {current} is not inside the cell of {}",
        cell.site
    );
    for _ in 0..MAX_SAMPLE_ATTEMPTS {
        let dir = rng::unit_direction(rng);
        let exit = ray_exit_distance(cell, current, dir);
        let hi = sigma.min(exit / 2.0);
        let lo = sigma * MIN_STEP_FRACTION;
        let mut step = if hi < lo {
            hi / 2.0
        } else {
            lo + (hi - lo) * rng::unit_f64(rng)
        };
        for _ in 0..MAX_STEP_HALVINGS {
            let p = current + dir * step;
            if p != current && distance(current, p) <= sigma && cell_contains(cell, p) {
                return p;
            }
            if p == current {
                break;
            }
            step /= 2.0;
        }
    }
    panic!(
        "no representable point found near {current} inside the cell of {}",
        cell.site
    );
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use rand_core::SeedableRng;

    fn p(x: f64, y: f64) -> Point {
        Point::new(x, y)
    }

    fn nearest(sites: &[Point], q: Point) -> usize {
        let mut best = 0;
        for (i, s) in sites.iter().enumerate() {
            if distance(*s, q) < distance(sites[best], q) {
                best = i;
            }
        }
        best
    }

    #[test]
    fn distance_examples() {
        assert_eq!(distance(p(0.0, 0.0), p(3.0, 4.0)), 5.0);
        assert_eq!(distance(p(1.0, 1.0), p(1.0, 1.0)), 0.0);
        assert_eq!(distance(p(0.0, 0.0), p(1.0, 1.0)), 2f64.sqrt());
    }

    #[test]
    fn single_site_is_whole_plane() {
        let d = compute_voronoi(&[p(0.0, 0.0)]).unwrap();
        assert!(d.cells[0].halfplanes.is_empty());
        assert!(!d.cells[0].bounded);
        assert!(d.cells[0].contains(p(1e9, -1e9)));
    }

    #[test]
    fn two_sites_bisector_belongs_to_no_cell() {
        let d = compute_voronoi(&[p(0.0, 0.0), p(2.0, 0.0)]).unwrap();
        assert!(cell_contains(&d.cells[0], p(0.9, 0.0)));
        assert!(cell_contains(&d.cells[0], p(0.5, 7.0)));
        assert_eq!(d.locate(p(1.0, 0.0)), None);
        assert_eq!(d.locate(p(1.0, 123.0)), None);
        assert_eq!(d.locate(p(1.1, 0.0)), Some(1));
    }

    #[test]
    fn three_sites_query() {
        let sites = [p(0.0, 0.0), p(4.0, 0.0), p(0.0, 4.0)];
        let d = compute_voronoi(&sites).unwrap();
        assert_eq!(d.locate(p(1.0, 1.0)), Some(0));
        assert_eq!(nearest(&sites, p(1.0, 1.0)), 0);
    }

    #[test]
    fn rejects_duplicates_and_empty() {
        assert_eq!(compute_voronoi(&[]), Err(GeometryError::NoSites));
        let err = compute_voronoi(&[p(1.0, 1.0), p(2.0, 0.0), p(1.0, 1.0)]).unwrap_err();
        assert_eq!(
            err,
            GeometryError::DuplicateSite {
                first: 0,
                second: 2,
                point: p(1.0, 1.0)
            }
        );
        assert!(matches!(
            compute_voronoi(&[p(f64::NAN, 0.0)]),
            Err(GeometryError::NonFinite { index: 0 })
        ));
    }

    #[test]
    fn redundant_constraints_are_dropped() {
        // Collinear sites: the far site cannot shape the cell of the origin.
        let d = compute_voronoi(&[p(0.0, 0.0), p(1.0, 0.0), p(5.0, 0.0)]).unwrap();
        assert_eq!(d.cells[0].halfplanes.len(), 1);
        assert_eq!(d.cells[1].halfplanes.len(), 2);
        // Centre of a 3x3 grid: only the 4 axis neighbours bound it.
        let mut grid = Vec::new();
        for i in -1..=1 {
            for j in -1..=1 {
                grid.push(p(i as f64, j as f64));
            }
        }
        let d = compute_voronoi(&grid).unwrap();
        let centre = d.cell_of(p(0.0, 0.0)).unwrap();
        assert!(centre.bounded);
        // Diagonal neighbours touch the square only at its corners.
        assert!(centre.halfplanes.len() >= 4 && centre.halfplanes.len() <= 8);
        assert!(!d.cell_of(p(1.0, 1.0)).unwrap().bounded);
    }

    #[test]
    fn boundedness() {
        let tri = [p(0.0, 0.0), p(10.0, 0.0), p(0.0, 10.0), p(3.0, 3.0)];
        let d = compute_voronoi(&tri).unwrap();
        assert!(d.cells[3].bounded);
        assert!(!d.cells[0].bounded);
        let strip = compute_voronoi(&[p(-1.0, 0.0), p(0.0, 0.0), p(1.0, 0.0)]).unwrap();
        assert!(!strip.cells[1].bounded);
    }

    #[test]
    fn sample_whole_plane() {
        let cell = VoronoiCell::whole_plane(p(0.0, 0.0));
        let mut rng = SimRng::seed_from_u64(1);
        for _ in 0..1000 {
            let q = sample_in_cell(&cell, p(0.0, 0.0), 1.0, &mut rng);
            let d = distance(q, p(0.0, 0.0));
            assert!(d > 0.0 && d <= 1.0);
        }
    }

    #[test]
    fn sample_respects_halfplane() {
        let d = compute_voronoi(&[p(0.0, 0.0), p(2.0, 0.0)]).unwrap();
        let mut rng = SimRng::seed_from_u64(2);
        for _ in 0..1000 {
            let q = sample_in_cell(&d.cells[0], p(0.0, 0.0), 100.0, &mut rng);
            assert!(q.x < 1.0);
            assert!(q != p(0.0, 0.0));
        }
    }

    #[test]
    fn sample_draws_are_distinct() {
        let d = compute_voronoi(&[p(0.0, 0.0), p(2.0, 0.0), p(0.0, 3.0)]).unwrap();
        let mut rng = SimRng::seed_from_u64(3);
        let mut draws: Vec<Point> = (0..10_000)
            .map(|_| sample_in_cell(&d.cells[0], p(0.0, 0.0), 1.0, &mut rng))
            .collect();
        draws.sort_by(|a, b| a.lex_cmp(b));
        let dups = draws.windows(2).filter(|w| w[0] == w[1]).count();
        assert_eq!(dups, 0);
    }

    #[test]
    fn sample_in_thin_cell_stays_inside() {
        // Current sits 1e-12 from the boundary; the step floor is larger
        // than the available room, so the fallback branch must engage.
        let d = compute_voronoi(&[p(0.0, 0.0), p(2.0, 0.0)]).unwrap();
        let current = p(1.0 - 1e-12, 0.0);
        let mut rng = SimRng::seed_from_u64(4);
        for _ in 0..200 {
            let q = sample_in_cell(&d.cells[0], current, 1.0, &mut rng);
            assert!(cell_contains(&d.cells[0], q));
            assert!(q != current);
        }
    }

    #[test]
    #[should_panic(expected = "not inside")]
    fn sample_outside_panics() {
        let d = compute_voronoi(&[p(0.0, 0.0), p(2.0, 0.0)]).unwrap();
        let mut rng = SimRng::seed_from_u64(5);
        sample_in_cell(&d.cells[0], p(1.0, 0.0), 1.0, &mut rng);
    }
}

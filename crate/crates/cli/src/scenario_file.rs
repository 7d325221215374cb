//! The TOML scenario format.
//!
//! ```toml
//! version = 1
//! seed = 7
//! max_steps = 500
//! stop_rule = "no_multiplicity"      # none | no_multiplicity | gathered | pattern_reached
//! scheduler = "bounded_delay:4"      # kind[:param]
//!
//! [robots]
//! placement = "colocated"            # explicit | colocated | uniform | uniform-with-duplicates
//! count = 4
//! at = [0.0, 0.0]                    # colocated only
//! extent = 10.0                      # side of the square used by uniform placements
//! # positions = [[0.0, 0.0], [1.0, 0.0]]   # explicit only
//! sigma = 1.0                        # one length for all robots, or a list
//! frames = "seeded-random"           # identity | seeded-random
//! frame_extent = 5.0
//!
//! [capabilities]
//! multiplicity_detection = true
//! localization_knowledge = false
//!
//! [protocol]
//! kind = "scatter"                   # scatter | ssa_pf | ssa_gp | pair_gather | gather | stub
//! # pattern = [[0.0, 0.0], ...]      # ssa_pf only
//! # stub = "unit_step_x"             # stub only
//! ```
//!
//! Lengths are in global distance units. Unknown keys are rejected.

use std::fmt;
use std::path::Path;

use rand_core::SeedableRng;
use serde::Deserialize;

use scatter_core::analysis::{random_distinct_positions, random_positions_with_duplicates};
use scatter_core::engine::EngineError;
use scatter_core::protocols::StubKind;
use scatter_core::rng::SimRng;
use scatter_core::{Capabilities, Point, ProtocolSpec, Scenario, SchedulerKind, StopRule};

pub const SCENARIO_VERSION: u32 = 1;

/// Mixed into the seed for uniform placements.
const PLACEMENT_STREAM: u64 = 0x706c_6163_656d_656e;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    #[serde(default)]
    pub stop_rule: StopRule,
    pub scheduler: String,
    pub robots: RobotsSection,
    #[serde(default)]
    pub capabilities: CapabilitiesSection,
    pub protocol: ProtocolSection,
}

fn default_max_steps() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotsSection {
    #[serde(default)]
    pub placement: Placement,
    pub count: Option<usize>,
    pub positions: Option<Vec<[f64; 2]>>,
    pub at: Option<[f64; 2]>,
    #[serde(default = "default_extent")]
    pub extent: f64,
    #[serde(default)]
    pub sigma: Sigma,
    #[serde(default)]
    pub frames: FrameMode,
    #[serde(default = "default_extent")]
    pub frame_extent: f64,
}

fn default_extent() -> f64 {
    10.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    #[default]
    Explicit,
    Colocated,
    Uniform,
    UniformWithDuplicates,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Sigma {
    Uniform(f64),
    PerRobot(Vec<f64>),
}

impl Default for Sigma {
    fn default() -> Self {
        Sigma::Uniform(1.0)
    }
}

impl fmt::Display for Sigma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sigma::Uniform(s) => write!(f, "{s}"),
            Sigma::PerRobot(v) => {
                let parts: Vec<String> = v.iter().map(|s| s.to_string()).collect();
                write!(f, "{}", parts.join("/"))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrameMode {
    #[default]
    Identity,
    SeededRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapabilitiesSection {
    #[serde(default)]
    pub multiplicity_detection: bool,
    #[serde(default)]
    pub localization_knowledge: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    Scatter,
    SsaPf,
    SsaGp,
    PairGather,
    Gather,
    Stub,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    pub kind: ProtocolKind,
    pub pattern: Option<Vec<[f64; 2]>>,
    pub stub: Option<StubKind>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub scheduler: Option<String>,
    pub max_steps: Option<u64>,
}

/// An error tied, when possible, to a line of the source file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: Option<usize>,
    pub message: String,
}

impl Diagnostic {
    fn at(line: Option<usize>, message: impl Into<String>) -> Self {
        Diagnostic {
            line,
            message: message.into(),
        }
    }

    /// `path:line: message`, or `path: message` without a line.
    pub fn render(&self, path: &Path) -> String {
        match self.line {
            Some(l) => format!("{}:{l}: {}", path.display(), self.message),
            None => format!("{}: {}", path.display(), self.message),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for Diagnostic {}

fn line_of_offset(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

/// Line of `key = ...` inside `[section]` (or the top level for `None`).
pub fn key_line(source: &str, section: Option<&str>, key: &str) -> Option<usize> {
    let mut current: Option<String> = None;
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.split(']').next()) {
            current = Some(name.trim().to_string());
            continue;
        }
        if current.as_deref() != section {
            continue;
        }
        if let Some(rest) = line.strip_prefix(key) {
            if rest.trim_start().starts_with('=') {
                return Some(i + 1);
            }
        }
    }
    None
}

fn section_line(source: &str, section: &str) -> Option<usize> {
    source
        .lines()
        .position(|l| l.trim() == format!("[{section}]"))
        .map(|i| i + 1)
}

impl ScenarioFile {
    pub fn parse(source: &str) -> Result<Self, Diagnostic> {
        toml::from_str(source).map_err(|e| {
            let line = e.span().map(|s| line_of_offset(source, s.start));
            Diagnostic::at(line, e.message().trim().to_string())
        })
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(s) = &o.scheduler {
            self.scheduler = s.clone();
        }
        if let Some(m) = o.max_steps {
            self.max_steps = m;
        }
    }

    /// Number of robots the file describes.
    pub fn count(&self) -> Option<usize> {
        match (&self.robots.placement, &self.robots.positions) {
            (Placement::Explicit, Some(p)) => Some(p.len()),
            _ => self.robots.count,
        }
    }

    /// Builds and validates the scenario. `source` is the text the file was
    /// parsed from and is only used to anchor diagnostics.
    pub fn to_scenario(&self, source: &str) -> Result<Scenario, Diagnostic> {
        let line = |section: Option<&str>, key: &str| key_line(source, section, key);
        let robots = Some("robots");
        if self.version != SCENARIO_VERSION {
            return Err(Diagnostic::at(
                line(None, "version"),
                format!("unsupported scenario version {} (this build reads {SCENARIO_VERSION})", self.version),
            ));
        }
        let scheduler: SchedulerKind = self
            .scheduler
            .parse()
            .map_err(|e: scatter_core::scheduler::SchedulerError| Diagnostic::at(line(None, "scheduler"), e.to_string()))?;

        let r = &self.robots;
        let positions = self.positions(source)?;
        let n = positions.len();
        if let (Placement::Explicit, Some(c)) = (r.placement, r.count) {
            if c != n {
                return Err(Diagnostic::at(
                    line(robots, "count"),
                    format!("robots.count is {c} but {n} positions are listed"),
                ));
            }
        }
        let protocol = self.protocol(source)?;
        let mut scenario = Scenario::new(positions, protocol, scheduler)
            .with_seed(self.seed)
            .with_max_steps(self.max_steps)
            .with_stop_rule(self.stop_rule)
            .with_capabilities(Capabilities {
                multiplicity_detection: self.capabilities.multiplicity_detection,
                localization_knowledge: self.capabilities.localization_knowledge,
            });
        match &r.sigma {
            Sigma::Uniform(s) => scenario = scenario.with_sigma(*s),
            Sigma::PerRobot(list) => {
                if list.len() != n {
                    return Err(Diagnostic::at(
                        line(robots, "sigma"),
                        format!("robots.sigma lists {} values for {n} robots", list.len()),
                    ));
                }
                for (robot, &s) in scenario.robots.iter_mut().zip(list) {
                    robot.sigma = s;
                }
            }
        }
        if r.frames == FrameMode::SeededRandom {
            if !(r.frame_extent.is_finite() && r.frame_extent >= 0.0) {
                return Err(Diagnostic::at(
                    line(robots, "frame_extent"),
                    "robots.frame_extent must be a non-negative length",
                ));
            }
            scenario = scenario.with_random_frames(r.frame_extent);
        }
        scenario.validate().map_err(|e| self.anchor(source, e))?;
        Ok(scenario)
    }

    fn positions(&self, source: &str) -> Result<Vec<Point>, Diagnostic> {
        let r = &self.robots;
        let robots = Some("robots");
        let need_count = || {
            r.count.filter(|&c| c > 0).ok_or_else(|| {
                Diagnostic::at(
                    key_line(source, robots, "count").or_else(|| section_line(source, "robots")),
                    "robots.count must be a positive integer for this placement",
                )
            })
        };
        let stray = |key: &str, what: &str| {
            Diagnostic::at(
                key_line(source, robots, key),
                format!("robots.{key} is only valid with placement = \"{what}\""),
            )
        };
        if r.placement != Placement::Explicit && r.positions.is_some() {
            return Err(stray("positions", "explicit"));
        }
        if r.placement != Placement::Colocated && r.at.is_some() {
            return Err(stray("at", "colocated"));
        }
        let extent_ok = || {
            if r.extent.is_finite() && r.extent > 0.0 {
                Ok(())
            } else {
                Err(Diagnostic::at(
                    key_line(source, robots, "extent"),
                    "robots.extent must be a positive length",
                ))
            }
        };
        let mut rng = SimRng::seed_from_u64(self.seed ^ PLACEMENT_STREAM);
        Ok(match r.placement {
            Placement::Explicit => r
                .positions
                .as_ref()
                .ok_or_else(|| {
                    Diagnostic::at(
                        section_line(source, "robots"),
                        "robots.positions is required with placement = \"explicit\"",
                    )
                })?
                .iter()
                .map(|&[x, y]| Point::new(x, y))
                .collect(),
            Placement::Colocated => {
                let [x, y] = r.at.unwrap_or([0.0, 0.0]);
                vec![Point::new(x, y); need_count()?]
            }
            Placement::Uniform => {
                extent_ok()?;
                random_distinct_positions(need_count()?, r.extent, &mut rng)
            }
            Placement::UniformWithDuplicates => {
                extent_ok()?;
                let n = need_count()?;
                if n < 2 {
                    return Err(Diagnostic::at(
                        key_line(source, robots, "count"),
                        "uniform-with-duplicates needs robots.count >= 2",
                    ));
                }
                random_positions_with_duplicates(n, r.extent, &mut rng)
            }
        })
    }

    fn protocol(&self, source: &str) -> Result<ProtocolSpec, Diagnostic> {
        let p = &self.protocol;
        let section = Some("protocol");
        if p.kind != ProtocolKind::SsaPf && p.pattern.is_some() {
            return Err(Diagnostic::at(
                key_line(source, section, "pattern"),
                "protocol.pattern is only valid with kind = \"ssa_pf\"",
            ));
        }
        if p.kind != ProtocolKind::Stub && p.stub.is_some() {
            return Err(Diagnostic::at(
                key_line(source, section, "stub"),
                "protocol.stub is only valid with kind = \"stub\"",
            ));
        }
        let kind_line = key_line(source, section, "kind");
        Ok(match p.kind {
            ProtocolKind::Scatter => ProtocolSpec::Scatter,
            ProtocolKind::SsaGp => ProtocolSpec::SsaGp,
            ProtocolKind::PairGather => ProtocolSpec::PairGather,
            ProtocolKind::Gather => ProtocolSpec::Gather,
            ProtocolKind::SsaPf => ProtocolSpec::SsaPf {
                pattern: p
                    .pattern
                    .as_ref()
                    .ok_or_else(|| Diagnostic::at(kind_line, "ssa_pf needs protocol.pattern"))?
                    .iter()
                    .map(|&[x, y]| Point::new(x, y))
                    .collect(),
            },
            ProtocolKind::Stub => ProtocolSpec::Stub {
                stub: p
                    .stub
                    .ok_or_else(|| Diagnostic::at(kind_line, "kind = \"stub\" needs protocol.stub"))?,
            },
        })
    }

    fn anchor(&self, source: &str, e: EngineError) -> Diagnostic {
        let robots = Some("robots");
        let (line, message) = match &e {
            EngineError::InvalidScenario { field, .. } => {
                let line = if field.ends_with(".sigma") {
                    key_line(source, robots, "sigma")
                } else if field.starts_with("positions") {
                    key_line(source, robots, "positions").or_else(|| key_line(source, robots, "at"))
                } else if field.ends_with(".frame") {
                    key_line(source, robots, "frames")
                } else if field == "robots" {
                    key_line(source, robots, "count").or_else(|| section_line(source, "robots"))
                } else {
                    key_line(source, None, field)
                };
                (line, e.to_string())
            }
            EngineError::Protocol(pe) => {
                let key = match pe {
                    scatter_core::protocols::ProtocolError::PatternSize { .. }
                    | scatter_core::protocols::ProtocolError::BadPattern => "pattern",
                    _ => "kind",
                };
                (
                    key_line(source, Some("protocol"), key).or_else(|| section_line(source, "protocol")),
                    format!("invalid protocol: {pe}"),
                )
            }
            EngineError::Scheduler(se) => (key_line(source, None, "scheduler"), format!("invalid scheduler: {se}")),
            _ => (None, e.to_string()),
        };
        Diagnostic::at(line, message)
    }
}

/// Reads, parses and builds a scenario file with overrides applied.
pub fn load(path: &Path, overrides: &Overrides) -> anyhow::Result<(ScenarioFile, Scenario)> {
    let source = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("{}: cannot read scenario: {e}", path.display()))?;
    let mut file = ScenarioFile::parse(&source).map_err(|d| anyhow::anyhow!(d.render(path)))?;
    file.apply(overrides);
    let scenario = file.to_scenario(&source).map_err(|d| anyhow::anyhow!(d.render(path)))?;
    Ok((file, scenario))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"version = 1
seed = 3
scheduler = "bernoulli:0.5"
stop_rule = "no_multiplicity"

[robots]
placement = "colocated"
count = 3
sigma = 0.5
frames = "seeded-random"

[capabilities]
multiplicity_detection = true

[protocol]
kind = "scatter"
"#;

    #[test]
    fn parses_basic_file() {
        let f = ScenarioFile::parse(BASIC).unwrap();
        let s = f.to_scenario(BASIC).unwrap();
        assert_eq!(s.n(), 3);
        assert_eq!(s.seed, 3);
        assert_eq!(s.max_steps, 1000);
        assert!(s.robots.iter().all(|r| r.sigma == 0.5 && !r.frame.is_identity()));
        assert_eq!(s.scheduler, SchedulerKind::Bernoulli { p: 0.5 });
    }

    #[test]
    fn unknown_key_is_located() {
        let src = BASIC.replace("sigma = 0.5", "sigma = 0.5\nsigmma = 2");
        let d = ScenarioFile::parse(&src).unwrap_err();
        assert_eq!(d.line, Some(10));
        assert!(d.message.contains("sigmma"), "{d}");
    }

    #[test]
    fn zero_sigma_names_the_field() {
        let src = BASIC.replace("sigma = 0.5", "sigma = 0.0");
        let d = ScenarioFile::parse(&src).unwrap().to_scenario(&src).unwrap_err();
        assert_eq!(d.line, Some(9));
        assert!(d.message.contains("robots[0].sigma"), "{d}");
    }

    #[test]
    fn ssa_gp_with_two_robots_is_rejected() {
        let src = BASIC
            .replace("count = 3", "count = 2")
            .replace("kind = \"scatter\"", "kind = \"ssa_gp\"")
            .replace("multiplicity_detection = true", "multiplicity_detection = true\nlocalization_knowledge = true");
        let d = ScenarioFile::parse(&src).unwrap().to_scenario(&src).unwrap_err();
        assert!(d.message.contains("n >= 3"), "{d}");
        assert_eq!(d.line, key_line(&src, Some("protocol"), "kind"));
    }

    #[test]
    fn overrides_take_precedence() {
        let mut f = ScenarioFile::parse(BASIC).unwrap();
        f.apply(&Overrides {
            seed: Some(9),
            scheduler: Some("round_robin:2".into()),
            max_steps: Some(17),
        });
        let s = f.to_scenario(BASIC).unwrap();
        assert_eq!((s.seed, s.max_steps), (9, 17));
        assert_eq!(s.scheduler, SchedulerKind::RoundRobin { window: 2 });
    }

    #[test]
    fn explicit_positions_and_sigma_list() {
        let src = r#"version = 1
scheduler = "full_synchronous"
[robots]
positions = [[0.0, 0.0], [1.0, 0.0]]
sigma = [1.0, 2.0]
[protocol]
kind = "pair_gather"
"#;
        let s = ScenarioFile::parse(src).unwrap().to_scenario(src).unwrap();
        assert_eq!(s.initial.positions[1], Point::new(1.0, 0.0));
        assert_eq!(s.robots[1].sigma, 2.0);
        let bad = src.replace("[1.0, 2.0]", "[1.0]");
        let d = ScenarioFile::parse(&bad).unwrap().to_scenario(&bad).unwrap_err();
        assert_eq!(d.line, Some(5));
    }

    #[test]
    fn uniform_placement_is_seeded() {
        let src = BASIC.replace("\"colocated\"", "\"uniform\"");
        let a = ScenarioFile::parse(&src).unwrap().to_scenario(&src).unwrap();
        let b = ScenarioFile::parse(&src).unwrap().to_scenario(&src).unwrap();
        assert_eq!(a.initial, b.initial);
        assert!(a.initial.all_distinct());
    }

    #[test]
    fn version_and_scheduler_errors() {
        let src = BASIC.replace("version = 1", "version = 2");
        let d = ScenarioFile::parse(&src).unwrap().to_scenario(&src).unwrap_err();
        assert_eq!(d.line, Some(1));
        let src = BASIC.replace("bernoulli:0.5", "bernoulli:1.5");
        let d = ScenarioFile::parse(&src).unwrap().to_scenario(&src).unwrap_err();
        assert_eq!(d.line, Some(3));
    }
}

//! Scenario catalog and runner: canonical start points, published phase
//! sets, ε-sweeps, cohort squares, and the expectations attached to them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{
    angular_drift_rate, bounding_box_series, classify_confinement_with, cohort_analysis, coverage_with_mask,
    occupancy_grid, significant_cells, BoundingBoxSeries, CohortReport, ConfinementLabel,
    ConfinementThresholds, ConfinementVerdict, GridSpec, DEFAULT_CHECKPOINT_PERIODS,
};
use crate::fmt::sig;
use crate::integrator::{integrate_trajectory, IntegrateError, IntegratorConfig, Trajectory};
use crate::io::{self, IoError};
use crate::par;
use crate::plot::{trajectory_svg, PlotSpec};
use crate::wavefunction::{Mode, SpecError, WaveFunctionSpec, FOUR_MODES, PERIOD, SIX_MODES};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("unknown scenario '{0}'")]
    UnknownScenario(String),
    #[error("scenario file: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Start points 1 through 10.
pub fn canonical_points() -> [[f64; 2]; 10] {
    [
        [1.5, 1.5],
        [1.5, -1.5],
        [-1.5, 1.5],
        [-1.5, -1.5],
        [0.5, 0.0],
        [0.0, -0.5],
        [-0.5, 0.0],
        [0.0, 0.5],
        [0.25, 0.25],
        [0.25, -0.25],
    ]
}

pub const COHORT_EDGE: f64 = 0.04;

/// Thirteen points in a square of side `edge`: the eight boundary points, four interior points, the center.
pub fn square_cohort(center: [f64; 2], edge: f64) -> Result<Vec<[f64; 2]>, ExperimentError> {
    if !(edge.is_finite() && edge > 0.0) {
        return Err(ExperimentError::Invalid(format!("cohort edge {edge}")));
    }
    let (h, q) = (edge / 2.0, edge / 4.0);
    let offsets = [
        (-h, h),
        (-h, 0.0),
        (-h, -h),
        (0.0, -h),
        (h, -h),
        (h, 0.0),
        (h, h),
        (0.0, h),
        (-q, q),
        (-q, -q),
        (q, -q),
        (q, q),
        (0.0, 0.0),
    ];
    Ok(offsets.iter().map(|&(a, b)| [center[0] + a, center[1] + b]).collect())
}

/// Phases keyed by printed label `θ_ab`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSet {
    pub name: String,
    pub labels: Vec<Mode>,
    pub theta: Vec<f64>,
}

impl PhaseSet {
    pub fn theta(&self, label: Mode) -> Option<f64> {
        self.labels.iter().position(|&l| l == label).map(|i| self.theta[i])
    }

    /// Mode that printed label `ab` multiplies.
    ///
    /// The first label index is read as the q₂ quantum number. With this
    /// reading the published phase sets reproduce the published
    /// confined/unconfined split; with the opposite one the split comes out
    /// mirrored across q₁ = q₂.
    pub fn mode_of(label: Mode) -> Mode {
        Mode::new(label.n, label.m)
    }

    /// Spec with amplitude `amplitudes[i]` on label `i` (the ground label gets 1).
    pub fn spec(&self, amplitudes: &[f64]) -> Result<WaveFunctionSpec, SpecError> {
        let modes: Vec<Mode> = self.labels.iter().map(|&l| Self::mode_of(l)).collect();
        WaveFunctionSpec::from_parts(&modes, amplitudes, &self.theta)
    }

    /// Ground amplitude 1, every excited amplitude `epsilon`.
    pub fn homogeneous(&self, epsilon: f64) -> Result<WaveFunctionSpec, SpecError> {
        let amps: Vec<f64> =
            self.labels.iter().map(|&l| if l == Mode::GROUND { 1.0 } else { epsilon }).collect();
        self.spec(&amps)
    }
}

fn phase_set(name: &str, labels: &[Mode], theta: &[f64]) -> PhaseSet {
    PhaseSet { name: name.to_string(), labels: labels.to_vec(), theta: theta.to_vec() }
}

/// The five phase sets printed with the figures, keyed fn3, fn4, fn5, fn7, fn8.
pub fn published_phase_sets() -> Vec<PhaseSet> {
    vec![
        phase_set("fn3", &FOUR_MODES, &[0.5442, 2.3099, 5.6703, 4.5333]),
        phase_set("fn4", &FOUR_MODES, &[4.8157, 1.486, 2.6226, 3.8416]),
        phase_set("fn5", &SIX_MODES, &[4.2065, 0.1803, 2.0226, 5.5521, 3.3361, 2.6561]),
        phase_set("fn7", &SIX_MODES, &[1.2434, 4.411, 4.3749, 4.2427, 1.5574, 5.7796]),
        phase_set("fn8", &SIX_MODES, &[4.0857, 0.2194, 4.6059, 1.2201, 0.439, 4.0563]),
    ]
}

pub fn published_phase_set(name: &str) -> Option<PhaseSet> {
    published_phase_sets().into_iter().find(|p| p.name == name)
}

/// Uniform phases on [0, 2π), one per label, from ChaCha8 seeded with `seed`.
pub fn random_phase_set(labels: &[Mode], seed: u64) -> PhaseSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = labels.iter().map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    PhaseSet { name: format!("seed-{seed}"), labels: labels.to_vec(), theta }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub centers: Vec<[f64; 2]>,
    #[serde(default = "default_edge")]
    pub edge: f64,
}

fn default_edge() -> f64 {
    COHORT_EDGE
}

/// Empty central disk and, optionally, a bound on the radial width of the visited cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnulusExpectation {
    /// 1-based start indices.
    pub starts: Vec<usize>,
    pub inner_radius: f64,
    pub max_width: Option<f64>,
}

/// Coverage of the Born-significant cells stays at or below `max_coverage`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallRegionExpectation {
    pub starts: Vec<usize>,
    pub max_coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortExpectation {
    pub center: [f64; 2],
    /// Global maximum pairwise distance, matched within `max_distance_rtol`.
    pub max_distance: Option<f64>,
    #[serde(default)]
    pub max_distance_rtol: f64,
    /// Some pair's final distance lies within a factor `final_distance_factor` of this.
    pub final_distance: Option<f64>,
    #[serde(default = "one")]
    pub final_distance_factor: f64,
    pub min_mean_overlap: Option<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Expectations {
    #[serde(default)]
    pub confined: Vec<usize>,
    #[serde(default)]
    pub unconfined: Vec<usize>,
    /// Tolerated label mismatches (truncated horizons only approximate the long-run split).
    #[serde(default)]
    pub max_label_mismatches: usize,
    #[serde(default)]
    pub zero_extent: Vec<usize>,
    #[serde(default)]
    pub annulus: Vec<AnnulusExpectation>,
    #[serde(default)]
    pub small_region: Vec<SmallRegionExpectation>,
    #[serde(default)]
    pub cohorts: Vec<CohortExpectation>,
}

impl Expectations {
    fn is_empty(&self) -> bool {
        *self == Expectations::default()
    }

    fn referenced_starts(&self) -> impl Iterator<Item = usize> + '_ {
        self.confined
            .iter()
            .chain(&self.unconfined)
            .chain(&self.zero_extent)
            .chain(self.annulus.iter().flat_map(|a| &a.starts))
            .chain(self.small_region.iter().flat_map(|s| &s.starts))
            .copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub spec: WaveFunctionSpec,
    pub phase_seed: Option<u64>,
    pub starts: Vec<[f64; 2]>,
    pub horizon_periods: u32,
    pub cohort: Option<CohortSpec>,
    pub expected: Option<Expectations>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScenarioFile {
    name: String,
    #[serde(default)]
    description: String,
    modes: Vec<[u32; 2]>,
    epsilons: Vec<f64>,
    thetas: Option<Vec<f64>>,
    phase_seed: Option<u64>,
    #[serde(default)]
    starts: Vec<[f64; 2]>,
    horizon_periods: u32,
    cohort: Option<CohortSpec>,
    expected: Option<Expectations>,
}

impl Scenario {
    /// Parses a scenario document. Modes are `[m, n]` for φ_m(q₁)φ_n(q₂); either `thetas` or `phase_seed` is required.
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let raw: ScenarioFile = toml::from_str(text).map_err(|e| ExperimentError::Parse(e.to_string()))?;
        let modes: Vec<Mode> = raw.modes.iter().map(|&[m, n]| Mode::new(m, n)).collect();
        let thetas = match (raw.thetas, raw.phase_seed) {
            (Some(t), None) => t,
            (None, Some(seed)) => random_phase_set(&modes, seed).theta,
            _ => {
                return Err(ExperimentError::Parse("exactly one of thetas and phase_seed is required".into()))
            }
        };
        let scenario = Scenario {
            name: raw.name,
            description: raw.description,
            spec: WaveFunctionSpec::from_parts(&modes, &raw.epsilons, &thetas)?,
            phase_seed: raw.phase_seed,
            starts: raw.starts,
            horizon_periods: raw.horizon_periods,
            cohort: raw.cohort,
            expected: raw.expected,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml(&self) -> String {
        let terms = self.spec.terms();
        let raw = ScenarioFile {
            name: self.name.clone(),
            description: self.description.clone(),
            modes: terms.iter().map(|t| [t.mode.m, t.mode.n]).collect(),
            epsilons: terms.iter().map(|t| t.amplitude).collect(),
            thetas: if self.phase_seed.is_some() {
                None
            } else {
                Some(terms.iter().map(|t| t.phase).collect())
            },
            phase_seed: self.phase_seed,
            starts: self.starts.clone(),
            horizon_periods: self.horizon_periods,
            cohort: self.cohort.clone(),
            expected: self.expected.clone(),
        };
        toml::to_string(&raw).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let invalid = |msg: String| Err(ExperimentError::Invalid(format!("{}: {msg}", self.name)));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return invalid("name must be non-empty and contain no path separators".into());
        }
        if self.horizon_periods == 0 {
            return invalid("horizon must be a positive number of periods".into());
        }
        if self.starts.is_empty() && self.cohort.is_none() {
            return invalid("no start points and no cohort".into());
        }
        if let Some(c) = &self.cohort {
            square_cohort([0.0, 0.0], c.edge)?;
        }
        if let Some(e) = &self.expected {
            if let Some(bad) = e.referenced_starts().find(|&i| i == 0 || i > self.starts.len()) {
                return invalid(format!("expectation refers to start {bad}, have {}", self.starts.len()));
            }
            for ce in &e.cohorts {
                let known = self.cohort.as_ref().is_some_and(|c| c.centers.contains(&ce.center));
                if !known {
                    return invalid(format!("cohort expectation at unknown center {:?}", ce.center));
                }
            }
        }
        Ok(())
    }

    /// The same scenario cut to `periods`, with expectations adapted to the shorter horizon.
    ///
    /// Labels tolerate two mismatches at 500T and are dropped below that;
    /// cohort distance expectations are dropped; a cohort overlap bound
    /// becomes 0.7 at 500T and is dropped below that. Occupancy predicates
    /// only get easier on a prefix of the trajectory and are kept.
    pub fn truncated(&self, periods: u32) -> Scenario {
        let mut s = self.clone();
        s.name = format!("{}@{periods}", self.name);
        s.horizon_periods = periods;
        if let Some(e) = &mut s.expected {
            if periods >= 500 {
                e.max_label_mismatches = e.max_label_mismatches.max(2);
            } else {
                e.confined.clear();
                e.unconfined.clear();
            }
            for ce in &mut e.cohorts {
                ce.max_distance = None;
                ce.final_distance = None;
                ce.min_mean_overlap =
                    if periods >= 500 { ce.min_mean_overlap.map(|m| m.min(0.7)) } else { None };
            }
            e.cohorts.retain(|c| c.min_mean_overlap.is_some());
        }
        s
    }
}

fn all_starts() -> Vec<[f64; 2]> {
    canonical_points().to_vec()
}

fn published(name: &str) -> PhaseSet {
    published_phase_set(name).expect("published set exists")
}

/// Scenarios at their published horizons, followed by 100T and 500T cuts of every 3000T entry.
pub fn scenario_catalog() -> Vec<Scenario> {
    let mut base = vec![];
    let fn3 = published("fn3");
    base.push(Scenario {
        name: "fn3-eps1".into(),
        description: "four modes, fn3 phases, eps = 1: points 1,2,3,4,6 wander, 5,7,8,9,10 stay confined"
            .into(),
        spec: fn3.homogeneous(1.0).expect("valid"),
        phase_seed: None,
        starts: all_starts(),
        horizon_periods: 3000,
        cohort: None,
        expected: Some(Expectations {
            confined: vec![5, 7, 8, 9, 10],
            unconfined: vec![1, 2, 3, 4, 6],
            ..Expectations::default()
        }),
    });

    let fn4 = published("fn4");
    let outer = vec![1, 2, 3, 4];
    let inner = vec![5, 6, 7, 8, 9, 10];
    let sweep: [(&str, f64, Expectations, &str); 5] = [
        ("fn4-eps1", 1.0, Expectations::default(), "fn4 phases at eps = 1, reference point for the sweep"),
        (
            "fn4-eps0.5",
            0.5,
            Expectations {
                unconfined: outer.clone(),
                confined: inner.clone(),
                annulus: vec![AnnulusExpectation { starts: vec![3], inner_radius: 0.3, max_width: None }],
                ..Expectations::default()
            },
            "points 1-4 largely unconfined, 5-10 confined; start 3 avoids a small central region",
        ),
        (
            "fn4-eps0.25",
            0.25,
            Expectations {
                confined: inner.clone(),
                annulus: vec![AnnulusExpectation {
                    starts: outer.clone(),
                    inner_radius: 0.5,
                    max_width: None,
                }],
                ..Expectations::default()
            },
            "points 1-4 orbit in outer annular regions, 5-10 confined",
        ),
        (
            "fn4-eps0.1",
            0.1,
            Expectations {
                annulus: vec![AnnulusExpectation {
                    starts: outer.clone(),
                    inner_radius: 1.0,
                    max_width: Some(1.5),
                }],
                small_region: vec![SmallRegionExpectation { starts: inner.clone(), max_coverage: 0.1 }],
                ..Expectations::default()
            },
            "points 1-4 in narrow annuli about the origin, 5-10 in very small regions",
        ),
        (
            "fn4-eps0.05",
            0.05,
            Expectations {
                annulus: vec![AnnulusExpectation {
                    starts: outer.clone(),
                    inner_radius: 1.0,
                    max_width: Some(1.5),
                }],
                small_region: vec![SmallRegionExpectation { starts: inner.clone(), max_coverage: 0.1 }],
                ..Expectations::default()
            },
            "narrow outer arcs for points 1-4, highly confined 5-10",
        ),
    ];
    for (name, eps, expected, description) in sweep {
        base.push(Scenario {
            name: name.into(),
            description: description.into(),
            spec: fn4.homogeneous(eps).expect("valid"),
            phase_seed: None,
            starts: all_starts(),
            horizon_periods: 3000,
            cohort: None,
            expected: if expected.is_empty() { None } else { Some(expected) },
        });
    }
    base.push(Scenario {
        name: "fn4-inhom".into(),
        description: "fn4 phases, eps01 = 0.2, eps10 = 0.15, eps11 = 0.1: start 3 annular, start 7 confined"
            .into(),
        spec: fn4.spec(&[1.0, 0.2, 0.15, 0.1]).expect("valid"),
        phase_seed: None,
        starts: all_starts(),
        horizon_periods: 3000,
        cohort: None,
        expected: Some(Expectations {
            confined: vec![7],
            annulus: vec![AnnulusExpectation { starts: vec![3], inner_radius: 1.0, max_width: Some(1.5) }],
            ..Expectations::default()
        }),
    });
    base.push(Scenario {
        name: "fn5-eps0.1".into(),
        description: "five excited modes at eps = 0.1, fn5 phases: thicker annuli, still far from the bulk"
            .into(),
        spec: published("fn5").homogeneous(0.1).expect("valid"),
        phase_seed: None,
        starts: all_starts(),
        horizon_periods: 3000,
        cohort: None,
        expected: Some(Expectations {
            confined: vec![7],
            annulus: vec![AnnulusExpectation { starts: vec![1], inner_radius: 1.0, max_width: None }],
            ..Expectations::default()
        }),
    });
    base.push(Scenario {
        name: "fn7-cohorts".into(),
        description: "13-point squares of edge 0.04 at the ten canonical points, five modes at eps = 0.1"
            .into(),
        spec: published("fn7").homogeneous(0.1).expect("valid"),
        phase_seed: None,
        starts: vec![],
        horizon_periods: 3000,
        cohort: Some(CohortSpec { centers: all_starts(), edge: COHORT_EDGE }),
        expected: Some(Expectations {
            cohorts: vec![CohortExpectation {
                center: [1.5, 1.5],
                max_distance: Some(1.47),
                max_distance_rtol: 0.1,
                final_distance: Some(0.08),
                final_distance_factor: 2.0,
                min_mean_overlap: Some(0.8),
            }],
            ..Expectations::default()
        }),
    });
    base.push(Scenario {
        name: "fn8-inhom-cohorts".into(),
        description: "cohort squares at the ten canonical points, eps = (0.11, 0.12, 0.13, 0.14, 0.15)"
            .into(),
        spec: published("fn8").spec(&[1.0, 0.11, 0.12, 0.13, 0.14, 0.15]).expect("valid"),
        phase_seed: None,
        starts: vec![],
        horizon_periods: 3000,
        cohort: Some(CohortSpec { centers: all_starts(), edge: COHORT_EDGE }),
        expected: Some(Expectations {
            cohorts: vec![CohortExpectation {
                center: [0.25, 0.25],
                max_distance: None,
                max_distance_rtol: 0.0,
                final_distance: None,
                final_distance_factor: 1.0,
                min_mean_overlap: Some(0.8),
            }],
            ..Expectations::default()
        }),
    });
    base.push(Scenario {
        name: "eps0".into(),
        description: "ground state only: nothing moves".into(),
        spec: fn3.homogeneous(0.0).expect("valid"),
        phase_seed: None,
        starts: all_starts(),
        horizon_periods: 100,
        cohort: None,
        expected: Some(Expectations {
            confined: (1..=10).collect(),
            zero_extent: (1..=10).collect(),
            ..Expectations::default()
        }),
    });

    let mut catalog = base.clone();
    for s in &base {
        if s.horizon_periods == 3000 {
            catalog.push(s.truncated(100));
            catalog.push(s.truncated(500));
        }
    }
    catalog
}

/// Looks `name` up in the catalog; `NAME@P` not in the catalog cuts `NAME` to P periods.
pub fn find_scenario(name: &str) -> Result<Scenario, ExperimentError> {
    let catalog = scenario_catalog();
    if let Some(s) = catalog.iter().find(|s| s.name == name) {
        return Ok(s.clone());
    }
    if let Some((base, p)) = name.split_once('@') {
        if let (Some(s), Ok(p)) = (catalog.iter().find(|s| s.name == base), p.parse::<u32>()) {
            if p > 0 {
                return Ok(s.truncated(p));
            }
        }
    }
    Err(ExperimentError::UnknownScenario(name.to_string()))
}

/// Default checkpoints up to `periods`; short horizons use P/8, P/4, P/2, P instead.
pub fn checkpoints_for(periods: f64) -> Vec<f64> {
    let horizon = periods * PERIOD;
    let mut cps: Vec<f64> = DEFAULT_CHECKPOINT_PERIODS
        .iter()
        .filter(|&&p| p as f64 <= periods)
        .map(|&p| p as f64 * PERIOD)
        .collect();
    if cps.last() != Some(&horizon) {
        cps.push(horizon);
    }
    if cps.len() < 4 {
        return vec![horizon / 8.0, horizon / 4.0, horizon / 2.0, horizon];
    }
    cps
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub integrator: IntegratorConfig,
    pub workers: Option<usize>,
    pub grid: GridSpec,
    pub thresholds: ConfinementThresholds,
    pub svg: bool,
    pub plot_stride: usize,
    /// Cohort members are summarized; their CSVs are written only when set.
    pub cohort_csv: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            integrator: IntegratorConfig::default(),
            workers: None,
            grid: GridSpec::default(),
            thresholds: ConfinementThresholds::default(),
            svg: true,
            plot_stride: 3,
            cohort_csv: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartSummary {
    pub index: usize,
    pub start: [f64; 2],
    pub error: Option<String>,
    pub verdict: Option<ConfinementVerdict>,
    pub series: Option<BoundingBoxSeries>,
    pub coverage: Option<f64>,
    pub drift_rate: Option<f64>,
    /// `(r, n)`: `n` samples in cells reaching inside radius `r` (r = 1 and every annulus radius).
    pub radial_visits: Vec<(f64, u64)>,
    pub visited_radius_range: Option<(f64, f64)>,
    pub steps_taken: u64,
    pub steps_rejected: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub center: [f64; 2],
    pub error: Option<String>,
    pub report: Option<CohortReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub description: String,
    pub tool: String,
    pub spec: String,
    pub spec_sha256: String,
    pub phase_seed: Option<u64>,
    pub horizon_periods: u32,
    pub integrator: IntegratorConfig,
    pub grid: GridSpec,
    pub checkpoints_periods: Vec<f64>,
    pub starts: Vec<StartSummary>,
    pub cohorts: Vec<CohortSummary>,
    pub checks: Vec<Check>,
    pub expectations_met: bool,
}

impl Summary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes") + "\n"
    }

    /// Start × verdict × coverage × drift, plus cohort and check lines.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let opt = |x: Option<f64>| x.map_or("-".to_string(), |v| sig(v, 4));
        let _ = writeln!(out, "{} ({}T, spec {})", self.scenario, self.horizon_periods, self.spec_sha256);
        if !self.starts.is_empty() {
            let _ = writeln!(
                out,
                "{:>3}  {:>15}  {:<13} {:>9} {:>9} {:>10}",
                "#", "start", "verdict", "w+h", "coverage", "drift/T"
            );
        }
        for s in &self.starts {
            let label = s.verdict.map_or_else(|| "error".to_string(), |v| v.label.to_string());
            let ext = s.series.as_ref().and_then(|b| b.extents().last().copied());
            let _ = writeln!(
                out,
                "{:>3}  {:>15}  {:<13} {:>9} {:>9} {:>10}",
                s.index,
                format!("({}, {})", s.start[0], s.start[1]),
                label,
                opt(ext),
                opt(s.coverage),
                opt(s.drift_rate)
            );
        }
        for c in &self.cohorts {
            match &c.report {
                Some(r) => {
                    let _ = writeln!(
                        out,
                        "cohort ({}, {}): max distance {} at {}T, mean overlap {}",
                        c.center[0],
                        c.center[1],
                        sig(r.max_pairwise_distance, 4),
                        sig(r.max_distance_time / PERIOD, 6),
                        sig(r.mean_overlap, 4)
                    );
                }
                None => {
                    let _ = writeln!(
                        out,
                        "cohort ({}, {}): {}",
                        c.center[0],
                        c.center[1],
                        c.error.as_deref().unwrap_or("?")
                    );
                }
            }
        }
        for c in &self.checks {
            let _ = writeln!(out, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        out
    }
}

fn start_summary(
    index: usize,
    start: [f64; 2],
    result: &Result<Trajectory, IntegrateError>,
    checkpoints: &[f64],
    mask: &[bool],
    radii: &[f64],
    run: &RunConfig,
) -> StartSummary {
    let mut summary = StartSummary {
        index,
        start,
        error: None,
        verdict: None,
        series: None,
        coverage: None,
        drift_rate: None,
        radial_visits: vec![],
        visited_radius_range: None,
        steps_taken: 0,
        steps_rejected: 0,
    };
    let traj = match result {
        Ok(t) => t,
        Err(e) => {
            summary.error = Some(e.to_string());
            return summary;
        }
    };
    summary.steps_taken = traj.steps_taken;
    summary.steps_rejected = traj.steps_rejected;
    match bounding_box_series(traj, checkpoints) {
        Ok(series) => {
            match classify_confinement_with(&series, &run.thresholds) {
                Ok(v) => summary.verdict = Some(v),
                Err(e) => summary.error = Some(e.to_string()),
            }
            summary.series = Some(series);
        }
        Err(e) => summary.error = Some(e.to_string()),
    }
    let grid = occupancy_grid(traj, run.grid);
    summary.coverage = Some(coverage_with_mask(&grid, mask));
    summary.drift_rate = angular_drift_rate(traj).ok();
    summary.radial_visits = radii.iter().map(|&r| (r, grid.visits_within(r))).collect();
    summary.visited_radius_range = grid.visited_radius_range();
    summary
}

fn check_expectations(e: &Expectations, starts: &[StartSummary], cohorts: &[CohortSummary]) -> Vec<Check> {
    let mut checks = vec![];
    let by_index = |i: usize| starts.iter().find(|s| s.index == i);

    if !e.confined.is_empty() || !e.unconfined.is_empty() {
        let mut mismatched = vec![];
        for (want, list) in
            [(ConfinementLabel::Confined, &e.confined), (ConfinementLabel::Unconfined, &e.unconfined)]
        {
            for &i in list {
                let got = by_index(i).and_then(|s| s.verdict).map(|v| v.label);
                if got != Some(want) {
                    mismatched.push(format!("{i}:{}", got.map_or("error".to_string(), |l| l.to_string())));
                }
            }
        }
        checks.push(Check {
            name: "confinement labels".into(),
            passed: mismatched.len() <= e.max_label_mismatches,
            detail: format!(
                "confined {:?}, unconfined {:?}; {} mismatched (allowed {}) {}",
                e.confined,
                e.unconfined,
                mismatched.len(),
                e.max_label_mismatches,
                mismatched.join(" ")
            ),
        });
    }
    if !e.zero_extent.is_empty() {
        let moved: Vec<usize> = e
            .zero_extent
            .iter()
            .copied()
            .filter(|&i| {
                by_index(i)
                    .and_then(|s| s.series.as_ref())
                    .is_none_or(|b| b.extents().iter().any(|&x| x != 0.0))
            })
            .collect();
        checks.push(Check {
            name: "zero extent".into(),
            passed: moved.is_empty(),
            detail: format!("starts {:?} must not move; moved: {moved:?}", e.zero_extent),
        });
    }
    for a in &e.annulus {
        let mut failures = vec![];
        let inner_radius = a.inner_radius;
        for &i in &a.starts {
            let Some(s) = by_index(i).filter(|s| s.error.is_none()) else {
                failures.push(format!("{i}: no trajectory"));
                continue;
            };
            let width = s.visited_radius_range.map(|(lo, hi)| hi - lo);
            let inside = s.radial_visits.iter().find(|&&(r, _)| r == inner_radius).map(|&(_, n)| n);
            if inside != Some(0) {
                failures.push(format!("{i}: {} samples inside r < {inner_radius}", inside.unwrap_or(0)));
            }
            if let (Some(max), Some(w)) = (a.max_width, width) {
                if w >= max {
                    failures.push(format!("{i}: radial width {}", sig(w, 4)));
                }
            }
        }
        checks.push(Check {
            name: format!("annulus {:?}", a.starts),
            passed: failures.is_empty(),
            detail: format!(
                "empty disk r < {inner_radius}{}; {}",
                a.max_width.map_or(String::new(), |w| format!(", radial width < {w}")),
                if failures.is_empty() { "ok".to_string() } else { failures.join("; ") }
            ),
        });
    }
    for r in &e.small_region {
        let over: Vec<String> = r
            .starts
            .iter()
            .filter_map(|&i| {
                let cov = by_index(i).and_then(|s| s.coverage);
                match cov {
                    Some(c) if c <= r.max_coverage => None,
                    Some(c) => Some(format!("{i}:{}", sig(c, 3))),
                    None => Some(format!("{i}:error")),
                }
            })
            .collect();
        checks.push(Check {
            name: format!("small region {:?}", r.starts),
            passed: over.is_empty(),
            detail: format!("coverage <= {}; over: {}", r.max_coverage, over.join(" ")),
        });
    }
    for ce in &e.cohorts {
        let report = cohorts.iter().find(|c| c.center == ce.center).and_then(|c| c.report.as_ref());
        let name = format!("cohort ({}, {})", ce.center[0], ce.center[1]);
        let Some(r) = report else {
            checks.push(Check { name, passed: false, detail: "cohort did not complete".into() });
            continue;
        };
        if let Some(target) = ce.max_distance {
            let rel = (r.max_pairwise_distance - target).abs() / target;
            checks.push(Check {
                name: format!("{name} max distance"),
                passed: rel <= ce.max_distance_rtol,
                detail: format!(
                    "{} vs {target} (tolerance {}%)",
                    sig(r.max_pairwise_distance, 4),
                    sig(100.0 * ce.max_distance_rtol, 3)
                ),
            });
        }
        if let Some(target) = ce.final_distance {
            let f = ce.final_distance_factor;
            let k = r.final_pairwise_distances.len();
            let hit = (0..k)
                .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
                .map(|(i, j)| r.final_pairwise_distances[i][j])
                .filter(|&d| d >= target / f && d <= target * f)
                .fold(None, |best: Option<f64>, d| {
                    Some(best.map_or(d, |b| if (d - target).abs() < (b - target).abs() { d } else { b }))
                });
            checks.push(Check {
                name: format!("{name} final distance"),
                passed: hit.is_some(),
                detail: format!(
                    "some pair's final distance in [{}, {}]: {}",
                    sig(target / f, 4),
                    sig(target * f, 4),
                    hit.map_or("none".to_string(), |d| sig(d, 4))
                ),
            });
        }
        if let Some(min) = ce.min_mean_overlap {
            checks.push(Check {
                name: format!("{name} overlap"),
                passed: r.mean_overlap >= min,
                detail: format!("mean Jaccard {} >= {min}", sig(r.mean_overlap, 4)),
            });
        }
    }
    checks
}

fn file_stem(index: usize) -> String {
    format!("p{index:02}")
}

fn annotation(
    scenario: &Scenario,
    index: usize,
    start: [f64; 2],
    verdict: Option<&ConfinementVerdict>,
) -> Vec<String> {
    vec![
        format!(
            "{}  start {} ({}, {})  {}T",
            scenario.name, index, start[0], start[1], scenario.horizon_periods
        ),
        format!(
            "spec {}  verdict {}",
            scenario.spec.fingerprint(),
            verdict.map_or("-".to_string(), |v| v.label.to_string())
        ),
    ]
}

/// Integrates every start and cohort, writes CSV/SVG/summary.json under `out_dir`, and evaluates expectations.
pub fn run_scenario(
    scenario: &Scenario,
    run: &RunConfig,
    out_dir: &Path,
) -> Result<Summary, ExperimentError> {
    scenario.validate()?;
    let spec = &scenario.spec;
    let horizon = scenario.horizon_periods as f64 * PERIOD;
    let checkpoints = checkpoints_for(scenario.horizon_periods as f64);
    let mask = significant_cells(spec, run.grid);
    let plot = PlotSpec { stride: run.plot_stride.max(1), ..PlotSpec::default() };

    let indexed: Vec<(usize, [f64; 2])> =
        scenario.starts.iter().copied().enumerate().map(|(i, s)| (i + 1, s)).collect();
    let results = par::map(&indexed, run.workers, |&(_, start)| {
        integrate_trajectory(spec, start, horizon, &run.integrator)
    });

    let mut radii = vec![1.0];
    for a in scenario.expected.iter().flat_map(|e| &e.annulus) {
        if !radii.contains(&a.inner_radius) {
            radii.push(a.inner_radius);
        }
    }

    let mut starts = Vec::with_capacity(indexed.len());
    for (&(index, start), result) in indexed.iter().zip(&results) {
        let summary = start_summary(index, start, result, &checkpoints, &mask, &radii, run);
        if let Ok(traj) = result {
            let stem = file_stem(index);
            io::write_file(
                &out_dir.join(format!("{stem}.csv")),
                &io::trajectory_csv(traj, spec, &run.integrator),
            )?;
            if run.svg {
                let plot = PlotSpec {
                    annotation: annotation(scenario, index, start, summary.verdict.as_ref()),
                    ..plot.clone()
                };
                io::write_file(&out_dir.join(format!("{stem}.svg")), &trajectory_svg(traj, &plot))?;
            }
        }
        starts.push(summary);
    }
    drop(results);

    let mut cohorts = vec![];
    if let Some(c) = &scenario.cohort {
        for (k, &center) in c.centers.iter().enumerate() {
            let members = square_cohort(center, c.edge)?;
            let trajs =
                par::map(&members, run.workers, |&s| integrate_trajectory(spec, s, horizon, &run.integrator));
            let ok: Result<Vec<Trajectory>, IntegrateError> = trajs.into_iter().collect();
            let summary = match ok {
                Ok(trajs) => {
                    if run.cohort_csv {
                        for (j, t) in trajs.iter().enumerate() {
                            let path = out_dir.join(format!("cohort{:02}_{j:02}.csv", k + 1));
                            io::write_file(&path, &io::trajectory_csv(t, spec, &run.integrator))?;
                        }
                    }
                    if run.svg {
                        let pair = cohort_analysis(&trajs, run.grid).ok();
                        let first = pair.as_ref().map_or(0, |r| r.max_distance_pair.0);
                        let plot = PlotSpec {
                            annotation: vec![format!(
                                "{}  cohort {} centre ({}, {}) member {}",
                                scenario.name,
                                k + 1,
                                center[0],
                                center[1],
                                first + 1
                            )],
                            ..plot.clone()
                        };
                        io::write_file(
                            &out_dir.join(format!("cohort{:02}.svg", k + 1)),
                            &trajectory_svg(&trajs[first], &plot),
                        )?;
                    }
                    match cohort_analysis(&trajs, run.grid) {
                        Ok(r) => CohortSummary { center, error: None, report: Some(r) },
                        Err(e) => CohortSummary { center, error: Some(e.to_string()), report: None },
                    }
                }
                Err(e) => CohortSummary { center, error: Some(e.to_string()), report: None },
            };
            cohorts.push(summary);
        }
    }

    let checks = scenario.expected.as_ref().map_or(vec![], |e| check_expectations(e, &starts, &cohorts));
    let summary = Summary {
        scenario: scenario.name.clone(),
        description: scenario.description.clone(),
        tool: io::TOOL_VERSION.to_string(),
        spec: spec.to_text(),
        spec_sha256: spec.fingerprint(),
        phase_seed: scenario.phase_seed,
        horizon_periods: scenario.horizon_periods,
        integrator: run.integrator,
        grid: run.grid,
        checkpoints_periods: checkpoints.iter().map(|c| c / PERIOD).collect(),
        starts,
        cohorts,
        expectations_met: checks.iter().all(|c| c.passed),
        checks,
    };
    io::write_file(&out_dir.join("summary.json"), &summary.to_json())?;
    io::write_file(&out_dir.join("scenario.toml"), &scenario.to_toml())?;
    Ok(summary)
}

/// `out_root/<scenario name>`.
pub fn scenario_dir(out_root: &Path, scenario: &Scenario) -> PathBuf {
    out_root.join(&scenario.name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_points_in_order() {
        let p = canonical_points();
        assert_eq!(p.len(), 10);
        assert_eq!(p[2], [-1.5, 1.5]);
        assert_eq!(p[6], [-0.5, 0.0]);
        assert_eq!(p[9], [0.25, -0.25]);
    }

    #[test]
    fn cohort_template() {
        let c = square_cohort([0.0, 0.0], 0.04).unwrap();
        assert_eq!(c.len(), 13);
        for p in [[-0.02, 0.02], [0.01, 0.01], [0.0, 0.0], [-0.02, -0.02], [0.01, -0.01]] {
            assert!(c.contains(&p), "{p:?}");
        }
        let shifted = square_cohort([1.5, 1.5], 0.04).unwrap();
        for (a, b) in c.iter().zip(&shifted) {
            assert!((b[0] - a[0] - 1.5).abs() < 1e-15 && (b[1] - a[1] - 1.5).abs() < 1e-15);
        }
        for i in 0..13 {
            for j in i + 1..13 {
                assert_ne!(shifted[i], shifted[j]);
            }
        }
        assert!(square_cohort([0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn published_values() {
        let fn3 = published_phase_set("fn3").unwrap();
        assert_eq!(fn3.theta(Mode::new(1, 0)), Some(5.6703));
        assert_eq!(published_phase_set("fn5").unwrap().theta(Mode::new(0, 2)), Some(2.0226));
        assert_eq!(published_phase_set("fn8").unwrap().theta(Mode::new(1, 1)), Some(0.439));
        assert_eq!(published_phase_sets().len(), 5);
    }

    #[test]
    fn labels_are_transposed_onto_modes() {
        let spec = published_phase_set("fn3").unwrap().homogeneous(1.0).unwrap();
        let term = spec.terms().iter().find(|t| t.mode == Mode::new(0, 1)).unwrap();
        assert_eq!(term.phase, 5.6703);
        let inhom = published_phase_set("fn4").unwrap().spec(&[1.0, 0.2, 0.15, 0.1]).unwrap();
        let amp = |m, n| inhom.terms().iter().find(|t| t.mode == Mode::new(m, n)).unwrap().amplitude;
        assert_eq!((amp(1, 0), amp(0, 1)), (0.2, 0.15));
    }

    #[test]
    fn random_phases() {
        let a = random_phase_set(&SIX_MODES, 42);
        assert_eq!(a, random_phase_set(&SIX_MODES, 42));
        assert_ne!(a.theta, random_phase_set(&SIX_MODES, 43).theta);
        assert!(a.theta.iter().all(|&t| (0.0..std::f64::consts::TAU).contains(&t)));
        let n = 10_000;
        let mut sums = [0.0; 6];
        for seed in 0..n {
            for (s, t) in sums.iter_mut().zip(random_phase_set(&SIX_MODES, seed).theta) {
                *s += t;
            }
        }
        let sigma = std::f64::consts::TAU / 12f64.sqrt() / (n as f64).sqrt();
        for s in sums {
            assert!((s / n as f64 - std::f64::consts::PI).abs() < 3.0 * sigma);
        }
    }

    #[test]
    fn catalog_integrity() {
        let catalog = scenario_catalog();
        let mut names: Vec<&str> = catalog.iter().map(|s| s.name.as_str()).collect();
        for s in &catalog {
            s.validate().unwrap();
        }
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n, "duplicate names");
        for name in [
            "fn3-eps1",
            "fn4-eps0.5",
            "fn4-eps0.25",
            "fn4-eps0.1",
            "fn4-eps0.05",
            "fn4-inhom",
            "fn5-eps0.1",
            "fn7-cohorts",
            "fn8-inhom-cohorts",
            "fn3-eps1@500",
            "fn3-eps1@100",
        ] {
            assert!(names.contains(&name), "{name}");
        }
        let fn3 = find_scenario("fn3-eps1").unwrap();
        let e = fn3.expected.unwrap();
        assert_eq!(e.unconfined, vec![1, 2, 3, 4, 6]);
        assert_eq!(e.confined, vec![5, 7, 8, 9, 10]);
        let fn8 = find_scenario("fn8-inhom-cohorts").unwrap();
        assert_eq!(fn8.cohort.unwrap().centers, canonical_points().to_vec());
        let q = find_scenario("fn4-eps0.25").unwrap();
        assert_eq!(q.expected.unwrap().annulus[0].starts, vec![1, 2, 3, 4]);
    }

    #[test]
    fn truncation_relaxes_expectations() {
        let s = find_scenario("fn7-cohorts@500").unwrap();
        let ce = &s.expected.as_ref().unwrap().cohorts[0];
        assert_eq!((ce.max_distance, ce.final_distance, ce.min_mean_overlap), (None, None, Some(0.7)));
        let s = find_scenario("fn3-eps1@500").unwrap();
        assert_eq!(s.expected.unwrap().max_label_mismatches, 2);
        let s = find_scenario("fn3-eps1@100").unwrap();
        assert!(s.expected.unwrap().confined.is_empty());
        assert_eq!(find_scenario("fn3-eps1@42").unwrap().horizon_periods, 42);
        assert!(find_scenario("nope").is_err());
    }

    #[test]
    fn scenario_toml_roundtrip() {
        for s in scenario_catalog() {
            let back = Scenario::from_toml(&s.to_toml()).unwrap();
            assert_eq!(back, s, "{}", s.name);
        }
        let seeded = "name = \"r\"\nmodes = [[0,0],[1,0]]\nepsilons = [1, 0.5]\nphase_seed = 3\nstarts = [[1,0]]\nhorizon_periods = 2\n";
        let s = Scenario::from_toml(seeded).unwrap();
        assert_eq!(s.phase_seed, Some(3));
        let missing =
            "name = \"r\"\nmodes = [[0,0]]\nepsilons = [1]\nstarts = [[1,0]]\nhorizon_periods = 2\n";
        assert!(matches!(Scenario::from_toml(missing), Err(ExperimentError::Parse(_))));
        let bad_ref = format!("{seeded}[expected]\nconfined = [4]\n");
        assert!(matches!(Scenario::from_toml(&bad_ref), Err(ExperimentError::Invalid(_))));
    }

    #[test]
    fn checkpoint_lists() {
        let p = |v: &[f64]| v.iter().map(|c| c / PERIOD).map(|x| (x * 1e9).round() / 1e9).collect::<Vec<_>>();
        assert_eq!(p(&checkpoints_for(500.0)), vec![25.0, 100.0, 200.0, 500.0]);
        assert_eq!(p(&checkpoints_for(3000.0)), vec![25.0, 100.0, 200.0, 500.0, 1000.0, 2000.0, 3000.0]);
        assert_eq!(p(&checkpoints_for(100.0)), vec![12.5, 25.0, 50.0, 100.0]);
    }

    #[test]
    fn eps0_scenario_runs_and_meets_expectations() {
        let dir = tempfile::tempdir().unwrap();
        let s = find_scenario("eps0").unwrap();
        let summary = run_scenario(&s, &RunConfig::default(), dir.path()).unwrap();
        assert!(summary.expectations_met, "{}", summary.table());
        assert!(summary.starts.iter().all(|s| s.verdict.unwrap().label == ConfinementLabel::Confined));
        assert!(dir.path().join("p01.csv").exists() && dir.path().join("p10.svg").exists());
        assert!(dir.path().join("summary.json").exists());
    }
}

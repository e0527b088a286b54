//! Confinement and coverage measures for individual trajectories and cohorts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrator::{distance, Trajectory};
use crate::wavefunction::{period_averaged_density, WaveFunctionSpec, PERIOD};

/// Default checkpoint horizons, in periods.
pub const DEFAULT_CHECKPOINT_PERIODS: [u32; 7] = [25, 100, 200, 500, 1000, 2000, 3000];

/// Samples closer than this to the origin have no defined polar angle.
pub const ORIGIN_EXCLUSION: f64 = 1e-6;

/// Share of period-averaged Born mass that defines the significant cells.
pub const SIGNIFICANT_MASS: f64 = 0.99;

/// Time points per period when averaging |ψ|².
pub const PERIOD_QUADRATURE_POINTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosticsError {
    #[error("checkpoint {checkpoint} lies beyond the trajectory horizon {horizon}")]
    CheckpointBeyondHorizon { checkpoint: f64, horizon: f64 },
    #[error("checkpoints must be positive and strictly increasing")]
    UnsortedCheckpoints,
    #[error("classification needs at least {needed} checkpoints, got {got}")]
    TooFewCheckpoints { needed: usize, got: usize },
    #[error("cohort trajectories disagree on {0}")]
    MismatchedCohort(&'static str),
    #[error("a cohort needs at least two trajectories")]
    EmptyCohort,
    #[error("sample at t = {0} is at the origin, where the polar angle is undefined")]
    UndefinedAngle(f64),
    #[error("occupancy grids have different geometry")]
    GridMismatch,
}

/// Checkpoint times converted from periods.
pub fn checkpoints_from_periods(periods: &[u32]) -> Vec<f64> {
    periods.iter().map(|&p| p as f64 * PERIOD).collect()
}

/// Default checkpoints truncated to a horizon of `periods`.
pub fn default_checkpoints_up_to(periods: u32) -> Vec<f64> {
    let mut cps: Vec<u32> = DEFAULT_CHECKPOINT_PERIODS.iter().copied().filter(|&p| p <= periods).collect();
    if cps.last() != Some(&periods) {
        cps.push(periods);
    }
    checkpoints_from_periods(&cps)
}

/// Widths and heights of a trajectory's excursion up to each checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBoxSeries {
    pub checkpoints: Vec<f64>,
    pub widths: Vec<f64>,
    pub heights: Vec<f64>,
}

impl BoundingBoxSeries {
    /// width + height at each checkpoint.
    pub fn extents(&self) -> Vec<f64> {
        self.widths.iter().zip(&self.heights).map(|(w, h)| w + h).collect()
    }

    pub fn len(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkpoints.is_empty()
    }

    /// Relative change of `values` between checkpoint indices `i` and `j`.
    pub fn relative_growth(values: &[f64], i: usize, j: usize) -> f64 {
        relative_growth(values[i], values[j])
    }
}

fn relative_growth(before: f64, after: f64) -> f64 {
    if before > 0.0 {
        (after - before) / before
    } else if after > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

pub fn bounding_box_series(
    traj: &Trajectory,
    checkpoints: &[f64],
) -> Result<BoundingBoxSeries, DiagnosticsError> {
    if checkpoints.iter().any(|c| !(*c > 0.0)) || checkpoints.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DiagnosticsError::UnsortedCheckpoints);
    }
    let horizon = traj.horizon();
    // sample times carry roundoff; allow a hair beyond the last sample
    let slack = 1e-9 * horizon.max(1.0);
    if let Some(&last) = checkpoints.last() {
        if last > horizon + slack {
            return Err(DiagnosticsError::CheckpointBeyondHorizon { checkpoint: last, horizon });
        }
    }
    let mut widths = Vec::with_capacity(checkpoints.len());
    let mut heights = Vec::with_capacity(checkpoints.len());
    let (mut lo1, mut hi1, mut lo2, mut hi2) =
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    let mut samples = traj.samples.iter().peekable();
    for &cp in checkpoints {
        while let Some(s) = samples.next_if(|s| s.t <= cp + slack) {
            lo1 = lo1.min(s.q1);
            hi1 = hi1.max(s.q1);
            lo2 = lo2.min(s.q2);
            hi2 = hi2.max(s.q2);
        }
        widths.push((hi1 - lo1).max(0.0));
        heights.push((hi2 - lo2).max(0.0));
    }
    Ok(BoundingBoxSeries { checkpoints: checkpoints.to_vec(), widths, heights })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConfinementLabel {
    Confined,
    Unconfined,
    Indeterminate,
}

impl std::fmt::Display for ConfinementLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ConfinementLabel::Confined => "Confined",
            ConfinementLabel::Unconfined => "Unconfined",
            ConfinementLabel::Indeterminate => "Indeterminate",
        })
    }
}

/// Classifier thresholds, reported alongside every verdict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfinementThresholds {
    /// Relative growth of width + height over the final checkpoint pair below which the box has saturated.
    pub tail_growth: f64,
    /// Fraction of `reference_extent` at which the box counts as covering the support.
    pub support_fraction: f64,
    /// width + height of the bulk of the support.
    pub reference_extent: f64,
    pub min_checkpoints: usize,
}

impl Default for ConfinementThresholds {
    fn default() -> Self {
        ConfinementThresholds {
            tail_growth: 0.02,
            support_fraction: 0.8,
            reference_extent: DEFAULT_REFERENCE_EXTENT,
            min_checkpoints: 4,
        }
    }
}

/// Default width + height of the support bulk: a disk of radius L/√2 with L = 4.
pub const DEFAULT_REFERENCE_EXTENT: f64 = 8.0 * std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfinementVerdict {
    pub label: ConfinementLabel,
    pub growth_tail: f64,
    /// Earliest checkpoint from which width + height stays within the tail threshold of its final value.
    pub saturation_checkpoint: Option<f64>,
    pub thresholds: ConfinementThresholds,
}

pub fn classify_confinement(series: &BoundingBoxSeries) -> Result<ConfinementVerdict, DiagnosticsError> {
    classify_confinement_with(series, &ConfinementThresholds::default())
}

pub fn classify_confinement_with(
    series: &BoundingBoxSeries,
    thresholds: &ConfinementThresholds,
) -> Result<ConfinementVerdict, DiagnosticsError> {
    let n = series.len();
    if n < thresholds.min_checkpoints.max(2) {
        return Err(DiagnosticsError::TooFewCheckpoints {
            needed: thresholds.min_checkpoints.max(2),
            got: n,
        });
    }
    let ext = series.extents();
    let (pen, last) = (ext[n - 2], ext[n - 1]);
    let growth_tail = relative_growth(pen, last);
    let saturation_checkpoint = (0..n)
        .find(|&i| ext[i..].iter().all(|&e| last - e <= thresholds.tail_growth * last))
        .filter(|&i| i < n - 1)
        .map(|i| series.checkpoints[i]);

    let covers = thresholds.support_fraction * thresholds.reference_extent;
    let label = if !(pen.is_finite() && last.is_finite()) || growth_tail.is_nan() {
        ConfinementLabel::Indeterminate
    } else if growth_tail < thresholds.tail_growth && pen < covers {
        ConfinementLabel::Confined
    } else if growth_tail >= thresholds.tail_growth || pen >= covers {
        ConfinementLabel::Unconfined
    } else {
        ConfinementLabel::Indeterminate
    };
    Ok(ConfinementVerdict { label, growth_tail, saturation_checkpoint, thresholds: *thresholds })
}

/// Square grid over [−half_width, half_width]².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub half_width: f64,
    pub resolution: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { half_width: 4.0, resolution: 60 }
    }
}

impl GridSpec {
    pub fn new(half_width: f64, resolution: usize) -> Self {
        GridSpec { half_width, resolution }
    }

    pub fn cell_width(&self) -> f64 {
        2.0 * self.half_width / self.resolution as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_width() * self.cell_width()
    }

    pub fn cells(&self) -> usize {
        self.resolution * self.resolution
    }

    /// Row-major index (row = q₂ bin, column = q₁ bin), or `None` outside the bounds.
    #[inline]
    pub fn cell_of(&self, q: [f64; 2]) -> Option<usize> {
        let w = self.cell_width();
        let bin = |x: f64| {
            let f = ((x + self.half_width) / w).floor();
            if f >= 0.0 && f < self.resolution as f64 {
                Some(f as usize)
            } else if x == self.half_width {
                // closed upper edge
                Some(self.resolution - 1)
            } else {
                None
            }
        };
        Some(bin(q[1])? * self.resolution + bin(q[0])?)
    }

    pub fn center(&self, cell: usize) -> [f64; 2] {
        let w = self.cell_width();
        let (row, col) = (cell / self.resolution, cell % self.resolution);
        [-self.half_width + (col as f64 + 0.5) * w, -self.half_width + (row as f64 + 0.5) * w]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub grid: GridSpec,
    pub counts: Vec<u64>,
    pub outside: u64,
}

impl OccupancyGrid {
    pub fn empty(grid: GridSpec) -> Self {
        OccupancyGrid { grid, counts: vec![0; grid.cells()], outside: 0 }
    }

    pub fn add(&mut self, q: [f64; 2]) {
        match self.grid.cell_of(q) {
            Some(c) => self.counts[c] += 1,
            None => self.outside += 1,
        }
    }

    pub fn from_points(grid: GridSpec, points: impl IntoIterator<Item = [f64; 2]>) -> Self {
        let mut g = Self::empty(grid);
        for q in points {
            g.add(q);
        }
        g
    }

    pub fn total_inside(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn visited(&self) -> impl Iterator<Item = usize> + '_ {
        self.counts.iter().enumerate().filter(|(_, &c)| c > 0).map(|(i, _)| i)
    }

    pub fn visited_count(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    pub fn union(&self, other: &OccupancyGrid) -> Result<OccupancyGrid, DiagnosticsError> {
        if self.grid != other.grid {
            return Err(DiagnosticsError::GridMismatch);
        }
        Ok(OccupancyGrid {
            grid: self.grid,
            counts: self.counts.iter().zip(&other.counts).map(|(a, b)| a + b).collect(),
            outside: self.outside + other.outside,
        })
    }

    /// Rows from q₂ = −L upward, one comma-separated line per row.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.counts.chunks(self.grid.resolution) {
            let line: Vec<String> = row.iter().map(u64::to_string).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    /// Radii of visited cell centers, as (min, max).
    pub fn visited_radius_range(&self) -> Option<(f64, f64)> {
        self.visited().map(|c| self.grid.center(c)).map(|[x, y]| x.hypot(y)).fold(None, |acc, r| match acc {
            None => Some((r, r)),
            Some((lo, hi)) => Some((lo.min(r), hi.max(r))),
        })
    }

    /// Number of samples landing within `radius` of the origin.
    pub fn visits_within(&self, radius: f64) -> u64 {
        let w = self.grid.cell_width();
        // a cell can hold points within the disk if its nearest point is inside
        self.counts
            .iter()
            .enumerate()
            .filter(|(c, &n)| {
                let [x, y] = self.grid.center(*c);
                n > 0 && nearest_to_origin(x, w).hypot(nearest_to_origin(y, w)) < radius
            })
            .map(|(_, &n)| n)
            .sum()
    }
}

fn nearest_to_origin(center: f64, width: f64) -> f64 {
    (center.abs() - width / 2.0).max(0.0)
}

pub fn occupancy_grid(traj: &Trajectory, grid: GridSpec) -> OccupancyGrid {
    OccupancyGrid::from_points(grid, traj.positions())
}

/// Jaccard index of the visited-cell sets; two empty grids count as identical.
pub fn jaccard(a: &OccupancyGrid, b: &OccupancyGrid) -> Result<f64, DiagnosticsError> {
    if a.grid != b.grid {
        return Err(DiagnosticsError::GridMismatch);
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.counts.iter().zip(&b.counts) {
        let (x, y) = (*x > 0, *y > 0);
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Cells holding the top 99% of period-averaged |ψ|² mass.
pub fn significant_cells(spec: &WaveFunctionSpec, grid: GridSpec) -> Vec<bool> {
    let mass: Vec<f64> = (0..grid.cells())
        .map(|c| {
            let [x, y] = grid.center(c);
            period_averaged_density(spec, x, y, PERIOD_QUADRATURE_POINTS)
        })
        .collect();
    let total: f64 = mass.iter().sum();
    let mut order: Vec<usize> = (0..mass.len()).collect();
    order.sort_by(|&a, &b| mass[b].total_cmp(&mass[a]).then(a.cmp(&b)));
    let mut mask = vec![false; mass.len()];
    let mut acc = 0.0;
    for c in order {
        if acc >= SIGNIFICANT_MASS * total {
            break;
        }
        mask[c] = true;
        acc += mass[c];
    }
    mask
}

/// Fraction of Born-significant cells the grid has visited.
pub fn coverage_fraction(grid: &OccupancyGrid, spec: &WaveFunctionSpec) -> f64 {
    coverage_with_mask(grid, &significant_cells(spec, grid.grid))
}

pub fn coverage_with_mask(grid: &OccupancyGrid, mask: &[bool]) -> f64 {
    let significant = mask.iter().filter(|&&m| m).count();
    if significant == 0 {
        return 0.0;
    }
    let hit = grid.counts.iter().zip(mask).filter(|(&c, &m)| m && c > 0).count();
    hit as f64 / significant as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub center: [f64; 2],
    pub edge: f64,
    pub starts: Vec<[f64; 2]>,
    /// Largest distance between any two members at any common sample time.
    pub max_pairwise_distance: f64,
    pub max_distance_time: f64,
    pub max_distance_pair: (usize, usize),
    /// Per-pair maximum over time.
    pub pair_max_distances: Vec<Vec<f64>>,
    pub final_pairwise_distances: Vec<Vec<f64>>,
    pub mean_overlap: f64,
    pub min_overlap: f64,
}

pub fn cohort_analysis(trajs: &[Trajectory], grid: GridSpec) -> Result<CohortReport, DiagnosticsError> {
    if trajs.len() < 2 {
        return Err(DiagnosticsError::EmptyCohort);
    }
    let first = &trajs[0];
    for t in &trajs[1..] {
        if t.spec_fingerprint != first.spec_fingerprint {
            return Err(DiagnosticsError::MismatchedCohort("spec"));
        }
        if t.samples.len() != first.samples.len() || t.sample_interval != first.sample_interval {
            return Err(DiagnosticsError::MismatchedCohort("horizon"));
        }
    }
    let k = trajs.len();
    let starts: Vec<[f64; 2]> = trajs.iter().map(|t| t.start).collect();
    let center = [
        starts.iter().map(|s| s[0]).sum::<f64>() / k as f64,
        starts.iter().map(|s| s[1]).sum::<f64>() / k as f64,
    ];
    let span = |i: usize| {
        let lo = starts.iter().map(|s| s[i]).fold(f64::INFINITY, f64::min);
        let hi = starts.iter().map(|s| s[i]).fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    };
    let edge = span(0).max(span(1));

    let mut pair_max = vec![vec![0.0; k]; k];
    let mut best = (0.0, 0.0, (0, 1));
    for i in 0..k {
        for j in i + 1..k {
            let (mut m, mut at) = (0.0f64, 0.0);
            for (a, b) in trajs[i].samples.iter().zip(&trajs[j].samples) {
                let d = distance(a.position(), b.position());
                if d > m {
                    m = d;
                    at = a.t;
                }
            }
            pair_max[i][j] = m;
            pair_max[j][i] = m;
            if m > best.0 {
                best = (m, at, (i, j));
            }
        }
    }
    let finals: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| distance(trajs[i].final_position(), trajs[j].final_position())).collect())
        .collect();

    let grids: Vec<OccupancyGrid> = trajs.iter().map(|t| occupancy_grid(t, grid)).collect();
    let mut overlaps = vec![];
    for i in 0..k {
        for j in i + 1..k {
            overlaps.push(jaccard(&grids[i], &grids[j])?);
        }
    }
    let mean_overlap = overlaps.iter().sum::<f64>() / overlaps.len() as f64;
    let min_overlap = overlaps.iter().copied().fold(f64::INFINITY, f64::min);

    Ok(CohortReport {
        center,
        edge,
        starts,
        max_pairwise_distance: best.0,
        max_distance_time: best.1,
        max_distance_pair: best.2,
        pair_max_distances: pair_max,
        final_pairwise_distances: finals,
        mean_overlap,
        min_overlap,
    })
}

/// Mean angular velocity about the origin in radians per period, from a least-squares fit of the unwrapped angle.
pub fn angular_drift_rate(traj: &Trajectory) -> Result<f64, DiagnosticsError> {
    let mut unwrapped = Vec::with_capacity(traj.samples.len());
    let mut prev: Option<f64> = None;
    let mut offset = 0.0;
    for s in &traj.samples {
        if s.q1.hypot(s.q2) < ORIGIN_EXCLUSION {
            return Err(DiagnosticsError::UndefinedAngle(s.t));
        }
        let a = s.q2.atan2(s.q1);
        if let Some(p) = prev {
            let d = a - p;
            if d > std::f64::consts::PI {
                offset -= std::f64::consts::TAU;
            } else if d < -std::f64::consts::PI {
                offset += std::f64::consts::TAU;
            }
        }
        prev = Some(a);
        unwrapped.push((s.t, a + offset));
    }
    if unwrapped.len() < 2 {
        return Ok(0.0);
    }
    let n = unwrapped.len() as f64;
    let mt = unwrapped.iter().map(|p| p.0).sum::<f64>() / n;
    let ma = unwrapped.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sta, mut stt) = (0.0, 0.0);
    for &(t, a) in &unwrapped {
        sta += (t - mt) * (a - ma);
        stt += (t - mt) * (t - mt);
    }
    Ok(if stt > 0.0 { sta / stt * PERIOD } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::Sample;
    use crate::wavefunction::FOUR_MODES;

    fn synthetic(points: impl IntoIterator<Item = (f64, f64, f64)>) -> Trajectory {
        let samples: Vec<Sample> = points.into_iter().map(|(t, q1, q2)| Sample { t, q1, q2 }).collect();
        Trajectory {
            start: samples[0].position(),
            spec_fingerprint: "test".into(),
            sample_interval: PERIOD / 100.0,
            samples,
            steps_taken: 0,
            steps_rejected: 0,
            min_density_seen: 1.0,
        }
    }

    fn stationary(q: [f64; 2], periods: usize) -> Trajectory {
        synthetic((0..=periods * 100).map(|k| (k as f64 * PERIOD / 100.0, q[0], q[1])))
    }

    fn circle(rate_per_period: f64, phase: f64, periods: usize) -> Trajectory {
        synthetic((0..=periods * 100).map(|k| {
            let t = k as f64 * PERIOD / 100.0;
            let a = phase + rate_per_period * t / PERIOD;
            (t, 2.0 * a.cos(), 2.0 * a.sin())
        }))
    }

    #[test]
    fn stationary_box_is_zero_and_confined() {
        let tr = stationary([0.3, -0.2], 30);
        let s = bounding_box_series(&tr, &checkpoints_from_periods(&[5, 10, 20, 30])).unwrap();
        assert!(s.widths.iter().chain(&s.heights).all(|&v| v == 0.0));
        let v = classify_confinement(&s).unwrap();
        assert_eq!(v.label, ConfinementLabel::Confined);
        assert_eq!(v.growth_tail, 0.0);
    }

    #[test]
    fn box_errors() {
        let tr = stationary([0.0, 1.0], 3);
        assert!(matches!(
            bounding_box_series(&tr, &checkpoints_from_periods(&[1, 4])),
            Err(DiagnosticsError::CheckpointBeyondHorizon { .. })
        ));
        assert_eq!(
            bounding_box_series(&tr, &checkpoints_from_periods(&[2, 1])),
            Err(DiagnosticsError::UnsortedCheckpoints)
        );
        let s = bounding_box_series(&tr, &checkpoints_from_periods(&[1, 2, 3])).unwrap();
        assert!(matches!(classify_confinement(&s), Err(DiagnosticsError::TooFewCheckpoints { .. })));
    }

    #[test]
    fn box_tracks_prefix_extrema() {
        let tr = synthetic([(0.0, 0.0, 0.0), (1.0, 1.0, -0.5), (2.0, -1.0, 0.0), (3.0, 0.0, 2.0)]);
        let s = bounding_box_series(&tr, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.widths, vec![1.0, 2.0, 2.0]);
        assert_eq!(s.heights, vec![0.5, 0.5, 2.5]);
    }

    #[test]
    fn growing_series_is_unconfined() {
        let s = BoundingBoxSeries {
            checkpoints: vec![1.0, 2.0, 3.0, 4.0],
            widths: vec![1.0, 1.5, 2.0, 2.5],
            heights: vec![1.0, 1.5, 2.0, 2.5],
        };
        let v = classify_confinement(&s).unwrap();
        assert_eq!(v.label, ConfinementLabel::Unconfined);
        assert!((v.growth_tail - 0.25).abs() < 1e-12);

        // saturated but as large as the support bulk
        let big = BoundingBoxSeries { widths: vec![4.6; 4], heights: vec![4.6; 4], ..s.clone() };
        assert_eq!(classify_confinement(&big).unwrap().label, ConfinementLabel::Unconfined);

        let small =
            BoundingBoxSeries { widths: vec![0.5, 0.9, 1.0, 1.01], heights: vec![0.5, 0.9, 1.0, 1.0], ..s };
        let v = classify_confinement(&small).unwrap();
        assert_eq!(v.label, ConfinementLabel::Confined);
        assert_eq!(v.saturation_checkpoint, Some(3.0));
    }

    #[test]
    fn finer_checkpoints_do_not_flip_confined() {
        let tr = circle(0.0, 0.0, 1);
        let mut rng_state = 0.3f64;
        let wobble = synthetic(tr.samples.iter().map(|s| {
            rng_state = (rng_state * 3.7).fract();
            (s.t, 0.5 * (s.t).sin() + 0.01 * rng_state, 0.3 * (0.7 * s.t).cos())
        }));
        let coarse = bounding_box_series(&wobble, &[0.5, 1.0, 5.0, 6.0]).unwrap();
        let fine = bounding_box_series(&wobble, &[0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let a = classify_confinement(&coarse).unwrap();
        let b = classify_confinement(&fine).unwrap();
        assert_eq!(a.growth_tail, b.growth_tail);
        if a.label == ConfinementLabel::Confined {
            assert_eq!(b.label, ConfinementLabel::Confined);
        }
    }

    #[test]
    fn grid_basics() {
        let g = GridSpec::default();
        assert_eq!(g.cell_of([-4.0, -4.0]), Some(0));
        assert_eq!(g.cell_of([4.0, 4.0]), Some(3599));
        assert_eq!(g.cell_of([4.1, 0.0]), None);
        assert_eq!(g.cell_of([f64::NAN, 0.0]), None);
        let c = g.cell_of([0.01, -0.01]).unwrap();
        let [x, y] = g.center(c);
        assert!((x - g.cell_width() / 2.0).abs() < 1e-12 && (y + g.cell_width() / 2.0).abs() < 1e-12);

        let tr = stationary([1.0, 1.0], 2);
        let occ = occupancy_grid(&tr, g);
        assert_eq!(occ.visited_count(), 1);
        assert_eq!(occ.total_inside(), tr.samples.len() as u64);
        let far = occupancy_grid(&stationary([5.0, 0.0], 1), g);
        assert_eq!(far.outside, 101);
        assert_eq!(far.total_inside(), 0);
        assert_eq!(occupancy_grid(&tr, g), occ);
        let csv = occ.to_csv();
        assert_eq!(csv.lines().count(), 60);
    }

    #[test]
    fn jaccard_properties() {
        let g = GridSpec::new(2.0, 10);
        let a = OccupancyGrid::from_points(g, [[0.1, 0.1], [1.0, 1.0]]);
        let b = OccupancyGrid::from_points(g, [[0.1, 0.1], [-1.0, 1.0]]);
        let c = OccupancyGrid::from_points(g, [[-1.5, -1.5]]);
        assert_eq!(jaccard(&a, &a).unwrap(), 1.0);
        assert_eq!(jaccard(&a, &b).unwrap(), jaccard(&b, &a).unwrap());
        assert!((jaccard(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(jaccard(&a, &c).unwrap(), 0.0);
        assert!(jaccard(&a, &OccupancyGrid::empty(GridSpec::default())).is_err());
    }

    #[test]
    fn coverage_of_stationary_and_union() {
        let spec =
            WaveFunctionSpec::homogeneous(&FOUR_MODES, 1.0, &[0.5442, 2.3099, 5.6703, 4.5333]).unwrap();
        let g = GridSpec::default();
        let mask = significant_cells(&spec, g);
        let n = mask.iter().filter(|&&m| m).count();
        let one = occupancy_grid(&stationary([0.0, 0.1], 1), g);
        assert!((coverage_with_mask(&one, &mask) - 1.0 / n as f64).abs() < 1e-15);
        let two = occupancy_grid(&circle(1.0, 0.0, 2), g);
        let u = one.union(&two).unwrap();
        let cu = coverage_fraction(&u, &spec);
        assert!(cu >= coverage_fraction(&one, &spec) && cu >= coverage_fraction(&two, &spec));
    }

    #[test]
    fn drift_rates() {
        assert!(angular_drift_rate(&stationary([1.0, 0.5], 3)).unwrap().abs() < 1e-15);
        let one_rev = angular_drift_rate(&circle(std::f64::consts::TAU, 0.3, 5)).unwrap();
        assert!((one_rev - std::f64::consts::TAU).abs() < 1e-9);
        let slow = angular_drift_rate(&circle(-0.01, 2.0, 50)).unwrap();
        assert!((slow + 0.01).abs() < 1e-9);
        let at_origin = synthetic([(0.0, 1.0, 0.0), (0.1, 0.0, 0.0)]);
        assert_eq!(angular_drift_rate(&at_origin), Err(DiagnosticsError::UndefinedAngle(0.1)));
    }

    #[test]
    fn cohort_of_stationary_points() {
        let pts: Vec<Trajectory> = (0..13)
            .map(|i| {
                let mut t = stationary([1.5 + 0.001 * i as f64, 1.5], 2);
                t.start = [1.5 + 0.001 * i as f64, 1.5];
                t
            })
            .collect();
        let r = cohort_analysis(&pts, GridSpec::default()).unwrap();
        assert!((r.max_pairwise_distance - 0.012).abs() < 1e-12);
        assert_eq!(r.mean_overlap, 1.0);
        let max_final = r.final_pairwise_distances.iter().flatten().copied().fold(0.0, f64::max);
        assert!(r.max_pairwise_distance >= max_final);

        let mut other = pts.clone();
        other[3].spec_fingerprint = "else".into();
        assert_eq!(
            cohort_analysis(&other, GridSpec::default()),
            Err(DiagnosticsError::MismatchedCohort("spec"))
        );
        let mut short = pts.clone();
        short[1].samples.pop();
        assert_eq!(
            cohort_analysis(&short, GridSpec::default()),
            Err(DiagnosticsError::MismatchedCohort("horizon"))
        );
        assert_eq!(cohort_analysis(&pts[..1], GridSpec::default()), Err(DiagnosticsError::EmptyCohort));
    }

    #[test]
    fn annulus_helpers() {
        let g = GridSpec::default();
        let ring = occupancy_grid(&circle(1.0, 0.0, 3), g);
        assert_eq!(ring.visits_within(1.0), 0);
        let (lo, hi) = ring.visited_radius_range().unwrap();
        assert!(lo > 1.8 && hi < 2.2);
    }
}

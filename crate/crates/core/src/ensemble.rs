//! Particle ensembles transported by the guidance flow, and the
//! coarse-grained H-function comparing their histogram with |ψ|².

use std::f64::consts::{PI, TAU};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::GridSpec;
use crate::integrator::{advance, IntegratorConfig};
use crate::par;
use crate::wavefunction::{born_density, marginal_density, WaveFunctionSpec, NODE_GUARD};

/// Points drawn per RNG stream; sampling is reproducible regardless of worker count.
const CHUNK: usize = 4096;

/// Half-width of the proposal box used for Born rejection sampling.
const BORN_BOX: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnsembleError {
    #[error("ensemble size must be at least 1")]
    Empty,
    #[error("unknown initial distribution '{0}' (expected ground, disk:R, gaussian:SIGMA[,C1,C2] or born)")]
    UnknownKind(String),
    #[error("invalid distribution parameter: {0}")]
    BadParameter(String),
    #[error("grid must have positive half-width and resolution")]
    BadGrid,
}

#[derive(Debug, Clone)]
pub enum InitialDistribution {
    /// |φ₀(q₁)φ₀(q₂)|², the ground-state Born density.
    GroundBorn,
    UniformDisk {
        radius: f64,
        center: [f64; 2],
    },
    Gaussian {
        sigma: f64,
        center: [f64; 2],
    },
    /// |ψ(q, t)|² of the given spec.
    Born {
        spec: WaveFunctionSpec,
        t: f64,
    },
}

impl InitialDistribution {
    /// Parses `ground`, `disk:R`, `gaussian:SIGMA[,C1,C2]` or `born`; `born` uses `spec` at t = 0.
    pub fn parse(text: &str, spec: &WaveFunctionSpec) -> Result<Self, EnsembleError> {
        let (name, args) = text.split_once(':').unwrap_or((text, ""));
        let nums = || -> Result<Vec<f64>, EnsembleError> {
            args.split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| s.trim().parse::<f64>().map_err(|_| EnsembleError::BadParameter(s.to_string())))
                .collect()
        };
        let dist = match name.trim() {
            "ground" => InitialDistribution::GroundBorn,
            "born" => InitialDistribution::Born { spec: spec.clone(), t: 0.0 },
            "disk" => match nums()?[..] {
                [] => InitialDistribution::UniformDisk { radius: 1.0, center: [0.0, 0.0] },
                [r] => InitialDistribution::UniformDisk { radius: r, center: [0.0, 0.0] },
                [r, c1, c2] => InitialDistribution::UniformDisk { radius: r, center: [c1, c2] },
                _ => return Err(EnsembleError::BadParameter(args.to_string())),
            },
            "gaussian" => match nums()?[..] {
                [s] => InitialDistribution::Gaussian { sigma: s, center: [0.0, 0.0] },
                [s, c1, c2] => InitialDistribution::Gaussian { sigma: s, center: [c1, c2] },
                _ => return Err(EnsembleError::BadParameter(args.to_string())),
            },
            _ => return Err(EnsembleError::UnknownKind(text.to_string())),
        };
        dist.validate()?;
        Ok(dist)
    }

    fn validate(&self) -> Result<(), EnsembleError> {
        let ok = match self {
            InitialDistribution::UniformDisk { radius, center } => {
                radius.is_finite() && *radius > 0.0 && center.iter().all(|c| c.is_finite())
            }
            InitialDistribution::Gaussian { sigma, center } => {
                sigma.is_finite() && *sigma > 0.0 && center.iter().all(|c| c.is_finite())
            }
            InitialDistribution::Born { t, .. } => t.is_finite(),
            InitialDistribution::GroundBorn => true,
        };
        if ok {
            Ok(())
        } else {
            Err(EnsembleError::BadParameter(self.to_string()))
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> [f64; 2] {
        match self {
            InitialDistribution::GroundBorn => {
                let normal = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).expect("finite width");
                [normal.sample(rng), normal.sample(rng)]
            }
            InitialDistribution::UniformDisk { radius, center } => {
                let r = radius * rng.gen::<f64>().sqrt();
                let (s, c) = (TAU * rng.gen::<f64>()).sin_cos();
                [center[0] + r * c, center[1] + r * s]
            }
            InitialDistribution::Gaussian { sigma, center } => {
                let normal = Normal::new(0.0, *sigma).expect("validated width");
                [center[0] + normal.sample(rng), center[1] + normal.sample(rng)]
            }
            InitialDistribution::Born { spec, t } => {
                // |φ_k| ≤ π^(−1/4) for every k, so |ψ|² ≤ N²(Σε)²/π
                let sum: f64 = spec.terms().iter().map(|term| term.amplitude).sum();
                let bound = (spec.normalization() * sum).powi(2) / PI;
                loop {
                    let q1 = rng.gen_range(-BORN_BOX..BORN_BOX);
                    let q2 = rng.gen_range(-BORN_BOX..BORN_BOX);
                    if rng.gen::<f64>() * bound < born_density(spec, q1, q2, *t) {
                        return [q1, q2];
                    }
                }
            }
        }
    }
}

impl fmt::Display for InitialDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialDistribution::GroundBorn => write!(f, "ground"),
            InitialDistribution::UniformDisk { radius, center } => {
                write!(f, "disk:{radius},{},{}", center[0], center[1])
            }
            InitialDistribution::Gaussian { sigma, center } => {
                write!(f, "gaussian:{sigma},{},{}", center[0], center[1])
            }
            InitialDistribution::Born { spec, t } => write!(f, "born:{}@{t}", spec.fingerprint()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleState {
    pub spec_fingerprint: String,
    pub t: f64,
    pub points: Vec<[f64; 2]>,
    pub seed: u64,
    pub initial_density_tag: String,
    /// Points dropped by failed integrations since sampling.
    pub failed: usize,
}

impl EnsembleState {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Draws `n` points at t = 0. Chunk `k` uses ChaCha8 stream `k` of `seed`.
pub fn sample_initial(
    kind: &InitialDistribution,
    n: usize,
    seed: u64,
    spec: &WaveFunctionSpec,
    workers: Option<usize>,
) -> Result<EnsembleState, EnsembleError> {
    if n == 0 {
        return Err(EnsembleError::Empty);
    }
    kind.validate()?;
    let chunks: Vec<(u64, usize)> =
        (0..n.div_ceil(CHUNK)).map(|k| (k as u64, CHUNK.min(n - k * CHUNK))).collect();
    let parts = par::map(&chunks, workers, |&(k, len)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k);
        (0..len).map(|_| kind.draw(&mut rng)).collect::<Vec<_>>()
    });
    let t = match kind {
        InitialDistribution::Born { t, .. } => *t,
        _ => 0.0,
    };
    Ok(EnsembleState {
        spec_fingerprint: spec.fingerprint(),
        t,
        points: parts.concat(),
        seed,
        initial_density_tag: kind.to_string(),
        failed: 0,
    })
}

/// Advances every point by `horizon`; points whose integration fails are dropped and counted.
pub fn evolve_ensemble(
    spec: &WaveFunctionSpec,
    state: &EnsembleState,
    horizon: f64,
    config: &IntegratorConfig,
    workers: Option<usize>,
) -> EnsembleState {
    let (t0, t1) = (state.t, state.t + horizon);
    let moved = par::map(&state.points, workers, |&p| advance(spec, p, t0, t1, config).ok());
    let before = moved.len();
    let points: Vec<[f64; 2]> = moved.into_iter().flatten().collect();
    EnsembleState {
        spec_fingerprint: spec.fingerprint(),
        t: t1,
        failed: state.failed + before - points.len(),
        points,
        seed: state.seed,
        initial_density_tag: state.initial_density_tag.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HRecord {
    pub t: f64,
    pub resolution: usize,
    pub hbar: f64,
    /// Cells with at least one particle.
    pub cells_used: usize,
    /// Occupied cells where the reference density was clamped at the node guard.
    pub clamped: usize,
    /// Particles outside the grid; they count toward the normalization but not the sum.
    pub outside: usize,
}

/// Sub-cell midpoints per axis in the |ψ|² cell average.
pub const DEFAULT_SUBCELLS: usize = 4;

pub const DEFAULT_H_GRID: GridSpec = GridSpec { half_width: 4.0, resolution: 30 };

/// Cell averages of |ψ(·, t)|² by `sub × sub` midpoint quadrature, in `GridSpec` cell order.
pub fn reference_density(spec: &WaveFunctionSpec, grid: GridSpec, t: f64, sub: usize) -> Vec<f64> {
    let sub = sub.max(1);
    let w = grid.cell_width();
    (0..grid.cells())
        .map(|cell| {
            let c = grid.center(cell);
            let mut acc = 0.0;
            for i in 0..sub {
                for j in 0..sub {
                    let q1 = c[0] - 0.5 * w + (i as f64 + 0.5) * w / sub as f64;
                    let q2 = c[1] - 0.5 * w + (j as f64 + 0.5) * w / sub as f64;
                    acc += born_density(spec, q1, q2, t);
                }
            }
            acc / (sub * sub) as f64
        })
        .collect()
}

/// Σ ρ̄ ln(ρ̄/ref)·A over occupied cells, where ρ̄ = count/(total·A).
///
/// Returns (H̄, occupied cells, clamped cells).
pub fn h_function(counts: &[u64], total: usize, reference: &[f64], cell_area: f64) -> (f64, usize, usize) {
    let mut h = 0.0;
    let (mut used, mut clamped) = (0, 0);
    for (&c, &r) in counts.iter().zip(reference) {
        if c == 0 {
            continue;
        }
        used += 1;
        let r = if r >= NODE_GUARD {
            r
        } else {
            clamped += 1;
            NODE_GUARD
        };
        let rho = c as f64 / (total as f64 * cell_area);
        h += rho * (rho / r).ln() * cell_area;
    }
    (h, used, clamped)
}

pub fn coarse_grained_h(
    state: &EnsembleState,
    spec: &WaveFunctionSpec,
    grid: GridSpec,
) -> Result<HRecord, EnsembleError> {
    coarse_grained_h_with(state, spec, grid, DEFAULT_SUBCELLS)
}

pub fn coarse_grained_h_with(
    state: &EnsembleState,
    spec: &WaveFunctionSpec,
    grid: GridSpec,
    sub: usize,
) -> Result<HRecord, EnsembleError> {
    if state.is_empty() {
        return Err(EnsembleError::Empty);
    }
    if !(grid.half_width > 0.0 && grid.resolution > 0) {
        return Err(EnsembleError::BadGrid);
    }
    let mut counts = vec![0u64; grid.cells()];
    let mut outside = 0;
    for &p in &state.points {
        match grid.cell_of(p) {
            Some(cell) => counts[cell] += 1,
            None => outside += 1,
        }
    }
    let reference = reference_density(spec, grid, state.t, sub);
    let (hbar, cells_used, clamped) = h_function(&counts, state.len(), &reference, grid.cell_area());
    Ok(HRecord { t: state.t, resolution: grid.resolution, hbar, cells_used, clamped, outside })
}

/// Snapshots and H̄ at the initial time and after each of `steps` successive intervals.
#[derive(Debug, Clone)]
pub struct EnsembleRun {
    pub snapshots: Vec<EnsembleState>,
    pub records: Vec<HRecord>,
}

/// Evolves `initial` through `steps` intervals, recording a snapshot and H̄ after each.
pub fn run_ensemble(
    spec: &WaveFunctionSpec,
    initial: EnsembleState,
    step: f64,
    steps: usize,
    grid: GridSpec,
    config: &IntegratorConfig,
    workers: Option<usize>,
) -> Result<EnsembleRun, EnsembleError> {
    let mut records = vec![coarse_grained_h(&initial, spec, grid)?];
    let mut snapshots = vec![initial];
    for _ in 0..steps {
        let next = evolve_ensemble(spec, snapshots.last().expect("non-empty"), step, config, workers);
        records.push(coarse_grained_h(&next, spec, grid)?);
        snapshots.push(next);
    }
    Ok(EnsembleRun { snapshots, records })
}

/// Cumulative distribution of the marginal of |ψ(·, t)|² along `axis`, tabulated for interpolation.
#[derive(Debug, Clone)]
pub struct MarginalCdf {
    lo: f64,
    step: f64,
    values: Vec<f64>,
}

impl MarginalCdf {
    pub fn new(spec: &WaveFunctionSpec, axis: usize, t: f64) -> Self {
        let (lo, hi, n) = (-10.0, 10.0, 20_000);
        let step = (hi - lo) / n as f64;
        let f = |x: f64| marginal_density(spec, axis, x, t);
        let mut values = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        let mut left = f(lo);
        values.push(0.0);
        for i in 0..n {
            let a = lo + i as f64 * step;
            let right = f(a + step);
            acc += step / 6.0 * (left + 4.0 * f(a + 0.5 * step) + right);
            values.push(acc);
            left = right;
        }
        MarginalCdf { lo, step, values }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let u = (x - self.lo) / self.step;
        if u <= 0.0 {
            return 0.0;
        }
        let i = u.floor() as usize;
        if i + 1 >= self.values.len() {
            return *self.values.last().expect("nonempty table");
        }
        let frac = u - i as f64;
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }
}

/// Kolmogorov–Smirnov statistic sup|F_n − F| of `samples` against `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted.iter().enumerate().fold(0.0, |d, (i, &x)| {
        let f = cdf(x);
        d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n)
    })
}

/// Asymptotic one-sample KS critical value at significance `alpha`.
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    (-0.5 * (alpha / 2.0).ln()).sqrt() / (n as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsReport {
    pub axis: usize,
    pub statistic: f64,
    pub critical: f64,
    pub passes: bool,
}

/// Per-axis KS comparison of the ensemble against the marginals of |ψ(·, state.t)|².
pub fn born_ks(state: &EnsembleState, spec: &WaveFunctionSpec, alpha: f64) -> [KsReport; 2] {
    let critical = ks_critical(state.len(), alpha);
    [0, 1].map(|axis| {
        let cdf = MarginalCdf::new(spec, axis, state.t);
        let xs: Vec<f64> = state.points.iter().map(|p| p[axis]).collect();
        let statistic = ks_statistic(&xs, |x| cdf.eval(x));
        KsReport { axis, statistic, critical, passes: statistic < critical }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavefunction::{Mode, FOUR_MODES};
    use crate::PERIOD;

    const FN3: [f64; 4] = [0.5442, 2.3099, 5.6703, 4.5333];

    fn fn3() -> WaveFunctionSpec {
        WaveFunctionSpec::homogeneous(&FOUR_MODES, 1.0, &FN3).unwrap()
    }

    #[test]
    fn disk_samples_are_inside_and_reproducible() {
        let spec = fn3();
        let disk = InitialDistribution::UniformDisk { radius: 1.0, center: [0.0, 0.0] };
        let a = sample_initial(&disk, 4, 7, &spec, None).unwrap();
        let b = sample_initial(&disk, 4, 7, &spec, Some(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert!(a.points.iter().all(|p| p[0].hypot(p[1]) <= 1.0));
        let c = sample_initial(&disk, 4, 8, &spec, None).unwrap();
        assert_ne!(a.points, c.points);
    }

    #[test]
    fn sampling_independent_of_workers() {
        let spec = fn3();
        let kind = InitialDistribution::GroundBorn;
        let a = sample_initial(&kind, 10_000, 3, &spec, Some(1)).unwrap();
        let b = sample_initial(&kind, 10_000, 3, &spec, Some(4)).unwrap();
        assert_eq!(a.points, b.points);
    }

    #[test]
    fn ground_born_mean() {
        let n = 100_000;
        let s = sample_initial(&InitialDistribution::GroundBorn, n, 11, &fn3(), None).unwrap();
        let sigma = std::f64::consts::FRAC_1_SQRT_2;
        for axis in 0..2 {
            let mean = s.points.iter().map(|p| p[axis]).sum::<f64>() / n as f64;
            assert!(mean.abs() < 3.0 * sigma / (n as f64).sqrt(), "axis {axis} mean {mean}");
        }
    }

    #[test]
    fn gaussian_covariance() {
        let n = 100_000;
        let c = [0.3, -1.2];
        let kind = InitialDistribution::Gaussian { sigma: 0.1, center: c };
        let s = sample_initial(&kind, n, 5, &fn3(), None).unwrap();
        let mean = [0, 1].map(|a| s.points.iter().map(|p| p[a]).sum::<f64>() / n as f64);
        let cov = |a: usize, b: usize| {
            s.points.iter().map(|p| (p[a] - mean[a]) * (p[b] - mean[b])).sum::<f64>() / (n - 1) as f64
        };
        assert!((cov(0, 0) / 0.01 - 1.0).abs() < 0.05);
        assert!((cov(1, 1) / 0.01 - 1.0).abs() < 0.05);
        assert!(cov(0, 1).abs() < 0.05 * 0.01);
        assert!((mean[0] - c[0]).abs() < 1e-3 && (mean[1] - c[1]).abs() < 1e-3);
    }

    #[test]
    fn parse_kinds() {
        let spec = fn3();
        assert!(matches!(InitialDistribution::parse("ground", &spec), Ok(InitialDistribution::GroundBorn)));
        match InitialDistribution::parse("disk:1.5", &spec).unwrap() {
            InitialDistribution::UniformDisk { radius, center } => {
                assert_eq!(radius, 1.5);
                assert_eq!(center, [0.0, 0.0]);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            InitialDistribution::parse("gaussian:0.1,1,2", &spec),
            Ok(InitialDistribution::Gaussian { .. })
        ));
        assert!(matches!(InitialDistribution::parse("born", &spec), Ok(InitialDistribution::Born { .. })));
        assert!(matches!(InitialDistribution::parse("cauchy", &spec), Err(EnsembleError::UnknownKind(_))));
        assert!(matches!(InitialDistribution::parse("disk:-1", &spec), Err(EnsembleError::BadParameter(_))));
        assert_eq!(
            sample_initial(&InitialDistribution::GroundBorn, 0, 1, &spec, None),
            Err(EnsembleError::Empty)
        );
    }

    #[test]
    fn stationary_ensemble_does_not_move() {
        let spec = WaveFunctionSpec::homogeneous(&FOUR_MODES, 0.0, &FN3).unwrap();
        let kind = InitialDistribution::UniformDisk { radius: 1.0, center: [0.0, 0.0] };
        let s = sample_initial(&kind, 50, 1, &spec, None).unwrap();
        let e = evolve_ensemble(&spec, &s, 3.0 * PERIOD, &IntegratorConfig::default(), None);
        assert_eq!(e.points, s.points);
        assert_eq!(e.failed, 0);
        assert_eq!(e.t, 3.0 * PERIOD);
    }

    #[test]
    fn evolve_matches_per_point_advance_in_order() {
        let spec = fn3();
        let kind = InitialDistribution::UniformDisk { radius: 1.0, center: [0.0, 0.0] };
        let s = sample_initial(&kind, 20, 2, &spec, None).unwrap();
        let cfg = IntegratorConfig::default();
        let e = evolve_ensemble(&spec, &s, PERIOD, &cfg, None);
        let seq = evolve_ensemble(&spec, &s, PERIOD, &cfg, Some(1));
        assert_eq!(e, seq);
        for (p, q) in s.points.iter().zip(&e.points) {
            assert_eq!(*q, advance(&spec, *p, 0.0, PERIOD, &cfg).unwrap());
        }
    }

    #[test]
    fn single_cell_closed_form() {
        // all mass in one cell against a uniform reference w: H̄ = ln(1/(w·A))
        let (area, w) = (0.25, 0.3);
        let counts = [0, 17, 0, 0];
        let (h, used, clamped) = h_function(&counts, 17, &[w; 4], area);
        assert!((h - (1.0 / (w * area)).ln()).abs() < 1e-14);
        assert_eq!((used, clamped), (1, 0));
        let (_, _, clamped) = h_function(&counts, 17, &[0.0; 4], area);
        assert_eq!(clamped, 1);
    }

    #[test]
    fn reference_density_integrates_to_one() {
        let spec = fn3();
        let grid = GridSpec::new(6.0, 60);
        let total: f64 = reference_density(&spec, grid, 1.3, 4).iter().sum::<f64>() * grid.cell_area();
        assert!((total - 1.0).abs() < 1e-3, "{total}");
    }

    #[test]
    fn born_sampling_has_small_h_and_passes_ks() {
        let spec = fn3();
        let kind = InitialDistribution::Born { spec: spec.clone(), t: 0.0 };
        let s = sample_initial(&kind, 20_000, 9, &spec, None).unwrap();
        let h = coarse_grained_h(&s, &spec, DEFAULT_H_GRID).unwrap();
        assert!(h.hbar.abs() < 0.05, "{h:?}");
        for r in born_ks(&s, &spec, 0.01) {
            assert!(r.passes, "{r:?}");
        }
        // a disk ensemble is far from Born
        let disk = InitialDistribution::UniformDisk { radius: 1.0, center: [0.0, 0.0] };
        let d = sample_initial(&disk, 20_000, 9, &spec, None).unwrap();
        assert!(coarse_grained_h(&d, &spec, DEFAULT_H_GRID).unwrap().hbar > 0.1);
        assert!(born_ks(&d, &spec, 0.01).iter().any(|r| !r.passes));
    }

    #[test]
    fn marginal_cdf_limits() {
        let spec = WaveFunctionSpec::homogeneous(&[Mode::GROUND, Mode::new(2, 1)], 0.5, &[0.0, 1.0]).unwrap();
        let cdf = MarginalCdf::new(&spec, 1, 0.7);
        assert_eq!(cdf.eval(-20.0), 0.0);
        assert!((cdf.eval(20.0) - 1.0).abs() < 1e-9);
        let ground = MarginalCdf::new(&WaveFunctionSpec::ground_state(), 0, 0.0);
        assert!((ground.eval(0.0) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn ks_critical_value() {
        assert!((ks_critical(1, 0.01) - 1.6276).abs() < 1e-4);
        assert!((ks_statistic(&[0.5], |x| x) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_state_errors() {
        let s = EnsembleState {
            spec_fingerprint: String::new(),
            t: 0.0,
            points: vec![],
            seed: 0,
            initial_density_tag: "none".into(),
            failed: 0,
        };
        assert_eq!(coarse_grained_h(&s, &fn3(), DEFAULT_H_GRID), Err(EnsembleError::Empty));
    }
}

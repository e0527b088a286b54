//! Perturbed two-dimensional oscillator wave function and its guidance field.
//!
//! Units are ħ = m = ω = 1. A [`WaveFunctionSpec`] is the ground state
//! φ₀(q₁)φ₀(q₂) plus excited products φₘ(q₁)φₙ(q₂) with amplitudes εₘₙ and
//! phases θₘₙ; every term evolves as e^{i(θₘₙ − Eₘₙ t)} with integer energy
//! Eₘₙ = m + n + 1, so ψ is periodic with period 2π.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fmt::sig12;

/// Complex amplitude carrier for ψ and its derivatives.
pub type ComplexValue = Complex64;

/// Highest oscillator order accepted by the polynomial routines.
pub const MAX_ORDER: u32 = 60;

/// Peak of the ground-state density, 1/π.
pub const PEAK_DENSITY: f64 = 1.0 / PI;

/// Default node guard: densities below this are treated as a node.
pub const NODE_GUARD: f64 = 1e-12 * PEAK_DENSITY;

/// The oscillation period T = 2π.
pub const PERIOD: f64 = TAU;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WaveError {
    #[error("oscillator order {0} exceeds supported maximum {MAX_ORDER}")]
    UnsupportedOrder(u32),
    #[error("ψ is too close to a node at q = ({q1}, {q2}), t = {t}: |ψ|² = {density:e}")]
    NodeProximity { q1: f64, q2: f64, t: f64, density: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("the ground-state term (0,0) is missing")]
    MissingGround,
    #[error("the ground-state term must have amplitude exactly 1, got {0}")]
    GroundAmplitude(f64),
    #[error("mode ({0},{1}) appears more than once")]
    DuplicateMode(u32, u32),
    #[error("amplitude {1} for mode ({0}) is outside [0, 1]")]
    Amplitude(String, f64),
    #[error("phase {1} for mode ({0}) is not finite")]
    Phase(String, f64),
    #[error("{0}")]
    Order(#[from] WaveError),
    #[error("modes, epsilon and theta have different lengths ({0}, {1}, {2})")]
    Lengths(usize, usize, usize),
    #[error("malformed spec text: {0}")]
    Parse(String),
}

/// Oscillator quantum numbers (m for q₁, n for q₂).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Mode {
    pub m: u32,
    pub n: u32,
}

impl Mode {
    pub const GROUND: Mode = Mode { m: 0, n: 0 };

    pub const fn new(m: u32, n: u32) -> Self {
        Mode { m, n }
    }

    pub const fn energy(self) -> u32 {
        self.m + self.n + 1
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}{}", self.m, self.n)
    }
}

/// The four lowest product states: 00, 01, 10, 11.
pub const FOUR_MODES: [Mode; 4] = [Mode::new(0, 0), Mode::new(0, 1), Mode::new(1, 0), Mode::new(1, 1)];

/// Ground state plus all five excited states with E ≤ 3: 00, 01, 02, 10, 11, 20.
pub const SIX_MODES: [Mode; 6] =
    [Mode::new(0, 0), Mode::new(0, 1), Mode::new(0, 2), Mode::new(1, 0), Mode::new(1, 1), Mode::new(2, 0)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub mode: Mode,
    pub amplitude: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, Copy)]
struct Coefficient {
    m: usize,
    n: usize,
    energy: u32,
    /// N·ε·e^{iθ}
    weight: Complex64,
}

/// A validated superposition. Phases are reduced to [0, 2π) on construction.
#[derive(Debug, Clone)]
pub struct WaveFunctionSpec {
    terms: Vec<Term>,
    norm: f64,
    coeffs: Vec<Coefficient>,
    max_m: usize,
    max_n: usize,
    max_energy: u32,
}

impl PartialEq for WaveFunctionSpec {
    fn eq(&self, other: &Self) -> bool {
        self.terms == other.terms
    }
}

/// ψ and its spatial gradient at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiEval {
    pub psi: ComplexValue,
    pub d1: ComplexValue,
    pub d2: ComplexValue,
}

impl PsiEval {
    pub fn density(&self) -> f64 {
        self.psi.norm_sqr()
    }

    /// Im(∂ᵣψ/ψ) for r = 1, 2, without a node check.
    pub fn velocity_unchecked(&self) -> [f64; 2] {
        let rho = self.psi.norm_sqr();
        let conj = self.psi.conj();
        [(self.d1 * conj).im / rho, (self.d2 * conj).im / rho]
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SpecText {
    modes: Vec<[u32; 2]>,
    epsilon: Vec<f64>,
    theta: Vec<f64>,
}

impl WaveFunctionSpec {
    pub fn new(terms: impl IntoIterator<Item = Term>) -> Result<Self, SpecError> {
        let mut terms: Vec<Term> = terms.into_iter().collect();
        let mut ground = None;
        for (i, term) in terms.iter_mut().enumerate() {
            let Mode { m, n } = term.mode;
            if m > MAX_ORDER {
                return Err(WaveError::UnsupportedOrder(m).into());
            }
            if n > MAX_ORDER {
                return Err(WaveError::UnsupportedOrder(n).into());
            }
            if !(term.amplitude.is_finite() && (0.0..=1.0).contains(&term.amplitude)) {
                return Err(SpecError::Amplitude(term.mode.to_string(), term.amplitude));
            }
            if !term.phase.is_finite() {
                return Err(SpecError::Phase(term.mode.to_string(), term.phase));
            }
            term.phase = reduce_phase(term.phase);
            if term.mode == Mode::GROUND {
                ground = Some(i);
            }
        }
        for (i, a) in terms.iter().enumerate() {
            if terms[..i].iter().any(|b| b.mode == a.mode) {
                return Err(SpecError::DuplicateMode(a.mode.m, a.mode.n));
            }
        }
        let ground = ground.ok_or(SpecError::MissingGround)?;
        if terms[ground].amplitude != 1.0 {
            return Err(SpecError::GroundAmplitude(terms[ground].amplitude));
        }

        let norm = terms.iter().map(|t| t.amplitude * t.amplitude).sum::<f64>().powf(-0.5);
        let coeffs: Vec<Coefficient> = terms
            .iter()
            .filter(|t| t.amplitude > 0.0)
            .map(|t| Coefficient {
                m: t.mode.m as usize,
                n: t.mode.n as usize,
                energy: t.mode.energy(),
                weight: Complex64::from_polar(norm * t.amplitude, t.phase),
            })
            .collect();
        let max_m = coeffs.iter().map(|c| c.m).max().unwrap_or(0);
        let max_n = coeffs.iter().map(|c| c.n).max().unwrap_or(0);
        let max_energy = coeffs.iter().map(|c| c.energy).max().unwrap_or(1);
        Ok(WaveFunctionSpec { terms, norm, coeffs, max_m, max_n, max_energy })
    }

    /// Builds a spec from parallel lists; the entry for mode (0,0) must carry amplitude 1.
    pub fn from_parts(modes: &[Mode], epsilon: &[f64], theta: &[f64]) -> Result<Self, SpecError> {
        if modes.len() != epsilon.len() || modes.len() != theta.len() {
            return Err(SpecError::Lengths(modes.len(), epsilon.len(), theta.len()));
        }
        Self::new(modes.iter().zip(epsilon).zip(theta).map(|((&mode, &amplitude), &phase)| Term {
            mode,
            amplitude,
            phase,
        }))
    }

    /// Every excited mode gets the same amplitude `epsilon`; the ground term gets 1.
    pub fn homogeneous(modes: &[Mode], epsilon: f64, theta: &[f64]) -> Result<Self, SpecError> {
        let eps: Vec<f64> = modes.iter().map(|&m| if m == Mode::GROUND { 1.0 } else { epsilon }).collect();
        Self::from_parts(modes, &eps, theta)
    }

    pub fn ground_state() -> Self {
        Self::from_parts(&[Mode::GROUND], &[1.0], &[0.0]).expect("ground state is valid")
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn modes(&self) -> Vec<Mode> {
        self.terms.iter().map(|t| t.mode).collect()
    }

    /// N = (Σ ε²)^(−1/2).
    pub fn normalization(&self) -> f64 {
        self.norm
    }

    pub fn max_order(&self) -> u32 {
        self.terms.iter().map(|t| t.mode.m.max(t.mode.n)).max().unwrap_or(0)
    }

    /// True when at most one term has nonzero amplitude, so every trajectory is at rest.
    pub fn is_stationary(&self) -> bool {
        self.coeffs.len() <= 1
    }

    /// Key-value text with `modes`, `epsilon` and `theta`, numbers to 12 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = String::from("modes = [");
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                s.push_str(", ");
            }
            let _ = write!(s, "[{}, {}]", t.mode.m, t.mode.n);
        }
        s.push_str("]\nepsilon = [");
        s.push_str(&join_sig(self.terms.iter().map(|t| t.amplitude)));
        s.push_str("]\ntheta = [");
        s.push_str(&join_sig(self.terms.iter().map(|t| t.phase)));
        s.push_str("]\n");
        s
    }

    pub fn from_text(text: &str) -> Result<Self, SpecError> {
        let raw: SpecText = toml::from_str(text).map_err(|e| SpecError::Parse(e.to_string()))?;
        let modes: Vec<Mode> = raw.modes.iter().map(|&[m, n]| Mode::new(m, n)).collect();
        Self::from_parts(&modes, &raw.epsilon, &raw.theta)
    }

    /// First 16 hex digits of the SHA-256 of [`to_text`](Self::to_text).
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        hex::encode(&digest[..8])
    }

    /// ψ, ∂₁ψ and ∂₂ψ at (q1, q2, t).
    pub fn eval(&self, q1: f64, q2: f64, t: f64) -> PsiEval {
        const STACK: usize = 8;
        if self.max_m < STACK && self.max_n < STACK {
            let mut buf = [[0.0; STACK]; 4];
            let [p1, d1, p2, d2] = &mut buf;
            self.eval_with(q1, q2, t, p1, d1, p2, d2)
        } else {
            let mut p1 = vec![0.0; self.max_m + 1];
            let mut d1 = vec![0.0; self.max_m + 1];
            let mut p2 = vec![0.0; self.max_n + 1];
            let mut d2 = vec![0.0; self.max_n + 1];
            self.eval_with(q1, q2, t, &mut p1, &mut d1, &mut p2, &mut d2)
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn eval_with(
        &self,
        q1: f64,
        q2: f64,
        t: f64,
        p1: &mut [f64],
        d1: &mut [f64],
        p2: &mut [f64],
        d2: &mut [f64],
    ) -> PsiEval {
        ladder(self.max_m, q1, p1, d1);
        ladder(self.max_n, q2, p2, d2);
        // e^{-iEt} = w^E with w = e^{-it}; integer powers keep the 2π period exact
        let (s, c) = t.sin_cos();
        let w = Complex64::new(c, -s);
        let mut powers = [Complex64::new(1.0, 0.0); 16];
        let mut psi = Complex64::default();
        let mut g1 = Complex64::default();
        let mut g2 = Complex64::default();
        let use_table = self.max_energy < 16;
        if use_table {
            for e in 1..=self.max_energy as usize {
                powers[e] = powers[e - 1] * w;
            }
        }
        for c in &self.coeffs {
            let rot = if use_table { powers[c.energy as usize] } else { w.powu(c.energy) };
            let z = c.weight * rot;
            psi += z * (p1[c.m] * p2[c.n]);
            g1 += z * (d1[c.m] * p2[c.n]);
            g2 += z * (p1[c.m] * d2[c.n]);
        }
        PsiEval { psi, d1: g1, d2: g2 }
    }
}

fn join_sig(values: impl Iterator<Item = f64>) -> String {
    values.map(sig12).collect::<Vec<_>>().join(", ")
}

/// Reduces a phase into [0, 2π).
pub fn reduce_phase(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Fills φ₀..φ_max and their derivatives at q using the normalized recurrence.
fn ladder(max: usize, q: f64, phi: &mut [f64], dphi: &mut [f64]) {
    phi[0] = PI.powf(-0.25) * (-0.5 * q * q).exp();
    dphi[0] = -q * phi[0];
    if max >= 1 {
        phi[1] = std::f64::consts::SQRT_2 * q * phi[0];
    }
    for k in 1..max {
        let kf = k as f64;
        phi[k + 1] = (2.0 / (kf + 1.0)).sqrt() * q * phi[k] - (kf / (kf + 1.0)).sqrt() * phi[k - 1];
    }
    for k in 1..=max {
        dphi[k] = (2.0 * k as f64).sqrt() * phi[k - 1] - q * phi[k];
    }
}

fn check_order(m: u32) -> Result<(), WaveError> {
    if m > MAX_ORDER {
        Err(WaveError::UnsupportedOrder(m))
    } else {
        Ok(())
    }
}

/// Physicists' Hermite polynomial Hₘ(x).
pub fn hermite(m: u32, x: f64) -> Result<f64, WaveError> {
    check_order(m)?;
    let (mut prev, mut cur) = (1.0, 2.0 * x);
    if m == 0 {
        return Ok(prev);
    }
    for k in 1..m {
        let next = 2.0 * x * cur - 2.0 * k as f64 * prev;
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

/// Normalized oscillator eigenfunction φₘ(q).
pub fn eigenstate(m: u32, q: f64) -> Result<f64, WaveError> {
    check_order(m)?;
    let n = m as usize;
    let mut phi = vec![0.0; n + 1];
    let mut dphi = vec![0.0; n + 1];
    ladder(n, q, &mut phi, &mut dphi);
    Ok(phi[n])
}

/// dφₘ/dq via φₘ′ = √(2m) φₘ₋₁ − q φₘ.
pub fn eigenstate_derivative(m: u32, q: f64) -> Result<f64, WaveError> {
    check_order(m)?;
    let n = m as usize;
    let mut phi = vec![0.0; n + 1];
    let mut dphi = vec![0.0; n + 1];
    ladder(n, q, &mut phi, &mut dphi);
    Ok(dphi[n])
}

pub fn psi(spec: &WaveFunctionSpec, q1: f64, q2: f64, t: f64) -> ComplexValue {
    spec.eval(q1, q2, t).psi
}

pub fn grad_psi(spec: &WaveFunctionSpec, q1: f64, q2: f64, t: f64) -> (ComplexValue, ComplexValue) {
    let e = spec.eval(q1, q2, t);
    (e.d1, e.d2)
}

pub fn born_density(spec: &WaveFunctionSpec, q1: f64, q2: f64, t: f64) -> f64 {
    spec.eval(q1, q2, t).density()
}

/// de Broglie velocity (Im ∂₁ψ/ψ, Im ∂₂ψ/ψ) with the default node guard.
pub fn velocity(spec: &WaveFunctionSpec, q1: f64, q2: f64, t: f64) -> Result<(f64, f64), WaveError> {
    velocity_guarded(spec, q1, q2, t, NODE_GUARD).map(|(v, _)| (v[0], v[1]))
}

/// Velocity and |ψ|², failing when |ψ|² < `guard`.
pub fn velocity_guarded(
    spec: &WaveFunctionSpec,
    q1: f64,
    q2: f64,
    t: f64,
    guard: f64,
) -> Result<([f64; 2], f64), WaveError> {
    let e = spec.eval(q1, q2, t);
    let density = e.density();
    if !(density >= guard) {
        return Err(WaveError::NodeProximity { q1, q2, t, density });
    }
    if spec.is_stationary() {
        // a single real eigenfunction times a phase carries no current
        return Ok(([0.0, 0.0], density));
    }
    Ok((e.velocity_unchecked(), density))
}

/// One-period average of |ψ|² by `points`-point equispaced quadrature.
pub fn period_averaged_density(spec: &WaveFunctionSpec, q1: f64, q2: f64, points: usize) -> f64 {
    let points = points.max(1);
    (0..points).map(|k| born_density(spec, q1, q2, PERIOD * k as f64 / points as f64)).sum::<f64>()
        / points as f64
}

/// Marginal density ∫|ψ|² dq_other along `axis` (0 for q₁, 1 for q₂), exploiting orthonormality.
pub fn marginal_density(spec: &WaveFunctionSpec, axis: usize, x: f64, t: f64) -> f64 {
    let (s, c) = t.sin_cos();
    let w = Complex64::new(c, -s);
    let order = if axis == 0 { spec.max_m } else { spec.max_n };
    let mut phi = vec![0.0; order + 1];
    let mut dphi = vec![0.0; order + 1];
    ladder(order, x, &mut phi, &mut dphi);
    let z: Vec<Complex64> = spec.coeffs.iter().map(|c| c.weight * w.powu(c.energy)).collect();
    let mut total = 0.0;
    for (a, ca) in spec.coeffs.iter().enumerate() {
        for (b, cb) in spec.coeffs.iter().enumerate() {
            let (ia, oa, ib, ob) =
                if axis == 0 { (ca.m, ca.n, cb.m, cb.n) } else { (ca.n, ca.m, cb.n, cb.m) };
            if oa == ob {
                total += (z[a] * z[b].conj()).re * phi[ia] * phi[ib];
            }
        }
    }
    total
}

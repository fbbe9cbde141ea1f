//! Node dynamics and coupling laws.
//!
//! [`LtiSystem`] holds a SISO transfer function together with its
//! controllable canonical realization. [`estimate_ifp_index`] computes the
//! input-feedforward passivity index of such a system as the infimum of
//! `Re H(jω)`. [`SectorCoupling`] describes the static odd nonlinearity on an
//! edge together with its declared sector bounds.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector, RowDVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for cancelling exactly-equal pole/zero pairs.
pub const CANCELLATION_TOL: f64 = 1e-9;
/// Default sweep: 2000 log-spaced points over [1e-4, 1e4] rad/s.
pub const DEFAULT_GRID_POINTS: usize = 2000;
pub const DEFAULT_OMEGA_MIN: f64 = 1e-4;
pub const DEFAULT_OMEGA_MAX: f64 = 1e4;
/// Default golden-section bracket width, in natural-log frequency units.
pub const DEFAULT_REFINE_TOL: f64 = 1e-10;

const POLE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PassivityError {
    #[error("denominator is zero")]
    ZeroDenominator,
    #[error("improper transfer function: numerator degree {num} exceeds denominator degree {den}")]
    Improper { num: usize, den: usize },
    #[error("coefficients must be finite")]
    NonFinite,
    #[error("unstable system: pole at {re} + {im}j")]
    Unstable { re: f64, im: f64 },
    #[error("pole on the imaginary axis at ±{0}j; frequency response is unbounded")]
    ImaginaryAxisPole(f64),
    #[error("pole of multiplicity {0} at the origin; Re H(jω) is unbounded below")]
    RepeatedOriginPole(usize),
    #[error("frequency grid must be non-empty, positive and increasing")]
    BadGrid,
    #[error("invalid sector bounds [{lower}, {upper}]")]
    BadSector { lower: f64, upper: f64 },
    #[error("invalid coupling table: {0}")]
    BadTable(String),
    #[error("invalid coupling gain {0}")]
    BadGain(f64),
}

fn trim_leading_zeros(p: &[f64]) -> Vec<f64> {
    let first = p.iter().position(|c| *c != 0.0).unwrap_or(p.len());
    p[first..].to_vec()
}

/// Horner evaluation of a descending-power polynomial at a complex point.
pub fn poly_eval(p: &[f64], s: Complex64) -> Complex64 {
    p.iter().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * s + c)
}

/// Roots of a descending-power polynomial via its companion matrix.
pub fn poly_roots(p: &[f64]) -> Vec<Complex64> {
    let p = trim_leading_zeros(p);
    if p.len() <= 1 {
        return Vec::new();
    }
    let n = p.len() - 1;
    let lead = p[0];
    let mut companion = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        companion[(0, j)] = -p[j + 1] / lead;
    }
    for i in 1..n {
        companion[(i, i - 1)] = 1.0;
    }
    companion.complex_eigenvalues().iter().copied().collect()
}

/// Monic real polynomial with the given (conjugate-closed) roots.
fn poly_from_roots(roots: &[Complex64]) -> Vec<f64> {
    let mut acc = vec![Complex64::new(1.0, 0.0)];
    for &r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); acc.len() + 1];
        for (i, &c) in acc.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c * r;
        }
        acc = next;
    }
    acc.into_iter().map(|c| c.re).collect()
}

/// SISO LTI system `H(s) = num(s) / den(s)` with a controllable canonical realization.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    num: Vec<f64>,
    den: Vec<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: RowDVector<f64>,
    d: f64,
}

impl LtiSystem {
    /// Realizes `num/den` (descending powers). Exactly-equal common roots are
    /// cancelled first, so the state dimension is the reduced denominator degree.
    pub fn realize(num: &[f64], den: &[f64]) -> Result<Self, PassivityError> {
        if num.iter().chain(den).any(|c| !c.is_finite()) {
            return Err(PassivityError::NonFinite);
        }
        let den = trim_leading_zeros(den);
        if den.is_empty() {
            return Err(PassivityError::ZeroDenominator);
        }
        let mut num = trim_leading_zeros(num);
        if num.is_empty() {
            num.push(0.0);
        }
        if num.len() > den.len() {
            return Err(PassivityError::Improper {
                num: num.len() - 1,
                den: den.len() - 1,
            });
        }
        let lead = den[0];
        let mut den: Vec<f64> = den.iter().map(|c| c / lead).collect();
        let mut num: Vec<f64> = num.iter().map(|c| c / lead).collect();
        cancel_common_roots(&mut num, &mut den);

        let n = den.len() - 1;
        let mut padded = vec![0.0; n + 1 - num.len()];
        padded.extend_from_slice(&num);
        let d = padded[0];
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n.saturating_sub(1) {
            a[(i, i + 1)] = 1.0;
        }
        let mut c = RowDVector::zeros(n);
        for k in 0..n {
            // den = s^n + den[1] s^(n-1) + ... + den[n]
            a[(n - 1, k)] = -den[n - k];
            c[k] = padded[n - k] - den[n - k] * d;
        }
        let mut b = DVector::zeros(n);
        if n > 0 {
            b[n - 1] = 1.0;
        }
        Ok(Self { num, den, a, b, c, d })
    }

    pub fn static_gain(k: f64) -> Result<Self, PassivityError> {
        Self::realize(&[k], &[1.0])
    }

    /// Reduced numerator (scaled so the denominator is monic).
    pub fn num(&self) -> &[f64] {
        &self.num
    }

    /// Reduced monic denominator.
    pub fn den(&self) -> &[f64] {
        &self.den
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn c(&self) -> &RowDVector<f64> {
        &self.c
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn order(&self) -> usize {
        self.den.len() - 1
    }

    pub fn is_strictly_proper(&self) -> bool {
        self.d == 0.0
    }

    /// `num(s) / den(s)`.
    pub fn transfer(&self, s: Complex64) -> Complex64 {
        poly_eval(&self.num, s) / poly_eval(&self.den, s)
    }

    /// `C (sI - A)^{-1} B + D` evaluated from the realization.
    pub fn state_space_response(&self, s: Complex64) -> Complex64 {
        let n = self.order();
        if n == 0 {
            return Complex64::new(self.d, 0.0);
        }
        let m = DMatrix::from_fn(n, n, |i, j| {
            let diag = if i == j { s } else { Complex64::new(0.0, 0.0) };
            diag - self.a[(i, j)]
        });
        let rhs = self.b.map(|v| Complex64::new(v, 0.0));
        let x = m.lu().solve(&rhs).expect("s is not a pole");
        let cx: Complex64 = self.c.iter().zip(x.iter()).map(|(ci, xi)| xi * *ci).sum();
        cx + self.d
    }

    pub fn frequency_response(&self, omega: f64) -> Complex64 {
        self.transfer(Complex64::new(0.0, omega))
    }

    pub fn poles(&self) -> Vec<Complex64> {
        poly_roots(&self.den)
    }

    /// `c · H(s)`.
    pub fn scaled(&self, c: f64) -> Result<Self, PassivityError> {
        let num: Vec<f64> = self.num.iter().map(|v| v * c).collect();
        Self::realize(&num, &self.den)
    }

    /// Minimum-norm state with `C x = y0` (zero-dimensional for static systems).
    pub fn state_for_output(&self, y0: f64) -> Option<DVector<f64>> {
        let n = self.order();
        let cc = self.c.norm_squared();
        if cc == 0.0 {
            return (y0 == 0.0).then(|| DVector::zeros(n));
        }
        Some(self.c.transpose() * (y0 / cc))
    }
}

fn cancel_common_roots(num: &mut Vec<f64>, den: &mut Vec<f64>) {
    let mut zeros = poly_roots(num);
    let mut poles = poly_roots(den);
    let mut cancelled = false;
    let mut i = 0;
    while i < zeros.len() {
        let z = zeros[i];
        let hit = poles
            .iter()
            .position(|p| (p - z).norm() <= CANCELLATION_TOL * z.norm().max(1.0));
        match hit {
            Some(j) => {
                zeros.swap_remove(i);
                poles.swap_remove(j);
                cancelled = true;
            }
            None => i += 1,
        }
    }
    if !cancelled {
        return;
    }
    let gain = trim_leading_zeros(num)[0];
    *num = poly_from_roots(&zeros).into_iter().map(|c| c * gain).collect();
    *den = poly_from_roots(&poles);
}

/// How an IFP index was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Provenance {
    /// Supplied by the user.
    Declared,
    /// Frequency sweep. `omega` is the minimizing frequency; `None` means the
    /// infimum is the high-frequency limit.
    FrequencySweep { omega: Option<f64> },
}

/// Input-feedforward passivity index `ν` with offset `δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IfpIndex {
    pub nu: f64,
    #[serde(default)]
    pub delta: f64,
    pub provenance: Provenance,
}

impl IfpIndex {
    pub fn declared(nu: f64) -> Self {
        Self {
            nu,
            delta: 0.0,
            provenance: Provenance::Declared,
        }
    }
}

/// `count` log-spaced frequencies over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..count)
        .map(|k| (llo + (lhi - llo) * k as f64 / (count - 1) as f64).exp())
        .collect()
}

pub fn default_grid() -> Vec<f64> {
    log_grid(DEFAULT_OMEGA_MIN, DEFAULT_OMEGA_MAX, DEFAULT_GRID_POINTS)
}

/// Estimates `ν = inf_ω Re H(jω)` by a log-frequency sweep with golden-section
/// refinement around the grid minimum.
///
/// The limits `ω → 0⁺` and `ω → ∞` are evaluated in closed form and take part
/// in the minimum, so the index is not biased by grid truncation. A single
/// pole at the origin is allowed: writing `H = K/s + G(s)`, the low-frequency
/// limit of `Re H(jω)` is `G(0)`.
pub fn estimate_ifp_index(sys: &LtiSystem, omega_grid: &[f64], refine_tol: f64) -> Result<IfpIndex, PassivityError> {
    if omega_grid.is_empty() || omega_grid[0] <= 0.0 || omega_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(PassivityError::BadGrid);
    }
    let den = sys.den();
    let origin = den.iter().rev().take_while(|c| c.abs() <= 1e-12).count();
    if origin > 1 {
        return Err(PassivityError::RepeatedOriginPole(origin));
    }
    let rest = &den[..den.len() - origin];
    for p in poly_roots(rest) {
        if p.re > POLE_TOL {
            return Err(PassivityError::Unstable { re: p.re, im: p.im });
        }
        if p.re.abs() <= POLE_TOL {
            return Err(PassivityError::ImaginaryAxisPole(p.im.abs()));
        }
    }

    let re_h = |omega: f64| sys.frequency_response(omega).re;
    let values: Vec<f64> = omega_grid.iter().map(|&w| re_h(w)).collect();
    let (imin, _) = values.iter().enumerate().fold(
        (0, f64::INFINITY),
        |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) },
    );
    let lo = omega_grid[imin.saturating_sub(1)].ln();
    let hi = omega_grid[(imin + 1).min(omega_grid.len() - 1)].ln();
    let (u_star, refined) = golden_section_min(|u| re_h(u.exp()), lo, hi, refine_tol);
    let (mut best_omega, mut best) = if refined <= values[imin] {
        (Some(u_star.exp()), refined)
    } else {
        (Some(omega_grid[imin]), values[imin])
    };

    let low_limit = low_frequency_limit(sys.num(), rest, origin == 1);
    if low_limit < best {
        best = low_limit;
        best_omega = Some(0.0);
    }
    // Re H(j∞) = D
    if sys.d() < best {
        best = sys.d();
        best_omega = None;
    }
    Ok(IfpIndex {
        nu: best,
        delta: 0.0,
        provenance: Provenance::FrequencySweep { omega: best_omega },
    })
}

/// `lim_{ω→0⁺} Re H(jω)`. `rest` is the denominator with any origin pole removed.
fn low_frequency_limit(num: &[f64], rest: &[f64], origin_pole: bool) -> f64 {
    let coef = |p: &[f64], k: usize| if p.len() > k { p[p.len() - 1 - k] } else { 0.0 };
    let (n0, r0) = (coef(num, 0), coef(rest, 0));
    if !origin_pole {
        return n0 / r0;
    }
    // H = N / (s R) = K/s + (N - K R) / (s R), K = N(0)/R(0)
    let k = n0 / r0;
    (coef(num, 1) - k * coef(rest, 1)) / r0
}

fn golden_section_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = (a + b) / 2.0;
    (x, f(x))
}

/// Static odd map applied to an edge's output difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CouplingLaw {
    /// `a x`.
    Linear { gain: f64 },
    /// `a sin(x)` for `|x| < π/2`, `a x` otherwise. Discontinuous at `|x| = π/2`.
    SatSine { gain: f64 },
    /// `a sin(x)` for `|x| < π/2`, `a sign(x) (|x| - π/2 + 1)` otherwise.
    SatSineContinuous { gain: f64 },
    /// Piecewise-linear through `(0, 0)` and the points `(x[i], y[i])`, `x > 0`,
    /// extended oddly to negative arguments and linearly (constant ratio)
    /// beyond the last point.
    Tabulated { x: Vec<f64>, y: Vec<f64> },
}

impl CouplingLaw {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Self::Linear { gain } => gain * x,
            Self::SatSine { gain } => {
                if x.abs() < FRAC_PI_2 {
                    gain * x.sin()
                } else {
                    gain * x
                }
            }
            Self::SatSineContinuous { gain } => {
                if x.abs() < FRAC_PI_2 {
                    gain * x.sin()
                } else {
                    gain * x.signum() * (x.abs() - FRAC_PI_2 + 1.0)
                }
            }
            Self::Tabulated { x: xs, y: ys } => x.signum() * tabulated_positive(xs, ys, x.abs()),
        }
    }

    /// Tight sector `[inf φ(x)/x, sup φ(x)/x]` implied by the law itself.
    pub fn natural_sector(&self) -> (f64, f64) {
        match self {
            Self::Linear { gain } => (*gain, *gain),
            Self::SatSine { gain } | Self::SatSineContinuous { gain } => (gain / FRAC_PI_2, *gain),
            Self::Tabulated { x, y } => x
                .iter()
                .zip(y)
                .map(|(a, b)| b / a)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r))),
        }
    }

    fn validate(&self) -> Result<(), PassivityError> {
        match self {
            Self::Linear { gain } | Self::SatSine { gain } | Self::SatSineContinuous { gain } => {
                if !(gain.is_finite() && *gain > 0.0) {
                    return Err(PassivityError::BadGain(*gain));
                }
            }
            Self::Tabulated { x, y } => {
                if x.is_empty() || x.len() != y.len() {
                    return Err(PassivityError::BadTable(
                        "x and y must be non-empty and of equal length".into(),
                    ));
                }
                if x[0] <= 0.0 || x.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(PassivityError::BadTable(
                        "x must be positive and strictly increasing".into(),
                    ));
                }
                if x.iter().chain(y).any(|v| !v.is_finite()) || y.iter().any(|v| *v <= 0.0) {
                    return Err(PassivityError::BadTable("y must be finite and positive".into()));
                }
            }
        }
        Ok(())
    }
}

fn tabulated_positive(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let last = xs.len() - 1;
    if x >= xs[last] {
        return x * ys[last] / xs[last];
    }
    let hi = xs.partition_point(|&v| v <= x);
    let (x0, y0) = if hi == 0 { (0.0, 0.0) } else { (xs[hi - 1], ys[hi - 1]) };
    let (x1, y1) = (xs[hi], ys[hi]);
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// A coupling law with declared sector bounds `0 < α̲ ≤ ᾱ < ∞`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorCoupling {
    pub law: CouplingLaw,
    pub alpha_lower: f64,
    pub alpha_upper: f64,
}

impl SectorCoupling {
    pub fn new(law: CouplingLaw, alpha_lower: f64, alpha_upper: f64) -> Result<Self, PassivityError> {
        law.validate()?;
        if !(alpha_lower > 0.0 && alpha_lower <= alpha_upper && alpha_upper.is_finite()) {
            return Err(PassivityError::BadSector {
                lower: alpha_lower,
                upper: alpha_upper,
            });
        }
        Ok(Self {
            law,
            alpha_lower,
            alpha_upper,
        })
    }

    /// Declares the law's own tight sector.
    pub fn natural(law: CouplingLaw) -> Result<Self, PassivityError> {
        law.validate()?;
        let (lo, hi) = law.natural_sector();
        Self::new(law, lo, hi)
    }

    pub fn linear(gain: f64) -> Result<Self, PassivityError> {
        Self::natural(CouplingLaw::Linear { gain })
    }

    pub fn sat_sine(gain: f64) -> Result<Self, PassivityError> {
        Self::natural(CouplingLaw::SatSine { gain })
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        self.law.eval(x)
    }
}

/// Observed sector and symmetry of a coupling over a sample grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SectorCheck {
    pub observed_lower: f64,
    pub observed_upper: f64,
    pub odd_symmetric: bool,
    /// Observed ratios lie inside the declared `[α̲, ᾱ]`.
    pub within_declared: bool,
}

/// Positive half of the symmetric sample grid used by [`verify_sector`]:
/// `samples` linear points on `(0, range]` plus `samples` log-spaced points
/// on `[range·1e-6, range]`.
pub fn sector_sample_points(samples: usize, range: f64) -> Vec<f64> {
    let mut pts: Vec<f64> = (1..=samples).map(|k| range * k as f64 / samples as f64).collect();
    pts.extend(log_grid(range * 1e-6, range, samples));
    pts
}

/// Samples `φ(x)/x` on a symmetric grid excluding zero.
pub fn verify_sector(c: &SectorCoupling, samples: usize, range: f64) -> SectorCheck {
    assert!(samples >= 2 && range > 0.0, "need samples >= 2 and range > 0");
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut odd = true;
    for x in sector_sample_points(samples, range) {
        let (fp, fm) = (c.evaluate(x), c.evaluate(-x));
        for (xv, fv) in [(x, fp), (-x, fm)] {
            let r = fv / xv;
            lo = lo.min(r);
            hi = hi.max(r);
        }
        if (fp + fm).abs() > 1e-12 * fp.abs().max(1.0) {
            odd = false;
        }
    }
    let slack = 1e-12;
    SectorCheck {
        observed_lower: lo,
        observed_upper: hi,
        odd_symmetric: odd && c.evaluate(0.0) == 0.0,
        within_declared: lo >= c.alpha_lower * (1.0 - slack) && hi <= c.alpha_upper * (1.0 + slack),
    }
}

//! Exact damped-Bloch solutions and their energy relations.
//!
//! Densities of the form `e^{-2κx} |α(x)|²` with `α` periodic in `ηL`
//! satisfy `p(x ± ηL) = γ^{±1} p(x)`, which collapses every information
//! term to a constant. That constant is the energy: the regularized and
//! q-deformed relations below are the closed forms of those constants,
//! together with their lower bounds on the normalizable half-lines and
//! root-finders that invert them.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{NlsError, Result};
use crate::model::{ExtensionPolicy, Grid1D, ModelParams, WaveField};

/// Finite Fourier series with period `ηL`.
///
/// `cos[0]` is the constant term, `cos[k]` multiplies `cos(2πk x/P)` and
/// `sin[k-1]` multiplies `sin(2πk x/P)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodicProfile {
    period: f64,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl PeriodicProfile {
    pub fn new(period: f64, cos: Vec<f64>, sin: Vec<f64>) -> Result<Self> {
        if !(period.is_finite() && period > 0.0) {
            return Err(NlsError::domain(format!("period must be > 0, got {period}")));
        }
        if cos.iter().chain(&sin).any(|c| !c.is_finite()) {
            return Err(NlsError::domain("Fourier coefficients must be finite"));
        }
        if cos.iter().chain(&sin).all(|c| *c == 0.0) {
            return Err(NlsError::domain("periodic profile is identically zero"));
        }
        Ok(Self { period, cos, sin })
    }

    /// `sin(2πx/P)`, the profile that vanishes on the walls of a box of
    /// whole periods.
    pub fn sine(period: f64) -> Self {
        Self::new(period, vec![], vec![1.0]).expect("valid sine profile")
    }

    pub fn period(&self) -> f64 {
        self.period
    }
    pub fn cos_coefficients(&self) -> &[f64] {
        &self.cos
    }
    pub fn sin_coefficients(&self) -> &[f64] {
        &self.sin
    }

    /// True for the single unit sine mode.
    pub fn is_unit_sine(&self) -> bool {
        self.cos.iter().all(|c| *c == 0.0)
            && self.sin.first() == Some(&1.0)
            && self.sin[1..].iter().all(|c| *c == 0.0)
    }

    /// Value at phase `t = x/P` (only `t mod 1` matters).
    pub fn at_phase(&self, t: f64) -> f64 {
        let mut v = self.cos.first().copied().unwrap_or(0.0);
        for (k, c) in self.cos.iter().enumerate().skip(1) {
            v += c * (2.0 * PI * k as f64 * t).cos();
        }
        for (k, s) in self.sin.iter().enumerate() {
            v += s * (2.0 * PI * (k + 1) as f64 * t).sin();
        }
        v
    }

    pub fn at(&self, x: f64) -> f64 {
        self.at_phase((x / self.period).rem_euclid(1.0))
    }

    /// Value at grid index `i`. On grids whose origin sits on the lattice the
    /// phase is reduced with integer arithmetic, so samples one shift apart
    /// are bitwise identical.
    pub fn at_index(&self, grid: &Grid1D, i: i64) -> f64 {
        match grid.origin_offset() {
            Some(o) if grid.matches_period(self.period) => {
                let m = grid.shift_steps() as i64;
                self.at_phase((o + i).rem_euclid(m) as f64 / m as f64)
            }
            _ => self.at(grid.x(i)),
        }
    }
}

/// Where an exact solution lives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Domain {
    /// `[0, N ηL]`.
    Box { periods: usize },
    /// `[0, ∞)`, normalizable for `κ > 0`.
    HalfLineRight,
    /// `(-∞, 0]`, normalizable for `κ < 0`.
    HalfLineLeft,
}

/// Descriptor of `ψ = C e^{-κx} α(x)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnsatzSpec {
    pub kappa: f64,
    pub alpha: PeriodicProfile,
    pub domain: Domain,
    /// Normalization `C`.
    pub amplitude: f64,
    /// Energy attached to the solution, when known.
    pub energy: Option<f64>,
}

impl AnsatzSpec {
    pub fn new(kappa: f64, alpha: PeriodicProfile, domain: Domain) -> Result<Self> {
        if !kappa.is_finite() {
            return Err(NlsError::domain("kappa must be finite"));
        }
        match domain {
            Domain::HalfLineRight if kappa <= 0.0 => {
                return Err(NlsError::domain("the right half-line needs kappa > 0"))
            }
            Domain::HalfLineLeft if kappa >= 0.0 => {
                return Err(NlsError::domain("the left half-line needs kappa < 0"))
            }
            Domain::Box { periods: 0 } => return Err(NlsError::domain("box needs N >= 1")),
            _ => {}
        }
        Ok(Self { kappa, alpha, domain, amplitude: 1.0, energy: None })
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }

    pub fn with_energy(mut self, energy: f64) -> Self {
        self.energy = Some(energy);
        self
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut s = self.clone();
        s.amplitude *= c;
        s
    }

    /// The formula at grid index `i` (in or out of range).
    pub fn amplitude(&self, grid: &Grid1D, i: i64) -> Complex64 {
        let envelope = (-self.kappa * grid.x(i)).exp();
        Complex64::new(self.amplitude * envelope * self.alpha.at_index(grid, i), 0.0)
    }

    /// Applies the closed-form normalization when it is available (box,
    /// unit sine), otherwise normalizes by trapezoidal quadrature on `grid`.
    pub fn normalized(self, grid: &Grid1D, params: &ModelParams) -> Result<Self> {
        match self.domain {
            Domain::Box { periods } if self.alpha.is_unit_sine() => {
                let c = normalization_constant(self.kappa, periods, params)?;
                Ok(self.with_amplitude(c))
            }
            _ => {
                let unit = self.clone().with_amplitude(1.0);
                let n = grid.len() as i64;
                let w = |i: i64| if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                let norm: f64 =
                    (0..n).map(|i| w(i) * unit.amplitude(grid, i).norm_sqr()).sum::<f64>() * grid.dx();
                if !(norm > 0.0 && norm.is_finite()) {
                    return Err(NlsError::domain("ansatz has zero or non-finite norm on this grid"));
                }
                Ok(unit.with_amplitude(norm.sqrt().recip()))
            }
        }
    }
}

/// Samples the ansatz on `grid`; out-of-range lookups use the formula.
pub fn build_ansatz(spec: &AnsatzSpec, grid: &Grid1D) -> Result<WaveField> {
    if !grid.matches_period(spec.alpha.period()) {
        return Err(NlsError::domain(format!(
            "grid shift length {} does not match the ansatz period {}",
            grid.shift_length(),
            spec.alpha.period()
        )));
    }
    let spec = AnsatzSpec::new(spec.kappa, spec.alpha.clone(), spec.domain)
        .map(|s| AnsatzSpec { amplitude: spec.amplitude, energy: spec.energy, ..s })?;
    let first = grid.x(0);
    let last = grid.x(grid.len() as i64 - 1);
    let tol = 1e-9 * grid.dx();
    match spec.domain {
        Domain::Box { periods } => {
            let right = periods as f64 * spec.alpha.period();
            if first.abs() > tol || (last - right).abs() > tol {
                return Err(NlsError::domain(format!(
                    "box grid must span [0, {right}], got [{first}, {last}]"
                )));
            }
        }
        Domain::HalfLineRight if first < -tol => {
            return Err(NlsError::domain("right half-line grid must start at x >= 0"))
        }
        Domain::HalfLineLeft if last > tol => {
            return Err(NlsError::domain("left half-line grid must end at x <= 0"))
        }
        _ => {}
    }
    let values = (0..grid.len() as i64).map(|i| spec.amplitude(grid, i)).collect();
    WaveField::new(*grid, values, ExtensionPolicy::Ansatz(spec))
}

/// `C^{-2}` for `α = sin(2πx/ηL)` on `[0, N ηL]`.
pub fn inverse_square_normalization(kappa: f64, periods: usize, params: &ModelParams) -> Result<f64> {
    if periods == 0 {
        return Err(NlsError::domain("number of periods must be >= 1"));
    }
    let period = params.shift_length();
    if kappa == 0.0 {
        return Ok(periods as f64 * period / 2.0);
    }
    let ln_gamma = -2.0 * kappa * period;
    let one_minus_gamma_n = -(periods as f64 * ln_gamma).exp_m1();
    let sixteen_pi2 = 16.0 * PI * PI;
    Ok(one_minus_gamma_n / (4.0 * kappa) * sixteen_pi2 / (ln_gamma * ln_gamma + sixteen_pi2))
}

/// Amplitude `C` normalizing the unit-sine ansatz on `[0, N ηL]`.
pub fn normalization_constant(kappa: f64, periods: usize, params: &ModelParams) -> Result<f64> {
    inverse_square_normalization(kappa, periods, params).map(|v| v.sqrt().recip())
}

/// Family-specific coordinates of a spectrum point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum FamilyCoords {
    /// `γ = e^{-2κηL}`, `θ = 1 + η(γ - 1)`.
    Regularized { gamma: f64, theta: f64 },
    /// `λ = e^{2κL}`.
    QDeformed { lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectrumPoint {
    pub kappa: f64,
    pub coords: FamilyCoords,
    pub energy: f64,
}

/// Lower bound of a spectrum branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum EnergyBound {
    Finite(f64),
    Unbounded,
}

impl EnergyBound {
    pub fn value(&self) -> Option<f64> {
        match self {
            EnergyBound::Finite(v) => Some(*v),
            EnergyBound::Unbounded => None,
        }
    }
}

/// `u/(1+u) - ln(1+u)`, i.e. `1 - ln θ - 1/θ` with `θ = 1 + u`.
///
/// Vanishes to second order at `u = 0`; the series branch keeps full
/// relative accuracy there.
pub fn regularized_kernel(u: f64) -> f64 {
    kernel_with_theta(u, 1.0 + u)
}

/// The kernel with `θ` supplied separately, so that `θ` near zero keeps
/// its relative accuracy.
fn kernel_with_theta(u: f64, theta: f64) -> f64 {
    if u.abs() < 0.05 {
        // Σ_{k≥2} (-1)^{k+1} (k-1)/k u^k
        let mut sum = 0.0;
        let mut power = u * u;
        let mut sign = -1.0;
        for k in 2..64 {
            let term = sign * (k - 1) as f64 / k as f64 * power;
            sum += term;
            if term.abs() <= f64::EPSILON * 1e-3 * sum.abs() {
                break;
            }
            power *= u;
            sign = -sign;
        }
        sum
    } else {
        u / theta - theta.ln()
    }
}

/// Energy of the regularized family at `θ = 1 + u`.
fn regularized_energy_of_u(u: f64, params: &ModelParams) -> f64 {
    params.energy_scale() / params.eta().powi(4) * regularized_kernel(u)
}

/// `(u, θ)` for the shift factor `e^{-x}`: `u = η(e^{-x} - 1)` and
/// `θ = (1 - η) + η e^{-x}`, each without cancellation.
fn shift_coordinates(x: f64, eta: f64) -> (f64, f64) {
    (eta * (-x).exp_m1(), (1.0 - eta) + eta * (-x).exp())
}

fn regularized_energy_at(x: f64, params: &ModelParams) -> f64 {
    let (u, theta) = shift_coordinates(x, params.eta());
    params.energy_scale() / params.eta().powi(4) * kernel_with_theta(u, theta)
}

/// Regularized eigenvalue relation at decay rate `κ`.
pub fn energy_regularized(kappa: f64, params: &ModelParams) -> Result<SpectrumPoint> {
    let eta = params.eta();
    let two_k_p = 2.0 * kappa * params.shift_length();
    let (_, theta) = shift_coordinates(two_k_p, eta);
    if !(theta > 0.0) {
        return Err(NlsError::domain(format!("theta = {theta} must be > 0")));
    }
    Ok(SpectrumPoint {
        kappa,
        coords: FamilyCoords::Regularized { gamma: (-two_k_p).exp(), theta },
        energy: regularized_energy_at(two_k_p, params),
    })
}

/// Infimum of the regularized energy over `κ > 0`.
pub fn energy_bound_regularized(params: &ModelParams) -> EnergyBound {
    let eta = params.eta();
    if eta >= 1.0 {
        EnergyBound::Unbounded
    } else {
        EnergyBound::Finite(regularized_energy_of_u(-eta, params))
    }
}

/// Leading small-`η` behaviour of the regularized bound, `-𝓔/(2η²)`.
pub fn energy_bound_regularized_leading(params: &ModelParams) -> f64 {
    -params.energy_scale() / (2.0 * params.eta().powi(2))
}

/// Deformed logarithm `(y^{q-1} - 1)/(q - 1)`.
pub fn ln_q(y: f64, q: f64) -> f64 {
    let a = q - 1.0;
    if a == 0.0 {
        y.ln()
    } else if a.abs() < 0.25 {
        (a * y.ln()).exp_m1() / a
    } else {
        (y.powf(a) - 1.0) / a
    }
}

/// q-deformed eigenvalue relation as a function of `λ`.
pub fn energy_qdeformed_lambda(lambda: f64, params: &ModelParams) -> Result<f64> {
    let q = params.q();
    if !(q > 0.0) {
        return Err(NlsError::domain("q must be > 0"));
    }
    if !(lambda >= 0.0) {
        return Err(NlsError::domain(format!("lambda must be >= 0, got {lambda}")));
    }
    let es = params.energy_scale();
    if q == 1.0 {
        // η = 1 regularized relation with γ = 1/λ
        if lambda == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        let kappa = lambda.ln() / (2.0 * params.length());
        return Ok(energy_regularized(kappa, &params.with_eta(1.0)?)?.energy);
    }
    // λ^{q-1}(q/(q-1) - λ) - 1/(q-1) = q ln_q λ + 1 - λ^q
    Ok(es / q * (q * ln_q(lambda, q) + 1.0 - lambda.powf(q)))
}

/// q-deformed eigenvalue relation at decay rate `κ`.
pub fn energy_qdeformed(kappa: f64, params: &ModelParams) -> Result<SpectrumPoint> {
    let lambda = (2.0 * kappa * params.length()).exp();
    let energy = if params.q() == 1.0 {
        energy_regularized(kappa, &params.with_eta(1.0)?)?.energy
    } else {
        energy_qdeformed_lambda(lambda, params)?
    };
    Ok(SpectrumPoint { kappa, coords: FamilyCoords::QDeformed { lambda }, energy })
}

/// Infimum of the q-deformed energy on the left half-line (`λ ∈ [0, 1)`).
pub fn energy_bound_qdeformed(params: &ModelParams) -> Result<EnergyBound> {
    let q = params.q();
    if !(q > 0.0) {
        return Err(NlsError::domain("q must be > 0"));
    }
    if q > 1.0 {
        Ok(EnergyBound::Finite(-params.energy_scale() / (q * (q - 1.0))))
    } else {
        Ok(EnergyBound::Unbounded)
    }
}

/// Parity-symmetrized regularized energy: mean of the `+L` branch (`γ`)
/// and the `-L` branch (`1/γ`).
pub fn energy_symmetrized(kappa: f64, params: &ModelParams) -> f64 {
    let two_k_p = 2.0 * kappa * params.shift_length();
    0.5 * (regularized_energy_at(two_k_p, params) + regularized_energy_at(-two_k_p, params))
}

/// Root of a decreasing `f` on `[0, ∞)` with `f(0) >= target`, found by
/// bracket doubling from `start` and bisection to full precision.
pub(crate) fn bisect_decreasing(f: &dyn Fn(f64) -> f64, target: f64, start: f64) -> Option<f64> {
    let mut hi = start;
    while !(f(hi) < target) {
        hi *= 2.0;
        if hi > 1e300 || f(hi).is_nan() {
            return None;
        }
    }
    let mut lo = 0.0;
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(if (f(lo) - target).abs() <= (f(hi) - target).abs() { lo } else { hi })
}

/// Which eigenvalue relation to invert.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Family {
    /// Regularized relation on the right half-line, `κ ≥ 0`.
    Regularized,
    /// q-deformed relation on the left half-line, `κ ≤ 0`.
    QDeformed,
}

/// Decay rate reproducing `target` on the monotone half-line branch.
pub fn solve_kappa(target: f64, family: Family, params: &ModelParams) -> Result<f64> {
    if !target.is_finite() {
        return Err(NlsError::domain("target energy must be finite"));
    }
    let (bound, energy): (EnergyBound, Box<dyn Fn(f64) -> f64>) = match family {
        Family::Regularized => (
            energy_bound_regularized(params),
            Box::new(|k: f64| energy_regularized(k, params).map(|s| s.energy).unwrap_or(f64::NAN)),
        ),
        Family::QDeformed => (
            energy_bound_qdeformed(params)?,
            // mirrored so that the search variable is positive and E decreases
            Box::new(|k: f64| energy_qdeformed(-k, params).map(|s| s.energy).unwrap_or(f64::NAN)),
        ),
    };
    let lower = bound.value().unwrap_or(f64::NEG_INFINITY);
    if target > 0.0 || target <= lower {
        return Err(NlsError::Range { value: target, lower, upper: 0.0 });
    }
    if target == 0.0 {
        return Ok(0.0);
    }
    let scale = match family {
        Family::Regularized => params.shift_length(),
        Family::QDeformed => params.length(),
    };
    let kappa = bisect_decreasing(&*energy, target, 1.0 / scale)
        .ok_or(NlsError::Range { value: target, lower, upper: 0.0 })?;
    Ok(match family {
        Family::Regularized => kappa,
        Family::QDeformed => -kappa,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct QLimitRow {
    pub q: f64,
    pub lambda: f64,
    pub energy_q: f64,
    pub energy_regularized: f64,
    pub difference: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct QLimitReport {
    pub rows: Vec<QLimitRow>,
    /// `(q, max |ΔE|)` per deformation.
    pub max_difference: Vec<(f64, f64)>,
}

/// Compares the q-deformed relation near `q = 1` with the η = 1
/// regularized relation at `γ = 1/λ` on a λ grid in `(0, 1)`.
pub fn limit_consistency_q_to_1(params: &ModelParams) -> Result<QLimitReport> {
    let qs = [1.0 - 1e-3, 1.0 - 1e-6, 1.0, 1.0 + 1e-6, 1.0 + 1e-3];
    let lambdas: Vec<f64> = (1..100).map(|k| k as f64 / 100.0).collect();
    let reference = params.with_eta(1.0)?;
    let mut rows = Vec::with_capacity(qs.len() * lambdas.len());
    let mut max_difference = Vec::with_capacity(qs.len());
    for &q in &qs {
        let pq = params.with_q(q)?;
        let mut worst: f64 = 0.0;
        for &lambda in &lambdas {
            let kappa = lambda.ln() / (2.0 * params.length());
            let energy_q = energy_qdeformed_lambda(lambda, &pq)?;
            let energy_reg = energy_regularized(kappa, &reference)?.energy;
            let difference = (energy_q - energy_reg).abs();
            worst = worst.max(difference);
            rows.push(QLimitRow { q, lambda, energy_q, energy_regularized: energy_reg, difference });
        }
        max_difference.push((q, worst));
    }
    Ok(QLimitReport { rows, max_difference })
}

#[derive(Debug, Clone, Serialize)]
pub struct EtaLimitRow {
    pub eta: f64,
    pub energy: f64,
    pub linear_energy: f64,
    pub deviation: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EtaLimitReport {
    pub kappa: f64,
    pub rows: Vec<EtaLimitRow>,
    /// Largest `deviation / η` over the table.
    pub fitted_constant: f64,
}

/// Regularized energy against the linear value `-ħ²κ²/2m` as `η → 0`.
///
/// The threshold per row is `5 η ħ²κ³L/m`, i.e. `5η` in units where
/// `ħ = m = κ = L = 1`.
pub fn limit_small_eta(kappa: f64, etas: &[f64], params: &ModelParams) -> Result<EtaLimitReport> {
    let linear_energy = -params.kinetic_prefactor() * kappa * kappa;
    let unit = params.hbar().powi(2) * kappa.abs().powi(3) * params.length() / params.mass();
    let mut rows = Vec::with_capacity(etas.len());
    let mut fitted_constant: f64 = 0.0;
    for &eta in etas {
        let energy = energy_regularized(kappa, &params.with_eta(eta)?)?.energy;
        let deviation = (energy - linear_energy).abs();
        fitted_constant = fitted_constant.max(deviation / eta);
        rows.push(EtaLimitRow { eta, energy, linear_energy, deviation, threshold: 5.0 * eta * unit });
    }
    Ok(EtaLimitReport { kappa, rows, fitted_constant })
}

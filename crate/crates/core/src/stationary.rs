//! Stationary-state laboratory: residual maps, the lattice recursion and a
//! descent search seeded by the patched full-line ansatz.

use std::ops::Range;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{NlsError, Result};
use crate::exact::{bisect_decreasing, energy_regularized};
use crate::model::{DensityField, ExtensionPolicy, Grid1D, ModelParams, WaveField};
use crate::potentials::{
    density, info_term_of_kind, mask_windows, perturbative_term, total_from_density, NodeGuard,
    PotentialField, PotentialKind,
};

/// Pointwise violation of the stationary equation `Hφ = Eφ`.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    /// Real part of `(Hψ)/ψ - E` (energy units).
    pub residual: Vec<f64>,
    /// Imaginary part, present only when the full complex form was used.
    pub imaginary: Option<Vec<f64>>,
    /// Node guard exclusion mask.
    pub excluded: Vec<bool>,
    pub excluded_windows: Vec<Range<usize>>,
    /// `max |residual|` over non-excluded indices.
    pub max_abs_outside_guards: f64,
    pub energy: f64,
}

impl ResidualReport {
    fn from_parts(residual: Vec<f64>, imaginary: Option<Vec<f64>>, flags: &PotentialField, guard: &NodeGuard, energy: f64) -> Self {
        let excluded = flags.exclusion_mask(guard.exclusion_halfwidth_steps);
        let max_abs_outside_guards = (0..residual.len())
            .filter(|&i| !excluded[i])
            .map(|i| match &imaginary {
                Some(im) => residual[i].hypot(im[i]),
                None => residual[i].abs(),
            })
            .fold(0.0, f64::max);
        Self {
            excluded_windows: mask_windows(&excluded),
            residual,
            imaginary,
            excluded,
            max_abs_outside_guards,
            energy,
        }
    }

    /// `max |residual|` over the non-excluded indices in `range`.
    pub fn max_abs_in(&self, range: Range<usize>) -> f64 {
        range
            .filter(|&i| !self.excluded[i])
            .map(|i| self.residual[i].abs())
            .fold(0.0, f64::max)
    }
}

/// `ψ''(i)` by second-order differences through the extension policy.
fn second_derivative(psi: &WaveField, i: usize) -> Complex64 {
    let n = psi.grid().len();
    let h2 = psi.grid().dx().powi(2);
    let at = |k: isize| psi.shifted(i, k);
    let clamp = matches!(psi.extension(), ExtensionPolicy::EdgeClamp) && n >= 4;
    if clamp && i == 0 {
        (2.0 * at(0) - 5.0 * at(1) + 4.0 * at(2) - at(3)) / h2
    } else if clamp && i == n - 1 {
        (2.0 * at(0) - 5.0 * at(-1) + 4.0 * at(-2) - at(-3)) / h2
    } else {
        (at(1) - 2.0 * at(0) + at(-1)) / h2
    }
}

/// Residual of the stationary equation for `ψ` at energy `E`.
///
/// For real profiles and non-perturbative kinds the kinetic and Bohm terms
/// cancel identically and the residual is `V + info - E`. Otherwise the
/// kinetic term is taken by finite differences.
pub fn stationary_residual(
    psi: &WaveField,
    energy: f64,
    kind: &PotentialKind,
    params: &ModelParams,
    guard: &NodeGuard,
) -> Result<ResidualReport> {
    kind.validate()?;
    let grid = *psi.grid();
    let p = density(psi);
    let v: Vec<f64> = (0..grid.len() as i64).map(|i| params.external().at(grid.x(i))).collect();
    let real = psi.real_profile().is_some();

    if real && !matches!(kind, PotentialKind::PerturbativeO1) {
        let info = info_term_of_kind(kind, &p, params, guard)?;
        let residual = (0..grid.len()).map(|i| v[i] + info.values[i] - energy).collect();
        return Ok(ResidualReport::from_parts(residual, None, &info, guard, energy));
    }

    let nonlinear = if matches!(kind, PotentialKind::PerturbativeO1) {
        perturbative_term(&p, params, guard)
    } else {
        total_from_density(kind, &p, params, guard)?
    };
    let kin = params.kinetic_prefactor();
    let mut re = Vec::with_capacity(grid.len());
    let mut im = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let z = psi.values()[i];
        let ratio = if z.norm_sqr() > 0.0 { second_derivative(psi, i) / z } else { Complex64::new(0.0, 0.0) };
        let r = -kin * ratio + v[i] + nonlinear.values[i] - energy;
        re.push(r.re);
        im.push(r.im);
    }
    let imaginary = (!real).then_some(im);
    Ok(ResidualReport::from_parts(re, imaginary, &nonlinear, guard, energy))
}

/// Why a recursion orbit stopped early.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RecursionSignal {
    Collapse,
    Blowup,
}

/// Densities below this are treated as collapsed, above its inverse as
/// blown up.
pub const RECURSION_EPS: f64 = 1e-300;
/// Number of trailing ratios inspected when classifying an orbit.
pub const RECURSION_TAIL: usize = 10;
/// Ratios within this margin of 1 count as neither decaying nor growing.
pub const RECURSION_RATIO_MARGIN: f64 = 1e-9;

/// One step of the lattice recursion at `L = 1`:
/// `p_{n+1} = p_n exp(1 - p_{n-1}/p_n - E/𝓔)`.
pub fn recursion_step(p_prev: f64, p_curr: f64, energy: f64, params: &ModelParams) -> std::result::Result<f64, RecursionSignal> {
    if !(p_curr > 0.0) || !(p_prev >= 0.0) {
        return Err(RecursionSignal::Collapse);
    }
    let exponent = 1.0 - p_prev / p_curr - energy / params.energy_scale();
    let next = p_curr * exponent.exp();
    if next.is_nan() || next < RECURSION_EPS {
        Err(RecursionSignal::Collapse)
    } else if next > 1.0 / RECURSION_EPS {
        Err(RecursionSignal::Blowup)
    } else {
        Ok(next)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OrbitClass {
    Bounded,
    Decaying,
    Blowup,
    Collapse,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecursionOrbit {
    pub p_seq: Vec<f64>,
    pub energy: f64,
    pub classification: OrbitClass,
    /// Mean of the trailing ratios `p_{n+1}/p_n`.
    pub tail_ratio: Option<f64>,
    /// `Σ p_n` plus a geometric tail estimate, for decaying orbits.
    pub sum_estimate: Option<f64>,
}

impl RecursionOrbit {
    pub fn ratios(&self) -> Vec<f64> {
        self.p_seq.windows(2).map(|w| w[1] / w[0]).collect()
    }
}

/// Iterates the recursion from `(p0, p1)` for up to `n_max` terms.
///
/// Decaying orbits are repelling for the ratio map (multiplier `1/γ`), so
/// a geometric orbit is reproduced only until rounding has grown by that
/// factor per step.
pub fn recursion_orbit(p0: f64, p1: f64, energy: f64, n_max: usize, params: &ModelParams) -> Result<RecursionOrbit> {
    if !(p0 > 0.0 && p1 > 0.0) {
        return Err(NlsError::domain("seed densities must be positive"));
    }
    if n_max < 2 {
        return Err(NlsError::domain("n_max must be >= 2"));
    }
    let mut p_seq = vec![p0, p1];
    let mut stop = None;
    while p_seq.len() < n_max {
        let n = p_seq.len();
        match recursion_step(p_seq[n - 2], p_seq[n - 1], energy, params) {
            Ok(next) => p_seq.push(next),
            Err(signal) => {
                stop = Some(signal);
                break;
            }
        }
    }
    let ratios: Vec<f64> = p_seq.windows(2).map(|w| w[1] / w[0]).collect();
    let tail = &ratios[ratios.len().saturating_sub(RECURSION_TAIL)..];
    let tail_ratio = (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64);
    let full_tail = tail.len() == RECURSION_TAIL;
    let decaying = full_tail && tail.iter().all(|r| *r <= 1.0 - RECURSION_RATIO_MARGIN);
    let growing = full_tail && tail.iter().all(|r| *r >= 1.0 / (1.0 - RECURSION_RATIO_MARGIN));
    let classification = match stop {
        Some(RecursionSignal::Blowup) => OrbitClass::Blowup,
        Some(RecursionSignal::Collapse) => {
            let spread = tail.iter().copied().fold(0.0, f64::max) / tail.iter().copied().fold(f64::INFINITY, f64::min);
            if decaying && spread - 1.0 <= 1e-6 {
                OrbitClass::Decaying
            } else {
                OrbitClass::Collapse
            }
        }
        None if decaying => OrbitClass::Decaying,
        None if growing => OrbitClass::Blowup,
        None => OrbitClass::Bounded,
    };
    let sum_estimate = (classification == OrbitClass::Decaying).then(|| {
        let r = tail.iter().copied().fold(0.0, f64::max);
        p_seq.iter().sum::<f64>() + p_seq[p_seq.len() - 1] * r / (1.0 - r)
    });
    Ok(RecursionOrbit { p_seq, energy, classification, tail_ratio, sum_estimate })
}

/// Full-line trial state glued from a right and a left damped solution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatchedSpec {
    pub kappa_plus: f64,
    pub kappa_minus: f64,
    /// Normalization `C'`.
    pub c_prime: f64,
    pub energy: f64,
    /// Period of the sine factor, `ηL`.
    pub period: f64,
}

impl PatchedSpec {
    pub fn new(kappa_plus: f64, kappa_minus: f64, energy: f64, params: &ModelParams) -> Result<Self> {
        if !(kappa_plus > 0.0 && kappa_minus > 0.0) || !kappa_plus.is_finite() || !kappa_minus.is_finite() {
            return Err(NlsError::domain("both decay rates must be finite and > 0"));
        }
        Ok(Self { kappa_plus, kappa_minus, c_prime: 1.0, energy, period: params.shift_length() })
    }

    /// Chooses `κ₋` so that both outer patches solve the regularized
    /// equation with the same energy `E(κ₊)`.
    pub fn matched(kappa_plus: f64, params: &ModelParams) -> Result<Self> {
        if !(kappa_plus > 0.0) {
            return Err(NlsError::domain("kappa_plus must be > 0"));
        }
        let energy = energy_regularized(kappa_plus, params)?.energy;
        // the left patch is the ansatz with κ = -κ₋, whose energy falls without bound as κ₋ grows
        let left = |k: f64| energy_regularized(-k, params).map(|s| s.energy).unwrap_or(f64::NAN);
        let kappa_minus = bisect_decreasing(&left, energy, 1.0 / params.shift_length())
            .ok_or(NlsError::Range { value: energy, lower: f64::NEG_INFINITY, upper: 0.0 })?;
        Self::new(kappa_plus, kappa_minus, energy, params)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { c_prime: self.c_prime * c, ..self.clone() }
    }

    /// The formula at grid index `i` (in or out of range).
    pub fn amplitude(&self, grid: &Grid1D, i: i64) -> Complex64 {
        let x = grid.x(i);
        let envelope = if x >= 0.0 { (-self.kappa_plus * x).exp() } else { (self.kappa_minus * x).exp() };
        let phase = match grid.origin_offset() {
            Some(o) if grid.matches_period(self.period) => {
                let m = grid.shift_steps() as i64;
                (o + i).rem_euclid(m) as f64 / m as f64
            }
            _ => (x / self.period).rem_euclid(1.0),
        };
        let s = (2.0 * std::f64::consts::PI * phase).sin();
        Complex64::new(self.c_prime * envelope * s, 0.0)
    }
}

/// Samples the patched state on a grid containing the origin, normalized by
/// trapezoidal quadrature.
pub fn build_patched(spec: &PatchedSpec, grid: &Grid1D) -> Result<WaveField> {
    if grid.index_of(0.0).is_none() {
        return Err(NlsError::domain("patched state needs a grid point at x = 0"));
    }
    if !grid.matches_period(spec.period) {
        return Err(NlsError::domain("grid shift length does not match the patch period"));
    }
    let unit = PatchedSpec { c_prime: 1.0, ..spec.clone() };
    let n = grid.len() as i64;
    let w = |i: i64| if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
    let norm: f64 = (0..n).map(|i| w(i) * unit.amplitude(grid, i).norm_sqr()).sum::<f64>() * grid.dx();
    let spec = unit.scaled(norm.sqrt().recip());
    let values = (0..n).map(|i| spec.amplitude(grid, i)).collect();
    WaveField::new(*grid, values, ExtensionPolicy::Patched(spec))
}

/// Options for [`search_localized`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    pub max_iters: usize,
    /// Initial descent step (in log-density units per unit gradient).
    pub initial_step: f64,
    /// Stop once the gradient norm falls below this.
    pub gradient_tolerance: f64,
    /// Also descend in the energy.
    pub optimize_energy: bool,
    pub guard: NodeGuard,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            initial_step: 1.0,
            gradient_tolerance: 1e-12,
            optimize_energy: false,
            guard: NodeGuard::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SearchStatus {
    Converged,
    /// Iteration budget exhausted.
    NoConvergence,
    /// Backtracking could not find a decrease.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub field: WaveField,
    pub report: ResidualReport,
    pub energy: f64,
    /// Objective `½ Σ r² dx` at the seed and after every accepted step.
    pub history: Vec<f64>,
    /// Indices whose log-density was free.
    pub window: Range<usize>,
    pub status: SearchStatus,
}

/// Partial derivatives of one information-term value with respect to
/// `(ln p₋, ln p, ln p₊)`.
pub(crate) fn info_point_log_gradient(kind: &PotentialKind, triplet: [f64; 3], params: &ModelParams) -> [f64; 3] {
    let [pm, p, pp] = triplet;
    let es = params.energy_scale();
    let regularized = |eta: f64| {
        let r_plus = pp / p;
        let s = p / pm;
        let a = (1.0 - eta) + eta * r_plus;
        let b = (1.0 - eta) + eta * s;
        let da = -1.0 / a + (1.0 - eta) / (a * a);
        let db = eta / (b * b);
        let scale = es / eta.powi(4);
        [-scale * db * eta * s, scale * (-da * eta * r_plus + db * eta * s), scale * da * eta * r_plus]
    };
    match kind {
        PotentialKind::Raw => regularized(1.0),
        PotentialKind::Regularized => regularized(params.eta()),
        PotentialKind::QDeformed if params.q() == 1.0 => regularized(1.0),
        PotentialKind::QDeformed => {
            let q = params.q();
            let rho_term = (p / pp).powf(q - 1.0);
            let sigma_term = (pm / p).powf(q);
            [-es * sigma_term, es * (rho_term + sigma_term), -es * rho_term]
        }
        PotentialKind::Symmetrized(inner) => {
            let a = info_point_log_gradient(inner, [pm, p, pp], params);
            let b = info_point_log_gradient(inner, [pp, p, pm], params);
            [0.5 * (a[0] + b[2]), 0.5 * (a[1] + b[1]), 0.5 * (a[2] + b[0])]
        }
        PotentialKind::PerturbativeO1 => unreachable!("perturbative term is not a shift term"),
    }
}

struct SearchProblem<'a> {
    grid: Grid1D,
    signs: Vec<f64>,
    base: DensityField,
    extension: ExtensionPolicy,
    free: Vec<usize>,
    mask: Vec<bool>,
    shift: isize,
    kind: &'a PotentialKind,
    params: &'a ModelParams,
    guard: NodeGuard,
    v: Vec<f64>,
}

impl SearchProblem<'_> {
    fn density_with(&self, logs: &[f64]) -> DensityField {
        let mut vals = self.base.values().to_vec();
        for (k, &i) in self.free.iter().enumerate() {
            vals[i] = logs[k].exp();
        }
        DensityField::new(self.grid, vals, self.extension.clone()).expect("positive densities")
    }

    fn residual(&self, p: &DensityField, energy: f64) -> Result<Vec<f64>> {
        let info = info_term_of_kind(self.kind, p, self.params, &self.guard)?;
        Ok((0..self.grid.len()).map(|i| self.v[i] + info.values[i] - energy).collect())
    }

    fn objective(&self, r: &[f64]) -> f64 {
        0.5 * self.grid.dx() * r.iter().zip(&self.mask).filter(|(_, m)| !**m).map(|(v, _)| v * v).sum::<f64>()
    }

    /// Gradient with respect to the free log-densities and the energy.
    fn gradient(&self, p: &DensityField, r: &[f64]) -> (Vec<f64>, f64) {
        let n = self.grid.len();
        let mut full = vec![0.0; n];
        let mut d_energy = 0.0;
        let floor = |t: [f64; 3]| {
            let max = t.iter().copied().fold(0.0, f64::max);
            let f = self.guard.floor_rel * max;
            t.map(|v| v.max(f))
        };
        for i in 0..n {
            if self.mask[i] {
                continue;
            }
            d_energy -= r[i] * self.grid.dx();
            let triplet = floor([p.shifted(i, -self.shift), p.values()[i], p.shifted(i, self.shift)]);
            let g = info_point_log_gradient(self.kind, triplet, self.params);
            let w = r[i] * self.grid.dx();
            for (k, off) in [-self.shift, 0, self.shift].into_iter().enumerate() {
                let j = i as isize + off;
                if (0..n as isize).contains(&j) {
                    full[j as usize] += w * g[k];
                }
            }
        }
        (self.free.iter().map(|&i| full[i]).collect(), d_energy)
    }

    /// The seed with the free samples replaced.
    fn field(&self, seed: &WaveField, p: &DensityField) -> Result<WaveField> {
        let mut values = seed.values().to_vec();
        for &i in &self.free {
            values[i] = Complex64::new(self.signs[i] * p.values()[i].sqrt(), 0.0);
        }
        WaveField::new(self.grid, values, self.extension.clone())
    }
}

/// Damped descent on the squared residual over the log-densities inside
/// the defect window `[-2ηL, 2ηL]`, starting from the patched seed.
///
/// Only samples inside the window change; node samples and signs are kept.
/// The reported objective never increases across accepted steps.
pub fn search_localized(
    seed: &PatchedSpec,
    grid: &Grid1D,
    kind: &PotentialKind,
    params: &ModelParams,
    opts: &SearchOptions,
) -> Result<SearchResult> {
    kind.validate()?;
    if matches!(kind, PotentialKind::PerturbativeO1) {
        return Err(NlsError::domain("search needs a shift-type information term"));
    }
    let psi0 = build_patched(seed, grid)?;
    let phi0 = psi0.real_profile().expect("patched state is real");
    let p0 = density(&psi0);
    let shift = kind.shift_steps(grid, params)? as isize;
    let guard = opts.guard;

    let seed_info = info_term_of_kind(kind, &p0, params, &guard)?;
    let mask = seed_info.exclusion_mask(guard.exclusion_halfwidth_steps);
    let origin = grid.index_of(0.0).expect("checked by build_patched");
    let half = 2 * grid.shift_steps();
    let window = origin.saturating_sub(half)..(origin + half + 1).min(grid.len());
    let free: Vec<usize> = window
        .clone()
        .filter(|&i| {
            let local = p0.shifted(i, -1).max(p0.values()[i]).max(p0.shifted(i, 1));
            p0.values()[i] >= guard.floor_rel * local && p0.values()[i] > 0.0
        })
        .collect();
    let problem = SearchProblem {
        grid: *grid,
        signs: phi0.iter().map(|v| if *v < 0.0 { -1.0 } else { 1.0 }).collect(),
        base: p0.clone(),
        extension: psi0.extension().clone(),
        free,
        mask,
        shift,
        kind,
        params,
        guard,
        v: (0..grid.len() as i64).map(|i| params.external().at(grid.x(i))).collect(),
    };

    let mut logs: Vec<f64> = problem.free.iter().map(|&i| p0.values()[i].ln()).collect();
    let mut energy = seed.energy;
    let mut p = p0;
    let mut r = problem.residual(&p, energy)?;
    let mut objective = problem.objective(&r);
    let mut history = vec![objective];
    let mut step = opts.initial_step;
    let mut status = SearchStatus::NoConvergence;

    for _ in 0..opts.max_iters {
        let (grad, grad_e) = problem.gradient(&p, &r);
        let grad_e = if opts.optimize_energy { grad_e } else { 0.0 };
        let gnorm2 = grad.iter().map(|g| g * g).sum::<f64>() + grad_e * grad_e;
        if gnorm2.sqrt() <= opts.gradient_tolerance {
            status = SearchStatus::Converged;
            break;
        }
        let mut accepted = false;
        while step > 1e-30 {
            let trial: Vec<f64> = logs.iter().zip(&grad).map(|(l, g)| l - step * g).collect();
            let trial_e = energy - step * grad_e;
            let trial_p = problem.density_with(&trial);
            let trial_r = problem.residual(&trial_p, trial_e)?;
            let trial_obj = problem.objective(&trial_r);
            if trial_obj.is_finite() && trial_obj <= objective - 1e-4 * step * gnorm2 {
                logs = trial;
                energy = trial_e;
                p = trial_p;
                r = trial_r;
                objective = trial_obj;
                history.push(objective);
                step *= 2.0;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            status = SearchStatus::Stalled;
            break;
        }
    }

    let field = if history.len() == 1 { psi0 } else { problem.field(&psi0, &p)? };
    let report = stationary_residual(&field, energy, kind, params, &guard)?;
    Ok(SearchResult { field, report, energy, history, window, status })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{build_ansatz, AnsatzSpec, Domain, PeriodicProfile};
    use crate::potentials::{info_point, info_term_regularized};

    fn params(eta: f64) -> ModelParams {
        ModelParams::natural(1.0, eta, 1.0).unwrap()
    }

    #[test]
    fn periodic_state_has_zero_residual() {
        let p = params(0.5);
        let g = Grid1D::box_periods(8, 32, &p).unwrap();
        let spec = AnsatzSpec::new(0.0, PeriodicProfile::sine(0.5), Domain::Box { periods: 8 }).unwrap();
        let psi = build_ansatz(&spec, &g).unwrap();
        let rep = stationary_residual(&psi, 0.0, &PotentialKind::Regularized, &p, &NodeGuard::default()).unwrap();
        assert!(rep.max_abs_outside_guards <= 1e-12 * p.energy_scale());
        assert!(!rep.excluded_windows.is_empty());
    }

    #[test]
    fn exact_ansatz_and_affine_energy_shift() {
        let p = params(1.0);
        let g = Grid1D::box_periods(6, 32, &p).unwrap();
        let spec = AnsatzSpec::new(0.5, PeriodicProfile::sine(1.0), Domain::Box { periods: 6 }).unwrap();
        let psi = build_ansatz(&spec, &g).unwrap();
        let e = energy_regularized(0.5, &p).unwrap().energy;
        let guard = NodeGuard::default();
        let rep = stationary_residual(&psi, e, &PotentialKind::Regularized, &p, &guard).unwrap();
        assert!(rep.max_abs_outside_guards <= 1e-13, "{}", rep.max_abs_outside_guards);
        let shifted = stationary_residual(&psi, e + 0.1 * p.energy_scale(), &PotentialKind::Regularized, &p, &guard).unwrap();
        assert!((shifted.max_abs_outside_guards - 0.025).abs() < 1e-12);
        for (a, b) in rep.residual.iter().zip(&shifted.residual) {
            assert!((a - 0.025 - b).abs() < 1e-15);
        }
    }

    #[test]
    fn complex_form_agrees_with_real_form() {
        // a constant global phase keeps the profile real; a non-constant one does not
        let p = params(0.5);
        let g = Grid1D::ring(8, 32, &p).unwrap();
        let len = g.len() as f64 * g.dx();
        let k = 2.0 * std::f64::consts::PI / len;
        let psi = WaveField::from_fn(g, |x| Complex64::from_polar(1.0, k * x)).unwrap();
        let rep = stationary_residual(&psi, p.kinetic_prefactor() * k * k, &PotentialKind::Regularized, &p, &NodeGuard::default()).unwrap();
        assert!(rep.imaginary.is_some());
        assert!(rep.max_abs_outside_guards < 1e-3, "{}", rep.max_abs_outside_guards);
    }

    #[test]
    fn recursion_steps() {
        let p = params(1.0);
        let es = p.energy_scale();
        assert_eq!(recursion_step(1.0, 1.0, 0.0, &p).unwrap(), 1.0);
        let e = es * (1.0 - 0.5f64.ln() - 2.0);
        assert!((recursion_step(1.0, 0.5, e, &p).unwrap() - 0.25).abs() < 1e-16);
        assert!((recursion_step(1.0, 1.0, es, &p).unwrap() - (-1.0f64).exp()).abs() < 1e-16);
        assert_eq!(recursion_step(1.0, 0.0, 0.0, &p), Err(RecursionSignal::Collapse));
        assert_eq!(recursion_step(1.0, 1e299, -1000.0 * es, &p), Err(RecursionSignal::Blowup));
    }

    #[test]
    fn recursion_orbits() {
        let p = params(1.0);
        let es = p.energy_scale();
        let flat = recursion_orbit(1.0, 1.0, 0.0, 50, &p).unwrap();
        assert_eq!(flat.classification, OrbitClass::Bounded);
        assert!(flat.p_seq.iter().all(|v| *v == 1.0));

        // with E from the eigenvalue relation the step multiplier rounds to
        // exactly 0.5, so the orbit is exact in binary
        let e = energy_regularized(2f64.ln() / 2.0, &p).unwrap().energy;
        let geo = recursion_orbit(1.0, 0.5, e, 50, &p).unwrap();
        assert_eq!(geo.classification, OrbitClass::Decaying);
        assert_eq!(geo.p_seq.len(), 50);
        assert!(geo.ratios().iter().all(|r| (r - 0.5).abs() <= 1e-12), "{:?}", geo.ratios());

        // one ulp off, the error doubles per step (multiplier 1/γ = 2)
        let off = recursion_orbit(1.0, 0.5, es * (1.0 - 0.5f64.ln() - 2.0), 50, &p).unwrap();
        let dev: Vec<f64> = off.ratios().iter().map(|r| (r - 0.5).abs()).collect();
        assert!(dev[..10].iter().all(|d| *d <= 1e-12));
        assert!(dev[40] > 1e-6 && dev[40] < 1e-3);
        assert!(geo.sum_estimate.unwrap() > 1.9 && geo.sum_estimate.unwrap() < 2.1);

        let up = recursion_orbit(1.0, 1.0, -10.0 * es, 50, &p).unwrap();
        assert_eq!(up.classification, OrbitClass::Blowup);
        let up = recursion_orbit(1.0, 1.0, -10.0 * es, 500, &p).unwrap();
        assert_eq!(up.classification, OrbitClass::Blowup);
        assert!(up.p_seq.len() < 500);

        let down = recursion_orbit(1.0, 1.0, 10.0 * es, 500, &p).unwrap();
        assert_eq!(down.classification, OrbitClass::Collapse);
        assert!(recursion_orbit(0.0, 1.0, 0.0, 10, &p).is_err());
    }

    #[test]
    fn patched_construction() {
        let p = params(0.5);
        let g = Grid1D::centered(6, 16, &p).unwrap();
        let spec = PatchedSpec::new(0.7, 0.7, -0.1, &p).unwrap();
        let psi = build_patched(&spec, &g).unwrap();
        let origin = g.index_of(0.0).unwrap();
        assert!(psi.values()[origin].norm() < 1e-15);
        let n = g.len();
        for i in 0..n {
            assert!((psi.values()[i].norm() - psi.values()[n - 1 - i].norm()).abs() < 1e-14);
        }
        assert!((psi.norm_sqr() - 1.0).abs() < 1e-12);
        // continuity at the origin: neighbours are small and of the sine's slope
        assert!(psi.values()[origin + 1].norm() < 0.5);
        assert!(PatchedSpec::new(-0.1, 0.3, 0.0, &p).is_err());
        let off = Grid1D::new(0.1, 97, 16, &p).unwrap();
        assert!(build_patched(&spec, &off).is_err());
    }

    #[test]
    fn matched_patch_is_exact_outside_defect() {
        let p = params(0.5);
        let m = 32;
        let g = Grid1D::centered(6, m, &p).unwrap();
        let spec = PatchedSpec::matched(0.6, &p).unwrap();
        let left = energy_regularized(-spec.kappa_minus, &p).unwrap().energy;
        assert!((left - spec.energy).abs() <= 1e-13 * spec.energy.abs());
        let psi = build_patched(&spec, &g).unwrap();
        let rep = stationary_residual(&psi, spec.energy, &PotentialKind::Regularized, &p, &NodeGuard::default()).unwrap();
        let origin = g.index_of(0.0).unwrap();
        let outside = rep.max_abs_in(0..origin - m).max(rep.max_abs_in(origin + m + 1..g.len()));
        assert!(outside <= 1e-12, "{outside}");
        let inside = rep.max_abs_in(origin - m + 1..origin + m);
        assert!(inside > 1e-3 * p.energy_scale(), "{inside}");
    }

    #[test]
    fn log_gradient_matches_finite_differences() {
        let kinds = [
            PotentialKind::Raw,
            PotentialKind::Regularized,
            PotentialKind::QDeformed,
            PotentialKind::Symmetrized(Box::new(PotentialKind::Regularized)),
        ];
        let p = ModelParams::natural(1.0, 0.4, 1.7).unwrap();
        let logs = [0.3f64, -0.2, 0.5];
        for kind in &kinds {
            let g = info_point_log_gradient(kind, logs.map(f64::exp), &p);
            for k in 0..3 {
                let h = 1e-6;
                let mut up = logs;
                up[k] += h;
                let mut dn = logs;
                dn[k] -= h;
                let fd = (info_point(kind, up.map(f64::exp), &p) - info_point(kind, dn.map(f64::exp), &p)) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-7 * (1.0 + fd.abs()), "{kind:?} k={k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn search_identity_and_monotone() {
        let p = params(0.5);
        let m = 16;
        let g = Grid1D::centered(6, m, &p).unwrap();
        let seed = PatchedSpec::matched(0.6, &p).unwrap();
        let kind = PotentialKind::Regularized;

        let zero = SearchOptions { max_iters: 0, ..Default::default() };
        let res = search_localized(&seed, &g, &kind, &p, &zero).unwrap();
        assert_eq!(res.field, build_patched(&seed, &g).unwrap());
        assert_eq!(res.history.len(), 1);

        let opts = SearchOptions { max_iters: 40, ..Default::default() };
        let res = search_localized(&seed, &g, &kind, &p, &opts).unwrap();
        assert!(res.history.windows(2).all(|w| w[1] <= w[0]));
        assert!(res.history.last().unwrap() < &res.history[0]);
        let base = build_patched(&seed, &g).unwrap();
        for i in 0..g.len() {
            if !res.window.contains(&i) {
                assert_eq!(res.field.values()[i], base.values()[i]);
            }
        }
        let origin = g.index_of(0.0).unwrap();
        let reach = 3 * m;
        let exterior = res.report.max_abs_in(0..origin - reach).max(res.report.max_abs_in(origin + reach + 1..g.len()));
        assert!(exterior <= 1e-10 * p.energy_scale(), "{exterior}");
    }

    #[test]
    fn search_with_energy_descends() {
        let p = params(0.5);
        let g = Grid1D::centered(6, 16, &p).unwrap();
        let seed = PatchedSpec::new(0.6, 0.9, -0.05, &p).unwrap();
        let opts = SearchOptions { max_iters: 30, optimize_energy: true, ..Default::default() };
        let res = search_localized(&seed, &g, &PotentialKind::Regularized, &p, &opts).unwrap();
        assert!(res.history.windows(2).all(|w| w[1] <= w[0]));
        assert!(res.energy != seed.energy);
    }

    #[test]
    fn degenerate_profiles_share_the_energy() {
        let p = params(0.5);
        let g = Grid1D::box_periods(6, 32, &p).unwrap();
        let e = energy_regularized(0.4, &p).unwrap().energy;
        let profiles = [
            PeriodicProfile::sine(0.5),
            PeriodicProfile::new(0.5, vec![2.0], vec![1.0]).unwrap(),
            PeriodicProfile::new(0.5, vec![0.0, 1.0], vec![0.0, 0.3]).unwrap(),
            PeriodicProfile::new(0.5, vec![1.5, 0.2, 0.1], vec![0.4]).unwrap(),
            PeriodicProfile::new(0.5, vec![], vec![1.0, 0.0, 0.5]).unwrap(),
        ];
        for alpha in profiles {
            let spec = AnsatzSpec::new(0.4, alpha, Domain::Box { periods: 6 }).unwrap();
            let psi = build_ansatz(&spec, &g).unwrap();
            let rep = stationary_residual(&psi, e, &PotentialKind::Regularized, &p, &NodeGuard::default()).unwrap();
            assert!(rep.max_abs_outside_guards <= 1e-12, "{}", rep.max_abs_outside_guards);
            let info = info_term_regularized(&density(&psi), &p, &NodeGuard::default()).unwrap();
            assert!(info.values.len() == g.len());
        }
    }
}

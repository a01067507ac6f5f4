//! Parameters, shift-commensurate grids and sampled fields.
//!
//! Every nonlinear term in the model couples `x` with `x ± ηL`. The grid
//! stores the number of steps `M` spanning `ηL`, so those couplings are
//! plain index offsets and never need interpolation. Lookups that leave the
//! sampled range are resolved by the field's [`ExtensionPolicy`].

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{NlsError, Result};
use crate::exact::AnsatzSpec;
use crate::stationary::PatchedSpec;

/// Relative tolerance used when checking that a length is an integer
/// number of grid steps.
const COMMENSURATE_TOL: f64 = 1e-9;

/// External potential `V(x)`, identically zero unless set.
#[derive(Clone, Default)]
pub struct ExternalPotential(Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>);

impl ExternalPotential {
    pub fn zero() -> Self {
        Self(None)
    }

    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self(Some(Arc::new(f)))
    }

    #[inline]
    pub fn at(&self, x: f64) -> f64 {
        match &self.0 {
            Some(f) => f(x),
            None => 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_none()
    }
}

impl fmt::Debug for ExternalPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(_) => f.write_str("ExternalPotential(<fn>)"),
            None => f.write_str("ExternalPotential(0)"),
        }
    }
}

/// Physical constants of the model.
///
/// The energy scale is always derived as `ħ²/(4 m L²)`; it cannot be set on
/// its own, so `𝓔 L² = ħ²/4m` holds after every update.
#[derive(Debug, Clone)]
pub struct ModelParams {
    hbar: f64,
    mass: f64,
    length: f64,
    energy_scale: f64,
    eta: f64,
    q: f64,
    v_ext: ExternalPotential,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(NlsError::domain(format!("{name} must be finite and > 0, got {v}")))
    }
}

impl ModelParams {
    /// Validates the inputs and derives the energy scale.
    pub fn new(hbar: f64, mass: f64, length: f64, eta: f64, q: f64) -> Result<Self> {
        positive("hbar", hbar)?;
        positive("mass", mass)?;
        positive("L", length)?;
        positive("eta", eta)?;
        positive("q", q)?;
        if eta > 1.0 {
            return Err(NlsError::domain(format!("eta must satisfy 0 < eta <= 1, got {eta}")));
        }
        Ok(Self {
            hbar,
            mass,
            length,
            energy_scale: hbar * hbar / (4.0 * mass * length * length),
            eta,
            q,
            v_ext: ExternalPotential::zero(),
        })
    }

    /// `ħ = m = 1` units.
    pub fn natural(length: f64, eta: f64, q: f64) -> Result<Self> {
        Self::new(1.0, 1.0, length, eta, q)
    }

    pub fn with_eta(&self, eta: f64) -> Result<Self> {
        Self::new(self.hbar, self.mass, self.length, eta, self.q)
            .map(|p| p.with_external(self.v_ext.clone()))
    }

    pub fn with_q(&self, q: f64) -> Result<Self> {
        Self::new(self.hbar, self.mass, self.length, self.eta, q)
            .map(|p| p.with_external(self.v_ext.clone()))
    }

    pub fn with_length(&self, length: f64) -> Result<Self> {
        Self::new(self.hbar, self.mass, length, self.eta, self.q)
            .map(|p| p.with_external(self.v_ext.clone()))
    }

    pub fn with_external(mut self, v_ext: ExternalPotential) -> Self {
        self.v_ext = v_ext;
        self
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }
    pub fn mass(&self) -> f64 {
        self.mass
    }
    /// Nonlinearity length scale `L`.
    pub fn length(&self) -> f64 {
        self.length
    }
    /// Derived energy scale `𝓔`.
    pub fn energy_scale(&self) -> f64 {
        self.energy_scale
    }
    pub fn eta(&self) -> f64 {
        self.eta
    }
    pub fn q(&self) -> f64 {
        self.q
    }
    /// The regularized shift `ηL`.
    pub fn shift_length(&self) -> f64 {
        self.eta * self.length
    }
    pub fn external(&self) -> &ExternalPotential {
        &self.v_ext
    }
    /// `ħ²/2m`.
    pub fn kinetic_prefactor(&self) -> f64 {
        self.hbar * self.hbar / (2.0 * self.mass)
    }
}

/// Uniform grid whose spacing divides `ηL` exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    x0: f64,
    dx: f64,
    n_points: usize,
    shift_steps: usize,
}

impl Grid1D {
    /// `n_points` samples starting at `x0`, with `shift_steps` steps per `ηL`.
    pub fn new(x0: f64, n_points: usize, shift_steps: usize, params: &ModelParams) -> Result<Self> {
        if shift_steps == 0 {
            return Err(NlsError::domain("shift_steps must be >= 1"));
        }
        if n_points < 2 * shift_steps + 1 {
            return Err(NlsError::domain(format!(
                "n_points = {n_points} must be >= 2*shift_steps + 1 = {}",
                2 * shift_steps + 1
            )));
        }
        if !x0.is_finite() {
            return Err(NlsError::domain("x0 must be finite"));
        }
        Ok(Self {
            x0,
            dx: params.shift_length() / shift_steps as f64,
            n_points,
            shift_steps,
        })
    }

    /// Box `[0, N ηL]` including both walls.
    pub fn box_periods(periods: usize, shift_steps: usize, params: &ModelParams) -> Result<Self> {
        if periods < 2 {
            return Err(NlsError::domain("a box needs at least 2 periods"));
        }
        Self::new(0.0, periods * shift_steps + 1, shift_steps, params)
    }

    /// Cell centres of the box `[0, N ηL]`; the walls sit half a step
    /// beyond the first and last samples.
    pub fn staggered_box(periods: usize, shift_steps: usize, params: &ModelParams) -> Result<Self> {
        if periods < 2 {
            return Err(NlsError::domain("a box needs at least 2 periods"));
        }
        let dx = params.shift_length() / shift_steps.max(1) as f64;
        Self::new(0.5 * dx, periods * shift_steps, shift_steps, params)
    }

    /// Symmetric grid `[-N ηL, N ηL]` with the origin on a grid point.
    pub fn centered(periods_each_side: usize, shift_steps: usize, params: &ModelParams) -> Result<Self> {
        if periods_each_side == 0 {
            return Err(NlsError::domain("need at least one period on each side"));
        }
        let half = periods_each_side * shift_steps;
        let dx = params.shift_length() / shift_steps as f64;
        Self::new(-(half as f64) * dx, 2 * half + 1, shift_steps, params)
    }

    /// Periodic ring of `periods` shift lengths; the sample at `x0 + n dx`
    /// is identified with `x0`.
    pub fn ring(periods: usize, shift_steps: usize, params: &ModelParams) -> Result<Self> {
        Self::new(0.0, periods * shift_steps, shift_steps, params)
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }
    pub fn dx(&self) -> f64 {
        self.dx
    }
    pub fn len(&self) -> usize {
        self.n_points
    }
    pub fn is_empty(&self) -> bool {
        self.n_points == 0
    }
    /// Steps per `ηL`.
    pub fn shift_steps(&self) -> usize {
        self.shift_steps
    }
    /// `ηL` as represented on this grid.
    pub fn shift_length(&self) -> f64 {
        self.dx * self.shift_steps as f64
    }

    /// Position of (possibly out-of-range) index `i`.
    #[inline]
    pub fn x(&self, i: i64) -> f64 {
        self.x0 + i as f64 * self.dx
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.n_points as i64).map(|i| self.x(i)).collect()
    }

    /// Number of steps spanning `length`, if it is commensurate with `dx`.
    pub fn steps_for(&self, length: f64) -> Result<usize> {
        let ratio = length / self.dx;
        let steps = ratio.round();
        if steps < 1.0 || (ratio - steps).abs() > COMMENSURATE_TOL * ratio.max(1.0) {
            return Err(NlsError::domain(format!(
                "length {length} is not an integer multiple of dx = {}",
                self.dx
            )));
        }
        Ok(steps as usize)
    }

    /// `x0 / dx` when the origin lies on the (extended) lattice.
    pub fn origin_offset(&self) -> Option<i64> {
        let r = self.x0 / self.dx;
        let k = r.round();
        ((r - k).abs() <= COMMENSURATE_TOL * r.abs().max(1.0)).then_some(k as i64)
    }

    /// Grid index of `x`, if `x` is a grid point.
    pub fn index_of(&self, x: f64) -> Option<usize> {
        let r = (x - self.x0) / self.dx;
        let k = r.round();
        if (r - k).abs() <= COMMENSURATE_TOL * r.abs().max(1.0) && k >= 0.0 && (k as usize) < self.n_points {
            Some(k as usize)
        } else {
            None
        }
    }

    /// True when `period` equals `ηL` on this grid.
    pub fn matches_period(&self, period: f64) -> bool {
        (period - self.shift_length()).abs() <= COMMENSURATE_TOL * period.abs()
    }
}

/// How lookups outside the stored range are resolved.
#[derive(Debug, Clone, PartialEq)]
pub enum ExtensionPolicy {
    /// Evaluate the exact-solution formula at the requested point.
    Ansatz(AnsatzSpec),
    /// Evaluate the patched full-line formula at the requested point.
    Patched(PatchedSpec),
    Periodic,
    EdgeClamp,
}

impl ExtensionPolicy {
    fn check_grid(&self, grid: &Grid1D) -> Result<()> {
        let period = match self {
            ExtensionPolicy::Ansatz(spec) => spec.alpha.period(),
            ExtensionPolicy::Patched(spec) => spec.period,
            _ => return Ok(()),
        };
        if grid.matches_period(period) {
            Ok(())
        } else {
            Err(NlsError::domain(format!(
                "analytic extension has period {period} but the grid shift length is {}",
                grid.shift_length()
            )))
        }
    }

    fn analytic(&self, grid: &Grid1D, index: i64) -> Option<Complex64> {
        match self {
            ExtensionPolicy::Ansatz(spec) => Some(spec.amplitude(grid, index)),
            ExtensionPolicy::Patched(spec) => Some(spec.amplitude(grid, index)),
            _ => None,
        }
    }
}

enum Slot {
    Stored(usize),
    Analytic(Complex64),
}

fn locate(grid: &Grid1D, policy: &ExtensionPolicy, index: i64) -> Slot {
    let n = grid.len() as i64;
    if (0..n).contains(&index) {
        return Slot::Stored(index as usize);
    }
    match policy {
        ExtensionPolicy::Periodic => Slot::Stored(index.rem_euclid(n) as usize),
        ExtensionPolicy::EdgeClamp => Slot::Stored(index.clamp(0, n - 1) as usize),
        other => Slot::Analytic(other.analytic(grid, index).expect("analytic policy")),
    }
}

fn check_finite_len(grid: &Grid1D, len: usize) -> Result<()> {
    if len != grid.len() {
        return Err(NlsError::domain(format!(
            "field has {len} samples but the grid has {}",
            grid.len()
        )));
    }
    Ok(())
}

/// Complex amplitudes `ψ` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveField {
    grid: Grid1D,
    values: Vec<Complex64>,
    extension: ExtensionPolicy,
}

impl WaveField {
    pub fn new(grid: Grid1D, values: Vec<Complex64>, extension: ExtensionPolicy) -> Result<Self> {
        check_finite_len(&grid, values.len())?;
        if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(NlsError::domain("wave field contains non-finite samples"));
        }
        extension.check_grid(&grid)?;
        Ok(Self { grid, values, extension })
    }

    /// Samples `f(x_i)` with periodic extension.
    pub fn from_fn(grid: Grid1D, f: impl Fn(f64) -> Complex64) -> Result<Self> {
        let values = (0..grid.len() as i64).map(|i| f(grid.x(i))).collect();
        Self::new(grid, values, ExtensionPolicy::Periodic)
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }
    pub fn extension(&self) -> &ExtensionPolicy {
        &self.extension
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn with_extension(self, extension: ExtensionPolicy) -> Result<Self> {
        Self::new(self.grid, self.values, extension)
    }

    /// Same grid and extension, new samples.
    pub fn with_values(&self, values: Vec<Complex64>) -> Result<Self> {
        Self::new(self.grid, values, self.extension.clone())
    }

    /// Value at `index + offset`, resolved through the extension policy.
    #[inline]
    pub fn shifted(&self, index: usize, offset: isize) -> Complex64 {
        match locate(&self.grid, &self.extension, index as i64 + offset as i64) {
            Slot::Stored(i) => self.values[i],
            Slot::Analytic(z) => z,
        }
    }

    /// `Σ |ψ_i|² dx`.
    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.dx()
    }

    /// Multiplies every sample by `c`. Analytic extensions are rescaled too.
    pub fn scaled(&self, c: f64) -> Self {
        let extension = match &self.extension {
            ExtensionPolicy::Ansatz(spec) => ExtensionPolicy::Ansatz(spec.scaled(c)),
            ExtensionPolicy::Patched(spec) => ExtensionPolicy::Patched(spec.scaled(c)),
            other => other.clone(),
        };
        Self {
            grid: self.grid,
            values: self.values.iter().map(|z| z * c).collect(),
            extension,
        }
    }

    /// Real profile `φ` when `ψ = e^{iχ} φ` with a constant phase `χ`.
    pub fn real_profile(&self) -> Option<Vec<f64>> {
        let pivot = self
            .values
            .iter()
            .copied()
            .max_by(|a, b| a.norm_sqr().total_cmp(&b.norm_sqr()))?;
        let scale = pivot.norm();
        if scale == 0.0 {
            return Some(vec![0.0; self.values.len()]);
        }
        let unphase = pivot.conj() / scale;
        let mut out = Vec::with_capacity(self.values.len());
        for z in &self.values {
            let w = z * unphase;
            if w.im.abs() > 1e-13 * scale {
                return None;
            }
            out.push(w.re);
        }
        Some(out)
    }
}

/// Densities `p = |ψ|²` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    grid: Grid1D,
    values: Vec<f64>,
    extension: ExtensionPolicy,
}

impl DensityField {
    pub fn new(grid: Grid1D, values: Vec<f64>, extension: ExtensionPolicy) -> Result<Self> {
        check_finite_len(&grid, values.len())?;
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(NlsError::domain("density must be finite and non-negative"));
        }
        extension.check_grid(&grid)?;
        Ok(Self { grid, values, extension })
    }

    /// Samples `f(x_i)` with periodic extension.
    pub fn from_fn(grid: Grid1D, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = (0..grid.len() as i64).map(|i| f(grid.x(i))).collect();
        Self::new(grid, values, ExtensionPolicy::Periodic)
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn extension(&self) -> &ExtensionPolicy {
        &self.extension
    }

    pub fn with_extension(self, extension: ExtensionPolicy) -> Result<Self> {
        Self::new(self.grid, self.values, extension)
    }

    /// Value at `index + offset`, resolved through the extension policy.
    /// Analytic extensions return the squared modulus of the formula.
    #[inline]
    pub fn shifted(&self, index: usize, offset: isize) -> f64 {
        match locate(&self.grid, &self.extension, index as i64 + offset as i64) {
            Slot::Stored(i) => self.values[i],
            Slot::Analytic(z) => z.norm_sqr(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{AnsatzSpec, Domain, PeriodicProfile};

    fn unit() -> ModelParams {
        ModelParams::new(1.0, 1.0, 1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn energy_scale_is_derived() {
        assert_eq!(unit().energy_scale(), 0.25);
        let p = ModelParams::new(1.0, 1.0, 0.5, 1.0, 1.0).unwrap();
        assert_eq!(p.energy_scale(), 1.0);
        let p = ModelParams::new(1.3, 0.7, 2.1, 0.4, 2.0).unwrap();
        let lhs = p.energy_scale() * p.length() * p.length();
        assert!((lhs - 1.3 * 1.3 / (4.0 * 0.7)).abs() <= 1e-15);
        let p2 = p.with_length(0.3).unwrap();
        assert!((p2.energy_scale() * 0.09 - 1.3 * 1.3 / 2.8).abs() <= 1e-15);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(matches!(ModelParams::new(1.0, 1.0, 1.0, 0.0, 1.0), Err(NlsError::Domain(_))));
        assert!(ModelParams::new(1.0, 1.0, 1.0, 1.5, 1.0).is_err());
        assert!(ModelParams::new(1.0, 1.0, -1.0, 0.5, 1.0).is_err());
        assert!(ModelParams::new(1.0, 0.0, 1.0, 0.5, 1.0).is_err());
        assert!(ModelParams::new(1.0, 1.0, 1.0, 0.5, 0.0).is_err());
        assert!(ModelParams::new(f64::NAN, 1.0, 1.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn grid_shift_is_exact() {
        let p = ModelParams::natural(1.0, 0.5, 1.0).unwrap();
        let g = Grid1D::new(0.0, 33, 16, &p).unwrap();
        assert_eq!(g.dx() * 16.0, 0.5);
        assert_eq!(g.steps_for(1.0).unwrap(), 32);
        assert!(g.steps_for(0.3).is_err());
        assert!(Grid1D::new(0.0, 32, 16, &p).is_err());
    }

    #[test]
    fn periodic_and_clamp_lookups() {
        let p = unit();
        let g = Grid1D::new(0.0, 8, 2, &p).unwrap();
        let vals: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let d = DensityField::new(g, vals.clone(), ExtensionPolicy::Periodic).unwrap();
        assert_eq!(d.shifted(7, 2), vals[1]);
        assert_eq!(d.shifted(0, -3), vals[5]);
        let d = d.with_extension(ExtensionPolicy::EdgeClamp).unwrap();
        assert_eq!(d.shifted(0, -3), vals[0]);
        assert_eq!(d.shifted(6, 5), vals[7]);
    }

    #[test]
    fn ansatz_lookup_past_edge_uses_formula() {
        let p = unit();
        let g = Grid1D::box_periods(4, 16, &p).unwrap();
        let spec = AnsatzSpec::new(0.3, PeriodicProfile::sine(1.0), Domain::Box { periods: 4 }).unwrap();
        let vals = (0..g.len() as i64).map(|i| spec.amplitude(&g, i)).collect();
        let f = WaveField::new(g, vals, ExtensionPolicy::Ansatz(spec.clone())).unwrap();
        let last = g.len() - 1;
        let x = g.x(last as i64 + 3);
        let expected = (-0.3 * x).exp() * (2.0 * std::f64::consts::PI * x).sin();
        assert!((f.shifted(last, 3).re - expected).abs() < 1e-14);
    }

    #[test]
    fn ansatz_extension_rejects_mismatched_grid() {
        let p = ModelParams::natural(1.0, 0.5, 1.0).unwrap();
        let g = Grid1D::new(0.0, 33, 8, &p).unwrap();
        let spec = AnsatzSpec::new(0.0, PeriodicProfile::sine(1.0), Domain::Box { periods: 4 }).unwrap();
        let vals = vec![Complex64::new(0.0, 0.0); g.len()];
        assert!(WaveField::new(g, vals, ExtensionPolicy::Ansatz(spec)).is_err());
    }

    #[test]
    fn real_profile_detects_global_phase() {
        let p = unit();
        let g = Grid1D::new(0.0, 9, 2, &p).unwrap();
        let phase = Complex64::from_polar(1.0, 0.7);
        let f = WaveField::from_fn(g, |x| phase * (x - 1.0)).unwrap();
        let prof = f.real_profile().unwrap();
        assert!((prof[0].abs() - 1.0).abs() < 1e-14);
        let f = WaveField::from_fn(g, |x| Complex64::from_polar(1.0, x)).unwrap();
        assert!(f.real_profile().is_none());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn periodic_shift_composes_to_identity(n in 9usize..64, m in 1usize..4, i in 0usize..64) {
                let p = unit();
                let m = m.min((n - 1) / 2);
                let g = Grid1D::new(0.0, n, m, &p).unwrap();
                let vals: Vec<f64> = (0..n).map(|k| (k * k) as f64).collect();
                let d = DensityField::new(g, vals, ExtensionPolicy::Periodic).unwrap();
                let i = i % n;
                let j = (i as i64 + m as i64).rem_euclid(n as i64) as usize;
                prop_assert_eq!(d.shifted(j, -(m as isize)), d.values()[i]);
                prop_assert_eq!(d.shifted(i, m as isize), d.values()[j]);
            }
        }
    }
}

//! Pointwise nonlinear terms.
//!
//! All information terms depend on the density only through the ratios
//! `p(x ± s)/p(x)`, so they are invariant under `ψ → cψ`. They are written
//! in terms of `d± = p±/p - 1`, which keeps first-order cancellations out
//! of floating point: on exponential densities the result is a second-order
//! quantity in `κ ηL`.

use std::ops::Range;

use num_complex::Complex64;

use crate::error::{NlsError, Result};
use crate::exact::ln_q;
use crate::model::{DensityField, ExtensionPolicy, Grid1D, ModelParams, WaveField};

/// Which nonlinear term to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub enum PotentialKind {
    /// `𝓔[ln p/p(x+L) + 1 - p(x-L)/p]`.
    Raw,
    /// The η-regularized term with shifts `±ηL`.
    Regularized,
    /// The q-deformed term with shifts `±L`.
    QDeformed,
    /// Mean of the inner term with `+L` and with `-L`.
    Symmetrized(Box<PotentialKind>),
    /// First-order small-`L` expansion of the full nonlinearity.
    PerturbativeO1,
}

impl PotentialKind {
    pub fn symmetrized(inner: PotentialKind) -> Result<Self> {
        let kind = PotentialKind::Symmetrized(Box::new(inner));
        kind.validate()?;
        Ok(kind)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PotentialKind::Symmetrized(inner) => match **inner {
                PotentialKind::Raw | PotentialKind::Regularized | PotentialKind::QDeformed => Ok(()),
                _ => Err(NlsError::domain(
                    "only raw, regularized or q-deformed terms can be symmetrized",
                )),
            },
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> String {
        match self {
            PotentialKind::Raw => "raw".into(),
            PotentialKind::Regularized => "regularized".into(),
            PotentialKind::QDeformed => "qdeformed".into(),
            PotentialKind::Symmetrized(inner) => format!("symmetrized-{}", inner.name()),
            PotentialKind::PerturbativeO1 => "perturbative".into(),
        }
    }

    /// Number of grid steps the information term reaches in each direction.
    pub fn shift_steps(&self, grid: &Grid1D, params: &ModelParams) -> Result<usize> {
        match self {
            PotentialKind::Regularized => Ok(grid.shift_steps()),
            PotentialKind::Raw | PotentialKind::QDeformed => grid.steps_for(params.length()),
            PotentialKind::Symmetrized(inner) => inner.shift_steps(grid, params),
            PotentialKind::PerturbativeO1 => Ok(1),
        }
    }
}

/// Numerical guard for density zeros.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeGuard {
    /// A stencil value below `floor_rel` times the stencil maximum is
    /// treated as a node and floored.
    pub floor_rel: f64,
    /// Half-width of the exclusion window placed around every node.
    pub exclusion_halfwidth_steps: usize,
}

impl Default for NodeGuard {
    fn default() -> Self {
        Self { floor_rel: 1e-12, exclusion_halfwidth_steps: 3 }
    }
}

impl NodeGuard {
    pub fn new(floor_rel: f64, exclusion_halfwidth_steps: usize) -> Result<Self> {
        if !(floor_rel > 0.0 && floor_rel < 1.0) {
            return Err(NlsError::domain("floor_rel must lie in (0, 1)"));
        }
        Ok(Self { floor_rel, exclusion_halfwidth_steps })
    }

    /// Floors `values` against their common maximum. Returns `None` when
    /// all of them vanish.
    fn floor<const N: usize>(&self, values: [f64; N]) -> Option<([f64; N], bool)> {
        let max = values.iter().copied().fold(0.0, f64::max);
        if max <= 0.0 {
            return None;
        }
        let floor = self.floor_rel * max;
        let mut flagged = false;
        let mut out = values;
        for v in &mut out {
            if *v < floor {
                flagged = true;
                *v = floor;
            }
        }
        Some((out, flagged))
    }
}

/// A real field (energy units) with node flags.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialField {
    pub grid: Grid1D,
    pub values: Vec<f64>,
    /// True where the node guard engaged.
    pub flagged: Vec<bool>,
}

impl PotentialField {
    fn zeros(grid: Grid1D) -> Self {
        let n = grid.len();
        Self { grid, values: vec![0.0; n], flagged: vec![false; n] }
    }

    /// Pointwise sum; flags are merged.
    pub fn plus(mut self, other: &PotentialField) -> Self {
        for i in 0..self.values.len() {
            self.values[i] += other.values[i];
            self.flagged[i] |= other.flagged[i];
        }
        self
    }

    pub fn any_flagged(&self) -> bool {
        self.flagged.iter().any(|f| *f)
    }

    /// True for every index within `halfwidth` of a flagged index.
    pub fn exclusion_mask(&self, halfwidth: usize) -> Vec<bool> {
        let n = self.values.len();
        let mut mask = vec![false; n];
        for (i, _) in self.flagged.iter().enumerate().filter(|(_, f)| **f) {
            let lo = i.saturating_sub(halfwidth);
            let hi = (i + halfwidth).min(n - 1);
            mask[lo..=hi].iter_mut().for_each(|m| *m = true);
        }
        mask
    }
}

/// Maximal runs of `true` in `mask`.
pub fn mask_windows(mask: &[bool]) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &m) in mask.iter().enumerate() {
        match (m, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(s..i);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(s..mask.len());
    }
    out
}

/// `p = |ψ|²`. Analytic extensions carry over as the squared modulus of
/// their formula.
pub fn density(psi: &WaveField) -> DensityField {
    let values = psi.values().iter().map(|z| z.norm_sqr()).collect();
    DensityField::new(*psi.grid(), values, psi.extension().clone())
        .expect("squared moduli of a valid wave field form a valid density")
}

/// Regularized kernel in units of `𝓔/η⁴`, from `p(x - s)`, `p(x)`, `p(x + s)`.
#[inline]
pub(crate) fn regularized_point(p_minus: f64, p: f64, p_plus: f64, eta: f64) -> f64 {
    let d_plus = (p_plus - p) / p;
    let d_minus = (p_minus - p) / p;
    -(eta * d_plus).ln_1p() + eta * (1.0 - eta) * d_plus / (1.0 + eta * d_plus)
        - eta * eta * d_minus / (1.0 + (1.0 - eta) * d_minus)
}

/// q-deformed kernel in units of `𝓔/q`. Uses `ρ^{q-1} = 1 + (q-1) ln_q ρ`.
#[inline]
pub(crate) fn qdeformed_point(p_minus: f64, p: f64, p_plus: f64, q: f64) -> f64 {
    let rho = p / p_plus;
    let sigma = p_minus / p;
    q * ln_q(rho, q) + 1.0 - sigma.powf(q)
}

/// Information term of a non-perturbative kind at one point, from the
/// (already floored) triplet `[p₋, p, p₊]`.
pub(crate) fn info_point(kind: &PotentialKind, triplet: [f64; 3], params: &ModelParams) -> f64 {
    let [pm, p, pp] = triplet;
    let es = params.energy_scale();
    match kind {
        PotentialKind::Raw => es * regularized_point(pm, p, pp, 1.0),
        PotentialKind::Regularized => {
            let eta = params.eta();
            es / eta.powi(4) * regularized_point(pm, p, pp, eta)
        }
        PotentialKind::QDeformed => {
            let q = params.q();
            if q == 1.0 {
                es * regularized_point(pm, p, pp, 1.0)
            } else {
                es / q * qdeformed_point(pm, p, pp, q)
            }
        }
        PotentialKind::Symmetrized(inner) => {
            0.5 * (info_point(inner, [pm, p, pp], params) + info_point(inner, [pp, p, pm], params))
        }
        PotentialKind::PerturbativeO1 => unreachable!("perturbative term is not a shift term"),
    }
}

fn info_term(kind: &PotentialKind, p: &DensityField, params: &ModelParams, guard: &NodeGuard) -> Result<PotentialField> {
    kind.validate()?;
    if matches!(kind, PotentialKind::PerturbativeO1) {
        return Err(NlsError::domain("the perturbative term has no information part"));
    }
    let grid = *p.grid();
    let s = kind.shift_steps(&grid, params)? as isize;
    let mut out = PotentialField::zeros(grid);
    for i in 0..grid.len() {
        let raw = [p.shifted(i, -s), p.values()[i], p.shifted(i, s)];
        match guard.floor(raw) {
            Some((triplet, flagged)) => {
                out.values[i] = info_point(kind, triplet, params);
                out.flagged[i] = flagged;
            }
            None => out.flagged[i] = true,
        }
    }
    Ok(out)
}

/// `𝓔[ln p/p(x+L) + 1 - p(x-L)/p]`.
pub fn info_term_raw(p: &DensityField, params: &ModelParams, guard: &NodeGuard) -> Result<PotentialField> {
    info_term(&PotentialKind::Raw, p, params, guard)
}

/// The η-regularized information term with shifts `±ηL`. At `η = 1` it is
/// the same computation as [`info_term_raw`].
pub fn info_term_regularized(p: &DensityField, params: &ModelParams, guard: &NodeGuard) -> Result<PotentialField> {
    info_term(&PotentialKind::Regularized, p, params, guard)
}

/// The q-deformed information term with shifts `±L`; `q = 1` is the raw term.
pub fn info_term_qdeformed(p: &DensityField, params: &ModelParams, guard: &NodeGuard) -> Result<PotentialField> {
    info_term(&PotentialKind::QDeformed, p, params, guard)
}

/// `½(F⁺ + F⁻)` for an inner raw, regularized or q-deformed term.
pub fn symmetrize(inner: &PotentialKind, p: &DensityField, params: &ModelParams, guard: &NodeGuard) -> Result<PotentialField> {
    info_term(&PotentialKind::symmetrized(inner.clone())?, p, params, guard)
}

/// Information term of any shift kind.
pub fn info_term_of_kind(kind: &PotentialKind, p: &DensityField, params: &ModelParams, guard: &NodeGuard) -> Result<PotentialField> {
    info_term(kind, p, params, guard)
}

/// `(f, f', f'')` at index `i` by second-order differences. Under
/// `EdgeClamp` the edges use one-sided second-order stencils.
fn derivatives(p: &DensityField, i: usize, g: impl Fn(f64) -> f64) -> (f64, f64, f64) {
    let n = p.grid().len();
    let h = p.grid().dx();
    let at = |k: isize| g(p.shifted(i, k));
    let clamp = matches!(p.extension(), ExtensionPolicy::EdgeClamp) && n >= 4;
    if clamp && i == 0 {
        let (f0, f1, f2, f3) = (at(0), at(1), at(2), at(3));
        (f0, (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h), (2.0 * f0 - 5.0 * f1 + 4.0 * f2 - f3) / (h * h))
    } else if clamp && i == n - 1 {
        let (f0, f1, f2, f3) = (at(0), at(-1), at(-2), at(-3));
        (f0, (3.0 * f0 - 4.0 * f1 + f2) / (2.0 * h), (2.0 * f0 - 5.0 * f1 + 4.0 * f2 - f3) / (h * h))
    } else {
        let (fm, f0, fp) = (at(-1), at(0), at(1));
        (f0, (fp - fm) / (2.0 * h), (fp - 2.0 * f0 + fm) / (h * h))
    }
}

/// `p(i)` is treated as a node when it falls below the guard floor relative
/// to its nearest neighbours.
fn local_node(p: &DensityField, i: usize, guard: &NodeGuard) -> (bool, f64) {
    let local = p.shifted(i, -1).max(p.values()[i]).max(p.shifted(i, 1));
    let floor = guard.floor_rel * local;
    let v = p.values()[i];
    if local <= 0.0 {
        (true, f64::MIN_POSITIVE)
    } else if v < floor {
        (true, floor)
    } else {
        (false, v)
    }
}

/// `(ħ²/2m) (√p)''/√p` by central differences on `√p`.
pub fn bohm_potential(p: &DensityField, params: &ModelParams, guard: &NodeGuard) -> PotentialField {
    let grid = *p.grid();
    let mut out = PotentialField::zeros(grid);
    let kin = params.kinetic_prefactor();
    for i in 0..grid.len() {
        let (flagged, floored) = local_node(p, i, guard);
        let (_, _, s2) = derivatives(p, i, f64::sqrt);
        out.values[i] = kin * s2 / floored.sqrt();
        out.flagged[i] = flagged;
    }
    out
}

/// Bohm term of a wavefunction, with neighbour amplitudes signed by their
/// phase relative to the centre sample.
///
/// Across a sign change of a real profile the stencil then sees the signed
/// amplitude, so the Bohm term cancels the kinetic term there as well. For
/// neighbours within a quarter turn of each other it equals
/// [`bohm_potential`] on `|ψ|²`.
pub fn bohm_potential_of_field(psi: &WaveField, params: &ModelParams, guard: &NodeGuard) -> PotentialField {
    let clamp = matches!(psi.extension(), ExtensionPolicy::EdgeClamp);
    signed_bohm(psi.values(), &density(psi), params, guard, clamp, &|i, k| psi.shifted(i, k))
}

/// Signed-amplitude Bohm term with neighbour lookups supplied by `at`.
pub(crate) fn signed_bohm(
    values: &[Complex64],
    p: &DensityField,
    params: &ModelParams,
    guard: &NodeGuard,
    clamp: bool,
    at: &dyn Fn(usize, isize) -> Complex64,
) -> PotentialField {
    let grid = *p.grid();
    let n = grid.len();
    let h = grid.dx();
    let mut out = PotentialField::zeros(grid);
    let kin = params.kinetic_prefactor();
    let clamp = clamp && n >= 4;
    for i in 0..n {
        let (flagged, floored) = local_node(p, i, guard);
        let z = values[i];
        let a = |k: isize| {
            let w = at(i, k);
            if (w * z.conj()).re < 0.0 {
                -w.norm()
            } else {
                w.norm()
            }
        };
        let s2 = if clamp && i == 0 {
            (2.0 * a(0) - 5.0 * a(1) + 4.0 * a(2) - a(3)) / (h * h)
        } else if clamp && i == n - 1 {
            (2.0 * a(0) - 5.0 * a(-1) + 4.0 * a(-2) - a(-3)) / (h * h)
        } else {
            (a(1) - 2.0 * a(0) + a(-1)) / (h * h)
        };
        out.values[i] = kin * s2 / floored.sqrt();
        out.flagged[i] = flagged;
    }
    out
}

/// `(ħ²L/4m)[-(p')³/(3p³) + p'p''/(2p²)]`.
pub fn perturbative_term(p: &DensityField, params: &ModelParams, guard: &NodeGuard) -> PotentialField {
    let grid = *p.grid();
    let mut out = PotentialField::zeros(grid);
    let pref = params.hbar().powi(2) * params.length() / (4.0 * params.mass());
    for i in 0..grid.len() {
        let (flagged, floored) = local_node(p, i, guard);
        let (_, d1, d2) = derivatives(p, i, |v| v);
        let a = d1 / floored;
        out.values[i] = pref * (-a * a * a / 3.0 + a * d2 / (2.0 * floored));
        out.flagged[i] = flagged;
    }
    out
}

/// Full nonlinearity: information term plus Bohm term, or the perturbative
/// term on its own. The Bohm term is taken from the signed amplitude, see
/// [`bohm_potential_of_field`].
pub fn total_nonlinear_term(kind: &PotentialKind, psi: &WaveField, params: &ModelParams, guard: &NodeGuard) -> Result<PotentialField> {
    let p = density(psi);
    match kind {
        PotentialKind::PerturbativeO1 => Ok(perturbative_term(&p, params, guard)),
        _ => Ok(info_term(kind, &p, params, guard)?.plus(&bohm_potential_of_field(psi, params, guard))),
    }
}

pub fn total_from_density(kind: &PotentialKind, p: &DensityField, params: &ModelParams, guard: &NodeGuard) -> Result<PotentialField> {
    match kind {
        PotentialKind::PerturbativeO1 => Ok(perturbative_term(p, params, guard)),
        _ => Ok(info_term(kind, p, params, guard)?.plus(&bohm_potential(p, params, guard))),
    }
}

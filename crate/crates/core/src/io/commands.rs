//! The six subcommands. Each reads a [`RunConfig`], writes its tables and a
//! `report.json` into the output directory and returns the checks it ran.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde_json::json;

use crate::dynamics::{continuity_defect, evolve, overlap, stable_dt_limit, Boundary, EvolutionConfig, KineticScheme};
use crate::error::{NlsError, Result};
use crate::exact::{
    build_ansatz, energy_bound_qdeformed, energy_bound_regularized, energy_qdeformed, energy_regularized,
    energy_symmetrized, limit_consistency_q_to_1, limit_small_eta, AnsatzSpec, Domain, EnergyBound, FamilyCoords,
    PeriodicProfile,
};
use crate::io::config::RunConfig;
use crate::io::output::{fmt_f64, json_f64, write_report, Check, Outcome, Table};
use crate::model::{Grid1D, ModelParams, WaveField};
use crate::potentials::PotentialKind;
use crate::stationary::{
    build_patched, recursion_orbit, search_localized, stationary_residual, PatchedSpec, SearchOptions, RECURSION_TAIL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Spectrum,
    Verify,
    Evolve,
    Recurse,
    Search,
    Limits,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::Verify => "verify",
            Command::Evolve => "evolve",
            Command::Recurse => "recurse",
            Command::Search => "search",
            Command::Limits => "limits",
        }
    }
}

/// Runs `cmd` and writes its artifacts into `out`.
pub fn run(cmd: Command, cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let params = cfg.params()?;
    fs::create_dir_all(out)?;
    let (checks, mut files, body) = match cmd {
        Command::Spectrum => spectrum(cfg, &params, out)?,
        Command::Verify => verify(cfg, &params, out)?,
        Command::Evolve => evolve_cmd(cfg, &params, out)?,
        Command::Recurse => recurse(cfg, &params, out)?,
        Command::Search => search(cfg, &params, out)?,
        Command::Limits => limits(cfg, &params, out)?,
    };
    let (path, report) = write_report(out, cmd.name(), &params, &checks, body)?;
    files.push(path);
    Ok(Outcome { command: cmd.name().to_string(), checks, files, report })
}

type Parts = (Vec<Check>, Vec<std::path::PathBuf>, serde_json::Value);

fn bound_cell(bound: EnergyBound) -> String {
    match bound {
        EnergyBound::Finite(v) => fmt_f64(v),
        EnergyBound::Unbounded => "unbounded".to_string(),
    }
}

fn spectrum(cfg: &RunConfig, params: &ModelParams, out: &Path) -> Result<Parts> {
    let family = cfg.choice("spectrum.family", &["regularized", "qdeformed", "symmetrized"], "regularized")?;
    let (lo, hi) = if family == "qdeformed" { (-2.0, 0.0) } else { (0.0, 2.0) };
    let kmin: f64 = cfg.get_or("spectrum.kappa_min", lo)?;
    let kmax: f64 = cfg.get_or("spectrum.kappa_max", hi)?;
    let points: usize = cfg.get_or("spectrum.points", 201)?;
    if !(kmin.is_finite() && kmax.is_finite() && kmin < kmax) {
        return Err(cfg_err(cfg, "spectrum.kappa_max", "need finite kappa_min < kappa_max"));
    }
    if points < 2 {
        return Err(cfg_err(cfg, "spectrum.points", "need at least 2 points"));
    }
    let kappas: Vec<f64> = (0..points).map(|i| kmin + (kmax - kmin) * i as f64 / (points - 1) as f64).collect();

    let bound = match family {
        "regularized" => energy_bound_regularized(params),
        "qdeformed" => energy_bound_qdeformed(params)?,
        _ => EnergyBound::Unbounded,
    };
    let bound_text = bound_cell(bound);
    let (header, rows): (&[&str], Vec<Vec<String>>) = match family {
        "regularized" => {
            let pts = kappas.par_iter().map(|&k| energy_regularized(k, params)).collect::<Result<Vec<_>>>()?;
            let rows = pts
                .iter()
                .map(|s| {
                    let FamilyCoords::Regularized { gamma, theta } = s.coords else { unreachable!() };
                    vec![fmt_f64(s.kappa), fmt_f64(gamma), fmt_f64(theta), fmt_f64(s.energy), bound_text.clone()]
                })
                .collect();
            (&["kappa", "gamma", "theta", "energy", "bound"], rows)
        }
        "qdeformed" => {
            let pts = kappas.par_iter().map(|&k| energy_qdeformed(k, params)).collect::<Result<Vec<_>>>()?;
            let rows = pts
                .iter()
                .map(|s| {
                    let FamilyCoords::QDeformed { lambda } = s.coords else { unreachable!() };
                    vec![fmt_f64(s.kappa), fmt_f64(lambda), fmt_f64(s.energy), bound_text.clone()]
                })
                .collect();
            (&["kappa", "lambda", "energy", "bound"], rows)
        }
        _ => {
            let es: Vec<f64> = kappas.par_iter().map(|&k| energy_symmetrized(k, params)).collect();
            let rows = kappas.iter().zip(&es).map(|(k, e)| vec![fmt_f64(*k), fmt_f64(*e), bound_text.clone()]).collect();
            (&["kappa", "energy", "bound"], rows)
        }
    };
    let mut table = Table::new(header);
    rows.into_iter().for_each(|r| table.push(r));
    let path = out.join("spectrum.csv");
    table.write(&path)?;

    let energies = table.column("energy")?;
    let mut checks = vec![Check::flag("finite_energies", energies.iter().all(|e| e.is_finite()))];
    if let Some(b) = bound.value() {
        // the bound holds on the normalizable branch only
        let branch = |k: f64| if family == "qdeformed" { k <= 0.0 } else { k >= 0.0 };
        let slack = kappas
            .iter()
            .zip(&energies)
            .filter(|(k, _)| branch(**k))
            .map(|(_, e)| b - e)
            .fold(f64::NEG_INFINITY, f64::max);
        checks.push(Check::at_most("bound_violation", slack.max(0.0), 1e-12 * b.abs()));
    }
    let min = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let body = json!({
        "family": family,
        "points": points,
        "bound": bound.value().map_or(json!("unbounded"), json_f64),
        "min_energy": json_f64(min),
    });
    Ok((checks, vec![path], body))
}

fn cfg_err(cfg: &RunConfig, key: &str, message: &str) -> NlsError {
    NlsError::Config { line: cfg.raw(key).map_or(0, |(l, _)| l), key: key.to_string(), message: message.to_string() }
}

fn grid_size(cfg: &RunConfig, periods: usize, steps: usize) -> Result<(usize, usize)> {
    Ok((cfg.get_or("grid.periods", periods)?, cfg.get_or("grid.shift_steps", steps)?))
}

fn verify(cfg: &RunConfig, params: &ModelParams, out: &Path) -> Result<Parts> {
    let kind = cfg.kind("verify.kind", PotentialKind::Regularized)?;
    cfg.check("verify.kind", kind.validate())?;
    let domain_name = cfg.choice("verify.domain", &["box", "right", "left"], "box")?;
    let kappa: f64 = cfg.get_or("verify.kappa", 0.0)?;
    let period = params.shift_length();
    let alpha = match (cfg.list("verify.cos")?, cfg.list("verify.sin")?) {
        (None, None) => PeriodicProfile::sine(period),
        (cos, sin) => cfg.check("verify.sin", PeriodicProfile::new(period, cos.unwrap_or_default(), sin.unwrap_or_default()))?,
    };
    let (periods, m) = grid_size(cfg, 8, 32)?;
    let grid = match domain_name {
        "left" => Grid1D::new(-(periods as f64) * period, periods * m + 1, m, params),
        _ => Grid1D::box_periods(periods, m, params),
    };
    let grid = cfg.check("grid.periods", grid)?;
    let domain = match domain_name {
        "box" => Domain::Box { periods },
        "right" => Domain::HalfLineRight,
        _ => Domain::HalfLineLeft,
    };
    let spec = cfg.check("verify.kappa", AnsatzSpec::new(kappa, alpha, domain))?;
    let psi = cfg.check("verify.domain", build_ansatz(&spec, &grid))?;

    let energy = match cfg.get::<f64>("verify.energy")? {
        Some(e) => e,
        None => match &kind {
            PotentialKind::Raw => energy_regularized(kappa, &params.with_eta(1.0)?)?.energy,
            PotentialKind::Regularized => energy_regularized(kappa, params)?.energy,
            PotentialKind::QDeformed => energy_qdeformed(kappa, params)?.energy,
            PotentialKind::Symmetrized(_) => energy_symmetrized(kappa, params),
            PotentialKind::PerturbativeO1 => cfg.require("verify.energy")?,
        },
    };
    let guard = cfg.guard()?;
    let report = cfg.check("verify.kind", stationary_residual(&psi, energy, &kind, params, &guard))?;
    let tolerance: f64 = cfg.get_or("verify.tolerance", 1e-10 * params.energy_scale().max(energy.abs()))?;

    let mut table = Table::new(&["x", "psi", "residual", "excluded"]);
    for i in 0..grid.len() {
        table.push(vec![
            fmt_f64(grid.x(i as i64)),
            fmt_f64(psi.values()[i].re),
            fmt_f64(report.residual[i]),
            u8::from(report.excluded[i]).to_string(),
        ]);
    }
    let path = out.join("residual.csv");
    table.write(&path)?;
    let checks = vec![Check::at_most("max_residual", report.max_abs_outside_guards, tolerance)];
    let body = json!({
        "kind": kind.name(),
        "domain": domain_name,
        "kappa": kappa,
        "energy": energy,
        "max_residual": report.max_abs_outside_guards,
        "excluded_windows": report.excluded_windows.iter().map(|r| [r.start, r.end]).collect::<Vec<_>>(),
    });
    Ok((checks, vec![path], body))
}

fn evolve_cmd(cfg: &RunConfig, params: &ModelParams, out: &Path) -> Result<Parts> {
    let state = cfg.choice("evolve.state", &["plane_wave", "ansatz", "bump"], "plane_wave")?;
    let kind = cfg.kind("evolve.kind", PotentialKind::Regularized)?;
    let default_kinetic = if state == "ansatz" { "fd" } else { "spectral" };
    let kinetic = match cfg.choice("evolve.kinetic", &["spectral", "fd"], default_kinetic)? {
        "fd" => KineticScheme::FiniteDifference,
        _ => KineticScheme::Spectral,
    };
    let (periods, m) = grid_size(cfg, 8, 16)?;
    let (grid, boundary) = if state == "ansatz" {
        (Grid1D::staggered_box(periods, m, params), Boundary::StaggeredWalls)
    } else {
        (Grid1D::ring(periods, m, params), Boundary::PeriodicRing)
    };
    let grid = cfg.check("grid.periods", grid)?;
    let len = grid.len() as f64 * grid.dx();
    let mode: f64 = cfg.get_or("evolve.mode", 1.0)?;
    let k = 2.0 * PI * mode / len;
    let mut energy = None;
    let psi0 = match state {
        "plane_wave" => WaveField::from_fn(grid, |x| Complex64::from_polar(len.sqrt().recip(), k * x))?,
        "bump" => {
            let xc = grid.x0() + 0.5 * len;
            let psi = WaveField::from_fn(grid, |x| {
                let g = (-((x - xc) / (0.15 * len)).powi(2)).exp();
                Complex64::from_polar(1.0 + 0.3 * g, k * x)
            })?;
            let c = psi.norm_sqr().sqrt().recip();
            psi.scaled(c)
        }
        _ => {
            let kappa: f64 = cfg.get_or("evolve.kappa", 1.0)?;
            let spec = cfg.check(
                "evolve.kappa",
                AnsatzSpec::new(kappa, PeriodicProfile::sine(params.shift_length()), Domain::HalfLineRight),
            )?;
            energy = Some(energy_regularized(kappa, params)?.energy);
            build_ansatz(&spec.normalized(&grid, params)?, &grid)?
        }
    };

    let limit = stable_dt_limit(&grid, kinetic, params);
    let default_dt = if state == "ansatz" { 0.01 * limit } else { 0.5 * limit };
    let dt: f64 = cfg.get_or("evolve.dt", default_dt)?;
    let steps: usize = cfg.get_or("evolve.steps", 1000)?;
    let mut ec = EvolutionConfig::new(dt, steps, kind, boundary);
    ec.kinetic = kinetic;
    ec.snapshot_every = cfg.get_or("evolve.snapshot_every", (steps / 10).max(1))?;
    ec.imaginary_potential = cfg.get_or("evolve.imaginary", 0.0)?;
    ec.guard = cfg.guard()?;
    cfg.check("evolve.dt", ec.validate())?;
    let ev = match evolve(&psi0, &ec, params) {
        Err(NlsError::Domain(msg)) => return Err(cfg_err(cfg, "evolve.dt", &msg)),
        r => r?,
    };

    let mut snaps = Table::new(&["step", "time", "x", "re", "im"]);
    for s in &ev.snapshots {
        for (i, z) in s.psi.iter().enumerate() {
            snaps.push(vec![s.step.to_string(), fmt_f64(s.time), fmt_f64(grid.x(i as i64)), fmt_f64(z.re), fmt_f64(z.im)]);
        }
    }
    let snap_path = out.join("snapshots.csv");
    snaps.write(&snap_path)?;
    let mut norms = Table::new(&["step", "norm"]);
    for (i, n) in ev.norm_history.iter().enumerate() {
        norms.push(vec![i.to_string(), fmt_f64(*n)]);
    }
    let norm_path = out.join("norm.csv");
    norms.write(&norm_path)?;

    let drift = ev.max_norm_drift_per_step();
    let mut checks = Vec::new();
    if ec.imaginary_potential == 0.0 {
        checks.push(Check::at_most("norm_drift_per_step", drift, 1e-9));
    }
    let t = steps as f64 * dt;
    match state {
        "plane_wave" if kinetic == KineticScheme::Spectral => {
            let rot = Complex64::from_polar(1.0, -params.kinetic_prefactor() * k * k * t / params.hbar());
            let exact: Vec<Complex64> = psi0.values().iter().map(|z| z * rot).collect();
            let ov = overlap(&exact, ev.final_state.values(), grid.dx());
            checks.push(Check::at_most("plane_wave_phase", ov.arg().abs(), 1e-8));
        }
        "ansatz" => {
            let e = energy.expect("ansatz energy");
            let norm0 = psi0.norm_sqr();
            let (mut unwrapped, mut last, mut worst) = (0.0, 0.0, 0.0_f64);
            for s in &ev.snapshots[1..] {
                let phase = (overlap(psi0.values(), &s.psi, grid.dx()) / norm0).arg();
                let d = phase - last;
                unwrapped += d - 2.0 * PI * (d / (2.0 * PI)).round();
                last = phase;
                let expected = -e * s.time / params.hbar();
                worst = worst.max((unwrapped - expected).abs() / expected.abs());
            }
            checks.push(Check::at_most("ansatz_phase_rel", worst, 0.01));
        }
        _ => {}
    }
    let defect = continuity_defect(&ev, params).ok().map(|d| d.into_iter().fold(0.0, f64::max));
    let body = json!({
        "state": state,
        "kind": ec.kind.name(),
        "boundary": boundary,
        "kinetic": kinetic,
        "dt": dt,
        "dt_limit": limit,
        "steps": steps,
        "time": t,
        "max_norm_drift_per_step": drift,
        "continuity_defect": defect,
    });
    Ok((checks, vec![snap_path, norm_path], body))
}

fn recurse(cfg: &RunConfig, params: &ModelParams, out: &Path) -> Result<Parts> {
    let steps: usize = cfg.get_or("recurse.steps", 50)?;
    let gamma: Option<f64> = match cfg.get("recurse.gamma")? {
        None if !cfg.contains("recurse.p0") => Some(0.5),
        g => g,
    };
    let (p0, p1, energy) = match gamma {
        Some(g) => {
            if !(g > 0.0 && g.is_finite()) {
                return Err(cfg_err(cfg, "recurse.gamma", "gamma must be finite and > 0"));
            }
            let kappa = -g.ln() / (2.0 * params.length());
            (1.0, g, energy_regularized(kappa, &params.with_eta(1.0)?)?.energy)
        }
        None => (cfg.require("recurse.p0")?, cfg.require("recurse.p1")?, cfg.require("recurse.energy")?),
    };
    let orbit = cfg.check("recurse.p0", recursion_orbit(p0, p1, energy, steps, params))?;
    let ratios = orbit.ratios();
    let mut table = Table::new(&["n", "p", "ratio"]);
    for (n, p) in orbit.p_seq.iter().enumerate() {
        let r = if n == 0 { f64::NAN } else { ratios[n - 1] };
        table.push(vec![n.to_string(), fmt_f64(*p), fmt_f64(r)]);
    }
    let path = out.join("orbit.csv");
    table.write(&path)?;
    let mut checks = vec![Check::flag("orbit_started", orbit.p_seq.len() >= 2)];
    if let Some(g) = gamma {
        // the geometric orbit is repelling, so only the leading ratios are held
        let dev = ratios.iter().take(RECURSION_TAIL).map(|r| (r / g - 1.0).abs()).fold(0.0, f64::max);
        checks.push(Check::at_most("leading_ratio_deviation", dev, 1e-10));
    }
    let body = json!({
        "p0": p0,
        "p1": p1,
        "energy": energy,
        "terms": orbit.p_seq.len(),
        "classification": orbit.classification,
        "tail_ratio": orbit.tail_ratio.map(json_f64),
        "sum_estimate": orbit.sum_estimate.map(json_f64),
    });
    Ok((checks, vec![path], body))
}

fn search(cfg: &RunConfig, params: &ModelParams, out: &Path) -> Result<Parts> {
    let kind = cfg.kind("search.kind", PotentialKind::Regularized)?;
    let kappa_plus: f64 = cfg.get_or("search.kappa_plus", 0.6)?;
    let seed = match cfg.get::<f64>("search.kappa_minus")? {
        None => cfg.check("search.kappa_plus", PatchedSpec::matched(kappa_plus, params))?,
        Some(km) => {
            let e = match cfg.get("search.energy")? {
                Some(e) => e,
                None => energy_regularized(kappa_plus, params)?.energy,
            };
            cfg.check("search.kappa_minus", PatchedSpec::new(kappa_plus, km, e, params))?
        }
    };
    let (periods, m) = grid_size(cfg, 6, 16)?;
    let grid = cfg.check("grid.periods", Grid1D::centered(periods, m, params))?;
    let opts = SearchOptions {
        max_iters: cfg.get_or("search.max_iters", 100)?,
        optimize_energy: cfg.get_or("search.optimize_energy", false)?,
        guard: cfg.guard()?,
        ..Default::default()
    };
    let res = cfg.check("search.kind", search_localized(&seed, &grid, &kind, params, &opts))?;
    let start = build_patched(&seed, &grid)?;

    let mut field = Table::new(&["x", "seed", "psi", "residual", "excluded"]);
    for i in 0..grid.len() {
        field.push(vec![
            fmt_f64(grid.x(i as i64)),
            fmt_f64(start.values()[i].re),
            fmt_f64(res.field.values()[i].re),
            fmt_f64(res.report.residual[i]),
            u8::from(res.report.excluded[i]).to_string(),
        ]);
    }
    let field_path = out.join("field.csv");
    field.write(&field_path)?;
    let mut hist = Table::new(&["iteration", "objective"]);
    for (i, h) in res.history.iter().enumerate() {
        hist.push(vec![i.to_string(), fmt_f64(*h)]);
    }
    let hist_path = out.join("history.csv");
    hist.write(&hist_path)?;

    let shift = kind.shift_steps(&grid, params)?;
    let n = grid.len();
    let left = res.window.start.saturating_sub(shift);
    let right = (res.window.end + shift).min(n);
    let exterior = res.report.max_abs_in(0..left).max(res.report.max_abs_in(right..n));
    let checks = vec![
        Check::flag("monotone_objective", res.history.windows(2).all(|w| w[1] <= w[0])),
        Check::at_most("exterior_residual", exterior, 1e-10 * params.energy_scale().max(res.energy.abs())),
    ];
    let body = json!({
        "kind": kind.name(),
        "kappa_plus": seed.kappa_plus,
        "kappa_minus": seed.kappa_minus,
        "seed_energy": seed.energy,
        "energy": res.energy,
        "status": res.status,
        "iterations": res.history.len() - 1,
        "objective_start": res.history[0],
        "objective_end": res.history[res.history.len() - 1],
        "window": [res.window.start, res.window.end],
        "max_residual": res.report.max_abs_outside_guards,
    });
    Ok((checks, vec![field_path, hist_path], body))
}

fn limits(cfg: &RunConfig, params: &ModelParams, out: &Path) -> Result<Parts> {
    let es = params.energy_scale();
    let q = limit_consistency_q_to_1(params)?;
    let mut qt = Table::new(&["q", "lambda", "energy_q", "energy_regularized", "difference"]);
    for r in &q.rows {
        qt.push(vec![fmt_f64(r.q), fmt_f64(r.lambda), fmt_f64(r.energy_q), fmt_f64(r.energy_regularized), fmt_f64(r.difference)]);
    }
    let q_path = out.join("q_limit.csv");
    qt.write(&q_path)?;

    let kappa: f64 = cfg.get_or("limits.kappa", 1.0)?;
    let etas = cfg.list("limits.etas")?.unwrap_or_else(|| vec![1e-2, 1e-3, 1e-4]);
    let eta = cfg.check("limits.etas", limit_small_eta(kappa, &etas, params))?;
    let mut et = Table::new(&["eta", "energy", "linear_energy", "deviation", "threshold"]);
    for r in &eta.rows {
        et.push(vec![fmt_f64(r.eta), fmt_f64(r.energy), fmt_f64(r.linear_energy), fmt_f64(r.deviation), fmt_f64(r.threshold)]);
    }
    let eta_path = out.join("eta_limit.csv");
    et.write(&eta_path)?;

    let mut checks = Vec::new();
    for &(qv, worst) in &q.max_difference {
        let limit = if qv == 1.0 { 0.0 } else { 1e-4 * es * ((qv - 1.0).abs() / 1e-6).max(1.0) };
        checks.push(Check::at_most(&format!("q_limit_{}", fmt_f64(qv)), worst, limit));
    }
    for r in &eta.rows {
        checks.push(Check::at_most(&format!("eta_limit_{}", fmt_f64(r.eta)), r.deviation, r.threshold));
    }
    let body = json!({
        "q_max_difference": q.max_difference,
        "eta_kappa": eta.kappa,
        "eta_fitted_constant": eta.fitted_constant,
        "summary": [
            format!("q->1: max |dE| = {} over {} rows", fmt_f64(q.max_difference.iter().map(|r| r.1).fold(0.0, f64::max)), q.rows.len()),
            format!("eta->0: max |E - E_lin|/eta = {}", fmt_f64(eta.fitted_constant)),
        ],
    });
    Ok((checks, vec![q_path, eta_path], body))
}

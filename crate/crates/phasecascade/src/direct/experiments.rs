//! Experiment scenarios: obvious instability, spectral gap filling,
//! dissipation scaling and finite propagation speed.

use std::sync::Arc;

use rayon::prelude::*;

use super::{shear_layer_exact, Curve, ExperimentReport};
use crate::assemble::{assemble, enstrophy, order_fit, profile_residual, profile_sums, s_of, PhaseChoice};
use crate::baseflow::{backward_characteristics, scenario_base, BaseFlow, BaseScenario};
use crate::cascade::{init_cascade, shift_profile, CascadeConfig, CascadeData, CascadeState};
use crate::error::{Error, Result};
use crate::field::{shell_spectrum, Grid, ProfileField, SpectralField, C64, TWO_PI};
use crate::operators::PhaseFunction;

/// a(x) = cos x₁ + ½ sin x₂, the default transverse amplitude.
pub fn transverse_amplitude(x1: f64, x2: f64) -> f64 {
    x1.cos() + 0.5 * x2.sin()
}

/// e_c·a(x)·cos θ (or sin θ): a single first harmonic.
pub fn single_harmonic_datum<F>(grid: &Grid, component: usize, sine: bool, a: F) -> ProfileField
where
    F: Fn(f64, f64) -> f64 + Sync,
{
    let w = if sine { C64::new(0.0, -0.5) } else { C64::new(0.5, 0.0) };
    ProfileField::from_fn(grid, grid.dim, 1, |k, c, x1, x2| if k == 1 && c == component { w * a(x1, x2) } else { C64::new(0.0, 0.0) })
}

/// Base flow of a scenario with φ₀ = x₁ (or x₂ when `along_x2`).
pub fn base_with_phase(scenario: BaseScenario, grid: &Grid, along_x2: bool) -> Result<Arc<BaseFlow>> {
    let ell = if along_x2 { [0.0, 1.0, 0.0] } else { [1.0, 0.0, 0.0] };
    let phi = PhaseFunction::linear(grid, ell);
    Ok(Arc::new(scenario_base(scenario, grid, 0.0, &phi, 1e-2, 0)?))
}

pub fn run_cascade(cfg: CascadeConfig, base: Arc<BaseFlow>, data: CascadeData) -> Result<CascadeState> {
    let mut st = init_cascade(cfg, base, data)?;
    st.run_induction()?;
    Ok(st)
}

fn snapshot_near(state: &CascadeState, t: f64) -> usize {
    (0..state.snapshots.len())
        .min_by(|&a, &b| (state.snapshots[a].t - t).abs().total_cmp(&(state.snapshots[b].t - t).abs()))
        .unwrap_or(0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InstabilityVariant {
    /// Shear base, ⟨Ũ¹₂ − Ũ²₂⟩(0) = (β sin x₂, 0), normal to the wave fronts.
    Recipe,
    /// Zero base, ⟨Ũ¹₂ − Ũ²₂⟩(0) = (0, β sin x₁), tangent to the wave fronts.
    Tangential,
    /// Both deals equal.
    Identical,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstabilityConfig {
    pub n: usize,
    pub m_theta: usize,
    pub dt: f64,
    pub t_end: f64,
    pub order: usize,
    pub amplitude: f64,
    pub beta: f64,
    /// Strictly decreasing.
    pub eps: Vec<f64>,
    pub snapshot_every: usize,
    pub variant: InstabilityVariant,
    pub slope_max: f64,
    pub limit_tol: f64,
}

impl Default for InstabilityConfig {
    fn default() -> Self {
        InstabilityConfig {
            n: 32,
            m_theta: 8,
            dt: 0.01,
            t_end: 1.0,
            order: 4,
            amplitude: 1.0,
            beta: 0.5,
            eps: (4..=8).map(|k| 2f64.powi(-k)).collect(),
            snapshot_every: 5,
            variant: InstabilityVariant::Recipe,
            slope_max: -0.4,
            limit_tol: 0.05,
        }
    }
}

/// (φ_c − φ_g^ref)/ε as samples: Σ_{k≥l} s^{k−l}φ_k plus any geometric
/// mismatch with the reference deal.
fn phase_offset(state: &CascadeState, reference: &CascadeState, j: usize, eps: f64) -> Vec<f64> {
    let l = state.config.l;
    let s = s_of(eps, l);
    let snap = &state.snapshots[j];
    let rsnap = &reference.snapshots[j];
    let np = state.grid().points();
    let mut out = vec![0.0; np];
    for k in 1..=state.config.order {
        let w = s.powi(k as i32 - l as i32);
        let mut psi = snap.order(k).psi.clone();
        if k < l {
            psi = psi.sub(&rsnap.order(k).psi);
        }
        for (o, v) in out.iter_mut().zip(psi.to_physical().remove(0)) {
            *o += w * v;
        }
    }
    out
}

fn shifted(u: &ProfileField, delta: &[f64]) -> ProfileField {
    shift_profile(&u.to_physical(), delta).to_spectral(&u.grid)
}

/// Two cascades per the instability recipe, compared in the common
/// geometric-phase variable: R(ε) = ‖Δu(t*)‖ / (‖Δu(0)‖ + ∫₀^{t*} ‖Δf‖).
pub fn instability_experiment(cfg: &InstabilityConfig) -> Result<ExperimentReport> {
    if cfg.eps.len() < 4 || cfg.eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config("instability sweep needs at least four strictly decreasing epsilons".into()));
    }
    let grid = Grid::new(2, cfg.n, cfg.m_theta, cfg.dt, cfg.t_end)?;
    let (scenario, diff) = match cfg.variant {
        InstabilityVariant::Recipe => (BaseScenario::Shear, SpectralField::from_fn(&grid, 2, |_, x2| vec![cfg.beta * x2.sin(), 0.0])),
        InstabilityVariant::Tangential => (BaseScenario::Zero, SpectralField::from_fn(&grid, 2, |x1, _| vec![0.0, cfg.beta * x1.sin()])),
        InstabilityVariant::Identical => (BaseScenario::Shear, SpectralField::zeros(&grid, 2)),
    };
    if diff.l2_norm() == 0.0 {
        return Err(Error::DegenerateChoice("the two deals have identical data".into()));
    }
    let base = base_with_phase(scenario, &grid, false)?;
    let mut ccfg = CascadeConfig::new(2, cfg.order, 0.0, grid.clone())?;
    ccfg.snapshot_every = cfg.snapshot_every;
    ccfg.scenario = scenario.name().into();
    let mut d1 = CascadeData::zeros(&grid, cfg.order);
    d1.ustar[0] = single_harmonic_datum(&grid, 1, false, |x1, x2| cfg.amplitude * transverse_amplitude(x1, x2));
    let mut d2 = d1.clone();
    d2.ubar[1] = diff;
    let (a, b) = rayon::join(|| run_cascade(ccfg.clone(), base.clone(), d1), || run_cascade(ccfg.clone(), base.clone(), d2));
    let (a, b) = (a?, b?);
    let times: Vec<f64> = a.snapshots.iter().map(|s| s.t).collect();
    let nt = times.len();

    // du[i][j], df[i][j]: profile-level differences at ε_i, snapshot j
    let jobs: Vec<(usize, usize)> = (0..cfg.eps.len()).flat_map(|i| (0..nt).map(move |j| (i, j))).collect();
    let vals: Vec<(f64, f64)> = jobs
        .par_iter()
        .map(|&(i, j)| -> Result<(f64, f64)> {
            let e = cfg.eps[i];
            let da = phase_offset(&a, &a, j, e);
            let db = phase_offset(&b, &a, j, e);
            let ua = shifted(&profile_sums(&a, j, e, PhaseChoice::Complete)?.0, &da);
            let ub = shifted(&profile_sums(&b, j, e, PhaseChoice::Complete)?.0, &db);
            let fa = shifted(&profile_residual(&a, j, e)?.f, &da);
            let fb = shifted(&profile_residual(&b, j, e)?.f, &db);
            Ok((ua.sub(&ub).l2_norm(), fa.sub(&fb).l2_norm() / e))
        })
        .collect::<Result<_>>()?;
    let du = |i: usize, j: usize| vals[i * nt + j].0;
    let df = |i: usize, j: usize| vals[i * nt + j].1;
    let ratio = |i: usize, j: usize| {
        let mut integral = 0.0;
        for q in 1..=j {
            integral += 0.5 * (times[q] - times[q - 1]) * (df(i, q) + df(i, q - 1));
        }
        du(i, j) / (du(i, 0) + integral)
    };
    let last = cfg.eps.len() - 1;
    let jstar = (1..nt).max_by(|&p, &q| ratio(last, p).total_cmp(&ratio(last, q))).unwrap_or(0);
    let tstar = times[jstar];
    let r: Vec<f64> = (0..cfg.eps.len()).map(|i| ratio(i, jstar)).collect();

    let mut report = ExperimentReport::new(&format!("instability-{:?}", cfg.variant).to_lowercase(), cfg.eps.clone());
    report.notes.push(format!("t* = {tstar} (maximizer of R over stored times at the smallest epsilon)"));
    report.curves.push(Curve::new("ratio_vs_eps", "epsilon", "R", cfg.eps.clone(), r.clone()));
    report.curves.push(Curve::new("ratio_vs_t", "t", "R", times.clone(), (0..nt).map(|j| ratio(last, j)).collect()));
    report.curves.push(Curve::new("du_vs_eps", "epsilon", "|du(t*)|", cfg.eps.clone(), (0..cfg.eps.len()).map(|i| du(i, jstar)).collect()));
    report.curves.push(Curve::new("du0_vs_eps", "epsilon", "|du(0)|", cfg.eps.clone(), (0..cfg.eps.len()).map(|i| du(i, 0)).collect()));
    let fit = order_fit(&cfg.eps, &r)?;
    let growth = r.windows(2).map(|w| w[1] / w[0]).fold(f64::INFINITY, f64::min);
    match cfg.variant {
        InstabilityVariant::Recipe => {
            report.push_verdict("monotone", "ratio_vs_eps", growth, "min R(eps/2)/R(eps) > 1", Some(growth > 1.0));
            report.push_verdict("slope", "ratio_vs_eps", fit.slope, &format!("<= {}", cfg.slope_max), Some(fit.slope <= cfg.slope_max));
            let e = cfg.eps[last];
            let scaled = du(last, jstar) / s_of(e, 2);
            let sa = &a.snapshots[jstar];
            let sb = &b.snapshots[jstar];
            let u1a = shifted(&sa.order(1).profile(), &sa.order(2).psi.to_physical().remove(0));
            let u1b = shifted(&sb.order(1).profile(), &sb.order(2).psi.to_physical().remove(0));
            let target = u1a.sub(&u1b).l2_norm();
            let rel = (scaled / target - 1.0).abs();
            report.curves.push(Curve::new("limit", "quantity", "value", vec![0.0, 1.0], vec![scaled, target]));
            report.push_verdict("limit_rel", "limit", rel, &format!("<= {}", cfg.limit_tol), Some(rel <= cfg.limit_tol));
        }
        _ => {
            report.push_verdict("bounded", "ratio_vs_eps", fit.slope, ">= -0.2", Some(fit.slope >= -0.2));
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumConfig {
    pub n: usize,
    pub m_theta: usize,
    pub dt: f64,
    pub t_end: f64,
    pub l: usize,
    pub order: usize,
    pub amplitude: f64,
    /// ε of the gap and band-fraction checks.
    pub eps: f64,
    /// Strictly decreasing ε values of the per-band slope fits.
    pub sweep: Vec<f64>,
    pub snapshot_every: usize,
    /// Shells within ±gap_width of 1 and 1/ε count as the gap support.
    pub gap_width: usize,
    pub gap_fraction: f64,
    pub band_fraction: f64,
    pub slope_tol: f64,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        SpectrumConfig {
            n: 32,
            m_theta: 8,
            dt: 0.01,
            t_end: 1.0,
            l: 3,
            order: 4,
            amplitude: 1.0,
            eps: 1.0 / 64.0,
            sweep: vec![1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0],
            snapshot_every: 10,
            gap_width: 2,
            gap_fraction: 0.99,
            band_fraction: 1e-3,
            slope_tol: 0.3,
        }
    }
}

/// Shell spectrum of the assembled field minus the base flow.
fn oscillatory_spectrum(state: &CascadeState, j: usize, eps: f64) -> Result<Vec<f64>> {
    let a = assemble(state, j, eps, PhaseChoice::Complete)?;
    let na = a.u.grid.n;
    let mut u0 = state.base.snaps[state.snapshots[j].base_index].u.resample(na);
    u0.grid = a.u.grid.clone();
    Ok(shell_spectrum(&a.u.sub(&u0)))
}

/// Shells [⌈0.75c⌉, ⌊1.375c⌋] around c = ε^{k/l−1}.
pub fn intermediate_band(eps: f64, k: usize, l: usize) -> (usize, usize) {
    let c = eps.powf(k as f64 / l as f64 - 1.0);
    ((0.75 * c).ceil() as usize, (1.375 * c).floor() as usize)
}

fn band_sum(e: &[f64], lo: usize, hi: usize) -> f64 {
    e.iter().enumerate().filter(|(k, _)| *k >= lo && *k <= hi).map(|(_, v)| v).sum()
}

/// Spectral gap at t = 0 and intermediate bands at t = T/2.
pub fn spectral_cascade_experiment(cfg: &SpectrumConfig) -> Result<ExperimentReport> {
    if cfg.l < 2 {
        return Err(Error::Config("the spectral experiment needs l >= 2".into()));
    }
    let grid = Grid::new(2, cfg.n, cfg.m_theta, cfg.dt, cfg.t_end)?;
    let base = base_with_phase(BaseScenario::Zero, &grid, false)?;
    let mut ccfg = CascadeConfig::new(cfg.l, cfg.order, 0.0, grid.clone())?;
    ccfg.snapshot_every = cfg.snapshot_every;
    ccfg.scenario = "zero".into();
    let mut data = CascadeData::zeros(&grid, cfg.order);
    data.ustar[0] = single_harmonic_datum(&grid, 1, true, |x1, x2| cfg.amplitude * transverse_amplitude(x1, x2));
    let state = run_cascade(ccfg, base, data)?;
    let jh = snapshot_near(&state, 0.5 * cfg.t_end);
    let th = state.snapshots[jh].t;

    let mut report = ExperimentReport::new(&format!("spectrum-l{}", cfg.l), cfg.sweep.clone());
    let e0 = oscillatory_spectrum(&state, 0, cfg.eps)?;
    let shells: Vec<f64> = (0..e0.len()).map(|k| k as f64).collect();
    let total0: f64 = e0.iter().sum();
    let carrier = (1.0 / cfg.eps).round() as usize;
    let w = cfg.gap_width;
    let gap: f64 = e0
        .iter()
        .enumerate()
        .filter(|(k, _)| k.abs_diff(1) <= w || k.abs_diff(carrier) <= w)
        .map(|(_, v)| v)
        .sum();
    let frac0 = gap / total0.max(1e-300);
    report.curves.push(Curve::new("spectrum_t0", "shell", "energy", shells.clone(), e0));
    report.push_verdict("gap_fraction_t0", "spectrum_t0", frac0, &format!(">= {}", cfg.gap_fraction), Some(frac0 >= cfg.gap_fraction));

    let eh = oscillatory_spectrum(&state, jh, cfg.eps)?;
    let total_h: f64 = eh.iter().sum();
    report.curves.push(Curve::new("spectrum_half", "shell", "energy", (0..eh.len()).map(|k| k as f64).collect(), eh.clone()));
    report.notes.push(format!("t = {th}; intermediate bands k = 1..{}", cfg.l - 1));

    let sweep_spectra: Vec<Vec<f64>> = cfg.sweep.par_iter().map(|&e| oscillatory_spectrum(&state, jh, e)).collect::<Result<_>>()?;
    for k in 1..cfg.l {
        let (lo, hi) = intermediate_band(cfg.eps, k, cfg.l);
        let frac = band_sum(&eh, lo, hi) / total_h.max(1e-300);
        report.push_verdict(
            &format!("band{k}_fraction"),
            "spectrum_half",
            frac,
            &format!("shells {lo}..{hi} carry >= {} of the energy", cfg.band_fraction),
            Some(frac >= cfg.band_fraction),
        );
        let energies: Vec<f64> = cfg
            .sweep
            .iter()
            .zip(&sweep_spectra)
            .map(|(&e, sp)| {
                let (lo, hi) = intermediate_band(e, k, cfg.l);
                band_sum(sp, lo, hi)
            })
            .collect();
        let name = format!("band{k}_vs_eps");
        report.curves.push(Curve::new(&name, "epsilon", "band energy", cfg.sweep.clone(), energies.clone()));
        let expect = 2.0 * k as f64 / cfg.l as f64;
        let slope = order_fit(&cfg.sweep, &energies).map(|f| f.slope).unwrap_or(f64::NAN);
        report.push_verdict(
            &format!("band{k}_slope"),
            &name,
            slope,
            &format!("{expect:.4} +- {}", cfg.slope_tol),
            Some((slope - expect).abs() <= cfg.slope_tol),
        );
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DissipationConfig {
    pub l: usize,
    pub nu: f64,
    /// Strictly decreasing; reciprocals must be integers for the shear layer.
    pub eps: Vec<f64>,
    /// Grid of the synthetic and shear-layer fields.
    pub n: usize,
    /// Cascade run for the assembled 2D measurement.
    pub cascade_n: usize,
    pub cascade_order: usize,
    pub t: f64,
    pub dt: f64,
}

impl Default for DissipationConfig {
    fn default() -> Self {
        DissipationConfig {
            l: 2,
            nu: 0.01,
            eps: vec![1.0 / 4.0, 1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0],
            n: 128,
            cascade_n: 32,
            cascade_order: 3,
            t: 0.25,
            dt: 0.01,
        }
    }
}

/// e = νε²‖Ω‖² across ε for a synthetic single mode, an assembled 2D cascade
/// and the 2.5D shear layer.
pub fn dissipation_scaling(cfg: &DissipationConfig) -> Result<ExperimentReport> {
    if cfg.eps.len() < 4 || cfg.eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config("dissipation sweep needs at least four strictly decreasing epsilons".into()));
    }
    let l = cfg.l as f64;
    let kappa = |e: f64| cfg.nu * e * e;
    let mut report = ExperimentReport::new(&format!("dissipation-l{}", cfg.l), cfg.eps.clone());

    let grid2 = Grid::new(2, cfg.n, 4, cfg.dt, cfg.t)?;
    let synth_enstrophy: Vec<f64> = cfg
        .eps
        .iter()
        .map(|&e| {
            let k = (1.0 / e).round();
            if k >= grid2.cutoff() as f64 {
                return Err(Error::EpsilonTooSmallForGrid { eps: e, eps_min: 1.0 / (grid2.cutoff() as f64 - 1.0) });
            }
            let s = s_of(e, cfg.l);
            let u = SpectralField::from_fn(&grid2, 2, |x1, _| vec![0.0, s * (k * x1).cos()]);
            Ok(enstrophy(&u))
        })
        .collect::<Result<_>>()?;
    let synth: Vec<f64> = cfg.eps.iter().zip(&synth_enstrophy).map(|(&e, en)| kappa(e) * en).collect();
    report.curves.push(Curve::new("synthetic", "epsilon", "e", cfg.eps.clone(), synth.clone()));
    let expect2 = 2.0 / l;
    if cfg.nu > 0.0 {
        let f = order_fit(&cfg.eps, &synth)?;
        report.push_verdict("synthetic_slope", "synthetic", f.slope, &format!("{expect2:.4} +- 1e-6"), Some((f.slope - expect2).abs() <= 1e-6));

        let grid = Grid::new(2, cfg.cascade_n, 8, cfg.dt, cfg.t)?;
        let base = base_with_phase(BaseScenario::Shear, &grid, false)?;
        let mut ccfg = CascadeConfig::new(cfg.l, cfg.cascade_order, 0.0, grid.clone())?;
        ccfg.snapshot_every = grid.steps().max(1);
        let mut data = CascadeData::zeros(&grid, cfg.cascade_order);
        data.ustar[0] = single_harmonic_datum(&grid, 1, false, transverse_amplitude);
        let st = run_cascade(ccfg, base, data)?;
        let j = st.snapshots.len() - 1;
        let assembled: Vec<f64> = cfg
            .eps
            .par_iter()
            .map(|&e| Ok(kappa(e) * enstrophy(&assemble(&st, j, e, PhaseChoice::Complete)?.u)))
            .collect::<Result<_>>()?;
        report.curves.push(Curve::new("assembled_2d", "epsilon", "e", cfg.eps.clone(), assembled.clone()));
        let f = order_fit(&cfg.eps, &assembled)?;
        report.push_verdict("assembled_2d_slope", "assembled_2d", f.slope, &format!("reported against 2/l = {expect2:.4}"), None);

        let grid3 = Grid::new(3, cfg.n, 4, cfg.dt, cfg.t)?;
        let layer: Vec<f64> = cfg
            .eps
            .iter()
            .map(|&e| {
                let s = s_of(e, cfg.l);
                let (u, _) = shear_layer_exact(e, |x2, th| s * (0.3 * th.sin() + 0.2 * x2.cos()), |y, _, th| s * 0.5 * y.cos() * th.sin(), 0.0, &grid3)?;
                Ok(kappa(e) * enstrophy(&u))
            })
            .collect::<Result<_>>()?;
        report.curves.push(Curve::new("shear_layer_2p5d", "epsilon", "e", cfg.eps.clone(), layer.clone()));
        let f = order_fit(&cfg.eps, &layer)?;
        report.push_verdict("shear_layer_slope", "shear_layer_2p5d", f.slope, &format!("reported against -1+3/l = {:.4}", -1.0 + 3.0 / l), None);
    }
    let inviscid: Vec<f64> = cfg.eps.iter().zip(&synth_enstrophy).map(|(&e, en)| 0.0 * e * e * en).collect();
    let worst = inviscid.iter().cloned().fold(0.0, f64::max);
    report.curves.push(Curve::new("inviscid", "epsilon", "e at nu = 0", cfg.eps.clone(), inviscid));
    report.push_verdict("inviscid_zero", "inviscid", worst, "== 0 when nu = 0", Some(worst == 0.0));
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SupportConfig {
    pub n: usize,
    pub m_theta: usize,
    pub dt: f64,
    pub t_end: f64,
    pub radius: f64,
    pub amplitude: f64,
    pub snapshot_every: usize,
    pub tol: f64,
}

impl Default for SupportConfig {
    fn default() -> Self {
        SupportConfig { n: 128, m_theta: 8, dt: 0.01, t_end: 1.0, radius: 2.0, amplitude: 1.0, snapshot_every: 20, tol: 1e-8 }
    }
}

/// C^∞ bump of the given radius centered at (π, π), peak value `amp`.
pub fn bump(x1: f64, x2: f64, radius: f64, amp: f64) -> f64 {
    let r2 = ((x1 - std::f64::consts::PI).powi(2) + (x2 - std::f64::consts::PI).powi(2)) / (radius * radius);
    if r2 >= 1.0 {
        0.0
    } else {
        amp * (1.0 - 1.0 / (1.0 - r2)).exp()
    }
}

fn periodic_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = |u: f64, v: f64| {
        let x = (u - v).rem_euclid(TWO_PI);
        x.min(TWO_PI - x)
    };
    d(a[0], b[0]).hypot(d(a[1], b[1]))
}

/// Fraction of ‖U*₁(t)‖² lying outside Γ(t, supp U*₁(0)) dilated by one cell.
pub fn mass_outside(state: &CascadeState, j: usize, radius: f64) -> f64 {
    let grid = state.grid();
    let n = grid.n;
    let t = state.snapshots[j].t;
    let pts: Vec<[f64; 2]> = (0..grid.points()).map(|i| grid.point(i)).collect();
    let feet = backward_characteristics(&state.base, t, &pts);
    let c = [std::f64::consts::PI; 2];
    let inside: Vec<bool> = feet.iter().map(|&y| periodic_dist(y, c) < radius).collect();
    let u = state.snapshots[j].order(1).ustar.to_physical();
    let mut total = 0.0;
    let mut out = 0.0;
    for idx in 0..grid.points() {
        let (i1, i2) = (idx / n, idx % n);
        let covered = (0..3).any(|a| (0..3).any(|b| inside[((i1 + n + a - 1) % n) * n + (i2 + n + b - 1) % n]));
        let m: f64 = (1..=u.kmax()).map(|k| (0..u.components).map(|cc| u.modes[k][cc][idx].norm_sqr()).sum::<f64>()).sum();
        total += m;
        if !covered {
            out += m;
        }
    }
    out / total.max(1e-300)
}

/// Finite propagation speed of the first oscillating profile over the shear base.
pub fn support_experiment(cfg: &SupportConfig) -> Result<ExperimentReport> {
    let grid = Grid::new(2, cfg.n, cfg.m_theta, cfg.dt, cfg.t_end)?;
    let base = base_with_phase(BaseScenario::Shear, &grid, false)?;
    let mut ccfg = CascadeConfig::new(1, 2, 0.0, grid.clone())?;
    ccfg.snapshot_every = cfg.snapshot_every;
    let mut data = CascadeData::zeros(&grid, 2);
    data.ustar[0] = single_harmonic_datum(&grid, 1, false, |x1, x2| bump(x1, x2, cfg.radius, cfg.amplitude));
    let state = run_cascade(ccfg, base, data)?;
    let times: Vec<f64> = state.snapshots.iter().map(|s| s.t).collect();
    let masses: Vec<f64> = (0..times.len()).into_par_iter().map(|j| mass_outside(&state, j, cfg.radius)).collect();
    let worst = masses.iter().cloned().fold(0.0, f64::max);
    let mut report = ExperimentReport::new("support", vec![]);
    report.curves.push(Curve::new("outside_mass_vs_t", "t", "relative squared mass outside", times, masses));
    report.push_verdict("outside_mass", "outside_mass_vs_t", worst, &format!("<= {:e}", cfg.tol), Some(worst <= cfg.tol));
    Ok(report)
}

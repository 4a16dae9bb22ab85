//! Reference pseudo-spectral solver for incompressible Euler/Navier–Stokes
//! on the periodic box (2D or 2.5D), the exact shear-layer family, and the
//! experiment scenarios built on top of the cascade.

use crate::assemble::{enstrophy, AssembledSnapshot};
use crate::baseflow::{advection, check_cfl, euler_rhs, heat_factor};
use crate::error::{Error, Result};
use crate::field::{Grid, SpectralField};
use crate::operators::pressure_from_flux;

pub mod experiments;

pub use experiments::{
    dissipation_scaling, instability_experiment, spectral_cascade_experiment, support_experiment, DissipationConfig,
    InstabilityConfig, InstabilityVariant, SpectrumConfig, SupportConfig,
};

#[derive(Clone, Debug, PartialEq)]
pub struct ConservationEntry {
    pub t: f64,
    pub energy: f64,
    pub enstrophy: f64,
}

#[derive(Clone, Debug)]
pub struct DirectRun {
    pub grid: Grid,
    pub nu_eff: f64,
    pub datum: SpectralField,
    /// Stored every `every` steps plus the final step.
    pub snapshots: Vec<AssembledSnapshot>,
    /// One entry per step, starting at t = 0.
    pub ledger: Vec<ConservationEntry>,
    /// Largest ‖Div u‖ seen over all steps.
    pub max_divergence: f64,
}

impl DirectRun {
    /// Relative energy change over the run.
    pub fn energy_drift(&self) -> f64 {
        let e0 = self.ledger[0].energy;
        self.ledger.iter().map(|e| (e.energy - e0).abs()).fold(0.0, f64::max) / e0.max(1e-300)
    }

    pub fn final_velocity(&self) -> &SpectralField {
        &self.snapshots.last().expect("initial snapshot").u
    }
}

pub fn energy(u: &SpectralField) -> f64 {
    0.5 * u.l2_norm().powi(2)
}

fn direct_snapshot(t: f64, u: &SpectralField) -> AssembledSnapshot {
    let mut s = AssembledSnapshot::plain(0.0, t, u.clone(), pressure_from_flux(&advection(u)));
    s.provenance = "direct".into();
    s
}

/// Integrating-factor RK4 for ∂_tu + P(u·∇)u = ν_eff Δu on `grid` up to grid.t_end.
pub fn ns_solve(datum: &SpectralField, nu_eff: f64, grid: &Grid, every: usize) -> Result<DirectRun> {
    if datum.grid.n != grid.n || datum.components() != grid.dim {
        return Err(Error::GridMismatch);
    }
    if nu_eff < 0.0 || every == 0 {
        return Err(Error::Config("need nu_eff >= 0 and a positive snapshot interval".into()));
    }
    let div = datum.divergence().l2_norm();
    if div > 1e-10 * datum.l2_norm().max(1e-300) && div > 1e-14 {
        return Err(Error::Config(format!("datum is not divergence-free ({div:.2e})")));
    }
    let h = grid.dt;
    let steps = grid.steps();
    let mut u = datum.clone();
    u.grid = grid.clone();
    let mut snapshots = vec![direct_snapshot(0.0, &u)];
    let mut ledger = vec![ConservationEntry { t: 0.0, energy: energy(&u), enstrophy: enstrophy(&u) }];
    let mut max_divergence = div;
    let e_half = |f: &SpectralField| heat_factor(f, nu_eff, 0.5 * h);
    let e_full = |f: &SpectralField| heat_factor(f, nu_eff, h);
    for step in 1..=steps {
        check_cfl(&u, h)?;
        let k1 = euler_rhs(&u);
        let k2 = euler_rhs(&e_half(&u.axpy(0.5 * h, &k1)));
        let k3 = euler_rhs(&e_half(&u).axpy(0.5 * h, &k2));
        let k4 = euler_rhs(&e_full(&u).axpy(h, &e_half(&k3)));
        u = e_full(&u).axpy(h / 6.0, &e_full(&k1)).axpy(h / 3.0, &e_half(&k2.add(&k3))).axpy(h / 6.0, &k4);
        let t = step as f64 * h;
        max_divergence = max_divergence.max(u.divergence().l2_norm());
        ledger.push(ConservationEntry { t, energy: energy(&u), enstrophy: enstrophy(&u) });
        if step % every == 0 || step == steps {
            snapshots.push(direct_snapshot(t, &u));
        }
    }
    Ok(DirectRun { grid: grid.clone(), nu_eff, datum: datum.clone(), snapshots, ledger, max_divergence })
}

/// u = (g(x₂, x₂/ε), 0, h(x₁ − g(x₂, x₂/ε)t, x₂, x₂/ε)), p = 0, an exact Euler
/// solution for any g, h that are 2π-periodic in every argument.
pub fn shear_layer_exact<G, H>(eps: f64, g: G, h: H, t: f64, grid: &Grid) -> Result<(SpectralField, SpectralField)>
where
    G: Fn(f64, f64) -> f64 + Sync,
    H: Fn(f64, f64, f64) -> f64 + Sync,
{
    if grid.dim != 3 {
        return Err(Error::Config("the shear-layer family has three velocity components".into()));
    }
    let inv = 1.0 / eps;
    if !(eps > 0.0) || (inv - inv.round()).abs() > 1e-9 {
        return Err(Error::NonPeriodicModulation { k: 1, eps });
    }
    if inv.round() as usize >= grid.cutoff() {
        return Err(Error::EpsilonTooSmallForGrid { eps, eps_min: 1.0 / (grid.cutoff() as f64 - 1.0) });
    }
    let u = SpectralField::from_fn(grid, 3, |x1, x2| {
        let th = x2 * inv;
        let gv = g(x2, th);
        vec![gv, 0.0, h(x1 - gv * t, x2, th)]
    });
    Ok((u, SpectralField::zeros(grid, 1)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorPoint {
    pub t: f64,
    pub abs: f64,
    pub rel: f64,
}

/// ‖u_run(t) − u_traj(t)‖ per stored time; the trajectory may live on a
/// finer grid and is truncated to the run grid.
pub fn compare(run: &DirectRun, traj: &[AssembledSnapshot]) -> Result<Vec<ErrorPoint>> {
    if run.snapshots.len() != traj.len() {
        return Err(Error::TimeGridMismatch);
    }
    run.snapshots
        .iter()
        .zip(traj)
        .map(|(a, b)| {
            if (a.t - b.t).abs() > 1e-9 {
                return Err(Error::TimeGridMismatch);
            }
            if b.u.grid.n < a.u.grid.n || b.u.components() != a.u.components() {
                return Err(Error::GridMismatch);
            }
            let bu = if b.u.grid.n == a.u.grid.n { b.u.clone() } else { b.u.resample(a.u.grid.n) };
            let mut bu = bu;
            bu.grid = a.u.grid.clone();
            let abs = a.u.sub(&bu).l2_norm();
            let rel = abs / bu.l2_norm().max(1e-300);
            Ok(ErrorPoint { t: a.t, abs, rel })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub name: String,
    pub x_label: String,
    pub y_label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Curve {
    pub fn new(name: &str, x_label: &str, y_label: &str, x: Vec<f64>, y: Vec<f64>) -> Self {
        Curve { name: name.into(), x_label: x_label.into(), y_label: y_label.into(), x, y }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Verdict {
    pub name: String,
    /// Name of the curve the value was read from.
    pub curve: String,
    pub value: f64,
    pub requirement: String,
    /// None for quantities that are reported but not gated.
    pub passed: Option<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub scenario: String,
    pub eps: Vec<f64>,
    pub curves: Vec<Curve>,
    pub verdicts: Vec<Verdict>,
    pub notes: Vec<String>,
}

impl ExperimentReport {
    pub fn new(scenario: &str, eps: Vec<f64>) -> Self {
        ExperimentReport { scenario: scenario.into(), eps, curves: Vec::new(), verdicts: Vec::new(), notes: Vec::new() }
    }

    pub fn curve(&self, name: &str) -> Option<&Curve> {
        self.curves.iter().find(|c| c.name == name)
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    pub(crate) fn push_verdict(&mut self, name: &str, curve: &str, value: f64, requirement: &str, passed: Option<bool>) {
        debug_assert!(self.curve(curve).is_some(), "verdict {name} refers to missing curve {curve}");
        self.verdicts.push(Verdict { name: name.into(), curve: curve.into(), value, requirement: requirement.into(), passed });
    }

    /// All gated verdicts passed.
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed != Some(false))
    }

    pub fn manifest(&self) -> String {
        let eps: Vec<String> = self.eps.iter().map(|e| format!("{e:e}")).collect();
        let mut s = format!("scenario = {}\neps = [{}]\n", self.scenario, eps.join(", "));
        for v in &self.verdicts {
            let status = match v.passed {
                Some(true) => "pass",
                Some(false) => "fail",
                None => "reported",
            };
            s.push_str(&format!("verdict.{} = {:.6e} ({}; {}; curve {})\n", v.name, v.value, v.requirement, status, v.curve));
        }
        for n in &self.notes {
            s.push_str(&format!("note = {n}\n"));
        }
        s
    }
}

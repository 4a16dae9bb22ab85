//! Background objects: the base solution u₀, its pressure, the eiconal
//! phase φ₀ = ℓ·x + ψ₀ and the characteristic flow map.
//!
//! Snapshots are stored every dt/2 so that the half-step stages of an RK4
//! integrator running at step dt find the base flow without interpolation.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{Grid, PointEvaluator, SpectralField};
use crate::operators::{leray_project, pointwise_projector, pressure_from_flux, PhaseFunction, PointwiseProjector};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaseScenario {
    Zero,
    /// u₀ = (sin x₂, 0): a steady Euler shear.
    Shear,
    TaylorGreen,
    Random2d,
}

impl FromStr for BaseScenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(BaseScenario::Zero),
            "shear" => Ok(BaseScenario::Shear),
            "taylor-green" => Ok(BaseScenario::TaylorGreen),
            "random-2d" => Ok(BaseScenario::Random2d),
            other => Err(Error::Config(format!("unknown base scenario '{other}'"))),
        }
    }
}

impl BaseScenario {
    pub fn name(&self) -> &'static str {
        match self {
            BaseScenario::Zero => "zero",
            BaseScenario::Shear => "shear",
            BaseScenario::TaylorGreen => "taylor-green",
            BaseScenario::Random2d => "random-2d",
        }
    }
}

#[derive(Clone, Debug)]
pub struct BaseSnap {
    pub t: f64,
    pub u: SpectralField,
    /// ∂_t u₀
    pub du: SpectralField,
    pub p: SpectralField,
    pub psi: SpectralField,
    /// ∂_t ψ₀
    pub dpsi: SpectralField,
}

#[derive(Clone, Debug)]
pub struct BaseFlow {
    pub grid: Grid,
    pub scenario: String,
    pub nu_base: f64,
    pub linear: [f64; 3],
    /// Snapshots at times i·dt/2.
    pub snaps: Vec<BaseSnap>,
    /// Nondegeneracy constant: |X₀| ≥ c on every stored snapshot.
    pub c: f64,
    /// Time at which |X₀| first dropped below c, if it did.
    pub truncated_at: Option<f64>,
}

impl BaseFlow {
    pub fn snap_dt(&self) -> f64 {
        0.5 * self.grid.dt
    }

    pub fn t_achieved(&self) -> f64 {
        self.snaps.last().map(|s| s.t).unwrap_or(0.0)
    }

    /// Full steps of size dt covered by the stored snapshots.
    pub fn full_steps(&self) -> usize {
        (self.snaps.len() - 1) / 2
    }

    pub fn phase_at(&self, i: usize) -> PhaseFunction {
        PhaseFunction::new(self.linear, self.snaps[i].psi.clone())
    }

    pub fn x0(&self, i: usize) -> SpectralField {
        self.phase_at(i).gradient()
    }

    pub fn projector(&self, i: usize) -> Result<PointwiseProjector> {
        pointwise_projector(&self.x0(i), 0.0)
    }

    /// Snapshot index for time t, if t falls on the dt/2 lattice.
    pub fn index_of_time(&self, t: f64) -> Option<usize> {
        let r = t / self.snap_dt();
        let i = r.round();
        if (r - i).abs() < 1e-6 && i >= 0.0 && (i as usize) < self.snaps.len() {
            Some(i as usize)
        } else {
            None
        }
    }

    pub fn check_nondegenerate(&self) -> Result<()> {
        match self.truncated_at {
            Some(t) => Err(Error::NondegeneracyLost(t)),
            None => Ok(()),
        }
    }

    pub fn min_gradient(&self, i: usize) -> f64 {
        min_norm(&self.x0(i).to_physical())
    }
}

fn min_norm(x: &[Vec<f64>]) -> f64 {
    (0..x[0].len()).map(|i| x.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt()).fold(f64::INFINITY, f64::min)
}

pub(crate) fn max_speed(u: &[Vec<f64>]) -> f64 {
    (0..u[0].len()).map(|i| u.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt()).fold(0.0, f64::max)
}

/// Advection flux (u·∇)u, dealiased.
pub fn advection(u: &SpectralField) -> SpectralField {
    let grid = &u.grid;
    let up = u.to_physical();
    let d1 = u.derivative(0).to_physical();
    let d2 = u.derivative(1).to_physical();
    let out: Vec<Vec<f64>> =
        (0..u.components()).map(|c| (0..grid.points()).map(|i| up[0][i] * d1[c][i] + up[1][i] * d2[c][i]).collect()).collect();
    SpectralField::to_spectral(grid, &out).expect("grid-shaped").dealiased()
}

/// ∂_t u = −P((u·∇)u) without the viscous part.
pub(crate) fn euler_rhs(u: &SpectralField) -> SpectralField {
    leray_project(&advection(u)).scale(-1.0)
}

/// ∂_t ψ = −u·(ℓ + ∇ψ), evaluated pointwise.
fn eiconal_rhs(u: &SpectralField, linear: &[f64; 3], psi: &SpectralField) -> SpectralField {
    let grid = &u.grid;
    let up = u.to_physical();
    let g = psi.gradient().to_physical();
    let v: Vec<f64> = (0..grid.points())
        .map(|i| -(0..2).map(|c| up[c][i] * (linear[c] + g[c][i])).sum::<f64>())
        .collect();
    SpectralField::to_spectral(grid, &[v]).expect("grid-shaped")
}

pub(crate) fn heat_factor(f: &SpectralField, nu: f64, tau: f64) -> SpectralField {
    if nu == 0.0 {
        return f.clone();
    }
    let n = f.grid.n;
    let mut out = f.clone();
    for v in out.coeffs.iter_mut() {
        for (idx, z) in v.iter_mut().enumerate() {
            let (a, b) = crate::field::xi(n, idx);
            *z *= (-nu * (a * a + b * b) * tau).exp();
        }
    }
    out
}

pub(crate) fn check_cfl(u: &SpectralField, h: f64) -> Result<()> {
    let c = h * max_speed(&u.to_physical()) * u.grid.cutoff() as f64;
    if c > 2.5 {
        return Err(Error::Cfl(c));
    }
    Ok(())
}

/// One integrating-factor RK4 step of size h for (u, ψ).
fn joint_step(u: &SpectralField, psi: &SpectralField, linear: &[f64; 3], nu: f64, h: f64) -> (SpectralField, SpectralField) {
    let e_half = |f: &SpectralField| heat_factor(f, nu, 0.5 * h);
    let e_full = |f: &SpectralField| heat_factor(f, nu, h);
    let k1 = euler_rhs(u);
    let p1 = eiconal_rhs(u, linear, psi);
    let u2 = e_half(&u.axpy(0.5 * h, &k1));
    let s2 = psi.axpy(0.5 * h, &p1);
    let k2 = euler_rhs(&u2);
    let p2 = eiconal_rhs(&u2, linear, &s2);
    let u3 = e_half(u).axpy(0.5 * h, &k2);
    let s3 = psi.axpy(0.5 * h, &p2);
    let k3 = euler_rhs(&u3);
    let p3 = eiconal_rhs(&u3, linear, &s3);
    let u4 = e_full(u).axpy(h, &e_half(&k3));
    let s4 = psi.axpy(h, &p3);
    let k4 = euler_rhs(&u4);
    let p4 = eiconal_rhs(&u4, linear, &s4);
    let mid = k2.add(&k3);
    let un = e_full(u).axpy(h / 6.0, &e_full(&k1)).axpy(h / 3.0, &e_half(&mid)).axpy(h / 6.0, &k4);
    let sn = psi.axpy(h / 6.0, &p1).axpy(h / 3.0, &p2).axpy(h / 3.0, &p3).axpy(h / 6.0, &p4);
    (un, sn)
}

fn snapshot(t: f64, u: &SpectralField, psi: &SpectralField, linear: &[f64; 3], nu: f64) -> BaseSnap {
    let adv = advection(u);
    let du = leray_project(&adv).scale(-1.0).axpy(nu, &u.laplacian());
    BaseSnap { t, u: u.clone(), du, p: pressure_from_flux(&adv), psi: psi.clone(), dpsi: eiconal_rhs(u, linear, psi) }
}

fn divergence_defect(u: &SpectralField) -> f64 {
    u.divergence().l2_norm() / u.l2_norm().max(1e-300)
}

/// Numerical integration of the velocity with ψ₀ ≡ 0 and ℓ = 0.
pub fn solve_base_flow(u00: &SpectralField, nu_base: f64, grid: &Grid) -> Result<BaseFlow> {
    integrate(u00, &PhaseFunction::zero(&u00.grid), nu_base, grid, 0.0, "numerical")
}

fn integrate(u00: &SpectralField, phi00: &PhaseFunction, nu: f64, grid: &Grid, c: f64, scenario: &str) -> Result<BaseFlow> {
    if u00.grid.n != grid.n || phi00.grid().n != grid.n {
        return Err(Error::GridMismatch);
    }
    if u00.l2_norm() > 0.0 && divergence_defect(u00) > 1e-10 {
        return Err(Error::Config(format!("initial base velocity is not divergence-free ({:.2e})", divergence_defect(u00))));
    }
    let h = 0.5 * grid.dt;
    let steps = 2 * grid.steps();
    let mut u = u00.clone();
    u.grid = grid.clone();
    let mut psi = phi00.psi.clone();
    psi.grid = grid.clone();
    let linear = phi00.linear;
    let mut snaps = vec![snapshot(0.0, &u, &psi, &linear, nu)];
    let mut truncated_at = None;
    for i in 0..steps {
        check_cfl(&u, h)?;
        let (un, sn) = joint_step(&u, &psi, &linear, nu, h);
        u = un;
        psi = sn;
        let t = (i + 1) as f64 * h;
        let s = snapshot(t, &u, &psi, &linear, nu);
        if c > 0.0 && min_norm(&PhaseFunction::new(linear, psi.clone()).gradient().to_physical()) < c {
            truncated_at = Some(t);
            break;
        }
        snaps.push(s);
    }
    trim_to_full_steps(&mut snaps);
    Ok(BaseFlow { grid: grid.clone(), scenario: scenario.into(), nu_base: nu, linear, snaps, c, truncated_at })
}

/// Keep an odd number of snapshots so the last one lands on a full step.
fn trim_to_full_steps(snaps: &mut Vec<BaseSnap>) {
    if snaps.len() % 2 == 0 {
        snaps.pop();
    }
}

/// Attach the eiconal phase to a base flow by re-running the joint (u, ψ)
/// integration from u₀(0). Truncates the trajectory where |∇φ₀| < c.
pub fn solve_eiconal(phi00: &PhaseFunction, base: &BaseFlow, c: f64) -> Result<BaseFlow> {
    let m = min_norm(&phi00.gradient().to_physical());
    if m < 2.0 * c {
        return Err(Error::DegenerateGradient(m));
    }
    integrate(&base.snaps[0].u, phi00, base.nu_base, &base.grid, c, &base.scenario)
}

fn velocity_components(grid: &Grid) -> usize {
    grid.dim
}

/// Band-limited divergence-free datum from a streamfunction with random
/// coefficients on |ξ| ≤ 4, scaled to max speed 1.
pub fn random_datum(grid: &Grid, seed: u64) -> SpectralField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut terms = Vec::new();
    for k1 in -4i64..=4 {
        for k2 in 0i64..=4 {
            if (k2 == 0 && k1 <= 0) || k1 * k1 + k2 * k2 > 16 {
                continue;
            }
            let a: f64 = rng.gen_range(-1.0..1.0);
            let b: f64 = rng.gen_range(-1.0..1.0);
            let w = 1.0 / (k1 * k1 + k2 * k2) as f64;
            terms.push((k1 as f64, k2 as f64, a * w, b * w));
        }
    }
    let dim = velocity_components(grid);
    let u = SpectralField::from_fn(grid, dim, |x1, x2| {
        let mut v = vec![0.0; dim];
        for (k1, k2, a, b) in &terms {
            let arg = k1 * x1 + k2 * x2;
            // ψ = a cos + b sin; u = (∂₂ψ, −∂₁ψ)
            let dpsi = -a * arg.sin() + b * arg.cos();
            v[0] += k2 * dpsi;
            v[1] -= k1 * dpsi;
        }
        v
    });
    let s = max_speed(&u.to_physical());
    u.scale(1.0 / s)
}

pub fn shear_velocity(grid: &Grid) -> SpectralField {
    let dim = velocity_components(grid);
    SpectralField::from_fn(grid, dim, |_, x2| {
        let mut v = vec![0.0; dim];
        v[0] = x2.sin();
        v
    })
}

pub fn taylor_green(grid: &Grid, nu: f64, t: f64) -> (SpectralField, SpectralField) {
    let dim = velocity_components(grid);
    let f = (-2.0 * nu * t).exp();
    let u = SpectralField::from_fn(grid, dim, |x1, x2| {
        let mut v = vec![0.0; dim];
        v[0] = f * x1.sin() * x2.cos();
        v[1] = -f * x1.cos() * x2.sin();
        v
    });
    let p = SpectralField::scalar_from_fn(grid, |x1, x2| 0.25 * f * f * ((2.0 * x1).cos() + (2.0 * x2).cos()));
    (u, p)
}

/// Scenario preset. Zero and shear (with a purely linear φ₀₀) use closed
/// forms; everything else is integrated.
pub fn scenario_base(scenario: BaseScenario, grid: &Grid, nu_base: f64, phi00: &PhaseFunction, c: f64, seed: u64) -> Result<BaseFlow> {
    let m = min_norm(&phi00.gradient().to_physical());
    if m < 2.0 * c {
        return Err(Error::DegenerateGradient(m));
    }
    let linear_only = phi00.psi.l2_norm() == 0.0;
    match scenario {
        BaseScenario::Zero => Ok(closed_form(grid, scenario, phi00, c, |_t| {
            (SpectralField::zeros(grid, grid.dim), SpectralField::zeros(grid, grid.dim), SpectralField::zeros(grid, 1))
        })),
        BaseScenario::Shear if linear_only && nu_base == 0.0 => {
            let u = shear_velocity(grid);
            let l1 = phi00.linear[0];
            let sinx2 = SpectralField::scalar_from_fn(grid, |_, x2| x2.sin());
            let snaps = (0..=2 * grid.steps())
                .map(|i| {
                    let t = i as f64 * 0.5 * grid.dt;
                    BaseSnap {
                        t,
                        u: u.clone(),
                        du: SpectralField::zeros(grid, grid.dim),
                        p: SpectralField::zeros(grid, 1),
                        psi: sinx2.scale(-l1 * t),
                        dpsi: sinx2.scale(-l1),
                    }
                })
                .collect::<Vec<_>>();
            finish_closed(grid, scenario, phi00, c, snaps)
        }
        BaseScenario::Shear => {
            let mut b = integrate(&shear_velocity(grid), phi00, nu_base, grid, c, scenario.name())?;
            b.scenario = scenario.name().into();
            Ok(b)
        }
        BaseScenario::TaylorGreen => {
            let (u, _) = taylor_green(grid, nu_base, 0.0);
            integrate(&u, phi00, nu_base, grid, c, scenario.name())
        }
        BaseScenario::Random2d => integrate(&random_datum(grid, seed), phi00, nu_base, grid, c, scenario.name()),
    }
}

fn closed_form<F>(grid: &Grid, scenario: BaseScenario, phi00: &PhaseFunction, c: f64, f: F) -> BaseFlow
where
    F: Fn(f64) -> (SpectralField, SpectralField, SpectralField),
{
    let snaps = (0..=2 * grid.steps())
        .map(|i| {
            let t = i as f64 * 0.5 * grid.dt;
            let (u, du, p) = f(t);
            BaseSnap { t, u, du, p, psi: phi00.psi.clone(), dpsi: SpectralField::zeros(grid, 1) }
        })
        .collect();
    BaseFlow { grid: grid.clone(), scenario: scenario.name().into(), nu_base: 0.0, linear: phi00.linear, snaps, c, truncated_at: None }
}

fn finish_closed(grid: &Grid, scenario: BaseScenario, phi00: &PhaseFunction, c: f64, mut snaps: Vec<BaseSnap>) -> Result<BaseFlow> {
    let mut truncated_at = None;
    for i in 0..snaps.len() {
        let x = PhaseFunction::new(phi00.linear, snaps[i].psi.clone()).gradient().to_physical();
        if min_norm(&x) < c {
            truncated_at = Some(snaps[i].t);
            snaps.truncate(i);
            break;
        }
    }
    trim_to_full_steps(&mut snaps);
    Ok(BaseFlow { grid: grid.clone(), scenario: scenario.name().into(), nu_base: 0.0, linear: phi00.linear, snaps, c, truncated_at })
}

/// u₀ at snapshot i and point y. RK4 at step dt only visits the dt/2 lattice.
fn velocity_at(evals: &[(PointEvaluator, PointEvaluator)], i: usize, y: [f64; 2]) -> [f64; 2] {
    [evals[i].0.eval(y), evals[i].1.eval(y)]
}

fn evaluators(base: &BaseFlow, upto: usize) -> Vec<(PointEvaluator, PointEvaluator)> {
    (0..=upto).into_par_iter().map(|i| (base.snaps[i].u.evaluator(0), base.snaps[i].u.evaluator(1))).collect()
}

fn steps_to(base: &BaseFlow, t: f64) -> usize {
    let steps = (t / base.grid.dt).round() as usize;
    steps.min(base.full_steps())
}

/// Γ(t, x): RK4 for ∂_tΓ = u₀(t, Γ) at step dt, unwrapped coordinates.
pub fn flow_map(base: &BaseFlow, t: f64, seeds: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let steps = steps_to(base, t);
    let ev = evaluators(base, 2 * steps);
    let h = base.grid.dt;
    seeds
        .par_iter()
        .map(|&y0| {
            let mut y = y0;
            for s in 0..steps {
                y = rk4_point(&ev, 2 * s, 2 * s + 1, 2 * s + 2, y, h);
            }
            y
        })
        .collect()
}

/// Feet at time 0 of the characteristics through `points` at time t.
pub fn backward_characteristics(base: &BaseFlow, t: f64, points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let steps = steps_to(base, t);
    let ev = evaluators(base, 2 * steps);
    let h = -base.grid.dt;
    points
        .par_iter()
        .map(|&y0| {
            let mut y = y0;
            for s in (0..steps).rev() {
                y = rk4_point(&ev, 2 * s + 2, 2 * s + 1, 2 * s, y, h);
            }
            y
        })
        .collect()
}

fn rk4_point(
    ev: &[(PointEvaluator, PointEvaluator)],
    i0: usize,
    ih: usize,
    i1: usize,
    y: [f64; 2],
    h: f64,
) -> [f64; 2] {
    let add = |a: [f64; 2], b: [f64; 2], s: f64| [a[0] + s * b[0], a[1] + s * b[1]];
    let k1 = velocity_at(ev, i0, y);
    let k2 = velocity_at(ev, ih, add(y, k1, 0.5 * h));
    let k3 = velocity_at(ev, ih, add(y, k2, 0.5 * h));
    let k4 = velocity_at(ev, i1, add(y, k3, h));
    [y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]), y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])]
}

/// Semi-Lagrangian reference for φ₀(t): φ₀₀ evaluated at the backward feet
/// of the grid points.
pub fn semi_lagrangian_phase(base: &BaseFlow, phi00: &PhaseFunction, t: f64) -> Vec<f64> {
    let grid = &base.grid;
    let pts: Vec<[f64; 2]> = (0..grid.points()).map(|i| grid.point(i)).collect();
    let feet = backward_characteristics(base, t, &pts);
    let ev = phi00.psi.evaluator(0);
    feet.iter().map(|y| phi00.linear[0] * y[0] + phi00.linear[1] * y[1] + ev.eval(*y)).collect()
}

/// Relative change of ‖u₀‖² between the first and every later snapshot.
pub fn energy_drift(base: &BaseFlow) -> f64 {
    let e0 = base.snaps[0].u.l2_norm().powi(2);
    base.snaps.iter().map(|s| (s.u.l2_norm().powi(2) - e0).abs() / e0.max(1e-300)).fold(0.0, f64::max)
}

/// Largest Euler/NS residual ‖∂_tu + P(u·∇)u − νΔu‖ over snapshots, with ∂_t
/// by centered differences of the stored trajectory.
pub fn base_residual(base: &BaseFlow) -> f64 {
    let h = base.snap_dt();
    let mut worst = 0.0f64;
    for i in 1..base.snaps.len().saturating_sub(1) {
        let dt = base.snaps[i + 1].u.sub(&base.snaps[i - 1].u).scale(0.5 / h);
        let r = dt.sub(&base.snaps[i].du);
        worst = worst.max(r.l2_norm());
    }
    worst
}

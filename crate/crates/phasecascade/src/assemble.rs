//! From a finished cascade to fields on the box at a chosen ε: phases,
//! profile residuals, divergence correctors, θ = φ/ε evaluation, residuals
//! of assembled trajectories, vorticity and log-log order fits.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::cascade::{advect, dictionary, dot_x, gradient_pack, scalar_times, times_x, CascadeState};
use crate::error::{Error, Result};
use crate::field::{Grid, PhysProfile, ProfileField, SpectralField, C64};
use crate::operators::{leray_project, ridiv, ridiv_theta, PhaseFunction, SingularCalculus};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhaseChoice {
    /// φ_g with the dictionary profiles U_k.
    Geometric,
    /// The complete phase with the profiles Ũ_k.
    Complete,
}

/// Largest grid the assembler will allocate.
pub const MAX_ASSEMBLY_N: usize = 4096;

pub fn s_of(eps: f64, l: usize) -> f64 {
    eps.powf(1.0 / l as f64)
}

fn phase_sum(state: &CascadeState, snap: usize, eps: f64, upto: usize) -> PhaseFunction {
    let s = &state.snapshots[snap];
    let sv = s_of(eps, state.config.l);
    let mut phi = state.base.phase_at(s.base_index);
    for k in 1..=upto.min(state.config.order) {
        phi = phi.axpy(sv.powi(k as i32), &s.order(k).phase());
    }
    phi
}

/// φ₀ + Σ_{k<l} ε^{k/l}φ_k
pub fn geometric_phase(state: &CascadeState, snap: usize, eps: f64) -> PhaseFunction {
    phase_sum(state, snap, eps, state.config.l - 1)
}

/// φ₀ + Σ_{k≤N} ε^{k/l}φ_k
pub fn complete_phase(state: &CascadeState, snap: usize, eps: f64) -> PhaseFunction {
    phase_sum(state, snap, eps, state.config.order)
}

/// The profile sums u = u₀ + Σ s^kU_k and p = p₀ + Σ s^kP_k for one phase choice.
pub fn profile_sums(state: &CascadeState, snap: usize, eps: f64, choice: PhaseChoice) -> Result<(ProfileField, ProfileField)> {
    let s = &state.snapshots[snap];
    let bs = &state.base.snaps[s.base_index];
    let sv = s_of(eps, state.config.l);
    let mut u = ProfileField::from_mean(&bs.u);
    let mut p = ProfileField::from_mean(&bs.p);
    match choice {
        PhaseChoice::Complete => {
            for k in 1..=state.config.order {
                u = u.axpy(sv.powi(k as i32), &s.order(k).profile());
                p = p.axpy(sv.powi(k as i32), &s.pressure(k));
            }
        }
        PhaseChoice::Geometric => {
            let d = dictionary(state, snap)?;
            for k in 1..=state.config.order {
                u = u.axpy(sv.powi(k as i32), &d.u[k - 1]);
                p = p.axpy(sv.powi(k as i32), &d.p[k - 1]);
            }
        }
    }
    Ok((u, p))
}

#[derive(Clone, Debug)]
pub struct ProfileResidual {
    pub epsilon: f64,
    pub t: f64,
    /// 𝔡₀u + (u·𝔤𝔯𝔞𝔡)u + 𝔤𝔯𝔞𝔡 p − νεΔ_x u with the complete phase.
    pub f: ProfileField,
    /// 𝔡𝔦𝔳 u
    pub g: ProfileField,
}

fn x_samples(phase: &PhaseFunction) -> Vec<Vec<f64>> {
    phase.gradient().to_physical()
}

/// Residuals of the profile system in the ε-scaled calculus:
/// f̃ = ε(∂_tu + (u·∇)u + ∇p − νΔ_x u) + (∂_tφ + X·u)∂_θu + X∂_θp, g̃ = εDiv u + X·∂_θu.
pub fn profile_residual(state: &CascadeState, snap: usize, eps: f64) -> Result<ProfileResidual> {
    let (u, p) = profile_sums(state, snap, eps, PhaseChoice::Complete)?;
    profile_residual_of(state, snap, eps, &u, &p)
}

fn profile_residual_of(state: &CascadeState, snap: usize, eps: f64, u: &ProfileField, p: &ProfileField) -> Result<ProfileResidual> {
    let s = &state.snapshots[snap];
    let grid = state.grid();
    let dim = grid.dim;
    let bs = &state.base.snaps[s.base_index];
    let sv = s_of(eps, state.config.l);
    let mut ut = ProfileField::from_mean(&bs.du);
    let mut visc = ProfileField::from_mean(&bs.u.laplacian().scale(state.base.nu_base));
    let mut phit = bs.dpsi.clone();
    for k in 1..=state.config.order {
        let w = sv.powi(k as i32);
        let o = s.order(k);
        ut = ut.axpy(w, &o.profile_rate());
        visc = visc.axpy(w * state.config.nu, &o.profile().laplacian(false));
        phit = phit.axpy(w, &o.dpsi);
    }
    let phase = complete_phase(state, snap, eps);
    let x = x_samples(&phase);
    let phit = phit.to_physical().remove(0);
    let kk = u.kmax();
    let up = u.to_physical();
    let adv = PhysProfile::bilinear(&up, &gradient_pack(u), 2 * kk, dim, advect(dim)).to_spectral(grid).dealiased();
    let mut c = dot_x(&x, &up);
    for (z, v) in c.modes[0][0].iter_mut().zip(&phit) {
        *z += v;
    }
    let dup = up.theta_derivative();
    let cdu = PhysProfile::bilinear(&c, &dup, 2 * kk, dim, scalar_times(dim)).to_spectral(grid).dealiased();
    let xdp = times_x(&p.to_physical().theta_derivative(), &x).to_spectral(grid);
    let f = ut.add(&adv).add(&p.gradient()).sub(&visc).scale(eps).add(&cdu).add(&xdp);
    let g = u.divergence().scale(eps).add(&dot_x(&x, &dup).to_spectral(grid));
    Ok(ProfileResidual { epsilon: eps, t: s.t, f, g })
}

/// Profile-level divergence correction: w̄ = ridiv⟨g̃⟩/ε, w* = 𝔯𝔦𝔡𝔦𝔳 g̃*, u_c = u − w̄ − w*.
#[derive(Clone, Debug)]
pub struct ProfileCleanup {
    pub corrected: ProfileField,
    pub corrector: ProfileField,
    pub residual: ProfileResidual,
    /// ‖𝔡𝔦𝔳 u_c‖/‖u_c‖
    pub divergence_after: f64,
}

pub fn profile_cleanup(state: &CascadeState, snap: usize, eps: f64) -> Result<ProfileCleanup> {
    let (u, p) = profile_sums(state, snap, eps, PhaseChoice::Complete)?;
    let residual = profile_residual_of(state, snap, eps, &u, &p)?;
    let phase = complete_phase(state, snap, eps);
    let calc = SingularCalculus::new(eps, phase.clone());
    let gbar = residual.g.mean();
    let wbar = ridiv(&gbar)?.scale(1.0 / eps);
    let wstar = ridiv_theta(&residual.g.oscillating(), &calc)?;
    let mut corrector = wstar;
    for (c, v) in corrector.modes[0].iter_mut().enumerate() {
        *v = wbar.coeffs[c].clone();
    }
    let corrected = u.sub(&corrector);
    let x = x_samples(&phase);
    let g_after = corrected
        .divergence()
        .scale(eps)
        .add(&dot_x(&x, &corrected.to_physical().theta_derivative()).to_spectral(&u.grid));
    let divergence_after = g_after.l2_norm() / corrected.l2_norm().max(1e-300);
    Ok(ProfileCleanup { corrected, corrector, residual, divergence_after })
}

#[derive(Clone, Debug)]
pub struct AssembledSnapshot {
    pub epsilon: f64,
    pub t: f64,
    pub u: SpectralField,
    pub p: SpectralField,
    /// Assembled momentum residual when known.
    pub f_residual: Option<SpectralField>,
    /// Div u
    pub g_residual: Option<SpectralField>,
    pub provenance: String,
}

impl AssembledSnapshot {
    pub fn plain(epsilon: f64, t: f64, u: SpectralField, p: SpectralField) -> Self {
        let g = u.divergence();
        AssembledSnapshot { epsilon, t, u, p, f_residual: None, g_residual: Some(g), provenance: String::new() }
    }
}

/// Grid size for evaluating harmonics up to `kmax` at θ = φ/ε.
pub fn assembly_grid_n(grid: &Grid, phase: &PhaseFunction, kmax: usize, eps: f64) -> Result<usize> {
    let x = phase.gradient().to_physical();
    let xmax = (0..grid.points()).map(|i| x.iter().take(2).map(|c| c[i] * c[i]).sum::<f64>().sqrt()).fold(0.0f64, f64::max);
    let need = 1.1 * kmax as f64 * xmax / eps + grid.n as f64 / 3.0 + 8.0;
    let mut na = grid.n;
    while ((na / 3) as f64) < need {
        na *= 2;
        if na > MAX_ASSEMBLY_N {
            let eps_min = 1.1 * kmax as f64 * xmax / ((MAX_ASSEMBLY_N / 3) as f64 - grid.n as f64 / 3.0 - 8.0);
            return Err(Error::EpsilonTooSmallForGrid { eps, eps_min });
        }
    }
    Ok(na)
}

/// u(x) = Σ_h u_h(x) e^{ihφ(x)/ε} on an n_a-point grid (n_a ≥ profile grid).
pub fn evaluate_profile(u: &ProfileField, phase: &PhaseFunction, eps: f64, na: usize) -> Result<SpectralField> {
    let fine = u.grid.with_n(na);
    let ph = phase.resample(na);
    let np = na * na;
    let mut acc = vec![vec![0.0; np]; u.components];
    for h in 0..=u.kmax() {
        let part = SpectralField { grid: u.grid.clone(), coeffs: u.modes[h].clone() }.resample(na);
        if part.coeffs.iter().all(|v| v.iter().all(|z| z.norm() == 0.0)) {
            continue;
        }
        let vals = part.to_physical_complex();
        if h == 0 {
            for (a, v) in acc.iter_mut().zip(&vals) {
                for (x, z) in a.iter_mut().zip(v) {
                    *x += z.re;
                }
            }
            continue;
        }
        let m = ph.modulation(h as f64 / eps)?;
        for (a, v) in acc.iter_mut().zip(&vals) {
            for ((x, z), e) in a.iter_mut().zip(v).zip(&m) {
                *x += 2.0 * (z * e).re;
            }
        }
    }
    SpectralField::to_spectral(&fine, &acc)
}

fn provenance(state: &CascadeState) -> String {
    let mut h = DefaultHasher::new();
    format!("{:?}", state.config).hash(&mut h);
    state.base.scenario.hash(&mut h);
    format!("{:016x}", h.finish())
}

/// Velocity and pressure at θ = φ/ε for a stored snapshot.
pub fn assemble(state: &CascadeState, snap: usize, eps: f64, choice: PhaseChoice) -> Result<AssembledSnapshot> {
    let (u, p) = profile_sums(state, snap, eps, choice)?;
    assemble_profiles(state, snap, eps, choice, &u, &p)
}

fn phase_for(state: &CascadeState, snap: usize, eps: f64, choice: PhaseChoice) -> PhaseFunction {
    match choice {
        PhaseChoice::Geometric => geometric_phase(state, snap, eps),
        PhaseChoice::Complete => complete_phase(state, snap, eps),
    }
}

fn assemble_profiles(
    state: &CascadeState,
    snap: usize,
    eps: f64,
    choice: PhaseChoice,
    u: &ProfileField,
    p: &ProfileField,
) -> Result<AssembledSnapshot> {
    let phase = phase_for(state, snap, eps, choice);
    let na = assembly_grid_n(state.grid(), &phase, u.kmax().max(p.kmax()), eps)?;
    let uf = evaluate_profile(u, &phase, eps, na)?;
    let pf = evaluate_profile(p, &phase, eps, na)?;
    let mut out = AssembledSnapshot::plain(eps, state.snapshots[snap].t, uf, pf);
    out.provenance = provenance(state);
    Ok(out)
}

/// Complete-phase assembly of the profile-corrected velocity, followed by a
/// Leray polish of the discretization remainder. Returns the snapshot and
/// the L² size of the profile corrector after evaluation.
pub fn assemble_cleaned(state: &CascadeState, snap: usize, eps: f64) -> Result<(AssembledSnapshot, f64)> {
    let cl = profile_cleanup(state, snap, eps)?;
    let (_, p) = profile_sums(state, snap, eps, PhaseChoice::Complete)?;
    let mut a = assemble_profiles(state, snap, eps, PhaseChoice::Complete, &cl.corrected, &p)?;
    let phase = complete_phase(state, snap, eps);
    let na = a.u.grid.n;
    let corr = evaluate_profile(&cl.corrector, &phase, eps, na)?.l2_norm();
    a = divergence_cleanup(&a);
    Ok((a, corr))
}

/// Leray polish: u − ridiv(Div u), idempotent.
pub fn divergence_cleanup(s: &AssembledSnapshot) -> AssembledSnapshot {
    let mut out = s.clone();
    out.u = leray_project(&s.u);
    out.g_residual = Some(out.u.divergence());
    out
}

/// (u·∇)u computed on a doubled grid and truncated back, so the product is alias-free.
pub fn advection_exact(u: &SpectralField) -> SpectralField {
    let n = u.grid.n;
    let big = u.resample(2 * n);
    let v = big.to_physical();
    let g1 = big.derivative(0).to_physical();
    let g2 = big.derivative(1).to_physical();
    let comps = u.components();
    let out: Vec<Vec<f64>> =
        (0..comps).map(|c| (0..v[0].len()).map(|i| v[0][i] * g1[c][i] + v[1][i] * g2[c][i]).collect()).collect();
    SpectralField::to_spectral(&big.grid, &out).expect("doubled grid").resample(n)
}

/// f = ∂_tu + (u·∇)u + ∇p − ν_eff Δu at the middle of ≥ 5 equally spaced
/// snapshots, with the 4th-order centered difference in time.
pub fn assembled_residual(snaps: &[AssembledSnapshot], nu_eff: f64) -> Result<SpectralField> {
    if snaps.len() < 5 {
        return Err(Error::InsufficientSnapshots { need: 5, got: snaps.len() });
    }
    let mid = snaps.len() / 2;
    let h = snaps[mid].t - snaps[mid - 1].t;
    for w in snaps[mid - 2..=mid + 2].windows(2) {
        if ((w[1].t - w[0].t) - h).abs() > 1e-9 * h.abs().max(1e-300) || w[0].u.grid.n != w[1].u.grid.n {
            return Err(Error::TimeGridMismatch);
        }
    }
    if h <= 0.0 {
        return Err(Error::TimeGridMismatch);
    }
    let dt = snaps[mid - 2]
        .u
        .scale(1.0)
        .axpy(-8.0, &snaps[mid - 1].u)
        .axpy(8.0, &snaps[mid + 1].u)
        .axpy(-1.0, &snaps[mid + 2].u)
        .scale(1.0 / (12.0 * h));
    let c = &snaps[mid];
    let mut f = dt.add(&advection_exact(&c.u)).axpy(-nu_eff, &c.u.laplacian());
    let gp = c.p.gradient();
    for comp in 0..2 {
        for (a, b) in f.coeffs[comp].iter_mut().zip(&gp.coeffs[comp]) {
            *a += b;
        }
    }
    Ok(f)
}

/// Scalar curl in 2D; (∂₂u₃, −∂₁u₃, ∂₁u₂ − ∂₂u₁) in 2.5D.
pub fn vorticity(u: &SpectralField) -> SpectralField {
    let w3 = u.component(1).derivative(0).sub(&u.component(0).derivative(1));
    if u.components() < 3 {
        return w3;
    }
    let u3 = u.component(2);
    SpectralField::from_components(&[u3.derivative(1), u3.derivative(0).scale(-1.0), w3])
}

/// ‖Ω‖² with Ω_ij = ∂_ju^i − ∂_iu^j summed over i<j.
pub fn enstrophy(u: &SpectralField) -> f64 {
    vorticity(u).l2_norm().powi(2)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    /// Root-mean-square residual of the fit in log space.
    pub residual: f64,
}

/// Least squares on (log ε, log norm).
pub fn order_fit(eps: &[f64], norms: &[f64]) -> Result<Fit> {
    if eps.len() != norms.len() {
        return Err(Error::ShapeMismatch { expected: eps.len(), got: norms.len() });
    }
    if eps.len() < 4 {
        return Err(Error::InsufficientSnapshots { need: 4, got: eps.len() });
    }
    if norms.iter().chain(eps).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::NonPositiveNorm);
    }
    let x: Vec<f64> = eps.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = norms.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = x.iter().zip(&y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let stderr = (ss / (n - 2.0) / sxx).sqrt();
    Ok(Fit { slope, intercept, stderr, residual: (ss / n).sqrt() })
}

/// Geometric sweep ε₀, ε₀/2, … with `count` points.
pub fn epsilon_sweep(eps0: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| eps0 / 2f64.powi(i as i32)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualRow {
    pub epsilon: f64,
    pub t: f64,
    pub name: String,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct ResidualReport {
    pub epsilons: Vec<f64>,
    pub rows: Vec<ResidualRow>,
    /// (norm name, fit)
    pub fits: Vec<(String, Fit)>,
    /// "euler" (ν_eff = 0) or "dissipative" (ν_eff = νε²).
    pub mode: String,
    pub expected_profile_slope: f64,
    pub asymptotic_exponent: f64,
}

impl ResidualReport {
    pub fn fit(&self, name: &str) -> Option<&Fit> {
        self.fits.iter().find(|(n, _)| n == name).map(|(_, f)| f)
    }

    pub fn values(&self, name: &str) -> Vec<f64> {
        self.rows.iter().filter(|r| r.name == name).map(|r| r.value).collect()
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "mode = {}\nexpected profile slope (N+1)/l = {:.4}\nassembled exponent N/l-3-d/2 = {:.4} (reported only)\n",
            self.mode, self.expected_profile_slope, self.asymptotic_exponent
        );
        for (name, f) in &self.fits {
            s.push_str(&format!("slope[{name}] = {:.4} +- {:.4}\n", f.slope, f.stderr));
        }
        s
    }
}

/// Profile residual norms (and optionally the cleaned divergence and the
/// corrector size) over an ε sweep at one snapshot.
pub fn residual_sweep(state: &CascadeState, snap: usize, eps: &[f64], with_cleanup: bool) -> Result<ResidualReport> {
    if eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config("epsilon sweep must be strictly decreasing".into()));
    }
    let t = state.snapshots[snap].t;
    let mut rows = Vec::new();
    for &e in eps {
        let (f, g, extra) = if with_cleanup {
            let cl = profile_cleanup(state, snap, e)?;
            let extra = vec![("div_after_cleanup", cl.divergence_after), ("corrector_l2", cl.corrector.l2_norm())];
            (cl.residual.f, cl.residual.g, extra)
        } else {
            let r = profile_residual(state, snap, e)?;
            (r.f, r.g, vec![])
        };
        rows.push(ResidualRow { epsilon: e, t, name: "f_l2".into(), value: f.l2_norm() });
        rows.push(ResidualRow { epsilon: e, t, name: "f_h1".into(), value: f.sobolev_norm(1) });
        rows.push(ResidualRow { epsilon: e, t, name: "f_h2".into(), value: f.sobolev_norm(2) });
        rows.push(ResidualRow { epsilon: e, t, name: "g_l2".into(), value: g.l2_norm() });
        for (n, v) in extra {
            rows.push(ResidualRow { epsilon: e, t, name: n.into(), value: v });
        }
    }
    let mut report = ResidualReport {
        epsilons: eps.to_vec(),
        rows,
        fits: Vec::new(),
        mode: if state.config.nu == 0.0 { "euler".into() } else { "dissipative".into() },
        expected_profile_slope: (state.config.order + 1) as f64 / state.config.l as f64,
        asymptotic_exponent: state.config.asymptotic_exponent(),
    };
    if eps.len() >= 4 {
        for name in ["f_l2", "f_h1", "f_h2", "g_l2", "corrector_l2"] {
            let v = report.values(name);
            if v.len() == eps.len() {
                if let Ok(f) = order_fit(eps, &v) {
                    report.fits.push((name.into(), f));
                }
            }
        }
    }
    Ok(report)
}

/// Per-harmonic evaluation helper for diagnostics: harmonic h of a profile as values on the profile grid.
pub fn harmonic_values(u: &ProfileField, h: usize, c: usize) -> Vec<C64> {
    let f = SpectralField { grid: u.grid.clone(), coeffs: vec![u.modes[h][c].clone()] };
    f.to_physical_complex().remove(0)
}

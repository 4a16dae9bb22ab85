//! Projection and inversion toolbox on (x, θ): Leray projection, pointwise
//! hyperplane projectors, right inverses of the divergence, the θ
//! antiderivative, the singular ε-scaled operators and the conjugated
//! per-mode Leray projector.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::baseflow::BaseFlow;
use crate::error::{Error, Result};
use crate::field::{deriv_wavenumber, xi, Grid, PhysProfile, ProfileField, SpectralField, C64, TWO_PI};

/// φ(x) = ℓ·x + ψ(x) with ψ periodic.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseFunction {
    pub linear: [f64; 3],
    pub psi: SpectralField,
}

impl PhaseFunction {
    pub fn new(linear: [f64; 3], psi: SpectralField) -> Self {
        PhaseFunction { linear, psi }
    }

    pub fn zero(grid: &Grid) -> Self {
        PhaseFunction { linear: [0.0; 3], psi: SpectralField::zeros(grid, 1) }
    }

    pub fn linear(grid: &Grid, linear: [f64; 3]) -> Self {
        PhaseFunction { linear, psi: SpectralField::zeros(grid, 1) }
    }

    pub fn grid(&self) -> &Grid {
        &self.psi.grid
    }

    /// X = ∇φ as a spectral vector field with `grid.dim` components.
    pub fn gradient(&self) -> SpectralField {
        let mut g = self.psi.gradient();
        for (c, v) in g.coeffs.iter_mut().enumerate() {
            v[0] += C64::new(self.linear[c], 0.0);
        }
        g
    }

    /// Samples of φ (including the non-periodic linear part).
    pub fn values(&self) -> Vec<f64> {
        let grid = self.grid();
        let psi = &self.psi.to_physical()[0];
        (0..grid.points())
            .map(|idx| {
                let [x1, x2] = grid.point(idx);
                self.linear[0] * x1 + self.linear[1] * x2 + psi[idx]
            })
            .collect()
    }

    pub fn axpy(&self, a: f64, other: &PhaseFunction) -> PhaseFunction {
        let mut linear = self.linear;
        for c in 0..3 {
            linear[c] += a * other.linear[c];
        }
        PhaseFunction { linear, psi: self.psi.axpy(a, &other.psi) }
    }

    pub fn scale(&self, s: f64) -> PhaseFunction {
        PhaseFunction { linear: self.linear.map(|v| v * s), psi: self.psi.scale(s) }
    }

    /// Samples of e^{i·a·φ(x)}; requires a·ℓ to be an integer vector so the
    /// result is periodic.
    pub fn modulation(&self, a: f64) -> Result<Vec<C64>> {
        for c in 0..2 {
            let w = a * self.linear[c];
            if (w - w.round()).abs() > 1e-9 {
                return Err(Error::NonPeriodicModulation { k: a.round() as usize, eps: 1.0 / a });
            }
        }
        let grid = self.grid();
        let psi = &self.psi.to_physical()[0];
        let l1 = (a * self.linear[0]).round();
        let l2 = (a * self.linear[1]).round();
        Ok((0..grid.points())
            .map(|idx| {
                let [x1, x2] = grid.point(idx);
                C64::from_polar(1.0, l1 * x1 + l2 * x2 + a * psi[idx])
            })
            .collect())
    }

    pub fn resample(&self, n: usize) -> PhaseFunction {
        PhaseFunction { linear: self.linear, psi: self.psi.resample(n) }
    }
}

/// Leray projection û(ξ) ↦ (I − ξξᵀ/|ξ|²)û(ξ); ξ = 0 and the x₃ component are untouched.
pub fn leray_project(u: &SpectralField) -> SpectralField {
    let n = u.grid.n;
    let mut out = u.clone();
    for idx in 0..u.grid.points() {
        let (a, b) = xi(n, idx);
        let k2 = a * a + b * b;
        if k2 == 0.0 {
            continue;
        }
        let d = (u.coeffs[0][idx] * a + u.coeffs[1][idx] * b) / k2;
        out.coeffs[0][idx] -= d * a;
        out.coeffs[1][idx] -= d * b;
    }
    out
}

/// Pressure P with ∇P = −(I − Leray)F, i.e. P̂ = iξ·F̂/|ξ|².
pub fn pressure_from_flux(f: &SpectralField) -> SpectralField {
    let n = f.grid.n;
    let mut p = SpectralField::zeros(&f.grid, 1);
    for idx in 0..f.grid.points() {
        let (a, b) = xi(n, idx);
        let k2 = a * a + b * b;
        if k2 == 0.0 {
            continue;
        }
        let (da, db) = (deriv_wavenumber(n, idx / n), deriv_wavenumber(n, idx % n));
        p.coeffs[0][idx] = C64::new(0.0, 1.0) * (f.coeffs[0][idx] * da + f.coeffs[1][idx] * db) / k2;
    }
    p
}

/// Field of orthogonal projectors onto X(x)^⊥.
#[derive(Clone, Debug)]
pub struct PointwiseProjector {
    pub grid: Grid,
    pub x: Vec<[f64; 3]>,
    inv2: Vec<f64>,
}

/// Π(x) = I − X Xᵀ/|X|²; fails when min|X| < c.
pub fn pointwise_projector(x: &SpectralField, c: f64) -> Result<PointwiseProjector> {
    let phys = x.to_physical();
    PointwiseProjector::from_samples(&x.grid, &phys, c)
}

impl PointwiseProjector {
    pub fn from_samples(grid: &Grid, x: &[Vec<f64>], c: f64) -> Result<Self> {
        let np = grid.points();
        let mut xs = vec![[0.0; 3]; np];
        let mut inv2 = vec![0.0; np];
        let mut min = f64::INFINITY;
        for idx in 0..np {
            for (k, comp) in x.iter().enumerate().take(3) {
                xs[idx][k] = comp[idx];
            }
            let n2 = xs[idx].iter().map(|v| v * v).sum::<f64>();
            min = min.min(n2.sqrt());
            inv2[idx] = 1.0 / n2;
        }
        if min < c {
            return Err(Error::DegenerateGradient(min));
        }
        Ok(PointwiseProjector { grid: grid.clone(), x: xs, inv2 })
    }

    pub fn min_norm(&self) -> f64 {
        self.inv2.iter().fold(f64::INFINITY, |m, v| m.min(1.0 / v.sqrt()))
    }

    pub fn matrix(&self, idx: usize) -> [[f64; 3]; 3] {
        let x = self.x[idx];
        let s = self.inv2[idx];
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = if i == j { 1.0 } else { 0.0 } - x[i] * x[j] * s;
            }
        }
        m
    }

    /// Π v at one point for a vector of `dim` complex components.
    #[inline]
    pub fn apply_at(&self, idx: usize, v: &[C64], out: &mut [C64]) {
        let x = self.x[idx];
        let mut d = C64::new(0.0, 0.0);
        for c in 0..v.len() {
            d += v[c] * x[c];
        }
        d *= self.inv2[idx];
        for c in 0..v.len() {
            out[c] = v[c] - d * x[c];
        }
    }

    pub fn apply(&self, u: &PhysProfile) -> PhysProfile {
        u.map_pointwise(u.components, |idx, v, o| self.apply_at(idx, v, o))
    }

    /// X·v / |X|² per harmonic.
    pub fn normal_coefficient(&self, u: &PhysProfile) -> PhysProfile {
        u.map_pointwise(1, |idx, v, o| {
            let x = self.x[idx];
            let mut d = C64::new(0.0, 0.0);
            for c in 0..v.len() {
                d += v[c] * x[c];
            }
            o[0] = d * self.inv2[idx];
        })
    }

    pub fn inv_norm2(&self, idx: usize) -> f64 {
        self.inv2[idx]
    }
}

/// ∂Π for Π = I − XXᵀ/|X|² along a variation dX of X.
#[inline]
pub fn projector_variation(x: &[f64; 3], dx: &[f64; 3]) -> [[f64; 3]; 3] {
    let n2: f64 = x.iter().map(|v| v * v).sum();
    let xd: f64 = x.iter().zip(dx).map(|(a, b)| a * b).sum();
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = -(dx[i] * x[j] + x[i] * dx[j]) / n2 + 2.0 * xd * x[i] * x[j] / (n2 * n2);
        }
    }
    m
}

fn mean_tolerance(scale: f64) -> f64 {
    1e-12 * scale.max(1.0)
}

/// Right inverse of the divergence: û = −iξĝ/|ξ|².
pub fn ridiv(g: &SpectralField) -> Result<SpectralField> {
    let n = g.grid.n;
    let peak = g.coeffs[0].iter().fold(0.0f64, |m, z| m.max(z.norm()));
    let m0 = g.coeffs[0][0].norm();
    if m0 > mean_tolerance(peak) {
        return Err(Error::NonZeroMean(m0));
    }
    let mut u = SpectralField::zeros(&g.grid, g.grid.dim);
    for idx in 0..g.grid.points() {
        let (a, b) = (deriv_wavenumber(n, idx / n), deriv_wavenumber(n, idx % n));
        let k2 = a * a + b * b;
        if k2 == 0.0 {
            continue;
        }
        let f = C64::new(0.0, -1.0) * g.coeffs[0][idx] / k2;
        u.coeffs[0][idx] = f * a;
        u.coeffs[1][idx] = f * b;
    }
    Ok(u)
}

fn check_theta_mean(u: &ProfileField) -> Result<()> {
    let peak = u.max_coeff();
    let m0 = u.modes[0].iter().flat_map(|v| v.iter()).fold(0.0f64, |m, z| m.max(z.norm()));
    if m0 > mean_tolerance(peak) {
        return Err(Error::NonZeroThetaMean(m0));
    }
    Ok(())
}

/// ∂_θ⁻¹ on θ-mean-free profiles: harmonic k ↦ harmonic/(ik).
pub fn theta_antiderivative(u: &ProfileField) -> Result<ProfileField> {
    check_theta_mean(u)?;
    Ok(theta_antiderivative_unchecked(u))
}

pub(crate) fn theta_antiderivative_unchecked(u: &ProfileField) -> ProfileField {
    let mut p = u.clone();
    for (k, m) in p.modes.iter_mut().enumerate() {
        let f = if k == 0 { C64::new(0.0, 0.0) } else { C64::new(0.0, -1.0 / k as f64) };
        m.iter_mut().for_each(|v| v.iter_mut().for_each(|z| *z *= f));
    }
    p
}

pub(crate) fn theta_antiderivative_phys(u: &PhysProfile) -> PhysProfile {
    let mut p = u.clone();
    for (k, m) in p.modes.iter_mut().enumerate() {
        let f = if k == 0 { C64::new(0.0, 0.0) } else { C64::new(0.0, -1.0 / k as f64) };
        m.iter_mut().for_each(|v| v.iter_mut().for_each(|z| *z *= f));
    }
    p
}

/// ε-scaled calculus attached to a phase: 𝔡_j = ε∂_j + (∂_jφ)∂_θ.
#[derive(Clone, Debug)]
pub struct SingularCalculus {
    pub epsilon: f64,
    pub phase: PhaseFunction,
    /// Lower bound required of ∂₁φ by the directional inverse.
    pub c: f64,
}

impl SingularCalculus {
    pub fn new(epsilon: f64, phase: PhaseFunction) -> Self {
        SingularCalculus { epsilon, phase, c: 1e-2 }
    }

    fn gradient_samples(&self) -> Vec<Vec<f64>> {
        self.phase.gradient().to_physical()
    }
}

/// 𝔡𝔦𝔳 u = εDiv u + X·∂_θu, products taken pointwise on the grid.
pub fn singular_div(u: &ProfileField, calc: &SingularCalculus) -> ProfileField {
    let x = calc.gradient_samples();
    let dtheta = u.theta_derivative().to_physical();
    let xdot = dtheta.map_pointwise(1, |idx, v, o| {
        let mut s = C64::new(0.0, 0.0);
        for c in 0..v.len().min(x.len()) {
            s += v[c] * x[c][idx];
        }
        o[0] = s;
    });
    u.divergence().scale(calc.epsilon).add(&xdot.to_spectral(&u.grid))
}

/// 𝔤𝔯𝔞𝔡 p = ε∇p + X∂_θp.
pub fn singular_grad(p: &ProfileField, calc: &SingularCalculus) -> ProfileField {
    let x = calc.gradient_samples();
    let dim = p.grid.dim;
    let dtheta = p.theta_derivative().to_physical();
    let xp = dtheta.map_pointwise(dim, |idx, v, o| {
        for c in 0..dim {
            o[c] = v[0] * x[c][idx];
        }
    });
    p.gradient().scale(calc.epsilon).add(&xp.to_spectral(&p.grid))
}

/// 𝔡_j applied componentwise.
pub fn singular_d(u: &ProfileField, calc: &SingularCalculus, j: usize) -> ProfileField {
    let x = calc.gradient_samples();
    let xj = if j < x.len() { x[j].clone() } else { vec![0.0; u.grid.points()] };
    let dtheta = u.theta_derivative().to_physical();
    let t = dtheta.map_pointwise(u.components, |idx, v, o| {
        for c in 0..v.len() {
            o[c] = v[c] * xj[idx];
        }
    });
    u.derivative(j).scale(calc.epsilon).add(&t.to_spectral(&u.grid))
}

/// Right inverse of 𝔡𝔦𝔳 on θ-mean-free scalar profiles.
///
/// Each harmonic solves εDiv v_k + ikX·v_k = g_k. When k·min∂₁φ/ε dominates
/// the grid's largest ε|ξ| the e₁-ansatz εv' + ikX₁v = g is solved exactly by
/// collocation along every x₁-line. Otherwise the equation is conjugated by
/// e^{ikφ/ε} on a refined grid, where it becomes εDiv w = e^{ikφ/ε}g_k and is
/// inverted by x₁-integration plus an x₂ completion for the line means.
pub fn ridiv_theta(g: &ProfileField, calc: &SingularCalculus) -> Result<ProfileField> {
    check_theta_mean(g)?;
    let grid = &g.grid;
    let n = grid.n;
    let xs = calc.gradient_samples();
    let min_x1 = xs[0].iter().fold(f64::INFINITY, |m, v| m.min(*v));
    if min_x1 < calc.c {
        return Err(Error::DegenerateDirection(min_x1));
    }
    let xmax = (0..grid.points())
        .map(|i| xs.iter().take(2).map(|c| c[i] * c[i]).sum::<f64>().sqrt())
        .fold(0.0f64, f64::max);
    let eps = calc.epsilon;
    let modes: Result<Vec<Vec<Vec<C64>>>> = (0..=g.kmax())
        .into_par_iter()
        .map(|k| {
            let dim = grid.dim;
            if k == 0 {
                return Ok(vec![vec![C64::new(0.0, 0.0); grid.points()]; dim]);
            }
            let kf = k as f64;
            if kf * min_x1 / eps > 0.625 * n as f64 {
                let v1 = collocation_line_solve(grid, &g.modes[k][0], &xs[0], kf, eps);
                let mut out = vec![v1];
                out.resize(dim, vec![C64::new(0.0, 0.0); grid.points()]);
                Ok(out)
            } else {
                let band = kf * xmax / eps + 0.75 * n as f64 + 8.0;
                let mut nm = n;
                while (nm as f64) < 2.0 * band {
                    nm *= 2;
                }
                if nm > 2048 {
                    return Err(Error::EpsilonTooSmallForGrid { eps, eps_min: kf * xmax / (0.5 * n as f64) });
                }
                let v = modulated_solve(grid, &g.modes[k][0], &calc.phase, kf, eps, nm)?;
                let r = harmonic_defect(grid, &v, &g.modes[k][0], &xs, kf, eps);
                let scale = g.modes[k][0].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                if r > 1e-8 * scale.max(1e-300) && r > 1e-13 {
                    return Err(Error::Unresolved(format!("harmonic {k}: relative defect {:.2e}", r / scale)));
                }
                Ok(v)
            }
        })
        .collect();
    Ok(ProfileField { grid: grid.clone(), components: grid.dim, modes: modes? })
}

/// ‖εDiv v + ikX·v − g‖ in coefficient 2-norm for one harmonic.
fn harmonic_defect(grid: &Grid, v: &[Vec<C64>], g: &[C64], xs: &[Vec<f64>], k: f64, eps: f64) -> f64 {
    let f = SpectralField { grid: grid.clone(), coeffs: v.to_vec() };
    let div = f.divergence().coeffs.remove(0);
    let phys = f.to_physical_complex();
    let xv: Vec<C64> = (0..grid.points())
        .map(|i| {
            let mut s = C64::new(0.0, 0.0);
            for c in 0..phys.len().min(xs.len()) {
                s += phys[c][i] * xs[c][i];
            }
            s * C64::new(0.0, k)
        })
        .collect();
    let xv = SpectralField::from_physical_complex(grid, vec![xv]).coeffs.remove(0);
    div.iter().zip(&xv).zip(g).map(|((d, x), gg)| (d * eps + x - gg).norm_sqr()).sum::<f64>().sqrt()
}

fn collocation_line_solve(grid: &Grid, gk: &[C64], x1: &[f64], k: f64, eps: f64) -> Vec<C64> {
    let n = grid.n;
    let gphys = {
        let f = SpectralField { grid: grid.clone(), coeffs: vec![gk.to_vec()] };
        f.to_physical_complex().remove(0)
    };
    // spectral differentiation matrix on an n-point periodic line
    let h = TWO_PI / n as f64;
    let mut d = DMatrix::<C64>::zeros(n, n);
    for j in 0..n {
        for m in 0..n {
            let mut s = C64::new(0.0, 0.0);
            for i in 0..n {
                let kk = deriv_wavenumber(n, i);
                s += C64::new(0.0, kk) * C64::from_polar(1.0, kk * (j as f64 - m as f64) * h);
            }
            d[(j, m)] = s / n as f64;
        }
    }
    let mut out = vec![C64::new(0.0, 0.0); n * n];
    let lines: Vec<(usize, Vec<C64>)> = (0..n)
        .into_par_iter()
        .map(|i2| {
            let mut a = d.scale(eps);
            let mut rhs = DVector::<C64>::zeros(n);
            for i1 in 0..n {
                let idx = i1 * n + i2;
                a[(i1, i1)] += C64::new(0.0, k * x1[idx]);
                rhs[i1] = gphys[idx];
            }
            let sol = a.lu().solve(&rhs).expect("diagonally dominant line operator");
            (i2, sol.iter().cloned().collect())
        })
        .collect();
    for (i2, sol) in lines {
        for i1 in 0..n {
            out[i1 * n + i2] = sol[i1];
        }
    }
    SpectralField::from_physical_complex(grid, vec![out]).coeffs.remove(0)
}

fn modulated_solve(grid: &Grid, gk: &[C64], phase: &PhaseFunction, k: f64, eps: f64, nm: usize) -> Result<Vec<Vec<C64>>> {
    let fine = grid.with_n(nm);
    let gf = SpectralField { grid: grid.clone(), coeffs: vec![gk.to_vec()] }.resample(nm);
    let ph = phase.resample(nm);
    let m = ph.modulation(k / eps)?;
    let gp = gf.to_physical_complex().remove(0);
    let big: Vec<C64> = gp.iter().zip(&m).map(|(a, b)| a * b / eps).collect();
    let gh = SpectralField::from_physical_complex(&fine, vec![big]).coeffs.remove(0);
    let peak = gh.iter().fold(0.0f64, |a, z| a.max(z.norm()));
    if gh[0].norm() > 1e-10 * peak.max(1e-300) && gh[0].norm() > 1e-14 {
        return Err(Error::Obstructed(gh[0].norm()));
    }
    let mut b1 = vec![C64::new(0.0, 0.0); nm * nm];
    let mut b2 = vec![C64::new(0.0, 0.0); nm * nm];
    for idx in 0..nm * nm {
        let a = deriv_wavenumber(nm, idx / nm);
        let b = deriv_wavenumber(nm, idx % nm);
        if a != 0.0 {
            b1[idx] = gh[idx] / C64::new(0.0, a);
        } else if idx / nm == 0 && b != 0.0 {
            b2[idx] = gh[idx] / C64::new(0.0, b);
        }
    }
    let w = SpectralField { grid: fine.clone(), coeffs: vec![b1, b2] }.to_physical_complex();
    let back: Vec<Vec<C64>> = w.into_iter().map(|c| c.iter().zip(&m).map(|(a, b)| a * b.conj()).collect()).collect();
    let v = SpectralField::from_physical_complex(&fine, back).resample(grid.n);
    let mut out = v.coeffs;
    out.resize(grid.dim, vec![C64::new(0.0, 0.0); grid.points()]);
    Ok(out)
}

/// Smallest ε for which e^{ikφ/ε}u_k stays inside the dealiasing band.
pub fn epsilon_min(grid: &Grid, phase: &PhaseFunction, kmax: usize) -> f64 {
    let x = phase.gradient().to_physical();
    let xmax = (0..grid.points())
        .map(|i| x.iter().take(2).map(|c| c[i] * c[i]).sum::<f64>().sqrt())
        .fold(0.0f64, f64::max);
    2.0 * kmax as f64 * xmax / grid.cutoff() as f64
}

/// Harmonic k ↦ e^{−ikφ/ε} P (e^{ikφ/ε} u_k), evaluated on the profile's own grid.
pub fn mode_projector(u: &ProfileField, calc: &SingularCalculus) -> Result<ProfileField> {
    let grid = &u.grid;
    let eps = calc.epsilon;
    let emin = epsilon_min(grid, &calc.phase, u.kmax());
    if eps < emin * (1.0 - 1e-12) {
        return Err(Error::EpsilonTooSmallForGrid { eps, eps_min: emin });
    }
    let modes: Result<Vec<Vec<Vec<C64>>>> = (0..=u.kmax())
        .into_par_iter()
        .map(|k| {
            let sf = SpectralField { grid: grid.clone(), coeffs: u.modes[k].clone() };
            if k == 0 {
                return Ok(leray_project(&sf).coeffs);
            }
            let m = calc.phase.modulation(k as f64 / eps)?;
            let phys: Vec<Vec<C64>> =
                sf.to_physical_complex().into_iter().map(|c| c.iter().zip(&m).map(|(a, b)| a * b).collect()).collect();
            let p = leray_project(&SpectralField::from_physical_complex(grid, phys));
            let back: Vec<Vec<C64>> =
                p.to_physical_complex().into_iter().map(|c| c.iter().zip(&m).map(|(a, b)| a * b.conj()).collect()).collect();
            Ok(SpectralField::from_physical_complex(grid, back).coeffs)
        })
        .collect();
    Ok(ProfileField { grid: grid.clone(), components: u.components, modes: modes? })
}

/// Pointwise Π^ε = I − XXᵀ/|X|² with X = ∇φ, applied per harmonic.
pub fn pointwise_mode_projector(u: &ProfileField, phase: &PhaseFunction) -> Result<ProfileField> {
    let proj = pointwise_projector(&phase.gradient(), 0.0)?;
    Ok(proj.apply(&u.to_physical()).to_spectral(&u.grid))
}

/// Samples of the base objects at one stored time, used by M and ℓ.
struct BaseAt {
    x: Vec<[f64; 3]>,
    /// ∂_tX + (u₀·∇)X
    dx: Vec<[f64; 3]>,
    /// grad u₀: gu[i][j] = ∂_j u₀^i
    gu: Vec<[[f64; 2]; 3]>,
}

fn base_at(base: &BaseFlow, snap: usize) -> BaseAt {
    let s = &base.snaps[snap];
    let grid = &base.grid;
    let np = grid.points();
    let dim = grid.dim;
    let xf = base.phase_at(snap).gradient();
    let x = xf.to_physical();
    let xdot = s.dpsi.gradient().to_physical();
    let dx1 = xf.derivative(0).to_physical();
    let dx2 = xf.derivative(1).to_physical();
    let u = s.u.to_physical();
    let du1 = s.u.derivative(0).to_physical();
    let du2 = s.u.derivative(1).to_physical();
    let mut out = BaseAt { x: vec![[0.0; 3]; np], dx: vec![[0.0; 3]; np], gu: vec![[[0.0; 2]; 3]; np] };
    for idx in 0..np {
        for c in 0..dim {
            out.x[idx][c] = x[c][idx];
            out.dx[idx][c] = xdot[c][idx] + u[0][idx] * dx1[c][idx] + u[1][idx] * dx2[c][idx];
            out.gu[idx][c] = [du1[c][idx], du2[c][idx]];
        }
    }
    out
}

/// M U = (∂_tΠ₀)U + ((u₀·∇)Π₀)U − Π₀(U·∇)u₀ at stored base snapshot `snap`.
pub fn apply_m(w: &ProfileField, base: &BaseFlow, snap: usize) -> ProfileField {
    let b = base_at(base, snap);
    let dim = w.grid.dim;
    let out = w.to_physical().map_pointwise(dim, |idx, v, o| {
        let dp = projector_variation(&b.x[idx], &b.dx[idx]);
        let x = b.x[idx];
        let n2: f64 = x.iter().map(|a| a * a).sum();
        let mut adv = [C64::new(0.0, 0.0); 3];
        for i in 0..dim {
            adv[i] = v[0] * b.gu[idx][i][0] + v[1] * b.gu[idx][i][1];
        }
        let xa: C64 = (0..dim).map(|i| adv[i] * x[i]).sum();
        for i in 0..dim {
            let mut s = C64::new(0.0, 0.0);
            for j in 0..dim {
                s += v[j] * dp[i][j];
            }
            o[i] = s - (adv[i] - xa * x[i] / n2);
        }
    });
    out.to_spectral(&w.grid)
}

/// ℓU = |X₀|⁻²[(∂_tX₀ + (u₀·∇)X₀)·U − X₀·((U·∇)u₀)].
pub fn apply_ell(u: &ProfileField, base: &BaseFlow, snap: usize) -> ProfileField {
    let b = base_at(base, snap);
    let dim = u.grid.dim;
    let out = u.to_physical().map_pointwise(1, |idx, v, o| {
        let x = b.x[idx];
        let n2: f64 = x.iter().map(|a| a * a).sum();
        let mut s = C64::new(0.0, 0.0);
        for i in 0..dim {
            s += v[i] * b.dx[idx][i];
            let adv = v[0] * b.gu[idx][i][0] + v[1] * b.gu[idx][i][1];
            s -= adv * x[i];
        }
        o[0] = s / n2;
    });
    out.to_spectral(&u.grid)
}

/// max over grid points of |Π² − Π| and |Πᵀ − Π| and |ΠX|.
pub fn projector_defects(p: &PointwiseProjector) -> (f64, f64, f64) {
    let mut idem = 0.0f64;
    let mut sym = 0.0f64;
    let mut ann = 0.0f64;
    for idx in 0..p.x.len() {
        let m = p.matrix(idx);
        for i in 0..3 {
            let mut px = 0.0;
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += m[i][k] * m[k][j];
                }
                idem = idem.max((s - m[i][j]).abs());
                sym = sym.max((m[i][j] - m[j][i]).abs());
                px += m[i][j] * p.x[idx][j];
            }
            ann = ann.max(px.abs());
        }
    }
    (idem, sym, ann)
}

//! Periodic fields on the torus [0,2π)² with an optional spectral θ axis.
//!
//! Spatial arrays are row-major with index `i1 * n + i2`, `i1` running along
//! x₁. Fourier coefficients use û(ξ) = n⁻² Σ f(x) e^{-iξ·x}, so cos x₁ has
//! coefficients 1/2 at ξ = (±1, 0). The fast variable θ is 2π-periodic and
//! always spectral: a profile stores harmonics k = 0..=K and the negative
//! ones are implied by conjugation (the represented field is real).
//!
//! Three-component fields on the 2D grid represent the 2.5D setting: the
//! third axis carries a velocity component but nothing depends on x₃.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const TWO_PI: f64 = 2.0 * PI;

/// Discretization parameters shared by every field of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    /// Number of velocity components: 2, or 3 for the 2.5D setting.
    pub dim: usize,
    /// Points per spatial axis.
    pub n: usize,
    /// Largest θ-harmonic a profile may carry.
    pub m_theta: usize,
    pub dt: f64,
    pub t_end: f64,
}

impl Grid {
    pub fn new(dim: usize, n: usize, m_theta: usize, dt: f64, t_end: f64) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidGrid(format!("dim must be 2 or 3, got {dim}")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!("n must be a power of two >= 8, got {n}")));
        }
        if m_theta < 1 {
            return Err(Error::InvalidGrid("m_theta must be >= 1".into()));
        }
        if !(dt > 0.0) || !(t_end > 0.0) {
            return Err(Error::InvalidGrid("dt and t_end must be positive".into()));
        }
        Ok(Grid { dim, n, m_theta, dt, t_end })
    }

    pub fn points(&self) -> usize {
        self.n * self.n
    }

    /// 2/3-rule cutoff: modes with |ξ_j| > n/3 on any axis are removed.
    pub fn cutoff(&self) -> usize {
        self.n / 3
    }

    /// Quadrature weight of one grid cell.
    pub fn cell_weight(&self) -> f64 {
        let h = TWO_PI / self.n as f64;
        h * h
    }

    pub fn coord(&self, i: usize) -> f64 {
        TWO_PI * i as f64 / self.n as f64
    }

    pub fn point(&self, idx: usize) -> [f64; 2] {
        [self.coord(idx / self.n), self.coord(idx % self.n)]
    }

    pub fn with_n(&self, n: usize) -> Grid {
        Grid { n, ..self.clone() }
    }

    pub fn with_dim(&self, dim: usize) -> Grid {
        Grid { dim, ..self.clone() }
    }

    /// Number of time steps covering [0, t_end].
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round().max(1.0) as usize
    }
}

/// Signed wavenumber of index `i` on an `n`-point axis; the Nyquist index maps to -n/2.
pub fn wavenumber(n: usize, i: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Wavenumber used for odd derivatives: the Nyquist mode is dropped.
pub fn deriv_wavenumber(n: usize, i: usize) -> f64 {
    if i == n / 2 {
        0.0
    } else {
        wavenumber(n, i) as f64
    }
}

pub fn index_of(n: usize, k1: i64, k2: i64) -> usize {
    let w = |k: i64| k.rem_euclid(n as i64) as usize;
    w(k1) * n + w(k2)
}

pub fn xi(n: usize, idx: usize) -> (f64, f64) {
    (wavenumber(n, idx / n) as f64, wavenumber(n, idx % n) as f64)
}

struct Plans {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

fn plans(n: usize) -> Arc<Plans> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Plans>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().unwrap();
    map.entry(n)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            Arc::new(Plans { fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) })
        })
        .clone()
}

fn transpose(n: usize, data: &mut [C64]) {
    for i in 0..n {
        for j in (i + 1)..n {
            data.swap(i * n + j, j * n + i);
        }
    }
}

/// In-place 2D transform. The forward direction carries the 1/n² factor.
pub fn fft2(n: usize, data: &mut [C64], inverse: bool) {
    let p = plans(n);
    let plan = if inverse { &p.inv } else { &p.fwd };
    plan.process(data);
    transpose(n, data);
    plan.process(data);
    transpose(n, data);
    if !inverse {
        let s = 1.0 / (n * n) as f64;
        data.iter_mut().for_each(|v| *v *= s);
    }
}

fn forward(n: usize, mut v: Vec<C64>) -> Vec<C64> {
    fft2(n, &mut v, false);
    v
}

fn inverse(n: usize, mut v: Vec<C64>) -> Vec<C64> {
    fft2(n, &mut v, true);
    v
}

fn dealias_array(n: usize, v: &mut [C64]) {
    let c = (n / 3) as i64;
    for (idx, z) in v.iter_mut().enumerate() {
        let k1 = wavenumber(n, idx / n).abs();
        let k2 = wavenumber(n, idx % n).abs();
        if k1 > c || k2 > c || idx / n == n / 2 || idx % n == n / 2 {
            *z = C64::new(0.0, 0.0);
        }
    }
}

fn derivative_array(n: usize, v: &[C64], axis: usize) -> Vec<C64> {
    if axis >= 2 {
        return vec![C64::new(0.0, 0.0); v.len()];
    }
    v.iter()
        .enumerate()
        .map(|(idx, z)| {
            let k = if axis == 0 { deriv_wavenumber(n, idx / n) } else { deriv_wavenumber(n, idx % n) };
            z * C64::new(0.0, k)
        })
        .collect()
}

fn k2_array(n: usize, idx: usize) -> f64 {
    let (a, b) = xi(n, idx);
    a * a + b * b
}

fn resample_array(n_from: usize, n_to: usize, v: &[C64]) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); n_to * n_to];
    let m = n_from.min(n_to);
    let half = (m / 2) as i64;
    for (idx, z) in v.iter().enumerate() {
        let k1 = wavenumber(n_from, idx / n_from);
        let k2 = wavenumber(n_from, idx % n_from);
        if k1.abs() < half && k2.abs() < half {
            out[index_of(n_to, k1, k2)] = *z;
        }
    }
    out
}

/// Spectral coefficients of a real field with one or more components.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    pub grid: Grid,
    pub coeffs: Vec<Vec<C64>>,
}

impl SpectralField {
    pub fn zeros(grid: &Grid, components: usize) -> Self {
        SpectralField { grid: grid.clone(), coeffs: vec![vec![C64::new(0.0, 0.0); grid.points()]; components] }
    }

    pub fn components(&self) -> usize {
        self.coeffs.len()
    }

    /// Forward transform of real samples, one array per component.
    pub fn to_spectral(grid: &Grid, samples: &[Vec<f64>]) -> Result<Self> {
        for s in samples {
            if s.len() != grid.points() {
                return Err(Error::ShapeMismatch { expected: grid.points(), got: s.len() });
            }
        }
        let coeffs = samples
            .par_iter()
            .map(|s| forward(grid.n, s.iter().map(|&x| C64::new(x, 0.0)).collect()))
            .collect();
        Ok(SpectralField { grid: grid.clone(), coeffs })
    }

    /// Build from a closure sampled at grid points.
    pub fn from_fn<F>(grid: &Grid, components: usize, f: F) -> Self
    where
        F: Fn(f64, f64) -> Vec<f64> + Sync,
    {
        let pts: Vec<Vec<f64>> = (0..grid.points())
            .into_par_iter()
            .map(|idx| {
                let [x1, x2] = grid.point(idx);
                f(x1, x2)
            })
            .collect();
        let samples: Vec<Vec<f64>> = (0..components).map(|c| pts.iter().map(|p| p[c]).collect()).collect();
        SpectralField::to_spectral(grid, &samples).expect("sampled on the grid")
    }

    pub fn scalar_from_fn<F>(grid: &Grid, f: F) -> Self
    where
        F: Fn(f64, f64) -> f64 + Sync,
    {
        SpectralField::from_fn(grid, 1, |a, b| vec![f(a, b)])
    }

    pub fn from_physical_complex(grid: &Grid, data: Vec<Vec<C64>>) -> Self {
        let coeffs = data.into_par_iter().map(|v| forward(grid.n, v)).collect();
        SpectralField { grid: grid.clone(), coeffs }
    }

    pub fn to_physical(&self) -> Vec<Vec<f64>> {
        self.to_physical_complex().into_iter().map(|v| v.into_iter().map(|z| z.re).collect()).collect()
    }

    pub fn to_physical_complex(&self) -> Vec<Vec<C64>> {
        self.coeffs.par_iter().map(|v| inverse(self.grid.n, v.clone())).collect()
    }

    pub fn component(&self, c: usize) -> SpectralField {
        SpectralField { grid: self.grid.clone(), coeffs: vec![self.coeffs[c].clone()] }
    }

    pub fn from_components(parts: &[SpectralField]) -> SpectralField {
        SpectralField { grid: parts[0].grid.clone(), coeffs: parts.iter().flat_map(|p| p.coeffs.clone()).collect() }
    }

    /// ∂_axis applied to every component; axis 2 (x₃) gives zero.
    pub fn derivative(&self, axis: usize) -> SpectralField {
        let n = self.grid.n;
        SpectralField { grid: self.grid.clone(), coeffs: self.coeffs.iter().map(|v| derivative_array(n, v, axis)).collect() }
    }

    /// Gradient of a scalar field with `grid.dim` components.
    pub fn gradient(&self) -> SpectralField {
        let n = self.grid.n;
        let coeffs = (0..self.grid.dim).map(|a| derivative_array(n, &self.coeffs[0], a)).collect();
        SpectralField { grid: self.grid.clone(), coeffs }
    }

    pub fn divergence(&self) -> SpectralField {
        let n = self.grid.n;
        let mut out = vec![C64::new(0.0, 0.0); self.grid.points()];
        for (a, v) in self.coeffs.iter().enumerate().take(2) {
            for (o, d) in out.iter_mut().zip(derivative_array(n, v, a)) {
                *o += d;
            }
        }
        SpectralField { grid: self.grid.clone(), coeffs: vec![out] }
    }

    pub fn laplacian(&self) -> SpectralField {
        let n = self.grid.n;
        let coeffs = self
            .coeffs
            .iter()
            .map(|v| v.iter().enumerate().map(|(i, z)| z * (-k2_array(n, i))).collect())
            .collect();
        SpectralField { grid: self.grid.clone(), coeffs }
    }

    pub fn dealias(&mut self) {
        let n = self.grid.n;
        self.coeffs.iter_mut().for_each(|v| dealias_array(n, v));
    }

    pub fn dealiased(&self) -> SpectralField {
        let mut f = self.clone();
        f.dealias();
        f
    }

    /// Grid-weighted L² norm, ‖f‖² = (2π)² Σ_ξ |f̂(ξ)|².
    pub fn l2_norm(&self) -> f64 {
        let s: f64 = self.coeffs.iter().flat_map(|v| v.iter()).map(|z| z.norm_sqr()).sum();
        (TWO_PI * TWO_PI * s).sqrt()
    }

    /// Real L² inner product.
    pub fn inner(&self, other: &SpectralField) -> f64 {
        let s: f64 = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x * y.conj()).re))
            .sum();
        TWO_PI * TWO_PI * s
    }

    pub fn max_abs_physical(&self) -> f64 {
        self.to_physical().iter().flat_map(|v| v.iter()).fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn mean_coeff(&self, c: usize) -> C64 {
        self.coeffs[c][0]
    }

    /// Largest |coeff(-ξ) - conj(coeff(ξ))|; zero for a real field.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.grid.n;
        let mut worst = 0.0f64;
        for v in &self.coeffs {
            for idx in 0..v.len() {
                let (a, b) = xi(n, idx);
                let j = index_of(n, -(a as i64), -(b as i64));
                worst = worst.max((v[j] - v[idx].conj()).norm());
            }
        }
        worst
    }

    pub fn scale(&self, s: f64) -> SpectralField {
        self.map(|z| z * s)
    }

    pub fn map<F: Fn(C64) -> C64>(&self, f: F) -> SpectralField {
        SpectralField { grid: self.grid.clone(), coeffs: self.coeffs.iter().map(|v| v.iter().map(|z| f(*z)).collect()).collect() }
    }

    pub fn add(&self, other: &SpectralField) -> SpectralField {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &SpectralField) -> SpectralField {
        self.axpy(-1.0, other)
    }

    /// self + a·other
    pub fn axpy(&self, a: f64, other: &SpectralField) -> SpectralField {
        assert_eq!(self.components(), other.components(), "component count");
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q * a).collect())
            .collect();
        SpectralField { grid: self.grid.clone(), coeffs }
    }

    /// Zero-padded (or truncated) copy on an n'-point grid.
    pub fn resample(&self, n: usize) -> SpectralField {
        let grid = self.grid.with_n(n);
        let coeffs = self.coeffs.iter().map(|v| resample_array(self.grid.n, n, v)).collect();
        SpectralField { grid, coeffs }
    }

    pub fn evaluator(&self, c: usize) -> PointEvaluator {
        PointEvaluator::new(self.grid.n, &self.coeffs[c])
    }
}

/// Direct Fourier-series evaluation at arbitrary points, skipping negligible modes.
#[derive(Clone, Debug)]
pub struct PointEvaluator {
    terms: Vec<(f64, f64, C64)>,
}

impl PointEvaluator {
    pub fn new(n: usize, coeffs: &[C64]) -> Self {
        let peak = coeffs.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        let floor = peak * 1e-16;
        let terms = coeffs
            .iter()
            .enumerate()
            .filter(|(_, z)| z.norm() > floor && peak > 0.0)
            .map(|(idx, z)| {
                let (a, b) = xi(n, idx);
                (a, b, *z)
            })
            .collect();
        PointEvaluator { terms }
    }

    pub fn eval(&self, x: [f64; 2]) -> f64 {
        self.terms.iter().map(|(a, b, z)| (z * C64::from_polar(1.0, a * x[0] + b * x[1])).re).sum()
    }

    /// Value and gradient at `x`.
    pub fn eval_grad(&self, x: [f64; 2]) -> (f64, [f64; 2]) {
        let mut v = 0.0;
        let mut g = [0.0; 2];
        for (a, b, z) in &self.terms {
            let w = z * C64::from_polar(1.0, a * x[0] + b * x[1]);
            v += w.re;
            g[0] -= a * w.im;
            g[1] -= b * w.im;
        }
        (v, g)
    }
}

/// Shell-summed spectrum Ẽ(k) = (2π)² Σ_{k-1/2<|ξ|≤k+1/2} Σ_c |û_c(ξ)|².
pub fn shell_spectrum(u: &SpectralField) -> Vec<f64> {
    let n = u.grid.n;
    let kmax = ((n as f64 / 2.0) * 2f64.sqrt()).ceil() as usize + 1;
    let mut e = vec![0.0; kmax + 1];
    for v in &u.coeffs {
        for (idx, z) in v.iter().enumerate() {
            let r = k2_array(n, idx).sqrt();
            let shell = if r == 0.0 { 0 } else { (r - 0.5).ceil() as usize };
            e[shell] += TWO_PI * TWO_PI * z.norm_sqr();
        }
    }
    e
}

/// Profile u(x,θ) = Σ_k u_k(x) e^{ikθ}: spectral x-coefficients for k = 0..=K.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileField {
    pub grid: Grid,
    pub components: usize,
    /// modes[k][c][ξ-index]
    pub modes: Vec<Vec<Vec<C64>>>,
}

impl ProfileField {
    pub fn zeros(grid: &Grid, components: usize, kmax: usize) -> Self {
        let z = vec![C64::new(0.0, 0.0); grid.points()];
        ProfileField { grid: grid.clone(), components, modes: vec![vec![z; components]; kmax + 1] }
    }

    pub fn from_mean(mean: &SpectralField) -> Self {
        ProfileField { grid: mean.grid.clone(), components: mean.components(), modes: vec![mean.coeffs.clone()] }
    }

    /// Samples harmonic k ≥ 0 of component c from `f(k, c, x1, x2)`.
    /// For a real profile a(x)cos θ the k = 1 value is a/2.
    pub fn from_fn<F>(grid: &Grid, components: usize, kmax: usize, f: F) -> Self
    where
        F: Fn(usize, usize, f64, f64) -> C64 + Sync,
    {
        let n = grid.n;
        let modes = (0..=kmax)
            .map(|k| {
                (0..components)
                    .map(|c| (0..n * n).map(|idx| f(k, c, grid.coord(idx / n), grid.coord(idx % n))).collect())
                    .collect()
            })
            .collect();
        PhysProfile { n, components, modes }.to_spectral(grid)
    }

    pub fn kmax(&self) -> usize {
        self.modes.len() - 1
    }

    pub fn mean(&self) -> SpectralField {
        SpectralField { grid: self.grid.clone(), coeffs: self.modes[0].clone() }
    }

    pub fn oscillating(&self) -> ProfileField {
        let mut p = self.clone();
        p.modes[0].iter_mut().for_each(|v| v.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0)));
        p
    }

    /// Harmonic `k` (negative k by conjugation) of component `c` as ξ-coefficients.
    pub fn harmonic(&self, k: i64, c: usize) -> Vec<C64> {
        let ka = k.unsigned_abs() as usize;
        if ka > self.kmax() {
            return vec![C64::new(0.0, 0.0); self.grid.points()];
        }
        if k >= 0 {
            return self.modes[ka][c].clone();
        }
        let n = self.grid.n;
        let v = &self.modes[ka][c];
        (0..v.len())
            .map(|idx| {
                let (a, b) = xi(n, idx);
                v[index_of(n, -(a as i64), -(b as i64))].conj()
            })
            .collect()
    }

    pub fn theta_derivative(&self) -> ProfileField {
        let mut p = self.clone();
        for (k, m) in p.modes.iter_mut().enumerate() {
            let f = C64::new(0.0, k as f64);
            m.iter_mut().for_each(|v| v.iter_mut().for_each(|z| *z *= f));
        }
        p
    }

    pub fn derivative(&self, axis: usize) -> ProfileField {
        let n = self.grid.n;
        let modes = self.modes.iter().map(|m| m.iter().map(|v| derivative_array(n, v, axis)).collect()).collect();
        ProfileField { grid: self.grid.clone(), components: self.components, modes }
    }

    /// Δ_x, or Δ_x + ∂_θ² when `with_theta`.
    pub fn laplacian(&self, with_theta: bool) -> ProfileField {
        let n = self.grid.n;
        let modes = self
            .modes
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let kk = if with_theta { (k * k) as f64 } else { 0.0 };
                m.iter().map(|v| v.iter().enumerate().map(|(i, z)| z * (-(k2_array(n, i) + kk))).collect()).collect()
            })
            .collect();
        ProfileField { grid: self.grid.clone(), components: self.components, modes }
    }

    /// Σ over axes of ∂_a (component a); scalar result.
    pub fn divergence(&self) -> ProfileField {
        let n = self.grid.n;
        let modes = self
            .modes
            .iter()
            .map(|m| {
                let mut out = vec![C64::new(0.0, 0.0); self.grid.points()];
                for (a, v) in m.iter().enumerate().take(2) {
                    for (o, d) in out.iter_mut().zip(derivative_array(n, v, a)) {
                        *o += d;
                    }
                }
                vec![out]
            })
            .collect();
        ProfileField { grid: self.grid.clone(), components: 1, modes }
    }

    pub fn gradient(&self) -> ProfileField {
        let n = self.grid.n;
        let dim = self.grid.dim;
        let modes = self.modes.iter().map(|m| (0..dim).map(|a| derivative_array(n, &m[0], a)).collect()).collect();
        ProfileField { grid: self.grid.clone(), components: dim, modes }
    }

    pub fn dealias(&mut self) {
        let n = self.grid.n;
        self.modes.iter_mut().for_each(|m| m.iter_mut().for_each(|v| dealias_array(n, v)));
    }

    pub fn dealiased(&self) -> ProfileField {
        let mut p = self.clone();
        p.dealias();
        p
    }

    /// ‖u‖² = (2π)² Σ_{k∈ℤ} Σ_ξ |û_k(ξ)|²; the θ-measure is normalized.
    pub fn l2_norm(&self) -> f64 {
        self.sobolev_norm(0)
    }

    /// (Σ_{k∈ℤ} (1+k²)^m Σ_ξ (1+|ξ|²)^m |û_k(ξ)|²)^{1/2} with the (2π)² box weight.
    /// Negative harmonics are counted through their conjugate partners.
    pub fn sobolev_norm(&self, m: u32) -> f64 {
        let n = self.grid.n;
        let mut s = 0.0;
        for (k, modes) in self.modes.iter().enumerate() {
            let wk = (1.0 + (k * k) as f64).powi(m as i32) * if k == 0 { 1.0 } else { 2.0 };
            for v in modes {
                for (idx, z) in v.iter().enumerate() {
                    s += wk * (1.0 + k2_array(n, idx)).powi(m as i32) * z.norm_sqr();
                }
            }
        }
        (TWO_PI * TWO_PI * s).sqrt()
    }

    /// Real L²(x,θ) inner product.
    pub fn inner(&self, other: &ProfileField) -> f64 {
        let mut s = 0.0;
        let kk = self.kmax().min(other.kmax());
        for k in 0..=kk {
            let w = if k == 0 { 1.0 } else { 2.0 };
            for (a, b) in self.modes[k].iter().zip(&other.modes[k]) {
                s += w * a.iter().zip(b).map(|(x, y)| (x * y.conj()).re).sum::<f64>();
            }
        }
        TWO_PI * TWO_PI * s
    }

    pub fn with_kmax(&self, kmax: usize) -> ProfileField {
        let mut p = self.clone();
        let z = vec![C64::new(0.0, 0.0); self.grid.points()];
        p.modes.resize(kmax + 1, vec![z; self.components]);
        p
    }

    pub fn axpy(&self, a: f64, other: &ProfileField) -> ProfileField {
        let kk = self.kmax().max(other.kmax());
        let mut out = self.with_kmax(kk);
        for (k, m) in other.modes.iter().enumerate() {
            for (c, v) in m.iter().enumerate() {
                for (o, z) in out.modes[k][c].iter_mut().zip(v) {
                    *o += z * a;
                }
            }
        }
        out
    }

    pub fn add(&self, other: &ProfileField) -> ProfileField {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &ProfileField) -> ProfileField {
        self.axpy(-1.0, other)
    }

    pub fn scale(&self, s: f64) -> ProfileField {
        let mut p = self.clone();
        p.modes.iter_mut().for_each(|m| m.iter_mut().for_each(|v| v.iter_mut().for_each(|z| *z *= s)));
        p
    }

    pub fn component(&self, c: usize) -> ProfileField {
        ProfileField {
            grid: self.grid.clone(),
            components: 1,
            modes: self.modes.iter().map(|m| vec![m[c].clone()]).collect(),
        }
    }

    pub fn resample(&self, n: usize) -> ProfileField {
        let grid = self.grid.with_n(n);
        let modes = self.modes.iter().map(|m| m.iter().map(|v| resample_array(self.grid.n, n, v)).collect()).collect();
        ProfileField { grid, components: self.components, modes }
    }

    pub fn max_coeff(&self) -> f64 {
        self.modes.iter().flat_map(|m| m.iter().flat_map(|v| v.iter())).fold(0.0f64, |a, z| a.max(z.norm()))
    }

    pub fn to_physical(&self) -> PhysProfile {
        let n = self.grid.n;
        let modes = self.modes.par_iter().map(|m| m.iter().map(|v| inverse(n, v.clone())).collect()).collect();
        PhysProfile { n, components: self.components, modes }
    }
}

/// A profile sampled on the x-grid: complex values of each harmonic k = 0..=K.
#[derive(Clone, Debug, PartialEq)]
pub struct PhysProfile {
    pub n: usize,
    pub components: usize,
    pub modes: Vec<Vec<Vec<C64>>>,
}

impl PhysProfile {
    pub fn zeros(n: usize, components: usize, kmax: usize) -> Self {
        PhysProfile { n, components, modes: vec![vec![vec![C64::new(0.0, 0.0); n * n]; components]; kmax + 1] }
    }

    /// θ-independent profile from real samples.
    pub fn from_real(n: usize, values: &[Vec<f64>]) -> Self {
        let m = values.iter().map(|v| v.iter().map(|&x| C64::new(x, 0.0)).collect()).collect();
        PhysProfile { n, components: values.len(), modes: vec![m] }
    }

    pub fn kmax(&self) -> usize {
        self.modes.len() - 1
    }

    pub fn points(&self) -> usize {
        self.n * self.n
    }

    pub fn to_spectral(&self, grid: &Grid) -> ProfileField {
        assert_eq!(grid.n, self.n, "grid size");
        let n = self.n;
        let modes = self.modes.par_iter().map(|m| m.iter().map(|v| forward(n, v.clone())).collect()).collect();
        ProfileField { grid: grid.clone(), components: self.components, modes }
    }

    #[inline]
    pub fn value(&self, k: i64, c: usize, idx: usize) -> C64 {
        let ka = k.unsigned_abs() as usize;
        if ka > self.kmax() {
            return C64::new(0.0, 0.0);
        }
        let z = self.modes[ka][c][idx];
        if k < 0 {
            z.conj()
        } else {
            z
        }
    }

    /// Apply a real-linear pointwise map to each harmonic; `f(idx, input, output)`.
    pub fn map_pointwise<F>(&self, out_components: usize, f: F) -> PhysProfile
    where
        F: Fn(usize, &[C64], &mut [C64]) + Sync,
    {
        let np = self.points();
        let comps = self.components;
        let modes = self
            .modes
            .par_iter()
            .map(|m| {
                let mut out = vec![vec![C64::new(0.0, 0.0); np]; out_components];
                let mut a = vec![C64::new(0.0, 0.0); comps];
                let mut o = vec![C64::new(0.0, 0.0); out_components];
                for idx in 0..np {
                    for c in 0..comps {
                        a[c] = m[c][idx];
                    }
                    f(idx, &a, &mut o);
                    for c in 0..out_components {
                        out[c][idx] = o[c];
                    }
                }
                out
            })
            .collect();
        PhysProfile { n: self.n, components: out_components, modes }
    }

    /// Pointwise product with harmonic convolution: out_h = Σ_{p+q=h} f(a_p, b_q), h = 0..=kout.
    /// `f` must be bilinear; it accumulates into the output slice.
    pub fn bilinear<F>(a: &PhysProfile, b: &PhysProfile, kout: usize, out_components: usize, f: F) -> PhysProfile
    where
        F: Fn(&[C64], &[C64], &mut [C64]) + Sync,
    {
        let n = a.n;
        let np = n * n;
        let ka = a.kmax() as i64;
        let kb = b.kmax() as i64;
        let kout = kout.min((ka + kb) as usize);
        let modes = (0..=kout as i64)
            .into_par_iter()
            .map(|h| {
                let mut out = vec![vec![C64::new(0.0, 0.0); np]; out_components];
                let mut av = vec![C64::new(0.0, 0.0); a.components];
                let mut bv = vec![C64::new(0.0, 0.0); b.components];
                let mut o = vec![C64::new(0.0, 0.0); out_components];
                for p in -ka..=ka {
                    let q = h - p;
                    if q.abs() > kb {
                        continue;
                    }
                    for idx in 0..np {
                        for c in 0..a.components {
                            av[c] = a.value(p, c, idx);
                        }
                        for c in 0..b.components {
                            bv[c] = b.value(q, c, idx);
                        }
                        o.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
                        f(&av, &bv, &mut o);
                        for c in 0..out_components {
                            out[c][idx] += o[c];
                        }
                    }
                }
                out
            })
            .collect();
        PhysProfile { n, components: out_components, modes }
    }

    pub fn with_kmax(&self, kmax: usize) -> PhysProfile {
        let mut p = self.clone();
        p.modes.resize(kmax + 1, vec![vec![C64::new(0.0, 0.0); self.points()]; self.components]);
        p
    }

    pub fn axpy(&self, a: f64, other: &PhysProfile) -> PhysProfile {
        let kk = self.kmax().max(other.kmax());
        let mut out = self.with_kmax(kk);
        for (k, m) in other.modes.iter().enumerate() {
            for (c, v) in m.iter().enumerate() {
                for (o, z) in out.modes[k][c].iter_mut().zip(v) {
                    *o += z * a;
                }
            }
        }
        out
    }

    pub fn add(&self, other: &PhysProfile) -> PhysProfile {
        self.axpy(1.0, other)
    }

    pub fn scale(&self, s: f64) -> PhysProfile {
        let mut p = self.clone();
        p.modes.iter_mut().for_each(|m| m.iter_mut().for_each(|v| v.iter_mut().for_each(|z| *z *= s)));
        p
    }

    pub fn theta_derivative(&self) -> PhysProfile {
        let mut p = self.clone();
        for (k, m) in p.modes.iter_mut().enumerate() {
            let f = C64::new(0.0, k as f64);
            m.iter_mut().for_each(|v| v.iter_mut().for_each(|z| *z *= f));
        }
        p
    }

    pub fn oscillating(&self) -> PhysProfile {
        let mut p = self.clone();
        p.modes[0].iter_mut().for_each(|v| v.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0)));
        p
    }

    /// Concatenate the components of several profiles; harmonics are padded to the largest.
    pub fn stack(parts: &[&PhysProfile]) -> PhysProfile {
        let kmax = parts.iter().map(|p| p.kmax()).max().unwrap_or(0);
        let n = parts[0].n;
        let mut modes = vec![Vec::new(); kmax + 1];
        for p in parts {
            let p = p.with_kmax(kmax);
            for (k, m) in p.modes.into_iter().enumerate() {
                modes[k].extend(m);
            }
        }
        PhysProfile { n, components: parts.iter().map(|p| p.components).sum(), modes }
    }

    /// Real part of the mean harmonic.
    pub fn mean_real(&self) -> Vec<Vec<f64>> {
        self.modes[0].iter().map(|v| v.iter().map(|z| z.re).collect()).collect()
    }
}

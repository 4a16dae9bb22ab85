//! The induction producing the profiles Ũ_k, pressures P̃_k, correctors V*_k
//! and phases φ_k, and the dictionary to geometric-phase profiles.
//!
//! Notation: s = ε^{1/l}. Order m carries the state (Ū_m, ψ_m, Q_m) with
//! Q_m = Π₀U*_m. The normal part of U*_m is not free: X₀·U*_m = n_m with
//! n_m = V*_m − Σ_{i=1}^{m−1} X_i·U*_{m−i}. All orders are advanced together
//! by one RK4 loop; within a stage they are evaluated in increasing m since
//! order m only reads orders below it.

use std::sync::Arc;

use crate::baseflow::BaseFlow;
use crate::error::{Error, Result};
use crate::field::{Grid, PhysProfile, ProfileField, SpectralField, C64};
use crate::operators::{
    leray_project, pointwise_projector, pressure_from_flux, projector_variation, theta_antiderivative_phys,
    theta_antiderivative_unchecked, PhaseFunction,
};

#[derive(Clone, Debug, PartialEq)]
pub struct CascadeConfig {
    /// Oscillation exponent denominator.
    pub l: usize,
    /// Expansion order N.
    pub order: usize,
    pub nu: f64,
    pub grid: Grid,
    pub scenario: String,
    /// Store a snapshot every this many steps (the last step is always stored).
    pub snapshot_every: usize,
    /// Project unpolarized data instead of rejecting it.
    pub auto_project: bool,
    pub drift_tol: f64,
}

impl CascadeConfig {
    pub fn new(l: usize, order: usize, nu: f64, grid: Grid) -> Result<Self> {
        let c = CascadeConfig {
            l,
            order,
            nu,
            grid,
            scenario: "shear".into(),
            snapshot_every: 10,
            auto_project: false,
            drift_tol: 1e-6,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.l == 0 || self.l >= self.order {
            return Err(Error::Config(format!("need 0 < l < N, got l={} N={}", self.l, self.order)));
        }
        if self.nu < 0.0 {
            return Err(Error::Config("nu must be nonnegative".into()));
        }
        if self.snapshot_every == 0 {
            return Err(Error::Config("snapshot_every must be positive".into()));
        }
        Ok(())
    }

    /// N/l − 3 − d/2, the predicted decay exponent of the assembled residual.
    pub fn asymptotic_exponent(&self) -> f64 {
        self.order as f64 / self.l as f64 - 3.0 - self.grid.dim as f64 / 2.0
    }
}

/// Initial data; index k−1 holds order k.
#[derive(Clone, Debug)]
pub struct CascadeData {
    pub ubar: Vec<SpectralField>,
    pub ustar: Vec<ProfileField>,
    pub phases: Vec<PhaseFunction>,
}

impl CascadeData {
    pub fn zeros(grid: &Grid, order: usize) -> Self {
        CascadeData {
            ubar: vec![SpectralField::zeros(grid, grid.dim); order],
            ustar: vec![ProfileField::zeros(grid, grid.dim, 1); order],
            phases: vec![PhaseFunction::zero(grid); order],
        }
    }
}

#[derive(Clone, Debug)]
struct OrderState {
    ubar: SpectralField,
    psi: SpectralField,
    q: ProfileField,
}

impl OrderState {
    fn axpy(&self, a: f64, r: &OrderFields) -> OrderState {
        OrderState { ubar: self.ubar.axpy(a, &r.dubar), psi: self.psi.axpy(a, &r.dpsi), q: self.q.axpy(a, &r.dq) }
    }
}

/// Everything known about one order at one time.
#[derive(Clone, Debug)]
pub struct OrderFields {
    pub m: usize,
    pub ubar: SpectralField,
    pub dubar: SpectralField,
    pub pbar: SpectralField,
    pub linear: [f64; 3],
    pub psi: SpectralField,
    pub dpsi: SpectralField,
    /// Π₀U*_m
    pub q: ProfileField,
    pub dq: ProfileField,
    pub ustar: ProfileField,
    /// ∂_t U*_m
    pub d: ProfileField,
    /// Oscillating balance of order m without the X₀∂_θP*_{m+l} term.
    pub e: ProfileField,
}

impl OrderFields {
    pub fn phase(&self) -> PhaseFunction {
        PhaseFunction::new(self.linear, self.psi.clone())
    }

    /// Ū_m + U*_m as one profile.
    pub fn profile(&self) -> ProfileField {
        let mut p = self.ustar.clone();
        p.modes[0] = self.ubar.coeffs.clone();
        p
    }

    /// ∂_t of the full profile.
    pub fn profile_rate(&self) -> ProfileField {
        let mut p = self.d.clone();
        p.modes[0] = self.dubar.coeffs.clone();
        p
    }
}

#[derive(Clone, Debug)]
pub struct CascadeSnapshot {
    pub t: f64,
    pub step: usize,
    pub base_index: usize,
    /// Index m−1 holds order m.
    pub orders: Vec<OrderFields>,
    /// Index q = 0..=N+l; identically zero for q ≤ l.
    pub pstar: Vec<ProfileField>,
    pub vstar: Vec<ProfileField>,
    pub dvstar: Vec<ProfileField>,
}

impl CascadeSnapshot {
    pub fn order(&self, m: usize) -> &OrderFields {
        &self.orders[m - 1]
    }

    /// P̄_m + P*_m
    pub fn pressure(&self, m: usize) -> ProfileField {
        let o = self.order(m);
        let mut p = self.pstar[m].with_kmax(self.pstar[m].kmax().max(1));
        for (z, w) in p.modes[0][0].iter_mut().zip(&o.pbar.coeffs[0]) {
            *z += w;
        }
        p
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LedgerEntry {
    pub order: usize,
    pub name: String,
    pub value: f64,
}

/// One additive contribution to a source, with the orders it couples.
#[derive(Clone, Debug)]
pub struct SourceTerm {
    pub label: String,
    pub k: usize,
    /// Power of s carried by the term inside the order-m balance.
    pub power: usize,
    pub field: ProfileField,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceEquation {
    Mean,
    Oscillation,
    Phase,
}

#[derive(Clone, Debug)]
pub struct CascadeState {
    pub config: CascadeConfig,
    pub base: Arc<BaseFlow>,
    pub data: CascadeData,
    /// Largest θ-harmonic of each order (index m−1).
    pub kmax: Vec<usize>,
    current: Vec<OrderState>,
    pub t: f64,
    pub step: usize,
    pub steps_total: usize,
    pub snapshots: Vec<CascadeSnapshot>,
    /// (t, largest relative polarization drift before re-projection)
    pub drift_log: Vec<(f64, f64)>,
    pub ledger: Vec<LedgerEntry>,
    pub warnings: Vec<String>,
    /// Orders whose induction hypotheses have been checked.
    pub established: usize,
}

fn highest_harmonic(p: &ProfileField) -> usize {
    (0..=p.kmax()).rev().find(|&k| p.modes[k].iter().any(|v| v.iter().any(|z| z.norm() > 0.0))).unwrap_or(0)
}

fn polarization_defect(u: &ProfileField, base: &BaseFlow, bi: usize) -> Result<f64> {
    let norm = u.l2_norm();
    if norm == 0.0 {
        return Ok(0.0);
    }
    let proj = base.projector(bi)?;
    let pu = proj.apply(&u.to_physical()).to_spectral(&u.grid);
    Ok(u.sub(&pu).l2_norm() / norm)
}

/// Validate data and build the t = 0 state.
pub fn init_cascade(config: CascadeConfig, base: Arc<BaseFlow>, data: CascadeData) -> Result<CascadeState> {
    config.validate()?;
    let grid = config.grid.clone();
    let big_n = config.order;
    if base.grid.n != grid.n || base.grid.dim != grid.dim || (base.grid.dt - grid.dt).abs() > 1e-15 {
        return Err(Error::GridMismatch);
    }
    if data.ubar.len() != big_n || data.ustar.len() != big_n || data.phases.len() != big_n {
        return Err(Error::ShapeMismatch { expected: big_n, got: data.ubar.len().min(data.ustar.len()).min(data.phases.len()) });
    }
    for k in 0..big_n {
        if data.ubar[k].grid.n != grid.n || data.ustar[k].grid.n != grid.n || data.phases[k].grid().n != grid.n {
            return Err(Error::GridMismatch);
        }
        if data.ubar[k].components() != grid.dim || data.ustar[k].components != grid.dim {
            return Err(Error::GridMismatch);
        }
        if data.phases[k].linear.iter().any(|&v| v != 0.0) {
            return Err(Error::Config(format!("phase of order {} must be periodic (zero linear part)", k + 1)));
        }
    }
    let mut warnings = Vec::new();
    if let Some(t) = base.truncated_at {
        warnings.push(format!("base flow truncated at t = {t} by the nondegeneracy condition"));
    }
    let d = grid.dim as f64;
    if (big_n as f64) <= config.l as f64 * (3.0 + d / 2.0) {
        warnings.push(format!(
            "N = {} does not exceed l(3 + d/2) = {}; assembled residual exponent {:.3}",
            big_n,
            config.l as f64 * (3.0 + d / 2.0),
            config.asymptotic_exponent()
        ));
    }
    let max_u = base.snaps.iter().map(|s| s.u.max_abs_physical()).fold(0.0, f64::max);
    let cfl = grid.dt * max_u * grid.cutoff() as f64;
    if cfl > 2.5 {
        return Err(Error::Cfl(cfl));
    }
    let visc = config.nu * grid.dt * (grid.cutoff() as f64).powi(2) * 2.0;
    if visc > 2.5 {
        return Err(Error::Cfl(visc));
    }

    let kd = (0..big_n)
        .map(|k| {
            let h = highest_harmonic(&data.ustar[k]);
            (h + k) / (k + 1)
        })
        .max()
        .unwrap_or(1)
        .max(1);
    let kmax: Vec<usize> = (1..=big_n).map(|m| (m * kd).min(grid.m_theta)).collect();
    if kmax.last().copied() != Some(big_n * kd) {
        warnings.push(format!("theta harmonics capped at m_theta = {}; products are truncated", grid.m_theta));
    }

    let proj = base.projector(0)?;
    let mut current = Vec::with_capacity(big_n);
    for k in 0..big_n {
        let mut ubar = data.ubar[k].clone();
        let div = ubar.divergence().l2_norm();
        if div > 1e-10 * ubar.l2_norm().max(1e-300) && div > 1e-14 {
            if config.auto_project {
                ubar = leray_project(&ubar);
            } else {
                return Err(Error::Config(format!("mean datum of order {} is not divergence-free", k + 1)));
            }
        }
        let u = data.ustar[k].oscillating().with_kmax(kmax[k]);
        let q = proj.apply(&u.to_physical()).to_spectral(&grid);
        let norm = u.l2_norm();
        if norm > 0.0 && u.sub(&q).l2_norm() > 1e-10 * norm && !config.auto_project {
            return Err(Error::PolarizationViolated(k + 1));
        }
        current.push(OrderState { ubar, psi: data.phases[k].psi.clone(), q });
    }

    let steps_total = grid.steps().min(base.full_steps());
    let mut state = CascadeState {
        config,
        base,
        data,
        kmax,
        current,
        t: 0.0,
        step: 0,
        steps_total,
        snapshots: Vec::new(),
        drift_log: Vec::new(),
        ledger: Vec::new(),
        warnings,
        established: 0,
    };
    let snap = state.evaluate_current()?;
    state.snapshots.push(snap);
    Ok(state)
}

/// Physical-space quantities of one order used by the orders above it.
struct Work {
    x: Vec<Vec<f64>>,
    xdot: Vec<Vec<f64>>,
    ubar: Vec<Vec<f64>>,
    ustar: PhysProfile,
    d: PhysProfile,
    full: PhysProfile,
    /// ∂₁ of every component followed by ∂₂ of every component.
    grad: PhysProfile,
    dtheta: PhysProfile,
}

pub(crate) fn dot_x(x: &[Vec<f64>], u: &PhysProfile) -> PhysProfile {
    u.map_pointwise(1, |idx, v, o| {
        let mut s = C64::new(0.0, 0.0);
        for c in 0..v.len().min(x.len()) {
            s += v[c] * x[c][idx];
        }
        o[0] = s;
    })
}

pub(crate) fn times_x(s: &PhysProfile, x: &[Vec<f64>]) -> PhysProfile {
    let dim = x.len();
    s.map_pointwise(dim, |idx, v, o| {
        for c in 0..dim {
            o[c] = v[0] * x[c][idx];
        }
    })
}

pub(crate) fn gradient_pack(f: &ProfileField) -> PhysProfile {
    let a = f.derivative(0).to_physical();
    let b = f.derivative(1).to_physical();
    PhysProfile::stack(&[&a, &b])
}

fn complex(v: &[Vec<f64>]) -> Vec<Vec<C64>> {
    v.iter().map(|c| c.iter().map(|&x| C64::new(x, 0.0)).collect()).collect()
}

pub(crate) fn advect(dim: usize) -> impl Fn(&[C64], &[C64], &mut [C64]) + Sync {
    move |a, g, o| {
        for c in 0..dim {
            o[c] += a[0] * g[c] + a[1] * g[dim + c];
        }
    }
}

pub(crate) fn scalar_times(dim: usize) -> impl Fn(&[C64], &[C64], &mut [C64]) + Sync {
    move |a, b, o| {
        for c in 0..dim {
            o[c] += a[0] * b[c];
        }
    }
}

struct Evaluation {
    orders: Vec<OrderFields>,
    pstar: Vec<ProfileField>,
    vstar: Vec<ProfileField>,
    dvstar: Vec<ProfileField>,
    audit: Vec<(SourceEquation, SourceTerm)>,
}

impl CascadeState {
    pub fn grid(&self) -> &Grid {
        &self.config.grid
    }

    pub fn order(&self) -> usize {
        self.config.order
    }

    fn evaluate_current(&self) -> Result<CascadeSnapshot> {
        let bi = 2 * self.step;
        let ev = evaluate(&self.config, &self.base, &self.kmax, &self.current, bi, None)?;
        Ok(CascadeSnapshot {
            t: self.t,
            step: self.step,
            base_index: bi,
            orders: ev.orders,
            pstar: ev.pstar,
            vstar: ev.vstar,
            dvstar: ev.dvstar,
        })
    }

    /// One RK4 step of size dt for all orders, followed by re-projection of Q by Π₀.
    pub fn step_once(&mut self) -> Result<()> {
        let h = self.config.grid.dt;
        let bi = 2 * self.step;
        let y = &self.current;
        let rates = |ys: &[OrderState], b: usize| -> Result<Vec<OrderFields>> {
            Ok(evaluate(&self.config, &self.base, &self.kmax, ys, b, None)?.orders)
        };
        let k1 = rates(y, bi)?;
        let y2: Vec<OrderState> = y.iter().zip(&k1).map(|(s, r)| s.axpy(0.5 * h, r)).collect();
        let k2 = rates(&y2, bi + 1)?;
        let y3: Vec<OrderState> = y.iter().zip(&k2).map(|(s, r)| s.axpy(0.5 * h, r)).collect();
        let k3 = rates(&y3, bi + 1)?;
        let y4: Vec<OrderState> = y.iter().zip(&k3).map(|(s, r)| s.axpy(h, r)).collect();
        let k4 = rates(&y4, bi + 2)?;
        let mut next: Vec<OrderState> = y
            .iter()
            .enumerate()
            .map(|(m, s)| s.axpy(h / 6.0, &k1[m]).axpy(h / 3.0, &k2[m]).axpy(h / 3.0, &k3[m]).axpy(h / 6.0, &k4[m]))
            .collect();
        let proj = self.base.projector(bi + 2)?;
        let mut drift = 0.0f64;
        for s in next.iter_mut() {
            let norm = s.q.l2_norm();
            let pq = proj.apply(&s.q.to_physical()).to_spectral(&self.config.grid);
            if norm > 0.0 {
                drift = drift.max(s.q.sub(&pq).l2_norm() / norm);
            }
            s.q = pq;
        }
        self.current = next;
        self.step += 1;
        self.t = self.step as f64 * h;
        self.drift_log.push((self.t, drift));
        if drift > self.config.drift_tol {
            return Err(Error::PolarizationDrift(drift));
        }
        Ok(())
    }

    /// Integrate to the end of the time grid (or of the base flow), storing snapshots.
    pub fn run_induction(&mut self) -> Result<()> {
        while self.step < self.steps_total {
            self.step_once()?;
            if self.step % self.config.snapshot_every == 0 || self.step == self.steps_total {
                let snap = self.evaluate_current()?;
                self.snapshots.push(snap);
            }
        }
        self.record_ledger()?;
        self.established = self.config.order;
        Ok(())
    }

    fn record_ledger(&mut self) -> Result<()> {
        let report = check_invariants(self)?;
        let mut ledger = Vec::new();
        for m in 1..=self.config.order {
            ledger.push(LedgerEntry { order: m, name: "polarization".into(), value: report.polarization[m - 1] });
            ledger.push(LedgerEntry { order: m, name: "phase_law".into(), value: report.phase_law[m - 1] });
        }
        for (q, v) in report.vkn.iter().enumerate() {
            ledger.push(LedgerEntry { order: q + self.config.l + 1, name: "corrector_identity".into(), value: *v });
        }
        for (q, v) in report.divergence_balance.iter().enumerate() {
            ledger.push(LedgerEntry { order: q + 1, name: "divergence_balance".into(), value: *v });
        }
        ledger.push(LedgerEntry { order: 0, name: "drift".into(), value: report.drift });
        ledger.push(LedgerEntry { order: 0, name: "low_correctors".into(), value: report.low_correctors });
        self.ledger = ledger;
        Ok(())
    }

    pub fn snapshot_index_at(&self, t: f64) -> Option<usize> {
        self.snapshots.iter().position(|s| (s.t - t).abs() < 1e-9)
    }

    pub fn last_snapshot(&self) -> &CascadeSnapshot {
        self.snapshots.last().expect("at least the initial snapshot")
    }

    /// Individual terms of the order-m sources at a stored snapshot.
    pub fn source_assembler(&self, snap: usize, eq: SourceEquation, m: usize) -> Result<Vec<SourceTerm>> {
        if m == 0 || m > self.config.order {
            return Err(Error::MissingDependency(format!("U_{m}")));
        }
        let s = self.snapshots.get(snap).ok_or_else(|| Error::MissingDependency(format!("snapshot {snap}")))?;
        let states = states_of(s);
        let ev = evaluate(&self.config, &self.base, &self.kmax, &states, s.base_index, Some(m))?;
        Ok(ev.audit.into_iter().filter(|(e, _)| *e == eq).map(|(_, t)| t).collect())
    }

    /// Re-evaluate a stored snapshot from its (Ū, ψ, Q) only.
    pub fn recompute(&self, snap: usize) -> Result<CascadeSnapshot> {
        let s = &self.snapshots[snap];
        let ev = evaluate(&self.config, &self.base, &self.kmax, &states_of(s), s.base_index, None)?;
        Ok(CascadeSnapshot {
            t: s.t,
            step: s.step,
            base_index: s.base_index,
            orders: ev.orders,
            pstar: ev.pstar,
            vstar: ev.vstar,
            dvstar: ev.dvstar,
        })
    }
}

fn states_of(s: &CascadeSnapshot) -> Vec<OrderState> {
    s.orders.iter().map(|o| OrderState { ubar: o.ubar.clone(), psi: o.psi.clone(), q: o.q.clone() }).collect()
}

fn evaluate(
    config: &CascadeConfig,
    base: &BaseFlow,
    kmax: &[usize],
    states: &[OrderState],
    bi: usize,
    audit_order: Option<usize>,
) -> Result<Evaluation> {
    let grid = &config.grid;
    let dim = grid.dim;
    let n = grid.n;
    let np = grid.points();
    let l = config.l;
    let big_n = config.order;
    let nu = config.nu;
    let bs = &base.snaps[bi];

    let x0 = base.x0(bi).to_physical();
    let xdot0 = bs.dpsi.gradient().to_physical();
    let proj = pointwise_projector(&base.x0(bi), 0.0)?;
    let u0 = bs.u.to_physical();
    let u0_sp = ProfileField::from_mean(&bs.u);

    let mut work: Vec<Work> = Vec::with_capacity(big_n + 1);
    work.push(Work {
        x: x0.clone(),
        xdot: xdot0.clone(),
        ubar: u0.clone(),
        ustar: PhysProfile::zeros(n, dim, 0),
        d: PhysProfile::zeros(n, dim, 0),
        full: PhysProfile::from_real(n, &u0),
        grad: gradient_pack(&u0_sp),
        dtheta: PhysProfile::zeros(n, dim, 0),
    });

    let zero_scalar = ProfileField::zeros(grid, 1, 0);
    let mut pstar_sp = vec![zero_scalar.clone(); big_n + l + 1];
    let mut vstar_sp = vec![zero_scalar.clone(); big_n + l + 1];
    let mut dvstar_sp = vec![zero_scalar.clone(); big_n + l + 1];
    let zero_phys = PhysProfile::zeros(n, 1, 0);
    let mut pstar = vec![zero_phys.clone(); big_n + l + 1];
    let mut vstar = vec![zero_phys.clone(); big_n + l + 1];
    let mut dvstar = vec![zero_phys.clone(); big_n + l + 1];
    let mut orders = Vec::with_capacity(big_n);
    let mut audit = Vec::new();

    for m in 1..=big_n {
        let st = &states[m - 1];
        let kk = kmax[m - 1];
        let auditing = audit_order == Some(m);
        let phase = PhaseFunction::new([0.0; 3], st.psi.clone());
        let xm = phase.gradient().to_physical();

        // normal component fixed by the divergence constraint
        let mut nrm = vstar[m].with_kmax(kk);
        for i in 1..m {
            nrm = nrm.axpy(-1.0, &dot_x(&work[i].x, &work[m - i].ustar));
        }
        let nrm = nrm.with_kmax(kk);
        let q_phys = st.q.with_kmax(kk).to_physical();
        let stacked = PhysProfile::stack(&[&q_phys, &nrm]);
        let ustar_phys = stacked.map_pointwise(dim, |idx, v, o| {
            let inv = proj.inv_norm2(idx);
            for c in 0..dim {
                o[c] = v[c] + v[dim] * x0[c][idx] * inv;
            }
        });
        let ustar_sp = ustar_phys.to_spectral(grid);
        let mut full_sp = ustar_sp.clone();
        full_sp.modes[0] = st.ubar.coeffs.clone();
        let ubar_phys = st.ubar.to_physical();
        let mut full_phys = ustar_phys.clone();
        full_phys.modes[0] = complex(&ubar_phys);
        let grad = gradient_pack(&full_sp);
        let dtheta = full_phys.theta_derivative();

        // quadratic terms, dealiased
        let mut nm = PhysProfile::zeros(n, dim, kk);
        for k in 0..=m {
            let term = PhysProfile::bilinear(
                if k == m { &full_phys } else { &work[k].full },
                if k == 0 { &grad } else { &work[m - k].grad },
                kk,
                dim,
                advect(dim),
            );
            if auditing {
                audit_split(&mut audit, &term, grid, format!("(U_{k}·∇)U_{}", m - k), k, m);
            }
            nm = nm.add(&term);
        }
        for k in 1..m {
            if l + k > big_n {
                continue;
            }
            let term = PhysProfile::bilinear(&vstar[l + k], &work[m - k].dtheta, kk, dim, scalar_times(dim));
            if auditing {
                audit_split(&mut audit, &term, grid, format!("V*_{} ∂θU_{}", l + k, m - k), l + k, m);
            }
            nm = nm.add(&term);
        }
        let nm_sp = nm.to_spectral(grid).dealiased();

        // mean flow
        let f = nm_sp.mean();
        let dubar = leray_project(&f.scale(-1.0).axpy(nu, &st.ubar.laplacian()));
        let pbar = pressure_from_flux(&f);

        // phase
        let dpsi_phys: Vec<f64> = (0..np)
            .map(|idx| {
                let mut s = 0.0;
                for c in 0..dim {
                    s += xm[c][idx] * u0[c][idx];
                }
                for j in 0..m {
                    let ub = if j == 0 { &ubar_phys } else { &work[m - j].ubar };
                    for c in 0..dim {
                        s += work[j].x[c][idx] * ub[c][idx];
                    }
                }
                -s
            })
            .collect();
        if auditing {
            for j in 0..m {
                let xj = &work[j].x;
                let ub = if j == 0 { &ubar_phys } else { &work[m - j].ubar };
                let v: Vec<f64> = (0..np).map(|i| -(0..dim).map(|c| xj[c][i] * ub[c][i]).sum::<f64>()).collect();
                let f = SpectralField::to_spectral(grid, &[v])?;
                audit.push((
                    SourceEquation::Phase,
                    SourceTerm { label: format!("-X_{j}·Ū_{}", m - j), k: j, power: m, field: ProfileField::from_mean(&f) },
                ));
            }
        }
        let dpsi = SpectralField::to_spectral(grid, &[dpsi_phys])?;
        let xdot_m = dpsi.gradient().to_physical();

        // oscillating balance
        let mut e_sp = nm_sp.oscillating();
        if m > l {
            let gp = pstar_sp[m].gradient();
            if auditing {
                audit.push((SourceEquation::Oscillation, SourceTerm { label: format!("∇P*_{m}"), k: m, power: m, field: gp.clone() }));
            }
            e_sp = e_sp.add(&gp);
        }
        if nu > 0.0 {
            e_sp = e_sp.axpy(-nu, &ustar_sp.laplacian(false));
        }
        let mut e_phys = e_sp.with_kmax(kk).to_physical();
        for k in 1..m {
            if l + k > big_n {
                continue;
            }
            let term = times_x(&pstar[l + k].theta_derivative(), &work[m - k].x);
            if auditing {
                audit.push((
                    SourceEquation::Oscillation,
                    SourceTerm {
                        label: format!("X_{} ∂θP*_{}", m - k, l + k),
                        k: l + k,
                        power: m,
                        field: term.to_spectral(grid),
                    },
                ));
            }
            e_phys = e_phys.add(&term);
        }
        let e_phys = e_phys.with_kmax(kk);

        // time derivative of the normal component
        let mut ndot = dvstar[m].with_kmax(kk);
        for i in 1..m {
            ndot = ndot.axpy(-1.0, &dot_x(&work[i].xdot, &work[m - i].ustar));
            ndot = ndot.axpy(-1.0, &dot_x(&work[i].x, &work[m - i].d));
        }
        let ndot = ndot.with_kmax(kk);

        let all = PhysProfile::stack(&[&e_phys, &ustar_phys, &ndot]);
        let dq_d = all.map_pointwise(2 * dim, |idx, v, o| {
            let inv = proj.inv_norm2(idx);
            let mut xe = C64::new(0.0, 0.0);
            let mut xdu = C64::new(0.0, 0.0);
            let mut xv = [0.0; 3];
            let mut xd = [0.0; 3];
            for c in 0..dim {
                xe += v[c] * x0[c][idx];
                xdu += v[dim + c] * xdot0[c][idx];
                xv[c] = x0[c][idx];
                xd[c] = xdot0[c][idx];
            }
            let dp = projector_variation(&xv, &xd);
            let nd = v[2 * dim];
            for c in 0..dim {
                let pe = v[c] - xe * xv[c] * inv;
                let mut dpu = C64::new(0.0, 0.0);
                for j in 0..dim {
                    dpu += v[dim + j] * dp[c][j];
                }
                o[c] = dpu - pe;
                o[dim + c] = -pe + xv[c] * (nd - xdu) * inv;
            }
        });
        let dq_phys = dq_d.map_pointwise(dim, |_, v, o| o.copy_from_slice(&v[..dim]));
        let d_phys = dq_d.map_pointwise(dim, |_, v, o| o.copy_from_slice(&v[dim..2 * dim]));
        let d_sp = d_phys.to_spectral(grid);

        {
            let de = PhysProfile::stack(&[&d_phys, &e_phys]);
            let s = de.map_pointwise(1, |idx, v, o| {
                let mut acc = C64::new(0.0, 0.0);
                for c in 0..dim {
                    acc += (v[c] + v[dim + c]) * x0[c][idx];
                }
                o[0] = -acc * proj.inv_norm2(idx);
            });
            let p = theta_antiderivative_phys(&s);
            pstar_sp[m + l] = p.to_spectral(grid);
            pstar[m + l] = p;
            let v = theta_antiderivative_unchecked(&ustar_sp).divergence().scale(-1.0);
            vstar[m + l] = v.to_physical();
            vstar_sp[m + l] = v;
            let dv = theta_antiderivative_unchecked(&d_sp).divergence().scale(-1.0);
            dvstar[m + l] = dv.to_physical();
            dvstar_sp[m + l] = dv;
        }

        orders.push(OrderFields {
            m,
            ubar: st.ubar.clone(),
            dubar,
            pbar,
            linear: [0.0; 3],
            psi: st.psi.clone(),
            dpsi,
            q: st.q.with_kmax(kk),
            dq: dq_phys.to_spectral(grid),
            ustar: ustar_sp,
            d: d_sp,
            e: e_phys.to_spectral(grid),
        });
        work.push(Work { x: xm, xdot: xdot_m, ubar: ubar_phys, ustar: ustar_phys, d: d_phys, full: full_phys, grad, dtheta });
    }
    Ok(Evaluation { orders, pstar: pstar_sp, vstar: vstar_sp, dvstar: dvstar_sp, audit })
}

fn audit_split(audit: &mut Vec<(SourceEquation, SourceTerm)>, term: &PhysProfile, grid: &Grid, label: String, k: usize, m: usize) {
    let sp = term.to_spectral(grid).dealiased();
    audit.push((SourceEquation::Mean, SourceTerm { label: label.clone(), k, power: m, field: ProfileField::from_mean(&sp.mean()) }));
    audit.push((SourceEquation::Oscillation, SourceTerm { label, k, power: m, field: sp.oscillating() }));
}

/// Invariant measurements over all stored snapshots.
#[derive(Clone, Debug, PartialEq)]
pub struct InvariantReport {
    /// Per order: max_t ‖(I−Π₀)Q_m‖/‖Q_m‖.
    pub polarization: Vec<f64>,
    /// Per q = l+1..=N+l: max_t ‖V*_q + Div∂_θ⁻¹U*_{q−l}‖ / max(‖V*_q‖, 1).
    pub vkn: Vec<f64>,
    /// Per order: max_t of the pointwise phase-law defect.
    pub phase_law: Vec<f64>,
    /// Per order q: max_t ‖∂_θ Σ_{i<q} X_i·U*_{q−i} + Div U*_{q−l}‖ / max(‖U*_q‖, 1),
    /// the oscillating divergence balance rebuilt from the reconstructed U*.
    pub divergence_balance: Vec<f64>,
    /// Largest logged drift.
    pub drift: f64,
    /// max ‖P*_k‖ + ‖V*_k‖ over k ≤ l.
    pub low_correctors: f64,
}

pub fn check_invariants(state: &CascadeState) -> Result<InvariantReport> {
    let big_n = state.config.order;
    let l = state.config.l;
    let mut pol = vec![0.0f64; big_n];
    let mut vkn = vec![0.0f64; big_n];
    let mut law = vec![0.0f64; big_n];
    let mut balance = vec![0.0f64; big_n];
    let mut low = 0.0f64;
    for s in &state.snapshots {
        let u0 = state.base.snaps[s.base_index].u.to_physical();
        let x0 = state.base.x0(s.base_index).to_physical();
        for m in 1..=big_n {
            let o = s.order(m);
            pol[m - 1] = pol[m - 1].max(polarization_defect(&o.q, &state.base, s.base_index)?);
            // ∂_tψ_m + X_m·u₀ + Σ X_j·Ū_{m−j}
            let np = state.grid().points();
            let dpsi = o.dpsi.to_physical();
            let mut defect = dpsi[0].clone();
            let xs: Vec<Vec<Vec<f64>>> = (0..=m)
                .map(|j| if j == 0 { x0.clone() } else { s.order(j).phase().gradient().to_physical() })
                .collect();
            for idx in 0..np {
                for c in 0..state.grid().dim {
                    defect[idx] += xs[m][c][idx] * u0[c][idx];
                }
            }
            for j in 0..m {
                let ub = s.order(m - j).ubar.to_physical();
                for idx in 0..np {
                    for c in 0..state.grid().dim {
                        defect[idx] += xs[j][c][idx] * ub[c][idx];
                    }
                }
            }
            law[m - 1] = law[m - 1].max(defect.iter().fold(0.0f64, |a, v| a.max(v.abs())));
        }
        for q in (l + 1)..=(big_n + l) {
            let u = &s.order(q - l).ustar;
            let expect = theta_antiderivative_unchecked(u).divergence().scale(-1.0);
            let r = s.vstar[q].sub(&expect).l2_norm() / s.vstar[q].l2_norm().max(1.0);
            vkn[q - l - 1] = vkn[q - l - 1].max(r);
        }
        let xs: Vec<Vec<Vec<f64>>> =
            (0..big_n).map(|j| if j == 0 { x0.clone() } else { s.order(j).phase().gradient().to_physical() }).collect();
        let ustars: Vec<PhysProfile> = (1..=big_n).map(|j| s.order(j).ustar.to_physical()).collect();
        for q in 1..=big_n {
            let mut acc = dot_x(&xs[0], &ustars[q - 1]);
            for i in 1..q {
                acc = acc.add(&dot_x(&xs[i], &ustars[q - i - 1]));
            }
            let mut r = acc.to_spectral(state.grid()).theta_derivative();
            if q > l {
                r = r.add(&s.order(q - l).ustar.oscillating().divergence());
            }
            let v = r.l2_norm() / s.order(q).ustar.l2_norm().max(1.0);
            balance[q - 1] = balance[q - 1].max(v);
        }
        for k in 0..=l.min(big_n) {
            low = low.max(s.pstar[k].l2_norm() + s.vstar[k].l2_norm());
        }
    }
    let drift = state.drift_log.iter().map(|d| d.1).fold(0.0, f64::max);
    Ok(InvariantReport { polarization: pol, vkn, phase_law: law, divergence_balance: balance, drift, low_correctors: low })
}

/// Geometric-phase profiles U_k, P_k at one snapshot.
#[derive(Clone, Debug)]
pub struct DictionaryProfiles {
    /// Index k−1 holds order k.
    pub u: Vec<ProfileField>,
    pub p: Vec<ProfileField>,
}

/// Compositions of `total` into `parts` positive integers.
pub fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 0 {
        return if total == 0 { vec![vec![]] } else { vec![] };
    }
    let mut out = Vec::new();
    for first in 1..=total.saturating_sub(parts - 1) {
        for mut rest in compositions(total - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// U_K(θ) = Σ_p (1/p!) Σ φ_{l+i₁}···φ_{l+i_p} ∂_θ^p Ũ_j(θ + φ_l), the sum over
/// j + i₁ + … + i_p = K with all indices ≥ 1 and phases above N taken as zero.
pub fn dictionary(state: &CascadeState, snap: usize) -> Result<DictionaryProfiles> {
    let s = state.snapshots.get(snap).ok_or_else(|| Error::MissingDependency(format!("snapshot {snap}")))?;
    let l = state.config.l;
    let big_n = state.config.order;
    let grid = state.grid();
    let phis: Vec<Vec<f64>> = (0..=big_n).map(|q| if q == 0 { vec![] } else { s.order(q).psi.to_physical().remove(0) }).collect();
    let tilde_u: Vec<PhysProfile> = (1..=big_n).map(|j| s.order(j).profile().to_physical()).collect();
    let tilde_p: Vec<PhysProfile> = (1..=big_n).map(|j| s.pressure(j).to_physical()).collect();
    let shift = &phis[l];
    let build = |tilde: &[PhysProfile]| -> Vec<ProfileField> {
        (1..=big_n)
            .map(|kk| {
                let kmax = (1..=kk).map(|j| tilde[j - 1].kmax()).max().unwrap_or(0);
                let mut acc = PhysProfile::zeros(grid.n, tilde[0].components, kmax);
                for j in 1..=kk {
                    let rest = kk - j;
                    let mut dp = tilde[j - 1].clone();
                    let mut fact = 1.0;
                    for p in 0..=rest {
                        if p > 0 {
                            dp = dp.theta_derivative();
                            fact *= p as f64;
                        }
                        for comp in compositions(rest, p) {
                            if comp.iter().any(|&i| l + i > big_n) {
                                continue;
                            }
                            let coef: Vec<f64> = (0..grid.points())
                                .map(|idx| comp.iter().map(|&i| phis[l + i][idx]).product::<f64>() / fact)
                                .collect();
                            let term = dp.map_pointwise(dp.components, |idx, v, o| {
                                for c in 0..v.len() {
                                    o[c] = v[c] * coef[idx];
                                }
                            });
                            acc = acc.add(&term);
                        }
                    }
                }
                shift_profile(&acc, shift).to_spectral(grid)
            })
            .collect()
    };
    Ok(DictionaryProfiles { u: build(&tilde_u), p: build(&tilde_p) })
}

/// θ ↦ θ + a(x): harmonic h is multiplied by e^{iha(x)}.
pub fn shift_profile(u: &PhysProfile, a: &[f64]) -> PhysProfile {
    let mut out = u.clone();
    for (h, m) in out.modes.iter_mut().enumerate() {
        if h == 0 {
            continue;
        }
        for v in m.iter_mut() {
            for (z, &ai) in v.iter_mut().zip(a) {
                *z *= C64::from_polar(1.0, h as f64 * ai);
            }
        }
    }
    out
}

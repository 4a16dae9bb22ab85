use std::sync::Arc;

use anyhow::{Context, Result};
use phasecascade::assemble::{order_fit, profile_cleanup, profile_residual, ResidualReport, ResidualRow};
use phasecascade::baseflow::{base_residual, energy_drift, random_datum, scenario_base, shear_velocity, taylor_green, BaseFlow};
use phasecascade::cascade::{check_invariants, dictionary, init_cascade, CascadeConfig, CascadeData, CascadeState};
use phasecascade::criteria;
use phasecascade::direct::experiments::{single_harmonic_datum, transverse_amplitude};
use phasecascade::direct::{
    compare, dissipation_scaling, instability_experiment, ns_solve, shear_layer_exact,
    spectral_cascade_experiment, support_experiment, ErrorPoint,
};
use phasecascade::snapshot::{save_profile, save_spectral};
use phasecascade::{PhaseFunction, SpectralField};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::output::{num, Manifest, Out};

fn config_manifest(cfg: &RunConfig) -> Result<Manifest> {
    let mut m = Manifest::new();
    m.push("seed", cfg.seed);
    let text = toml::to_string(cfg).context("serializing resolved config")?;
    let mut section = String::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if let Some(s) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = s.to_string();
        } else if let Some((k, v)) = line.split_once(" = ") {
            let key = if section.is_empty() { format!("config.{k}") } else { format!("config.{section}.{k}") };
            m.push(&key, v);
        }
    }
    Ok(m)
}

pub fn build_base(cfg: &RunConfig) -> Result<Arc<BaseFlow>> {
    let grid = cfg.grid()?;
    let phi = PhaseFunction::linear(&grid, [1.0, 0.0, 0.0]);
    let base = scenario_base(cfg.scenario()?, &grid, cfg.cascade.nu_base, &phi, cfg.cascade.phase_c, cfg.seed)
        .context("building the base flow")?;
    Ok(Arc::new(base))
}

pub fn cascade_data(cfg: &RunConfig) -> Result<CascadeData> {
    let grid = cfg.grid()?;
    let c = &cfg.cascade;
    let mut data = CascadeData::zeros(&grid, c.order);
    let amp = c.amplitude;
    match c.data.as_str() {
        "zero" => {}
        "transverse" => {
            data.ustar[0] = single_harmonic_datum(&grid, 1, false, |x1, x2| amp * transverse_amplitude(x1, x2));
            if c.order >= 2 && c.mean_shear != 0.0 {
                let s = c.mean_shear;
                data.ubar[1] = SpectralField::from_fn(&grid, grid.dim, |_, x2| {
                    let mut v = vec![0.0; grid.dim];
                    v[0] = s * (2.0 * x2).cos();
                    v
                });
            }
        }
        _ => {
            // amplitude drawn from the seeded random velocity
            let ev = random_datum(&grid.with_dim(2), cfg.seed).evaluator(0);
            data.ustar[0] = single_harmonic_datum(&grid, 1, false, |x1, x2| amp * ev.eval([x1, x2]));
        }
    }
    Ok(data)
}

pub fn run_cascade(cfg: &RunConfig) -> Result<CascadeState> {
    let grid = cfg.grid()?;
    let c = &cfg.cascade;
    let mut cc = CascadeConfig::new(c.l, c.order, c.nu, grid)?;
    cc.scenario = cfg.scenario.clone();
    cc.snapshot_every = c.snapshot_every;
    cc.auto_project = c.auto_project;
    cc.drift_tol = c.drift_tol;
    let base = build_base(cfg)?;
    let mut st = init_cascade(cc, base, cascade_data(cfg)?).context("initializing the cascade")?;
    st.run_induction().with_context(|| format!("cascade induction at step {}", st.step))?;
    Ok(st)
}

pub fn base(cfg: &RunConfig, out: &Out) -> Result<bool> {
    let b = build_base(cfg)?;
    let mut m = config_manifest(cfg)?;
    let last = b.snaps.len() - 1;
    m.push("scenario", &b.scenario)
        .push("snapshots", b.snaps.len())
        .push("t_achieved", num(b.t_achieved()))
        .push("energy_drift", format!("{:e}", energy_drift(&b)))
        .push("time_residual", format!("{:e}", base_residual(&b)))
        .push("min_phase_gradient", format!("{:e}", b.min_gradient(last)));
    out.text("manifest.txt", &m.render())?;
    let rows: Vec<Vec<String>> =
        b.snaps.iter().map(|s| vec![num(s.t), num(phasecascade::direct::energy(&s.u)), num(s.psi.l2_norm())]).collect();
    out.csv("base.csv", &["t", "energy", "psi_l2"], &rows)?;
    let t: Vec<f64> = b.snaps.iter().map(|s| s.t).collect();
    let e: Vec<f64> = b.snaps.iter().map(|s| phasecascade::direct::energy(&s.u)).collect();
    out.plot("energy", "t", "energy", &t, &e)?;
    save_spectral(&out.path("u0_initial.phcf"), &b.snaps[0].u, b.snaps[0].t)?;
    save_spectral(&out.path("u0_final.phcf"), &b.snaps[last].u, b.snaps[last].t)?;
    save_spectral(&out.path("psi0_final.phcf"), &b.snaps[last].psi, b.snaps[last].t)?;
    Ok(true)
}

pub fn cascade(cfg: &RunConfig, out: &Out) -> Result<bool> {
    let st = run_cascade(cfg)?;
    let mut m = config_manifest(cfg)?;
    m.push("truncation_time", num(st.t)).push("steps", st.step).push("snapshots", st.snapshots.len());
    for (k, h) in st.kmax.iter().enumerate() {
        m.push(&format!("kmax.{}", k + 1), h);
    }
    for e in &st.ledger {
        m.push(&format!("ledger.{}.{}", e.name, e.order), format!("{:e}", e.value));
    }
    for w in &st.warnings {
        m.push("warning", w);
    }
    out.text("manifest.txt", &m.render())?;

    let mut rows = Vec::new();
    for s in &st.snapshots {
        for o in &s.orders {
            for (name, v) in [
                ("ubar_l2", o.ubar.l2_norm()),
                ("psi_l2", o.psi.l2_norm()),
                ("ustar_l2", o.ustar.l2_norm()),
                ("q_l2", o.q.l2_norm()),
                ("pbar_l2", o.pbar.l2_norm()),
            ] {
                rows.push(vec![num(s.t), o.m.to_string(), name.to_string(), num(v)]);
            }
        }
    }
    out.csv("orders.csv", &["t", "order", "norm_name", "value"], &rows)?;
    let ledger: Vec<Vec<String>> = st.ledger.iter().map(|e| vec![e.order.to_string(), e.name.clone(), num(e.value)]).collect();
    out.csv("ledger.csv", &["order", "name", "value"], &ledger)?;

    let dir = out.subdir("profiles")?;
    for (j, s) in st.snapshots.iter().enumerate() {
        for o in &s.orders {
            save_profile(&dir.join(format!("u_k{}_s{j}.phcf", o.m)), &o.profile(), s.t)?;
            save_spectral(&dir.join(format!("psi_k{}_s{j}.phcf", o.m)), &o.psi, s.t)?;
        }
    }
    let last = st.snapshots.len() - 1;
    let dict = dictionary(&st, last).context("dictionary profiles")?;
    let t = st.snapshots[last].t;
    for (k, (u, p)) in dict.u.iter().zip(&dict.p).enumerate() {
        save_profile(&dir.join(format!("dict_u_k{}.phcf", k + 1)), u, t)?;
        save_profile(&dir.join(format!("dict_p_k{}.phcf", k + 1)), p, t)?;
    }
    Ok(true)
}

fn snapshot_index(st: &CascadeState, t: Option<f64>) -> usize {
    match t {
        None => st.snapshots.len() - 1,
        Some(t) => (0..st.snapshots.len())
            .min_by(|&a, &b| (st.snapshots[a].t - t).abs().total_cmp(&(st.snapshots[b].t - t).abs()))
            .unwrap_or(0),
    }
}

/// One ε per rayon job; rows come back in sweep order.
fn parallel_sweep(st: &CascadeState, snap: usize, eps: &[f64], cleanup: bool) -> Result<ResidualReport> {
    let t = st.snapshots[snap].t;
    let per_eps: Vec<Vec<ResidualRow>> = eps
        .par_iter()
        .map(|&e| {
            let (f, g, extra) = if cleanup {
                let cl = profile_cleanup(st, snap, e)?;
                (cl.residual.f, cl.residual.g, vec![("div_after_cleanup", cl.divergence_after), ("corrector_l2", cl.corrector.l2_norm())])
            } else {
                let r = profile_residual(st, snap, e)?;
                (r.f, r.g, vec![])
            };
            let mut rows = vec![
                ("f_l2", f.l2_norm()),
                ("f_h1", f.sobolev_norm(1)),
                ("f_h2", f.sobolev_norm(2)),
                ("g_l2", g.l2_norm()),
            ];
            rows.extend(extra);
            Ok(rows.into_iter().map(|(n, v)| ResidualRow { epsilon: e, t, name: n.into(), value: v }).collect())
        })
        .collect::<phasecascade::Result<_>>()
        .with_context(|| format!("residual sweep at t = {t}"))?;
    let mut report = ResidualReport {
        epsilons: eps.to_vec(),
        rows: per_eps.into_iter().flatten().collect(),
        fits: Vec::new(),
        mode: if st.config.nu == 0.0 { "euler".into() } else { "dissipative".into() },
        expected_profile_slope: (st.config.order + 1) as f64 / st.config.l as f64,
        asymptotic_exponent: st.config.asymptotic_exponent(),
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

pub fn assemble(cfg: &RunConfig, out: &Out) -> Result<bool> {
    let st = run_cascade(cfg)?;
    let snap = snapshot_index(&st, cfg.sweep.t);
    let eps = cfg.sweep.values();
    let report = parallel_sweep(&st, snap, &eps, cfg.sweep.cleanup)?;

    let mut m = config_manifest(cfg)?;
    m.push("snapshot_t", num(st.snapshots[snap].t));
    m.block("summary", &report.summary());
    let div = report.values("div_after_cleanup").into_iter().fold(0.0, f64::max);
    let mut ok = true;
    if cfg.sweep.cleanup {
        ok = div <= cfg.tolerances.cleanup_divergence;
        m.push("max_div_after_cleanup", format!("{div:e} (tolerance {:e})", cfg.tolerances.cleanup_divergence));
    }
    out.text("manifest.txt", &m.render())?;

    let rows: Vec<Vec<String>> =
        report.rows.iter().map(|r| vec![num(r.epsilon), num(r.t), r.name.clone(), num(r.value)]).collect();
    out.csv("residuals.csv", &["epsilon", "t", "norm_name", "value"], &rows)?;
    let slopes: Vec<Vec<String>> = report
        .fits
        .iter()
        .map(|(n, f)| vec![n.clone(), num(f.slope), num(f.stderr), num(f.intercept), num(report.expected_profile_slope)])
        .collect();
    out.csv("slopes.csv", &["norm_name", "slope", "stderr", "intercept", "expected_slope"], &slopes)?;
    let mut names: Vec<&str> = report.rows.iter().map(|r| r.name.as_str()).collect();
    names.dedup();
    names.sort_unstable();
    names.dedup();
    for n in names {
        out.plot(n, "epsilon", n, &report.epsilons, &report.values(n))?;
    }
    Ok(ok)
}

fn write_errors(out: &Out, errs: &[ErrorPoint]) -> Result<f64> {
    let rows: Vec<Vec<String>> = errs.iter().map(|e| vec![num(e.t), num(e.abs), num(e.rel)]).collect();
    out.csv("errors.csv", &["t", "abs", "rel"], &rows)?;
    Ok(errs.iter().map(|e| e.abs).fold(0.0, f64::max))
}

pub fn direct(cfg: &RunConfig, out: &Out) -> Result<bool> {
    let grid = cfg.grid()?;
    let d = &cfg.direct;
    let eps = d.eps;
    let datum = match d.datum.as_str() {
        "taylor-green" => taylor_green(&grid, d.nu_eff, 0.0).0,
        "random" => random_datum(&grid, cfg.seed),
        "shear" => shear_velocity(&grid),
        _ => shear_layer_exact(eps, criteria::layer_g, criteria::layer_h, 0.0, &grid)?.0,
    };
    let run = ns_solve(&datum, d.nu_eff, &grid, d.every).context("direct solve")?;
    let mut m = config_manifest(cfg)?;
    m.push("energy_drift", format!("{:e}", run.energy_drift())).push("max_divergence", format!("{:e}", run.max_divergence));

    let exact: Option<Vec<phasecascade::assemble::AssembledSnapshot>> = match d.datum.as_str() {
        "taylor-green" => Some(
            run.snapshots
                .iter()
                .map(|s| {
                    let (u, p) = taylor_green(&grid, d.nu_eff, s.t);
                    phasecascade::assemble::AssembledSnapshot::plain(0.0, s.t, u, p)
                })
                .collect(),
        ),
        "shear-layer" if d.nu_eff == 0.0 => Some(
            run.snapshots
                .iter()
                .map(|s| {
                    let (u, p) = shear_layer_exact(eps, criteria::layer_g, criteria::layer_h, s.t, &grid)?;
                    Ok(phasecascade::assemble::AssembledSnapshot::plain(eps, s.t, u, p))
                })
                .collect::<phasecascade::Result<_>>()?,
        ),
        _ => None,
    };
    let mut ok = true;
    if let Some(traj) = exact {
        let err = write_errors(out, &compare(&run, &traj)?)?;
        ok = err <= cfg.tolerances.direct_error;
        m.push("max_error_vs_exact", format!("{err:e} (tolerance {:e})", cfg.tolerances.direct_error));
    }
    out.text("manifest.txt", &m.render())?;
    let rows: Vec<Vec<String>> = run.ledger.iter().map(|e| vec![num(e.t), num(e.energy), num(e.enstrophy)]).collect();
    out.csv("conservation.csv", &["t", "energy", "enstrophy"], &rows)?;
    let t: Vec<f64> = run.ledger.iter().map(|e| e.t).collect();
    out.plot("energy", "t", "energy", &t, &run.ledger.iter().map(|e| e.energy).collect::<Vec<_>>())?;
    out.plot("enstrophy", "t", "enstrophy", &t, &run.ledger.iter().map(|e| e.enstrophy).collect::<Vec<_>>())?;
    let dir = out.subdir("snapshots")?;
    for (j, s) in run.snapshots.iter().enumerate() {
        save_spectral(&dir.join(format!("u_s{j}.phcf")), &s.u, s.t)?;
    }
    Ok(ok)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Experiment {
    Instability,
    Spectrum,
    Dissipation,
    Support,
}

pub fn experiment(which: Experiment, cfg: &RunConfig, out: &Out) -> Result<bool> {
    let e = &cfg.experiment;
    let report = match which {
        Experiment::Instability => instability_experiment(&e.instability.build()?),
        Experiment::Spectrum => spectral_cascade_experiment(&e.spectrum.build()),
        Experiment::Dissipation => dissipation_scaling(&e.dissipation.build()),
        Experiment::Support => support_experiment(&e.support.build()),
    }
    .with_context(|| format!("{which:?} experiment"))?;
    let extra: Vec<(String, String)> = vec![("seed".into(), cfg.seed.to_string())];
    out.experiment(&report, &extra)?;
    Ok(report.passed())
}

/// Invariant suite of the configured cascade, gated by [tolerances].
pub fn check(cfg: &RunConfig, out: &Out) -> Result<bool> {
    let st = run_cascade(cfg)?;
    let r = check_invariants(&st)?;
    let tol = &cfg.tolerances;
    let mut rows = Vec::new();
    let mut ok = true;
    let mut gate = |name: &str, order: usize, value: f64, limit: f64| {
        let pass = value <= limit;
        ok &= pass;
        rows.push(vec![name.to_string(), order.to_string(), num(value), num(limit), pass.to_string()]);
    };
    for (i, v) in r.polarization.iter().enumerate() {
        gate("polarization", i + 1, *v, tol.polarization);
    }
    for (i, v) in r.phase_law.iter().enumerate() {
        gate("phase_law", i + 1, *v, tol.phase_law);
    }
    for (i, v) in r.vkn.iter().enumerate() {
        gate("corrector_identity", i + st.config.l + 1, *v, tol.corrector_identity);
    }
    for (i, v) in r.divergence_balance.iter().enumerate() {
        gate("divergence_balance", i + 1, *v, tol.divergence_balance);
    }
    gate("drift", 0, r.drift, tol.drift);
    gate("low_correctors", 0, r.low_correctors, tol.corrector_identity);
    let mut m = config_manifest(cfg)?;
    m.push("result", if ok { "pass" } else { "fail" });
    for w in &st.warnings {
        m.push("warning", w);
    }
    out.text("manifest.txt", &m.render())?;
    out.csv("invariants.csv", &["name", "order", "value", "tolerance", "passed"], &rows)?;
    Ok(ok)
}

/// Acceptance criteria by number (all when empty).
pub fn criteria(ids: &[usize], out: &Out) -> Result<bool> {
    let ctx = criteria::Context::new();
    let ids: Vec<usize> = if ids.is_empty() { (1..=criteria::NAMES.len()).collect() } else { ids.to_vec() };
    let mut rows = Vec::new();
    let mut m = Manifest::new();
    let mut ok = true;
    for id in ids {
        let o = criteria::run(id, &ctx).with_context(|| format!("no criterion {id} (1..={})", criteria::NAMES.len()))?;
        println!("{}", o.line());
        ok &= o.passed;
        rows.push(vec![o.id.to_string(), o.name.to_string(), o.passed.to_string()]);
        m.push(&format!("criterion.{}", o.id), o.line());
    }
    out.text("criteria.txt", &m.render())?;
    out.csv("criteria.csv", &["id", "name", "passed"], &rows)?;
    Ok(ok)
}

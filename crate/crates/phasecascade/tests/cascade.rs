use std::sync::Arc;

use phasecascade::baseflow::{scenario_base, taylor_green, BaseScenario};
use phasecascade::cascade::{
    check_invariants, compositions, dictionary, init_cascade, shift_profile, CascadeConfig, CascadeData, SourceEquation, SourceTerm,
};
use phasecascade::operators::{apply_ell, apply_m, theta_antiderivative};
use phasecascade::{Error, Grid, PhaseFunction, ProfileField, SpectralField, C64};

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

fn shear_setup(l: usize, order: usize, nu: f64, n: usize, t_end: f64) -> (CascadeConfig, Arc<phasecascade::baseflow::BaseFlow>) {
    let grid = Grid::new(2, n, 8, 0.01, t_end).unwrap();
    let phi = PhaseFunction::linear(&grid, [1.0, 0.0, 0.0]);
    let base = scenario_base(BaseScenario::Shear, &grid, 0.0, &phi, 1e-2, 0).unwrap();
    let cfg = CascadeConfig::new(l, order, nu, grid).unwrap();
    (cfg, Arc::new(base))
}

/// e₂ a(x) cos θ with a = cos x₁ + 0.5 sin x₂: polarized for X₀ = e₁.
fn transverse_datum(grid: &Grid) -> ProfileField {
    ProfileField::from_fn(grid, 2, 1, |k, comp, x1, x2| {
        if k == 1 && comp == 1 {
            c(0.5 * (x1.cos() + 0.5 * x2.sin()))
        } else {
            c(0.0)
        }
    })
}

#[test]
fn first_order_oscillation_follows_linearized_transport() {
    let (cfg, base) = shear_setup(2, 3, 0.0, 32, 0.2);
    let grid = cfg.grid.clone();
    let mut data = CascadeData::zeros(&grid, 3);
    data.ustar[0] = transverse_datum(&grid);
    let mut st = init_cascade(cfg, base.clone(), data).unwrap();
    st.run_induction().unwrap();
    for s in &st.snapshots {
        let o = s.order(1);
        let q = &o.q;
        let u0 = ProfileField::from_mean(&base.snaps[s.base_index].u);
        // (u₀·∇)Q evaluated independently through spectral derivatives
        let u0p = u0.to_physical();
        let g1 = q.derivative(0).to_physical();
        let g2 = q.derivative(1).to_physical();
        let mut adv = g1.clone();
        for k in 0..=adv.kmax() {
            for comp in 0..2 {
                for idx in 0..grid.points() {
                    adv.modes[k][comp][idx] = u0p.modes[0][0][idx] * g1.modes[k][comp][idx] + u0p.modes[0][1][idx] * g2.modes[k][comp][idx];
                }
            }
        }
        let lhs = o.dq.add(&adv.to_spectral(&grid).dealiased());
        let rhs = apply_m(q, &base, s.base_index);
        let err = lhs.sub(&rhs).l2_norm() / rhs.l2_norm().max(q.l2_norm());
        assert!(err < 1e-8, "t={} err={err:e}", s.t);
    }
}

#[test]
fn first_corrector_pressure_matches_ell_operator() {
    let (cfg, base) = shear_setup(1, 3, 0.0, 32, 0.1);
    let grid = cfg.grid.clone();
    let mut data = CascadeData::zeros(&grid, 3);
    data.ustar[0] = transverse_datum(&grid);
    let mut st = init_cascade(cfg, base.clone(), data).unwrap();
    st.run_induction().unwrap();
    let s = st.last_snapshot();
    let w = theta_antiderivative(&s.order(1).ustar).unwrap();
    let oracle = apply_ell(&w, &base, s.base_index);
    let p = &s.pstar[2];
    let err = p.sub(&oracle.with_kmax(p.kmax())).l2_norm() / oracle.l2_norm();
    assert!(err < 1e-8, "err={err:e}");
}

#[test]
fn mean_orders_over_zero_base_match_closed_forms() {
    // Taylor-Green as Ū₁ is a steady Euler flow, so Ū₁ stays put, Ū₂ stays
    // zero, ψ₁ = −tŪ₁·e₁ and ψ₂ = (t²/4) sin 2x₁.
    let grid = Grid::new(2, 16, 4, 0.05, 1.0).unwrap();
    let phi = PhaseFunction::linear(&grid, [1.0, 0.0, 0.0]);
    let base = Arc::new(scenario_base(BaseScenario::Zero, &grid, 0.0, &phi, 1e-2, 0).unwrap());
    let cfg = CascadeConfig::new(1, 2, 0.0, grid.clone()).unwrap();
    let mut data = CascadeData::zeros(&grid, 2);
    let (tg, p_tg) = taylor_green(&grid, 0.0, 0.0);
    data.ubar[0] = tg.clone();
    let mut st = init_cascade(cfg, base, data).unwrap();
    st.run_induction().unwrap();
    let s = st.last_snapshot();
    let t = s.t;
    assert!((t - 1.0).abs() < 1e-12);
    assert!(s.order(1).ubar.sub(&tg).l2_norm() < 1e-12);
    assert!(s.order(2).ubar.l2_norm() < 1e-12);
    let psi1 = tg.component(0).scale(-t);
    assert!(s.order(1).psi.sub(&psi1).l2_norm() < 1e-12);
    let psi2 = SpectralField::scalar_from_fn(&grid, |x1, _| 0.25 * t * t * (2.0 * x1).sin());
    assert!(s.order(2).psi.sub(&psi2).l2_norm() < 1e-12);
    assert!(s.order(2).pbar.sub(&p_tg).l2_norm() < 1e-12);
}

#[test]
fn invariants_hold_over_shear() {
    let (cfg, base) = shear_setup(2, 4, 0.01, 32, 0.2);
    let grid = cfg.grid.clone();
    let mut data = CascadeData::zeros(&grid, 4);
    data.ustar[0] = transverse_datum(&grid);
    data.ubar[1] = SpectralField::from_fn(&grid, 2, |_, x2| vec![0.3 * x2.sin(), 0.0]);
    let mut st = init_cascade(cfg, base, data).unwrap();
    st.run_induction().unwrap();
    let r = check_invariants(&st).unwrap();
    assert!(r.polarization.iter().all(|&v| v < 1e-10), "{:?}", r.polarization);
    assert!(r.vkn.iter().all(|&v| v < 1e-12), "{:?}", r.vkn);
    assert!(r.phase_law.iter().all(|&v| v < 1e-10), "{:?}", r.phase_law);
    assert!(r.drift < 1e-6);
    assert_eq!(r.low_correctors, 0.0);
    assert_eq!(st.established, 4);
}

#[test]
fn unpolarized_data_is_rejected() {
    let (cfg, base) = shear_setup(1, 2, 0.0, 16, 0.1);
    let grid = cfg.grid.clone();
    let mut data = CascadeData::zeros(&grid, 2);
    data.ustar[0] = ProfileField::from_fn(&grid, 2, 1, |k, comp, _, _| if k == 1 && comp == 0 { c(0.5) } else { c(0.0) });
    let e = init_cascade(cfg.clone(), base.clone(), data.clone()).unwrap_err();
    assert_eq!(e, Error::PolarizationViolated(1));
    let mut cfg = cfg;
    cfg.auto_project = true;
    let st = init_cascade(cfg, base, data).unwrap();
    assert!(st.snapshots[0].order(1).q.l2_norm() < 1e-12);
}

#[test]
fn bad_configurations_are_rejected() {
    let grid = Grid::new(2, 16, 4, 0.01, 0.1).unwrap();
    assert!(matches!(CascadeConfig::new(0, 2, 0.0, grid.clone()), Err(Error::Config(_))));
    assert!(matches!(CascadeConfig::new(2, 2, 0.0, grid.clone()), Err(Error::Config(_))));
    assert!(matches!(CascadeConfig::new(1, 2, -1.0, grid.clone()), Err(Error::Config(_))));
    let (cfg, base) = shear_setup(1, 2, 0.0, 16, 0.1);
    let mut data = CascadeData::zeros(&cfg.grid, 2);
    data.phases[0] = PhaseFunction::linear(&cfg.grid, [1.0, 0.0, 0.0]);
    assert!(matches!(init_cascade(cfg, base, data), Err(Error::Config(_))));
}

#[test]
fn low_order_warning_is_reported() {
    let (cfg, base) = shear_setup(2, 3, 0.0, 16, 0.02);
    let data = CascadeData::zeros(&cfg.grid, 3);
    let st = init_cascade(cfg, base, data).unwrap();
    assert!(st.warnings.iter().any(|w| w.contains("l(3 + d/2)")));
}

#[test]
fn composition_counts_are_binomial() {
    for total in 0..7usize {
        for parts in 0..=total {
            let got = compositions(total, parts);
            let expect = if parts == 0 {
                usize::from(total == 0)
            } else {
                (1..parts).fold(1usize, |a, i| a * (total - i) / i)
            };
            assert_eq!(got.len(), expect, "total={total} parts={parts}");
            assert!(got.iter().all(|v| v.iter().sum::<usize>() == total && v.iter().all(|&x| x >= 1)));
        }
    }
}

#[test]
fn second_dictionary_profile_is_first_order_phase_expansion() {
    let (cfg, base) = shear_setup(1, 2, 0.0, 16, 0.1);
    let grid = cfg.grid.clone();
    let mut data = CascadeData::zeros(&grid, 2);
    data.ustar[0] = transverse_datum(&grid);
    data.phases[0] = PhaseFunction::new([0.0; 3], SpectralField::scalar_from_fn(&grid, |x1, _| 0.3 * x1.cos()));
    data.phases[1] = PhaseFunction::new([0.0; 3], SpectralField::scalar_from_fn(&grid, |_, x2| 0.2 * x2.sin()));
    let mut st = init_cascade(cfg, base, data).unwrap();
    st.run_induction().unwrap();
    let last = st.snapshots.len() - 1;
    let dict = dictionary(&st, last).unwrap();
    let s = st.last_snapshot();
    let phi1 = s.order(1).psi.to_physical().remove(0);
    let phi2 = s.order(2).psi.to_physical().remove(0);
    let u1 = s.order(1).profile().to_physical();
    let u2 = s.order(2).profile().to_physical();
    let du1 = u1.theta_derivative();
    let mut expect = u2.with_kmax(u1.kmax().max(u2.kmax()));
    for k in 0..=du1.kmax() {
        for comp in 0..2 {
            for idx in 0..grid.points() {
                expect.modes[k][comp][idx] += phi2[idx] * du1.modes[k][comp][idx];
            }
        }
    }
    let expect = shift_profile(&expect, &phi1).to_spectral(&grid);
    let got = &dict.u[1];
    let err = got.sub(&expect).l2_norm() / expect.l2_norm();
    assert!(err < 1e-12, "err={err:e}");
    let e1 = dict.u[0].sub(&shift_profile(&u1, &phi1).to_spectral(&grid)).l2_norm();
    assert!(e1 < 1e-12);
}

#[test]
fn recompute_reproduces_stored_snapshot() {
    let (cfg, base) = shear_setup(2, 3, 0.0, 16, 0.1);
    let grid = cfg.grid.clone();
    let mut data = CascadeData::zeros(&grid, 3);
    data.ustar[0] = transverse_datum(&grid);
    let mut st = init_cascade(cfg, base, data).unwrap();
    st.run_induction().unwrap();
    let j = st.snapshots.len() - 1;
    let again = st.recompute(j).unwrap();
    let s = &st.snapshots[j];
    for m in 1..=3 {
        assert_eq!(again.order(m).ustar, s.order(m).ustar);
        assert_eq!(again.order(m).dubar, s.order(m).dubar);
        assert_eq!(again.order(m).dq, s.order(m).dq);
    }
    assert_eq!(again.pstar, s.pstar);
    assert_eq!(again.vstar, s.vstar);
}

#[test]
fn first_order_is_frozen_over_resting_base() {
    let grid = Grid::new(2, 16, 4, 0.05, 0.5).unwrap();
    let phi = PhaseFunction::linear(&grid, [1.0, 0.0, 0.0]);
    let base = Arc::new(scenario_base(BaseScenario::Zero, &grid, 0.0, &phi, 1e-2, 0).unwrap());
    let cfg = CascadeConfig::new(2, 3, 0.0, grid.clone()).unwrap();
    let mut data = CascadeData::zeros(&grid, 3);
    data.ustar[0] = transverse_datum(&grid);
    let mut st = init_cascade(cfg, base, data.clone()).unwrap();
    st.run_induction().unwrap();
    for s in &st.snapshots {
        assert!(s.order(1).ustar.sub(&data.ustar[0]).l2_norm() < 1e-13, "t={}", s.t);
    }
}

#[test]
fn out_of_plane_layer_keeps_planar_means_zero() {
    // 2.5D: U*₁ = e₃ a(x₂) cos θ with X₀ = e₁; the forcing of the means has
    // no planar part, so Ū₂ stays in the e₃ direction.
    let grid = Grid::new(3, 16, 4, 0.05, 0.5).unwrap();
    let phi = PhaseFunction::linear(&grid, [1.0, 0.0, 0.0]);
    let base = Arc::new(scenario_base(BaseScenario::Zero, &grid, 0.0, &phi, 1e-2, 0).unwrap());
    let cfg = CascadeConfig::new(1, 3, 0.0, grid.clone()).unwrap();
    let mut data = CascadeData::zeros(&grid, 3);
    data.ustar[0] = ProfileField::from_fn(&grid, 3, 1, |k, comp, _, x2| if k == 1 && comp == 2 { c(0.5 * x2.cos()) } else { c(0.0) });
    let mut st = init_cascade(cfg, base, data).unwrap();
    st.run_induction().unwrap();
    for s in &st.snapshots {
        for m in 1..=3 {
            let ub = &s.order(m).ubar;
            assert!(ub.component(0).l2_norm() < 1e-13 && ub.component(1).l2_norm() < 1e-13, "t={} m={m}", s.t);
        }
    }
    let r = check_invariants(&st).unwrap();
    assert!(r.polarization.iter().all(|&v| v < 1e-10));
}

#[test]
fn divergence_balance_closes_at_every_order() {
    let (cfg, base) = shear_setup(2, 4, 0.0, 32, 0.1);
    let grid = cfg.grid.clone();
    let mut data = CascadeData::zeros(&grid, 4);
    data.ustar[0] = transverse_datum(&grid);
    let mut st = init_cascade(cfg, base, data).unwrap();
    st.run_induction().unwrap();
    let r = check_invariants(&st).unwrap();
    assert!(r.divergence_balance.iter().all(|&v| v < 1e-9), "{:?}", r.divergence_balance);
}

fn sources(st: &phasecascade::cascade::CascadeState, snap: usize, eq: SourceEquation, m: usize) -> Vec<SourceTerm> {
    st.source_assembler(snap, eq, m).unwrap()
}

fn sum_mean(terms: &[SourceTerm], grid: &Grid, comps: usize) -> SpectralField {
    terms.iter().fold(SpectralField::zeros(grid, comps), |acc, t| acc.add(&t.field.mean()))
}

#[test]
fn source_terms_cover_the_cited_ranges() {
    let (cfg, base) = shear_setup(2, 4, 0.0, 16, 0.05);
    let grid = cfg.grid.clone();
    let mut data = CascadeData::zeros(&grid, 4);
    data.ustar[0] = transverse_datum(&grid);
    let mut st = init_cascade(cfg, base, data).unwrap();
    st.run_induction().unwrap();
    // order 1: only the couplings with the base, no corrector or pressure terms
    let mean1 = sources(&st, 0, SourceEquation::Mean, 1);
    let labels: Vec<&str> = mean1.iter().map(|t| t.label.as_str()).collect();
    assert_eq!(labels, ["(U_0·∇)U_1", "(U_1·∇)U_0"]);
    assert!(sources(&st, 0, SourceEquation::Oscillation, 1).iter().all(|t| !t.label.contains('*')));
    // order 4, l = 2: V*_3, V*_4 and the pressures P*_3, P*_4 enter
    let osc4: Vec<String> = sources(&st, 0, SourceEquation::Oscillation, 4).into_iter().map(|t| t.label).collect();
    for want in ["V*_3 ∂θU_3", "V*_4 ∂θU_2", "∇P*_4", "X_3 ∂θP*_3", "X_2 ∂θP*_4"] {
        assert!(osc4.iter().any(|l| l == want), "{want} missing from {osc4:?}");
    }
    assert!(sources(&st, 0, SourceEquation::Mean, 4).iter().all(|t| t.power == 4));
    assert!(matches!(st.source_assembler(0, SourceEquation::Mean, 0), Err(Error::MissingDependency(_))));
    assert!(matches!(st.source_assembler(0, SourceEquation::Mean, 5), Err(Error::MissingDependency(_))));
    assert!(matches!(st.source_assembler(99, SourceEquation::Mean, 1), Err(Error::MissingDependency(_))));
}

#[test]
fn second_order_sources_match_hand_expansion() {
    // resting base, φ₀ = x₁, l = 1, U₁ = e₂ a cos θ with a = cos x₁ + ½ sin x₂
    let grid = Grid::new(2, 32, 8, 0.01, 0.05).unwrap();
    let phi = PhaseFunction::linear(&grid, [1.0, 0.0, 0.0]);
    let base = Arc::new(scenario_base(BaseScenario::Zero, &grid, 0.0, &phi, 1e-2, 0).unwrap());
    let cfg = CascadeConfig::new(1, 2, 0.0, grid.clone()).unwrap();
    let mut data = CascadeData::zeros(&grid, 2);
    data.ustar[0] = transverse_datum(&grid);
    let mut st = init_cascade(cfg, base, data).unwrap();
    st.run_induction().unwrap();
    let mean = sources(&st, 0, SourceEquation::Mean, 2);
    let osc = sources(&st, 0, SourceEquation::Oscillation, 2);
    let term = |ts: &[SourceTerm], label: &str| ts.iter().find(|t| t.label == label).unwrap_or_else(|| panic!("{label}")).field.clone();

    // (U₁·∇)U₁ = e₂ a∂₂a cos²θ, V*₂ = −∂₂a sin θ, V*₂∂θU₁ = e₂ a∂₂a sin²θ
    let half = SpectralField::from_fn(&grid, 2, |x1, x2| vec![0.0, 0.5 * (x1.cos() + 0.5 * x2.sin()) * 0.5 * x2.cos()]);
    for label in ["(U_1·∇)U_1", "V*_2 ∂θU_1"] {
        assert!(term(&mean, label).mean().sub(&half).l2_norm() < 1e-13, "{label}");
    }
    // cos²θ and sin²θ carry ±½ at harmonic 2
    let adv = term(&osc, "(U_1·∇)U_1");
    let vdt = term(&osc, "V*_2 ∂θU_1");
    for idx in 0..grid.points() {
        let quarter = 0.5 * half.coeffs[1][idx];
        assert!((adv.modes[2][1][idx] - quarter).norm() < 1e-13);
        assert!((vdt.modes[2][1][idx] + quarter).norm() < 1e-13);
        assert!(adv.modes[2][0][idx].norm() < 1e-13);
    }
    for label in ["(U_0·∇)U_2", "(U_2·∇)U_0"] {
        assert_eq!(term(&mean, label).l2_norm(), 0.0);
    }
    assert!(sum_mean(&mean, &grid, 2).sub(&half.scale(2.0)).l2_norm() < 1e-13);
}

#[test]
fn audited_sources_reproduce_the_trajectory() {
    // ∂_tŪ_m = Leray(−Σ mean sources) at ν = 0 and ∂_tψ_m = Σ phase sources − X_m·u₀,
    // with the time derivatives taken from stored snapshots by 4th-order differences
    let h = 0.002;
    let grid = Grid::new(2, 32, 8, h, 10.0 * h).unwrap();
    let phi = PhaseFunction::linear(&grid, [1.0, 0.0, 0.0]);
    let base = Arc::new(scenario_base(BaseScenario::Shear, &grid, 0.0, &phi, 1e-2, 0).unwrap());
    let mut cfg = CascadeConfig::new(2, 4, 0.0, grid.clone()).unwrap();
    cfg.snapshot_every = 1;
    let mut data = CascadeData::zeros(&grid, 4);
    data.ustar[0] = transverse_datum(&grid);
    data.ubar[1] = SpectralField::from_fn(&grid, 2, |_, x2| vec![0.2 * (2.0 * x2).cos(), 0.0]);
    let mut st = init_cascade(cfg, base.clone(), data).unwrap();
    st.run_induction().unwrap();
    let j = 5;
    let fd = |f: &dyn Fn(usize) -> SpectralField| {
        f(j - 2).sub(&f(j - 1).scale(8.0)).add(&f(j + 1).scale(8.0)).sub(&f(j + 2)).scale(1.0 / (12.0 * h))
    };
    let u0 = &base.snaps[st.snapshots[j].base_index].u;
    for m in 1..=4 {
        let dubar = fd(&|i| st.snapshots[i].order(m).ubar.clone());
        let mean = sum_mean(&sources(&st, j, SourceEquation::Mean, m), &grid, 2);
        let predicted = phasecascade::operators::leray_project(&mean.scale(-1.0));
        let err = dubar.sub(&predicted).l2_norm();
        assert!(err < 1e-8 * predicted.l2_norm().max(1.0), "mean m={m}: {err:e}");

        let dpsi = fd(&|i| st.snapshots[i].order(m).psi.clone());
        let phase = sum_mean(&sources(&st, j, SourceEquation::Phase, m), &grid, 1);
        let g = st.snapshots[j].order(m).psi.gradient();
        let xu = SpectralField::to_spectral(&grid, &[{
            let (gp, up) = (g.to_physical(), u0.to_physical());
            (0..grid.points()).map(|i| gp[0][i] * up[0][i] + gp[1][i] * up[1][i]).collect()
        }])
        .unwrap();
        let predicted = phase.sub(&xu);
        let err = dpsi.sub(&predicted).l2_norm();
        assert!(err < 1e-8 * predicted.l2_norm().max(1.0), "phase m={m}: {err:e}");
    }
}

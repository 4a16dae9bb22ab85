use std::sync::Arc;

use phasecascade::assemble::{
    assemble, assembled_residual, complete_phase, divergence_cleanup, enstrophy, geometric_phase, order_fit, vorticity,
    AssembledSnapshot, PhaseChoice,
};
use phasecascade::baseflow::{scenario_base, BaseScenario};
use phasecascade::cascade::{init_cascade, CascadeConfig, CascadeData, CascadeState};
use phasecascade::{Error, Grid, PhaseFunction, ProfileField, SpectralField, C64, TWO_PI};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn resting_cascade(l: usize, order: usize, n: usize, u1: Option<ProfileField>) -> CascadeState {
    let grid = Grid::new(2, n, 4, 0.05, 0.1).unwrap();
    let phi = PhaseFunction::linear(&grid, [1.0, 0.0, 0.0]);
    let base = Arc::new(scenario_base(BaseScenario::Zero, &grid, 0.0, &phi, 1e-2, 0).unwrap());
    let cfg = CascadeConfig::new(l, order, 0.0, grid.clone()).unwrap();
    let mut data = CascadeData::zeros(&grid, order);
    if let Some(u) = u1 {
        data.ustar[0] = u;
    }
    let mut st = init_cascade(cfg, base, data).unwrap();
    st.run_induction().unwrap();
    st
}

fn e2_cos(grid: &Grid) -> ProfileField {
    ProfileField::from_fn(grid, 2, 1, |k, c, _, _| C64::new(if k == 1 && c == 1 { 0.5 } else { 0.0 }, 0.0))
}

#[test]
fn fit_of_exact_powers() {
    let eps = [0.5, 0.25, 0.125, 0.0625];
    let sq: Vec<f64> = eps.iter().map(|e| e * e).collect();
    let f = order_fit(&eps, &sq).unwrap();
    assert!((f.slope - 2.0).abs() < 1e-12 && f.stderr < 1e-12);
    let f = order_fit(&eps, &[3.0; 4]).unwrap();
    assert!(f.slope.abs() < 1e-12);
}

#[test]
fn fit_of_noisy_power() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let eps: Vec<f64> = (2..10).map(|k| 2f64.powi(-k)).collect();
    let norms: Vec<f64> = eps.iter().map(|e| e.powf(1.5) * (1.0 + rng.gen_range(-0.05..0.05))).collect();
    let f = order_fit(&eps, &norms).unwrap();
    assert!((f.slope - 1.5).abs() <= 3.0 * f.stderr.max(1e-3), "{f:?}");
}

#[test]
fn fit_errors() {
    assert_eq!(order_fit(&[0.5, 0.25, 0.125], &[1.0, 1.0, 1.0]).unwrap_err(), Error::InsufficientSnapshots { need: 4, got: 3 });
    assert_eq!(order_fit(&[0.5, 0.25, 0.125, 0.1], &[1.0, 0.0, 1.0, 1.0]).unwrap_err(), Error::NonPositiveNorm);
}

#[test]
fn zero_profiles_assemble_to_base() {
    let st = resting_cascade(1, 2, 16, None);
    let j = st.snapshots.len() - 1;
    let a = assemble(&st, j, 0.25, PhaseChoice::Complete).unwrap();
    assert!(a.u.l2_norm() < 1e-14);
    assert_eq!(geometric_phase(&st, j, 0.25), st.base.phase_at(st.snapshots[j].base_index));
}

#[test]
fn single_mode_assembly() {
    // U₁ = e₂cos θ, φ = x₁, l = 2, ε = 1/16: u = ε^{1/2} e₂ cos(16x₁)
    let grid = Grid::new(2, 16, 4, 0.05, 0.1).unwrap();
    let st = resting_cascade(2, 3, 16, Some(e2_cos(&grid)));
    let eps = 1.0 / 16.0;
    for choice in [PhaseChoice::Geometric, PhaseChoice::Complete] {
        let a = assemble(&st, 0, eps, choice).unwrap();
        let g = a.u.grid.clone();
        let expect = SpectralField::from_fn(&g, 2, |x1, _| vec![0.0, eps.sqrt() * (16.0 * x1).cos()]);
        assert!(a.u.sub(&expect).l2_norm() < 1e-12, "{choice:?}");
        // all energy sits in shell 16
        let e = phasecascade::field::shell_spectrum(&a.u);
        let total: f64 = e.iter().sum();
        assert!((e[16] - total).abs() < 1e-12 * total);
    }
}

#[test]
fn oscillation_energy_scales_like_root_epsilon() {
    let grid = Grid::new(2, 16, 4, 0.05, 0.1).unwrap();
    let st = resting_cascade(2, 3, 16, Some(e2_cos(&grid)));
    let eps = [1.0 / 4.0, 1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0];
    let norms: Vec<f64> = eps.iter().map(|&e| assemble(&st, 1, e, PhaseChoice::Complete).unwrap().u.l2_norm()).collect();
    let f = order_fit(&eps, &norms).unwrap();
    assert!((f.slope - 0.5).abs() < 1e-6, "{f:?}");
}

#[test]
fn complete_phase_at_unit_epsilon_is_plain_sum() {
    let grid = Grid::new(2, 16, 4, 0.05, 0.1).unwrap();
    let st = resting_cascade(2, 3, 16, Some(e2_cos(&grid)));
    let j = st.snapshots.len() - 1;
    let s = &st.snapshots[j];
    let mut sum = st.base.phase_at(s.base_index);
    for k in 1..=3 {
        sum = sum.axpy(1.0, &s.order(k).phase());
    }
    let c = complete_phase(&st, j, 1.0);
    assert!(c.psi.sub(&sum.psi).l2_norm() < 1e-15);
    assert_eq!(c.linear, sum.linear);
}

#[test]
fn cleanup_is_identity_on_solenoidal_fields_and_idempotent() {
    let g = Grid::new(2, 32, 4, 0.01, 1.0).unwrap();
    let div_free = SpectralField::from_fn(&g, 2, |x, y| vec![y.sin() * x.cos(), -(x.sin() * y.cos())]);
    let s = AssembledSnapshot::plain(0.1, 0.0, div_free.clone(), SpectralField::zeros(&g, 1));
    assert!(divergence_cleanup(&s).u.sub(&div_free).l2_norm() < 1e-12);
    let rough = SpectralField::from_fn(&g, 2, |x, y| vec![(x + y).sin(), (2.0 * x).cos() * y.sin()]);
    let once = divergence_cleanup(&AssembledSnapshot::plain(0.1, 0.0, rough, SpectralField::zeros(&g, 1)));
    let twice = divergence_cleanup(&once);
    assert!(twice.u.sub(&once.u).l2_norm() < 1e-11);
    assert!(once.u.divergence().l2_norm() < 1e-10 * once.u.l2_norm());
}

#[test]
fn vorticity_examples() {
    let g = Grid::new(2, 64, 4, 0.01, 1.0).unwrap();
    let p = SpectralField::scalar_from_fn(&g, |x, y| (x + 2.0 * y).sin());
    assert!(vorticity(&p.gradient()).l2_norm() < 1e-12);
    // u = ε^{1/l}e₂cos(x₁/ε): ‖Ω‖ = ε^{1/l−1}·‖sin‖ = ε^{1/l−1}·π√2
    let l = 2.0;
    for eps in [0.25f64, 0.125, 0.0625] {
        let u = SpectralField::from_fn(&g, 2, |x, _| vec![0.0, eps.powf(1.0 / l) * (x / eps).cos()]);
        let expect = eps.powf(1.0 / l - 1.0) * (TWO_PI * TWO_PI / 2.0).sqrt();
        assert!((vorticity(&u).l2_norm() - expect).abs() < 1e-12 * expect);
        assert!((enstrophy(&u) - expect * expect).abs() < 1e-10 * expect * expect);
    }
}

#[test]
fn assembled_residual_of_zero_and_short_input() {
    let g = Grid::new(2, 16, 4, 0.01, 1.0).unwrap();
    let snaps: Vec<AssembledSnapshot> = (0..5)
        .map(|i| AssembledSnapshot::plain(0.1, 0.01 * i as f64, SpectralField::zeros(&g, 2), SpectralField::zeros(&g, 1)))
        .collect();
    assert_eq!(assembled_residual(&snaps, 0.0).unwrap().l2_norm(), 0.0);
    assert_eq!(assembled_residual(&snaps[..4], 0.0).unwrap_err(), Error::InsufficientSnapshots { need: 5, got: 4 });
}

use phasecascade::baseflow::{
    base_residual, flow_map, random_datum, scenario_base, semi_lagrangian_phase, solve_base_flow, solve_eiconal,
    taylor_green, BaseScenario,
};
use phasecascade::{Error, Grid, PhaseFunction, SpectralField, TWO_PI};

fn grid(n: usize, dt: f64, t_end: f64) -> Grid {
    Grid::new(2, n, 4, dt, t_end).unwrap()
}

#[test]
fn zero_datum_gives_resting_base() {
    let g = grid(16, 0.05, 0.5);
    let b = solve_base_flow(&SpectralField::zeros(&g, 2), 0.0, &g).unwrap();
    assert!(b.snaps.iter().all(|s| s.u.l2_norm() == 0.0));
    let phi = PhaseFunction::new([1.0, 0.0, 0.0], SpectralField::scalar_from_fn(&g, |x, y| 0.2 * (x + y).sin()));
    let e = solve_eiconal(&phi, &b, 0.1).unwrap();
    let last = e.snaps.len() - 1;
    assert!(e.phase_at(last).psi.sub(&phi.psi).l2_norm() < 1e-15);
    assert_eq!(e.phase_at(last).linear, phi.linear);
}

#[test]
fn taylor_green_base_matches_closed_form() {
    let nu = 0.1;
    let g = grid(32, 0.01, 1.0);
    let (u0, _) = taylor_green(&g, nu, 0.0);
    let b = solve_base_flow(&u0, nu, &g).unwrap();
    let last = b.snaps.last().unwrap();
    let (exact, _) = taylor_green(&g, nu, 1.0);
    assert!(last.u.sub(&exact).l2_norm() < 1e-8);
}

#[test]
fn numeric_base_residual_is_second_order_in_time() {
    // the residual check differences the stored trajectory at O(h²)
    let r: Vec<f64> = [0.02, 0.01]
        .iter()
        .map(|&dt| {
            let g = grid(32, dt, 0.2);
            base_residual(&solve_base_flow(&random_datum(&g, 2), 0.0, &g).unwrap())
        })
        .collect();
    let ratio = r[0] / r[1];
    assert!((3.5..4.5).contains(&ratio), "{r:?}");
}

#[test]
fn eiconal_matches_semi_lagrangian_reference() {
    let g = grid(32, 0.01, 0.3);
    let b = solve_base_flow(&random_datum(&g, 7).scale(0.5), 0.0, &g).unwrap();
    let phi = PhaseFunction::linear(&g, [1.0, 0.0, 0.0]);
    let e = solve_eiconal(&phi, &b, 0.05).unwrap();
    let last = e.snaps.len() - 1;
    let t = 0.3;
    let numeric = e.phase_at(last).values();
    let reference = semi_lagrangian_phase(&e, &phi, t);
    let err = numeric.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-6, "L-inf error {err:e}");
}

#[test]
fn degenerate_initial_phase_is_rejected() {
    let g = grid(16, 0.05, 0.5);
    let b = solve_base_flow(&SpectralField::zeros(&g, 2), 0.0, &g).unwrap();
    let flat = PhaseFunction::linear(&g, [0.05, 0.0, 0.0]);
    assert!(matches!(solve_eiconal(&flat, &b, 0.1), Err(Error::DegenerateGradient(_))));
}

#[test]
fn flow_map_of_resting_fluid_is_identity() {
    let g = grid(16, 0.05, 0.5);
    let phi = PhaseFunction::linear(&g, [1.0, 0.0, 0.0]);
    let b = scenario_base(BaseScenario::Zero, &g, 0.0, &phi, 0.1, 0).unwrap();
    let seeds = [[0.3, 1.2], [4.0, 5.5]];
    assert_eq!(flow_map(&b, 0.5, &seeds), seeds.to_vec());
}

fn shoelace(p: &[[f64; 2]]) -> f64 {
    let n = p.len();
    0.5 * (0..n).map(|i| p[i][0] * p[(i + 1) % n][1] - p[(i + 1) % n][0] * p[i][1]).sum::<f64>()
}

#[test]
fn flow_map_preserves_area() {
    let g = grid(32, 0.01, 0.5);
    let phi = PhaseFunction::linear(&g, [1.0, 0.0, 0.0]);
    let b = scenario_base(BaseScenario::TaylorGreen, &g, 0.0, &phi, 0.05, 0).unwrap();
    let m = 2000;
    let r = 0.6;
    let seeds: Vec<[f64; 2]> =
        (0..m).map(|i| i as f64 * TWO_PI / m as f64).map(|a| [2.0 + r * a.cos(), 2.5 + r * a.sin()]).collect();
    let a0 = shoelace(&seeds);
    let moved = flow_map(&b, 0.5, &seeds);
    let a1 = shoelace(&moved);
    assert!(((a1 - a0) / a0).abs() < 1e-4, "{a0} -> {a1}");
    assert!(moved.iter().zip(&seeds).any(|(p, q)| (p[0] - q[0]).abs() > 1e-2));
}

use phasecascade::baseflow::{scenario_base, BaseScenario};
use phasecascade::operators::{
    apply_ell, apply_m, epsilon_min, leray_project, mode_projector, pointwise_mode_projector, pointwise_projector,
    projector_defects, ridiv, ridiv_theta, singular_d, singular_div, singular_grad, theta_antiderivative,
};
use phasecascade::{Error, Grid, PhaseFunction, ProfileField, SingularCalculus, SpectralField, C64};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid(n: usize) -> Grid {
    Grid::new(2, n, 4, 0.01, 1.0).unwrap()
}

fn trig_terms(rng: &mut ChaCha8Rng, band: i64) -> Vec<(f64, f64, f64, f64)> {
    let mut t = Vec::new();
    for a in -band..=band {
        for b in -band..=band {
            t.push((a as f64, b as f64, rng.gen_range(-1.0..1.0), rng.gen_range(0.0..6.3)));
        }
    }
    t
}

fn eval(t: &[(f64, f64, f64, f64)], x: f64, y: f64) -> f64 {
    t.iter().map(|(a, b, c, p)| c * (a * x + b * y + p).cos()).sum()
}

fn random_scalar(g: &Grid, seed: u64, band: i64, zero_mean: bool) -> SpectralField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = trig_terms(&mut rng, band);
    let mut f = SpectralField::scalar_from_fn(g, |x, y| eval(&t, x, y));
    if zero_mean {
        f.coeffs[0][0] = C64::new(0.0, 0.0);
    }
    f
}

fn random_vector(g: &Grid, seed: u64, band: i64) -> SpectralField {
    SpectralField::from_components(&[random_scalar(g, seed, band, false), random_scalar(g, seed + 991, band, false)])
}

/// θ-mean-free profile with harmonics 1..=kmax.
fn random_profile(g: &Grid, seed: u64, components: usize, kmax: usize, band: i64) -> ProfileField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terms: Vec<Vec<_>> = (0..(kmax + 1) * components * 2).map(|_| trig_terms(&mut rng, band)).collect();
    ProfileField::from_fn(g, components, kmax, |k, c, x, y| {
        if k == 0 {
            return C64::new(0.0, 0.0);
        }
        let i = 2 * (k * components + c);
        C64::new(eval(&terms[i], x, y), eval(&terms[i + 1], x, y))
    })
}

fn rel(a: &ProfileField, b: &ProfileField) -> f64 {
    a.sub(b).l2_norm() / b.l2_norm().max(1e-300)
}

#[test]
fn leray_kills_gradients_and_keeps_solenoidal_fields() {
    let g = grid(32);
    let p = random_scalar(&g, 1, 5, true);
    assert!(leray_project(&p.gradient()).l2_norm() < 1e-13);
    let mut grad = p.gradient();
    grad.coeffs[0][0] = C64::new(0.7, 0.0);
    let kept = leray_project(&grad);
    assert!((kept.coeffs[0][0] - C64::new(0.7, 0.0)).norm() < 1e-15);
    // ξ·û vanishes exactly for shear fields, so nothing changes bitwise
    let shear = SpectralField::from_fn(&g, 2, |x, y| vec![y.sin() + (3.0 * y).cos(), (2.0 * x).cos()]);
    assert_eq!(leray_project(&shear).coeffs, shear.coeffs);
    let psi = random_scalar(&g, 2, 5, false);
    let u = SpectralField::from_components(&[psi.derivative(1), psi.derivative(0).scale(-1.0)]);
    assert!(leray_project(&u).sub(&u).l2_norm() < 1e-15 * u.l2_norm());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn leray_idempotent_and_self_adjoint(seed in any::<u32>()) {
        let g = grid(32);
        let u = random_vector(&g, seed as u64, 6);
        let v = random_vector(&g, seed as u64 + 7, 6);
        let pu = leray_project(&u);
        prop_assert!(leray_project(&pu).sub(&pu).l2_norm() <= 1e-13 * u.l2_norm());
        prop_assert!(pu.divergence().l2_norm() <= 1e-12 * u.l2_norm());
        let lhs = pu.inner(&v);
        let rhs = u.inner(&leray_project(&v));
        prop_assert!((lhs - rhs).abs() <= 1e-12 * u.l2_norm() * v.l2_norm());
    }

    #[test]
    fn ridiv_is_right_inverse(seed in any::<u32>()) {
        let g = grid(32);
        let f = random_scalar(&g, seed as u64, 8, true);
        let u = ridiv(&f).unwrap();
        prop_assert!(u.divergence().sub(&f).l2_norm() <= 1e-12 * f.l2_norm());
    }

    #[test]
    fn theta_antiderivative_inverts_derivative(seed in any::<u32>()) {
        let g = grid(16);
        let q = random_profile(&g, seed as u64, 2, 3, 3);
        let back = theta_antiderivative(&q).unwrap().theta_derivative();
        prop_assert!(rel(&back, &q) <= 1e-13);
    }

    #[test]
    fn pointwise_projector_is_orthogonal(seed in any::<u32>()) {
        let g = grid(16);
        let mut x = random_vector(&g, seed as u64, 3).scale(0.2);
        x.coeffs[0][0] += C64::new(2.0, 0.0);
        let p = pointwise_projector(&x, 0.1).unwrap();
        let (idem, sym, ann) = projector_defects(&p);
        prop_assert!(idem <= 1e-12 && sym <= 1e-12 && ann <= 1e-12);
    }
}

#[test]
fn ridiv_of_sine() {
    let g = grid(16);
    let f = SpectralField::scalar_from_fn(&g, |x, _| x.sin());
    let u = ridiv(&f).unwrap();
    let expect = SpectralField::from_fn(&g, 2, |x, _| vec![-x.cos(), 0.0]);
    assert!(u.sub(&expect).l2_norm() < 1e-13);
}

#[test]
fn ridiv_rejects_mean() {
    let g = grid(16);
    let f = SpectralField::scalar_from_fn(&g, |x, _| 1.0 + x.sin());
    assert!(matches!(ridiv(&f), Err(Error::NonZeroMean(_))));
}

#[test]
fn projector_of_constant_direction() {
    let g = grid(8);
    let x = SpectralField::from_fn(&g, 2, |_, _| vec![1.0, 0.0]);
    let p = pointwise_projector(&x, 0.5).unwrap();
    assert_eq!(p.matrix(5)[0], [0.0, 0.0, 0.0]);
    assert_eq!(p.matrix(5)[1][1], 1.0);
    let small = SpectralField::from_fn(&g, 2, |_, _| vec![0.01, 0.0]);
    assert!(matches!(pointwise_projector(&small, 0.1), Err(Error::DegenerateGradient(_))));
}

#[test]
fn antiderivative_of_cosine_and_mean_error() {
    let g = grid(8);
    // e₁cos θ ↦ e₁sin θ
    let u = ProfileField::from_fn(&g, 2, 1, |k, c, _, _| C64::new(if k == 1 && c == 0 { 0.5 } else { 0.0 }, 0.0));
    let a = theta_antiderivative(&u).unwrap();
    assert!((a.modes[1][0][0] - C64::new(0.0, -0.5)).norm() < 1e-15);
    assert!(a.modes[0][0].iter().all(|z| z.norm() == 0.0));
    let with_mean = ProfileField::from_fn(&g, 1, 1, |_, _, _, _| C64::new(1.0, 0.0));
    assert!(matches!(theta_antiderivative(&with_mean), Err(Error::NonZeroThetaMean(_))));
}

fn calc(eps: f64, g: &Grid) -> SingularCalculus {
    let psi = SpectralField::scalar_from_fn(g, |_, y| 0.2 * y.sin());
    SingularCalculus::new(eps, PhaseFunction::new([1.0, 0.0, 0.0], psi))
}

#[test]
fn singular_div_of_theta_independent_field() {
    let g = grid(32);
    let u = ProfileField::from_mean(&random_vector(&g, 4, 4));
    let c = calc(0.25, &g);
    let d = singular_div(&u, &c);
    assert!(rel(&d, &u.divergence().scale(0.25)) < 1e-14);
}

#[test]
fn singular_div_hand_expansion() {
    // u = a(x)e₁cos θ, φ = x₁ + 0.2 sin x₂: 𝔡𝔦𝔳 u = ε∂₁a cos θ − a sin θ
    let g = grid(32);
    let eps = 0.5;
    let u = ProfileField::from_fn(&g, 2, 1, |k, c, x, y| C64::new(if k == 1 && c == 0 { 0.5 * (x + y).cos() } else { 0.0 }, 0.0));
    let d = singular_div(&u, &calc(eps, &g));
    let expect = ProfileField::from_fn(&g, 1, 1, |k, _, x, y| {
        if k == 1 {
            // k = 1 parts: cos θ ↦ 1/2, −sin θ ↦ i/2
            C64::new(-0.5 * eps * (x + y).sin(), 0.5 * (x + y).cos())
        } else {
            C64::new(0.0, 0.0)
        }
    });
    assert!(rel(&d, &expect) < 1e-13);
}

#[test]
fn singular_grad_div_adjoint() {
    let g = grid(32);
    let c = calc(0.125, &g);
    let p = random_profile(&g, 5, 1, 2, 3);
    let u = random_profile(&g, 6, 2, 2, 3);
    let lhs = singular_grad(&p, &c).inner(&u);
    let rhs = -p.inner(&singular_div(&u, &c));
    assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
}

#[test]
fn singular_d_matches_chain_rule() {
    // ε ∂_j [u(x, φ(x)/ε)] = (𝔡_j u)(x, φ(x)/ε)
    let g = grid(64);
    let eps = 0.25;
    let c = calc(eps, &g);
    let u = random_profile(&g, 9, 1, 1, 2);
    let phi = c.phase.values();
    let on_phase = |p: &ProfileField| -> Vec<f64> {
        let ph = p.to_physical();
        (0..g.points())
            .map(|i| {
                let e = C64::from_polar(1.0, phi[i] / eps);
                2.0 * (ph.value(1, 0, i) * e).re + ph.value(0, 0, i).re
            })
            .collect()
    };
    for j in 0..2 {
        let lhs = SpectralField::to_spectral(&g, &[on_phase(&u)]).unwrap().derivative(j).scale(eps).to_physical().remove(0);
        let rhs = on_phase(&singular_d(&u, &c, j));
        let err = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "axis {j}: {err}");
    }
}

#[test]
fn ridiv_theta_example_at_unit_epsilon() {
    // ε = 1, φ = x₁, g = cos θ cos x₂: 𝔡𝔦𝔳 v = g by substitution
    let g = grid(32);
    let c = SingularCalculus::new(1.0, PhaseFunction::linear(&g, [1.0, 0.0, 0.0]));
    let rhs = ProfileField::from_fn(&g, 1, 1, |k, _, _, y| C64::new(if k == 1 { 0.5 * y.cos() } else { 0.0 }, 0.0));
    let v = ridiv_theta(&rhs, &c).unwrap();
    assert!(rel(&singular_div(&v, &c), &rhs) < 1e-9);
    let zero = ProfileField::zeros(&g, 1, 1);
    assert_eq!(ridiv_theta(&zero, &c).unwrap().l2_norm(), 0.0);
}

#[test]
fn ridiv_theta_errors() {
    let g = grid(32);
    let with_mean = ProfileField::from_fn(&g, 1, 1, |_, _, x, _| C64::new(x.cos(), 0.0));
    let c = SingularCalculus::new(1.0, PhaseFunction::linear(&g, [1.0, 0.0, 0.0]));
    assert!(matches!(ridiv_theta(&with_mean, &c), Err(Error::NonZeroThetaMean(_))));
    let flat = SingularCalculus::new(1.0, PhaseFunction::linear(&g, [0.0, 1.0, 0.0]));
    let osc = random_profile(&g, 2, 1, 1, 2);
    assert!(matches!(ridiv_theta(&osc, &flat), Err(Error::DegenerateDirection(_))));
}

#[test]
fn ridiv_theta_composition_on_range() {
    let g = grid(128);
    for (seed, eps) in [(1u64, 0.5), (2, 0.25), (3, 0.125)] {
        let c = calc(eps, &g);
        assert!(eps >= epsilon_min(&g, &c.phase, 2));
        let rhs = singular_div(&random_profile(&g, seed, 2, 2, 3), &c);
        let v = ridiv_theta(&rhs, &c).unwrap();
        assert!(rel(&singular_div(&v, &c), &rhs) < 1e-9, "eps {eps}");
    }
}

#[test]
fn mode_projector_properties() {
    let g = grid(128);
    let c = calc(0.125, &g);
    let u = random_profile(&g, 12, 2, 2, 3);
    let p = mode_projector(&u, &c).unwrap();
    assert!(singular_div(&p, &c).l2_norm() < 1e-9 * u.l2_norm());
    let pp = mode_projector(&p, &c).unwrap();
    assert!(rel(&pp, &p) < 1e-12);
    // commutes with ∂_θ and with each 𝔡_j
    let a = mode_projector(&u.theta_derivative(), &c).unwrap();
    assert!(a.sub(&p.theta_derivative()).l2_norm() < 1e-9 * u.l2_norm());
    for j in 0..2 {
        let lhs = mode_projector(&singular_d(&u, &c, j), &c).unwrap();
        let rhs = singular_d(&p, &c, j);
        assert!(lhs.sub(&rhs).l2_norm() < 1e-8 * u.l2_norm(), "axis {j}");
    }
}

#[test]
fn mode_projector_rejects_unresolved_epsilon() {
    let g = grid(32);
    let c = calc(1.0 / 64.0, &g);
    let u = random_profile(&g, 1, 2, 1, 2);
    assert!(matches!(mode_projector(&u, &c), Err(Error::EpsilonTooSmallForGrid { .. })));
}

#[test]
fn mode_projector_approaches_pointwise_projector() {
    let g = grid(256);
    let c0 = calc(1.0, &g);
    let u = random_profile(&g, 21, 2, 1, 2);
    let pointwise = pointwise_mode_projector(&u, &c0.phase).unwrap();
    let d: Vec<f64> = [0.25, 0.125, 0.0625]
        .iter()
        .map(|&e| mode_projector(&u, &calc(e, &g)).unwrap().sub(&pointwise).l2_norm())
        .collect();
    for w in d.windows(2) {
        let r = w[1] / w[0];
        assert!((0.4..=0.6).contains(&r), "ratio {r} from {d:?}");
    }
}

#[test]
fn m_and_ell_vanish_for_resting_base() {
    let g = grid(16);
    let phi = PhaseFunction::linear(&g, [1.0, 0.0, 0.0]);
    let base = scenario_base(BaseScenario::Zero, &g, 0.0, &phi, 0.1, 0).unwrap();
    let u = random_profile(&g, 3, 2, 2, 2);
    assert!(apply_m(&u, &base, 0).l2_norm() < 1e-14);
    assert!(apply_ell(&u, &base, 0).l2_norm() < 1e-14);
}

#[test]
fn m_and_ell_for_shear_base() {
    // u₀ = (sin x₂, 0), φ₀ = x₁ − t sin x₂; at t = 0: X₀ = e₁, ∂_tX₀ = (0, −cos x₂)
    // M U = (cos x₂ U₂, cos x₂ U₁), ℓU = −2 cos x₂ U₂
    let g = grid(32);
    let phi = PhaseFunction::linear(&g, [1.0, 0.0, 0.0]);
    let base = scenario_base(BaseScenario::Shear, &g, 0.0, &phi, 0.1, 0).unwrap();
    let u = random_profile(&g, 8, 2, 1, 2);
    let ph = u.to_physical();
    let m = apply_m(&u, &base, 0).to_physical();
    let l = apply_ell(&u, &base, 0).to_physical();
    let mut err = 0.0f64;
    for idx in 0..g.points() {
        let c = g.coord(idx % g.n).cos();
        for k in 0..=1i64 {
            let (u1, u2) = (ph.value(k, 0, idx), ph.value(k, 1, idx));
            err = err.max((m.value(k, 0, idx) - u2 * c).norm());
            err = err.max((m.value(k, 1, idx) - u1 * c).norm());
            err = err.max((l.value(k, 0, idx) + u2 * 2.0 * c).norm());
        }
    }
    assert!(err < 1e-12, "{err}");
}

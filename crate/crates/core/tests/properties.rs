//! Randomized invariants of the grid, profiles, noise, stepping and diagnostics.

use proptest::prelude::*;

use nlsim::diagnostics::{
    banica_check, blowup_rate_fit, hgn_slack, modulation_fit, reconstruct, theta, virial, CutoffSpec, ModulationFit,
};
use nlsim::evolution::step_strang;
use nlsim::exact::{pseudo_conformal_blowup, pseudo_conformal_map, BlowupParams, Bubble, MapDirection};
use nlsim::grid::{norm_suite, spectral_derivatives, Spectral};
use nlsim::ground_state::{gn_ratio, QProfile};
use nlsim::noise::{gauge_with_values, make_profiles, BrownianPath, GaugeDirection, ProfileKind};
use nlsim::{Complex64, ComplexField, GridSpec};

fn grid() -> GridSpec {
    GridSpec::new(1, 40.0, 256).unwrap()
}

/// Up to three modulated Gaussian bumps: `(amplitude, center, width, wavenumber, phase)`.
fn bumps() -> impl Strategy<Value = Vec<(f64, f64, f64, f64, f64)>> {
    prop::collection::vec((0.1..1.0f64, -5.0..5.0f64, 0.6..2.0f64, -2.0..2.0f64, -3.0..3.0f64), 1..4)
}

fn field(grid: &GridSpec, bumps: &[(f64, f64, f64, f64, f64)]) -> ComplexField {
    ComplexField::from_fn(grid, |x| {
        bumps.iter().fold(Complex64::new(0.0, 0.0), |acc, &(a, c, w, k, ph)| {
            let y = (x[0] - c) / w;
            acc + Complex64::from_polar(a * (-y * y).exp(), k * x[0] + ph)
        })
    })
}

/// Rescales `f` so that `||f||² = s ||Q||²`.
fn with_mass(f: &ComplexField, s: f64, q_mass: f64) -> ComplexField {
    f.scale(Complex64::new((s * q_mass / f.norm_sq()).sqrt(), 0.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn parseval(b in bumps()) {
        let g = grid();
        let f = field(&g, &b);
        let spectral = Spectral::new(&g).spectral_norm_sq(f.values());
        prop_assert!((spectral - f.norm_sq()).abs() <= 1e-12 * f.norm_sq());
    }

    #[test]
    fn derivatives_are_linear(b1 in bumps(), b2 in bumps(), a in -2.0..2.0f64, c in -2.0..2.0f64) {
        let g = grid();
        let (f, h) = (field(&g, &b1), field(&g, &b2));
        let (a, c) = (Complex64::new(a, 0.3), Complex64::new(c, -0.7));
        let combo = spectral_derivatives(&f.scale(a).add(&h.scale(c)).unwrap()).unwrap();
        let (df, dh) = (spectral_derivatives(&f).unwrap(), spectral_derivatives(&h).unwrap());
        let expect = df.laplacian.scale(a).add(&dh.laplacian.scale(c)).unwrap();
        let scale = expect.max_abs().max(1.0);
        prop_assert!(combo.laplacian.sub(&expect).unwrap().max_abs() < 1e-11 * scale);
        let expect = df.gradient[0].scale(a).add(&dh.gradient[0].scale(c)).unwrap();
        prop_assert!(combo.gradient[0].sub(&expect).unwrap().max_abs() < 1e-11 * scale);
    }

    #[test]
    fn norm_ordering(b in bumps()) {
        let n = norm_suite(&field(&grid(), &b));
        prop_assert!(n.sigma >= n.h1 && n.h1 >= n.l2 && n.l2 >= 0.0);
    }

    #[test]
    fn gagliardo_nirenberg_bounds(b in bumps(), s in 0.05..1.0f64) {
        let q = QProfile::critical(1).unwrap();
        let v = with_mass(&field(&grid(), &b), s, q.mass);
        prop_assert!(gn_ratio(&v, q.mass) <= 1.0 + 1e-9);
        let grad_sq = norm_suite(&v).grad.powi(2);
        prop_assert!(hgn_slack(&v, q.mass) >= -1e-9 * grad_sq);
    }

    #[test]
    fn banica_holds_below_critical_mass(b in bumps(), s in 0.05..1.0f64, sigma in 1.0..8.0f64) {
        let g = grid();
        let q = QProfile::critical(1).unwrap();
        let v = with_mass(&field(&g, &b), s, q.mass);
        let probe = make_profiles(ProfileKind::Schwartz { sigma }, 1.0, &[], &g).unwrap();
        let r = banica_check(&v, probe.grad(0), q.mass).unwrap();
        prop_assert!(r.satisfied, "{r:?}");
    }

    #[test]
    fn gauge_is_a_pointwise_phase(b in bumps(), path in prop::collection::vec(-3.0..3.0f64, 2)) {
        let g = grid();
        let f = field(&g, &b);
        let profiles = nlsim::noise::NoiseProfileSet::new(&g, vec![
            make_profiles(ProfileKind::Schwartz { sigma: 3.0 }, 0.7, &[], &g).unwrap().profiles()[0].clone(),
            make_profiles(ProfileKind::Flat, 0.2, &[[1.0, 0.0]], &g).unwrap().profiles()[0].clone(),
        ]).unwrap();
        let x = gauge_with_values(&f, &profiles, &path, GaugeDirection::Apply).unwrap();
        for (a, b) in x.values().iter().zip(f.values()) {
            prop_assert!((a.norm() - b.norm()).abs() <= 4.0 * f64::EPSILON * b.norm());
        }
        prop_assert!((x.norm_sq() - f.norm_sq()).abs() <= 1e-14 * f.norm_sq());
        let back = gauge_with_values(&x, &profiles, &path, GaugeDirection::Remove).unwrap();
        prop_assert!(back.sub(&f).unwrap().max_abs() <= 1e-14 * f.max_abs().max(1.0));
        let c = profiles.coefficients(&path);
        prop_assert!(c.a0.iter().all(|z| z.re <= 0.0));
    }

    #[test]
    fn strang_step_keeps_mass(b in bumps(), dt in 1e-4..1e-2f64) {
        let f = field(&grid(), &b);
        let v = step_strang(&f, dt, 5.0).unwrap();
        prop_assert!((v.norm_sq() - f.norm_sq()).abs() <= 1e-14 * f.norm_sq());
    }

    #[test]
    fn cutoff_virial_below_uncut(b in bumps(), m in 0.5..10.0f64, c in -3.0..3.0f64) {
        let f = field(&grid(), &b);
        let cut = CutoffSpec::new(m).unwrap();
        prop_assert!(virial(&f, [c, 0.0], Some(&cut)) <= virial(&f, [c, 0.0], None) * (1.0 + 1e-14));
    }

    #[test]
    fn theta_bounds(r in 0.0..4.0f64) {
        let c = CutoffSpec::new(1.0).unwrap().c_const;
        let (th, dth) = theta(r);
        prop_assert!(th >= 0.0 && th <= r * r + 1e-15);
        if r >= 3.0 {
            prop_assert!(th == 0.0 && dth == 0.0);
        }
        prop_assert!(dth * dth <= c * th * (1.0 + 1e-9) + 1e-300);
    }

    #[test]
    fn rate_fit_ignores_scale(alpha in 0.6..1.2f64, t_blow in 0.5..2.0f64, k in 0.01..100.0f64) {
        let t: Vec<f64> = (0..60).map(|i| t_blow - 0.3 * 1e-3f64.powf(i as f64 / 59.0)).collect();
        let g: Vec<f64> = t.iter().map(|s| (t_blow - s).powf(-alpha)).collect();
        let scaled: Vec<f64> = g.iter().map(|x| k * x).collect();
        let (a, b) = (blowup_rate_fit(&t, &g).unwrap(), blowup_rate_fit(&t, &scaled).unwrap());
        prop_assert!((a.alpha - b.alpha).abs() < 1e-8 && (a.t_est - b.t_est).abs() < 1e-8, "{a:?} vs {b:?}");
        prop_assert!((a.alpha - alpha).abs() < 1e-6);
    }

    #[test]
    fn modulation_round_trip(lambda in 0.4..1.5f64, y in -3.0..3.0f64, gamma in -3.0..3.0f64) {
        // wide enough that the widest profile's tail is below 1e-10 at the edge
        let g = GridSpec::new(1, 80.0, 4096).unwrap();
        let q = QProfile::critical(1).unwrap();
        let truth = ModulationFit { lambda, center: [y, 0.0], gamma, residual_l2: 0.0, residual_h1: 0.0, multi_humped: false };
        let fit = modulation_fit(&reconstruct(&truth, &q, &g), &q).unwrap();
        prop_assert!((fit.lambda - lambda).abs() < 1e-8, "{fit:?}");
        prop_assert!((fit.center[0] - y).abs() < 1e-8, "{fit:?}");
        prop_assert!((fit.gamma - gamma).abs() < 1e-8, "{fit:?}");
    }

    #[test]
    fn pseudo_conformal_map_round_trip(b in bumps(), t in -0.25..0.2f64) {
        let g = GridSpec::new(1, 40.0, 512).unwrap();
        let f = field(&g, &b);
        let (image, s) = pseudo_conformal_map(&f, t, 1.0, MapDirection::Forward).unwrap();
        prop_assert!((image.norm_sq() - f.norm_sq()).abs() < 1e-10 * f.norm_sq());
        let (back, t_back) = pseudo_conformal_map(&image, s, 1.0, MapDirection::Inverse).unwrap();
        prop_assert!((t_back - t).abs() < 1e-12);
        prop_assert!(back.sub(&f).unwrap().l2_norm() < 1e-8 * f.l2_norm());
    }

    #[test]
    fn separated_bubbles_add_mass(x1 in -12.0..-10.0f64, x2 in 10.0..12.0f64, t in 0.0..0.8f64, th in -3.0..3.0f64) {
        let g = GridSpec::new(1, 64.0, 4096).unwrap();
        let q = QProfile::critical(1).unwrap();
        let params = BlowupParams {
            t_blow: 1.0,
            bubbles: vec![Bubble { x: [x1, 0.0], w: 1.0, theta: th }, Bubble { x: [x2, 0.0], w: 1.0, theta: 0.0 }],
        };
        let s = pseudo_conformal_blowup(&params, t, &g, &q).unwrap();
        prop_assert!((s.norm_sq() - 2.0 * q.mass).abs() < 1e-6);
    }

    #[test]
    fn brownian_bridge_is_consistent(seed in any::<u64>(), interval in 0usize..8, level in 1u32..12, m in 0u64..64) {
        let mut a = BrownianPath::uniform(seed, 0.0, 0.1, 8, 2).unwrap();
        let mut b = BrownianPath::uniform(seed, 0.0, 0.1, 8, 2).unwrap();
        let m = m % ((1u64 << (level - 1)) + 1);
        let coarse = a.value_at_dyadic(interval, level - 1, m).unwrap();
        let fine = b.value_at_dyadic(interval, level, 2 * m).unwrap();
        prop_assert_eq!(coarse.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), fine.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(a.values(), b.values());
    }
}

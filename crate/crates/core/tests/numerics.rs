use proptest::prelude::*;
use speiser_core::numerics::{
    central_diff, newton_solve, secant_fallback, LogMagnitude, C64, OVERFLOW_LOG,
};
use speiser_core::phase_param::{x_j, ContinuedPoint};
use speiser_core::{landmarks, Family, FamilySpec};
use std::f64::consts::{E, PI};

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

// 4 lambda^2 exp(4 lambda / e^2 - 2) - 1, the fixed-critical-value condition
// written out in a different form from the one the landmark solver uses.
fn fixed_cv(l: C64) -> C64 {
    4.0 * l * l * (4.0 * l / (E * E) - 2.0).exp() - 1.0
}

fn fixed_cv_deriv(l: C64) -> C64 {
    let ex = (4.0 * l / (E * E) - 2.0).exp();
    8.0 * l * ex + 4.0 * l * l * ex * 4.0 / (E * E)
}

fn sine_eq(z: C64) -> C64 {
    let w = z * z;
    w * w.sin() * w.sin() - w - 2.0 * PI
}

fn sine_eq_deriv(z: C64) -> C64 {
    let w = z * z;
    let (s, co) = (w.sin(), w.cos());
    2.0 * z * (s * s - 1.0) + 4.0 * z * w * s * co
}

#[test]
fn newton_finds_both_worked_parameters() {
    let r = newton_solve(fixed_cv, fixed_cv_deriv, c(1.0, 0.0), 1e-13, 50).unwrap();
    assert!((r.root - 1.0288).norm() < 5e-4);
    assert!(r.residual < 1e-12);
    let l0 = landmarks::zsq_exp_parameter().unwrap().root;
    assert!((r.root - l0).norm() < 1e-12);

    let r = newton_solve(sine_eq, sine_eq_deriv, c(0.0, 3.9), 1e-11, 50).unwrap();
    assert!((r.root - c(0.0, 3.85299)).norm() < 5e-4);
    assert!(sine_eq(r.root).norm() < 1e-10);
}

#[test]
fn secant_examples() {
    let r = secant_fallback(fixed_cv, c(1.0, 0.0), c(1.1, 0.0), 1e-13, 60).unwrap();
    assert!((r.root - 1.0288).norm() < 5e-4);
    let r = secant_fallback(|z| z - 1.0, c(0.0, 0.0), c(2.0, 0.0), 1e-14, 10).unwrap();
    assert!((r.root - 1.0).norm() < 1e-14);
    let r = secant_fallback(|z| z.exp() - 2.0, c(0.0, 0.0), c(1.0, 0.0), 1e-14, 60).unwrap();
    assert!((r.root - 2f64.ln()).norm() < 1e-13);
}

/// First Taylor coefficient from samples on a circle of radius `h`.
fn circle_fit<G: Fn(C64) -> C64>(g: G, a: C64, h: f64) -> C64 {
    let n = 16;
    let s: C64 = (0..n)
        .map(|k| {
            let t = 2.0 * PI * k as f64 / n as f64;
            g(a + C64::from_polar(h, t)) * C64::from_polar(1.0, -t)
        })
        .sum();
    s / (n as f64 * h)
}

#[test]
fn central_diff_of_transversality_function() {
    let f = FamilySpec::zsq_exp();
    let l0 = landmarks::zsq_exp_parameter().unwrap().root;
    let cp = ContinuedPoint {
        base_param: l0,
        base_point: f.singular_values(l0)[1].value,
        period: 1,
    };
    let x1 = |b: C64| x_j(&f, 1, b, &cp, 0).unwrap();
    let oracle = circle_fit(x1, l0, 1e-4);
    assert!(oracle.norm() > 0.1);
    for h in [1e-5, 1e-6, 1e-7] {
        let d = central_diff(x1, l0, h).unwrap();
        assert!(
            (d - oracle).norm() < 0.01 * oracle.norm(),
            "h={h}: {d} vs {oracle}"
        );
    }
}

#[test]
fn overflow_threshold_leaves_room_for_one_product() {
    let z = LogMagnitude::new(OVERFLOW_LOG, 0.3);
    let v = z.to_complex().unwrap();
    assert!((v * 1e4).norm().is_finite());
    assert!(LogMagnitude::new(OVERFLOW_LOG + 1.0, 0.0)
        .to_complex()
        .is_err());
}

proptest! {
    #[test]
    fn newton_recovers_simple_roots(
        r1 in (-3.0..3.0f64, -3.0..3.0f64),
        r2 in (-3.0..3.0f64, -3.0..3.0f64),
        r3 in (-3.0..3.0f64, -3.0..3.0f64),
        t in 0.0..(2.0 * PI),
    ) {
        let (r1, r2, r3) = (c(r1.0, r1.1), c(r2.0, r2.1), c(r3.0, r3.1));
        let sep = (r1 - r2).norm().min((r1 - r3).norm());
        prop_assume!(sep > 0.05);
        let p = |z: C64| (z - r1) * (z - r2) * (z - r3);
        let dp = |z: C64| (z - r2) * (z - r3) + (z - r1) * (z - r3) + (z - r1) * (z - r2);
        let start = r1 + C64::from_polar(sep / 10.0, t);
        let r = newton_solve(p, dp, start, 1e-13, 60).unwrap();
        prop_assert!((r.root - r1).norm() < 1e-10);
    }

    #[test]
    fn log_magnitude_round_trip(l in -700.0..700.0f64, arg in -PI + 1e-3..PI - 1e-3) {
        let back = LogMagnitude::from_complex(LogMagnitude::new(l, arg).to_complex().unwrap());
        // one unit in the last place at the scale of max(1, |l|)
        let ulp = f64::EPSILON * l.abs().max(1.0);
        prop_assert!((back.log_abs - l).abs() <= ulp, "{} vs {}", back.log_abs, l);
        prop_assert!((back.arg - arg).abs() < 1e-12);
    }

    #[test]
    fn central_diff_is_second_order(re in -1.0..1.0f64, im in -1.0..1.0f64) {
        let a = c(re, im);
        for (g, dg) in [
            (Box::new(|z: C64| z.exp()) as Box<dyn Fn(C64) -> C64>, a.exp()),
            (Box::new(|z: C64| z.sin()), a.cos()),
            (Box::new(|z: C64| z * z * z), 3.0 * a * a),
        ] {
            let e1 = (central_diff(&g, a, 1e-2).unwrap() - dg).norm();
            let e2 = (central_diff(&g, a, 5e-3).unwrap() - dg).norm();
            prop_assert!(e1 >= 3.0 * e2, "{e1} {e2}");
        }
    }
}

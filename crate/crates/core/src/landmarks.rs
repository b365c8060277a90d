//! The worked parameters: `z^2 e^z` with a fixed critical value,
//! `z e^{z+1}`, and `sin(z^2)` with strictly preperiodic critical values.

use crate::classify::{classify, ClassificationReport, ClassifyOptions};
use crate::family::{Family, FamilySpec};
use crate::numerics::{newton_solve, NumericsError, RootResult, C64};
use serde::Serialize;

/// Solve `lambda v e^v = 1` with `v = 4 lambda / e^2`, i.e. `f(v) = v` for
/// `lambda z^2 e^z`.
pub fn zsq_exp_parameter() -> Result<RootResult, NumericsError> {
    let k = 4.0 * (-2f64).exp();
    let g = |l: C64| {
        let v = l * k;
        l * v * v.exp() - 1.0
    };
    let dg = |l: C64| {
        let v = l * k;
        v * v.exp() * (v + 2.0)
    };
    newton_solve(g, dg, C64::new(1.0, 0.0), 1e-14, 50)
}

/// Solve `z^2 sin(z^2)^2 = z^2 + 2 pi` near `3.85 i`.
pub fn sine_sq_parameter() -> Result<RootResult, NumericsError> {
    let g = |z: C64| {
        let w = z * z;
        let s = w.sin();
        w * s * s - w - 2.0 * std::f64::consts::PI
    };
    let dg = |z: C64| {
        let w = z * z;
        let s = w.sin();
        2.0 * z * (s * s - 1.0) + 4.0 * z * w * s * w.cos()
    };
    newton_solve(g, dg, C64::new(0.0, 3.85), 1e-12, 50)
}

#[derive(Debug, Clone, Serialize)]
pub struct Landmark {
    pub name: String,
    pub param: C64,
    pub residual: f64,
    /// Named checks with the measured quantity.
    pub checks: Vec<(String, f64)>,
    pub report: ClassificationReport,
}

/// Solve and classify all three parameters.
pub fn reproduce(opts: &ClassifyOptions) -> Result<Vec<Landmark>, NumericsError> {
    let mut out = Vec::new();

    let zsq = FamilySpec::zsq_exp();
    let r1 = zsq_exp_parameter()?;
    let l1 = r1.root;
    let v = l1 * 4.0 * (-2f64).exp();
    out.push(Landmark {
        name: "zsq_exp fixed critical value".into(),
        param: l1,
        residual: r1.residual,
        checks: vec![
            ("|f(v) - v|".into(), (zsq.value(l1, v) - v).norm()),
            ("|f'(v)|".into(), zsq.deriv(l1, v).norm()),
            ("v + 2".into(), v.re + 2.0),
        ],
        report: classify(&zsq, l1, opts),
    });

    let ze = FamilySpec::ze_shift();
    let one = C64::new(1.0, 0.0);
    let m1 = C64::new(-1.0, 0.0);
    out.push(Landmark {
        name: "ze_shift".into(),
        param: one,
        residual: 0.0,
        checks: vec![
            ("f'(0)".into(), ze.deriv(one, C64::new(0.0, 0.0)).norm()),
            ("|f(-1) + 1|".into(), (ze.value(one, m1) - m1).norm()),
            ("|f'(-1)|".into(), ze.deriv(one, m1).norm()),
        ],
        report: classify(&ze, one, opts),
    });

    let sq = FamilySpec::sine_sq();
    let r3 = sine_sq_parameter()?;
    let l3 = r3.root;
    let w = sq.value(l3, l3);
    out.push(Landmark {
        name: "sine_sq preperiodic critical values".into(),
        param: l3,
        residual: r3.residual,
        checks: vec![
            ("|g(g(l)) - g(l)|".into(), (sq.value(l3, w) - w).norm()),
            ("|g(l) - l|".into(), (w - l3).norm()),
            ("|g'(g(l))|".into(), sq.deriv(l3, w).norm()),
        ],
        report: classify(&sq, l3, opts),
    });
    Ok(out)
}

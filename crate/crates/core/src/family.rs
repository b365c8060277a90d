//! One-parameter slices `f_a(z) = a * g(z)` of Speiser-class entire
//! functions, with closed-form derivatives, singular values and tracts.

use crate::numerics::{central_diff, wrap_arg, LogMagnitude, Tower, C64, OVERFLOW_LOG};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};
use thiserror::Error;

/// Beyond this `|z|^p` the sine critical lattice is not resolved by floats.
const LATTICE_RESOLVED: f64 = 1e15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FamilyError {
    #[error("value overflows native floats: log|f| = {}", .0.log_abs)]
    Overflow(LogMagnitude),
    #[error("family {id} is inconsistent: {what} (relative error {max_rel_error:e})")]
    InconsistentFamily {
        id: String,
        what: String,
        max_rel_error: f64,
    },
    #[error("unknown family `{0}`")]
    UnknownFamily(String),
    #[error("invalid family definition: {0}")]
    InvalidSpec(String),
}

/// Shape of `g` in `f_a = a * g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum FamilyKind {
    /// `g(z) = z^m exp(c z + d)`.
    PowerExp { m: u32, c: C64, d: C64 },
    /// `g(z) = sin(z^p)`.
    SinePower { p: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingularKind {
    Critical,
    Asymptotic,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularValue {
    pub value: C64,
    pub kind: SingularKind,
    /// Representative critical points over `value`; empty for a pure
    /// asymptotic value. Sine-type families list only the roots of smallest
    /// modulus.
    pub critical_points: Vec<C64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TractTarget {
    Infinity,
    Value(C64),
}

/// Locates one logarithmic tract by the sector `|arg z - direction| < half_width`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TractDescriptor {
    pub over: TractTarget,
    pub direction: f64,
    pub half_width: f64,
    /// `R` with `|f| = R` (tract over infinity) or `|f - s| = 1/R` on the boundary.
    pub boundary_level: f64,
}

/// Evaluation interface shared by registry families and test doubles.
pub trait Family {
    fn id(&self) -> &str;
    fn value(&self, a: C64, z: C64) -> C64;
    fn deriv(&self, a: C64, z: C64) -> C64;
    fn deriv2(&self, a: C64, z: C64) -> C64;
    /// `d f_a(z) / d a`.
    fn param_deriv(&self, a: C64, z: C64) -> C64;
    fn singular_values(&self, a: C64) -> Vec<SingularValue>;
    /// `log |f_a(z)|`, exact well beyond the native float range of `f`.
    fn log_modulus(&self, a: C64, z: C64) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub id: String,
    pub kind: FamilyKind,
    #[serde(default = "one")]
    pub default_param: C64,
    #[serde(default)]
    pub description: String,
}

fn one() -> C64 {
    C64::new(1.0, 0.0)
}

/// `ln sin(w)`, stable for large `|Im w|`.
fn ln_sin(w: C64) -> C64 {
    let i = C64::i();
    let ln_2i = C64::new(2f64.ln(), FRAC_PI_2);
    if w.im >= 0.0 {
        // sin w = e^{-iw} (e^{2iw} - 1) / (2i)
        -i * w + ((2.0 * i * w).exp() - 1.0).ln() - ln_2i
    } else {
        // sin w = e^{iw} (1 - e^{-2iw}) / (2i)
        i * w + (1.0 - (-2.0 * i * w).exp()).ln() - ln_2i
    }
}

/// `cot(w)`, stable for large `|Im w|`.
fn cot(w: C64) -> C64 {
    let i = C64::i();
    if w.im >= 0.0 {
        let e = (2.0 * i * w).exp();
        i * (e + 1.0) / (e - 1.0)
    } else {
        let e = (-2.0 * i * w).exp();
        i * (1.0 + e) / (1.0 - e)
    }
}

fn zpow(z: C64, k: u32) -> C64 {
    if k == 0 {
        C64::new(1.0, 0.0)
    } else {
        z.powu(k)
    }
}

impl FamilySpec {
    pub fn new(id: &str, kind: FamilyKind, description: &str) -> Self {
        Self {
            id: id.to_string(),
            kind,
            default_param: one(),
            description: description.to_string(),
        }
    }

    pub fn exp_lambda() -> Self {
        Self::new(
            "exp_lambda",
            FamilyKind::PowerExp {
                m: 0,
                c: one(),
                d: C64::new(0.0, 0.0),
            },
            "lambda * exp(z)",
        )
    }

    pub fn sine_lambda() -> Self {
        Self::new(
            "sine_lambda",
            FamilyKind::SinePower { p: 1 },
            "lambda * sin(z)",
        )
    }

    pub fn zsq_exp() -> Self {
        Self::new(
            "zsq_exp",
            FamilyKind::PowerExp {
                m: 2,
                c: one(),
                d: C64::new(0.0, 0.0),
            },
            "lambda * z^2 * exp(z)",
        )
    }

    pub fn zm_exp(m: u32) -> Self {
        let mut f = Self::new(
            "zm_exp",
            FamilyKind::PowerExp {
                m,
                c: one(),
                d: C64::new(0.0, 0.0),
            },
            &format!("lambda * z^{m} * exp(z)"),
        );
        if m != 3 {
            f.id = format!("zm_exp:{m}");
        }
        f
    }

    pub fn ze_shift() -> Self {
        Self::new(
            "ze_shift",
            FamilyKind::PowerExp {
                m: 1,
                c: one(),
                d: one(),
            },
            "lambda * z * exp(z + 1); lambda = 1 is the map z e^(z+1)",
        )
    }

    pub fn sine_sq() -> Self {
        Self::new(
            "sine_sq",
            FamilyKind::SinePower { p: 2 },
            "lambda * sin(z^2)",
        )
    }

    /// Reject parameters that leave the supported class.
    pub fn validate(&self) -> Result<(), FamilyError> {
        match self.kind {
            FamilyKind::PowerExp { c, d, .. } => {
                if c.norm() == 0.0 || !c.re.is_finite() || !c.im.is_finite() {
                    return Err(FamilyError::InvalidSpec(
                        "exponent coefficient c must be nonzero and finite".into(),
                    ));
                }
                if !d.re.is_finite() || !d.im.is_finite() {
                    return Err(FamilyError::InvalidSpec("shift d must be finite".into()));
                }
            }
            FamilyKind::SinePower { p } => {
                if p == 0 {
                    return Err(FamilyError::InvalidSpec(
                        "power p must be at least 1".into(),
                    ));
                }
            }
        }
        if self.id.is_empty() {
            return Err(FamilyError::InvalidSpec("empty id".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, FamilyError> {
        let f: Self =
            serde_json::from_str(text).map_err(|e| FamilyError::InvalidSpec(e.to_string()))?;
        f.validate()?;
        Ok(f)
    }

    /// Every family is a one-parameter slice.
    pub fn arity(&self) -> usize {
        1
    }

    /// Number of singular values, independent of the parameter.
    pub fn singular_count(&self) -> usize {
        match self.kind {
            FamilyKind::PowerExp { m, .. } => {
                if m == 0 {
                    1
                } else {
                    2
                }
            }
            FamilyKind::SinePower { p } => {
                if p == 1 {
                    2
                } else {
                    3
                }
            }
        }
    }

    /// `f_a(z)`, or the log-scale value when it does not fit a float.
    pub fn evaluate(&self, a: C64, z: C64) -> Result<C64, FamilyError> {
        let lm = self.log_modulus(a, z);
        if lm > OVERFLOW_LOG {
            return Err(FamilyError::Overflow(LogMagnitude::exp_of(
                self.log_value(a, z),
            )));
        }
        Ok(self.value(a, z))
    }

    /// A branch of `ln f_a(z)`; the real part is exact.
    pub fn log_value(&self, a: C64, z: C64) -> C64 {
        match self.kind {
            FamilyKind::PowerExp { m, c, d } => {
                let mut l = a.ln() + c * z + d;
                if m > 0 {
                    l += z.ln() * m as f64;
                }
                l
            }
            FamilyKind::SinePower { p } => a.ln() + ln_sin(zpow(z, p)),
        }
    }

    /// `ln f_a(e^l)` for `e^l` far below float range, from the leading term
    /// at the origin. `None` when `f_a(0) != 0`; the native value at 0 is then
    /// exact to rounding.
    pub fn log_value_at_tiny(&self, a: C64, l: C64) -> Option<C64> {
        match self.kind {
            FamilyKind::PowerExp { m, d, .. } if m > 0 => Some(a.ln() + l * m as f64 + d),
            FamilyKind::PowerExp { .. } => None,
            FamilyKind::SinePower { p } => Some(a.ln() + l * p as f64),
        }
    }

    /// `f'_a(z) / f_a(z)`.
    pub fn log_deriv_ratio(&self, _a: C64, z: C64) -> C64 {
        match self.kind {
            FamilyKind::PowerExp { m, c, .. } => c + m as f64 / z,
            FamilyKind::SinePower { p } => {
                let w = zpow(z, p);
                zpow(z, p - 1) * p as f64 * cot(w)
            }
        }
    }

    /// A branch of `ln f'_a(z)`.
    pub fn log_deriv_value(&self, a: C64, z: C64) -> C64 {
        self.log_value(a, z) + self.log_deriv_ratio(a, z).ln()
    }

    /// `log |f_a(z)|` at a point that may itself lie beyond native range.
    /// `None` where the value is not resolvable in log-scale (sine-type
    /// families along the oscillating directions).
    pub fn log_modulus_far(&self, a: C64, z: &LogMagnitude) -> Option<Tower> {
        if z.log_abs < 300.0 {
            let zc = z.to_complex().ok()?;
            return Some(Tower::Finite(self.log_modulus(a, zc)));
        }
        match self.kind {
            FamilyKind::PowerExp { m, c, d } => {
                let cz = LogMagnitude::from_complex(c).mul(z);
                Some(
                    cz.re()
                        .add_finite(a.norm().ln() + m as f64 * z.log_abs + d.re),
                )
            }
            FamilyKind::SinePower { p } => {
                let w = z.powf(p as f64);
                let im = w.im();
                if im.log_abs() < 40.0 {
                    return None;
                }
                let abs_im = if im.is_negative() { im.neg() } else { im };
                Some(abs_im.add_finite(a.norm().ln() - 2f64.ln()))
            }
        }
    }

    /// `log |f'_a(z)|` at a point that may lie beyond native range.
    pub fn log_deriv_modulus_far(&self, a: C64, z: &LogMagnitude) -> Option<Tower> {
        if z.log_abs < 300.0 {
            let zc = z.to_complex().ok()?;
            return Some(Tower::Finite(self.log_deriv_value(a, zc).re));
        }
        match self.kind {
            FamilyKind::PowerExp { c, .. } => {
                // f'/f = c + m/z and m/z is below float resolution here
                self.log_modulus_far(a, z)
                    .map(|t| t.add_finite(c.norm().ln()))
            }
            FamilyKind::SinePower { p } => {
                let base = self.log_modulus_far(a, z)?;
                // |cot| -> 1 deep in the tract
                Some(base.add_finite((p as f64).ln() + (p as f64 - 1.0) * z.log_abs))
            }
        }
    }

    /// All critical points with `|c| <= radius`.
    pub fn critical_points_in_disk(&self, _a: C64, radius: f64) -> Vec<C64> {
        let mut out = Vec::new();
        match self.kind {
            FamilyKind::PowerExp { m, c, .. } => {
                if m >= 2 && radius >= 0.0 {
                    out.push(C64::new(0.0, 0.0));
                }
                if m >= 1 {
                    let cp = -(m as f64) / c;
                    if cp.norm() <= radius {
                        out.push(cp);
                    }
                }
            }
            FamilyKind::SinePower { p } => {
                if p >= 2 && radius >= 0.0 {
                    out.push(C64::new(0.0, 0.0));
                }
                let tmax = radius.powi(p as i32);
                let kmax = (tmax / PI + 0.5).floor() as i64;
                for k in 0..=kmax.max(0) {
                    let t = (k as f64 + 0.5) * PI;
                    if t > tmax {
                        break;
                    }
                    for &sgn in &[1.0, -1.0] {
                        for root in sine_roots(sgn * t, p) {
                            if root.norm() <= radius {
                                out.push(root);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Nearest critical point to `z` and its distance.
    pub fn nearest_critical(&self, a: C64, z: C64) -> (C64, f64) {
        match self.kind {
            FamilyKind::PowerExp { .. } => {
                let pts = self.critical_points_in_disk(a, f64::INFINITY);
                nearest_of(&pts, z).unwrap_or((C64::new(f64::INFINITY, 0.0), f64::INFINITY))
            }
            FamilyKind::SinePower { p } => {
                let rho = z.norm();
                let pf = p as f64;
                let mut best: Option<(C64, f64)> = None;
                let consider = |c: C64, best: &mut Option<(C64, f64)>| {
                    let d = (c - z).norm();
                    if best.is_none_or(|(_, bd)| d < bd) {
                        *best = Some((c, d));
                    }
                };
                if p >= 2 {
                    consider(C64::new(0.0, 0.0), &mut best);
                }
                if !(rho.powf(pf) < LATTICE_RESOLVED) {
                    // Critical points lie on the rays arg z = k pi / p, spaced
                    // along each ray below float resolution out here; project
                    // onto the nearest ray.
                    let th = z.arg();
                    let ray = (th * pf / PI).round() * PI / pf;
                    let off = th - ray;
                    return (C64::from_polar(rho * off.cos(), ray), rho * off.sin().abs());
                }
                let k_of = |t: f64| ((t / PI) - 0.5).max(0.0);
                let kc = k_of(rho.powf(pf)).round() as i64;
                for k in (kc - 2).max(0)..=kc + 2 {
                    let t = (k as f64 + 0.5) * PI;
                    for &sgn in &[1.0, -1.0] {
                        for r in sine_roots(sgn * t, p) {
                            consider(r, &mut best);
                        }
                    }
                }
                let (_, d0) = best.unwrap();
                let lo = (rho - d0).max(0.0).powf(pf);
                let hi = (rho + d0).powf(pf);
                let k_lo = k_of(lo).floor() as i64;
                let k_hi = (k_of(hi).ceil() as i64).min(k_lo + 100_000);
                for k in k_lo.max(0)..=k_hi {
                    let t = (k as f64 + 0.5) * PI;
                    for &sgn in &[1.0, -1.0] {
                        for r in sine_roots(sgn * t, p) {
                            consider(r, &mut best);
                        }
                    }
                }
                best.unwrap()
            }
        }
    }

    /// Points with finite backward orbit.
    pub fn exceptional_values(&self, _a: C64) -> Vec<C64> {
        match self.kind {
            FamilyKind::PowerExp { .. } => vec![C64::new(0.0, 0.0)],
            FamilyKind::SinePower { .. } => Vec::new(),
        }
    }

    /// Default boundary level `R`: twice the largest singular modulus, at least 2.
    pub fn boundary_level(&self, a: C64) -> f64 {
        let smax = self
            .singular_values(a)
            .iter()
            .map(|s| s.value.norm())
            .fold(1.0, f64::max);
        2.0 * smax
    }

    /// One tract per target: over infinity, and over the asymptotic value 0
    /// when there is one.
    pub fn tracts(&self, a: C64) -> Vec<TractDescriptor> {
        let r = self.boundary_level(a);
        match self.kind {
            FamilyKind::PowerExp { c, .. } => {
                let dir = wrap_arg(-c.arg());
                vec![
                    TractDescriptor {
                        over: TractTarget::Infinity,
                        direction: dir,
                        half_width: FRAC_PI_2,
                        boundary_level: r,
                    },
                    TractDescriptor {
                        over: TractTarget::Value(C64::new(0.0, 0.0)),
                        direction: wrap_arg(dir + PI),
                        half_width: FRAC_PI_2,
                        boundary_level: r,
                    },
                ]
            }
            FamilyKind::SinePower { p } => {
                let hw = FRAC_PI_2 / p as f64;
                vec![TractDescriptor {
                    over: TractTarget::Infinity,
                    direction: hw,
                    half_width: hw,
                    boundary_level: r,
                }]
            }
        }
    }

    pub fn tract_over_infinity(&self, a: C64) -> TractDescriptor {
        self.tracts(a)
            .into_iter()
            .find(|t| t.over == TractTarget::Infinity)
            .expect("every family has a tract over infinity")
    }

    pub fn tract_over_value(&self, a: C64) -> Option<TractDescriptor> {
        self.tracts(a)
            .into_iter()
            .find(|t| matches!(t.over, TractTarget::Value(_)))
    }

    /// Sector test plus the modulus condition defining the tract.
    pub fn in_tract(&self, a: C64, tract: &TractDescriptor, z: C64) -> bool {
        if wrap_arg(z.arg() - tract.direction).abs() >= tract.half_width {
            return false;
        }
        let log_r = tract.boundary_level.ln();
        match tract.over {
            TractTarget::Infinity => self.log_modulus(a, z) > log_r,
            TractTarget::Value(s) => {
                if s.norm() == 0.0 {
                    self.log_modulus(a, z) < -log_r
                } else {
                    let lv = self.log_modulus(a, z);
                    lv < 10.0 && (self.value(a, z) - s).norm() < 1.0 / tract.boundary_level
                }
            }
        }
    }
}

fn sine_roots(t: f64, p: u32) -> Vec<C64> {
    let base = C64::new(t, 0.0);
    let r = t.abs().powf(1.0 / p as f64);
    let th = base.arg();
    (0..p)
        .map(|l| C64::from_polar(r, (th + 2.0 * PI * l as f64) / p as f64))
        .collect()
}

fn nearest_of(pts: &[C64], z: C64) -> Option<(C64, f64)> {
    pts.iter()
        .map(|&c| (c, (c - z).norm()))
        .min_by(|x, y| x.1.total_cmp(&y.1))
}

impl Family for FamilySpec {
    fn id(&self) -> &str {
        &self.id
    }

    fn value(&self, a: C64, z: C64) -> C64 {
        match self.kind {
            FamilyKind::PowerExp { m, c, d } => a * zpow(z, m) * (c * z + d).exp(),
            FamilyKind::SinePower { p } => a * zpow(z, p).sin(),
        }
    }

    fn deriv(&self, a: C64, z: C64) -> C64 {
        match self.kind {
            FamilyKind::PowerExp { m, c, d } => {
                let e = (c * z + d).exp();
                let lead = if m >= 1 {
                    zpow(z, m - 1) * m as f64
                } else {
                    C64::new(0.0, 0.0)
                };
                a * e * (lead + c * zpow(z, m))
            }
            FamilyKind::SinePower { p } => a * zpow(z, p - 1) * p as f64 * zpow(z, p).cos(),
        }
    }

    fn deriv2(&self, a: C64, z: C64) -> C64 {
        match self.kind {
            FamilyKind::PowerExp { m, c, d } => {
                let e = (c * z + d).exp();
                let mf = m as f64;
                let t2 = if m >= 2 {
                    zpow(z, m - 2) * (mf * (mf - 1.0))
                } else {
                    C64::new(0.0, 0.0)
                };
                let t1 = if m >= 1 {
                    zpow(z, m - 1) * c * (2.0 * mf)
                } else {
                    C64::new(0.0, 0.0)
                };
                a * e * (t2 + t1 + c * c * zpow(z, m))
            }
            FamilyKind::SinePower { p } => {
                let pf = p as f64;
                let w = zpow(z, p);
                let t1 = if p >= 2 {
                    zpow(z, p - 2) * (pf * (pf - 1.0)) * w.cos()
                } else {
                    C64::new(0.0, 0.0)
                };
                a * (t1 - zpow(z, 2 * p - 2) * (pf * pf) * w.sin())
            }
        }
    }

    fn param_deriv(&self, _a: C64, z: C64) -> C64 {
        match self.kind {
            FamilyKind::PowerExp { m, c, d } => zpow(z, m) * (c * z + d).exp(),
            FamilyKind::SinePower { p } => zpow(z, p).sin(),
        }
    }

    fn singular_values(&self, a: C64) -> Vec<SingularValue> {
        let zero = C64::new(0.0, 0.0);
        match self.kind {
            FamilyKind::PowerExp { m, c, .. } => {
                if m == 0 {
                    return vec![SingularValue {
                        value: zero,
                        kind: SingularKind::Asymptotic,
                        critical_points: vec![],
                    }];
                }
                let cp = -(m as f64) / c;
                let cv = self.value(a, cp);
                let first = if m >= 2 {
                    SingularValue {
                        value: zero,
                        kind: SingularKind::Both,
                        critical_points: vec![zero],
                    }
                } else {
                    SingularValue {
                        value: zero,
                        kind: SingularKind::Asymptotic,
                        critical_points: vec![],
                    }
                };
                vec![
                    first,
                    SingularValue {
                        value: cv,
                        kind: SingularKind::Critical,
                        critical_points: vec![cp],
                    },
                ]
            }
            FamilyKind::SinePower { p } => {
                let plus = SingularValue {
                    value: a,
                    kind: SingularKind::Critical,
                    critical_points: sine_roots(FRAC_PI_2, p),
                };
                let minus = SingularValue {
                    value: -a,
                    kind: SingularKind::Critical,
                    critical_points: sine_roots(-FRAC_PI_2, p),
                };
                if p == 1 {
                    vec![plus, minus]
                } else {
                    vec![
                        SingularValue {
                            value: zero,
                            kind: SingularKind::Critical,
                            critical_points: vec![zero],
                        },
                        plus,
                        minus,
                    ]
                }
            }
        }
    }

    fn log_modulus(&self, a: C64, z: C64) -> f64 {
        self.log_value(a, z).re
    }
}

/// Built-in registry.
pub fn builtin_families() -> Vec<FamilySpec> {
    vec![
        FamilySpec::exp_lambda(),
        FamilySpec::sine_lambda(),
        FamilySpec::zsq_exp(),
        FamilySpec::zm_exp(3),
        FamilySpec::ze_shift(),
        FamilySpec::sine_sq(),
    ]
}

/// Look up a built-in by id; `zm_exp:<m>` selects the exponent.
pub fn lookup(id: &str) -> Result<FamilySpec, FamilyError> {
    if let Some(rest) = id.strip_prefix("zm_exp:") {
        let m: u32 = rest
            .parse()
            .map_err(|_| FamilyError::UnknownFamily(id.to_string()))?;
        return Ok(FamilySpec::zm_exp(m));
    }
    builtin_families()
        .into_iter()
        .find(|f| f.id == id)
        .ok_or_else(|| FamilyError::UnknownFamily(id.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub id: String,
    pub probes: usize,
    pub max_rel_error: f64,
    pub worst_check: String,
}

const PROBE_H: f64 = 1e-5;
const CONSISTENCY_LIMIT: f64 = 1e-6;

/// Compare the closed-form derivatives against finite differences and the
/// singular-value identities at random probes.
pub fn check_consistency<F: Family + ?Sized>(
    fam: &F,
    probes: usize,
    seed: u64,
) -> Result<ConsistencyReport, FamilyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = (0.0f64, String::from("none"));
    let note = |err: f64, what: &str, worst: &mut (f64, String)| {
        let err = if err.is_nan() { f64::INFINITY } else { err };
        if err > worst.0 {
            *worst = (err, what.to_string());
        }
    };
    let rel = |x: C64, y: C64| (x - y).norm() / y.norm().max(1.0);
    let q = fam.singular_values(C64::new(1.0, 0.0)).len();
    for _ in 0..probes.max(1) {
        let a = C64::from_polar(rng.gen_range(0.5..2.0), rng.gen_range(-PI..PI));
        let z = C64::from_polar(rng.gen_range(0.0..2.0), rng.gen_range(-PI..PI));
        let fd = central_diff(|w| fam.value(a, w), z, PROBE_H).unwrap_or(C64::new(f64::NAN, 0.0));
        note(rel(fd, fam.deriv(a, z)), "deriv", &mut worst);
        let fd2 = central_diff(|w| fam.deriv(a, w), z, PROBE_H).unwrap_or(C64::new(f64::NAN, 0.0));
        note(rel(fd2, fam.deriv2(a, z)), "deriv2", &mut worst);
        let fdp = central_diff(|b| fam.value(b, z), a, PROBE_H).unwrap_or(C64::new(f64::NAN, 0.0));
        note(rel(fdp, fam.param_deriv(a, z)), "param_deriv", &mut worst);
        let v = fam.value(a, z);
        if v.norm() > 1e-300 {
            note(
                (fam.log_modulus(a, z) - v.norm().ln()).abs(),
                "log_modulus",
                &mut worst,
            );
        }
        let svs = fam.singular_values(a);
        if svs.len() != q {
            note(
                f64::INFINITY,
                "singular value count varies with the parameter",
                &mut worst,
            );
        }
        for s in &svs {
            if s.kind == SingularKind::Asymptotic {
                continue;
            }
            for &c in &s.critical_points {
                note(
                    fam.deriv(a, c).norm() / fam.param_deriv(a, c).norm().max(1.0),
                    "critical point derivative",
                    &mut worst,
                );
                note(rel(fam.value(a, c), s.value), "critical value", &mut worst);
            }
        }
    }
    if worst.0 > CONSISTENCY_LIMIT {
        return Err(FamilyError::InconsistentFamily {
            id: fam.id().to_string(),
            what: worst.1,
            max_rel_error: worst.0,
        });
    }
    Ok(ConsistencyReport {
        id: fam.id().to_string(),
        probes,
        max_rel_error: worst.0,
        worst_check: worst.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn zsq_exp_singular_values() {
        let f = lookup("zsq_exp").unwrap();
        let s = f.singular_values(c(1.0, 0.0));
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].kind, SingularKind::Both);
        assert_eq!(s[0].critical_points, vec![c(0.0, 0.0)]);
        assert_eq!(s[1].kind, SingularKind::Critical);
        assert!((s[1].value - c(4.0 * (-2f64).exp(), 0.0)).norm() < 1e-15);
        assert!((s[1].critical_points[0] - c(-2.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn ze_shift_singular_values_and_fixed_points() {
        let f = lookup("ze_shift").unwrap();
        let s = f.singular_values(c(1.0, 0.0));
        assert_eq!(s[0].kind, SingularKind::Asymptotic);
        assert_eq!(s[0].value, c(0.0, 0.0));
        assert!((s[1].value + 1.0).norm() < 1e-15);
        assert!((f.value(c(1.0, 0.0), c(-1.0, 0.0)) + 1.0).norm() < 1e-15);
        assert!(f.deriv(c(1.0, 0.0), c(-1.0, 0.0)).norm() < 1e-15);
        assert_abs_diff_eq!(
            f.deriv(c(1.0, 0.0), c(0.0, 0.0)).re,
            std::f64::consts::E,
            epsilon = 1e-12
        );
    }

    #[test]
    fn sine_sq_singular_values() {
        let f = lookup("sine_sq").unwrap();
        let lam = c(0.3, 1.7);
        let s = f.singular_values(lam);
        assert_eq!(
            s.iter().map(|x| x.value).collect::<Vec<_>>(),
            vec![c(0.0, 0.0), lam, -lam]
        );
        assert!(s.iter().all(|x| x.kind == SingularKind::Critical));
        for sv in &s {
            for &cp in &sv.critical_points {
                assert!((f.value(lam, cp) - sv.value).norm() < 1e-12);
                assert!(f.deriv(lam, cp).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn evaluate_examples() {
        let f = lookup("zsq_exp").unwrap();
        assert_abs_diff_eq!(
            f.evaluate(c(1.0, 0.0), c(-2.0, 0.0)).unwrap().re,
            0.541341132946451,
            epsilon = 1e-12
        );
        assert_eq!(
            lookup("sine_sq")
                .unwrap()
                .evaluate(c(0.0, 1.0), c(0.0, 0.0))
                .unwrap(),
            c(0.0, 0.0)
        );
        let e = lookup("exp_lambda")
            .unwrap()
            .evaluate(c(1.0, 0.0), c(800.0, 0.0))
            .unwrap_err();
        match e {
            FamilyError::Overflow(lm) => assert_abs_diff_eq!(lm.log_abs, 800.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn builtins_consistent() {
        for f in builtin_families() {
            let r = check_consistency(&f, 100, 7).unwrap();
            assert!(r.max_rel_error < 1e-8, "{}: {:?}", f.id, r);
        }
    }

    struct WrongDeriv(FamilySpec);
    impl Family for WrongDeriv {
        fn id(&self) -> &str {
            "wrong"
        }
        fn value(&self, a: C64, z: C64) -> C64 {
            self.0.value(a, z)
        }
        fn deriv(&self, a: C64, z: C64) -> C64 {
            self.0.deriv(a, z) * 1.01
        }
        fn deriv2(&self, a: C64, z: C64) -> C64 {
            self.0.deriv2(a, z)
        }
        fn param_deriv(&self, a: C64, z: C64) -> C64 {
            self.0.param_deriv(a, z)
        }
        fn singular_values(&self, a: C64) -> Vec<SingularValue> {
            self.0.singular_values(a)
        }
        fn log_modulus(&self, a: C64, z: C64) -> f64 {
            self.0.log_modulus(a, z)
        }
    }

    #[test]
    fn wrong_derivative_is_caught() {
        let e = check_consistency(&WrongDeriv(FamilySpec::exp_lambda()), 20, 1).unwrap_err();
        assert!(matches!(e, FamilyError::InconsistentFamily { .. }));
    }

    #[test]
    fn zsq_exp_critical_set_matches_derivative_zeros() {
        let f = FamilySpec::zsq_exp();
        let crit = f.critical_points_in_disk(c(1.0, 0.0), 100.0);
        assert_eq!(crit, vec![c(0.0, 0.0), c(-2.0, 0.0)]);
    }

    #[test]
    fn log_modulus_agrees_with_value() {
        for f in builtin_families() {
            for &z in &[c(0.3, -1.2), c(-2.5, 0.7), c(1.9, 1.9)] {
                let lam = c(0.8, 0.4);
                let v = f.value(lam, z).norm().ln();
                assert_abs_diff_eq!(f.log_modulus(lam, z), v, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn sine_log_modulus_far_from_real_axis() {
        let f = FamilySpec::sine_sq();
        let z = C64::from_polar(10.0, PI / 4.0);
        assert_abs_diff_eq!(
            f.log_modulus(c(1.0, 0.0), z),
            100.0 - 2f64.ln(),
            epsilon = 1e-9
        );
        let lr = f.log_deriv_ratio(c(1.0, 0.0), z);
        let direct = f.deriv(c(1.0, 0.0), z) / f.value(c(1.0, 0.0), z);
        assert!((lr - direct).norm() < 1e-9 * direct.norm());
    }

    #[test]
    fn nearest_critical_sine() {
        let f = FamilySpec::sine_sq();
        let target = C64::new((4.5 * PI).sqrt(), 0.0);
        let (cp, d) = f.nearest_critical(c(1.0, 0.0), target + c(0.01, 0.0));
        assert!((cp - target).norm() < 1e-12);
        assert_abs_diff_eq!(d, 0.01, epsilon = 1e-12);
        let (cp, _) = f.nearest_critical(c(1.0, 0.0), c(0.0, 0.1));
        assert_eq!(cp, c(0.0, 0.0));
    }

    #[test]
    fn nearest_critical_sine_far_out() {
        let f = FamilySpec::sine_sq();
        // on the ray arg z = pi / 2, and one unit off it
        let z = c(-1.0, 1e8);
        let (cp, d) = f.nearest_critical(c(1.0, 0.0), z);
        assert!(cp.re.abs() < 1e-6 && (cp.im - 1e8).abs() < 1e-6);
        assert!((d - 1.0).abs() < 1e-6);
        let (_, d) = f.nearest_critical(c(1.0, 0.0), c(1e200, 1e200));
        assert!(d.is_finite() && d >= 0.0);
    }

    #[test]
    fn json_template_round_trip() {
        let f = FamilySpec::zm_exp(4);
        let text = serde_json::to_string(&f).unwrap();
        assert_eq!(FamilySpec::from_json(&text).unwrap(), f);
        assert!(
            FamilySpec::from_json(r#"{"id":"bad","kind":{"type":"sine_power","p":0}}"#).is_err()
        );
        assert_eq!(lookup("zm_exp:4").unwrap().id, "zm_exp:4");
        assert!(lookup("nope").is_err());
    }

    #[test]
    fn tracts_are_where_declared() {
        let f = FamilySpec::exp_lambda();
        let lam = c(1.0, 0.0);
        let t = f.tract_over_infinity(lam);
        assert!(f.in_tract(lam, &t, c(30.0, 1.0)));
        assert!(!f.in_tract(lam, &t, c(-30.0, 1.0)));
        let t0 = f.tract_over_value(lam).unwrap();
        assert!(f.in_tract(lam, &t0, c(-30.0, 1.0)));
        let s = FamilySpec::sine_sq();
        let ts = s.tract_over_infinity(lam);
        assert!(s.in_tract(lam, &ts, C64::from_polar(5.0, PI / 4.0)));
    }
}

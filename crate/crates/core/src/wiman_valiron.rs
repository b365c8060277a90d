//! Growth in logarithmic tracts: tract maximum modulus, `B(r, v)` and
//! `a(r, v)`, Wiman-Valiron disks, covering annuli, the lower growth bound,
//! `E(x) = exp(sqrt x)` and the escape-return skeleton.
//!
//! Magnitudes that leave native range are carried as [`LogMagnitude`] and
//! [`Tower`]; serialized log-scale fields are prefixed `log_`.

use crate::family::{Family, FamilySpec, TractDescriptor, TractTarget};
use crate::numerics::{wrap_arg, LogMagnitude, Tower, C64, OVERFLOW_LOG};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

pub const DEFAULT_TAU: f64 = 0.75;
pub const DEFAULT_BETA: f64 = 2.0;
pub const MIN_ARC_SAMPLES: usize = 256;
pub const RETRY_FACTOR: f64 = 1.07;
pub const MAX_RETRIES: usize = 5;
pub const DEFAULT_DR_REL: f64 = 1e-3;
/// Escape-return starting radius.
pub const DEFAULT_START_RADIUS: f64 = 25.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WvError {
    #[error("circle |z| = {r} misses the tract")]
    TractNotIntersected { r: f64 },
    #[error("probe {probe} of the disk at r = {r} lies outside the tract")]
    DiskLeavesTract { r: f64, probe: C64 },
    #[error("boundary image passes too close to annulus point {point_log:?}")]
    InconclusiveWinding { point_log: C64 },
    #[error("magnitude leaves log-scale range at step {step}")]
    MagnitudeOverflow { step: usize },
    #[error("family has no finite asymptotic value to return to")]
    NoReturnTract,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Location and size of the tract maximum on `|z| = r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TractMax {
    pub z_r: C64,
    pub log_m_t: f64,
}

fn golden_max<F: Fn(f64) -> f64>(g: F, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut g1, mut g2) = (g(x1), g(x2));
    for _ in 0..iters {
        if g1 < g2 {
            lo = x1;
            x1 = x2;
            g1 = g2;
            x2 = lo + inv_phi * (hi - lo);
            g2 = g(x2);
        } else {
            hi = x2;
            x2 = x1;
            g2 = g1;
            x1 = hi - inv_phi * (hi - lo);
            g1 = g(x1);
        }
    }
    0.5 * (lo + hi)
}

/// Maximum of `log |f|` over the part of `|z| = r` inside the tract.
pub fn tract_max(
    fam: &FamilySpec,
    a: C64,
    tract: &TractDescriptor,
    r: f64,
    samples: usize,
) -> Result<TractMax, WvError> {
    let n = samples.max(MIN_ARC_SAMPLES);
    let step = 2.0 * tract.half_width / n as f64;
    let theta = |i: usize| tract.direction - tract.half_width + (i as f64 + 0.5) * step;
    let lm = |t: f64| fam.log_modulus(a, C64::from_polar(r, t));
    let mut best: Option<(usize, f64)> = None;
    for i in 0..n {
        let z = C64::from_polar(r, theta(i));
        if !fam.in_tract(a, tract, z) {
            continue;
        }
        let v = fam.log_modulus(a, z);
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    let (i, v) = best.ok_or(WvError::TractNotIntersected { r })?;
    let t = golden_max(lm, theta(i) - step, theta(i) + step, 80);
    let (t, v) = if lm(t) >= v {
        (t, lm(t))
    } else {
        (theta(i), v)
    };
    Ok(TractMax {
        z_r: C64::from_polar(r, wrap_arg(t)),
        log_m_t: v,
    })
}

/// `B(r, v) = log M_T(r) - log R`.
pub fn b_rv(fam: &FamilySpec, a: C64, tract: &TractDescriptor, r: f64) -> Result<f64, WvError> {
    Ok(tract_max(fam, a, tract, r, MIN_ARC_SAMPLES)?.log_m_t - tract.boundary_level.ln())
}

/// `a(r, v) = dB / d log r` by a central difference in `log r`.
pub fn a_rv(
    fam: &FamilySpec,
    a: C64,
    tract: &TractDescriptor,
    r: f64,
    dr_rel: f64,
) -> Result<f64, WvError> {
    let hi = b_rv(fam, a, tract, r * (1.0 + dr_rel))?;
    let lo = b_rv(fam, a, tract, r * (1.0 - dr_rel))?;
    Ok((hi - lo) / ((1.0 + dr_rel).ln() - (1.0 - dr_rel).ln()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticCheck {
    pub z_r: C64,
    pub log_m_t: f64,
    pub a_rv: f64,
    pub disk_radius: f64,
    pub value_error: f64,
    pub derivative_error: f64,
    pub probes: usize,
}

fn reduce_2pi(w: C64) -> C64 {
    C64::new(w.re, wrap_arg(w.im))
}

/// `|exp(d) - 1|` for a log-scale discrepancy `d`.
fn rel_err(d: C64) -> f64 {
    let d = reduce_2pi(d);
    if d.re > OVERFLOW_LOG {
        return f64::INFINITY;
    }
    (d.exp() - 1.0).norm()
}

/// Deterministic probes of `D(center, radius)`: the center, then rings out to
/// the boundary.
pub fn disk_probes(center: C64, radius: f64, count: usize) -> Vec<C64> {
    let count = count.max(2);
    let per_ring = 16usize;
    let rings = ((count - 1) / per_ring).max(1);
    let mut out = vec![center];
    for k in 1..=rings {
        let rho = radius * k as f64 / rings as f64;
        for i in 0..per_ring {
            let t = 2.0 * PI * (i as f64 + 0.5 * (k % 2) as f64) / per_ring as f64;
            out.push(center + C64::from_polar(rho, t));
        }
    }
    out
}

/// Compare `f` and `f'` on the disk `D(z_r, r / a^tau)` with the model
/// `(z/z_r)^a f(z_r)` and `(a/z) (z/z_r)^a f(z_r)`.
pub fn wv_asymptotic_check(
    fam: &FamilySpec,
    a: C64,
    tract: &TractDescriptor,
    r: f64,
    tau: f64,
    probes: usize,
) -> Result<AsymptoticCheck, WvError> {
    if !(tau > 0.5) {
        return Err(WvError::InvalidArgument(format!(
            "tau must exceed 1/2, got {tau}"
        )));
    }
    let tm = tract_max(fam, a, tract, r, MIN_ARC_SAMPLES)?;
    let av = a_rv(fam, a, tract, r, DEFAULT_DR_REL)?;
    let radius = r / av.powf(tau);
    let lf_r = fam.log_value(a, tm.z_r);
    let mut value_error = 0.0f64;
    let mut derivative_error = 0.0f64;
    let pts = disk_probes(tm.z_r, radius, probes);
    for &z in &pts {
        if !fam.in_tract(a, tract, z) {
            return Err(WvError::DiskLeavesTract { r, probe: z });
        }
        if z == tm.z_r {
            continue;
        }
        let d = fam.log_value(a, z) - (av * (z / tm.z_r).ln() + lf_r);
        value_error = value_error.max(rel_err(d));
        let dd = d + (fam.log_deriv_ratio(a, z) * z / av).ln();
        derivative_error = derivative_error.max(rel_err(dd));
    }
    Ok(AsymptoticCheck {
        z_r: tm.z_r,
        log_m_t: tm.log_m_t,
        a_rv: av,
        disk_radius: radius,
        value_error,
        derivative_error,
        probes: pts.len(),
    })
}

/// Argument of `f(z) - w` with both given by their logarithms.
fn arg_of_difference(lf: C64, lw: C64) -> f64 {
    let gap = lf.re - lw.re;
    if gap > 40.0 {
        return lf.im;
    }
    if gap < -40.0 {
        return lw.im + PI;
    }
    let q = (lw - lf).exp();
    lf.im + (C64::new(1.0, 0.0) - q).arg()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoveringCheck {
    pub z_r: C64,
    pub a_rv: f64,
    pub alpha: f64,
    pub disk_radius: f64,
    pub log_f_center: f64,
    /// Minimum over the annulus grid.
    pub winding: i64,
}

/// Winding of `f` over the boundary of `D(z_r, alpha r / a(r, v))` around a
/// polar grid on `A(|f(z_r)|/beta, beta |f(z_r)|)`. A winding of at least one
/// around every grid point certifies that the grid is covered.
pub fn covering_annulus_check(
    fam: &FamilySpec,
    a: C64,
    tract: &TractDescriptor,
    r: f64,
    alpha: f64,
    beta: f64,
    boundary_samples: usize,
) -> Result<CoveringCheck, WvError> {
    if !(beta > 1.0) || !(alpha > 0.0) {
        return Err(WvError::InvalidArgument(format!(
            "need beta > 1 and alpha > 0, got {beta}, {alpha}"
        )));
    }
    let tm = tract_max(fam, a, tract, r, MIN_ARC_SAMPLES)?;
    let av = a_rv(fam, a, tract, r, DEFAULT_DR_REL)?;
    let radius = alpha * r / av;
    let center_log = fam.log_value(a, tm.z_r).re;
    let m = boundary_samples.max(64);
    let boundary: Vec<C64> = (0..=m)
        .map(|i| {
            fam.log_value(
                a,
                tm.z_r + C64::from_polar(radius, 2.0 * PI * i as f64 / m as f64),
            )
        })
        .collect();
    let lb = beta.ln();
    let mut min_wind = i64::MAX;
    for ri in 1..8 {
        let lr = center_log - lb + 2.0 * lb * ri as f64 / 8.0;
        for ti in 0..16 {
            let lw = C64::new(lr, -PI + 2.0 * PI * ti as f64 / 16.0);
            let mut total = 0.0;
            let mut prev = arg_of_difference(boundary[0], lw);
            for lf in &boundary[1..] {
                let cur = arg_of_difference(*lf, lw);
                let d = wrap_arg(cur - prev);
                if d.abs() > PI / 2.0 {
                    return Err(WvError::InconclusiveWinding { point_log: lw });
                }
                total += d;
                prev = cur;
            }
            min_wind = min_wind.min((total / (2.0 * PI)).round() as i64);
        }
    }
    Ok(CoveringCheck {
        z_r: tm.z_r,
        a_rv: av,
        alpha,
        disk_radius: radius,
        log_f_center: center_log,
        winding: min_wind,
    })
}

/// Smallest `alpha` on `grid` for which the covering check certifies, and the
/// largest one whose disk still lies in the tract.
pub fn covering_alpha_range(
    fam: &FamilySpec,
    a: C64,
    tract: &TractDescriptor,
    r: f64,
    beta: f64,
    grid: &[f64],
) -> Option<(f64, f64)> {
    let av = a_rv(fam, a, tract, r, DEFAULT_DR_REL).ok()?;
    let z_r = tract_max(fam, a, tract, r, MIN_ARC_SAMPLES).ok()?.z_r;
    let mut passing = grid.iter().copied().filter(|&al| {
        let inside = disk_probes(z_r, al * r / av, 33).iter().all(|&z| fam.in_tract(a, tract, z));
        inside && matches!(covering_annulus_check(fam, a, tract, r, al, beta, 512), Ok(c) if c.winding >= 1)
    });
    let first = passing.next()?;
    let last = passing.next_back().unwrap_or(first);
    Some((first, last))
}

/// Smallest `C` with `log log M_T(r) >= log(r)/2 - C` over `r_grid`.
pub fn dca_check(
    fam: &FamilySpec,
    a: C64,
    tract: &TractDescriptor,
    r_grid: &[f64],
) -> Result<f64, WvError> {
    let mut c = f64::NEG_INFINITY;
    for &r in r_grid {
        let lm = tract_max(fam, a, tract, r, MIN_ARC_SAMPLES)?.log_m_t;
        let ll = if lm > 0.0 { lm.ln() } else { f64::NEG_INFINITY };
        c = c.max(0.5 * r.ln() - ll);
    }
    Ok(c)
}

/// `E(x) = exp(sqrt x)`.
pub fn e_fn(x: f64) -> f64 {
    x.sqrt().exp()
}

/// `log E(x) = sqrt x`.
pub fn log_e(x: f64) -> f64 {
    x.sqrt()
}

/// `log E(x)` for `x = exp(log_x)`, as an extended real.
pub fn log_e_of_log(log_x: f64) -> Tower {
    Tower::from_signed_exp(false, 0.5 * log_x)
}

/// `log E(E(x)) = exp(sqrt(x) / 2)`; its logarithm `sqrt(x)/2` always fits.
pub fn log_e_e(x: f64) -> Tower {
    log_e_of_log(log_e(x))
}

/// Inequalities attached to one point of an escape-return sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepCertificate {
    pub index: usize,
    pub log_abs_z: f64,
    pub log_f: Tower,
    /// `log E(|z|)`.
    pub log_e: Tower,
    /// Growth step: `log|f(z)| > log E(|z|)`. Return step: `log|f(z) - s| < -log E(|z|)`.
    pub holds: bool,
    /// `log|z_{j+1}| - log|f(z_j)|`, which must lie in `[0, ln 2]`.
    pub log_next_ratio: Option<f64>,
    /// `2 log|f(z)| - log|f'(z)|`, nonnegative when the derivative budget holds.
    pub log_derivative_slack: Option<Tower>,
    /// Covering winding of the WV disk at `z`, when `z` is native.
    pub covering_winding: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeReturnSequence {
    pub family: String,
    pub param: C64,
    pub points: Vec<LogMagnitude>,
    pub target_s: C64,
    pub certificates: Vec<StepCertificate>,
}

impl EscapeReturnSequence {
    pub fn n(&self) -> usize {
        self.points.len() - 1
    }

    /// Recompute every inequality from the stored points alone.
    pub fn verify(&self, fam: &FamilySpec) -> Result<(), String> {
        let a = self.param;
        let n = self.n();
        for (j, z) in self.points.iter().enumerate() {
            let log_e = log_e_of_log(z.log_abs);
            if j < n {
                let lf = fam
                    .log_modulus_far(a, z)
                    .ok_or(format!("log|f| unresolved at step {}", j + 1))?;
                if !(lf > log_e) {
                    return Err(format!("growth inequality fails at step {}", j + 1));
                }
                let lf_native = lf
                    .as_f64()
                    .ok_or(format!("log|f| overflows at step {}", j + 1))?;
                let ratio = self.points[j + 1].log_abs - lf_native;
                if !(ratio >= 0.0 && ratio <= 2f64.ln()) {
                    return Err(format!("modulus bracket fails at step {}", j + 2));
                }
            } else {
                let ld = return_log_distance(fam, a, z, self.target_s)
                    .ok_or("return distance unresolved")?;
                if !(ld < log_e.neg()) {
                    return Err(format!("return inequality fails at step {}", j + 1));
                }
            }
        }
        Ok(())
    }
}

fn return_log_distance(fam: &FamilySpec, a: C64, z: &LogMagnitude, s: C64) -> Option<Tower> {
    if s.norm() == 0.0 {
        return fam.log_modulus_far(a, z);
    }
    let zc = z.to_complex().ok()?;
    Some(Tower::Finite((fam.value(a, zc) - s).norm().ln()))
}

/// Build `z_1, ..., z_n` in the tract over infinity with
/// `|z_{j+1}| = 1.5 |f(z_j)|`, then `z_{n+1}` in the tract over `s`.
pub fn escape_return(
    fam: &FamilySpec,
    a: C64,
    tract_inf: &TractDescriptor,
    tract_s: &TractDescriptor,
    n: usize,
    start_radius: f64,
) -> Result<EscapeReturnSequence, WvError> {
    let s = match tract_s.over {
        TractTarget::Value(s) => s,
        TractTarget::Infinity => return Err(WvError::NoReturnTract),
    };
    let step_ratio = 1.5f64.ln();
    let mut points = Vec::with_capacity(n + 1);
    let mut certificates = Vec::with_capacity(n + 1);
    let mut log_r = start_radius.ln();
    for j in 0..=n {
        let growth = j < n;
        let dir = if growth {
            tract_inf.direction
        } else {
            tract_s.direction
        };
        let z = LogMagnitude::new(log_r, dir);
        let log_e = log_e_of_log(log_r);
        let (log_f, holds, slack, next) = if growth {
            let lf = fam
                .log_modulus_far(a, &z)
                .ok_or(WvError::MagnitudeOverflow { step: j + 1 })?;
            let slack = fam
                .log_deriv_modulus_far(a, &z)
                .and_then(|ld| tower_sub(&tower_double(&lf), &ld));
            let native = lf
                .as_f64()
                .ok_or(WvError::MagnitudeOverflow { step: j + 1 })?;
            (lf, lf > log_e, slack, Some(native + step_ratio))
        } else {
            let ld = return_log_distance(fam, a, &z, s)
                .ok_or(WvError::MagnitudeOverflow { step: j + 1 })?;
            (ld, ld < log_e.neg(), None, None)
        };
        let covering_winding = if growth && log_r < OVERFLOW_LOG {
            let r = log_r.exp();
            covering_annulus_check(fam, a, tract_inf, r, 4.0, DEFAULT_BETA, 1024)
                .ok()
                .map(|c| c.winding)
        } else {
            None
        };
        certificates.push(StepCertificate {
            index: j + 1,
            log_abs_z: log_r,
            log_f,
            log_e,
            holds,
            log_next_ratio: next.map(|_| step_ratio),
            log_derivative_slack: slack,
            covering_winding,
        });
        points.push(z);
        if let Some(nl) = next {
            log_r = nl;
        }
    }
    Ok(EscapeReturnSequence {
        family: fam.id.clone(),
        param: a,
        points,
        target_s: s,
        certificates,
    })
}

fn tower_double(t: &Tower) -> Tower {
    match *t {
        Tower::Finite(x) => Tower::from_signed_exp(x < 0.0, (2.0 * x.abs()).ln()),
        Tower::Exp { negative, log_abs } => Tower::Exp {
            negative,
            log_abs: log_abs + 2f64.ln(),
        },
    }
}

/// `x - y` when the result is resolvable.
fn tower_sub(x: &Tower, y: &Tower) -> Option<Tower> {
    match (*x, *y) {
        (Tower::Finite(p), Tower::Finite(q)) => Some(Tower::Finite(p - q)),
        (_, Tower::Finite(q)) => Some(x.add_finite(-q)),
        (
            Tower::Exp {
                negative: n1,
                log_abs: l1,
            },
            Tower::Exp {
                negative: n2,
                log_abs: l2,
            },
        ) => {
            if n1 != n2 {
                return Some(Tower::Exp {
                    negative: n1,
                    log_abs: l1.max(l2) + (1.0 + (-(l1 - l2).abs()).exp()).ln(),
                });
            }
            // same sign: x - y = sign * (e^l1 - e^l2)
            let (big, small, flip) = if l1 >= l2 {
                (l1, l2, false)
            } else {
                (l2, l1, true)
            };
            let diff = (-(big - small)).exp();
            if diff >= 1.0 {
                return Some(Tower::Finite(0.0));
            }
            let neg = n1 ^ flip;
            Some(Tower::from_signed_exp(neg, big + (-diff).ln_1p()))
        }
        (Tower::Finite(p), Tower::Exp { .. }) => Some(y.add_finite(-p).neg()),
    }
}

/// Everything computed at one radius of a tract.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WVReport {
    pub r_requested: f64,
    pub r: f64,
    pub retries: usize,
    pub z_r: C64,
    pub log_m_t: f64,
    pub b_rv: f64,
    pub a_rv: f64,
    pub tau: f64,
    pub wv_disk_radius: f64,
    pub asym_max_rel_error: f64,
    pub deriv_max_rel_error: f64,
    pub covering_alpha: f64,
    pub covering_winding: i64,
}

/// Run the asymptotic and covering checks at `r`, moving to `1.07 r` (up to
/// five times) when the disk leaves the tract or the covering fails.
pub fn wv_report(
    fam: &FamilySpec,
    a: C64,
    tract: &TractDescriptor,
    r: f64,
    tau: f64,
    alpha: f64,
    beta: f64,
    probes: usize,
) -> Result<WVReport, WvError> {
    let mut radius = r;
    let mut last_err = None;
    for retries in 0..=MAX_RETRIES {
        let attempt = wv_asymptotic_check(fam, a, tract, radius, tau, probes).and_then(|chk| {
            covering_annulus_check(fam, a, tract, radius, alpha, beta, 512).map(|cov| (chk, cov))
        });
        match attempt {
            Ok((chk, cov)) if cov.winding >= 1 => {
                return Ok(WVReport {
                    r_requested: r,
                    r: radius,
                    retries,
                    z_r: chk.z_r,
                    log_m_t: chk.log_m_t,
                    b_rv: chk.log_m_t - tract.boundary_level.ln(),
                    a_rv: chk.a_rv,
                    tau,
                    wv_disk_radius: chk.disk_radius,
                    asym_max_rel_error: chk.value_error,
                    deriv_max_rel_error: chk.derivative_error,
                    covering_alpha: alpha,
                    covering_winding: cov.winding,
                })
            }
            Ok((_, cov)) => {
                last_err = Some(WvError::InvalidArgument(format!(
                    "covering winding {} at r = {radius}",
                    cov.winding
                )))
            }
            Err(e @ WvError::InvalidArgument(_)) => return Err(e),
            Err(e) => last_err = Some(e),
        }
        radius *= RETRY_FACTOR;
    }
    Err(last_err.unwrap_or(WvError::TractNotIntersected { r }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn one() -> C64 {
        C64::new(1.0, 0.0)
    }

    #[test]
    fn exp_tract_max_closed_form() {
        let f = FamilySpec::exp_lambda();
        let t = f.tract_over_infinity(one());
        let m = tract_max(&f, one(), &t, 50.0, 256).unwrap();
        assert_abs_diff_eq!(m.log_m_t, 50.0, epsilon = 1e-9);
        assert!(m.z_r.im.abs() < 1e-4);
        assert_abs_diff_eq!(
            a_rv(&f, one(), &t, 50.0, 1e-3).unwrap(),
            50.0,
            epsilon = 0.5
        );
    }

    #[test]
    fn zsq_tract_max_closed_form() {
        let f = FamilySpec::zsq_exp();
        let t = f.tract_over_infinity(one());
        let m = tract_max(&f, one(), &t, 30.0, 256).unwrap();
        assert_abs_diff_eq!(m.log_m_t, 30.0 + 2.0 * 30f64.ln(), epsilon = 1e-9);
        assert_abs_diff_eq!(
            a_rv(&f, one(), &t, 30.0, 1e-3).unwrap(),
            32.0,
            epsilon = 0.5
        );
    }

    #[test]
    fn sine_sq_tract_max_direction() {
        let f = FamilySpec::sine_sq();
        let t = f.tract_over_infinity(one());
        let m = tract_max(&f, one(), &t, 10.0, 256).unwrap();
        assert_abs_diff_eq!(m.z_r.arg(), PI / 4.0, epsilon = 1e-4);
        assert_abs_diff_eq!(m.log_m_t, 100.0 - 2f64.ln(), epsilon = 1e-6);
    }

    #[test]
    fn tract_missed_far_outside() {
        let f = FamilySpec::exp_lambda();
        let t = f.tract_over_infinity(one());
        // |e^z| > 2 needs Re z > ln 2
        assert!(matches!(
            tract_max(&f, one(), &t, 0.5, 256),
            Err(WvError::TractNotIntersected { .. })
        ));
    }

    #[test]
    fn e_identities() {
        assert_abs_diff_eq!(e_fn(1.0), 1f64.exp());
        assert_eq!(log_e_e(1.0), Tower::Finite(0.5f64.exp()));
        assert_abs_diff_eq!(
            log_e_e(1.0).as_f64().unwrap(),
            1f64.exp().sqrt(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(log_e_e(1e6).log_abs(), 500.0, epsilon = 1e-12);
        assert!(!log_e_e(4e6).is_finite());
        assert_abs_diff_eq!(log_e_e(4e6).log_abs(), 1000.0);
    }

    #[test]
    fn exp_covering_threshold() {
        let f = FamilySpec::exp_lambda();
        let t = f.tract_over_infinity(one());
        let ok = covering_annulus_check(&f, one(), &t, 50.0, 4.0, 2.0, 512).unwrap();
        assert!(ok.winding >= 1);
        let small = covering_annulus_check(&f, one(), &t, 50.0, 1.0, 2.0, 512);
        assert!(!matches!(small, Ok(c) if c.winding >= 1));
    }

    #[test]
    fn tower_sub_cases() {
        let x = Tower::from_signed_exp(false, 1000.0);
        let y = Tower::from_signed_exp(false, 999.0);
        let d = tower_sub(&x, &y).unwrap();
        assert_abs_diff_eq!(
            d.log_abs(),
            1000.0 + (-(-1f64).exp()).ln_1p(),
            epsilon = 1e-9
        );
        assert_eq!(
            tower_sub(&Tower::Finite(3.0), &Tower::Finite(1.0)),
            Some(Tower::Finite(2.0))
        );
    }
}

//! Complex scalars, extended-magnitude values, root finding and
//! finite-difference derivatives.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::f64::consts::PI;
use thiserror::Error;

/// Phase-space and parameter-space coordinate.
pub type C64 = Complex64;

/// Largest natural log of a modulus that may be turned back into a native
/// complex number.
pub const OVERFLOW_LOG: f64 = 700.0;

/// Step halvings allowed per Newton iteration.
pub const MAX_HALVINGS: u32 = 20;

/// Relative disagreement tolerated between the real- and imaginary-direction
/// difference quotients.
pub const DERIV_REL_TOL: f64 = 1e-3;

const DERIV_FLOOR: f64 = 1e-290;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        last: C64,
    },
    #[error("derivative vanished at iteration {iteration} (z = {z})")]
    DerivativeVanished { iteration: usize, z: C64 },
    #[error("secant bracket is degenerate: F(z0) = F(z1)")]
    DegenerateBracket,
    #[error(
        "directional derivatives disagree: real {real_dir}, imaginary {imag_dir} (rel {rel:e})"
    )]
    InconsistentDerivative {
        real_dir: C64,
        imag_dir: C64,
        rel: f64,
    },
    #[error("magnitude exp({log_abs}) does not fit a native float")]
    Overflow { log_abs: f64 },
}

/// Wrap an angle into (-pi, pi].
pub fn wrap_arg(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    if t <= -PI {
        t += 2.0 * PI;
    }
    t
}

/// A nonzero complex number held as `exp(log_abs) * exp(i arg)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogMagnitude {
    pub log_abs: f64,
    pub arg: f64,
}

impl LogMagnitude {
    pub fn new(log_abs: f64, arg: f64) -> Self {
        Self {
            log_abs,
            arg: wrap_arg(arg),
        }
    }

    /// Zero maps to `log_abs = -inf`.
    pub fn from_complex(z: C64) -> Self {
        let arg = if z.im == 0.0 && z.re < 0.0 {
            PI
        } else {
            z.arg()
        };
        Self {
            log_abs: z.norm().ln(),
            arg: wrap_arg(arg),
        }
    }

    /// `exp(w)` without forming it.
    pub fn exp_of(w: C64) -> Self {
        Self::new(w.re, w.im)
    }

    pub fn to_complex(&self) -> Result<C64, NumericsError> {
        if self.log_abs > OVERFLOW_LOG {
            return Err(NumericsError::Overflow {
                log_abs: self.log_abs,
            });
        }
        Ok(C64::from_polar(self.log_abs.exp(), self.arg))
    }

    /// Principal logarithm `log_abs + i arg`.
    pub fn ln(&self) -> C64 {
        C64::new(self.log_abs, self.arg)
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self::new(self.log_abs + other.log_abs, self.arg + other.arg)
    }

    pub fn div(&self, other: &Self) -> Self {
        Self::new(self.log_abs - other.log_abs, self.arg - other.arg)
    }

    pub fn powf(&self, p: f64) -> Self {
        Self::new(self.log_abs * p, self.arg * p)
    }

    /// `self * (1 + eps)`, for `|eps| < 1`.
    pub fn mul_one_plus(&self, eps: C64) -> Self {
        let l = ln_1p(eps);
        Self::new(self.log_abs + l.re, self.arg + l.im)
    }

    /// Real part as an extended real.
    pub fn re(&self) -> Tower {
        let c = self.arg.cos();
        if c == 0.0 {
            return Tower::Finite(0.0);
        }
        Tower::from_signed_exp(c < 0.0, self.log_abs + c.abs().ln())
    }

    /// Imaginary part as an extended real.
    pub fn im(&self) -> Tower {
        let s = self.arg.sin();
        if s == 0.0 {
            return Tower::Finite(0.0);
        }
        Tower::from_signed_exp(s < 0.0, self.log_abs + s.abs().ln())
    }
}

/// `ln(1 + w)` accurate for small `w`.
pub fn ln_1p(w: C64) -> C64 {
    if w.norm() < 1e-4 {
        // series to fourth order
        let w2 = w * w;
        w - w2 / 2.0 + w2 * w / 3.0 - w2 * w2 / 4.0
    } else {
        (C64::new(1.0, 0.0) + w).ln()
    }
}

/// An extended real: either a native float or `±exp(log_abs)` with
/// `log_abs` beyond the native range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tower {
    Finite(f64),
    Exp { negative: bool, log_abs: f64 },
}

impl Tower {
    pub fn from_signed_exp(negative: bool, log_abs: f64) -> Self {
        if log_abs < OVERFLOW_LOG {
            let v = log_abs.exp();
            Tower::Finite(if negative { -v } else { v })
        } else {
            Tower::Exp { negative, log_abs }
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Tower::Finite(_))
    }

    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Tower::Finite(x) => Some(x),
            Tower::Exp { .. } => None,
        }
    }

    pub fn neg(&self) -> Self {
        match *self {
            Tower::Finite(x) => Tower::Finite(-x),
            Tower::Exp { negative, log_abs } => Tower::Exp {
                negative: !negative,
                log_abs,
            },
        }
    }

    /// Natural log of the absolute value (may be `-inf` for zero).
    pub fn log_abs(&self) -> f64 {
        match *self {
            Tower::Finite(x) => x.abs().ln(),
            Tower::Exp { log_abs, .. } => log_abs,
        }
    }

    pub fn is_negative(&self) -> bool {
        match *self {
            Tower::Finite(x) => x < 0.0,
            Tower::Exp { negative, .. } => negative,
        }
    }

    /// `self + x` for a native `x`.
    pub fn add_finite(&self, x: f64) -> Self {
        match *self {
            Tower::Finite(y) => {
                let s = y + x;
                if s.is_finite() {
                    Tower::Finite(s)
                } else {
                    let neg = s < 0.0;
                    // both terms are near the float limit
                    let big = y.abs().max(x.abs());
                    Tower::Exp {
                        negative: neg,
                        log_abs: big.ln() + 2f64.ln(),
                    }
                }
            }
            Tower::Exp { negative, log_abs } => {
                let signed = if negative { -x } else { x };
                // relative correction x / exp(log_abs); below the float floor it is exact to drop
                let rel_log = signed.abs().ln() - log_abs;
                if rel_log < -700.0 {
                    return *self;
                }
                let rel = signed.signum() * rel_log.exp();
                if rel <= -1.0 {
                    // cannot happen for |x| < exp(700) <= exp(log_abs)
                    return Tower::Finite(0.0);
                }
                Tower::from_signed_exp(negative, log_abs + rel.ln_1p())
            }
        }
    }

    fn order_key(&self) -> (i8, f64) {
        // (sign class, magnitude key) with sign class -1 huge negative, 0 finite, 1 huge positive
        match *self {
            Tower::Finite(x) => (0, x),
            Tower::Exp {
                negative: true,
                log_abs,
            } => (-1, -log_abs),
            Tower::Exp {
                negative: false,
                log_abs,
            } => (1, log_abs),
        }
    }
}

impl PartialOrd for Tower {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        let (a, x) = self.order_key();
        let (b, y) = other.order_key();
        match a.cmp(&b) {
            Ordering::Equal => x.partial_cmp(&y),
            o => Some(o),
        }
    }
}

/// Outcome of a successful root search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootResult {
    pub root: C64,
    pub residual: f64,
    pub iterations: usize,
}

/// Damped Newton iteration. The step is halved while `|F|` increases, up to
/// [`MAX_HALVINGS`] times.
pub fn newton_solve<F, D>(
    f: F,
    df: D,
    z0: C64,
    tol: f64,
    max_iter: usize,
) -> Result<RootResult, NumericsError>
where
    F: Fn(C64) -> C64,
    D: Fn(C64) -> C64,
{
    let mut z = z0;
    let mut fz = f(z);
    for it in 0..max_iter {
        let r = fz.norm();
        if r <= tol {
            return Ok(RootResult {
                root: z,
                residual: r,
                iterations: it,
            });
        }
        let d = df(z);
        if !(d.norm() > DERIV_FLOOR) || !d.re.is_finite() || !d.im.is_finite() {
            return Err(NumericsError::DerivativeVanished { iteration: it, z });
        }
        let step = -fz / d;
        let mut t = 1.0;
        let mut cand = z + step;
        let mut fc = f(cand);
        let mut halvings = 0;
        while halvings < MAX_HALVINGS && !(fc.norm() <= r) {
            t *= 0.5;
            cand = z + step * t;
            fc = f(cand);
            halvings += 1;
        }
        if !(fc.re.is_finite() && fc.im.is_finite()) {
            return Err(NumericsError::NonConvergence {
                iterations: it + 1,
                residual: r,
                last: z,
            });
        }
        if cand == z {
            // step fell below the resolution of z
            return Err(NumericsError::NonConvergence {
                iterations: it + 1,
                residual: r,
                last: z,
            });
        }
        z = cand;
        fz = fc;
    }
    let r = fz.norm();
    if r <= tol {
        return Ok(RootResult {
            root: z,
            residual: r,
            iterations: max_iter,
        });
    }
    Err(NumericsError::NonConvergence {
        iterations: max_iter,
        residual: r,
        last: z,
    })
}

/// Derivative-free secant iteration.
pub fn secant_fallback<F>(
    f: F,
    z0: C64,
    z1: C64,
    tol: f64,
    max_iter: usize,
) -> Result<RootResult, NumericsError>
where
    F: Fn(C64) -> C64,
{
    let (mut a, mut b) = (z0, z1);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == fb {
        return Err(NumericsError::DegenerateBracket);
    }
    for it in 0..max_iter {
        if fb.norm() <= tol {
            return Ok(RootResult {
                root: b,
                residual: fb.norm(),
                iterations: it,
            });
        }
        let denom = fb - fa;
        if denom.norm() == 0.0 {
            return Err(NumericsError::DegenerateBracket);
        }
        let c = b - fb * (b - a) / denom;
        if !(c.re.is_finite() && c.im.is_finite()) {
            break;
        }
        a = b;
        fa = fb;
        b = c;
        fb = f(b);
    }
    if fb.norm() <= tol {
        return Ok(RootResult {
            root: b,
            residual: fb.norm(),
            iterations: max_iter,
        });
    }
    Err(NumericsError::NonConvergence {
        iterations: max_iter,
        residual: fb.norm(),
        last: b,
    })
}

/// Central difference along the real axis, checked against the same
/// quotient along the imaginary axis with [`DERIV_REL_TOL`].
pub fn central_diff<G>(g: G, a: C64, h: f64) -> Result<C64, NumericsError>
where
    G: Fn(C64) -> C64,
{
    central_diff_checked(|z| Ok::<C64, NumericsError>(g(z)), a, h, DERIV_REL_TOL)
}

/// Fallible variant of [`central_diff`] with an explicit tolerance.
pub fn central_diff_checked<G, E>(g: G, a: C64, h: f64, rel_tol: f64) -> Result<C64, E>
where
    G: Fn(C64) -> Result<C64, E>,
    E: From<NumericsError>,
{
    let both = |h: f64| -> Result<(C64, C64), E> {
        let hr = C64::new(h, 0.0);
        let hi = C64::new(0.0, h);
        Ok((
            (g(a + hr)? - g(a - hr)?) / (2.0 * h),
            (g(a + hi)? - g(a - hi)?) / (2.0 * hi),
        ))
    };
    let (d_re, d_im) = both(h)?;
    let scale = d_re.norm().max(d_im.norm());
    let diff = (d_re - d_im).norm();
    if !(diff <= rel_tol * scale) && diff > 0.0 {
        // Near a zero of g' the two quotients differ by their O(h^2)
        // truncation errors; that gap shrinks when h is halved.
        let (r2, i2) = both(h / 2.0)?;
        if !((r2 - i2).norm() <= diff / 3.0) {
            let rel = if scale > 0.0 {
                diff / scale
            } else {
                f64::INFINITY
            };
            return Err(NumericsError::InconsistentDerivative {
                real_dir: d_re,
                imag_dir: d_im,
                rel,
            }
            .into());
        }
    }
    Ok(d_re)
}

/// Wilson score interval for `k` successes out of `n` at normal quantile `z`.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    let lo = if k == 0 {
        0.0
    } else {
        (center - half).max(0.0)
    };
    let hi = if k >= n {
        1.0
    } else {
        (center + half).min(1.0)
    };
    (lo, hi)
}

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Axis-aligned rectangle in the complex plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

impl Rect {
    pub fn new(re_min: f64, re_max: f64, im_min: f64, im_max: f64) -> Self {
        Self {
            re_min,
            re_max,
            im_min,
            im_max,
        }
    }

    /// Square of half-side `h` about `c`.
    pub fn centered(c: C64, h: f64) -> Self {
        Self::new(c.re - h, c.re + h, c.im - h, c.im + h)
    }

    pub fn width(&self) -> f64 {
        self.re_max - self.re_min
    }

    pub fn height(&self) -> f64 {
        self.im_max - self.im_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// The point at fractional coordinates `(u, v)` in `[0, 1]^2`.
    pub fn at(&self, u: f64, v: f64) -> C64 {
        C64::new(
            self.re_min + u * self.width(),
            self.im_min + v * self.height(),
        )
    }

    pub fn contains(&self, z: C64) -> bool {
        z.re >= self.re_min && z.re <= self.re_max && z.im >= self.im_min && z.im <= self.im_max
    }

    pub fn is_valid(&self) -> bool {
        self.width() > 0.0
            && self.height() > 0.0
            && self.width().is_finite()
            && self.height().is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn newton_square_root_of_four() {
        let r = newton_solve(|z| z * z - 4.0, |z| 2.0 * z, c(3.0, 0.0), 1e-13, 50).unwrap();
        assert!((r.root - c(2.0, 0.0)).norm() < 1e-12);
        assert!(r.residual < 1e-12);
    }

    #[test]
    fn newton_reports_vanishing_derivative() {
        let e = newton_solve(|z| z * z + 1.0, |z| 2.0 * z, c(0.0, 0.0), 1e-12, 10).unwrap_err();
        assert!(matches!(e, NumericsError::DerivativeVanished { .. }));
    }

    #[test]
    fn newton_budget_exhaustion() {
        let e = newton_solve(|z| z * z + 1.0, |z| 2.0 * z, c(3.0, 0.0), 1e-12, 3).unwrap_err();
        assert!(matches!(e, NumericsError::NonConvergence { .. }));
    }

    #[test]
    fn secant_linear_and_log2() {
        let r = secant_fallback(|z| z - 1.0, c(0.0, 0.0), c(2.0, 0.0), 1e-14, 10).unwrap();
        assert_abs_diff_eq!(r.root.re, 1.0, epsilon = 1e-14);
        let r = secant_fallback(|z| z.exp() - 2.0, c(0.0, 0.0), c(1.0, 0.0), 1e-14, 50).unwrap();
        assert_abs_diff_eq!(r.root.re, 2f64.ln(), epsilon = 1e-13);
        assert!(matches!(
            secant_fallback(|_| c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0), 1e-12, 10),
            Err(NumericsError::DegenerateBracket)
        ));
    }

    #[test]
    fn central_diff_closed_forms() {
        let d = central_diff(|a| a * a, c(1.0, 0.0), 1e-6).unwrap();
        assert!((d - c(2.0, 0.0)).norm() < 1e-9);
        let d = central_diff(|a| a.exp(), c(0.0, 0.0), 1e-6).unwrap();
        assert!((d - c(1.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn central_diff_rejects_conjugation() {
        let e = central_diff(|a| a.conj(), c(0.3, 0.2), 1e-4).unwrap_err();
        assert!(matches!(e, NumericsError::InconsistentDerivative { .. }));
    }

    #[test]
    fn log_magnitude_overflow_threshold() {
        assert!(LogMagnitude::new(699.0, 0.1).to_complex().is_ok());
        assert!(matches!(
            LogMagnitude::new(701.0, 0.1).to_complex(),
            Err(NumericsError::Overflow { .. })
        ));
    }

    #[test]
    fn wrap_arg_range() {
        assert_eq!(wrap_arg(-PI), PI);
        assert_abs_diff_eq!(wrap_arg(3.0 * PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_arg(-0.5), -0.5);
    }

    #[test]
    fn tower_ordering_and_addition() {
        let big = Tower::from_signed_exp(false, 1e5);
        let neg_big = Tower::from_signed_exp(true, 1e5);
        let small = Tower::Finite(3.0);
        assert!(big > small && small > neg_big);
        assert!(Tower::from_signed_exp(true, 2e5) < neg_big);
        assert_eq!(big.add_finite(1e10), big);
        assert_eq!(Tower::Finite(1.0).add_finite(2.0), Tower::Finite(3.0));
    }

    #[test]
    fn wilson_basics() {
        let (lo, hi) = wilson_interval(0, 100, Z95);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.05);
        let (lo, hi) = wilson_interval(50, 100, Z95);
        assert!(lo < 0.5 && hi > 0.5);
    }
}

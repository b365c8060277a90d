//! Phase-parameter maps `xi_{n,j}(a) = f_a^n(v_j(a))`, continuation of
//! repelling periodic points, the displacement `x_j`, transversality fits,
//! derivative comparison, Whitney-disk growth and the blow-up check.

use crate::family::{Family, FamilySpec};
use crate::numerics::{central_diff_checked, NumericsError, C64, DERIV_REL_TOL, OVERFLOW_LOG};
use crate::orbit::compose;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Stay-close scale.
pub const DELTA_PRIME: f64 = 1e-2;
/// Lower separation scale.
pub const DELTA_DOUBLE_PRIME: f64 = 1e-4;
pub const DEFAULT_NEIGHBORHOOD: f64 = 10.0 * DELTA_PRIME;
pub const DEFAULT_WHITNEY_K: f64 = 0.1;
pub const DEFAULT_SCALE: f64 = DELTA_PRIME / 2.0;
pub const MIN_BOUNDARY_SAMPLES: usize = 64;
const MAX_BOUNDARY_SAMPLES: usize = 4096;
const CIRCLE_SAMPLES: usize = 32;
const PATH_STEPS: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhaseError {
    #[error("orbit overflows at step {step}")]
    OrbitOverflow { step: usize },
    #[error(
        "periodic point lost repulsion at parameter {param} (|multiplier| = {multiplier_abs})"
    )]
    LostRepulsion { param: C64, multiplier_abs: f64 },
    #[error("Newton continuation diverged at parameter {param}")]
    NewtonDiverged { param: C64 },
    #[error("a sampled orbit left the neighbourhood at step {step} (separation {separation:e})")]
    LeftNeighborhood { step: usize, separation: f64 },
    #[error("scale not reached within {max_n} steps (diameter {diameter:e})")]
    ScaleNotReached { max_n: usize, diameter: f64 },
    #[error("target not covered within {max_n} steps: {uncovered} cells missing, {exceptional} exceptional")]
    NotCovered {
        max_n: usize,
        uncovered: usize,
        exceptional: usize,
    },
    #[error("singular index {0} out of range")]
    BadIndex(usize),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

fn iterate_n(fam: &FamilySpec, a: C64, mut z: C64, n: usize) -> Result<C64, PhaseError> {
    for step in 0..n {
        if fam.log_modulus(a, z) > OVERFLOW_LOG {
            return Err(PhaseError::OrbitOverflow { step: step + 1 });
        }
        z = fam.value(a, z);
    }
    Ok(z)
}

/// `s_j(a)`.
pub fn singular_value(fam: &FamilySpec, j: usize, a: C64) -> Result<C64, PhaseError> {
    fam.singular_values(a)
        .get(j)
        .map(|s| s.value)
        .ok_or(PhaseError::BadIndex(j))
}

/// `xi_{n,j}(a) = f_a^n(f_a^{k_j}(s_j(a)))`.
pub fn xi(fam: &FamilySpec, j: usize, n: usize, a: C64, k_j: usize) -> Result<C64, PhaseError> {
    iterate_n(fam, a, singular_value(fam, j, a)?, k_j + n)
}

/// `v_j(a)`, the first-landing point.
pub fn v_j(fam: &FamilySpec, j: usize, a: C64, k_j: usize) -> Result<C64, PhaseError> {
    xi(fam, j, 0, a, k_j)
}

/// A repelling periodic point followed in the parameter by Newton continuation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuedPoint {
    pub base_param: C64,
    pub base_point: C64,
    pub period: usize,
}

impl ContinuedPoint {
    pub fn value_at(&self, fam: &FamilySpec, a: C64) -> Result<C64, PhaseError> {
        continue_point(fam, self, a, PATH_STEPS)
    }

    /// The continued point followed by `n` further iterates.
    pub fn orbit_point(&self, fam: &FamilySpec, a: C64, n: usize) -> Result<C64, PhaseError> {
        iterate_n(fam, a, self.value_at(fam, a)?, n)
    }
}

/// Newton on `f_a^p(z) = z` until the step is below float resolution.
fn refine_periodic(fam: &FamilySpec, a: C64, z0: C64, p: usize) -> Result<(C64, C64), PhaseError> {
    let mut z = z0;
    for _ in 0..60 {
        let (w, d) = compose(fam, a, z, p);
        let denom = d - 1.0;
        if !(denom.norm() > 1e-300) {
            return Err(PhaseError::NewtonDiverged { param: a });
        }
        let step = (w - z) / denom;
        if !(step.re.is_finite() && step.im.is_finite()) {
            return Err(PhaseError::NewtonDiverged { param: a });
        }
        z -= step;
        if step.norm() <= 1e-15 * z.norm().max(1.0) {
            let m = compose(fam, a, z, p).1;
            return Ok((z, m));
        }
    }
    Err(PhaseError::NewtonDiverged { param: a })
}

/// Continue `cp` along the segment from its base parameter to `a_target`.
pub fn continue_point(
    fam: &FamilySpec,
    cp: &ContinuedPoint,
    a_target: C64,
    path_steps: usize,
) -> Result<C64, PhaseError> {
    if a_target == cp.base_param {
        return Ok(cp.base_point);
    }
    let steps = path_steps.max(1);
    let mut z = cp.base_point;
    for k in 1..=steps {
        let a = cp.base_param + (a_target - cp.base_param) * (k as f64 / steps as f64);
        let (zn, m) = refine_periodic(fam, a, z, cp.period)?;
        if (zn - z).norm() > 0.5 * z.norm().max(1.0) {
            return Err(PhaseError::NewtonDiverged { param: a });
        }
        if !(m.norm() > 1.0) {
            return Err(PhaseError::LostRepulsion {
                param: a,
                multiplier_abs: m.norm(),
            });
        }
        z = zn;
    }
    Ok(z)
}

/// Continue along a polyline of parameters, returning the point at each vertex.
pub fn continue_along(
    fam: &FamilySpec,
    cp: &ContinuedPoint,
    path: &[C64],
) -> Result<Vec<C64>, PhaseError> {
    let mut cur = *cp;
    let mut out = Vec::with_capacity(path.len());
    for &a in path {
        let z = continue_point(fam, &cur, a, 1)?;
        out.push(z);
        cur = ContinuedPoint {
            base_param: a,
            base_point: z,
            period: cp.period,
        };
    }
    Ok(out)
}

/// `x_j(a) = v_j(a) - h_a(v_j(base))`, with the motion realized by `cp`.
pub fn x_j(
    fam: &FamilySpec,
    j: usize,
    a: C64,
    cp: &ContinuedPoint,
    k_j: usize,
) -> Result<C64, PhaseError> {
    Ok(v_j(fam, j, a, k_j)? - cp.value_at(fam, a)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Transversality {
    /// Order-`order` coefficient stable to 1% across the ladder.
    Transversal {
        derivative: C64,
        order: usize,
        coefficient: C64,
        per_radius: Vec<(f64, C64)>,
    },
    /// Nonzero, but the leading coefficient drifts between radii.
    Unstable {
        order: usize,
        per_radius: Vec<(f64, C64)>,
        spread: f64,
    },
    /// All samples at the noise floor: the index does not move.
    IdenticallyZero { max_abs: f64 },
}

impl Transversality {
    pub fn derivative(&self) -> Option<C64> {
        match self {
            Transversality::Transversal { derivative, .. } => Some(*derivative),
            _ => None,
        }
    }
}

/// Taylor coefficients of `x_j` about the base parameter from a DFT on a
/// circle of radius `h`; entry `m` approximates the coefficient of `(a - base)^m`.
pub fn circle_coefficients(
    fam: &FamilySpec,
    j: usize,
    cp: &ContinuedPoint,
    k_j: usize,
    h: f64,
    samples: usize,
) -> Result<(Vec<C64>, f64), PhaseError> {
    let vals: Vec<C64> = (0..samples)
        .map(|k| {
            x_j(
                fam,
                j,
                cp.base_param + C64::from_polar(h, 2.0 * PI * k as f64 / samples as f64),
                cp,
                k_j,
            )
        })
        .collect::<Result<_, _>>()?;
    let max_abs = vals.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let coeffs = (0..samples / 2)
        .map(|m| {
            let s: C64 = vals
                .iter()
                .enumerate()
                .map(|(k, v)| v * C64::from_polar(1.0, -2.0 * PI * (k * m) as f64 / samples as f64))
                .sum();
            s / samples as f64 / h.powi(m as i32)
        })
        .collect();
    Ok((coeffs, max_abs))
}

/// Leading order and coefficient of `x_j` at the base, checked for
/// stability across `h_ladder`.
pub fn transversality(
    fam: &FamilySpec,
    j: usize,
    cp: &ContinuedPoint,
    k_j: usize,
    h_ladder: &[f64],
) -> Result<Transversality, PhaseError> {
    let scale = cp.base_point.norm().max(1.0);
    let mut per = Vec::new();
    let mut overall_max = 0.0f64;
    let mut order = None;
    for &h in h_ladder {
        let (coeffs, max_abs) = circle_coefficients(fam, j, cp, k_j, h, CIRCLE_SAMPLES)?;
        overall_max = overall_max.max(max_abs);
        let mags: Vec<f64> = coeffs
            .iter()
            .enumerate()
            .map(|(m, c)| c.norm() * h.powi(m as i32))
            .collect();
        let top = mags.iter().skip(1).fold(0.0f64, |x, &y| x.max(y));
        let k = (1..coeffs.len())
            .find(|&m| mags[m] > 1e-3 * top)
            .unwrap_or(1);
        per.push((h, k, coeffs[k]));
        order.get_or_insert(k);
    }
    if overall_max <= 1e-13 * scale {
        return Ok(Transversality::IdenticallyZero {
            max_abs: overall_max,
        });
    }
    let k0 = order.unwrap_or(1);
    let per_radius: Vec<(f64, C64)> = per.iter().map(|&(h, _, c)| (h, c)).collect();
    let same_order = per.iter().all(|&(_, k, _)| k == k0);
    let reference = per[0].2;
    let spread = per
        .iter()
        .map(|&(_, _, c)| (c - reference).norm() / reference.norm())
        .fold(0.0, f64::max);
    if same_order && spread <= 0.01 {
        let derivative = if k0 == 1 {
            reference
        } else {
            C64::new(0.0, 0.0)
        };
        Ok(Transversality::Transversal {
            derivative,
            order: k0,
            coefficient: reference,
            per_radius,
        })
    } else {
        Ok(Transversality::Unstable {
            order: k0,
            per_radius,
            spread,
        })
    }
}

/// `Df_a^n` along the orbit of `z`.
pub fn orbit_derivative(fam: &FamilySpec, a: C64, z: C64, n: usize) -> Result<C64, PhaseError> {
    let mut w = z;
    let mut d = C64::new(1.0, 0.0);
    for step in 0..n {
        if fam.log_modulus(a, w) > OVERFLOW_LOG {
            return Err(PhaseError::OrbitOverflow { step: step + 1 });
        }
        d *= fam.deriv(a, w);
        w = fam.value(a, w);
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeComparison {
    pub n: usize,
    /// `(xi_n - mu_n)' / (Df_a^n(v_j) x_j')`; exactly 1 at `n = 0`.
    pub ratio: C64,
    /// `xi_n' / (Df_a^n(v_j) x_j')`.
    pub literal_ratio: C64,
    pub separation: f64,
    pub df_n: C64,
    pub x_prime: C64,
}

/// Default step for parameter derivatives.
pub const PARAM_H: f64 = 1e-7;

/// Compare parameter derivatives of the phase-parameter map with the phase
/// derivative of `f_a^n` times `x_j'`.
pub fn derivative_comparison(
    fam: &FamilySpec,
    j: usize,
    a: C64,
    cp: &ContinuedPoint,
    k_j: usize,
    n: usize,
) -> Result<DerivativeComparison, PhaseError> {
    let h = PARAM_H;
    let sep = |b: C64| -> Result<C64, PhaseError> {
        Ok(xi(fam, j, n, b, k_j)? - cp.orbit_point(fam, b, n)?)
    };
    let xf = |b: C64| x_j(fam, j, b, cp, k_j);
    let x_prime: C64 = central_diff_checked(xf, a, h, DERIV_REL_TOL)?;
    let sep_prime: C64 = central_diff_checked(sep, a, h, DERIV_REL_TOL)?;
    let xi_prime: C64 = central_diff_checked(|b| xi(fam, j, n, b, k_j), a, h, DERIV_REL_TOL)?;
    let df_n = orbit_derivative(fam, a, v_j(fam, j, a, k_j)?, n)?;
    let denom = df_n * x_prime;
    Ok(DerivativeComparison {
        n,
        ratio: sep_prime / denom,
        literal_ratio: xi_prime / denom,
        separation: sep(a)?.norm(),
        df_n,
        x_prime,
    })
}

/// Smallest `n <= max_n` with `|xi_n(a) - mu_n(a)|` in `[lo, hi]`.
pub fn first_separation_index(
    fam: &FamilySpec,
    j: usize,
    a: C64,
    cp: &ContinuedPoint,
    k_j: usize,
    lo: f64,
    hi: f64,
    max_n: usize,
) -> Result<Option<(usize, f64)>, PhaseError> {
    let mut z = v_j(fam, j, a, k_j)?;
    let mut w = cp.value_at(fam, a)?;
    for n in 0..=max_n {
        let s = (z - w).norm();
        if s >= lo && s <= hi {
            return Ok(Some((n, s)));
        }
        if s > hi {
            return Ok(None);
        }
        z = iterate_n(fam, a, z, 1)?;
        w = iterate_n(fam, a, w, 1)?;
    }
    Ok(None)
}

/// `Df_a^n(v_j(a)) / Df_b^n(v_j(b))`.
pub fn cocycle_ratio(
    fam: &FamilySpec,
    j: usize,
    a: C64,
    b: C64,
    k_j: usize,
    n: usize,
) -> Result<C64, PhaseError> {
    Ok(orbit_derivative(fam, a, v_j(fam, j, a, k_j)?, n)?
        / orbit_derivative(fam, b, v_j(fam, j, b, k_j)?, n)?)
}

/// A parameter disk whose radius is `k` times its distance to `base`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WhitneyDisk {
    pub base: C64,
    pub center: C64,
    pub radius: f64,
    pub k: f64,
}

impl WhitneyDisk {
    pub fn new(base: C64, center: C64, k: f64) -> Self {
        Self {
            base,
            center,
            radius: k * (center - base).norm(),
            k,
        }
    }

    pub fn boundary(&self, samples: usize) -> Vec<C64> {
        (0..samples)
            .map(|i| {
                self.center + C64::from_polar(self.radius, 2.0 * PI * i as f64 / samples as f64)
            })
            .collect()
    }

    /// Center plus rings at fractions of the radius, boundary included.
    pub fn interior(&self, rings: usize, per_ring: usize) -> Vec<C64> {
        let mut out = vec![self.center];
        for r in 1..=rings {
            let rho = self.radius * r as f64 / rings as f64;
            for i in 0..per_ring {
                out.push(
                    self.center
                        + C64::from_polar(
                            rho,
                            2.0 * PI * (i as f64 + 0.5 * (r % 2) as f64) / per_ring as f64,
                        ),
                );
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub j: usize,
    pub n_big: usize,
    pub image_diameter: f64,
    /// Extremes of `|xi'_{n_big}(a)| / |xi'_{n_big}(center)|` over the disk.
    pub distortion_ratio_range: (f64, f64),
    pub boundary_samples: usize,
    /// Image diameter at every `n <= n_big`.
    pub diameters: Vec<f64>,
    /// Largest separation from the continued data seen at any checked step.
    pub max_separation: f64,
    pub samples: Vec<C64>,
}

fn diameter(pts: &[C64]) -> f64 {
    let mut d = 0.0f64;
    for i in 0..pts.len() {
        for p in &pts[i + 1..] {
            d = d.max((pts[i] - p).norm());
        }
    }
    d
}

/// Grow the Whitney disk under `xi_{n,j}` until its boundary image has
/// diameter at least `scale`.
pub fn grow_to_scale(
    fam: &FamilySpec,
    j: usize,
    disk: &WhitneyDisk,
    cp: &ContinuedPoint,
    k_j: usize,
    scale: f64,
    neighborhood_radius: f64,
    max_n: usize,
) -> Result<GrowthReport, PhaseError> {
    let mut diameters = Vec::new();
    let mut max_sep = 0.0f64;
    for n in 0..=max_n {
        let mut m = MIN_BOUNDARY_SAMPLES;
        let mut images = sample_images(fam, j, n, disk, k_j, m)?;
        let mut d = diameter(&images);
        while m < MAX_BOUNDARY_SAMPLES {
            let finer = sample_images(fam, j, n, disk, k_j, 2 * m)?;
            let d2 = diameter(&finer);
            m *= 2;
            images = finer;
            let stable = (d2 - d).abs() <= 0.01 * d2;
            d = d2;
            if stable {
                break;
            }
        }
        for (a, img) in disk.boundary(m).into_iter().zip(&images) {
            let s = (img - cp.orbit_point(fam, a, n)?).norm();
            max_sep = max_sep.max(s);
            if s > neighborhood_radius {
                return Err(PhaseError::LeftNeighborhood {
                    step: n,
                    separation: s,
                });
            }
        }
        diameters.push(d);
        if d >= scale {
            let h = disk.radius * 1e-3;
            let deriv = |a: C64| -> Result<f64, PhaseError> {
                let d: C64 = central_diff_checked(|b| xi(fam, j, n, b, k_j), a, h, DERIV_REL_TOL)?;
                Ok(d.norm())
            };
            let d0 = deriv(disk.center)?;
            let mut lo = f64::INFINITY;
            let mut hi = 0.0f64;
            for a in disk.interior(4, 16) {
                let r = deriv(a)? / d0;
                lo = lo.min(r);
                hi = hi.max(r);
            }
            return Ok(GrowthReport {
                j,
                n_big: n,
                image_diameter: d,
                distortion_ratio_range: (lo, hi),
                boundary_samples: m,
                diameters,
                max_separation: max_sep,
                samples: images,
            });
        }
    }
    Err(PhaseError::ScaleNotReached {
        max_n,
        diameter: diameters.last().copied().unwrap_or(0.0),
    })
}

fn sample_images(
    fam: &FamilySpec,
    j: usize,
    n: usize,
    disk: &WhitneyDisk,
    k_j: usize,
    m: usize,
) -> Result<Vec<C64>, PhaseError> {
    disk.boundary(m)
        .into_iter()
        .map(|a| xi(fam, j, n, a, k_j))
        .collect()
}

/// Polar grid on an annulus `r_in <= |z - center| <= r_out`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnulusTarget {
    pub center: C64,
    pub r_in: f64,
    pub r_out: f64,
    pub radial_cells: usize,
    pub angular_cells: usize,
}

impl AnnulusTarget {
    pub fn cell_count(&self) -> usize {
        self.radial_cells * self.angular_cells
    }

    pub fn cell_of(&self, z: C64) -> Option<usize> {
        let w = z - self.center;
        let r = w.norm();
        if !(r >= self.r_in && r < self.r_out) {
            return None;
        }
        let i = (((r - self.r_in) / (self.r_out - self.r_in)) * self.radial_cells as f64) as usize;
        let t = (w.arg() + PI) / (2.0 * PI);
        let k = ((t * self.angular_cells as f64) as usize).min(self.angular_cells - 1);
        Some(i.min(self.radial_cells - 1) * self.angular_cells + k)
    }

    /// Whether the closed cell contains `e`.
    pub fn cell_contains(&self, cell: usize, e: C64) -> bool {
        let i = cell / self.angular_cells;
        let k = cell % self.angular_cells;
        let dr = (self.r_out - self.r_in) / self.radial_cells as f64;
        let (r0, r1) = (self.r_in + dr * i as f64, self.r_in + dr * (i + 1) as f64);
        let w = e - self.center;
        let r = w.norm();
        if r == 0.0 {
            return r0 == 0.0;
        }
        let t = (w.arg() + PI) / (2.0 * PI) * self.angular_cells as f64;
        r >= r0 && r <= r1 && t >= k as f64 && t <= (k + 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupReport {
    pub n_cover: usize,
    pub cells: usize,
    /// Cells containing an exceptional value; never required and never claimed.
    pub exceptional_cells: Vec<usize>,
    /// Non-exceptional cells hit at each `n <= n_cover`.
    pub hits_per_step: Vec<usize>,
}

/// Smallest `n` at which the images of a dense sample of the seed disk hit
/// every non-exceptional cell of the target grid.
pub fn blowup_check(
    fam: &FamilySpec,
    a: C64,
    seed_center: C64,
    seed_radius: f64,
    target: &AnnulusTarget,
    max_n: usize,
    samples_per_side: usize,
) -> Result<BlowupReport, PhaseError> {
    let cells = target.cell_count();
    let exceptional: Vec<usize> = (0..cells)
        .filter(|&c| {
            fam.exceptional_values(a)
                .iter()
                .any(|&e| target.cell_contains(c, e))
        })
        .collect();
    let mut required = vec![true; cells];
    for &c in &exceptional {
        required[c] = false;
    }
    let need = required.iter().filter(|&&r| r).count();
    let m = samples_per_side.max(2);
    let mut pts: Vec<C64> = Vec::with_capacity(m * m);
    for iy in 0..m {
        for ix in 0..m {
            let u = -1.0 + 2.0 * (ix as f64 + 0.5) / m as f64;
            let v = -1.0 + 2.0 * (iy as f64 + 0.5) / m as f64;
            if u * u + v * v <= 1.0 {
                pts.push(seed_center + C64::new(u, v) * seed_radius);
            }
        }
    }
    let mut hits_per_step = Vec::new();
    for n in 0..=max_n {
        let mut hit = vec![false; cells];
        for &z in &pts {
            if let Some(c) = target.cell_of(z) {
                hit[c] = true;
            }
        }
        let count = (0..cells).filter(|&c| required[c] && hit[c]).count();
        hits_per_step.push(count);
        if count == need {
            return Ok(BlowupReport {
                n_cover: n,
                cells,
                exceptional_cells: exceptional,
                hits_per_step,
            });
        }
        if n == max_n {
            break;
        }
        for z in pts.iter_mut() {
            if z.re.is_finite() && fam.log_modulus(a, *z) < OVERFLOW_LOG {
                *z = fam.value(a, *z);
            } else {
                *z = C64::new(f64::NAN, f64::NAN);
            }
        }
    }
    Err(PhaseError::NotCovered {
        max_n,
        uncovered: need - hits_per_step.last().copied().unwrap_or(0),
        exceptional: exceptional.len(),
    })
}

//! Monte-Carlo area of Julia-like sets, the liminf-bounded test and Fatou
//! density in disks.

use crate::classify::{classify, ClassifyOptions};
use crate::family::{Family, FamilySpec};
use crate::numerics::{wilson_interval, Rect, C64, OVERFLOW_LOG, Z95};
use crate::orbit::compose;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Contraction per period required inside a linearization disk.
pub const CONTRACTION: f64 = 0.9;
const RING_PROBES: usize = 64;
const MIN_DISK_RADIUS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    /// No attracting cycle is known; `partial` carries the escaping/bounded split.
    #[error("no attracting cycle known at this parameter")]
    NoAttractorKnown { partial: Box<MeasureEstimate> },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// A disk about a point of an attracting cycle on which `f^p` contracts
/// toward that point by less than [`CONTRACTION`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearizationDisk {
    pub center: C64,
    pub radius: f64,
    pub period: usize,
    pub contraction: f64,
}

impl LinearizationDisk {
    pub fn contains(&self, z: C64) -> bool {
        (z - self.center).norm() < self.radius
    }
}

/// Worst ratio `|f^p(w) - c| / |w - c|` on the circle `|w - c| = rho`.
fn ring_contraction(fam: &FamilySpec, a: C64, c: C64, p: usize, rho: f64) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..RING_PROBES {
        let w = c + C64::from_polar(rho, 2.0 * PI * i as f64 / RING_PROBES as f64);
        let ratio = (compose(fam, a, w, p).0 - c).norm() / rho;
        if !ratio.is_finite() {
            return f64::INFINITY;
        }
        worst = worst.max(ratio);
    }
    worst
}

/// Largest dyadic radius (at most 1) whose boundary circle contracts by less
/// than [`CONTRACTION`]; by the maximum principle the whole disk then does.
pub fn linearization_disk(
    fam: &FamilySpec,
    a: C64,
    c: C64,
    period: usize,
) -> Option<LinearizationDisk> {
    let mut rho = 1.0;
    while rho >= MIN_DISK_RADIUS {
        let k = ring_contraction(fam, a, c, period, rho);
        if k < CONTRACTION {
            return Some(LinearizationDisk {
                center: c,
                radius: rho,
                period,
                contraction: k,
            });
        }
        rho *= 0.5;
    }
    None
}

/// Linearization disks about every point of every attracting cycle found by
/// the classifier.
pub fn attractor_disks(fam: &FamilySpec, a: C64, opts: &ClassifyOptions) -> Vec<LinearizationDisk> {
    let report = classify(fam, a, opts);
    let mut out = Vec::new();
    for cyc in report.attracting_cycles() {
        for z in cyc.points(fam, a) {
            if out
                .iter()
                .any(|d: &LinearizationDisk| (d.center - z).norm() < 1e-9)
            {
                continue;
            }
            if let Some(d) = linearization_disk(fam, a, z, cyc.period) {
                out.push(d);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleLabel {
    Attracted,
    Escaping,
    JuliaLike,
    Undetermined,
}

impl SampleLabel {
    pub fn to_byte(self) -> u8 {
        match self {
            SampleLabel::Undetermined => 0,
            SampleLabel::Attracted => 1,
            SampleLabel::JuliaLike => 2,
            SampleLabel::Escaping => 4,
        }
    }
}

/// Follow one orbit: attracted on entering a linearization disk, escaping
/// once the next iterate would overflow, Julia-like when the budget runs out
/// on a bounded orbit. Iterates below `exp(-OVERFLOW_LOG)` are carried as
/// logs; an orbit still down there at the end of the budget, or one that
/// turns non-finite, is undetermined.
pub fn label_point(
    fam: &FamilySpec,
    a: C64,
    z0: C64,
    budget: usize,
    disks: &[LinearizationDisk],
) -> (SampleLabel, usize) {
    let origin = C64::new(0.0, 0.0);
    let origin_attracted = disks.iter().any(|d| d.contains(origin));
    let mut z = z0;
    // log of the current iterate while it is too small for a float
    let mut tiny: Option<C64> = None;
    for step in 0..=budget {
        if let Some(l) = tiny {
            if origin_attracted {
                return (SampleLabel::Attracted, step);
            }
            if step == budget {
                break;
            }
            match fam.log_value_at_tiny(a, l) {
                Some(next) if next.re < -OVERFLOW_LOG => tiny = Some(next),
                Some(next) => {
                    tiny = None;
                    z = next.exp();
                }
                None => {
                    tiny = None;
                    z = fam.value(a, origin);
                }
            }
            continue;
        }
        if !(z.re.is_finite() && z.im.is_finite()) {
            return (SampleLabel::Undetermined, step);
        }
        if disks.iter().any(|d| d.contains(z)) {
            return (SampleLabel::Attracted, step);
        }
        if step == budget {
            break;
        }
        let lm = fam.log_modulus(a, z);
        if lm > OVERFLOW_LOG {
            return (SampleLabel::Escaping, step);
        }
        if lm < -OVERFLOW_LOG {
            tiny = Some(fam.log_value(a, z));
            continue;
        }
        z = fam.value(a, z);
    }
    if tiny.is_some() {
        return (SampleLabel::Undetermined, budget);
    }
    (SampleLabel::JuliaLike, budget)
}

/// Sample `index` of a jittered stratified grid with `n` points in `rect`.
pub fn stratified_point(rect: &Rect, n: usize, index: usize, seed: u64) -> C64 {
    let kx = ((n as f64).sqrt().round() as usize).max(1);
    let ky = n.div_ceil(kx);
    let cell = index * (kx * ky) / n.max(1);
    let (ix, iy) = (cell % kx, cell / kx);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let (u, v): (f64, f64) = (rng.gen(), rng.gen());
    rect.at((ix as f64 + u) / kx as f64, (iy as f64 + v) / ky as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureEstimate {
    #[serde(rename = "box")]
    pub rect: Rect,
    pub samples: usize,
    pub budget: usize,
    pub seed: u64,
    pub fraction_julia_like: f64,
    pub fraction_escaping: f64,
    pub fraction_attracted: f64,
    pub fraction_undetermined: f64,
    /// 95% Wilson interval for the Julia-like fraction.
    pub wilson_ci: (f64, f64),
    pub attracted_ci: (f64, f64),
    pub escaping_ci: (f64, f64),
    pub counts: [u64; 4],
    pub attractors: Vec<LinearizationDisk>,
}

/// Labels of the stratified samples, in sample order.
pub fn sample_labels(
    fam: &FamilySpec,
    a: C64,
    rect: &Rect,
    samples: usize,
    budget: usize,
    seed: u64,
    disks: &[LinearizationDisk],
) -> Vec<SampleLabel> {
    (0..samples)
        .into_par_iter()
        .map(|i| {
            label_point(
                fam,
                a,
                stratified_point(rect, samples, i, seed),
                budget,
                disks,
            )
            .0
        })
        .collect()
}

/// Area fractions against a fixed set of linearization disks.
pub fn estimate_area_with(
    fam: &FamilySpec,
    a: C64,
    rect: &Rect,
    samples: usize,
    budget: usize,
    seed: u64,
    disks: &[LinearizationDisk],
) -> Result<MeasureEstimate, MeasureError> {
    if !rect.is_valid() || samples == 0 {
        return Err(MeasureError::InvalidArgument(
            "empty box or zero samples".into(),
        ));
    }
    let labels = sample_labels(fam, a, rect, samples, budget, seed, disks);
    let mut counts = [0u64; 4];
    for l in &labels {
        let k = match l {
            SampleLabel::Attracted => 0,
            SampleLabel::Escaping => 1,
            SampleLabel::JuliaLike => 2,
            SampleLabel::Undetermined => 3,
        };
        counts[k] += 1;
    }
    let n = samples as u64;
    let frac = |k: u64| k as f64 / n as f64;
    Ok(MeasureEstimate {
        rect: *rect,
        samples,
        budget,
        seed,
        fraction_attracted: frac(counts[0]),
        fraction_escaping: frac(counts[1]),
        fraction_julia_like: frac(counts[2]),
        fraction_undetermined: frac(counts[3]),
        wilson_ci: wilson_interval(counts[2], n, Z95),
        attracted_ci: wilson_interval(counts[0], n, Z95),
        escaping_ci: wilson_interval(counts[1], n, Z95),
        counts,
        attractors: disks.to_vec(),
    })
}

/// Classify, build linearization disks, then estimate area fractions.
pub fn estimate_area(
    fam: &FamilySpec,
    a: C64,
    rect: &Rect,
    samples: usize,
    budget: usize,
    seed: u64,
) -> Result<MeasureEstimate, MeasureError> {
    let disks = attractor_disks(fam, a, &ClassifyOptions::default());
    let est = estimate_area_with(fam, a, rect, samples, budget, seed, &disks)?;
    if disks.is_empty() {
        return Err(MeasureError::NoAttractorKnown {
            partial: Box::new(est),
        });
    }
    Ok(est)
}

/// Fraction of samples whose orbit is inside `D(0, m)` at some step of the
/// second half of the budget window. Orbits that overflow never count.
pub fn liminf_bounded_fraction(
    fam: &FamilySpec,
    a: C64,
    rect: &Rect,
    samples: usize,
    budget: usize,
    m: f64,
    seed: u64,
) -> f64 {
    let hits: usize = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut z = stratified_point(rect, samples, i, seed);
            for step in 0..=budget {
                if step >= budget / 2 && z.norm() < m {
                    return 1;
                }
                if step == budget || fam.log_modulus(a, z) > OVERFLOW_LOG {
                    return 0;
                }
                z = fam.value(a, z);
            }
            0
        })
        .sum();
    hits as f64 / samples as f64
}

/// Fraction of grid cells with centers in `D(center, radius)` whose center
/// is attracted.
pub fn fatou_density_in_disk(
    fam: &FamilySpec,
    a: C64,
    center: C64,
    radius: f64,
    grid_resolution: usize,
    budget: usize,
    disks: &[LinearizationDisk],
) -> f64 {
    let g = grid_resolution.max(1);
    let rect = Rect::centered(center, radius);
    let (inside, attracted) = (0..g * g)
        .into_par_iter()
        .map(|k| {
            let z = rect.at(
                ((k % g) as f64 + 0.5) / g as f64,
                ((k / g) as f64 + 0.5) / g as f64,
            );
            if (z - center).norm() > radius {
                return (0usize, 0usize);
            }
            let hit = label_point(fam, a, z, budget, disks).0 == SampleLabel::Attracted;
            (1, hit as usize)
        })
        .reduce(|| (0, 0), |x, y| (x.0 + y.0, x.1 + y.1));
    if inside == 0 {
        return 0.0;
    }
    attracted as f64 / inside as f64
}

/// Per-cell labels of a `width x height` raster over `rect`, row-major from
/// the top row.
pub fn label_raster(
    fam: &FamilySpec,
    a: C64,
    rect: &Rect,
    width: usize,
    height: usize,
    budget: usize,
    disks: &[LinearizationDisk],
) -> Vec<SampleLabel> {
    (0..width * height)
        .into_par_iter()
        .map(|k| {
            let (x, y) = (k % width, k / width);
            let z = rect.at(
                (x as f64 + 0.5) / width as f64,
                1.0 - (y as f64 + 0.5) / height as f64,
            );
            label_point(fam, a, z, budget, disks).0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn ze_shift_superattracting_point_is_attracted_at_once() {
        let f = FamilySpec::ze_shift();
        let disks = attractor_disks(&f, c(1.0, 0.0), &ClassifyOptions::default());
        assert!(disks
            .iter()
            .any(|d| (d.center - c(-1.0, 0.0)).norm() < 1e-9));
        assert_eq!(
            label_point(&f, c(1.0, 0.0), c(-1.0, 0.0), 10, &disks),
            (SampleLabel::Attracted, 0)
        );
    }

    #[test]
    fn linearization_disk_contracts() {
        let f = FamilySpec::exp_lambda();
        let a = c(0.2, 0.0);
        let disks = attractor_disks(&f, a, &ClassifyOptions::default());
        assert_eq!(disks.len(), 1);
        let d = disks[0];
        assert!(d.contraction < CONTRACTION);
        // attracting fixed point of 0.2 e^z
        assert!((f.value(a, d.center) - d.center).norm() < 1e-12);
    }

    #[test]
    fn stratified_points_inside_and_deterministic() {
        let r = Rect::new(-1.0, 2.0, 0.0, 1.0);
        for i in 0..50 {
            let z = stratified_point(&r, 50, i, 9);
            assert!(r.contains(z));
            assert_eq!(z, stratified_point(&r, 50, i, 9));
        }
        assert_ne!(
            stratified_point(&r, 50, 3, 9),
            stratified_point(&r, 50, 3, 10)
        );
    }

    #[test]
    fn fractions_partition() {
        let f = FamilySpec::exp_lambda();
        let a = c(0.2, 0.0);
        let r = Rect::new(-2.0, 2.0, -2.0, 2.0);
        let e = estimate_area(&f, a, &r, 400, 200, 1).unwrap();
        let s = e.fraction_attracted
            + e.fraction_escaping
            + e.fraction_julia_like
            + e.fraction_undetermined;
        assert!((s - 1.0).abs() < 1e-12);
        assert!(e.fraction_attracted > 0.9);
    }
}

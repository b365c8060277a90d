//! Forward iteration with escape, cycle and collision tracking and a
//! log-scale derivative accumulator.

use crate::family::{Family, FamilyKind, FamilySpec};
use crate::numerics::{newton_solve, C64};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

pub const DEFAULT_ESCAPE_LOG_RADIUS: f64 = 700.0;
pub const DEFAULT_CYCLE_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_PERIOD: usize = 64;
pub const DEFAULT_RING: usize = 4096;
/// Multipliers within this distance of the unit circle are neutral.
pub const NEUTRAL_TOL: f64 = 1e-6;
/// Multipliers below this modulus count as super-attracting.
pub const SUPER_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OrbitError {
    #[error("periods {first} and {second} both close the orbit; cycle tolerance too loose")]
    AmbiguousCycle { first: usize, second: usize },
    #[error("tail has {available} samples, at least {needed} required")]
    DegenerateTail { available: usize, needed: usize },
    #[error("tail contains a critical point hit (log derivative -inf at step {step})")]
    NonFiniteTail { step: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterateOptions {
    pub budget: usize,
    pub escape_log_radius: f64,
    /// Retained points; 0 keeps the full orbit.
    pub ring_capacity: usize,
    /// Stop as soon as a cycle closes to `cycle_tol`.
    pub detect_cycles: bool,
    pub cycle_tol: f64,
    pub max_period: usize,
    /// Track the last step within this distance of a critical point.
    pub collision_tol: Option<f64>,
}

impl Default for IterateOptions {
    fn default() -> Self {
        Self {
            budget: 1000,
            escape_log_radius: DEFAULT_ESCAPE_LOG_RADIUS,
            ring_capacity: DEFAULT_RING,
            detect_cycles: true,
            cycle_tol: DEFAULT_CYCLE_TOL,
            max_period: DEFAULT_MAX_PERIOD,
            collision_tol: None,
        }
    }
}

impl IterateOptions {
    pub fn with_budget(budget: usize) -> Self {
        Self {
            budget,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OrbitStatus {
    /// The point with index `step` would exceed the escape radius.
    Escaped {
        step: usize,
    },
    EnteredCycle {
        start: usize,
        period: usize,
    },
    BudgetExhausted,
    Overflowed {
        step: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitRecord {
    /// Absolute index of `points[0]`.
    pub first_index: usize,
    pub points: Vec<C64>,
    /// `derivs[i]` is `f'(points[i])`, or `+inf` where that overflows.
    pub derivs: Vec<C64>,
    /// `log_deriv_partial[i]` is the sum of `log|f'|` over the orbit before
    /// point `first_index + i`.
    pub log_deriv_partial: Vec<f64>,
    pub status: OrbitStatus,
    pub steps_taken: usize,
    /// Largest modulus seen anywhere on the orbit, retained or not.
    pub max_abs: f64,
    /// First step whose value fell below the float floor without being an exact zero.
    pub underflow_step: Option<usize>,
    /// Last index within `collision_tol` of a critical point.
    pub last_collision: Option<usize>,
    /// Smallest critical distance after `last_collision`.
    pub tail_crit_distance: f64,
}

impl OrbitRecord {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn last_index(&self) -> usize {
        self.first_index + self.points.len() - 1
    }

    pub fn last(&self) -> C64 {
        *self
            .points
            .last()
            .expect("orbit has at least its start point")
    }

    pub fn point(&self, n: usize) -> Option<C64> {
        n.checked_sub(self.first_index)
            .and_then(|i| self.points.get(i).copied())
    }

    pub fn partial(&self, n: usize) -> Option<f64> {
        n.checked_sub(self.first_index)
            .and_then(|i| self.log_deriv_partial.get(i).copied())
    }

    /// True when no point was dropped by the ring buffer.
    pub fn complete(&self) -> bool {
        self.first_index == 0
    }

    /// First index after which the orbit avoids critical points.
    pub fn landing_index(&self) -> usize {
        self.last_collision.map_or(0, |k| k + 1)
    }
}

/// Finite critical set, where the family has one.
pub(crate) fn finite_critical_points(fam: &FamilySpec, a: C64) -> Option<Vec<C64>> {
    match fam.kind {
        FamilyKind::PowerExp { .. } => Some(fam.critical_points_in_disk(a, f64::INFINITY)),
        FamilyKind::SinePower { .. } => None,
    }
}

pub(crate) fn crit_distance(fam: &FamilySpec, a: C64, cache: &Option<Vec<C64>>, z: C64) -> f64 {
    match cache {
        Some(pts) => pts
            .iter()
            .map(|c| (c - z).norm())
            .fold(f64::INFINITY, f64::min),
        None => fam.nearest_critical(a, z).1,
    }
}

/// Iterate `z0` under `f_a` until escape, a closed cycle, overflow or the budget.
pub fn iterate(fam: &FamilySpec, a: C64, z0: C64, opts: &IterateOptions) -> OrbitRecord {
    let keep = if opts.ring_capacity == 0 {
        usize::MAX
    } else {
        opts.ring_capacity.max(opts.max_period + 1)
    };
    let mut points: VecDeque<C64> = VecDeque::new();
    let mut derivs: VecDeque<C64> = VecDeque::new();
    let mut partial: VecDeque<f64> = VecDeque::new();
    let mut first_index = 0usize;
    let crit_cache = if opts.collision_tol.is_some() {
        finite_critical_points(fam, a)
    } else {
        None
    };
    let mut last_collision = None;
    let mut tail_crit = f64::INFINITY;
    let mut underflow_step = None;
    let mut max_abs = z0.norm();

    let mut z = z0;
    let mut acc = 0.0f64;
    let mut status = OrbitStatus::BudgetExhausted;
    let mut n = 0usize;

    loop {
        let mut d = fam.deriv(a, z);
        if !(d.re.is_finite() && d.im.is_finite()) {
            d = C64::new(f64::INFINITY, 0.0);
        }
        points.push_back(z);
        derivs.push_back(d);
        partial.push_back(acc);
        if points.len() > keep {
            points.pop_front();
            derivs.pop_front();
            partial.pop_front();
            first_index += 1;
        }
        if let Some(tol) = opts.collision_tol {
            let dist = crit_distance(fam, a, &crit_cache, z);
            if dist < tol {
                last_collision = Some(n);
                tail_crit = f64::INFINITY;
            } else {
                tail_crit = tail_crit.min(dist);
            }
        }
        if opts.detect_cycles && n >= 1 {
            let avail = points.len() - 1;
            let top = opts.max_period.min(avail);
            let mut closed = None;
            for p in 1..=top {
                if (z - points[points.len() - 1 - p]).norm() < opts.cycle_tol {
                    closed = Some(p);
                    break;
                }
            }
            if let Some(p) = closed {
                status = OrbitStatus::EnteredCycle {
                    start: n - p,
                    period: p,
                };
                break;
            }
        }
        if n >= opts.budget {
            break;
        }
        let next_log = fam.log_modulus(a, z);
        if next_log > opts.escape_log_radius {
            status = OrbitStatus::Escaped { step: n + 1 };
            break;
        }
        let next = fam.value(a, z);
        if !(next.re.is_finite() && next.im.is_finite()) {
            status = OrbitStatus::Overflowed { step: n + 1 };
            break;
        }
        if underflow_step.is_none()
            && next_log.is_finite()
            && next_log < -crate::numerics::OVERFLOW_LOG
        {
            underflow_step = Some(n + 1);
        }
        acc += d.norm().ln();
        z = next;
        max_abs = max_abs.max(z.norm());
        n += 1;
    }

    OrbitRecord {
        first_index,
        points: points.into(),
        derivs: derivs.into(),
        log_deriv_partial: partial.into(),
        status,
        steps_taken: n,
        max_abs,
        underflow_step,
        last_collision,
        tail_crit_distance: tail_crit,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleNature {
    Attracting,
    SuperAttracting,
    Repelling,
    Neutral,
}

impl CycleNature {
    pub fn of_multiplier(m: C64, neutral_tol: f64) -> Self {
        let r = m.norm();
        if r < SUPER_TOL {
            CycleNature::SuperAttracting
        } else if r < 1.0 - neutral_tol {
            CycleNature::Attracting
        } else if r > 1.0 + neutral_tol {
            CycleNature::Repelling
        } else {
            CycleNature::Neutral
        }
    }

    pub fn attracts(&self) -> bool {
        matches!(self, CycleNature::Attracting | CycleNature::SuperAttracting)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleInfo {
    pub representative: C64,
    pub period: usize,
    pub multiplier: C64,
    pub nature: CycleNature,
}

impl CycleInfo {
    /// Newton-refine the representative on `f^p(z) = z` and recompute the
    /// multiplier there. Keeps the unrefined data when Newton fails.
    pub fn polish(&self, fam: &FamilySpec, a: C64) -> CycleInfo {
        let p = self.period;
        let z0 = self.representative;
        let tol = 1e-14 * z0.norm().max(1.0);
        let res = newton_solve(
            |z| compose(fam, a, z, p).0 - z,
            |z| compose(fam, a, z, p).1 - 1.0,
            z0,
            tol,
            60,
        );
        match res {
            Ok(r) if (r.root - z0).norm() < 1e-6 * z0.norm().max(1.0) => {
                let m = compose(fam, a, r.root, p).1;
                CycleInfo {
                    representative: r.root,
                    period: p,
                    multiplier: m,
                    nature: CycleNature::of_multiplier(m, NEUTRAL_TOL),
                }
            }
            _ => self.clone(),
        }
    }

    /// The `period` points of the cycle starting at the representative.
    pub fn points(&self, fam: &FamilySpec, a: C64) -> Vec<C64> {
        let mut out = Vec::with_capacity(self.period);
        let mut z = self.representative;
        for _ in 0..self.period {
            out.push(z);
            z = fam.value(a, z);
        }
        out
    }
}

/// `(f^p(z), (f^p)'(z))`.
pub fn compose(fam: &FamilySpec, a: C64, z: C64, p: usize) -> (C64, C64) {
    let mut w = z;
    let mut d = C64::new(1.0, 0.0);
    for _ in 0..p {
        d *= fam.deriv(a, w);
        w = fam.value(a, w);
    }
    (w, d)
}

/// Smallest period `p <= max_period` with `|z_N - z_{N-p}| < cycle_tol` at
/// the last retained point. The multiplier is the derivative product over
/// the last `p` points.
pub fn detect_cycle(
    record: &OrbitRecord,
    cycle_tol: f64,
    max_period: usize,
) -> Result<Option<CycleInfo>, OrbitError> {
    let len = record.points.len();
    if len < 2 {
        return Ok(None);
    }
    let last = record.points[len - 1];
    let top = max_period.min(len - 1);
    let passing: Vec<usize> = (1..=top)
        .filter(|&p| (last - record.points[len - 1 - p]).norm() < cycle_tol)
        .collect();
    let Some(&p0) = passing.first() else {
        return Ok(None);
    };
    if let Some(&q) = passing.iter().find(|&&q| q % p0 != 0) {
        return Err(OrbitError::AmbiguousCycle {
            first: p0,
            second: q,
        });
    }
    let start = len - 1 - p0;
    let multiplier = record.derivs[start..len - 1]
        .iter()
        .fold(C64::new(1.0, 0.0), |m, d| m * d);
    Ok(Some(CycleInfo {
        representative: record.points[start],
        period: p0,
        multiplier,
        nature: CycleNature::of_multiplier(multiplier, NEUTRAL_TOL),
    }))
}

/// Cycle information for an orbit that stopped with `EnteredCycle`.
pub fn cycle_of_record(record: &OrbitRecord) -> Option<CycleInfo> {
    let OrbitStatus::EnteredCycle { start, period } = record.status else {
        return None;
    };
    let i0 = start.checked_sub(record.first_index)?;
    let multiplier = record.derivs[i0..i0 + period]
        .iter()
        .fold(C64::new(1.0, 0.0), |m, d| m * d);
    Some(CycleInfo {
        representative: record.points[i0],
        period,
        multiplier,
        nature: CycleNature::of_multiplier(multiplier, NEUTRAL_TOL),
    })
}

/// An exactly periodic record that runs `laps` times around the cycle.
pub fn cycle_orbit(fam: &FamilySpec, a: C64, cycle: &CycleInfo, laps: usize) -> OrbitRecord {
    let pts = cycle.points(fam, a);
    let ds: Vec<C64> = pts.iter().map(|&z| fam.deriv(a, z)).collect();
    let total = cycle.period * laps + 1;
    let mut points = Vec::with_capacity(total);
    let mut derivs = Vec::with_capacity(total);
    let mut partial = Vec::with_capacity(total);
    let mut acc = 0.0;
    for k in 0..total {
        let i = k % cycle.period;
        points.push(pts[i]);
        derivs.push(ds[i]);
        partial.push(acc);
        acc += ds[i].norm().ln();
    }
    let max_abs = pts.iter().map(|z| z.norm()).fold(0.0, f64::max);
    OrbitRecord {
        first_index: 0,
        points,
        derivs,
        log_deriv_partial: partial,
        status: OrbitStatus::EnteredCycle {
            start: 0,
            period: cycle.period,
        },
        steps_taken: total - 1,
        max_abs,
        underflow_step: None,
        last_collision: None,
        tail_crit_distance: f64::INFINITY,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionFit {
    pub c: f64,
    pub lambda: f64,
    pub r2: f64,
}

/// Least-squares fit `log_deriv_partial[n] ~ log C + n log lambda` over the
/// retained indices `n >= tail_start`.
pub fn orbit_expansion_fit(
    record: &OrbitRecord,
    tail_start: usize,
) -> Result<ExpansionFit, OrbitError> {
    let i0 = tail_start.saturating_sub(record.first_index);
    let ys = record.log_deriv_partial.get(i0..).unwrap_or(&[]);
    if ys.len() < 11 {
        return Err(OrbitError::DegenerateTail {
            available: ys.len(),
            needed: 11,
        });
    }
    if let Some(k) = ys.iter().position(|y| !y.is_finite()) {
        return Err(OrbitError::NonFiniteTail {
            step: record.first_index + i0 + k,
        });
    }
    let n0 = (record.first_index + i0) as f64;
    let m = ys.len() as f64;
    let xbar = n0 + (m - 1.0) / 2.0;
    let ybar = ys.iter().sum::<f64>() / m;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (k, y) in ys.iter().enumerate() {
        let dx = n0 + k as f64 - xbar;
        sxy += dx * (y - ybar);
        sxx += dx * dx;
    }
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for (k, y) in ys.iter().enumerate() {
        let fit = intercept + slope * (n0 + k as f64);
        ss_res += (y - fit).powi(2);
        ss_tot += (y - ybar).powi(2);
    }
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        0.0
    };
    Ok(ExpansionFit {
        c: intercept.exp(),
        lambda: slope.exp(),
        r2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::newton_solve;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::E;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn ze_shift_minus_one_is_super_attracting() {
        let f = FamilySpec::ze_shift();
        let r = iterate(&f, c(1.0, 0.0), c(-1.0, 0.0), &IterateOptions::default());
        assert_eq!(
            r.status,
            OrbitStatus::EnteredCycle {
                start: 0,
                period: 1
            }
        );
        let cy = cycle_of_record(&r).unwrap();
        assert!((cy.representative + 1.0).norm() < 1e-15);
        assert!(cy.multiplier.norm() < 1e-15);
        assert_eq!(cy.nature, CycleNature::SuperAttracting);
    }

    #[test]
    fn ze_shift_zero_is_fixed_but_repels() {
        let f = FamilySpec::ze_shift();
        let r = iterate(&f, c(1.0, 0.0), c(0.0, 0.0), &IterateOptions::default());
        assert_eq!(
            r.status,
            OrbitStatus::EnteredCycle {
                start: 0,
                period: 1
            }
        );
        let r = iterate(&f, c(1.0, 0.0), c(1e-8, 0.0), &IterateOptions::default());
        assert!(
            r.max_abs > 1e-2,
            "perturbed orbit must leave a neighbourhood of 0"
        );
        assert!(!matches!(
            r.status,
            OrbitStatus::EnteredCycle { start: 0, .. }
        ));
    }

    #[test]
    fn exp_escapes_fast() {
        let f = FamilySpec::exp_lambda();
        let r = iterate(&f, c(1.0, 0.0), c(1.0, 0.0), &IterateOptions::default());
        match r.status {
            OrbitStatus::Escaped { step } => assert!(step <= 5),
            s => panic!("{s:?}"),
        }
    }

    #[test]
    fn constant_orbit_period_one() {
        let rec = OrbitRecord {
            first_index: 0,
            points: vec![c(0.5, 0.0); 10],
            derivs: vec![c(0.3, 0.0); 10],
            log_deriv_partial: (0..10).map(|k| k as f64 * 0.3f64.ln()).collect(),
            status: OrbitStatus::BudgetExhausted,
            steps_taken: 9,
            max_abs: 0.5,
            underflow_step: None,
            last_collision: None,
            tail_crit_distance: f64::INFINITY,
        };
        let cy = detect_cycle(&rec, 1e-9, 4).unwrap().unwrap();
        assert_eq!(cy.period, 1);
        assert_eq!(cy.nature, CycleNature::Attracting);
    }

    #[test]
    fn incommensurate_periods_are_ambiguous() {
        let pts = vec![
            c(0.0, 0.0),
            c(9.0, 0.0),
            c(1e-7, 0.0),
            c(5e-7, 0.0),
            c(3.0, 0.0),
            c(0.0, 0.0),
        ];
        let n = pts.len();
        let rec = OrbitRecord {
            first_index: 0,
            points: pts,
            derivs: vec![c(0.5, 0.0); n],
            log_deriv_partial: vec![0.0; n],
            status: OrbitStatus::BudgetExhausted,
            steps_taken: n - 1,
            max_abs: 1e-7,
            underflow_step: None,
            last_collision: None,
            tail_crit_distance: f64::INFINITY,
        };
        assert!(matches!(
            detect_cycle(&rec, 1e-6, 5),
            Err(OrbitError::AmbiguousCycle { .. })
        ));
    }

    #[test]
    fn exp_attracting_two_cycle() {
        // Oracle: Newton on f^2(z) - z at lambda = -4, then |(f^2)'| < 1.
        let f = FamilySpec::exp_lambda();
        let lam = c(-4.0, 0.0);
        let f2 = |z: C64| {
            let w = lam * z.exp();
            lam * w.exp()
        };
        let df2 = |z: C64| {
            let w = lam * z.exp();
            w * lam * w.exp()
        };
        let root = newton_solve(|z| f2(z) - z, |z| df2(z) - 1.0, c(-0.1, 0.0), 1e-14, 100)
            .unwrap()
            .root;
        let m_oracle = df2(root);
        assert!(m_oracle.norm() < 1.0);
        let r = iterate(&f, lam, c(0.0, 0.0), &IterateOptions::with_budget(5000));
        let OrbitStatus::EnteredCycle { period, .. } = r.status else {
            panic!("{:?}", r.status)
        };
        assert_eq!(period, 2);
        let cy = cycle_of_record(&r).unwrap().polish(&f, lam);
        assert_eq!(cy.nature, CycleNature::Attracting);
        assert!((cy.multiplier - m_oracle).norm() < 1e-9);
    }

    #[test]
    fn fit_on_repelling_origin_of_ze_shift() {
        let f = FamilySpec::ze_shift();
        let cy = CycleInfo {
            representative: c(0.0, 0.0),
            period: 1,
            multiplier: c(E, 0.0),
            nature: CycleNature::Repelling,
        };
        let rec = cycle_orbit(&f, c(1.0, 0.0), &cy, 20);
        let fit = orbit_expansion_fit(&rec, 0).unwrap();
        assert_abs_diff_eq!(fit.lambda, E, epsilon = 1e-6);
        assert!(fit.r2 > 0.999999);
    }

    #[test]
    fn fit_rejects_short_and_infinite_tails() {
        let f = FamilySpec::ze_shift();
        let rec = iterate(
            &f,
            c(1.0, 0.0),
            c(-1.0, 0.0),
            &IterateOptions {
                detect_cycles: false,
                budget: 30,
                ..Default::default()
            },
        );
        assert!(matches!(
            orbit_expansion_fit(&rec, 0),
            Err(OrbitError::NonFiniteTail { .. })
        ));
        assert!(matches!(
            orbit_expansion_fit(&rec, 25),
            Err(OrbitError::DegenerateTail { .. })
        ));
    }

    #[test]
    fn super_attracting_tail_has_contracting_fit() {
        let f = FamilySpec::zsq_exp();
        let opts = IterateOptions {
            detect_cycles: false,
            budget: 6,
            ..Default::default()
        };
        let rec = iterate(&f, c(1.0, 0.0), c(0.05, 0.0), &opts);
        let rec2 = iterate(
            &f,
            c(1.0, 0.0),
            c(0.05, 0.0),
            &IterateOptions { budget: 20, ..opts },
        );
        assert!(rec.len() < 11);
        let fit = orbit_expansion_fit(&rec2, 0);
        if let Ok(fit) = fit {
            assert!(fit.lambda < 1.0);
        }
    }

    #[test]
    fn ring_buffer_truncates_and_keeps_partials() {
        let f = FamilySpec::ze_shift();
        let opts = IterateOptions {
            detect_cycles: false,
            budget: 200,
            ring_capacity: 70,
            ..Default::default()
        };
        let full = iterate(
            &f,
            c(1.0, 0.0),
            c(-0.3, 0.2),
            &IterateOptions {
                ring_capacity: 0,
                ..opts
            },
        );
        let ring = iterate(&f, c(1.0, 0.0), c(-0.3, 0.2), &opts);
        assert_eq!(ring.len(), 70);
        assert!(!ring.complete());
        let n = ring.last_index();
        assert_eq!(ring.point(n), full.point(n));
        assert_eq!(ring.partial(n), full.partial(n));
    }
}

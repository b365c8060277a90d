//! Parameter verdicts (hyperbolic, Misiurewicz, Misiurewicz-Thurston,
//! escaping, undetermined) with the evidence behind them.

use crate::family::{Family, FamilySpec, SingularValue};
use crate::numerics::C64;
use crate::orbit::{
    crit_distance, cycle_of_record, cycle_orbit, detect_cycle, finite_critical_points, iterate,
    orbit_expansion_fit, CycleInfo, CycleNature, ExpansionFit, IterateOptions, OrbitRecord,
    OrbitStatus,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClassifyError {
    #[error("expansion certificate failed: fitted lambda {lambda} <= 1 + {margin}")]
    CertificateFailed { lambda: f64, margin: f64 },
    #[error("verdict {0:?} carries no Misiurewicz data")]
    NotMisiurewicz(Verdict),
    #[error("orbit of singular value {index} was truncated before its landing index {k_j}")]
    InsufficientOrbit { index: usize, k_j: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyOptions {
    pub budget: usize,
    pub escape_log_radius: f64,
    pub cycle_tol: f64,
    pub max_period: usize,
    /// Non-recurrence gap required between a bounded tail and the critical set.
    pub delta: f64,
    pub collision_tol: f64,
    /// Bounded means inside `D(0, bound_factor * R_family)`.
    pub bound_factor: f64,
    /// A certificate needs a fitted expansion rate above `1 + expansion_margin`.
    pub expansion_margin: f64,
    pub ring_capacity: usize,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            budget: 2000,
            escape_log_radius: crate::orbit::DEFAULT_ESCAPE_LOG_RADIUS,
            cycle_tol: crate::orbit::DEFAULT_CYCLE_TOL,
            max_period: crate::orbit::DEFAULT_MAX_PERIOD,
            delta: 1e-3,
            collision_tol: 1e-8,
            bound_factor: 10.0,
            expansion_margin: 1e-3,
            ring_capacity: crate::orbit::DEFAULT_RING,
        }
    }
}

impl ClassifyOptions {
    pub fn iterate_options(&self) -> IterateOptions {
        IterateOptions {
            budget: self.budget,
            escape_log_radius: self.escape_log_radius,
            ring_capacity: self.ring_capacity,
            detect_cycles: true,
            cycle_tol: self.cycle_tol,
            max_period: self.max_period,
            collision_tol: Some(self.collision_tol),
        }
    }
}

/// Raster byte values are fixed: 0 undetermined, 1 hyperbolic,
/// 2 Misiurewicz, 3 Misiurewicz-Thurston, 4 escaping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Undetermined,
    Hyperbolic,
    Misiurewicz,
    MisiurewiczThurston,
    Escaping,
}

impl Verdict {
    pub const ALL: [Verdict; 5] = [
        Verdict::Undetermined,
        Verdict::Hyperbolic,
        Verdict::Misiurewicz,
        Verdict::MisiurewiczThurston,
        Verdict::Escaping,
    ];

    pub fn to_byte(self) -> u8 {
        match self {
            Verdict::Undetermined => 0,
            Verdict::Hyperbolic => 1,
            Verdict::Misiurewicz => 2,
            Verdict::MisiurewiczThurston => 3,
            Verdict::Escaping => 4,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        Self::ALL.get(b as usize).copied()
    }

    pub fn is_misiurewicz(self) -> bool {
        matches!(self, Verdict::Misiurewicz | Verdict::MisiurewiczThurston)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Outcome {
    AttractedToCycle {
        cycle: CycleInfo,
    },
    PreperiodicRepelling {
        preperiod: usize,
        cycle: CycleInfo,
    },
    BoundedNonRecurrent {
        min_crit_distance: f64,
        fit: ExpansionFit,
    },
    Escaping {
        step: usize,
    },
    Undetermined {
        reason: String,
    },
}

impl Outcome {
    fn julia_side(&self) -> bool {
        matches!(
            self,
            Outcome::PreperiodicRepelling { .. } | Outcome::BoundedNonRecurrent { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingularOrbitInfo {
    pub index: usize,
    pub s: SingularValue,
    pub k_j: usize,
    pub outcome: Outcome,
    #[serde(skip)]
    pub orbit: OrbitRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisiurewiczCertificate {
    pub fit: ExpansionFit,
    pub min_crit_distance: f64,
    pub radius: f64,
    /// Number of points in the truncated Julia-side post-singular set.
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub family: String,
    pub param: C64,
    pub verdict: Verdict,
    pub per_singular_value: Vec<SingularOrbitInfo>,
    pub evidence: BTreeMap<String, f64>,
    pub certificate: Option<MisiurewiczCertificate>,
}

impl ClassificationReport {
    /// All cycles met on the way, polished.
    pub fn cycles(&self) -> Vec<&CycleInfo> {
        self.per_singular_value
            .iter()
            .filter_map(|i| match &i.outcome {
                Outcome::AttractedToCycle { cycle }
                | Outcome::PreperiodicRepelling { cycle, .. } => Some(cycle),
                _ => None,
            })
            .collect()
    }

    pub fn attracting_cycles(&self) -> Vec<&CycleInfo> {
        self.cycles()
            .into_iter()
            .filter(|c| c.nature.attracts())
            .collect()
    }
}

/// Classify `f_a` by following every singular orbit.
pub fn classify(fam: &FamilySpec, a: C64, opts: &ClassifyOptions) -> ClassificationReport {
    classify_with_singular_values(fam, a, &fam.singular_values(a), opts)
}

/// As [`classify`], with an explicit singular-value list.
pub fn classify_with_singular_values(
    fam: &FamilySpec,
    a: C64,
    svs: &[SingularValue],
    opts: &ClassifyOptions,
) -> ClassificationReport {
    let iopts = opts.iterate_options();
    let mut infos = Vec::with_capacity(svs.len());
    let mut pending = Vec::new();
    let mut cycle_radius = 0.0f64;
    for (j, s) in svs.iter().enumerate() {
        let orbit = iterate(fam, a, s.value, &iopts);
        let k_j = orbit.landing_index();
        let outcome = match orbit.status {
            OrbitStatus::EnteredCycle { start, period } => {
                let cy = cycle_of_record(&orbit)
                    .expect("cycle status carries its points")
                    .polish(fam, a);
                cycle_radius = cy
                    .points(fam, a)
                    .iter()
                    .map(|z| z.norm())
                    .fold(cycle_radius, f64::max);
                if orbit.underflow_step.is_some_and(|u| u <= start + period) {
                    Outcome::Undetermined {
                        reason: "orbit underflowed onto the cycle".into(),
                    }
                } else {
                    match cy.nature {
                        CycleNature::Attracting | CycleNature::SuperAttracting => {
                            Outcome::AttractedToCycle { cycle: cy }
                        }
                        CycleNature::Repelling => Outcome::PreperiodicRepelling {
                            preperiod: start,
                            cycle: cy,
                        },
                        CycleNature::Neutral => Outcome::Undetermined {
                            reason: "neutral cycle".into(),
                        },
                    }
                }
            }
            OrbitStatus::Escaped { step } => Outcome::Escaping { step },
            OrbitStatus::Overflowed { .. } => Outcome::Undetermined {
                reason: "non-finite iterate".into(),
            },
            OrbitStatus::BudgetExhausted => {
                match detect_cycle(&orbit, opts.cycle_tol * 1e3, opts.max_period) {
                    Ok(Some(cy)) => {
                        let cy = cy.polish(fam, a);
                        match cy.nature {
                            CycleNature::Attracting | CycleNature::SuperAttracting => {
                                cycle_radius = cy
                                    .points(fam, a)
                                    .iter()
                                    .map(|z| z.norm())
                                    .fold(cycle_radius, f64::max);
                                Outcome::AttractedToCycle { cycle: cy }
                            }
                            CycleNature::Neutral => Outcome::Undetermined {
                                reason: "neutral cycle".into(),
                            },
                            CycleNature::Repelling => Outcome::Undetermined {
                                reason: "orbit shadows a repelling cycle".into(),
                            },
                        }
                    }
                    Ok(None) => {
                        pending.push(j);
                        Outcome::Undetermined {
                            reason: "pending".into(),
                        }
                    }
                    Err(_) => Outcome::Undetermined {
                        reason: "ambiguous cycle".into(),
                    },
                }
            }
        };
        infos.push(SingularOrbitInfo {
            index: j,
            s: s.clone(),
            k_j,
            outcome,
            orbit,
        });
    }

    let r_family = svs
        .iter()
        .map(|s| s.value.norm())
        .fold(1.0f64, f64::max)
        .max(cycle_radius);
    let bound = opts.bound_factor * r_family;
    for j in pending {
        let info = &mut infos[j];
        let o = &info.orbit;
        info.outcome = if o.underflow_step.is_some() {
            Outcome::Undetermined {
                reason: "precision loss".into(),
            }
        } else if o.max_abs > bound {
            Outcome::Undetermined {
                reason: "orbit left the bounded region".into(),
            }
        } else if o.tail_crit_distance < opts.delta {
            Outcome::Undetermined {
                reason: "tail recurs to the critical set".into(),
            }
        } else {
            match orbit_expansion_fit(o, info.k_j.max(o.first_index)) {
                Ok(fit) if fit.lambda > 1.0 + opts.expansion_margin => {
                    Outcome::BoundedNonRecurrent {
                        min_crit_distance: o.tail_crit_distance,
                        fit,
                    }
                }
                Ok(_) => Outcome::Undetermined {
                    reason: "tail is not expanding".into(),
                },
                Err(e) => Outcome::Undetermined {
                    reason: e.to_string(),
                },
            }
        };
    }

    let mut evidence = BTreeMap::new();
    evidence.insert("r_family".to_string(), r_family);
    for info in &infos {
        let j = info.index;
        evidence.insert(format!("s{j}.k"), info.k_j as f64);
        evidence.insert(format!("s{j}.steps"), info.orbit.steps_taken as f64);
        match &info.outcome {
            Outcome::AttractedToCycle { cycle } => {
                evidence.insert(format!("s{j}.period"), cycle.period as f64);
                evidence.insert(format!("s{j}.multiplier_abs"), cycle.multiplier.norm());
            }
            Outcome::PreperiodicRepelling { preperiod, cycle } => {
                evidence.insert(format!("s{j}.period"), cycle.period as f64);
                evidence.insert(format!("s{j}.preperiod"), *preperiod as f64);
                evidence.insert(format!("s{j}.multiplier_abs"), cycle.multiplier.norm());
                if let Ok(fit) =
                    orbit_expansion_fit(&cycle_orbit(fam, a, cycle, laps_for(cycle.period)), 0)
                {
                    evidence.insert(format!("s{j}.lambda_fit"), fit.lambda);
                }
            }
            Outcome::BoundedNonRecurrent {
                min_crit_distance,
                fit,
            } => {
                evidence.insert(format!("s{j}.min_crit_distance"), *min_crit_distance);
                evidence.insert(format!("s{j}.lambda_fit"), fit.lambda);
            }
            Outcome::Escaping { step } => {
                evidence.insert(format!("s{j}.escape_step"), *step as f64);
            }
            Outcome::Undetermined { .. } => {}
        }
    }

    let verdict = if infos
        .iter()
        .any(|i| matches!(i.outcome, Outcome::Escaping { .. }))
    {
        Verdict::Escaping
    } else if infos
        .iter()
        .any(|i| matches!(i.outcome, Outcome::Undetermined { .. }))
    {
        Verdict::Undetermined
    } else if infos
        .iter()
        .all(|i| matches!(i.outcome, Outcome::AttractedToCycle { .. }))
    {
        Verdict::Hyperbolic
    } else if infos
        .iter()
        .filter(|i| i.outcome.julia_side())
        .all(|i| matches!(i.outcome, Outcome::PreperiodicRepelling { .. }))
    {
        Verdict::MisiurewiczThurston
    } else {
        Verdict::Misiurewicz
    };

    let mut report = ClassificationReport {
        family: fam.id.clone(),
        param: a,
        verdict,
        per_singular_value: infos,
        evidence,
        certificate: None,
    };
    if verdict.is_misiurewicz() {
        match misiurewicz_certificate(fam, a, &report, opts.expansion_margin) {
            Ok(cert) => {
                report
                    .evidence
                    .insert("certificate.lambda".into(), cert.fit.lambda);
                report.evidence.insert(
                    "certificate.min_crit_distance".into(),
                    cert.min_crit_distance,
                );
                report
                    .evidence
                    .insert("certificate.radius".into(), cert.radius);
                report.certificate = Some(cert);
            }
            Err(ClassifyError::CertificateFailed { lambda, .. }) => {
                report
                    .evidence
                    .insert("certificate.failed_lambda".into(), lambda);
                report.verdict = Verdict::Undetermined;
            }
            Err(_) => report.verdict = Verdict::Undetermined,
        }
    }
    report
}

fn laps_for(period: usize) -> usize {
    (20 / period).max(10)
}

/// Points of the truncated Julia-side orbit of one singular value, from its
/// landing index on.
fn julia_points(
    fam: &FamilySpec,
    a: C64,
    info: &SingularOrbitInfo,
) -> Result<Vec<C64>, ClassifyError> {
    let o = &info.orbit;
    if o.first_index > info.k_j {
        return Err(ClassifyError::InsufficientOrbit {
            index: info.index,
            k_j: info.k_j,
        });
    }
    let tail = &o.points[info.k_j - o.first_index..];
    match &info.outcome {
        Outcome::PreperiodicRepelling { preperiod, cycle } => {
            let mut pts: Vec<C64> = if *preperiod > info.k_j {
                o.points[info.k_j - o.first_index..*preperiod - o.first_index].to_vec()
            } else {
                Vec::new()
            };
            pts.extend(cycle.points(fam, a));
            Ok(pts)
        }
        _ => Ok(tail.to_vec()),
    }
}

/// Expansion, critical gap and radius of the truncated Julia-side
/// post-singular set.
pub fn misiurewicz_certificate(
    fam: &FamilySpec,
    a: C64,
    report: &ClassificationReport,
    margin: f64,
) -> Result<MisiurewiczCertificate, ClassifyError> {
    if !report.verdict.is_misiurewicz() {
        return Err(ClassifyError::NotMisiurewicz(report.verdict));
    }
    let cache = finite_critical_points(fam, a);
    let mut fit: Option<ExpansionFit> = None;
    let mut min_crit = f64::INFINITY;
    let mut radius = 0.0f64;
    let mut count = 0;
    for info in report
        .per_singular_value
        .iter()
        .filter(|i| i.outcome.julia_side())
    {
        let pts = julia_points(fam, a, info)?;
        for &z in &pts {
            min_crit = min_crit.min(crit_distance(fam, a, &cache, z));
            radius = radius.max(z.norm());
        }
        count += pts.len();
        let this_fit = match &info.outcome {
            Outcome::PreperiodicRepelling { cycle, .. } => {
                orbit_expansion_fit(&cycle_orbit(fam, a, cycle, laps_for(cycle.period)), 0)
                    .map_err(|_| ClassifyError::CertificateFailed {
                        lambda: cycle.multiplier.norm(),
                        margin,
                    })?
            }
            Outcome::BoundedNonRecurrent { fit, .. } => *fit,
            _ => unreachable!(),
        };
        if fit.is_none_or(|f| this_fit.lambda < f.lambda) {
            fit = Some(this_fit);
        }
    }
    let fit = fit.ok_or(ClassifyError::NotMisiurewicz(report.verdict))?;
    if !(fit.lambda > 1.0 + margin) {
        return Err(ClassifyError::CertificateFailed {
            lambda: fit.lambda,
            margin,
        });
    }
    Ok(MisiurewiczCertificate {
        fit,
        min_crit_distance: min_crit,
        radius,
        points: count,
    })
}

/// Forbidden region `B_R`: small disks at the critical points inside
/// `D(0, R)` together with the exterior of `D(0, R)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub r: f64,
    pub disk_radius: f64,
    pub centers: Vec<C64>,
}

impl RegionSpec {
    /// Disk radius is `1/R`, shrunk when needed so that the closed disks are
    /// disjoint and lie inside `D(0, R)`.
    pub fn new(fam: &FamilySpec, a: C64, r: f64) -> Self {
        let inv = 1.0 / r;
        let centers = fam.critical_points_in_disk(a, r - inv);
        let mut gap = f64::INFINITY;
        for i in 0..centers.len() {
            for j in i + 1..centers.len() {
                gap = gap.min((centers[i] - centers[j]).norm());
            }
        }
        Self {
            r,
            disk_radius: inv.min(0.45 * gap),
            centers,
        }
    }

    pub fn forbidden(&self, z: C64) -> bool {
        z.norm() >= self.r
            || self
                .centers
                .iter()
                .any(|c| (z - c).norm() < self.disk_radius)
    }
}

/// Whether every retained Julia-side post-singular point avoids `region`.
pub fn is_r_misiurewicz(
    fam: &FamilySpec,
    a: C64,
    report: &ClassificationReport,
    region: &RegionSpec,
) -> Result<bool, ClassifyError> {
    if !report.verdict.is_misiurewicz() {
        return Err(ClassifyError::NotMisiurewicz(report.verdict));
    }
    for info in report
        .per_singular_value
        .iter()
        .filter(|i| i.outcome.julia_side())
    {
        if julia_points(fam, a, info)?
            .into_iter()
            .any(|z| region.forbidden(z))
        {
            return Ok(false);
        }
    }
    Ok(true)
}

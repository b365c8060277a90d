//! Numerical laboratory for the dynamics of Speiser-class entire families.
//!
//! Modules, bottom up: [`numerics`] (complex scalars, log-scale magnitudes,
//! root finding), [`family`] (the registry of one-parameter slices),
//! [`orbit`] (overflow-safe iteration), [`classify`] (parameter verdicts),
//! [`phase_param`] (phase-parameter maps, continuation, growth to scale),
//! [`wiman_valiron`] (tract growth and the escape-return sequence),
//! [`measure`] (Monte-Carlo area) and [`scan`] (parallel rasters,
//! checkpoints, rendering). [`report`] holds the JSON writer.

// `!(x < y)` is deliberate throughout: it keeps NaN on the rejecting side.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod classify;
pub mod family;
pub mod landmarks;
pub mod measure;
pub mod numerics;
pub mod orbit;
pub mod phase_param;
pub mod report;
pub mod scan;
pub mod wiman_valiron;

pub use classify::{classify, ClassificationReport, ClassifyOptions, Outcome, RegionSpec, Verdict};
pub use family::{
    builtin_families, lookup, Family, FamilyKind, FamilySpec, SingularKind, SingularValue,
    TractDescriptor, TractTarget,
};
pub use measure::{estimate_area, MeasureEstimate};
pub use numerics::{LogMagnitude, Rect, RootResult, Tower, C64};
pub use orbit::{CycleInfo, CycleNature, IterateOptions, OrbitRecord, OrbitStatus};
pub use scan::{density_curve, scan, DensityCurve, ScanGrid, ScanMeta};

//! Shared fixtures for the criterion benches.

use speiser_core::{landmarks, FamilySpec, C64};

/// The Misiurewicz-Thurston parameter of `lambda z^2 e^z` used across benches.
pub fn zsq_exp_base() -> (FamilySpec, C64) {
    (
        FamilySpec::zsq_exp(),
        landmarks::zsq_exp_parameter()
            .expect("parameter solve")
            .root,
    )
}

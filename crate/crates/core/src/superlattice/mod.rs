//! Sequential-tunneling model of a weakly coupled superlattice with `N`
//! wells, written as an SDE for the well densities.

mod model;
mod params;

pub use model::{
    covariance_from_currents, current_jacobian, currents, det_a_closed_form, diffusion_from_currents, f_curve,
    f_curve_derivative, fields_from_densities, log_occupation, sl_diffusion, sl_drift, tunneling_currents,
    BistablePair, Superlattice,
};
pub use params::{SlParameterFile, SlParameters, ELEMENTARY_CHARGE, VACUUM_PERMITTIVITY};

/// The superlattice system for the given constants.
pub fn sl_system(params: SlParameters) -> crate::error::Result<Superlattice> {
    Superlattice::new(params)
}

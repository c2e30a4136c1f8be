//! Experiment post-processing: synthetic data, final identification,
//! solution sets and error fields, constructed and random controls,
//! landscape scans, Taylor tables and stability probes.

mod controls;
mod data;
mod geometry;
mod landscape;
mod stability;
mod taylor;

pub use controls::{constructed_control, random_constant_controls, ConstantControlMode};
pub use data::{generate_data, identify, Identification, IdentifyConfig};
pub use geometry::{
    collinearity, error_field, max_abs_error_on_points, pointwise_error, solution_sets, ErrorField,
    SolutionSet, Square,
};
pub use landscape::{fd_hessian_2d, landscape_scan, min_eigenvalue_2x2, Lattice, LandscapeScan};
pub use stability::{stability_probe, RatioStats, StabilityConfig, StabilityReport};
pub use taylor::taylor_error_table;

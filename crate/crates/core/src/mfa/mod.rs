//! Multifractal analysis of simulated densities.
//!
//! * [`holder`]: pointwise exponents by the oscillation method;
//! * [`dimension`]: level sets, box and gauge dimensions, spectra;
//! * [`census`]: exponents predicted from recorded jumps, and tallies of the
//!   jump boxes and events used in the covering arguments;
//! * [`synthetic`]: calibration fields and sets.
//!
//! Hausdorff dimensions are approximated by box counting, an upper bound;
//! the tolerances in the acceptance suite account for this.

pub mod census;
pub mod dimension;
pub mod holder;
pub mod synthetic;

pub use census::{
    ball_radius, box_intensity, event_census, jump_census, jump_exponent_field, poisson_excess,
    pool_event_census, sum_rule, Ball, CensusParams, CensusScope, EventCensus, EventFrequency,
    EventLevel, JumpBox, JumpCensus, JumpExponentConfig, Octave, ResolvedCensusParams,
    SumRuleReport,
};
pub use dimension::{
    box_dimension, coarse_grained_spectrum, empirical_spectrum, gauge_covering_sum, level_sets,
    pool_spectra, GaugeCoveringReport, SpectrumEstimate,
};
pub use holder::{holder_field, pointwise_holder, HolderConfig, HolderField, ScaleLadder};

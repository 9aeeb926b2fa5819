//! The multi-scale progressive probability model.

pub mod gaussian;
pub mod hp;
pub mod mixture;
pub mod nonparam;
pub mod profile;
pub mod rate;
pub mod schedule;

pub use mixture::{init_mixture, MixtureState};
pub use profile::MspProfile;
pub use rate::{estimate_rate, Context, ProbabilityModel, RateEstimate};
pub use schedule::{build_schedule, DecodingUnit, GroupSchedule};

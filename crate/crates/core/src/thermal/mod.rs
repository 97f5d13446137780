//! Converter thermal data: the dataset type, z-score normalization, and a
//! synthetic first-order generator standing in for field measurements.

mod dataset;
pub mod library;
mod profile;

pub(crate) use dataset::subsample_indices;
pub use dataset::{normalize_apply, normalize_fit, split_indices, Dataset, NormStats, FEATURE_NAMES, TARGET_NAME};
pub use library::{default_library, source_profile, target_profiles, SOURCE_SAMPLES, TARGET_SAMPLES};
pub use profile::{generate, load_shift, simulate_targets, DomainProfile, LoadPattern, LossCoeffs, F_REF_HZ};

/// Column indices of the four input features.
pub mod col {
    pub const CURRENT: usize = 0;
    pub const AMBIENT: usize = 1;
    pub const FREQUENCY: usize = 2;
    pub const POWER: usize = 3;
}

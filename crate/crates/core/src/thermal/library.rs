//! Default domain library: one data-rich source installation and four
//! target installations that differ mainly in how they are operated.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use super::profile::{DomainProfile, LoadPattern, LossCoeffs};

pub const SOURCE_SAMPLES: usize = 10_000;
pub const TARGET_SAMPLES: usize = 2_000;

const LOSS: LossCoeffs = LossCoeffs { k1: 0.01, k2: 1.0, k3: 0.002 };

fn base(name: &str, seed: u64) -> DomainProfile {
    DomainProfile {
        name: name.to_string(),
        r_th: 0.1,
        tau: 75.0,
        loss_coeffs: LOSS,
        load_pattern: LoadPattern::Mixed { segment: 240 },
        ambient_range: (5.0, 35.0),
        noise_std: 0.3,
        seed,
        sample_interval: 60.0,
        rated_current: 100.0,
        rated_power_kw: 55.0,
        frequency_range: (10.0, 50.0),
        walk_std: 0.005,
        ambient_period: 1440,
    }
}

pub fn source_profile() -> DomainProfile {
    base("source", 0x5eed_0001)
}

pub fn target_profiles() -> Vec<DomainProfile> {
    let intermittent = DomainProfile {
        load_pattern: LoadPattern::Intermittent { duty: 0.5, period: 240 },
        ambient_range: (15.0, 30.0),
        ..base("intermittent", 0x5eed_0002)
    };
    let partial = DomainProfile {
        load_pattern: LoadPattern::PartialLoad { fraction: 0.4 },
        ambient_range: (10.0, 25.0),
        rated_current: 140.0,
        rated_power_kw: 90.0,
        ..base("partial-load", 0x5eed_0003)
    };
    let hot = DomainProfile {
        load_pattern: LoadPattern::Steady,
        ambient_range: (35.0, 50.0),
        ..base("high-ambient", 0x5eed_0004)
    };
    let fast = DomainProfile {
        load_pattern: LoadPattern::Steady,
        frequency_range: (40.0, 100.0),
        ..base("high-frequency", 0x5eed_0005)
    };
    vec![intermittent, partial, hot, fast]
}

/// Source first, then the targets.
pub fn default_library() -> Vec<DomainProfile> {
    let mut all = vec![source_profile()];
    all.extend(target_profiles());
    all
}

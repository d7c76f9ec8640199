//! Shared inputs for the benchmarks.

use wdn_core::data::{generate_network, Dataset, SynthConfig};

/// A 60-day, five-point synthetic network with the default noise level.
pub fn sixty_days(seed: u64) -> Dataset {
    generate_network(&SynthConfig { seed, ..SynthConfig::default() }).expect("default synthetic config is valid")
}

//! Seeded synthetic traffic: per-URI signatures, cross-platform app families,
//! behavior instances, background traffic and train/test corpora.

pub mod config;
pub mod dataset;
pub mod family;
pub mod generate;
pub mod signature;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{BackgroundConfig, ScenarioConfig, TimingConfig};
pub use dataset::{generate_dataset, merge_test_traces, scenario_trace, scenario_traces, Dataset, Manifest};
pub use family::{app_name, app_specs, behavior_name, make_cross_platform_family, BehaviorSpec, FamilyVariant};
pub use generate::{background_flows, draw_sequence, generate_background, generate_instance, instance_trace};
pub use signature::{distinguishable, make_signature, RunTemplate, SizeDist, UriSignature, GRID_SIZE};

/// Independent RNG stream for `(seed, tags)`.
pub fn stream_rng(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    // splitmix64 finaliser folded over the tags
    let mut h = seed;
    for &t in tags {
        h = h.wrapping_add(t.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    ChaCha8Rng::seed_from_u64(h)
}

//! Canonical URI maps, sequence matching and attribution.

pub mod attribution;
pub mod cum;
pub mod dtw;
pub mod lcs;
pub mod score;

pub use attribution::{attribute_flows, Attribution, Claim};
pub use cum::{
    build_cum, instance_branches, partition_all, partition_shared_private, CanonicalUriMap, InstanceBranches,
    SharedPrivatePartition,
};
pub use dtw::{dtw_distance, dtw_similarity, signed_size_series};
pub use lcs::lcs_match;
pub use score::{
    bag_match_baseline, best_match, best_refined_match, detect_unseen, is_unseen, refine_unseen, score_map,
    MatchResult, DEFAULT_BETA, DEFAULT_LAMBDA, DEFAULT_TAU,
};

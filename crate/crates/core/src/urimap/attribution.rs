use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// One app's claim on a set of flows, with the score backing it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub app: String,
    pub score: f64,
    pub flow_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Attribution {
    /// flow id -> index of the winning claim
    pub owner: BTreeMap<String, usize>,
    /// Claims left holding at least one flow, ascending.
    pub surviving: Vec<usize>,
}

/// Assigns every claimed flow to the claim with the highest score. Ties go to
/// the lexicographically smaller app, then the earlier claim.
pub fn attribute_flows(claims: &[Claim]) -> Attribution {
    let mut owner: BTreeMap<String, usize> = BTreeMap::new();
    for (ci, claim) in claims.iter().enumerate() {
        for f in &claim.flow_ids {
            match owner.get(f) {
                Some(&cur) => {
                    let c = &claims[cur];
                    let wins = claim.score > c.score || (claim.score == c.score && claim.app < c.app);
                    if wins {
                        owner.insert(f.clone(), ci);
                    }
                }
                None => {
                    owner.insert(f.clone(), ci);
                }
            }
        }
    }
    let surviving: BTreeSet<usize> = owner.values().copied().collect();
    Attribution {
        owner,
        surviving: surviving.into_iter().collect(),
    }
}

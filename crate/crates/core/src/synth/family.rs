//! `BehaviorSpec`s for app families across platforms, and the unseen
//! platform / app / version variants derived from them.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ScenarioConfig, TimingConfig};
use super::signature::{cell_of, make_signature, UriSignature, GRID_SIZE};
use super::stream_rng;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorSpec {
    pub app: String,
    pub platform: String,
    pub behavior: String,
    /// Every URI this behavior may invoke, including spurious ones.
    pub signatures: BTreeMap<String, UriSignature>,
    /// Global invocation order; each domain's branch is its subsequence.
    pub canonical_sequence: Vec<String>,
    pub canonical_prob: f64,
    pub variant_sequences: Vec<(Vec<String>, f64)>,
    pub shared_flags: BTreeMap<String, bool>,
    /// URIs of sibling behaviors that may be invoked as noise.
    pub spurious_pool: Vec<String>,
    pub timing: TimingConfig,
}

impl BehaviorSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Error::Config(format!("{}/{}/{}: {m}", self.app, self.platform, self.behavior));
        let total = self.canonical_prob + self.variant_sequences.iter().map(|v| v.1).sum::<f64>();
        if (total - 1.0).abs() > 1e-9 {
            return Err(bad(format!("sequence probabilities sum to {total}")));
        }
        if self
            .variant_sequences
            .iter()
            .any(|v| v.1 > self.canonical_prob || v.1 < 0.0)
        {
            return Err(bad("a variant outweighs the canonical sequence".into()));
        }
        let all = std::iter::once(&self.canonical_sequence)
            .chain(self.variant_sequences.iter().map(|v| &v.0))
            .flatten()
            .chain(&self.spurious_pool);
        for uri in all {
            if !self.signatures.contains_key(uri) {
                return Err(bad(format!("no signature for {uri}")));
            }
        }
        if self.canonical_sequence.is_empty() {
            return Err(bad("empty canonical sequence".into()));
        }
        self.timing.validate()
    }

    /// Per-domain subsequences of `seq`.
    pub fn branches_of(&self, seq: &[String]) -> BTreeMap<String, Vec<String>> {
        let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for uri in seq {
            out.entry(self.signatures[uri].domain.clone())
                .or_default()
                .push(uri.clone());
        }
        out
    }

    pub fn canonical_branches(&self) -> BTreeMap<String, Vec<String>> {
        self.branches_of(&self.canonical_sequence)
    }

    pub fn shared_uris(&self) -> BTreeSet<&str> {
        self.shared_flags
            .iter()
            .filter(|(_, &s)| s)
            .map(|(u, _)| u.as_str())
            .collect()
    }
}

/// Which incarnation of an app family to build.
#[derive(Debug, Clone, PartialEq)]
pub enum FamilyVariant {
    /// One of the configured platforms, by index.
    Known(usize),
    /// A platform absent from training: shared URIs kept, private URIs fresh.
    UnseenPlatform(String),
    /// A later release on a known platform with `fraction` of private URIs
    /// replaced.
    Version { base: usize, fraction: f64 },
    /// A related app reusing the shared URIs (and their domains); private URIs
    /// and their domains are its own.
    Sibling { base: usize },
}

const BEHAVIOR_NAMES: [&str; 10] = [
    "search", "browse", "login", "post", "share", "settings", "upload", "comment", "play", "like",
];

pub fn app_name(i: usize) -> String {
    format!("app{i:02}")
}

pub fn behavior_name(k: usize) -> String {
    let base = BEHAVIOR_NAMES[k % BEHAVIOR_NAMES.len()];
    if k < BEHAVIOR_NAMES.len() {
        base.to_string()
    } else {
        format!("{base}{}", k / BEHAVIOR_NAMES.len())
    }
}

/// Slot identity of a URI within an app: core slots are common to every
/// behavior, the rest belong to one behavior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Key {
    Core(usize),
    Own(usize, usize),
}

impl Key {
    fn label(self) -> String {
        match self {
            Key::Core(j) => format!("c{j}"),
            Key::Own(b, j) => format!("b{b}u{j}"),
        }
    }
}

struct Layout<'a> {
    cfg: &'a ScenarioConfig,
    app_index: usize,
    app: String,
    cells: Vec<usize>,
    shared_keys: Vec<Key>,
    private_keys: Vec<Key>,
}

impl<'a> Layout<'a> {
    fn new(cfg: &'a ScenarioConfig, app_index: usize) -> Self {
        let (n, ks, kc) = (cfg.uris_per_behavior, cfg.n_shared(), cfg.n_core());
        let mut shared_keys = Vec::new();
        let mut private_keys = Vec::new();
        for j in 0..kc.min(n) {
            if j < ks {
                shared_keys.push(Key::Core(j));
            } else {
                private_keys.push(Key::Core(j));
            }
        }
        for b in 0..cfg.behaviors_per_app {
            for j in kc.min(n)..n {
                if j < ks {
                    shared_keys.push(Key::Own(b, j));
                } else {
                    private_keys.push(Key::Own(b, j));
                }
            }
        }
        let mut cells: Vec<usize> = (0..GRID_SIZE).collect();
        cells.shuffle(&mut stream_rng(cfg.seed, &[1, app_index as u64]));
        Self {
            cfg,
            app_index,
            app: app_name(app_index),
            cells,
            shared_keys,
            private_keys,
        }
    }

    fn key(&self, b: usize, j: usize) -> Key {
        if j < self.cfg.n_core() {
            Key::Core(j)
        } else {
            Key::Own(b, j)
        }
    }

    fn is_shared(&self, j: usize) -> bool {
        j < self.cfg.n_shared()
    }

    fn domain(&self, app: &str, j: usize) -> String {
        format!("s{}.{app}.example", j % self.cfg.domains_per_app)
    }

    /// Cell for a private key in private block `block`; shared keys use the
    /// leading cells.
    fn cell(&self, key: Key, block: Option<usize>) -> Result<(usize, usize, usize)> {
        let idx = match block {
            None => self.shared_keys.iter().position(|k| *k == key).expect("shared key"),
            Some(bl) => {
                self.shared_keys.len()
                    + bl * self.private_keys.len()
                    + self.private_keys.iter().position(|k| *k == key).expect("private key")
            }
        };
        if idx >= GRID_SIZE {
            return Err(Error::Config(format!(
                "{} needs more than {GRID_SIZE} distinguishable signatures",
                self.app
            )));
        }
        Ok(cell_of(self.cells[idx]))
    }

    /// Slot order for behavior `b`: shared slots in one platform-independent
    /// order, private slots inserted at positions drawn per `position_slot`.
    fn slot_order(&self, b: usize, position_slot: usize) -> Vec<usize> {
        let n = self.cfg.uris_per_behavior;
        let mut order: Vec<usize> = (0..n).filter(|&j| self.is_shared(j)).collect();
        order.shuffle(&mut stream_rng(self.cfg.seed, &[2, self.app_index as u64, b as u64]));
        let mut rng = stream_rng(
            self.cfg.seed,
            &[3, self.app_index as u64, b as u64, position_slot as u64],
        );
        let own_private: Vec<usize> = (self.cfg.n_core().max(self.cfg.n_shared())..n).collect();
        let dropped = (b * self.cfg.private_taper).min(own_private.len().saturating_sub(1));
        let cut = own_private.get(own_private.len() - dropped).copied().unwrap_or(n);
        for j in (0..n).filter(|&j| !self.is_shared(j) && j < cut) {
            let pos = rng.random_range(0..=order.len());
            order.insert(pos, j);
        }
        order
    }
}

fn variants(canonical: &[String], canonical_prob: f64, rng: &mut ChaCha8Rng) -> Vec<(Vec<String>, f64)> {
    let n = canonical.len();
    if n < 2 || canonical_prob >= 1.0 {
        return Vec::new();
    }
    let rest = 1.0 - canonical_prob;
    let mut drops: Vec<usize> = (0..n).collect();
    drops.shuffle(rng);
    let mut out = Vec::new();
    for (i, share) in [(drops[0], 10.0 / 24.0), (drops[1], 7.0 / 24.0)] {
        let mut v = canonical.to_vec();
        v.remove(i);
        out.push((v, rest * share));
    }
    let mut swaps: Vec<usize> = (0..n - 1).collect();
    swaps.shuffle(rng);
    swaps.truncate(3);
    let each = rest * (7.0 / 24.0) / swaps.len() as f64;
    for i in swaps {
        let mut v = canonical.to_vec();
        v.swap(i, i + 1);
        out.push((v, each));
    }
    out
}

/// Specs for every behavior of one app under `variant`.
pub fn app_specs(cfg: &ScenarioConfig, app_index: usize, variant: &FamilyVariant) -> Result<Vec<BehaviorSpec>> {
    cfg.validate()?;
    if app_index >= cfg.apps {
        return Err(Error::Config(format!("app index {app_index} out of range")));
    }
    let layout = Layout::new(cfg, app_index);
    let n_platforms = cfg.platforms.len();
    let (app, platform, position_slot, block) = match variant {
        FamilyVariant::Known(p) => {
            let name = cfg
                .platforms
                .get(*p)
                .ok_or_else(|| Error::Config(format!("platform index {p} out of range")))?;
            (layout.app.clone(), name.clone(), *p, *p)
        }
        FamilyVariant::UnseenPlatform(name) => {
            if cfg.platforms.contains(name) {
                return Err(Error::Config(format!("platform {name} is not unseen")));
            }
            (layout.app.clone(), name.clone(), n_platforms, n_platforms)
        }
        FamilyVariant::Version { base, fraction } => {
            if !(0.0..=1.0).contains(fraction) {
                return Err(Error::Config("version fraction must lie in [0, 1]".into()));
            }
            let name = cfg
                .platforms
                .get(*base)
                .ok_or_else(|| Error::Config(format!("platform index {base} out of range")))?;
            (layout.app.clone(), name.clone(), *base, *base)
        }
        FamilyVariant::Sibling { base } => {
            let name = cfg
                .platforms
                .get(*base)
                .ok_or_else(|| Error::Config(format!("platform index {base} out of range")))?;
            (format!("{}-sib", layout.app), name.clone(), *base, *base)
        }
    };

    // Private keys replaced in a version bump.
    let replaced: BTreeSet<Key> = match variant {
        FamilyVariant::Version { fraction, .. } => {
            let k = (fraction * layout.private_keys.len() as f64).round() as usize;
            let mut rng = stream_rng(cfg.seed, &[4, app_index as u64]);
            layout.private_keys.choose_multiple(&mut rng, k).copied().collect()
        }
        _ => BTreeSet::new(),
    };

    let signature_for = |b: usize, j: usize| -> Result<UriSignature> {
        let key = layout.key(b, j);
        let gaps = cfg.timing.intra_gap;
        if layout.is_shared(j) {
            let uri = format!("/{}/{}", layout.app, key.label());
            return Ok(make_signature(
                &uri,
                &layout.domain(&layout.app, j),
                layout.cell(key, None)?,
                gaps,
            ));
        }
        let (uri, domain, blk) = match variant {
            FamilyVariant::Version { .. } if replaced.contains(&key) => (
                format!("/{}/{platform}/v2/{}", layout.app, key.label()),
                layout.domain(&layout.app, j),
                n_platforms + 1,
            ),
            FamilyVariant::Sibling { .. } => (
                format!("/{app}/{}", key.label()),
                layout.domain(&app, j),
                n_platforms + 2,
            ),
            _ => (
                format!("/{}/{platform}/{}", layout.app, key.label()),
                layout.domain(&layout.app, j),
                block,
            ),
        };
        Ok(make_signature(&uri, &domain, layout.cell(key, Some(blk))?, gaps))
    };

    let mut specs = Vec::with_capacity(cfg.behaviors_per_app);
    for b in 0..cfg.behaviors_per_app {
        let mut signatures = BTreeMap::new();
        let mut shared_flags = BTreeMap::new();
        let mut canonical = Vec::new();
        for j in layout.slot_order(b, position_slot) {
            let sig = signature_for(b, j)?;
            shared_flags.insert(sig.uri.clone(), layout.is_shared(j));
            canonical.push(sig.uri.clone());
            signatures.insert(sig.uri.clone(), sig);
        }
        let mut rng = stream_rng(cfg.seed, &[5, app_index as u64, b as u64]);
        let variant_sequences = variants(&canonical, cfg.canonical_prob, &mut rng);
        let canonical_prob = if variant_sequences.is_empty() {
            1.0
        } else {
            cfg.canonical_prob
        };
        specs.push(BehaviorSpec {
            app: app.clone(),
            platform: platform.clone(),
            behavior: behavior_name(b),
            signatures,
            canonical_sequence: canonical,
            canonical_prob,
            variant_sequences,
            shared_flags,
            spurious_pool: Vec::new(),
            timing: cfg.timing.clone(),
        });
    }

    // Spurious invocations come from sibling behaviors of the same build.
    let all: Vec<(String, UriSignature)> = specs
        .iter()
        .flat_map(|s| s.signatures.iter().map(|(u, g)| (u.clone(), g.clone())))
        .collect();
    for spec in &mut specs {
        let mut pool = BTreeSet::new();
        for (uri, sig) in &all {
            if !spec.signatures.contains_key(uri) {
                pool.insert(uri.clone());
                spec.signatures.insert(uri.clone(), sig.clone());
            } else if !spec.canonical_sequence.contains(uri) {
                pool.insert(uri.clone());
            }
        }
        spec.spurious_pool = pool.into_iter().collect();
    }
    for s in &specs {
        s.validate()?;
    }
    Ok(specs)
}

/// Specs for every app, known platform and behavior.
pub fn make_cross_platform_family(cfg: &ScenarioConfig) -> Result<Vec<BehaviorSpec>> {
    let mut out = Vec::new();
    for a in 0..cfg.apps {
        for p in 0..cfg.platforms.len() {
            out.extend(app_specs(cfg, a, &FamilyVariant::Known(p))?);
        }
    }
    Ok(out)
}

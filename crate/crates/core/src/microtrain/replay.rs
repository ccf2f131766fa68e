//! Synthetic training data keyed by a mined pair manifest.
//!
//! Detections linked by mined pairs (transitively) are treated as one
//! identity. Each identity gets a prototype and each detection a fixed noisy
//! view of it, so every mined pair becomes a training pair between two views.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::synth::{derive_seed, gaussian, unit_prototypes, PairDataset, PairMode, SynthConfig, SynthData, ViewPair};
use crate::error::{Error, Result};
use crate::trapstream::{DetectionKey, PairManifest};

fn key_stream(key: &DetectionKey) -> u64 {
    let mut h = Sha256::new();
    h.update(key.frame_id.as_bytes());
    h.update([0]);
    h.update((key.det_index as u64).to_le_bytes());
    let bytes = h.finalize();
    u64::from_le_bytes(bytes[..8].try_into().expect("32-byte digest"))
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Identity of every detection key: connected components of the pair
/// graph, numbered by their smallest key.
pub fn manifest_identities(manifest: &PairManifest) -> BTreeMap<DetectionKey, usize> {
    let mut index: BTreeMap<DetectionKey, usize> = BTreeMap::new();
    for p in &manifest.pairs {
        index.entry(p.anchor.clone()).or_default();
        index.entry(p.partner.clone()).or_default();
    }
    for (i, v) in index.values_mut().enumerate() {
        *v = i;
    }
    let mut parent: Vec<usize> = (0..index.len()).collect();
    for p in &manifest.pairs {
        let a = find(&mut parent, index[&p.anchor]);
        let b = find(&mut parent, index[&p.partner]);
        parent[a.max(b)] = a.min(b);
    }
    let mut ids: BTreeMap<usize, usize> = BTreeMap::new();
    let mut out = BTreeMap::new();
    for (key, &i) in &index {
        let root = find(&mut parent, i);
        let next = ids.len();
        out.insert(key.clone(), *ids.entry(root).or_insert(next));
    }
    out
}

/// Training data whose pairs are the manifest's pairs. `num_identities` and
/// `views_per_identity` of `cfg` are replaced by what the manifest implies;
/// `drift_sigma` is unused since the two views of a pair are independent
/// detections.
pub fn replay_manifest(manifest: &PairManifest, cfg: &SynthConfig) -> Result<SynthData> {
    if manifest.pairs.is_empty() {
        return Err(Error::Precondition("manifest has no pairs to replay".into()));
    }
    let identities = manifest_identities(manifest);
    let num_identities = identities.values().max().map_or(0, |m| m + 1);
    let config = SynthConfig {
        num_identities,
        views_per_identity: manifest.pairs.len().div_ceil(num_identities),
        ..*cfg
    };
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let prototypes = unit_prototypes(&mut rng, num_identities, cfg.input_dim);
    let view = |key: &DetectionKey| -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, key_stream(key)));
        prototypes
            .row(identities[key])
            .iter()
            .map(|&p| p + gaussian(&mut rng, cfg.view_noise_sigma))
            .collect()
    };
    let pairs = manifest
        .pairs
        .iter()
        .map(|p| ViewPair {
            view_a: view(&p.anchor),
            view_b: view(&p.partner),
            identity: identities[&p.anchor],
        })
        .collect();
    let pairs = PairDataset::new(pairs, PairMode::Temporal)?;
    Ok(SynthData {
        labels: pairs.labels(),
        pairs,
        prototypes,
        config,
    })
}

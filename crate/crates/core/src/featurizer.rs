//! Seeded signed feature hashing for entity, relation and label text.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub dim: usize,
    pub seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { dim: 256, seed: 0 }
    }
}

impl FeatureConfig {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        let cfg = FeatureConfig { dim, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::validation("feature dim", "must be at least 2"));
        }
        Ok(())
    }

    /// Closure form for [`crate::kg::build_graph`].
    pub fn featurizer(&self) -> impl Fn(&str) -> Vec<f64> + '_ {
        move |text| embed_text(text, self)
    }
}

/// Lowercased alphanumeric runs.
pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// FNV-1a over the bytes, keyed by the seed and finished with a splitmix round.
pub fn seeded_hash(bytes: &[u8], seed: u64) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = 0xcbf2_9ce4_8422_2325 ^ splitmix64(seed);
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    splitmix64(h)
}

/// Bag-of-tokens signed hash embedding, L2-normalized. Text without tokens
/// maps to the zero vector.
///
/// If the signed counts cancel out exactly, unsigned counts are used so that
/// every text with at least one token still has unit norm.
pub fn embed_text(text: &str, cfg: &FeatureConfig) -> Vec<f64> {
    let mut signed = vec![0.0; cfg.dim];
    let mut counts = vec![0.0; cfg.dim];
    for tok in tokens(text) {
        let h = seeded_hash(tok.as_bytes(), cfg.seed);
        let idx = (h % cfg.dim as u64) as usize;
        // The low bits pick the index; the top bit picks the sign.
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        signed[idx] += sign;
        counts[idx] += 1.0;
    }
    let mut v = if signed.iter().any(|&x| x != 0.0) { signed } else { counts };
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> FeatureConfig {
        FeatureConfig::new(64, 11).unwrap()
    }

    #[test]
    fn empty_is_zero() {
        assert!(embed_text("", &cfg()).iter().all(|&x| x == 0.0));
        assert!(embed_text(" ,;. ", &cfg()).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn bag_of_tokens() {
        assert_eq!(embed_text("alpha beta", &cfg()), embed_text("beta  ALPHA", &cfg()));
        assert_eq!(embed_text("x y", &cfg()), embed_text("x y", &cfg()));
    }

    #[test]
    fn seed_changes_output() {
        let a = FeatureConfig::new(64, 1).unwrap();
        let b = FeatureConfig::new(64, 2).unwrap();
        let probes = ["paris", "capital of france", "support"];
        assert!(probes.iter().any(|p| embed_text(p, &a) != embed_text(p, &b)));
    }

    #[test]
    fn cancelling_tokens_keep_unit_norm() {
        // Find two tokens that land on the same slot with opposite signs.
        let c = FeatureConfig::new(2, 5).unwrap();
        let slot = |t: &str| {
            let h = seeded_hash(t.as_bytes(), c.seed);
            (h % 2, h >> 63)
        };
        let words: Vec<String> = (0..200).map(|i| format!("w{i}")).collect();
        let (a, b) = words
            .iter()
            .flat_map(|a| words.iter().map(move |b| (a, b)))
            .find(|(a, b)| {
                let (ia, sa) = slot(a);
                let (ib, sb) = slot(b);
                ia == ib && sa != sb
            })
            .unwrap();
        let v = embed_text(&format!("{a} {b}"), &c);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_tiny_dim() {
        assert!(FeatureConfig::new(1, 0).is_err());
    }

    proptest! {
        #[test]
        fn unit_norm_and_finite(words in proptest::collection::vec("[a-zA-Z0-9]{1,8}", 1..12)) {
            let text = words.join(" ");
            let v = embed_text(&text, &cfg());
            prop_assert!(v.iter().all(|x| x.is_finite()));
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-6);
        }

        #[test]
        fn order_invariant(mut words in proptest::collection::vec("[a-z]{1,6}", 1..10), seed in any::<u64>()) {
            let c = FeatureConfig::new(32, seed).unwrap();
            let before = embed_text(&words.join(" "), &c);
            words.reverse();
            prop_assert_eq!(before, embed_text(&words.join(" "), &c));
        }
    }
}

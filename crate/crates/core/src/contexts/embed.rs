use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::numcore::mix;

/// Deterministic bag-of-words paragraph embedder used when no pretrained
/// embeddings are supplied: each token maps to a standard-normal vector seeded
/// by a hash of the token, and a paragraph is the mean of its token vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl HashedEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim >= 1, "embedding dimension must be positive");
        Self { dim, seed }
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(fnv1a(token.as_bytes()) ^ mix(self.seed)));
        (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    /// Mean token vector. An empty paragraph gives the zero vector and `false`.
    pub fn embed(&self, tokens: &[String]) -> (Vec<f64>, bool) {
        let mut acc = vec![0.0; self.dim];
        if tokens.is_empty() {
            return (acc, false);
        }
        for t in tokens {
            for (a, v) in acc.iter_mut().zip(self.token_vector(t)) {
                *a += v;
            }
        }
        let n = tokens.len() as f64;
        for a in &mut acc {
            *a /= n;
        }
        (acc, true)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Tensor;
use crate::rng::{rng_from_key, stream_key};

/// Rate at which captions are dropped when generating training pairs.
pub const TEXT_DROP_RATE: f64 = 0.2;

/// Caption embedded by a fixed hash-then-project map: each lower-cased word
/// seeds a Gaussian vector. Row 0 of [`TextCondition::tokens`] is an
/// all-zero null token that is always present.
#[derive(Clone, Debug, PartialEq)]
pub struct TextCondition {
    pub caption: String,
    pub dropped: bool,
    dim: usize,
    words: Vec<Vec<f64>>,
}

impl TextCondition {
    pub fn new(caption: &str, dim: usize, max_tokens: usize) -> Self {
        let words = caption
            .split_whitespace()
            .take(max_tokens)
            .map(|w| {
                let mut rng = rng_from_key(stream_key(0, 0, &format!("text/{}", w.to_lowercase())));
                let s = 1.0 / (dim as f64).sqrt();
                (0..dim)
                    .map(|_| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        s * e
                    })
                    .collect::<Vec<f64>>()
            })
            .collect();
        Self {
            caption: caption.to_string(),
            dropped: false,
            dim,
            words,
        }
    }

    pub fn empty(dim: usize) -> Self {
        Self::new("", dim, 0)
    }

    pub fn with_drop(mut self, dropped: bool) -> Self {
        self.dropped = dropped;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Mean word vector; zero for an empty or dropped caption.
    pub fn embedding(&self) -> Vec<f64> {
        let mut e = vec![0.0; self.dim];
        if self.dropped || self.words.is_empty() {
            return e;
        }
        for w in &self.words {
            e.iter_mut().zip(w).for_each(|(a, b)| *a += b);
        }
        let n = self.words.len() as f64;
        e.iter_mut().for_each(|a| *a /= n);
        e
    }

    /// Key/value rows for cross-attention.
    pub fn tokens(&self) -> Tensor {
        let mut data = vec![0.0; self.dim];
        if !self.dropped {
            for w in &self.words {
                data.extend_from_slice(w);
            }
        }
        Tensor::new(data.len() / self.dim, self.dim, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_caption_same_embedding_and_drop_is_empty() {
        let a = TextCondition::new("a red cube", 16, 8);
        let b = TextCondition::new("a red cube", 16, 8);
        assert_eq!(a.embedding(), b.embedding());
        assert_ne!(a.embedding(), TextCondition::new("a blue cube", 16, 8).embedding());
        assert_eq!(a.clone().with_drop(true).tokens(), TextCondition::empty(16).tokens());
        assert_eq!(a.tokens().rows, 4);
    }
}

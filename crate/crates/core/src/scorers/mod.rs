//! Contextual scoring models.
//!
//! Two backends live here: a discriminative coherence classifier and three
//! conditional n-gram models, one per generative arrangement (center given
//! contexts, left given the rest, right given the rest). The [ContextScorer]
//! trait is the contract the rest of the system scores through, so heavier
//! models can be swapped in behind it.

pub mod coherence;
pub mod ngram;

pub use coherence::{
    build_training_set, make_negatives, train_coherence, CoherenceConfig, CoherenceExample,
    CoherenceModel, NegativeSource,
};
pub use ngram::{arranged_stream, train_lm, Arrangement, ConditionalLm};

use crate::corpus::{ContextWindow, Corpus, Sentence};
use crate::error::Result;

/// Scoring contract for a candidate sentence placed in the center slot of a
/// context window.
pub trait ContextScorer {
    /// Probability the candidate coheres with the window's contexts.
    fn coherence_prob(&self, window: &ContextWindow, candidate: &Sentence) -> Result<f64>;
    /// Normalized log probability of the candidate given both contexts.
    fn gen_center(&self, window: &ContextWindow, candidate: &Sentence) -> f64;
    /// Normalized log probability of the left context given candidate and right.
    fn gen_left(&self, window: &ContextWindow, candidate: &Sentence) -> f64;
    /// Normalized log probability of the right context given left and candidate.
    fn gen_right(&self, window: &ContextWindow, candidate: &Sentence) -> f64;
}

/// Model bundle config: classifier settings plus the shared n-gram settings.
#[derive(Debug, Clone, Copy)]
pub struct ScorerConfig {
    pub coherence: CoherenceConfig,
    pub lm_order: usize,
    pub lm_add_k: f64,
}

impl Default for ScorerConfig {
    fn default() -> ScorerConfig {
        ScorerConfig { coherence: CoherenceConfig::default(), lm_order: 3, lm_add_k: 0.1 }
    }
}

/// The trained classifier and the three arrangement models together.
#[derive(Debug, Clone)]
pub struct Scorers {
    pub coherence: CoherenceModel,
    pub center_lm: ConditionalLm,
    pub left_lm: ConditionalLm,
    pub right_lm: ConditionalLm,
}

impl Scorers {
    /// Trains all four models over the same windows.
    pub fn train(
        corpus: &Corpus,
        windows: &[ContextWindow],
        config: &ScorerConfig,
    ) -> Result<Scorers> {
        let examples = build_training_set(corpus, windows, config.coherence.seed);
        let coherence = train_coherence(&examples, corpus.vocab.len(), &config.coherence)?;
        let v = corpus.vocab.len();
        Ok(Scorers {
            coherence,
            center_lm: train_lm(windows, Arrangement::Center, config.lm_order, config.lm_add_k, v),
            left_lm: train_lm(windows, Arrangement::Left, config.lm_order, config.lm_add_k, v),
            right_lm: train_lm(windows, Arrangement::Right, config.lm_order, config.lm_add_k, v),
        })
    }
}

impl ContextScorer for Scorers {
    fn coherence_prob(&self, window: &ContextWindow, candidate: &Sentence) -> Result<f64> {
        self.coherence.coherence_prob(
            &window.left_tokens(),
            &candidate.tokens,
            &window.right_tokens(),
        )
    }

    fn gen_center(&self, window: &ContextWindow, candidate: &Sentence) -> f64 {
        let cond =
            self.center_lm.join_condition(&window.left_tokens(), &window.right_tokens());
        self.center_lm.log_prob(&candidate.tokens, &cond)
    }

    fn gen_left(&self, window: &ContextWindow, candidate: &Sentence) -> f64 {
        let cond = self.left_lm.join_condition(&candidate.tokens, &window.right_tokens());
        self.left_lm.log_prob(&window.left_tokens(), &cond)
    }

    fn gen_right(&self, window: &ContextWindow, candidate: &Sentence) -> f64 {
        let cond = self.right_lm.join_condition(&window.left_tokens(), &candidate.tokens);
        self.right_lm.log_prob(&window.right_tokens(), &cond)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::extract_all_windows;
    use crate::util::derived_rng;
    use rand::Rng;

    fn repetitive_corpus() -> Corpus {
        // Phrase-level repetition gives the n-gram models something to
        // learn; the fixed sentence order inside each document keeps the
        // directional statistics asymmetric.
        let mut docs = Vec::new();
        for i in 0..12 {
            let a = ["red", "blue", "green"][i % 3];
            let b = ["fox", "crow", "hare"][i % 3];
            docs.push(format!(
                "The {a} {b} runs fast. The {a} {b} naps today. The {a} {b} eats well. \
                 The {a} {b} hides now. The {a} {b} sings loud."
            ));
        }
        Corpus::ingest(&docs, 1).unwrap()
    }

    #[test]
    fn untrained_bundle_scores_uniform_everywhere() {
        let corpus = repetitive_corpus();
        let windows = extract_all_windows(&corpus, 1, 1);
        let v = corpus.vocab.len();
        let bundle = Scorers {
            coherence: CoherenceModel::zeroed(v, 4),
            center_lm: ConditionalLm::new(3, 0.1, v),
            left_lm: ConditionalLm::new(3, 0.1, v),
            right_lm: ConditionalLm::new(3, 0.1, v),
        };
        let expected = (1.0 / v as f64).ln();
        let w = &windows[0];
        let candidate = &w.center;
        assert!((bundle.gen_center(w, candidate) - expected).abs() < 1e-12);
        assert!((bundle.gen_left(w, candidate) - expected).abs() < 1e-12);
        assert!((bundle.gen_right(w, candidate) - expected).abs() < 1e-12);
        assert_eq!(bundle.coherence_prob(w, candidate).unwrap(), 0.5);
    }

    #[test]
    fn original_center_outscores_noise_on_most_windows() {
        let corpus = repetitive_corpus();
        let windows = extract_all_windows(&corpus, 1, 1);
        let bundle = Scorers::train(&corpus, &windows, &ScorerConfig::default()).unwrap();
        let v = corpus.vocab.len() as u32;
        let mut rng = derived_rng(99, 1);
        let mut wins = 0;
        for w in &windows {
            let noise_tokens: Vec<u32> =
                (0..w.center.tokens.len()).map(|_| rng.random_range(4..v)).collect();
            let noise = Sentence { id: u32::MAX, tokens: noise_tokens, raw: String::new() };
            if bundle.gen_center(w, &w.center) >= bundle.gen_center(w, &noise) {
                wins += 1;
            }
        }
        let rate = wins as f64 / windows.len() as f64;
        assert!(rate >= 0.9, "original center won only {rate}");
    }

    #[test]
    fn swapping_contexts_changes_directional_scores() {
        let corpus = repetitive_corpus();
        let windows = extract_all_windows(&corpus, 1, 1);
        let bundle = Scorers::train(&corpus, &windows, &ScorerConfig::default()).unwrap();
        let w = &windows[0];
        assert_ne!(w.left_tokens(), w.right_tokens(), "fixture must not be palindromic");
        let mut swapped = w.clone();
        std::mem::swap(&mut swapped.left, &mut swapped.right);
        assert_ne!(bundle.gen_left(w, &w.center), bundle.gen_left(&swapped, &w.center));
        assert_ne!(bundle.gen_right(w, &w.center), bundle.gen_right(&swapped, &w.center));
    }
}

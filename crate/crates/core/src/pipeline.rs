//! The assembled similarity pipeline: corpus, windows, retrieval index,
//! trained scorers, and a cache of built context sets.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rayon::prelude::*;

use crate::contextset::{
    build_context_set, select_random, ContextSet, SelectionConfig, SelectionStrategy,
};
use crate::corpus::{ContextWindow, Corpus, Sentence};
use crate::error::{Error, Result};
use crate::origin::ScoreWeights;
use crate::retrieval::TfIdfIndex;
use crate::scorers::Scorers;

/// Everything needed to score sentence pairs. Context sets are cached by
/// token sequence, so repeated sentences (and both sides of a self-pair) hit
/// the same set.
pub struct OriginPipeline {
    corpus: Corpus,
    windows: Vec<ContextWindow>,
    index: TfIdfIndex,
    scorers: Scorers,
    weights: ScoreWeights,
    selection: SelectionConfig,
    strategy: SelectionStrategy,
    seed: u64,
    sets: RwLock<HashMap<Vec<u32>, Arc<ContextSet>>>,
}

impl OriginPipeline {
    pub fn new(
        corpus: Corpus,
        windows: Vec<ContextWindow>,
        index: TfIdfIndex,
        scorers: Scorers,
        weights: ScoreWeights,
        selection: SelectionConfig,
        strategy: SelectionStrategy,
        seed: u64,
    ) -> Result<OriginPipeline> {
        weights.validate()?;
        selection.validate()?;
        Ok(OriginPipeline {
            corpus,
            windows,
            index,
            scorers,
            weights,
            selection,
            strategy,
            seed,
            sets: RwLock::new(HashMap::new()),
        })
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn windows(&self) -> &[ContextWindow] {
        &self.windows
    }

    pub fn index(&self) -> &TfIdfIndex {
        &self.index
    }

    pub fn scorers(&self) -> &Scorers {
        &self.scorers
    }

    pub fn weights(&self) -> &ScoreWeights {
        &self.weights
    }

    pub fn selection(&self) -> &SelectionConfig {
        &self.selection
    }

    pub fn strategy(&self) -> SelectionStrategy {
        self.strategy
    }

    pub fn window(&self, chunk_id: u32) -> &ContextWindow {
        &self.windows[chunk_id as usize]
    }

    /// Tokenizes external text into a scoreable sentence. The id marks it as
    /// outside the corpus.
    pub fn sentence_from_text(&self, text: &str) -> Sentence {
        Sentence {
            id: u32::MAX,
            tokens: crate::corpus::tokenize(text, &self.corpus.vocab),
            raw: text.to_string(),
        }
    }

    /// The context set for a sentence, built on first use and cached by its
    /// token sequence. Empty retrieval falls back to random contexts with a
    /// warning; the returned set is flagged.
    pub fn context_set(&self, s: &Sentence) -> Result<Arc<ContextSet>> {
        if let Some(hit) = self.sets.read().expect("cache lock").get(&s.tokens) {
            return Ok(Arc::clone(hit));
        }
        let built = Arc::new(self.build_set(s)?);
        let mut cache = self.sets.write().expect("cache lock");
        // a racing builder may have inserted first; keep the earlier value
        let entry = cache.entry(s.tokens.clone()).or_insert(built);
        Ok(Arc::clone(entry))
    }

    fn build_set(&self, s: &Sentence) -> Result<ContextSet> {
        match build_context_set(
            s,
            &self.index,
            &self.windows,
            &self.scorers,
            &self.weights,
            &self.selection,
            self.strategy,
            self.seed,
        ) {
            Err(Error::NoCandidates) => {
                log::warn!(
                    "retrieval found no candidates for {:?}; falling back to random contexts",
                    s.raw
                );
                select_random(
                    &self.scorers,
                    &self.weights,
                    s,
                    &self.windows,
                    &self.selection,
                    self.seed,
                    true,
                )
            }
            other => other,
        }
    }

    /// Builds and caches context sets for many sentences in parallel.
    pub fn warm(&self, sentences: &[Sentence]) -> Result<usize> {
        let mut missing: Vec<&Sentence> = Vec::new();
        {
            let cache = self.sets.read().expect("cache lock");
            let mut seen: HashMap<&[u32], ()> = HashMap::new();
            for s in sentences {
                if !cache.contains_key(&s.tokens) && seen.insert(&s.tokens, ()).is_none() {
                    missing.push(s);
                }
            }
        }
        let built: Vec<(Vec<u32>, ContextSet)> = missing
            .par_iter()
            .map(|s| self.build_set(s).map(|set| (s.tokens.clone(), set)))
            .collect::<Result<_>>()?;
        let n = built.len();
        let mut cache = self.sets.write().expect("cache lock");
        for (key, set) in built {
            cache.entry(key).or_insert_with(|| Arc::new(set));
        }
        Ok(n)
    }

    /// Number of cached fallback sets, for run metadata.
    pub fn fallback_count(&self) -> usize {
        self.sets.read().expect("cache lock").values().filter(|s| s.fallback).count()
    }

    pub fn origin_similarity(&self, s1: &Sentence, s2: &Sentence) -> Result<f64> {
        crate::origin::origin_similarity(self, s1, s2)
    }

    /// Similarity of two raw texts against this pipeline's corpus.
    pub fn similarity_of_texts(&self, text1: &str, text2: &str) -> Result<f64> {
        let s1 = self.sentence_from_text(text1);
        let s2 = self.sentence_from_text(text2);
        self.origin_similarity(&s1, &s2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::extract_all_windows;
    use crate::scorers::ScorerConfig;

    fn pipeline() -> OriginPipeline {
        let mut docs = Vec::new();
        for i in 0..12 {
            let a = ["ox", "elk", "ram", "boar"][i % 4];
            let b = ["digs", "naps", "roams", "grazes"][i % 4];
            docs.push(format!(
                "The {a} {b} at dawn. A {a} {b} wanders far. Some {a} {b} stays close. \
                 Every {a} {b} sleeps soon. That {a} {b} waits there."
            ));
        }
        let corpus = Corpus::ingest(&docs, 1).unwrap();
        let windows = extract_all_windows(&corpus, 1, 1);
        let index = TfIdfIndex::build(&windows, 1, 1);
        let scorers = Scorers::train(&corpus, &windows, &ScorerConfig::default()).unwrap();
        OriginPipeline::new(
            corpus,
            windows,
            index,
            scorers,
            ScoreWeights::default(),
            SelectionConfig::for_target(5),
            SelectionStrategy::TwoStep,
            7,
        )
        .unwrap()
    }

    #[test]
    fn self_similarity_is_one() {
        let p = pipeline();
        for sid in [0u32, 13, 31] {
            let s = p.corpus().sentence(sid).unwrap().clone();
            let sim = p.origin_similarity(&s, &s).unwrap();
            assert!((sim - 1.0).abs() < 1e-12, "self similarity {sim}");
        }
        let external = "The ox digs at dusk.";
        let sim = p.similarity_of_texts(external, external).unwrap();
        assert!((sim - 1.0).abs() < 1e-12);
    }

    #[test]
    fn similarity_is_exactly_symmetric() {
        let p = pipeline();
        let pairs = [(0u32, 6u32), (3, 28), (10, 45), (7, 7)];
        for (a, b) in pairs {
            let sa = p.corpus().sentence(a).unwrap().clone();
            let sb = p.corpus().sentence(b).unwrap().clone();
            let ab = p.origin_similarity(&sa, &sb).unwrap();
            let ba = p.origin_similarity(&sb, &sa).unwrap();
            assert_eq!(ab.to_bits(), ba.to_bits(), "asymmetry on pair ({a},{b})");
            assert!((-1.0..=1.0).contains(&ab));
        }
    }

    #[test]
    fn cache_returns_the_same_set_for_equal_tokens() {
        let p = pipeline();
        let s = p.corpus().sentence(5).unwrap().clone();
        let twin = Sentence { id: 999, tokens: s.tokens.clone(), raw: s.raw.clone() };
        let set1 = p.context_set(&s).unwrap();
        let set2 = p.context_set(&twin).unwrap();
        assert!(Arc::ptr_eq(&set1, &set2));
    }

    #[test]
    fn warming_matches_on_demand_builds() {
        let p = pipeline();
        let q = pipeline();
        let sentences: Vec<Sentence> =
            (0..10u32).map(|i| p.corpus().sentence(i).unwrap().clone()).collect();
        let built = p.warm(&sentences).unwrap();
        assert!(built > 0);
        for s in &sentences {
            let warmed = p.context_set(s).unwrap();
            let direct = q.context_set(s).unwrap();
            assert_eq!(*warmed, *direct);
        }
    }

    #[test]
    fn degenerate_query_falls_back_to_flagged_random_set() {
        let p = pipeline();
        let lonely = Sentence {
            id: u32::MAX,
            tokens: vec![p.corpus().vocab.id("ox").unwrap()],
            raw: "ox".into(),
        };
        let set = p.context_set(&lonely).unwrap();
        assert!(set.fallback);
        assert_eq!(set.len(), 5);
        assert_eq!(p.fallback_count(), 1);
    }
}

//! Context set construction: retrieval screening, discriminative ranking,
//! and greedy diversity-constrained selection.
//!
//! The two-step strategy screens candidates with the TF-IDF index, keeps the
//! best few by coherence, scores those with the full fitting score, and then
//! accepts them greedily subject to two rules: a chunk may contribute at most
//! one context, and the last left-context sentence of an accepted context may
//! not overlap too much with that of any earlier pick.

use std::collections::HashSet;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{ContextWindow, Sentence};
use crate::error::{Error, Result};
use crate::origin::{context_score, ScoreWeights};
use crate::retrieval::TfIdfIndex;
use crate::scorers::{CoherenceModel, Scorers};
use crate::util::derived_rng;

/// Token-set Jaccard similarity of two sentences. Both empty counts as 0.
pub fn jaccard(a: &Sentence, b: &Sentence) -> f64 {
    let sa: HashSet<u32> = a.tokens.iter().copied().collect();
    let sb: HashSet<u32> = b.tokens.iter().copied().collect();
    let inter = sa.intersection(&sb).count();
    let union = sa.len() + sb.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// candidates surviving the TF-IDF screen
    pub screen_k: usize,
    /// candidates surviving discriminative ranking
    pub disc_k: usize,
    /// target context set size
    pub n_c: usize,
    /// strict upper bound for the pairwise diversity comparison
    pub jaccard_max: f64,
}

impl SelectionConfig {
    /// Scales the screening widths with the requested set size.
    pub fn for_target(n_c: usize) -> SelectionConfig {
        let disc_k = 4 * n_c;
        SelectionConfig { screen_k: (2 * disc_k).max(200), disc_k, n_c, jaccard_max: 0.5 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_c < 1 || self.disc_k < self.n_c || self.screen_k < self.disc_k {
            return Err(Error::Format(format!(
                "selection widths must satisfy screen_k >= disc_k >= n_c >= 1, got {}/{}/{}",
                self.screen_k, self.disc_k, self.n_c
            )));
        }
        if !(self.jaccard_max > 0.0 && self.jaccard_max <= 1.0) {
            return Err(Error::Format("jaccard_max must be in (0, 1]".into()));
        }
        Ok(())
    }
}

impl Default for SelectionConfig {
    fn default() -> SelectionConfig {
        SelectionConfig::for_target(25)
    }
}

/// How the context set is assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionStrategy {
    /// screen, rank, then diversity-constrained greedy selection
    TwoStep,
    /// uniformly random chunks, no screening at all
    Random,
    /// like TwoStep but dropping the diversity rules: plain top scores
    NoDiversity,
}

impl SelectionStrategy {
    pub fn name(self) -> &'static str {
        match self {
            SelectionStrategy::TwoStep => "two-step",
            SelectionStrategy::Random => "random",
            SelectionStrategy::NoDiversity => "no-diversity",
        }
    }
}

impl FromStr for SelectionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<SelectionStrategy> {
        match s {
            "two-step" => Ok(SelectionStrategy::TwoStep),
            "random" => Ok(SelectionStrategy::Random),
            "no-diversity" => Ok(SelectionStrategy::NoDiversity),
            other => Err(Error::Format(format!(
                "unknown selection strategy {other:?} (expected two-step, random or no-diversity)"
            ))),
        }
    }
}

/// The contexts selected for one sentence, in selection order, each with its
/// fitting score. `fallback` marks sets built from random chunks because
/// retrieval found nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSet {
    pub sentence_id: u32,
    pub chunk_ids: Vec<u32>,
    pub scores: Vec<f64>,
    pub n_c: usize,
    pub fallback: bool,
}

impl ContextSet {
    pub fn len(&self) -> usize {
        self.chunk_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunk_ids.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.chunk_ids.iter().copied().zip(self.scores.iter().copied())
    }

    pub fn score_of(&self, chunk_id: u32) -> Option<f64> {
        self.chunk_ids.iter().position(|&c| c == chunk_id).map(|i| self.scores[i])
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("context set serializes")
    }

    pub fn from_json_line(line: &str) -> Result<ContextSet> {
        Ok(serde_json::from_str(line)?)
    }
}

/// Checks the structural invariants of a two-step context set: size within
/// target, at most one context per chunk, and pairwise diversity of the
/// designated left-context sentences strictly below the threshold.
pub fn validate_context_set(
    set: &ContextSet,
    windows: &[ContextWindow],
    config: &SelectionConfig,
) -> std::result::Result<(), String> {
    if set.len() > config.n_c {
        return Err(format!("set holds {} contexts, target is {}", set.len(), config.n_c));
    }
    if set.scores.len() != set.chunk_ids.len() {
        return Err("score list length differs from chunk list length".into());
    }
    let mut seen = HashSet::new();
    for &c in &set.chunk_ids {
        if !seen.insert(c) {
            return Err(format!("chunk {c} appears twice"));
        }
        if c as usize >= windows.len() {
            return Err(format!("chunk {c} is out of range"));
        }
    }
    for (i, &a) in set.chunk_ids.iter().enumerate() {
        for &b in &set.chunk_ids[i + 1..] {
            let j = jaccard(windows[a as usize].last_left(), windows[b as usize].last_left());
            if j >= config.jaccard_max {
                return Err(format!("chunks {a} and {b} overlap at jaccard {j:.3}"));
            }
        }
    }
    Ok(())
}

/// Ranks candidate windows by the coherence of placing `s` in their center
/// slot; keeps the best `disc_k`, breaking ties by chunk id. The
/// candidate-independent center encoding is computed once.
pub fn rank_discriminative<'a>(
    model: &CoherenceModel,
    s: &Sentence,
    candidates: &[&'a ContextWindow],
    disc_k: usize,
) -> Result<Vec<&'a ContextWindow>> {
    let center = model.center_term(&s.tokens)?;
    let mut scored = Vec::with_capacity(candidates.len());
    for &w in candidates {
        let logit = model.side_affinity(&w.left_tokens(), &w.right_tokens())? + center;
        scored.push((w, logit));
    }
    // sigmoid is monotone, so sorting logits sorts probabilities
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.chunk_id.cmp(&b.0.chunk_id)));
    scored.truncate(disc_k);
    Ok(scored.into_iter().map(|(w, _)| w).collect())
}

/// Scores the shortlist with the full fitting score and accepts candidates
/// greedily in descending order: one context per chunk, and the last
/// left-context sentence must stay below the overlap threshold against every
/// accepted context. May return fewer than `n_c` on exhaustion.
pub fn select_diverse(
    scorers: &Scorers,
    weights: &ScoreWeights,
    s: &Sentence,
    shortlist: &[&ContextWindow],
    config: &SelectionConfig,
) -> Result<ContextSet> {
    let ranked = score_and_sort(scorers, weights, s, shortlist)?;
    let mut used_chunks = HashSet::new();
    let mut accepted: Vec<(&ContextWindow, f64)> = Vec::new();
    for (w, score) in ranked {
        if accepted.len() == config.n_c {
            break;
        }
        if !used_chunks.insert(w.chunk_id) {
            continue;
        }
        let diverse = accepted
            .iter()
            .all(|(prev, _)| jaccard(w.last_left(), prev.last_left()) < config.jaccard_max);
        if !diverse {
            used_chunks.remove(&w.chunk_id);
            continue;
        }
        accepted.push((w, score));
    }
    Ok(collect_set(s.id, accepted, config.n_c, false))
}

/// The no-diversity variant: the same scoring and ordering, but the top
/// `n_c` are taken as-is.
pub fn select_top(
    scorers: &Scorers,
    weights: &ScoreWeights,
    s: &Sentence,
    shortlist: &[&ContextWindow],
    config: &SelectionConfig,
) -> Result<ContextSet> {
    let mut ranked = score_and_sort(scorers, weights, s, shortlist)?;
    ranked.truncate(config.n_c);
    Ok(collect_set(s.id, ranked, config.n_c, false))
}

/// Uniformly random distinct chunks, scored so the semantic vector still has
/// meaningful entries. Used both as a deliberate baseline strategy and as
/// the fallback when retrieval returns nothing.
pub fn select_random(
    scorers: &Scorers,
    weights: &ScoreWeights,
    s: &Sentence,
    windows: &[ContextWindow],
    config: &SelectionConfig,
    seed: u64,
    fallback: bool,
) -> Result<ContextSet> {
    let mut ids: Vec<u32> = (0..windows.len() as u32).collect();
    let mut rng = derived_rng(seed, SALT_RANDOM_SET ^ crate::util::hash_tokens(&s.tokens));
    ids.shuffle(&mut rng);
    ids.truncate(config.n_c);
    let mut picked = Vec::with_capacity(ids.len());
    for id in ids {
        let w = &windows[id as usize];
        picked.push((w, context_score(scorers, s, w, weights)?));
    }
    Ok(collect_set(s.id, picked, config.n_c, fallback))
}

const SALT_RANDOM_SET: u64 = 0x7261_6e64_0000_0000;

fn score_and_sort<'a>(
    scorers: &Scorers,
    weights: &ScoreWeights,
    s: &Sentence,
    shortlist: &[&'a ContextWindow],
) -> Result<Vec<(&'a ContextWindow, f64)>> {
    let mut scored = Vec::with_capacity(shortlist.len());
    for &w in shortlist {
        scored.push((w, context_score(scorers, s, w, weights)?));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.chunk_id.cmp(&b.0.chunk_id)));
    Ok(scored)
}

fn collect_set(
    sentence_id: u32,
    picked: Vec<(&ContextWindow, f64)>,
    n_c: usize,
    fallback: bool,
) -> ContextSet {
    let (chunk_ids, scores) =
        picked.into_iter().map(|(w, s)| (w.chunk_id, s)).unzip();
    ContextSet { sentence_id, chunk_ids, scores, n_c, fallback }
}

/// End-to-end set construction for one sentence under the given strategy.
/// Two-step and no-diversity paths report NoCandidates when retrieval comes
/// back empty; callers may fall back to [select_random] with a warning.
pub fn build_context_set(
    s: &Sentence,
    index: &TfIdfIndex,
    windows: &[ContextWindow],
    scorers: &Scorers,
    weights: &ScoreWeights,
    config: &SelectionConfig,
    strategy: SelectionStrategy,
    seed: u64,
) -> Result<ContextSet> {
    config.validate()?;
    if let SelectionStrategy::Random = strategy {
        return select_random(scorers, weights, s, windows, config, seed, false);
    }
    let hits = index.search(s, config.screen_k);
    if hits.is_empty() {
        return Err(Error::NoCandidates);
    }
    let candidates: Vec<&ContextWindow> =
        hits.iter().map(|h| &windows[h.chunk_id as usize]).collect();
    let shortlist = rank_discriminative(&scorers.coherence, s, &candidates, config.disc_k)?;
    match strategy {
        SelectionStrategy::TwoStep => select_diverse(scorers, weights, s, &shortlist, config),
        SelectionStrategy::NoDiversity => select_top(scorers, weights, s, &shortlist, config),
        SelectionStrategy::Random => unreachable!("handled above"),
    }
}

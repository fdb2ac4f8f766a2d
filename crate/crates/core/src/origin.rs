//! Origin similarity: the context fitting score, semantic vectors over a
//! context list, and the cosine between two sentences' vectors computed on
//! the union of their context sets.

use serde::{Deserialize, Serialize};

use crate::contextset::ContextSet;
use crate::corpus::{ContextWindow, Sentence};
use crate::error::{Error, Result};
use crate::pipeline::OriginPipeline;
use crate::scorers::ContextScorer;

/// Mixing coefficients for the four scoring terms. All-zero weights are
/// rejected because they would score every context identically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    coherence: f64,
    center: f64,
    left: f64,
    right: f64,
}

impl ScoreWeights {
    pub fn new(coherence: f64, center: f64, left: f64, right: f64) -> Result<ScoreWeights> {
        let w = ScoreWeights { coherence, center, left, right };
        w.validate()?;
        Ok(w)
    }

    /// Rejects all-zero or non-finite weights; used after deserialization.
    pub fn validate(&self) -> Result<()> {
        let all = [self.coherence, self.center, self.left, self.right];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("score weights must be finite".into()));
        }
        if all.iter().all(|&v| v == 0.0) {
            return Err(Error::AllZeroWeights);
        }
        Ok(())
    }

    pub fn coherence(&self) -> f64 {
        self.coherence
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn left(&self) -> f64 {
        self.left
    }

    pub fn right(&self) -> f64 {
        self.right
    }

    /// The same weights with the named terms zeroed; errors if nothing is
    /// left. Term names: coherence, center, left, right.
    pub fn without(&self, terms: &[&str]) -> Result<ScoreWeights> {
        let mut w = *self;
        for t in terms {
            match *t {
                "coherence" => w.coherence = 0.0,
                "center" => w.center = 0.0,
                "left" => w.left = 0.0,
                "right" => w.right = 0.0,
                other => {
                    return Err(Error::Format(format!(
                        "unknown scoring term {other:?} (expected coherence, center, left or right)"
                    )))
                }
            }
        }
        w.validate()?;
        Ok(w)
    }
}

impl Default for ScoreWeights {
    fn default() -> ScoreWeights {
        ScoreWeights { coherence: 1.0, center: 1.0, left: 1.0, right: 1.0 }
    }
}

/// A sentence's coordinates in context space: one fitting score per context,
/// aligned to the context list it was computed over.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticVector {
    pub sentence_id: u32,
    pub values: Vec<f64>,
}

/// Weighted fit of a sentence in a context window's center slot: log
/// coherence probability plus the three generative log probabilities, each
/// scaled by its weight. Zero-weighted terms are skipped entirely, which is
/// what makes term ablation cheap.
pub fn context_score(
    scorers: &impl ContextScorer,
    s: &Sentence,
    c: &ContextWindow,
    w: &ScoreWeights,
) -> Result<f64> {
    let mut total = 0.0;
    if w.coherence != 0.0 {
        total += w.coherence * scorers.coherence_prob(c, s)?.ln();
    }
    if w.center != 0.0 {
        total += w.center * scorers.gen_center(c, s);
    }
    if w.left != 0.0 {
        total += w.left * scorers.gen_left(c, s);
    }
    if w.right != 0.0 {
        total += w.right * scorers.gen_right(c, s);
    }
    Ok(total)
}

/// Elementwise context_score over an ordered context list.
pub fn semantic_vector(
    scorers: &impl ContextScorer,
    s: &Sentence,
    contexts: &[&ContextWindow],
    w: &ScoreWeights,
) -> Result<SemanticVector> {
    if contexts.is_empty() {
        return Err(Error::EmptyContextList);
    }
    let mut values = Vec::with_capacity(contexts.len());
    for c in contexts {
        values.push(context_score(scorers, s, c, w)?);
    }
    Ok(SemanticVector { sentence_id: s.id, values })
}

/// Cosine of two equal-length vectors. Identical inputs short-circuit to 1
/// so self-similarity is exact.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    assert_eq!(a.len(), b.len(), "cosine requires equal-length vectors");
    let norm_a = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm_b = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(Error::ZeroVector);
    }
    if a == b {
        return Ok(1.0);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(dot / (norm_a * norm_b))
}

/// Union of two context sets with duplicate chunks dropped, canonically
/// ordered by chunk id so that the two argument orders produce the same list
/// and therefore bitwise-identical similarities.
pub fn union_chunks(set1: &ContextSet, set2: &ContextSet) -> Vec<u32> {
    let mut ids: Vec<u32> =
        set1.chunk_ids.iter().chain(set2.chunk_ids.iter()).copied().collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Similarity of two sentences: both are scored over the union of their
/// context sets and compared by cosine. Scores already computed during set
/// construction are reused; the rest are computed on demand.
pub fn origin_similarity(
    pipeline: &OriginPipeline,
    s1: &Sentence,
    s2: &Sentence,
) -> Result<f64> {
    let set1 = pipeline.context_set(s1)?;
    let set2 = pipeline.context_set(s2)?;
    let union = union_chunks(&set1, &set2);
    if union.is_empty() {
        return Err(Error::EmptyContextList);
    }
    let v1 = vector_over(pipeline, s1, &set1, &union)?;
    let v2 = vector_over(pipeline, s2, &set2, &union)?;
    cosine(&v1.values, &v2.values)
}

fn vector_over(
    pipeline: &OriginPipeline,
    s: &Sentence,
    own: &ContextSet,
    union: &[u32],
) -> Result<SemanticVector> {
    let stored: std::collections::HashMap<u32, f64> = own.entries().collect();
    let mut values = Vec::with_capacity(union.len());
    for &chunk_id in union {
        let value = match stored.get(&chunk_id) {
            Some(&v) => v,
            None => context_score(
                pipeline.scorers(),
                s,
                pipeline.window(chunk_id),
                pipeline.weights(),
            )?,
        };
        values.push(value);
    }
    Ok(SemanticVector { sentence_id: s.id, values })
}

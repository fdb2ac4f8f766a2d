//! Training-data harvesting for the distilled model.
//!
//! The fast sentence encoder learns from pairs labeled by the full pipeline,
//! so this module turns a corpus into that dataset: sample sentence pairs
//! (half sharing a retrieved chunk, half uniform random, by default), label
//! every pair with the pipeline's similarity score, and tag each record with
//! a train/dev/test split. Everything is deterministic under the configured
//! seed, and the output is JSONL, one record per line.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{extract_all_windows, Corpus};
use crate::error::{Error, Result};
use crate::pipeline::OriginPipeline;
use crate::retrieval::TfIdfIndex;
use crate::util::derived_rng;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

const SALT_PAIRS: u64 = 0x7061_6972;
const SALT_SPLIT: u64 = 0x73_706c_6974;

/// How many retrieval hits a related pair may be drawn from.
const RELATED_TOP_K: usize = 5;

/// Sampling attempts allowed per requested pair before giving up. Small
/// corpora can run out of distinct pairs, so sampling stops short instead of
/// spinning forever.
const ATTEMPTS_PER_PAIR: usize = 50;

/// Dataset split a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        };
        f.write_str(name)
    }
}

/// Fractions of the dataset assigned to each split.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.dev, self.test];
        if parts.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::Config("split ratios must lie in [0, 1]".to_string()));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split ratios must sum to 1".to_string()));
        }
        Ok(())
    }
}

impl Default for SplitRatios {
    fn default() -> SplitRatios {
        SplitRatios { train: 0.98, dev: 0.01, test: 0.01 }
    }
}

/// Pair sampling settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HarvestConfig {
    /// Total pairs requested. The desk-scale default is 50000.
    pub n_pairs: usize,
    /// Fraction of pairs drawn through retrieval; the rest are uniform
    /// random. Related pairs come first in the sampled list.
    pub related_fraction: f64,
    pub seed: u64,
    pub ratios: SplitRatios,
}

impl HarvestConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.related_fraction) {
            return Err(Error::Config("related_fraction must lie in [0, 1]".to_string()));
        }
        if self.n_pairs == 0 {
            return Err(Error::Config("n_pairs must be positive".to_string()));
        }
        self.ratios.validate()
    }
}

impl Default for HarvestConfig {
    fn default() -> HarvestConfig {
        HarvestConfig {
            n_pairs: 50_000,
            related_fraction: 0.5,
            seed: 0,
            ratios: SplitRatios::default(),
        }
    }
}

/// An unlabeled sampled pair. `related` records which sampling arm emitted
/// it, which label-distribution checks rely on later.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledPair {
    pub sent1_id: u32,
    pub sent2_id: u32,
    pub related: bool,
}

/// One labeled training example for the distilled model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub sent1_id: u32,
    pub sent2_id: u32,
    pub text1: String,
    pub text2: String,
    pub origin_score: f64,
    pub split: Split,
}

fn pair_key(a: u32, b: u32) -> (u32, u32) {
    (a.min(b), a.max(b))
}

/// Samples sentence pairs from the corpus: first the retrieval-related arm,
/// then the uniform-random arm. No self-pairs, no duplicates (unordered), and
/// the same seed reproduces the same list. Exhausted corpora yield fewer
/// pairs than requested, with a logged warning.
pub fn sample_pairs(
    corpus: &Corpus,
    index: &TfIdfIndex,
    config: &HarvestConfig,
) -> Result<Vec<SampledPair>> {
    config.validate()?;
    let n_sentences = corpus.n_sentences();
    if n_sentences < 2 {
        return Err(Error::CorpusTooSmall);
    }
    let windows = extract_all_windows(corpus, index.left, index.right);
    let n_related = (config.n_pairs as f64 * config.related_fraction).round() as usize;
    let n_random = config.n_pairs - n_related;

    let mut rng = derived_rng(config.seed, SALT_PAIRS);
    let mut seen: HashSet<(u32, u32)> = HashSet::new();
    let mut pairs = Vec::with_capacity(config.n_pairs);

    let mut budget = n_related * ATTEMPTS_PER_PAIR;
    let mut emitted = 0;
    while emitted < n_related && budget > 0 {
        budget -= 1;
        let first = rng.random_range(0..n_sentences as u32);
        let sentence = corpus.sentence(first).expect("sampled id is in range");
        let hits = index.search(sentence, RELATED_TOP_K);
        let Some(hit) = hits.choose(&mut rng) else { continue };
        let window = &windows[hit.chunk_id as usize];
        let members: Vec<u32> = window.all_sentences().map(|s| s.id).collect();
        let second = *members.choose(&mut rng).expect("windows are never empty");
        if second == first || !seen.insert(pair_key(first, second)) {
            continue;
        }
        pairs.push(SampledPair { sent1_id: first, sent2_id: second, related: true });
        emitted += 1;
    }
    if emitted < n_related {
        log::warn!("related sampling stopped at {emitted} of {n_related} pairs");
    }

    let mut budget = n_random * ATTEMPTS_PER_PAIR;
    let mut emitted = 0;
    while emitted < n_random && budget > 0 {
        budget -= 1;
        let first = rng.random_range(0..n_sentences as u32);
        let second = rng.random_range(0..n_sentences as u32);
        if second == first || !seen.insert(pair_key(first, second)) {
            continue;
        }
        pairs.push(SampledPair { sent1_id: first, sent2_id: second, related: false });
        emitted += 1;
    }
    if emitted < n_random {
        log::warn!("random sampling stopped at {emitted} of {n_random} pairs");
    }

    Ok(pairs)
}

/// Labels every pair with the pipeline's similarity score, in parallel,
/// preserving input order. Pairs whose scoring fails are dropped with a
/// warning; the second return value counts them.
pub fn label_pairs(
    pipeline: &OriginPipeline,
    pairs: &[SampledPair],
) -> (Vec<PairRecord>, usize) {
    let labeled: Vec<Option<PairRecord>> = pairs
        .par_iter()
        .map(|pair| {
            let corpus = pipeline.corpus();
            let (Some(s1), Some(s2)) =
                (corpus.sentence(pair.sent1_id), corpus.sentence(pair.sent2_id))
            else {
                log::warn!(
                    "skipping pair ({}, {}): unknown sentence id",
                    pair.sent1_id,
                    pair.sent2_id
                );
                return None;
            };
            match pipeline.origin_similarity(s1, s2) {
                Ok(score) => Some(PairRecord {
                    sent1_id: pair.sent1_id,
                    sent2_id: pair.sent2_id,
                    text1: s1.raw.clone(),
                    text2: s2.raw.clone(),
                    origin_score: score,
                    split: Split::Train,
                }),
                Err(e) => {
                    log::warn!(
                        "skipping pair ({}, {}): {e}",
                        pair.sent1_id,
                        pair.sent2_id
                    );
                    None
                }
            }
        })
        .collect();
    let skipped = labeled.iter().filter(|r| r.is_none()).count();
    (labeled.into_iter().flatten().collect(), skipped)
}

/// Assigns split tags: shuffle record indices under the seed, hand the first
/// block to train, then dev, then test. Counts are floor-based with the
/// remainder going to train. Fewer than 3 records all land in train. Record
/// order itself is untouched.
pub fn split_dataset(records: &mut [PairRecord], ratios: &SplitRatios, seed: u64) -> Result<()> {
    ratios.validate()?;
    let n = records.len();
    if n < 3 {
        for r in records.iter_mut() {
            r.split = Split::Train;
        }
        return Ok(());
    }
    let n_dev = (n as f64 * ratios.dev).floor() as usize;
    let n_test = (n as f64 * ratios.test).floor() as usize;
    let n_train = n - n_dev - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = derived_rng(seed, SALT_SPLIT);
    order.shuffle(&mut rng);
    for (pos, &idx) in order.iter().enumerate() {
        records[idx].split = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_dev {
            Split::Dev
        } else {
            Split::Test
        };
    }
    Ok(())
}

/// Writes records as JSONL, one per line.
pub fn write_pair_records(path: &Path, records: &[PairRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a JSONL pair file, reporting the line number of the first bad row.
pub fn read_pair_records(path: &Path) -> Result<Vec<PairRecord>> {
    let text = fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: PairRecord = serde_json::from_str(line).map_err(|e| Error::MalformedRow {
            line: i + 1,
            reason: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

//! Synthetic topic corpus generator.
//!
//! Builds template documents whose gold similarity structure is known by
//! construction: every document belongs to one topic, topics own disjoint
//! word pools, and sentences inside a topic are interchangeable. Each topic
//! splits into a few "fine" strands that share the topic's interior word
//! pairs but use their own heads and tails, so sentences of one topic look
//! related without being copies. A small noise rate injects off-topic
//! sentences into documents, which keeps retrieval and the scorers from
//! becoming trivially separable. Everything derives from the seed, so the
//! same configuration always reproduces the same corpus byte for byte.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::derived_rng;

const SALT_SYNTH: u64 = 0x73_796e_7468;
const SALT_GOLD_PAIRS: u64 = 0x676f_6c64;
const SALT_TRIPLETS: u64 = 0x7472_6970;

/// Shape of the generated corpus.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SynthConfig {
    pub topics: usize,
    pub docs_per_topic: usize,
    pub seed: u64,
    /// Strands per topic; sentences of different strands still share the
    /// topic's interior word pairs.
    pub fines_per_topic: usize,
    pub heads_per_fine: usize,
    pub tails_per_fine: usize,
    pub mid_pairs_per_topic: usize,
    /// Probability that a sentence slot is filled from another topic.
    pub noise_rate: f64,
    pub min_sentences: usize,
    pub max_sentences: usize,
}

impl Default for SynthConfig {
    fn default() -> SynthConfig {
        SynthConfig {
            topics: 5,
            docs_per_topic: 400,
            seed: 0,
            fines_per_topic: 3,
            heads_per_fine: 4,
            tails_per_fine: 3,
            mid_pairs_per_topic: 8,
            noise_rate: 0.04,
            min_sentences: 6,
            max_sentences: 9,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.topics < 2 {
            return Err(Error::Config("at least 2 topics are required".to_string()));
        }
        if self.docs_per_topic == 0 {
            return Err(Error::Config("docs_per_topic must be positive".to_string()));
        }
        if self.fines_per_topic == 0
            || self.heads_per_fine == 0
            || self.tails_per_fine == 0
            || self.mid_pairs_per_topic == 0
        {
            return Err(Error::Config("word pools must be non-empty".to_string()));
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return Err(Error::Config("noise_rate must lie in [0, 1)".to_string()));
        }
        if self.min_sentences < 3 || self.min_sentences > self.max_sentences {
            return Err(Error::Config(
                "documents need at least 3 sentences and min <= max".to_string(),
            ));
        }
        let lexicon = self.topics
            * (self.fines_per_topic * (self.heads_per_fine + self.tails_per_fine)
                + 2 * self.mid_pairs_per_topic
                + 1);
        if lexicon > 1500 {
            return Err(Error::Config("word pools exceed the pseudoword space".to_string()));
        }
        Ok(())
    }
}

/// Where one generated sentence came from. Index position equals the global
/// sentence id the corpus assigns at ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceInfo {
    /// Topic of the sentence's content (the injecting topic for noise).
    pub topic: usize,
    pub fine: usize,
    /// True when the sentence was injected into a document of another topic.
    pub noise: bool,
}

/// Generated documents plus the per-sentence gold labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub docs: Vec<String>,
    pub doc_topics: Vec<usize>,
    pub sentences: Vec<SentenceInfo>,
}

const SYLLABLES: [&str; 20] = [
    "ba", "ce", "di", "fo", "gu", "ha", "je", "ki", "lo", "mu", "na", "pe", "ri", "so", "tu",
    "va", "we", "xi", "yo", "zu",
];

/// Injective pseudoword from a small index: three syllables, 8000 distinct
/// words, none colliding with the template's function words.
fn pseudoword(ix: usize) -> String {
    assert!(ix < 8000, "pseudoword space exhausted");
    let mut word = String::with_capacity(6);
    word.push_str(SYLLABLES[ix / 400 % 20]);
    word.push_str(SYLLABLES[ix / 20 % 20]);
    word.push_str(SYLLABLES[ix % 20]);
    word
}

/// Deterministic lexicon layout inside the pseudoword space.
struct Lexicon {
    config: SynthConfig,
}

impl Lexicon {
    fn anchor(&self, topic: usize) -> String {
        pseudoword(topic)
    }

    fn head(&self, topic: usize, fine: usize, k: usize) -> String {
        let c = &self.config;
        pseudoword(1000 + (topic * c.fines_per_topic + fine) * c.heads_per_fine + k)
    }

    fn tail(&self, topic: usize, fine: usize, k: usize) -> String {
        let c = &self.config;
        pseudoword(3000 + (topic * c.fines_per_topic + fine) * c.tails_per_fine + k)
    }

    fn mid(&self, topic: usize, j: usize) -> (String, String) {
        let c = &self.config;
        let ix = topic * c.mid_pairs_per_topic + j;
        (pseudoword(5000 + ix), pseudoword(6500 + ix))
    }
}

/// Skewed pool index: low indices are much more common, mimicking the
/// head-heavy word frequencies of natural text.
fn skewed_index(rng: &mut impl Rng, n: usize) -> usize {
    let u: f64 = rng.random();
    ((u * u * n as f64) as usize).min(n - 1)
}

fn make_sentence(lex: &Lexicon, rng: &mut impl Rng, topic: usize, fine: usize) -> String {
    let head = lex.head(topic, fine, skewed_index(rng, lex.config.heads_per_fine));
    let (m1, m2) = lex.mid(topic, skewed_index(rng, lex.config.mid_pairs_per_topic));
    let tail = lex.tail(topic, fine, rng.random_range(0..lex.config.tails_per_fine));
    format!("The {head} {} {m1} {m2} {tail} .", lex.anchor(topic))
}

/// Generates the corpus. Documents are grouped by topic in output order, and
/// `sentences[i]` describes the sentence that ingestion will number `i`.
pub fn generate(config: &SynthConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let lex = Lexicon { config: *config };
    let mut rng = derived_rng(config.seed, SALT_SYNTH);
    let mut docs = Vec::with_capacity(config.topics * config.docs_per_topic);
    let mut doc_topics = Vec::with_capacity(docs.capacity());
    let mut sentences = Vec::new();
    for topic in 0..config.topics {
        for _ in 0..config.docs_per_topic {
            let n = rng.random_range(config.min_sentences..=config.max_sentences);
            let mut parts = Vec::with_capacity(n);
            for _ in 0..n {
                let noise = rng.random_bool(config.noise_rate);
                let actual_topic = if noise {
                    let other = rng.random_range(0..config.topics - 1);
                    if other >= topic {
                        other + 1
                    } else {
                        other
                    }
                } else {
                    topic
                };
                let fine = rng.random_range(0..config.fines_per_topic);
                parts.push(make_sentence(&lex, &mut rng, actual_topic, fine));
                sentences.push(SentenceInfo { topic: actual_topic, fine, noise });
            }
            docs.push(parts.join(" "));
            doc_topics.push(topic);
        }
    }
    Ok(SyntheticCorpus { docs, doc_topics, sentences })
}

/// A labeled evaluation pair over global sentence ids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoldPair {
    pub sent1_id: u32,
    pub sent2_id: u32,
    /// 1 when the sentences share a topic, else 0.
    pub gold: f64,
}

fn non_noise_of_topic(synth: &SyntheticCorpus, topic: usize) -> Vec<u32> {
    synth
        .sentences
        .iter()
        .enumerate()
        .filter(|(_, info)| info.topic == topic && !info.noise)
        .map(|(i, _)| i as u32)
        .collect()
}

/// Samples a balanced, deduplicated set of labeled pairs: half same-topic,
/// half cross-topic, noise sentences excluded. Deterministic under the seed.
pub fn sample_gold_pairs(synth: &SyntheticCorpus, n: usize, seed: u64) -> Vec<GoldPair> {
    let topics = 1 + synth.sentences.iter().map(|s| s.topic).max().unwrap_or(0);
    let by_topic: Vec<Vec<u32>> =
        (0..topics).map(|t| non_noise_of_topic(synth, t)).collect();
    let mut rng = derived_rng(seed, SALT_GOLD_PAIRS);
    let mut seen = HashSet::new();
    let mut pairs = Vec::with_capacity(n);
    let mut budget = n.saturating_mul(50);
    while pairs.len() < n && budget > 0 {
        budget -= 1;
        let same = pairs.len() % 2 == 0;
        let t1 = rng.random_range(0..topics);
        let t2 = if same {
            t1
        } else {
            let other = rng.random_range(0..topics - 1);
            if other >= t1 {
                other + 1
            } else {
                other
            }
        };
        if by_topic[t1].is_empty() || by_topic[t2].is_empty() {
            continue;
        }
        let a = by_topic[t1][rng.random_range(0..by_topic[t1].len())];
        let b = by_topic[t2][rng.random_range(0..by_topic[t2].len())];
        if a == b || !seen.insert((a.min(b), a.max(b))) {
            continue;
        }
        pairs.push(GoldPair {
            sent1_id: a,
            sent2_id: b,
            gold: if same { 1.0 } else { 0.0 },
        });
    }
    pairs
}

/// Anchor/positive/negative triplets over global sentence ids: the positive
/// shares the anchor's topic, the negative never does.
pub fn sample_gold_triplets(synth: &SyntheticCorpus, n: usize, seed: u64) -> Vec<(u32, u32, u32)> {
    let topics = 1 + synth.sentences.iter().map(|s| s.topic).max().unwrap_or(0);
    let by_topic: Vec<Vec<u32>> =
        (0..topics).map(|t| non_noise_of_topic(synth, t)).collect();
    let mut rng = derived_rng(seed, SALT_TRIPLETS);
    let mut triplets = Vec::with_capacity(n);
    let mut budget = n.saturating_mul(50);
    while triplets.len() < n && budget > 0 {
        budget -= 1;
        let t = rng.random_range(0..topics);
        let o = {
            let other = rng.random_range(0..topics - 1);
            if other >= t {
                other + 1
            } else {
                other
            }
        };
        if by_topic[t].len() < 2 || by_topic[o].is_empty() {
            continue;
        }
        let anchor = by_topic[t][rng.random_range(0..by_topic[t].len())];
        let positive = by_topic[t][rng.random_range(0..by_topic[t].len())];
        if positive == anchor {
            continue;
        }
        let negative = by_topic[o][rng.random_range(0..by_topic[o].len())];
        triplets.push((anchor, positive, negative));
    }
    triplets
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{extract_all_windows, Corpus};
    use crate::retrieval::TfIdfIndex;

    fn small_config() -> SynthConfig {
        SynthConfig { topics: 3, docs_per_topic: 40, seed: 11, ..SynthConfig::default() }
    }

    #[test]
    fn document_count_is_topics_times_docs() {
        let config = SynthConfig { topics: 2, docs_per_topic: 10, ..small_config() };
        let synth = generate(&config).unwrap();
        assert_eq!(synth.docs.len(), 20);
        assert_eq!(synth.doc_topics.len(), 20);
        assert_eq!(synth.doc_topics.iter().filter(|&&t| t == 0).count(), 10);
    }

    #[test]
    fn generation_is_byte_identical_under_a_seed() {
        let a = generate(&small_config()).unwrap();
        let b = generate(&small_config()).unwrap();
        assert_eq!(a, b);
        let c = generate(&SynthConfig { seed: 12, ..small_config() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn labels_align_with_the_ingested_corpus() {
        let synth = generate(&small_config()).unwrap();
        let corpus = Corpus::ingest(&synth.docs, 1).unwrap();
        assert_eq!(corpus.n_sentences(), synth.sentences.len());
        for id in [0u32, 7, 100, 500] {
            let info = synth.sentences[id as usize];
            let raw = &corpus.sentence(id).unwrap().raw;
            // The topic anchor word sits in every sentence of that topic.
            assert!(
                raw.contains(&pseudoword(info.topic)),
                "sentence {id} {raw:?} lacks its topic anchor"
            );
        }
    }

    #[test]
    fn pseudowords_are_unique_and_lowercase() {
        let mut seen = HashSet::new();
        for ix in 0..8000 {
            let w = pseudoword(ix);
            assert_eq!(w.len(), 6);
            assert!(w.chars().all(|c| c.is_ascii_lowercase()));
            assert!(seen.insert(w));
        }
    }

    #[test]
    fn noise_rate_zero_keeps_documents_pure() {
        let config = SynthConfig { noise_rate: 0.0, ..small_config() };
        let synth = generate(&config).unwrap();
        assert!(synth.sentences.iter().all(|s| !s.noise));
        let noisy = generate(&small_config()).unwrap();
        let rate = noisy.sentences.iter().filter(|s| s.noise).count() as f64
            / noisy.sentences.len() as f64;
        assert!((0.01..0.10).contains(&rate), "observed noise rate {rate}");
    }

    #[test]
    fn degenerate_configs_are_rejected() {
        assert!(SynthConfig { topics: 1, ..small_config() }.validate().is_err());
        assert!(SynthConfig { noise_rate: 1.0, ..small_config() }.validate().is_err());
        assert!(SynthConfig { min_sentences: 2, ..small_config() }.validate().is_err());
        assert!(
            SynthConfig { topics: 40, mid_pairs_per_topic: 40, ..small_config() }
                .validate()
                .is_err()
        );
    }

    #[test]
    fn gold_pairs_are_balanced_deduplicated_and_clean() {
        let synth = generate(&small_config()).unwrap();
        let pairs = sample_gold_pairs(&synth, 200, 5);
        assert_eq!(pairs.len(), 200);
        let same = pairs.iter().filter(|p| p.gold == 1.0).count();
        assert_eq!(same, 100);
        let mut seen = HashSet::new();
        for p in &pairs {
            assert_ne!(p.sent1_id, p.sent2_id);
            let key = (p.sent1_id.min(p.sent2_id), p.sent1_id.max(p.sent2_id));
            assert!(seen.insert(key));
            let i1 = synth.sentences[p.sent1_id as usize];
            let i2 = synth.sentences[p.sent2_id as usize];
            assert!(!i1.noise && !i2.noise);
            assert_eq!(p.gold == 1.0, i1.topic == i2.topic);
        }
        assert_eq!(pairs, sample_gold_pairs(&synth, 200, 5));
    }

    #[test]
    fn triplets_respect_topic_membership() {
        let synth = generate(&small_config()).unwrap();
        let triplets = sample_gold_triplets(&synth, 100, 6);
        assert_eq!(triplets.len(), 100);
        for (a, p, n) in triplets {
            assert_ne!(a, p);
            assert_eq!(synth.sentences[a as usize].topic, synth.sentences[p as usize].topic);
            assert_ne!(synth.sentences[a as usize].topic, synth.sentences[n as usize].topic);
        }
    }

    #[test]
    fn intra_topic_sentences_usually_share_a_retrieved_chunk() {
        let synth = generate(&small_config()).unwrap();
        let corpus = Corpus::ingest(&synth.docs, 1).unwrap();
        let windows = extract_all_windows(&corpus, 1, 1);
        let index = TfIdfIndex::build(&windows, 1, 1);
        let pairs = sample_gold_pairs(&synth, 200, 9);
        let mut intra = 0;
        let mut shared = 0;
        for p in pairs.iter().filter(|p| p.gold == 1.0) {
            intra += 1;
            let hits = |id: u32| -> HashSet<u32> {
                index
                    .search(corpus.sentence(id).unwrap(), 10)
                    .into_iter()
                    .map(|h| h.chunk_id)
                    .collect()
            };
            if !hits(p.sent1_id).is_disjoint(&hits(p.sent2_id)) {
                shared += 1;
            }
        }
        let rate = shared as f64 / intra as f64;
        assert!(rate >= 0.9, "top-10 retrieval sharing rate {rate}");
    }
}

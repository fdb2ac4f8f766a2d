//! TF-IDF retrieval over bigrams of context windows.
//!
//! Windows are screened with a sparse cosine score over within-sentence
//! bigrams. Raw counts are the term frequency and idf is smoothed so unseen
//! bigrams stay finite. Results are fully ordered: score descending, then
//! chunk id ascending, so rankings are reproducible and ties are not left to
//! hash iteration order.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::{ContextWindow, Sentence};
use crate::error::{Error, Result};
use crate::fileio;

/// Two adjacent token ids packed into one key.
pub fn bigram_key(a: u32, b: u32) -> u64 {
    ((a as u64) << 32) | b as u64
}

/// Smoothed inverse document frequency.
pub fn idf(n_chunks: usize, df: u32) -> f64 {
    ((n_chunks as f64 + 1.0) / (df as f64 + 1.0)).ln() + 1.0
}

/// Sparse tf-idf vector over bigram keys, ascending by key, with its L2 norm
/// cached. The norm is accumulated in key order so identical content always
/// produces bit-identical values.
#[derive(Debug, Clone, PartialEq)]
pub struct BigramVector {
    pub weights: Vec<(u64, f64)>,
    pub norm: f64,
}

impl BigramVector {
    pub fn new(counts: Vec<(u64, u32)>, idf_of: impl Fn(u64) -> f64) -> BigramVector {
        let weights: Vec<(u64, f64)> =
            counts.into_iter().map(|(key, tf)| (key, tf as f64 * idf_of(key))).collect();
        let mut sum = 0.0;
        for &(_, w) in &weights {
            sum += w * w;
        }
        BigramVector { weights, norm: sum.sqrt() }
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Counts bigrams of adjacent tokens within each sentence; pairs never cross
/// sentence boundaries. Returned counts are ascending by key.
pub fn count_bigrams<'a>(sentences: impl Iterator<Item = &'a [u32]>) -> Vec<(u64, u32)> {
    let mut counts: HashMap<u64, u32> = HashMap::new();
    for tokens in sentences {
        for pair in tokens.windows(2) {
            *counts.entry(bigram_key(pair[0], pair[1])).or_insert(0) += 1;
        }
    }
    let mut out: Vec<(u64, u32)> = counts.into_iter().collect();
    out.sort_unstable_by_key(|&(key, _)| key);
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalHit {
    pub chunk_id: u32,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Posting {
    chunk_id: u32,
    term_frequency: u32,
}

/// Inverted index over context windows.
#[derive(Debug, Clone)]
pub struct TfIdfIndex {
    n_chunks: usize,
    /// Window shape the index was built with, kept so later stages can
    /// re-extract the identical chunk list from the corpus.
    pub left: usize,
    pub right: usize,
    /// Bigram key -> postings ordered by chunk id. Document frequency is the
    /// posting list length.
    postings: HashMap<u64, Vec<Posting>>,
    /// L2 norm of every chunk's full tf-idf vector, indexed by chunk id.
    norms: Vec<f64>,
}

impl TfIdfIndex {
    /// Builds the index over windows whose chunk ids must be dense and
    /// sequential (`windows[i].chunk_id == i`), as produced by corpus-wide
    /// window extraction.
    pub fn build(windows: &[ContextWindow], left: usize, right: usize) -> TfIdfIndex {
        let per_chunk: Vec<Vec<(u64, u32)>> = windows
            .iter()
            .enumerate()
            .map(|(i, w)| {
                assert_eq!(w.chunk_id as usize, i, "windows must carry dense sequential ids");
                count_bigrams(w.all_sentences().map(|s| s.tokens.as_slice()))
            })
            .collect();

        let mut postings: HashMap<u64, Vec<Posting>> = HashMap::new();
        for (chunk, counts) in per_chunk.iter().enumerate() {
            for &(key, tf) in counts {
                postings
                    .entry(key)
                    .or_default()
                    .push(Posting { chunk_id: chunk as u32, term_frequency: tf });
            }
        }

        let n_chunks = windows.len();
        let norms = per_chunk
            .iter()
            .map(|counts| {
                let mut sum = 0.0;
                for &(key, tf) in counts {
                    let w = tf as f64 * idf(n_chunks, postings[&key].len() as u32);
                    sum += w * w;
                }
                sum.sqrt()
            })
            .collect();

        TfIdfIndex { n_chunks, left, right, postings, norms }
    }

    pub fn n_chunks(&self) -> usize {
        self.n_chunks
    }

    pub fn df(&self, key: u64) -> u32 {
        self.postings.get(&key).map(|p| p.len() as u32).unwrap_or(0)
    }

    pub fn idf_of(&self, key: u64) -> f64 {
        idf(self.n_chunks, self.df(key))
    }

    pub fn chunk_norm(&self, chunk_id: u32) -> f64 {
        self.norms[chunk_id as usize]
    }

    /// The query's tf-idf vector under this index's statistics. Bigrams the
    /// index has never seen still contribute to the norm (df = 0).
    pub fn query_vector(&self, query: &Sentence) -> BigramVector {
        let counts = count_bigrams(std::iter::once(query.tokens.as_slice()));
        BigramVector::new(counts, |key| self.idf_of(key))
    }

    /// Full tf-idf vector of a window under this index's statistics.
    pub fn window_vector(&self, window: &ContextWindow) -> BigramVector {
        let counts = count_bigrams(window.all_sentences().map(|s| s.tokens.as_slice()));
        BigramVector::new(counts, |key| self.idf_of(key))
    }

    /// Top-k chunks by cosine between the query vector and each chunk's
    /// vector. Only chunks sharing at least one bigram can appear, so fewer
    /// than `k` hits means fewer than `k` chunks overlap at all. Ordering is
    /// score descending with chunk id breaking ties.
    pub fn search(&self, query: &Sentence, k: usize) -> Vec<RetrievalHit> {
        self.search_vector(&self.query_vector(query), k)
    }

    /// Same ranking for a caller-built query vector.
    pub fn search_vector(&self, qvec: &BigramVector, k: usize) -> Vec<RetrievalHit> {
        if qvec.is_empty() || k == 0 {
            return Vec::new();
        }
        let mut dots: HashMap<u32, f64> = HashMap::new();
        for &(key, qw) in &qvec.weights {
            if let Some(postings) = self.postings.get(&key) {
                let w_idf = self.idf_of(key);
                for p in postings {
                    *dots.entry(p.chunk_id).or_insert(0.0) +=
                        qw * (p.term_frequency as f64 * w_idf);
                }
            }
        }
        let mut hits: Vec<RetrievalHit> = dots
            .into_iter()
            .map(|(chunk_id, dot)| RetrievalHit {
                chunk_id,
                score: (dot / (qvec.norm * self.norms[chunk_id as usize])).min(1.0),
            })
            .collect();
        hits.sort_unstable_by(|a, b| {
            b.score.total_cmp(&a.score).then_with(|| a.chunk_id.cmp(&b.chunk_id))
        });
        hits.truncate(k);
        hits
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        fileio::write_magic(&mut w, fileio::INDEX_MAGIC)?;
        fileio::write_u32(&mut w, self.left as u32)?;
        fileio::write_u32(&mut w, self.right as u32)?;
        fileio::write_u32(&mut w, self.n_chunks as u32)?;
        fileio::write_f64_slice(&mut w, &self.norms)?;
        let mut keys: Vec<u64> = self.postings.keys().copied().collect();
        keys.sort_unstable();
        fileio::write_u32(&mut w, keys.len() as u32)?;
        for key in keys {
            fileio::write_u64(&mut w, key)?;
            let postings = &self.postings[&key];
            fileio::write_u32(&mut w, postings.len() as u32)?;
            for p in postings {
                fileio::write_u32(&mut w, p.chunk_id)?;
                fileio::write_u32(&mut w, p.term_frequency)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TfIdfIndex> {
        let mut r = BufReader::new(File::open(path)?);
        fileio::check_magic(&mut r, fileio::INDEX_MAGIC, path)?;
        let left = fileio::read_u32(&mut r)? as usize;
        let right = fileio::read_u32(&mut r)? as usize;
        let n_chunks = fileio::read_u32(&mut r)? as usize;
        let norms = fileio::read_f64_vec(&mut r)?;
        if norms.len() != n_chunks {
            return Err(Error::Format("index norm table length mismatch".into()));
        }
        let n_keys = fileio::read_u32(&mut r)? as usize;
        let mut postings = HashMap::with_capacity(n_keys);
        for _ in 0..n_keys {
            let key = fileio::read_u64(&mut r)?;
            let len = fileio::read_u32(&mut r)? as usize;
            let mut list = Vec::with_capacity(len);
            for _ in 0..len {
                let chunk_id = fileio::read_u32(&mut r)?;
                let term_frequency = fileio::read_u32(&mut r)?;
                list.push(Posting { chunk_id, term_frequency });
            }
            postings.insert(key, list);
        }
        Ok(TfIdfIndex { n_chunks, left, right, postings, norms })
    }
}

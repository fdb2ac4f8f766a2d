//! Corpus ingestion: segmentation, tokenization, vocabulary, context windows.
//!
//! A corpus is a list of documents, each an ordered list of sentences. A
//! context window pairs one center sentence with its L left and R right
//! neighbors; windows are the retrieval unit ("chunk") for everything
//! downstream.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fileio;

/// Sentence terminators that never end a sentence when the word containing
/// them is one of these abbreviations.
const ABBREVIATIONS: [&str; 5] = ["mr.", "mrs.", "dr.", "e.g.", "i.e."];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    /// Unique id within the corpus.
    pub id: u32,
    /// Vocabulary token ids, never empty.
    pub tokens: Vec<u32>,
    /// Original text the tokens were derived from.
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: u32,
    /// Ordered, at least one sentence.
    pub sentences: Vec<Sentence>,
}

/// One center sentence plus its immediate neighborhood. `chunk_id` is unique
/// across whatever collection the window was extracted into.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextWindow {
    pub chunk_id: u32,
    pub doc_id: u32,
    pub left: Vec<Sentence>,
    pub center: Sentence,
    pub right: Vec<Sentence>,
}

impl ContextWindow {
    pub fn left_tokens(&self) -> Vec<u32> {
        self.left.iter().flat_map(|s| s.tokens.iter().copied()).collect()
    }

    pub fn right_tokens(&self) -> Vec<u32> {
        self.right.iter().flat_map(|s| s.tokens.iter().copied()).collect()
    }

    /// All tokens of the window, left to right. This is what gets indexed.
    pub fn all_sentences(&self) -> impl Iterator<Item = &Sentence> {
        self.left.iter().chain(std::iter::once(&self.center)).chain(self.right.iter())
    }

    /// The sentence immediately preceding the center slot. Diversity checks
    /// during context selection compare these across accepted windows.
    pub fn last_left(&self) -> &Sentence {
        self.left.last().expect("window always has at least one left sentence")
    }
}

/// Token string to id mapping with reserved control ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
    counts: Vec<u64>,
    min_count: u32,
}

impl Vocabulary {
    pub const UNK: u32 = 0;
    pub const SEP: u32 = 1;
    pub const EOS: u32 = 2;
    pub const PAD: u32 = 3;
    pub const SPECIALS: [&'static str; 4] = ["<unk>", "<sep>", "<eos>", "<pad>"];

    /// Builds the vocabulary from raw token counts. Tokens below `min_count`
    /// are dropped; ids are assigned by descending count, ties broken by the
    /// token string, so the mapping is a pure function of the counts.
    pub fn build(counts: &HashMap<String, u64>, min_count: u32) -> Vocabulary {
        let mut kept: Vec<(&str, u64)> = counts
            .iter()
            .filter(|(_, &c)| c >= min_count as u64)
            .map(|(t, &c)| (t.as_str(), c))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut id_to_token: Vec<String> = Self::SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut vocab_counts = vec![0u64; Self::SPECIALS.len()];
        for (token, count) in kept {
            id_to_token.push(token.to_string());
            vocab_counts.push(count);
        }
        let token_to_id =
            id_to_token.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocabulary { token_to_id, id_to_token, counts: vocab_counts, min_count }
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(Self::UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(|s| s.as_str())
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts.get(id as usize).copied().unwrap_or(0)
    }

    pub fn min_count(&self) -> u32 {
        self.min_count
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the four control tokens are always present
    }

    /// Writes one `token<TAB>id<TAB>count` line per entry, in id order.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (id, token) in self.id_to_token.iter().enumerate() {
            writeln!(w, "{}\t{}\t{}", token, id, self.counts[id])?;
        }
        Ok(())
    }

    pub fn read_tsv(path: &Path) -> Result<Vocabulary> {
        let reader = BufReader::new(File::open(path)?);
        let mut id_to_token = Vec::new();
        let mut counts = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let mut parts = line.split('\t');
            let (token, id, count) = match (parts.next(), parts.next(), parts.next()) {
                (Some(t), Some(i), Some(c)) => (t, i, c),
                _ => {
                    return Err(Error::MalformedRow {
                        line: i + 1,
                        reason: "expected token<TAB>id<TAB>count".into(),
                    })
                }
            };
            let id: usize = id.parse().map_err(|_| Error::MalformedRow {
                line: i + 1,
                reason: format!("bad id {id:?}"),
            })?;
            if id != id_to_token.len() {
                return Err(Error::MalformedRow {
                    line: i + 1,
                    reason: format!("ids must be consecutive, got {id}"),
                });
            }
            let count: u64 = count.parse().map_err(|_| Error::MalformedRow {
                line: i + 1,
                reason: format!("bad count {count:?}"),
            })?;
            id_to_token.push(token.to_string());
            counts.push(count);
        }
        if id_to_token.len() < Self::SPECIALS.len() {
            return Err(Error::Format("vocabulary file is missing control tokens".into()));
        }
        let token_to_id =
            id_to_token.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Ok(Vocabulary { token_to_id, id_to_token, counts, min_count: 0 })
    }
}

/// Lowercases and splits text into word and punctuation tokens. Runs of
/// alphanumeric characters form words; every other non-whitespace character
/// becomes its own token.
pub fn tokenize_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
        } else if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
        } else {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            out.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Tokenizes text and maps each token through the vocabulary, falling back to
/// the unknown id for out-of-vocabulary words.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Vec<u32> {
    tokenize_words(text).iter().map(|t| vocab.id_or_unk(t)).collect()
}

/// Joins tokens with single spaces. For tokens that are in the vocabulary
/// this is a left inverse of `tokenize`.
pub fn detokenize(tokens: &[u32], vocab: &Vocabulary) -> String {
    let mut parts = Vec::with_capacity(tokens.len());
    for &t in tokens {
        parts.push(vocab.token(t).unwrap_or(Vocabulary::SPECIALS[0]));
    }
    parts.join(" ")
}

/// Splits a document into sentences on `.`, `!` or `?` followed by
/// whitespace or end of text. A period that terminates a known abbreviation
/// does not split. Never returns empty sentences.
pub fn segment_document(text: &str) -> Vec<String> {
    let bytes = text.as_bytes();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < bytes.len() {
        let b = bytes[i];
        if b == b'.' || b == b'!' || b == b'?' {
            let mut end = i + 1;
            while end < bytes.len() && matches!(bytes[end], b'.' | b'!' | b'?') {
                end += 1;
            }
            let at_boundary =
                end == bytes.len() || bytes[end].is_ascii_whitespace() || char_at_is_whitespace(text, end);
            if at_boundary && !ends_with_abbreviation(&text[start..end]) {
                let raw = text[start..end].trim();
                if !raw.is_empty() {
                    sentences.push(raw.to_string());
                }
                start = end;
            }
            i = end;
        } else {
            i += 1;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        sentences.push(tail.to_string());
    }
    sentences
}

fn char_at_is_whitespace(text: &str, byte_idx: usize) -> bool {
    text[byte_idx..].chars().next().map(|c| c.is_whitespace()).unwrap_or(false)
}

fn ends_with_abbreviation(prefix: &str) -> bool {
    let last_word = prefix.rsplit(char::is_whitespace).next().unwrap_or("");
    let last_word = last_word.to_lowercase();
    ABBREVIATIONS.iter().any(|a| last_word == *a)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub docs: Vec<Document>,
    /// Global sentence id -> (doc index, sentence index).
    sentence_index: Vec<(u32, u32)>,
}

impl Corpus {
    /// Builds a corpus from raw document texts: segment, count tokens, build
    /// the vocabulary, then encode every sentence. Documents that produce no
    /// sentences are dropped; an input with no usable documents is an error.
    pub fn ingest(doc_texts: &[String], min_count: u32) -> Result<Corpus> {
        let segmented: Vec<Vec<String>> =
            doc_texts.iter().map(|t| segment_document(t)).filter(|s| !s.is_empty()).collect();
        if segmented.is_empty() {
            return Err(Error::EmptyCorpus);
        }

        let mut counts: HashMap<String, u64> = HashMap::new();
        for doc in &segmented {
            for sentence in doc {
                for token in tokenize_words(sentence) {
                    *counts.entry(token).or_insert(0) += 1;
                }
            }
        }
        let vocab = Vocabulary::build(&counts, min_count);

        let mut docs = Vec::with_capacity(segmented.len());
        let mut next_sentence = 0u32;
        for (doc_id, raw_sentences) in segmented.into_iter().enumerate() {
            let sentences = raw_sentences
                .into_iter()
                .map(|raw| {
                    let s = Sentence { id: next_sentence, tokens: tokenize(&raw, &vocab), raw };
                    next_sentence += 1;
                    s
                })
                .collect();
            docs.push(Document { id: doc_id as u32, sentences });
        }
        Ok(Corpus::assemble(vocab, docs))
    }

    fn assemble(vocab: Vocabulary, docs: Vec<Document>) -> Corpus {
        let mut sentence_index = Vec::new();
        for (di, doc) in docs.iter().enumerate() {
            for (si, sentence) in doc.sentences.iter().enumerate() {
                debug_assert_eq!(sentence.id as usize, sentence_index.len());
                sentence_index.push((di as u32, si as u32));
            }
        }
        Corpus { vocab, docs, sentence_index }
    }

    pub fn n_sentences(&self) -> usize {
        self.sentence_index.len()
    }

    pub fn sentence(&self, id: u32) -> Option<&Sentence> {
        let &(di, si) = self.sentence_index.get(id as usize)?;
        Some(&self.docs[di as usize].sentences[si as usize])
    }

    /// The document a sentence belongs to.
    pub fn doc_of(&self, sentence_id: u32) -> Option<&Document> {
        let &(di, _) = self.sentence_index.get(sentence_id as usize)?;
        Some(&self.docs[di as usize])
    }

    pub fn sentences(&self) -> impl Iterator<Item = &Sentence> {
        self.docs.iter().flat_map(|d| d.sentences.iter())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        fileio::write_magic(&mut w, fileio::CORPUS_MAGIC)?;
        fileio::write_u32(&mut w, self.vocab.len() as u32)?;
        fileio::write_u32(&mut w, self.vocab.min_count)?;
        for id in 0..self.vocab.len() as u32 {
            fileio::write_str(&mut w, self.vocab.token(id).unwrap())?;
            fileio::write_u64(&mut w, self.vocab.count(id))?;
        }
        fileio::write_u32(&mut w, self.docs.len() as u32)?;
        for doc in &self.docs {
            fileio::write_u32(&mut w, doc.id)?;
            fileio::write_u32(&mut w, doc.sentences.len() as u32)?;
            for s in &doc.sentences {
                fileio::write_u32(&mut w, s.id)?;
                fileio::write_u32_slice(&mut w, &s.tokens)?;
                fileio::write_str(&mut w, &s.raw)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Corpus> {
        let mut r = BufReader::new(File::open(path)?);
        fileio::check_magic(&mut r, fileio::CORPUS_MAGIC, path)?;
        let vocab_len = fileio::read_u32(&mut r)? as usize;
        let min_count = fileio::read_u32(&mut r)?;
        let mut id_to_token = Vec::with_capacity(vocab_len);
        let mut counts = Vec::with_capacity(vocab_len);
        for _ in 0..vocab_len {
            id_to_token.push(fileio::read_str(&mut r)?);
            counts.push(fileio::read_u64(&mut r)?);
        }
        let token_to_id =
            id_to_token.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let vocab = Vocabulary { token_to_id, id_to_token, counts, min_count };

        let n_docs = fileio::read_u32(&mut r)? as usize;
        let mut docs = Vec::with_capacity(n_docs);
        for _ in 0..n_docs {
            let id = fileio::read_u32(&mut r)?;
            let n_sentences = fileio::read_u32(&mut r)? as usize;
            let mut sentences = Vec::with_capacity(n_sentences);
            for _ in 0..n_sentences {
                let sid = fileio::read_u32(&mut r)?;
                let tokens = fileio::read_u32_vec(&mut r)?;
                let raw = fileio::read_str(&mut r)?;
                sentences.push(Sentence { id: sid, tokens, raw });
            }
            docs.push(Document { id, sentences });
        }
        Ok(Corpus::assemble(vocab, docs))
    }
}

/// Splits raw input into document texts: one document per line, or
/// blank-line-separated paragraphs when `paragraph_mode` is set.
pub fn split_into_documents(text: &str, paragraph_mode: bool) -> Vec<String> {
    if paragraph_mode {
        text.split("\n\n")
            .map(|p| p.split_whitespace().collect::<Vec<_>>().join(" "))
            .filter(|p| !p.is_empty())
            .collect()
    } else {
        text.lines().map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect()
    }
}

/// Extracts every window with `left` predecessors and `right` successors from
/// one document, assigning chunk ids starting at `id_base`. A document with
/// `n` sentences yields `max(0, n - left - right)` windows.
pub fn extract_windows(
    doc: &Document,
    left: usize,
    right: usize,
    id_base: u32,
) -> Vec<ContextWindow> {
    assert!(left >= 1 && right >= 1, "window needs at least one sentence on each side");
    let n = doc.sentences.len();
    if n < left + right + 1 {
        return Vec::new();
    }
    (left..n - right)
        .map(|i| ContextWindow {
            chunk_id: id_base + (i - left) as u32,
            doc_id: doc.id,
            left: doc.sentences[i - left..i].to_vec(),
            center: doc.sentences[i].clone(),
            right: doc.sentences[i + 1..=i + right].to_vec(),
        })
        .collect()
}

/// Windows for the whole corpus with corpus-unique chunk ids.
pub fn extract_all_windows(corpus: &Corpus, left: usize, right: usize) -> Vec<ContextWindow> {
    let mut out = Vec::new();
    for doc in &corpus.docs {
        let windows = extract_windows(doc, left, right, out.len() as u32);
        out.extend(windows);
    }
    out
}

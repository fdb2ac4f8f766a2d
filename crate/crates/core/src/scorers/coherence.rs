//! Discriminative coherence classifier.
//!
//! A sentence triple (left context, center, right context) is encoded by
//! averaging token embeddings per part, and a logistic layer over the three
//! part encodings predicts whether the center belongs between its neighbors.
//! Negatives replace the center with another sentence, half from the same
//! document and half from elsewhere in the corpus.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::corpus::{ContextWindow, Corpus};
use crate::error::{Error, Result};
use crate::fileio;
use crate::util::derived_rng;

/// Where a negative example's replacement center came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeSource {
    SameDoc,
    Random,
}

/// A labeled window for classifier training. Negative examples carry the
/// original window with the center sentence swapped out.
#[derive(Debug, Clone)]
pub struct CoherenceExample {
    pub window: ContextWindow,
    /// true for an intact window, false for a corrupted one
    pub label: bool,
    pub negative_source: Option<NegativeSource>,
}

#[derive(Debug, Clone, Copy)]
pub struct CoherenceConfig {
    pub dim: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for CoherenceConfig {
    fn default() -> CoherenceConfig {
        CoherenceConfig { dim: 32, lr: 0.25, epochs: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceModel {
    vocab_size: usize,
    dim: usize,
    /// vocab_size rows of dim values
    embeddings: Vec<f64>,
    w_left: Vec<f64>,
    w_center: Vec<f64>,
    w_right: Vec<f64>,
    bias: f64,
    /// full-dataset mean loss recorded after each training epoch
    epoch_losses: Vec<f64>,
}

/// Dense gradient of the cross-entropy for one example, used by the
/// finite-difference check and mirrored by the sparse training updates.
#[derive(Debug, Clone)]
pub struct CoherenceGrad {
    pub embeddings: Vec<f64>,
    pub w_left: Vec<f64>,
    pub w_center: Vec<f64>,
    pub w_right: Vec<f64>,
    pub bias: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Cross-entropy of a logit against a 0/1 label without overflow.
fn bce_loss(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl CoherenceModel {
    /// All-zero model; predicts 0.5 everywhere.
    pub fn zeroed(vocab_size: usize, dim: usize) -> CoherenceModel {
        assert!(vocab_size > 0 && dim > 0);
        CoherenceModel {
            vocab_size,
            dim,
            embeddings: vec![0.0; vocab_size * dim],
            w_left: vec![0.0; dim],
            w_center: vec![0.0; dim],
            w_right: vec![0.0; dim],
            bias: 0.0,
            epoch_losses: Vec::new(),
        }
    }

    /// Parameters uniform in (-0.1, 0.1), bias zero.
    pub fn random_init(vocab_size: usize, dim: usize, seed: u64) -> CoherenceModel {
        let mut model = Self::zeroed(vocab_size, dim);
        let mut rng = derived_rng(seed, SALT_INIT);
        for slot in model
            .embeddings
            .iter_mut()
            .chain(model.w_left.iter_mut())
            .chain(model.w_center.iter_mut())
            .chain(model.w_right.iter_mut())
        {
            *slot = rng.random_range(-0.1..0.1);
        }
        model
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn epoch_losses(&self) -> &[f64] {
        &self.epoch_losses
    }

    pub fn final_train_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }

    /// Mean embedding of a token sequence; empty input encodes to zero.
    pub fn encode(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        if tokens.is_empty() {
            return Ok(out);
        }
        for &t in tokens {
            let row = self.embedding_row(t)?;
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let inv = 1.0 / tokens.len() as f64;
        for o in &mut out {
            *o *= inv;
        }
        Ok(out)
    }

    fn embedding_row(&self, token: u32) -> Result<&[f64]> {
        let idx = token as usize;
        if idx >= self.vocab_size {
            return Err(Error::TokenIdOutOfRange { id: token, vocab_size: self.vocab_size });
        }
        Ok(&self.embeddings[idx * self.dim..(idx + 1) * self.dim])
    }

    pub fn logit(&self, left: &[u32], center: &[u32], right: &[u32]) -> Result<f64> {
        Ok(self.side_affinity(left, right)? + self.center_term(center)?)
    }

    /// The candidate-independent part of the logit. Callers ranking many
    /// candidate centers against fixed contexts (or one center against many
    /// contexts) can cache one side and recompute only the other.
    pub fn side_affinity(&self, left: &[u32], right: &[u32]) -> Result<f64> {
        let e_left = self.encode(left)?;
        let e_right = self.encode(right)?;
        Ok(dot(&self.w_left, &e_left) + dot(&self.w_right, &e_right) + self.bias)
    }

    /// The center-dependent part of the logit.
    pub fn center_term(&self, center: &[u32]) -> Result<f64> {
        Ok(dot(&self.w_center, &self.encode(center)?))
    }

    /// Probability that the center sentence belongs between the contexts.
    /// Strictly inside (0,1) for finite parameters: the sigmoid saturates to
    /// exactly 0 or 1 for huge logits in floating point, so the result is
    /// clamped to the nearest interior values and its log stays finite.
    pub fn coherence_prob(&self, left: &[u32], center: &[u32], right: &[u32]) -> Result<f64> {
        let p = sigmoid(self.logit(left, center, right)?);
        Ok(p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
    }

    fn example_parts(ex: &CoherenceExample) -> (Vec<u32>, &[u32], Vec<u32>) {
        (ex.window.left_tokens(), &ex.window.center.tokens, ex.window.right_tokens())
    }

    pub fn example_loss(&self, ex: &CoherenceExample) -> Result<f64> {
        let (left, center, right) = Self::example_parts(ex);
        let z = self.logit(&left, center, &right)?;
        Ok(bce_loss(z, ex.label as u8 as f64))
    }

    /// Mean cross-entropy over a dataset.
    pub fn dataset_loss(&self, examples: &[CoherenceExample]) -> Result<f64> {
        assert!(!examples.is_empty());
        let mut total = 0.0;
        for ex in examples {
            total += self.example_loss(ex)?;
        }
        Ok(total / examples.len() as f64)
    }

    /// Loss and full dense gradient for one example.
    pub fn loss_and_grad(&self, ex: &CoherenceExample) -> Result<(f64, CoherenceGrad)> {
        let (left, center, right) = Self::example_parts(ex);
        let e_left = self.encode(&left)?;
        let e_center = self.encode(center)?;
        let e_right = self.encode(&right)?;
        let z = dot(&self.w_left, &e_left)
            + dot(&self.w_center, &e_center)
            + dot(&self.w_right, &e_right)
            + self.bias;
        let y = ex.label as u8 as f64;
        let dz = sigmoid(z) - y;

        let mut grad = CoherenceGrad {
            embeddings: vec![0.0; self.embeddings.len()],
            w_left: e_left.iter().map(|v| dz * v).collect(),
            w_center: e_center.iter().map(|v| dz * v).collect(),
            w_right: e_right.iter().map(|v| dz * v).collect(),
            bias: dz,
        };
        for (tokens, w) in
            [(&left[..], &self.w_left), (center, &self.w_center), (&right[..], &self.w_right)]
        {
            if tokens.is_empty() {
                continue;
            }
            let scale = dz / tokens.len() as f64;
            for &t in tokens {
                let base = t as usize * self.dim;
                for (i, &wv) in w.iter().enumerate() {
                    grad.embeddings[base + i] += scale * wv;
                }
            }
        }
        Ok((bce_loss(z, y), grad))
    }

    /// One stochastic gradient step; the sparse twin of loss_and_grad.
    fn apply_example(&mut self, ex: &CoherenceExample, lr: f64) -> Result<()> {
        let (left, center, right) = Self::example_parts(ex);
        let e_left = self.encode(&left)?;
        let e_center = self.encode(center)?;
        let e_right = self.encode(&right)?;
        let z = dot(&self.w_left, &e_left)
            + dot(&self.w_center, &e_center)
            + dot(&self.w_right, &e_right)
            + self.bias;
        let dz = sigmoid(z) - ex.label as u8 as f64;
        let step = lr * dz;

        // Embedding rows move against the pre-step weight vectors, so they
        // update before the weights do.
        nudge_embeddings(&mut self.embeddings, self.dim, &left, &self.w_left, step);
        nudge_embeddings(&mut self.embeddings, self.dim, center, &self.w_center, step);
        nudge_embeddings(&mut self.embeddings, self.dim, &right, &self.w_right, step);
        axpy(&mut self.w_left, &e_left, -step);
        axpy(&mut self.w_center, &e_center, -step);
        axpy(&mut self.w_right, &e_right, -step);
        self.bias -= step;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        fileio::write_magic(&mut w, fileio::COHERENCE_MAGIC)?;
        fileio::write_u32(&mut w, self.vocab_size as u32)?;
        fileio::write_u32(&mut w, self.dim as u32)?;
        fileio::write_f64(&mut w, self.bias)?;
        fileio::write_f64_slice(&mut w, &self.embeddings)?;
        fileio::write_f64_slice(&mut w, &self.w_left)?;
        fileio::write_f64_slice(&mut w, &self.w_center)?;
        fileio::write_f64_slice(&mut w, &self.w_right)?;
        fileio::write_f64_slice(&mut w, &self.epoch_losses)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<CoherenceModel> {
        let mut r = BufReader::new(File::open(path)?);
        fileio::check_magic(&mut r, fileio::COHERENCE_MAGIC, path)?;
        let vocab_size = fileio::read_u32(&mut r)? as usize;
        let dim = fileio::read_u32(&mut r)? as usize;
        let bias = fileio::read_f64(&mut r)?;
        let embeddings = fileio::read_f64_vec(&mut r)?;
        if embeddings.len() != vocab_size * dim {
            return Err(Error::Format(format!(
                "embedding table holds {} values, expected {}",
                embeddings.len(),
                vocab_size * dim
            )));
        }
        let w_left = fileio::read_f64_vec(&mut r)?;
        let w_center = fileio::read_f64_vec(&mut r)?;
        let w_right = fileio::read_f64_vec(&mut r)?;
        for w in [&w_left, &w_center, &w_right] {
            if w.len() != dim {
                return Err(Error::Format("weight vector length mismatch".into()));
            }
        }
        let epoch_losses = fileio::read_f64_vec(&mut r)?;
        Ok(CoherenceModel {
            vocab_size,
            dim,
            embeddings,
            w_left,
            w_center,
            w_right,
            bias,
            epoch_losses,
        })
    }
}

fn nudge_embeddings(embeddings: &mut [f64], dim: usize, tokens: &[u32], w: &[f64], step: f64) {
    if tokens.is_empty() {
        return;
    }
    let scale = step / tokens.len() as f64;
    for &t in tokens {
        let base = t as usize * dim;
        for (i, &wv) in w.iter().enumerate() {
            embeddings[base + i] -= scale * wv;
        }
    }
}

fn axpy(acc: &mut [f64], v: &[f64], a: f64) {
    for (x, &y) in acc.iter_mut().zip(v) {
        *x += a * y;
    }
}

const SALT_INIT: u64 = 0x636f_6831;
const SALT_SHUFFLE: u64 = 0x636f_6832;
const SALT_NEGATIVES: u64 = 0x6e65_6761_0000_0000;

/// Builds the negative examples for one window: one center replacement from
/// the same document and one sentence from elsewhere in the corpus, each
/// drawn uniformly. A degenerate document (no alternative sentence) or a
/// single-document corpus drops the corresponding negative.
pub fn make_negatives(
    corpus: &Corpus,
    window: &ContextWindow,
    seed: u64,
) -> Vec<CoherenceExample> {
    let mut rng = derived_rng(seed, SALT_NEGATIVES | window.chunk_id as u64);
    let mut out = Vec::with_capacity(2);
    let doc = &corpus.docs[window.doc_id as usize];

    let same_doc: Vec<u32> = doc
        .sentences
        .iter()
        .filter(|s| s.id != window.center.id)
        .map(|s| s.id)
        .collect();
    if let Some(&pick) = same_doc.choose(&mut rng) {
        out.push(negative(corpus, window, pick, NegativeSource::SameDoc));
    }

    let elsewhere: Vec<u32> = corpus
        .docs
        .iter()
        .filter(|d| d.id != window.doc_id)
        .flat_map(|d| d.sentences.iter().map(|s| s.id))
        .collect();
    if let Some(&pick) = elsewhere.choose(&mut rng) {
        out.push(negative(corpus, window, pick, NegativeSource::Random));
    }
    out
}

fn negative(
    corpus: &Corpus,
    window: &ContextWindow,
    replacement: u32,
    source: NegativeSource,
) -> CoherenceExample {
    let mut corrupted = window.clone();
    corrupted.center =
        corpus.sentence(replacement).expect("replacement id comes from this corpus").clone();
    CoherenceExample { window: corrupted, label: false, negative_source: Some(source) }
}

/// One positive plus its negatives for every window.
pub fn build_training_set(
    corpus: &Corpus,
    windows: &[ContextWindow],
    seed: u64,
) -> Vec<CoherenceExample> {
    let mut out = Vec::with_capacity(windows.len() * 3);
    for window in windows {
        out.push(CoherenceExample { window: window.clone(), label: true, negative_source: None });
        out.extend(make_negatives(corpus, window, seed));
    }
    out
}

/// Stochastic gradient training of the classifier. The visit order is
/// shuffled once up front and reused every epoch, and the recorded loss after
/// each epoch is the mean over the whole dataset.
pub fn train_coherence(
    examples: &[CoherenceExample],
    vocab_size: usize,
    config: &CoherenceConfig,
) -> Result<CoherenceModel> {
    let has_pos = examples.iter().any(|e| e.label);
    let has_neg = examples.iter().any(|e| !e.label);
    if !(has_pos && has_neg) {
        return Err(Error::SingleLabelDataset);
    }

    let mut model = CoherenceModel::random_init(vocab_size, config.dim, config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut derived_rng(config.seed, SALT_SHUFFLE));

    let mut losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        for &i in &order {
            model.apply_example(&examples[i], config.lr)?;
        }
        losses.push(model.dataset_loss(examples)?);
    }
    model.epoch_losses = losses;
    Ok(model)
}

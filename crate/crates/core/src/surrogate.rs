//! The distilled sentence encoder.
//!
//! A Siamese bag-of-embeddings model: every sentence becomes the mean of its
//! token embeddings, optionally pushed through one linear projection, and the
//! similarity of two sentences is the cosine of their encodings. Training
//! minimizes the mean squared difference between predicted similarity and the
//! harvested pipeline score, with Adam over shuffled mini-batches, exact
//! gradients through the cosine, and early stopping on dev loss. Encodings
//! can be cached in an [EmbeddingStore] for fast lookup, which reproduces
//! direct predictions bit for bit.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Sentence, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::parse_pair_line;
use crate::fileio::{
    check_magic, read_f64_vec, read_u32, read_u64, write_f64_slice, write_magic, write_u32,
    write_u64, EMBEDDING_MAGIC, SURROGATE_MAGIC,
};
use crate::harvest::{PairRecord, Split};
use crate::origin::cosine;
use crate::util::derived_rng;

const SALT_SUR_INIT: u64 = 0x7375_7201;
const SALT_SUR_EPOCH: u64 = 0x7375_7202;

/// Linear layer applied after pooling: `out = weight · pooled + bias`.
#[derive(Debug, Clone, PartialEq)]
struct Projection {
    /// Row-major d × d matrix.
    weight: Vec<f64>,
    bias: Vec<f64>,
}

/// All learnable parameters of the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateParams {
    dim: usize,
    vocab_size: usize,
    /// Row-major V × d token embedding table.
    embeddings: Vec<f64>,
    projection: Option<Projection>,
}

impl SurrogateParams {
    /// Fresh parameters: embeddings uniform in (-0.1, 0.1), projection close
    /// to identity so early training behaves like plain mean pooling.
    pub fn init(vocab_size: usize, dim: usize, with_projection: bool, seed: u64) -> SurrogateParams {
        assert!(dim >= 1, "embedding width must be at least 1");
        assert!(vocab_size >= 1, "vocabulary must be non-empty");
        let mut rng = derived_rng(seed, SALT_SUR_INIT);
        let embeddings = (0..vocab_size * dim).map(|_| rng.random_range(-0.1..0.1)).collect();
        let projection = with_projection.then(|| {
            let mut weight = vec![0.0; dim * dim];
            for (i, w) in weight.iter_mut().enumerate() {
                let identity = if i % dim == i / dim { 1.0 } else { 0.0 };
                *w = identity + rng.random_range(-0.01..0.01);
            }
            Projection { weight, bias: vec![0.0; dim] }
        });
        SurrogateParams { dim, vocab_size, embeddings, projection }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn has_projection(&self) -> bool {
        self.projection.is_some()
    }

    /// Mean of the token embedding rows. Tokens are pooled in sorted order so
    /// that any permutation of the sentence produces the identical vector.
    fn pool(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        if tokens.is_empty() {
            return Err(Error::EmptySentence);
        }
        let mut sorted = tokens.to_vec();
        sorted.sort_unstable();
        if let Some(&worst) = sorted.last() {
            if worst as usize >= self.vocab_size {
                return Err(Error::TokenIdOutOfRange { id: worst, vocab_size: self.vocab_size });
            }
        }
        let mut pooled = vec![0.0; self.dim];
        for &t in &sorted {
            let row = &self.embeddings[t as usize * self.dim..][..self.dim];
            for (p, r) in pooled.iter_mut().zip(row) {
                *p += r;
            }
        }
        let inv = 1.0 / tokens.len() as f64;
        for p in pooled.iter_mut() {
            *p *= inv;
        }
        Ok(pooled)
    }

    fn project(&self, pooled: &[f64]) -> Vec<f64> {
        match &self.projection {
            None => pooled.to_vec(),
            Some(proj) => {
                let mut out = proj.bias.clone();
                for i in 0..self.dim {
                    let row = &proj.weight[i * self.dim..][..self.dim];
                    let mut acc = 0.0;
                    for (w, p) in row.iter().zip(pooled) {
                        acc += w * p;
                    }
                    out[i] += acc;
                }
                out
            }
        }
    }

    /// Encodes a sentence to its d-dimensional vector.
    pub fn encode(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        Ok(self.project(&self.pool(tokens)?))
    }

    /// Cosine similarity of two encoded sentences.
    pub fn predict_similarity(&self, tokens1: &[u32], tokens2: &[u32]) -> Result<f64> {
        cosine(&self.encode(tokens1)?, &self.encode(tokens2)?)
    }

    /// Squared error of one example, accumulating `error · dcos/dparam` into
    /// `grads` (the caller applies the 2/batch factor).
    fn example_grad(&self, ex: &TrainExample, grads: &mut Gradients) -> Result<f64> {
        let p1 = self.pool(&ex.tokens1)?;
        let p2 = self.pool(&ex.tokens2)?;
        let u = self.project(&p1);
        let v = self.project(&p2);
        let norm_u = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let norm_v = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm_u == 0.0 || norm_v == 0.0 {
            return Err(Error::ZeroVector);
        }
        // Same arithmetic as the shared cosine, kept open so the norms feed
        // the backward pass.
        let c = if u == v {
            1.0
        } else {
            u.iter().zip(&v).map(|(x, y)| x * y).sum::<f64>() / (norm_u * norm_v)
        };
        let e = c - ex.target;
        if e == 0.0 {
            return Ok(0.0);
        }
        let cross = norm_u * norm_v;
        let g_u: Vec<f64> = (0..self.dim)
            .map(|i| e * (v[i] / cross - c * u[i] / (norm_u * norm_u)))
            .collect();
        let g_v: Vec<f64> = (0..self.dim)
            .map(|i| e * (u[i] / cross - c * v[i] / (norm_v * norm_v)))
            .collect();
        self.backprop_side(&ex.tokens1, &p1, &g_u, grads);
        self.backprop_side(&ex.tokens2, &p2, &g_v, grads);
        Ok(e * e)
    }

    /// Pushes an output-side gradient through the projection and the mean
    /// pooling of one sentence.
    fn backprop_side(&self, tokens: &[u32], pooled: &[f64], g_out: &[f64], grads: &mut Gradients) {
        let d = self.dim;
        let g_pooled = match &self.projection {
            None => g_out.to_vec(),
            Some(proj) => {
                let mut g_pooled = vec![0.0; d];
                for i in 0..d {
                    let gi = g_out[i];
                    grads.proj_b[i] += gi;
                    let w_row = &proj.weight[i * d..][..d];
                    let gw_row = &mut grads.proj_w[i * d..][..d];
                    for j in 0..d {
                        gw_row[j] += gi * pooled[j];
                        g_pooled[j] += w_row[j] * gi;
                    }
                }
                g_pooled
            }
        };
        let inv = 1.0 / tokens.len() as f64;
        for &t in tokens {
            let row = &mut grads.embeddings[t as usize * d..][..d];
            for (slot, g) in row.iter_mut().zip(&g_pooled) {
                *slot += g * inv;
            }
        }
    }

    /// Mean squared error over the batch and its exact gradient.
    pub fn loss_and_grad(&self, batch: &[TrainExample]) -> Result<(f64, Gradients)> {
        assert!(!batch.is_empty(), "batch must be non-empty");
        let mut grads = Gradients::zeroed(self);
        let mut squared = 0.0;
        for ex in batch {
            squared += self.example_grad(ex, &mut grads)?;
        }
        grads.scale(2.0 / batch.len() as f64);
        Ok((squared / batch.len() as f64, grads))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write_magic(&mut w, SURROGATE_MAGIC)?;
        write_u32(&mut w, self.dim as u32)?;
        write_u32(&mut w, self.vocab_size as u32)?;
        write_u32(&mut w, u32::from(self.projection.is_some()))?;
        write_f64_slice(&mut w, &self.embeddings)?;
        if let Some(proj) = &self.projection {
            write_f64_slice(&mut w, &proj.weight)?;
            write_f64_slice(&mut w, &proj.bias)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SurrogateParams> {
        let mut r = BufReader::new(File::open(path)?);
        check_magic(&mut r, SURROGATE_MAGIC, path)?;
        let dim = read_u32(&mut r)? as usize;
        let vocab_size = read_u32(&mut r)? as usize;
        let has_projection = read_u32(&mut r)? != 0;
        let embeddings = read_f64_vec(&mut r)?;
        if embeddings.len() != dim * vocab_size {
            return Err(Error::Format(format!(
                "embedding table holds {} values, expected {}",
                embeddings.len(),
                dim * vocab_size
            )));
        }
        let projection = if has_projection {
            let weight = read_f64_vec(&mut r)?;
            let bias = read_f64_vec(&mut r)?;
            if weight.len() != dim * dim || bias.len() != dim {
                return Err(Error::Format("projection shape mismatch".to_string()));
            }
            Some(Projection { weight, bias })
        } else {
            None
        };
        Ok(SurrogateParams { dim, vocab_size, embeddings, projection })
    }
}

/// Gradient blocks matching [SurrogateParams]. Projection blocks are empty
/// when the model has none.
#[derive(Debug, Clone)]
pub struct Gradients {
    embeddings: Vec<f64>,
    proj_w: Vec<f64>,
    proj_b: Vec<f64>,
}

impl Gradients {
    fn zeroed(params: &SurrogateParams) -> Gradients {
        let (w, b) = match &params.projection {
            Some(_) => (params.dim * params.dim, params.dim),
            None => (0, 0),
        };
        Gradients {
            embeddings: vec![0.0; params.embeddings.len()],
            proj_w: vec![0.0; w],
            proj_b: vec![0.0; b],
        }
    }

    fn scale(&mut self, factor: f64) {
        for g in self
            .embeddings
            .iter_mut()
            .chain(self.proj_w.iter_mut())
            .chain(self.proj_b.iter_mut())
        {
            *g *= factor;
        }
    }

    fn max_abs(&self) -> f64 {
        self.embeddings
            .iter()
            .chain(self.proj_w.iter())
            .chain(self.proj_b.iter())
            .fold(0.0, |acc: f64, g| acc.max(g.abs()))
    }
}

/// One tokenized training pair with its cosine-scale target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub tokens1: Vec<u32>,
    pub tokens2: Vec<u32>,
    pub target: f64,
}

/// Adam settings and training-loop knobs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dim: usize,
    pub with_projection: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Consecutive non-improving epochs tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            dim: 64,
            with_projection: true,
            epochs: 20,
            batch_size: 32,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            patience: 3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 1 {
            return Err(Error::Config("embedding width must be at least 1".to_string()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch size must be at least 1".to_string()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".to_string()));
        }
        if self.lr < 0.0 || self.eps <= 0.0 {
            return Err(Error::Config("learning rate and epsilon must be non-negative".to_string()));
        }
        Ok(())
    }
}

/// First/second moment accumulators for every parameter block.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    m: Gradients,
    v: Gradients,
    step: u64,
}

impl OptimizerState {
    fn new(params: &SurrogateParams) -> OptimizerState {
        OptimizerState { m: Gradients::zeroed(params), v: Gradients::zeroed(params), step: 0 }
    }
}

fn adam_block(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    config: &TrainConfig,
    bias1: f64,
    bias2: f64,
) {
    for i in 0..theta.len() {
        m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grad[i];
        v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
        theta[i] -= config.lr * (m[i] / bias1) / ((v[i] / bias2).sqrt() + config.eps);
    }
}

fn adam_step(
    params: &mut SurrogateParams,
    grads: &Gradients,
    opt: &mut OptimizerState,
    config: &TrainConfig,
) {
    opt.step += 1;
    let bias1 = 1.0 - config.beta1.powi(opt.step as i32);
    let bias2 = 1.0 - config.beta2.powi(opt.step as i32);
    adam_block(
        &mut params.embeddings,
        &grads.embeddings,
        &mut opt.m.embeddings,
        &mut opt.v.embeddings,
        config,
        bias1,
        bias2,
    );
    if let Some(proj) = &mut params.projection {
        adam_block(&mut proj.weight, &grads.proj_w, &mut opt.m.proj_w, &mut opt.v.proj_w, config, bias1, bias2);
        adam_block(&mut proj.bias, &grads.proj_b, &mut opt.m.proj_b, &mut opt.v.proj_b, config, bias1, bias2);
    }
}

/// What one training run did: loss curves, the chosen checkpoint, the seed.
/// `dev_l2[0]` is measured before any update, so `best_checkpoint` of 0 means
/// training never beat the initial parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub dev_l2: Vec<f64>,
    pub best_checkpoint: usize,
    pub seed: u64,
}

/// Mean squared difference between predictions and targets.
pub fn mean_squared_error(params: &SurrogateParams, examples: &[TrainExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::DatasetTooSmall(0));
    }
    let squares: Vec<f64> = examples
        .par_iter()
        .map(|ex| {
            let pred = params.predict_similarity(&ex.tokens1, &ex.tokens2)?;
            Ok((pred - ex.target).powi(2))
        })
        .collect::<Result<_>>()?;
    Ok(squares.iter().sum::<f64>() / examples.len() as f64)
}

/// Tokenizes the records of one split. Rows whose text tokenizes to nothing
/// are dropped with a warning.
pub fn examples_for_split(
    records: &[PairRecord],
    split: Split,
    vocab: &Vocabulary,
) -> Vec<TrainExample> {
    let mut examples = Vec::new();
    for r in records.iter().filter(|r| r.split == split) {
        let tokens1 = tokenize(&r.text1, vocab);
        let tokens2 = tokenize(&r.text2, vocab);
        if tokens1.is_empty() || tokens2.is_empty() {
            log::warn!("dropping pair ({}, {}): empty tokenization", r.sent1_id, r.sent2_id);
            continue;
        }
        examples.push(TrainExample { tokens1, tokens2, target: r.origin_score });
    }
    examples
}

fn train_loop(
    mut params: SurrogateParams,
    train: &[TrainExample],
    dev: &[TrainExample],
    config: &TrainConfig,
) -> Result<(SurrogateParams, TrainReport)> {
    let mut opt = OptimizerState::new(&params);
    let initial = mean_squared_error(&params, dev)?;
    let mut report = TrainReport {
        epoch_losses: Vec::new(),
        dev_l2: vec![initial],
        best_checkpoint: 0,
        seed: config.seed,
    };
    let mut best = (initial, params.clone());
    let mut since_best = 0;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = derived_rng(config.seed, SALT_SUR_EPOCH ^ epoch as u64);
        order.shuffle(&mut rng);
        let mut squared_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mut grads = Gradients::zeroed(&params);
            let mut batch_sq = 0.0;
            for &idx in chunk {
                batch_sq += params.example_grad(&train[idx], &mut grads)?;
            }
            grads.scale(2.0 / chunk.len() as f64);
            adam_step(&mut params, &grads, &mut opt, config);
            squared_sum += batch_sq;
        }
        report.epoch_losses.push(squared_sum / train.len() as f64);
        let dev_now = mean_squared_error(&params, dev)?;
        report.dev_l2.push(dev_now);
        if dev_now < best.0 {
            best = (dev_now, params.clone());
            report.best_checkpoint = epoch + 1;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    Ok((best.1, report))
}

/// Trains a fresh encoder on the harvested records, returning the checkpoint
/// with the lowest dev loss. Both a train and a dev split must be present.
pub fn train(
    records: &[PairRecord],
    vocab: &Vocabulary,
    config: &TrainConfig,
) -> Result<(SurrogateParams, TrainReport)> {
    config.validate()?;
    let train_ex = examples_for_split(records, Split::Train, vocab);
    let dev_ex = examples_for_split(records, Split::Dev, vocab);
    if train_ex.is_empty() || dev_ex.is_empty() {
        return Err(Error::DatasetTooSmall(train_ex.len().min(dev_ex.len())));
    }
    let params = SurrogateParams::init(vocab.len(), config.dim, config.with_projection, config.seed);
    train_loop(params, &train_ex, &dev_ex, config)
}

/// Maps a gold score on the [0, 5] annotation scale to the cosine range:
/// rescale to [0, 1], then affine to [-1, 1].
pub fn gold_to_target(gold: f64) -> f64 {
    2.0 * (gold / 5.0) - 1.0
}

/// Continues training from existing parameters on a labeled
/// "sent1<TAB>sent2<TAB>gold" file with gold scores in [0, 5]. Malformed rows
/// are rejected outright with their line number. The labeled set is small and
/// fully used for updates, so the early-stopping loss is measured on it too.
pub fn finetune(
    params: &SurrogateParams,
    tsv_path: &Path,
    vocab: &Vocabulary,
    config: &TrainConfig,
) -> Result<(SurrogateParams, TrainReport)> {
    config.validate()?;
    let text = std::fs::read_to_string(tsv_path)?;
    let mut examples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (s1, s2, gold) = parse_pair_line(i + 1, line)?;
        if !(0.0..=5.0).contains(&gold) {
            return Err(Error::MalformedRow {
                line: i + 1,
                reason: format!("gold score {gold} outside [0, 5]"),
            });
        }
        let tokens1 = tokenize(&s1, vocab);
        let tokens2 = tokenize(&s2, vocab);
        if tokens1.is_empty() || tokens2.is_empty() {
            return Err(Error::MalformedRow {
                line: i + 1,
                reason: "sentence produced no tokens".to_string(),
            });
        }
        examples.push(TrainExample { tokens1, tokens2, target: gold_to_target(gold) });
    }
    if examples.is_empty() {
        return Err(Error::DatasetTooSmall(0));
    }
    train_loop(params.clone(), &examples, &examples, config)
}

/// Precomputed sentence encodings keyed by sentence id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<u32>,
    /// Row-major n × d matrix, rows aligned with `ids`.
    vectors: Vec<f64>,
    rows: HashMap<u32, usize>,
}

/// Encodes every sentence once. Queries against the store reproduce
/// [SurrogateParams::predict_similarity] exactly, because they run the same
/// cosine over the same stored vectors.
pub fn cache_embeddings(
    params: &SurrogateParams,
    sentences: &[Sentence],
) -> Result<EmbeddingStore> {
    let mut store = EmbeddingStore {
        dim: params.dim,
        ids: Vec::with_capacity(sentences.len()),
        vectors: Vec::with_capacity(sentences.len() * params.dim),
        rows: HashMap::with_capacity(sentences.len()),
    };
    for s in sentences {
        if store.rows.insert(s.id, store.ids.len()).is_some() {
            return Err(Error::Format(format!("duplicate sentence id {} in embedding cache", s.id)));
        }
        store.ids.push(s.id);
        store.vectors.extend(params.encode(&s.tokens)?);
    }
    Ok(store)
}

impl EmbeddingStore {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, id: u32) -> Result<&[f64]> {
        let row = *self.rows.get(&id).ok_or(Error::UnknownSentenceId(id))?;
        Ok(&self.vectors[row * self.dim..][..self.dim])
    }

    /// Cosine of two cached encodings.
    pub fn similarity(&self, id1: u32, id2: u32) -> Result<f64> {
        cosine(self.vector(id1)?, self.vector(id2)?)
    }

    /// The k nearest sentences to `id` by cached cosine, excluding itself.
    /// Ties break toward the smaller id.
    pub fn top_k(&self, id: u32, k: usize) -> Result<Vec<(u32, f64)>> {
        let query = self.vector(id)?;
        let mut scored = Vec::with_capacity(self.len().saturating_sub(1));
        for (row, &other) in self.ids.iter().enumerate() {
            if other == id {
                continue;
            }
            let vec = &self.vectors[row * self.dim..][..self.dim];
            scored.push((other, cosine(query, vec)?));
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write_magic(&mut w, EMBEDDING_MAGIC)?;
        write_u64(&mut w, self.ids.len() as u64)?;
        write_u32(&mut w, self.dim as u32)?;
        for (row, &id) in self.ids.iter().enumerate() {
            write_u32(&mut w, id)?;
            write_f64_slice(&mut w, &self.vectors[row * self.dim..][..self.dim])?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<EmbeddingStore> {
        let mut r = BufReader::new(File::open(path)?);
        check_magic(&mut r, EMBEDDING_MAGIC, path)?;
        let n = read_u64(&mut r)? as usize;
        let dim = read_u32(&mut r)? as usize;
        let mut store = EmbeddingStore {
            dim,
            ids: Vec::with_capacity(n),
            vectors: Vec::with_capacity(n * dim),
            rows: HashMap::with_capacity(n),
        };
        for _ in 0..n {
            let id = read_u32(&mut r)?;
            let vec = read_f64_vec(&mut r)?;
            if vec.len() != dim {
                return Err(Error::Format("embedding row width mismatch".to_string()));
            }
            store.rows.insert(id, store.ids.len());
            store.ids.push(id);
            store.vectors.extend(vec);
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Corpus;
    use crate::eval::spearman;

    fn toy_params(vocab: usize, dim: usize, with_projection: bool) -> SurrogateParams {
        SurrogateParams::init(vocab, dim, with_projection, 42)
    }

    fn random_tokens(rng: &mut impl Rng, vocab: usize, len: usize) -> Vec<u32> {
        (0..len).map(|_| rng.random_range(0..vocab as u32)).collect()
    }

    #[test]
    fn single_token_encoding_is_its_embedding_row() {
        let params = toy_params(20, 6, false);
        let encoded = params.encode(&[7]).unwrap();
        assert_eq!(encoded, params.embeddings[7 * 6..8 * 6].to_vec());
    }

    #[test]
    fn encoding_ignores_token_order() {
        let params = toy_params(30, 8, true);
        let a = params.encode(&[3, 9, 4, 9]).unwrap();
        let b = params.encode(&[9, 4, 9, 3]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn encoding_matches_hand_computed_affine() {
        let params = toy_params(10, 4, true);
        let tokens = [2u32, 5];
        let d = 4;
        let mut pooled = vec![0.0; d];
        for j in 0..d {
            pooled[j] = (params.embeddings[2 * d + j] + params.embeddings[5 * d + j]) / 2.0;
        }
        let proj = params.projection.as_ref().unwrap();
        let mut expected = vec![0.0; d];
        for i in 0..d {
            let mut acc = proj.bias[i];
            for j in 0..d {
                acc += proj.weight[i * d + j] * pooled[j];
            }
            expected[i] = acc;
        }
        let encoded = params.encode(&tokens).unwrap();
        for (got, want) in encoded.iter().zip(&expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn degenerate_sentences_are_rejected() {
        let params = toy_params(10, 4, true);
        assert!(matches!(params.encode(&[]), Err(Error::EmptySentence)));
        assert!(matches!(
            params.encode(&[10]),
            Err(Error::TokenIdOutOfRange { id: 10, vocab_size: 10 })
        ));
    }

    #[test]
    fn predictions_are_symmetric_unit_on_self_and_bounded() {
        let params = toy_params(40, 8, true);
        let mut rng = derived_rng(3, 0x7072_6564);
        for _ in 0..20 {
            let (la, lb) = (rng.random_range(1..6), rng.random_range(1..6));
            let a = random_tokens(&mut rng, 40, la);
            let b = random_tokens(&mut rng, 40, lb);
            let ab = params.predict_similarity(&a, &b).unwrap();
            let ba = params.predict_similarity(&b, &a).unwrap();
            assert_eq!(ab, ba);
            assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&ab));
            assert_eq!(params.predict_similarity(&a, &a).unwrap(), 1.0);
        }
    }

    #[test]
    fn zero_error_means_zero_loss_and_zero_gradient() {
        let params = toy_params(30, 8, true);
        let tokens1 = vec![1, 4, 9];
        let tokens2 = vec![2, 8];
        let target = params.predict_similarity(&tokens1, &tokens2).unwrap();
        let batch = [TrainExample { tokens1, tokens2, target }];
        let (loss, grads) = params.loss_and_grad(&batch).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let params = toy_params(30, 8, true);
        let mut rng = derived_rng(5, 0x6664_6666);
        let batch: Vec<TrainExample> = (0..4)
            .map(|_| {
                let (l1, l2) = (rng.random_range(2..6), rng.random_range(2..6));
                TrainExample {
                    tokens1: random_tokens(&mut rng, 30, l1),
                    tokens2: random_tokens(&mut rng, 30, l2),
                    target: rng.random_range(-1.0..1.0),
                }
            })
            .collect();
        let (_, analytic) = params.loss_and_grad(&batch).unwrap();
        let h = 1e-5;
        let mut worst = 0.0f64;
        let mut check = |analytic_g: f64, mutate: &mut dyn FnMut(&mut SurrogateParams, f64)| {
            let mut plus = params.clone();
            mutate(&mut plus, h);
            let mut minus = params.clone();
            mutate(&mut minus, -h);
            let numeric = (plus.loss_and_grad(&batch).unwrap().0
                - minus.loss_and_grad(&batch).unwrap().0)
                / (2.0 * h);
            let rel = (analytic_g - numeric).abs() / f64::max(1e-8, analytic_g.abs() + numeric.abs());
            worst = worst.max(rel);
        };
        for i in 0..params.embeddings.len() {
            check(analytic.embeddings[i], &mut |p, delta| p.embeddings[i] += delta);
        }
        let d = params.dim;
        for i in 0..d * d {
            check(analytic.proj_w[i], &mut |p, delta| {
                p.projection.as_mut().unwrap().weight[i] += delta;
            });
        }
        for i in 0..d {
            check(analytic.proj_b[i], &mut |p, delta| {
                p.projection.as_mut().unwrap().bias[i] += delta;
            });
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn duplicating_the_batch_changes_nothing() {
        let params = toy_params(30, 8, true);
        let mut rng = derived_rng(6, 0x6475_7065);
        let base: Vec<TrainExample> = (0..3)
            .map(|_| TrainExample {
                tokens1: random_tokens(&mut rng, 30, 3),
                tokens2: random_tokens(&mut rng, 30, 4),
                target: rng.random_range(-1.0..1.0),
            })
            .collect();
        let doubled: Vec<TrainExample> =
            base.iter().chain(base.iter()).cloned().collect();
        let (loss_a, grads_a) = params.loss_and_grad(&base).unwrap();
        let (loss_b, grads_b) = params.loss_and_grad(&doubled).unwrap();
        assert!((loss_a - loss_b).abs() < 1e-12);
        for (a, b) in grads_a.embeddings.iter().zip(&grads_b.embeddings) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in grads_a.proj_w.iter().zip(&grads_b.proj_w) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    /// Two interleaved word groups; same-group pairs are similar, cross-group
    /// pairs are not, so the simple encoder can learn the pattern.
    fn synthetic_records(n: usize) -> (Vec<PairRecord>, Vocabulary) {
        let vocab_words = [
            "ash", "bay", "cedar", "dune", "elm", "fern", "gale", "hail", "iris", "jade",
        ];
        let docs =
            vec![format!("{} together now.", vocab_words.join(" "))];
        let corpus = Corpus::ingest(&docs, 1).unwrap();
        let mut rng = derived_rng(8, 0x7379_6e74);
        let mut records = Vec::new();
        for i in 0..n {
            let same_group = i % 2 == 0;
            let group = rng.random_range(0..2usize) * 5;
            let pick = |rng: &mut rand_chacha::ChaCha8Rng, base: usize| {
                let words: Vec<&str> = (0..3)
                    .map(|_| vocab_words[base + rng.random_range(0..5usize)])
                    .collect();
                words.join(" ")
            };
            let text1 = pick(&mut rng, group);
            let (text2, score) = if same_group {
                (pick(&mut rng, group), rng.random_range(0.7..0.95))
            } else {
                (pick(&mut rng, 5 - group), rng.random_range(-0.2..0.2))
            };
            let split = match i % 10 {
                8 => Split::Dev,
                9 => Split::Test,
                _ => Split::Train,
            };
            records.push(PairRecord {
                sent1_id: (2 * i) as u32,
                sent2_id: (2 * i + 1) as u32,
                text1,
                text2,
                origin_score: score,
                split,
            });
        }
        (records, corpus.vocab)
    }

    fn quick_config() -> TrainConfig {
        TrainConfig {
            dim: 16,
            epochs: 12,
            batch_size: 16,
            lr: 0.01,
            seed: 21,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_is_deterministic_under_the_seed() {
        let (records, vocab) = synthetic_records(120);
        let (params_a, report_a) = train(&records, &vocab, &quick_config()).unwrap();
        let (params_b, report_b) = train(&records, &vocab, &quick_config()).unwrap();
        assert_eq!(params_a, params_b);
        assert_eq!(report_a, report_b);
        let other = TrainConfig { seed: 22, ..quick_config() };
        let (params_c, _) = train(&records, &vocab, &other).unwrap();
        assert_ne!(params_a, params_c);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let (records, vocab) = synthetic_records(60);
        let config = TrainConfig { lr: 0.0, epochs: 4, ..quick_config() };
        let (params, report) = train(&records, &vocab, &config).unwrap();
        let fresh =
            SurrogateParams::init(vocab.len(), config.dim, config.with_projection, config.seed);
        assert_eq!(params, fresh);
        assert!(report.dev_l2.iter().all(|&l| l == report.dev_l2[0]));
        assert_eq!(report.best_checkpoint, 0);
    }

    #[test]
    fn training_reduces_dev_loss_on_learnable_data() {
        let (records, vocab) = synthetic_records(300);
        let (_, report) = train(&records, &vocab, &quick_config()).unwrap();
        let initial = report.dev_l2[0];
        let best = report.dev_l2[report.best_checkpoint];
        assert!(
            best < 0.8 * initial,
            "dev loss went from {initial} to {best} (checkpoint {})",
            report.best_checkpoint
        );
        assert_eq!(
            best,
            report.dev_l2.iter().copied().fold(f64::INFINITY, f64::min),
            "best checkpoint must hold the minimum dev loss"
        );
        assert!(report.epoch_losses.iter().all(|l| l.is_finite() && *l >= 0.0));
    }

    #[test]
    fn early_stopping_respects_the_patience_budget() {
        let (records, vocab) = synthetic_records(60);
        // lr 0 never improves, so training must stop after exactly
        // `patience` epochs.
        let config = TrainConfig { lr: 0.0, epochs: 50, patience: 3, ..quick_config() };
        let (_, report) = train(&records, &vocab, &config).unwrap();
        assert_eq!(report.dev_l2.len(), 1 + 3);
        assert_eq!(report.epoch_losses.len(), 3);
    }

    #[test]
    fn training_requires_both_splits() {
        let (mut records, vocab) = synthetic_records(60);
        for r in records.iter_mut() {
            r.split = Split::Train;
        }
        assert!(matches!(
            train(&records, &vocab, &quick_config()),
            Err(Error::DatasetTooSmall(0))
        ));
    }

    #[test]
    fn gold_scores_map_affinely_to_cosine_targets() {
        assert_eq!(gold_to_target(5.0), 1.0);
        assert_eq!(gold_to_target(0.0), -1.0);
        assert_eq!(gold_to_target(2.5), 0.0);
    }

    fn labeled_tsv(dir: &Path, rows: &[(&str, &str, f64)]) -> std::path::PathBuf {
        let path = dir.join("labeled.tsv");
        let text: String =
            rows.iter().map(|(a, b, g)| format!("{a}\t{b}\t{g}\n")).collect();
        std::fs::write(&path, text).unwrap();
        path
    }

    #[test]
    fn finetuning_zero_epochs_returns_the_input_parameters() {
        let (_, vocab) = synthetic_records(10);
        let params = toy_params(vocab.len(), 16, true);
        let dir = tempfile::tempdir().unwrap();
        let path = labeled_tsv(dir.path(), &[("ash bay", "cedar dune", 2.5)]);
        let config = TrainConfig { epochs: 0, ..quick_config() };
        let (tuned, report) = finetune(&params, &path, &vocab, &config).unwrap();
        assert_eq!(tuned, params);
        assert_eq!(report.best_checkpoint, 0);
    }

    #[test]
    fn finetuning_rejects_malformed_rows_by_line() {
        let (_, vocab) = synthetic_records(10);
        let params = toy_params(vocab.len(), 16, true);
        let dir = tempfile::tempdir().unwrap();
        let path = labeled_tsv(dir.path(), &[("ash bay", "cedar", 2.0), ("elm", "fern", 7.5)]);
        match finetune(&params, &path, &vocab, &quick_config()).unwrap_err() {
            Error::MalformedRow { line, reason } => {
                assert_eq!(line, 2);
                assert!(reason.contains("outside [0, 5]"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn finetuning_improves_ranking_on_its_labeled_set() {
        let (_, vocab) = synthetic_records(10);
        let params = toy_params(vocab.len(), 16, true);
        let rows = [
            ("ash bay cedar", "ash bay cedar", 5.0),
            ("ash bay", "ash bay cedar", 4.0),
            ("dune elm", "dune fern", 3.5),
            ("ash bay", "gale hail", 1.0),
            ("cedar dune", "iris jade", 0.5),
            ("elm ash", "jade gale", 0.0),
            ("fern dune elm", "fern dune", 4.5),
            ("iris jade gale", "hail iris jade", 3.0),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = labeled_tsv(dir.path(), &rows);
        let score_all = |p: &SurrogateParams| -> Vec<f64> {
            rows.iter()
                .map(|(a, b, _)| {
                    p.predict_similarity(&tokenize(a, &vocab), &tokenize(b, &vocab)).unwrap()
                })
                .collect()
        };
        let golds: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let before = spearman(&score_all(&params), &golds).unwrap();
        let config = TrainConfig { epochs: 40, lr: 0.02, patience: 40, ..quick_config() };
        let (tuned, _) = finetune(&params, &path, &vocab, &config).unwrap();
        let after = spearman(&score_all(&tuned), &golds).unwrap();
        assert!(after >= before, "spearman fell from {before} to {after}");
    }

    #[test]
    fn checkpoint_file_round_trip_is_byte_stable() {
        let params = toy_params(25, 8, true);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.sur");
        params.save(&path).unwrap();
        let loaded = SurrogateParams::load(&path).unwrap();
        assert_eq!(loaded, params);
        let again = dir.path().join("model2.sur");
        loaded.save(&again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());

        let bare = toy_params(25, 8, false);
        let bare_path = dir.path().join("bare.sur");
        bare.save(&bare_path).unwrap();
        assert_eq!(SurrogateParams::load(&bare_path).unwrap(), bare);
    }

    fn toy_sentences(n: usize, vocab: usize) -> Vec<Sentence> {
        let mut rng = derived_rng(12, 0x7365_6e74);
        (0..n as u32)
            .map(|id| {
                let len = rng.random_range(2..6);
                Sentence { id, tokens: random_tokens(&mut rng, vocab, len), raw: String::new() }
            })
            .collect()
    }

    #[test]
    fn cached_queries_equal_direct_predictions() {
        let params = toy_params(30, 8, true);
        let sentences = toy_sentences(40, 30);
        let store = cache_embeddings(&params, &sentences).unwrap();
        assert_eq!(store.len(), 40);
        assert_eq!(store.vectors.len(), 40 * 8);
        let mut rng = derived_rng(13, 0x7175_6572);
        for _ in 0..100 {
            let a = rng.random_range(0..40u32);
            let b = rng.random_range(0..40u32);
            let cached = store.similarity(a, b).unwrap();
            let direct = params
                .predict_similarity(
                    &sentences[a as usize].tokens,
                    &sentences[b as usize].tokens,
                )
                .unwrap();
            assert_eq!(cached.to_bits(), direct.to_bits());
        }
        assert!(matches!(store.similarity(0, 999), Err(Error::UnknownSentenceId(999))));
    }

    #[test]
    fn top_neighbors_match_a_brute_force_scan() {
        let params = toy_params(30, 8, true);
        let sentences = toy_sentences(25, 30);
        let store = cache_embeddings(&params, &sentences).unwrap();
        let got = store.top_k(7, 5).unwrap();
        let mut brute: Vec<(u32, f64)> = sentences
            .iter()
            .filter(|s| s.id != 7)
            .map(|s| {
                let sim = params
                    .predict_similarity(&sentences[7].tokens, &s.tokens)
                    .unwrap();
                (s.id, sim)
            })
            .collect();
        brute.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        brute.truncate(5);
        assert_eq!(got, brute);
    }

    #[test]
    fn embedding_store_round_trip_is_byte_stable() {
        let params = toy_params(30, 8, true);
        let sentences = toy_sentences(15, 30);
        let store = cache_embeddings(&params, &sentences).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.emb");
        store.save(&path).unwrap();
        let loaded = EmbeddingStore::load(&path).unwrap();
        assert_eq!(loaded, store);
        let again = dir.path().join("store2.emb");
        loaded.save(&again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }
}

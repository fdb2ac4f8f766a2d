//! Add-k smoothed n-gram conditional language model.
//!
//! One model per arrangement. A training or scoring stream is always
//! `condition ++ [SEP] ++ target ++ [EOS]`; a two-part condition joins its
//! halves with the pad id, which is otherwise unused and here acts as the
//! secondary separator. Only target and end-of-sequence positions are scored,
//! and the summed log probability is divided by `|target| + 1` so targets of
//! different lengths stay comparable.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::{ContextWindow, Vocabulary};
use crate::error::{Error, Result};
use crate::fileio;

/// Which slot of a context window the model learns to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arrangement {
    /// center given left and right
    Center,
    /// left given center and right
    Left,
    /// right given left and center
    Right,
}

impl Arrangement {
    pub fn name(self) -> &'static str {
        match self {
            Arrangement::Center => "center",
            Arrangement::Left => "left",
            Arrangement::Right => "right",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalLm {
    order: usize,
    add_k: f64,
    vocab_size: usize,
    sep: u32,
    eos: u32,
    cond_sep: u32,
    /// Per history length `l`: count of positions preceded by each length-`l`
    /// history. `hist[l]` keys have length `l`.
    hist: Vec<HashMap<Box<[u32]>, u64>>,
    /// Per history length `l`: counts of history-plus-token slices, keys of
    /// length `l + 1`.
    joint: Vec<HashMap<Box<[u32]>, u64>>,
}

impl ConditionalLm {
    /// New empty model using the corpus vocabulary's control ids.
    pub fn new(order: usize, add_k: f64, vocab_size: usize) -> ConditionalLm {
        Self::with_separators(
            order,
            add_k,
            vocab_size,
            Vocabulary::SEP,
            Vocabulary::EOS,
            Vocabulary::PAD,
        )
    }

    /// Fully parameterized constructor, mainly for id-permutation tests.
    pub fn with_separators(
        order: usize,
        add_k: f64,
        vocab_size: usize,
        sep: u32,
        eos: u32,
        cond_sep: u32,
    ) -> ConditionalLm {
        assert!(order >= 1, "model order must be at least 1");
        assert!(add_k > 0.0, "smoothing constant must be positive");
        assert!(vocab_size > 0, "vocabulary must be non-empty");
        ConditionalLm {
            order,
            add_k,
            vocab_size,
            sep,
            eos,
            cond_sep,
            hist: vec![HashMap::new(); order],
            joint: vec![HashMap::new(); order],
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn add_k(&self) -> f64 {
        self.add_k
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// `condition ++ [SEP] ++ target ++ [EOS]`.
    pub fn stream(&self, condition: &[u32], target: &[u32]) -> Vec<u32> {
        let mut out = Vec::with_capacity(condition.len() + target.len() + 2);
        out.extend_from_slice(condition);
        out.push(self.sep);
        out.extend_from_slice(target);
        out.push(self.eos);
        out
    }

    /// Joins a two-part condition with the secondary separator.
    pub fn join_condition(&self, a: &[u32], b: &[u32]) -> Vec<u32> {
        let mut out = Vec::with_capacity(a.len() + b.len() + 1);
        out.extend_from_slice(a);
        out.push(self.cond_sep);
        out.extend_from_slice(b);
        out
    }

    /// Counts every n-gram of every length up to the model order over one
    /// stream, including the positions inside the condition.
    pub fn count_stream(&mut self, stream: &[u32]) {
        for j in 0..stream.len() {
            let lmax = j.min(self.order - 1);
            for l in 0..=lmax {
                bump(&mut self.hist[l], &stream[j - l..j]);
                bump(&mut self.joint[l], &stream[j - l..=j]);
            }
        }
    }

    /// Smoothed probability of `token` after a history of length < order.
    /// An unseen history reduces algebraically to the uniform distribution,
    /// which is evaluated directly so untrained scores are exact.
    pub fn prob(&self, history: &[u32], token: u32) -> f64 {
        assert!(history.len() < self.order);
        let l = history.len();
        let hist_count = self.hist[l].get(history).copied().unwrap_or(0) as f64;
        if hist_count == 0.0 {
            return 1.0 / self.vocab_size as f64;
        }
        let mut key = Vec::with_capacity(l + 1);
        key.extend_from_slice(history);
        key.push(token);
        let joint_count = self.joint[l].get(key.as_slice()).copied().unwrap_or(0) as f64;
        (joint_count + self.add_k) / (hist_count + self.add_k * self.vocab_size as f64)
    }

    /// Mean natural-log probability of the target (plus the end marker) given
    /// the condition. Histories near the stream start shrink to whatever
    /// tokens exist. An untrained model returns exactly `-ln(vocab_size)`.
    pub fn log_prob(&self, target: &[u32], condition: &[u32]) -> f64 {
        assert!(!target.is_empty(), "target must be non-empty");
        let stream = self.stream(condition, target);
        let k_vocab = self.add_k * self.vocab_size as f64;
        let uniform = (1.0 / self.vocab_size as f64).ln();
        let mut sum = 0.0;
        for j in condition.len() + 1..stream.len() {
            let l = j.min(self.order - 1);
            let hist_count = self.hist[l].get(&stream[j - l..j]).copied().unwrap_or(0) as f64;
            if hist_count == 0.0 {
                sum += uniform;
                continue;
            }
            let joint_count = self.joint[l].get(&stream[j - l..=j]).copied().unwrap_or(0) as f64;
            sum += ((joint_count + self.add_k) / (hist_count + k_vocab)).ln();
        }
        sum / (target.len() + 1) as f64
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        fileio::write_magic(&mut w, fileio::LM_MAGIC)?;
        fileio::write_u32(&mut w, self.order as u32)?;
        fileio::write_f64(&mut w, self.add_k)?;
        fileio::write_u32(&mut w, self.vocab_size as u32)?;
        for id in [self.sep, self.eos, self.cond_sep] {
            fileio::write_u32(&mut w, id)?;
        }
        for level in 0..self.order {
            write_table(&mut w, &self.hist[level])?;
            write_table(&mut w, &self.joint[level])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ConditionalLm> {
        let mut r = BufReader::new(File::open(path)?);
        fileio::check_magic(&mut r, fileio::LM_MAGIC, path)?;
        let order = fileio::read_u32(&mut r)? as usize;
        if order == 0 {
            return Err(Error::Format("model order must be at least 1".into()));
        }
        let add_k = fileio::read_f64(&mut r)?;
        let vocab_size = fileio::read_u32(&mut r)? as usize;
        let sep = fileio::read_u32(&mut r)?;
        let eos = fileio::read_u32(&mut r)?;
        let cond_sep = fileio::read_u32(&mut r)?;
        let mut hist = Vec::with_capacity(order);
        let mut joint = Vec::with_capacity(order);
        for _ in 0..order {
            hist.push(read_table(&mut r)?);
            joint.push(read_table(&mut r)?);
        }
        Ok(ConditionalLm { order, add_k, vocab_size, sep, eos, cond_sep, hist, joint })
    }
}

fn bump(map: &mut HashMap<Box<[u32]>, u64>, key: &[u32]) {
    if let Some(c) = map.get_mut(key) {
        *c += 1;
    } else {
        map.insert(key.into(), 1);
    }
}

fn write_table<W: Write>(w: &mut W, table: &HashMap<Box<[u32]>, u64>) -> Result<()> {
    let mut keys: Vec<&Box<[u32]>> = table.keys().collect();
    keys.sort();
    fileio::write_u32(w, keys.len() as u32)?;
    for key in keys {
        fileio::write_u32_slice(w, key)?;
        fileio::write_u64(w, table[key.as_ref()])?;
    }
    Ok(())
}

fn read_table<R: std::io::Read>(r: &mut R) -> Result<HashMap<Box<[u32]>, u64>> {
    let n = fileio::read_u32(r)? as usize;
    let mut out = HashMap::with_capacity(n);
    for _ in 0..n {
        let key = fileio::read_u32_vec(r)?.into_boxed_slice();
        let count = fileio::read_u64(r)?;
        out.insert(key, count);
    }
    Ok(out)
}

/// The training stream a window contributes under one arrangement.
pub fn arranged_stream(lm: &ConditionalLm, window: &ContextWindow, arr: Arrangement) -> Vec<u32> {
    let left = window.left_tokens();
    let right = window.right_tokens();
    let center = &window.center.tokens;
    let (condition, target): (Vec<u32>, &[u32]) = match arr {
        Arrangement::Center => (lm.join_condition(&left, &right), center),
        Arrangement::Left => (lm.join_condition(center, &right), &left),
        Arrangement::Right => (lm.join_condition(&left, center), &right),
    };
    lm.stream(&condition, target)
}

/// Trains one conditional model over all windows for the given arrangement.
pub fn train_lm(
    windows: &[ContextWindow],
    arr: Arrangement,
    order: usize,
    add_k: f64,
    vocab_size: usize,
) -> ConditionalLm {
    let mut lm = ConditionalLm::new(order, add_k, vocab_size);
    for window in windows {
        let stream = arranged_stream(&lm, window, arr);
        lm.count_stream(&stream);
    }
    lm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sentence;

    fn sent(id: u32, tokens: &[u32]) -> Sentence {
        Sentence { id, tokens: tokens.to_vec(), raw: String::new() }
    }

    fn window(left: &[u32], center: &[u32], right: &[u32]) -> ContextWindow {
        ContextWindow {
            chunk_id: 0,
            doc_id: 0,
            left: vec![sent(0, left)],
            center: sent(1, center),
            right: vec![sent(2, right)],
        }
    }

    #[test]
    fn untrained_model_scores_uniform() {
        let lm = ConditionalLm::new(3, 0.1, 50);
        let uniform = (1.0f64 / 50.0).ln();
        assert!((uniform + (50.0f64).ln()).abs() < 1e-12);
        // Single-token target: two scored positions, and the mean of two
        // equal terms is exact in floating point.
        assert_eq!(lm.log_prob(&[4], &[]), uniform);
        assert_eq!(lm.log_prob(&[4], &[7, 8]), uniform);
        // Longer targets accumulate at most rounding noise.
        assert!((lm.log_prob(&[4, 5, 6], &[7, 8]) - uniform).abs() < 1e-12);
        let lm = ConditionalLm::new(2, 0.1, 18);
        assert!((lm.log_prob(&[10, 11, 12, 13], &[9]) + (18.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn bigram_counts_match_hand_count() {
        // Window: left = [10 11], center = [12 13], right = [14].
        // Center arrangement stream: 10 11 PAD 14 SEP 12 13 EOS.
        let mut lm = ConditionalLm::new(2, 0.1, 20);
        let w = window(&[10, 11], &[12, 13], &[14]);
        let stream = arranged_stream(&lm, &w, Arrangement::Center);
        assert_eq!(
            stream,
            vec![10, 11, Vocabulary::PAD, 14, Vocabulary::SEP, 12, 13, Vocabulary::EOS]
        );
        lm.count_stream(&stream);
        let v = 20.0;
        let k = 0.1;
        // Seen bigram (11 follows 10 once, 10 occurs once as history).
        assert_eq!(lm.prob(&[10], 11), (1.0 + k) / (1.0 + k * v));
        // Unseen continuation of a seen history.
        assert_eq!(lm.prob(&[10], 12), k / (1.0 + k * v));
        // Unseen history: uniform.
        assert_eq!(lm.prob(&[99], 11), 1.0 / v);
        // Unigram level: eight positions total, 10 observed once.
        assert_eq!(lm.prob(&[], 10), (1.0 + k) / (8.0 + k * v));
    }

    #[test]
    fn smoothed_distribution_sums_to_one() {
        let mut lm = ConditionalLm::new(2, 0.1, 12);
        let w = window(&[4, 5], &[6, 7], &[8]);
        let stream = arranged_stream(&lm, &w, Arrangement::Center);
        lm.count_stream(&stream);
        for history in [vec![4u32], vec![9], vec![]] {
            let total: f64 = (0..12).map(|t| lm.prob(&history, t)).sum();
            assert!((total - 1.0).abs() < 1e-9, "history {history:?} sums to {total}");
        }
    }

    #[test]
    fn normalization_divides_by_target_length_plus_one() {
        let mut lm = ConditionalLm::new(2, 0.5, 10);
        lm.count_stream(&[5, 6, 7]);
        // Stream for target [8, 9] given condition [4] is 4 SEP 8 9 EOS with
        // scored positions SEP->8, 8->9, 9->EOS; the bigram histories SEP, 8
        // and 9 were never observed during training.
        let k: f64 = 0.5;
        let v = 10.0;
        let p_unseen_hist = k / (k * v);
        let expected = (3.0 * p_unseen_hist.ln()) / 3.0;
        assert!((lm.log_prob(&[8, 9], &[4]) - expected).abs() < 1e-12);
    }

    #[test]
    fn trained_continuations_beat_noise() {
        // Many repetitions of the same window teach the center arrangement.
        let w = window(&[10, 11], &[12, 13], &[14, 15]);
        let windows: Vec<ContextWindow> = (0..20).map(|_| w.clone()).collect();
        let lm = train_lm(&windows, Arrangement::Center, 3, 0.1, 30);
        let cond = lm.join_condition(&[10, 11], &[14, 15]);
        let natural = lm.log_prob(&[12, 13], &cond);
        let noise = lm.log_prob(&[27, 3, 9], &cond);
        assert!(natural > noise, "expected {natural} > {noise}");
    }

    #[test]
    fn arrangements_use_their_own_slots() {
        let lm = ConditionalLm::new(3, 0.1, 30);
        let w = window(&[10], &[12], &[14]);
        let center = arranged_stream(&lm, &w, Arrangement::Center);
        let left = arranged_stream(&lm, &w, Arrangement::Left);
        let right = arranged_stream(&lm, &w, Arrangement::Right);
        let (p, s, e) = (Vocabulary::PAD, Vocabulary::SEP, Vocabulary::EOS);
        assert_eq!(center, vec![10, p, 14, s, 12, e]);
        assert_eq!(left, vec![12, p, 14, s, 10, e]);
        assert_eq!(right, vec![10, p, 12, s, 14, e]);
    }

    #[test]
    fn scores_are_stable_under_id_permutation() {
        // Consistently relabeling every token id (separators included) must
        // not change any score.
        let windows = vec![
            window(&[4, 5], &[6], &[7, 4]),
            window(&[6, 6], &[5], &[4]),
            window(&[7], &[4, 5], &[6]),
        ];
        let lm = train_lm(&windows, Arrangement::Center, 3, 0.1, 8);

        // Permutation over ids 0..8: add 3 mod 8.
        let perm = |t: u32| (t + 3) % 8;
        let mut permuted = ConditionalLm::with_separators(
            3,
            0.1,
            8,
            perm(Vocabulary::SEP),
            perm(Vocabulary::EOS),
            perm(Vocabulary::PAD),
        );
        for w in &windows {
            let mapped = window(
                &w.left_tokens().iter().map(|&t| perm(t)).collect::<Vec<_>>(),
                &w.center.tokens.iter().map(|&t| perm(t)).collect::<Vec<_>>(),
                &w.right_tokens().iter().map(|&t| perm(t)).collect::<Vec<_>>(),
            );
            let stream = arranged_stream(&permuted, &mapped, Arrangement::Center);
            permuted.count_stream(&stream);
        }

        let cond = lm.join_condition(&[4, 5], &[7, 4]);
        let cond_p: Vec<u32> = permuted.join_condition(&[perm(4), perm(5)], &[perm(7), perm(4)]);
        let original = lm.log_prob(&[6], &cond);
        let relabeled = permuted.log_prob(&[perm(6)], &cond_p);
        assert_eq!(original, relabeled);
    }

    #[test]
    fn doubling_the_corpus_doubles_every_count() {
        let windows = vec![window(&[4, 5], &[6], &[7]), window(&[5], &[7, 6], &[4])];
        let doubled: Vec<ContextWindow> =
            windows.iter().chain(windows.iter()).cloned().collect();
        let once = train_lm(&windows, Arrangement::Center, 3, 0.1, 9);
        let twice = train_lm(&doubled, Arrangement::Center, 3, 0.1, 9);
        assert_eq!(twice.add_k(), 0.1);
        for l in 0..3 {
            assert_eq!(once.hist[l].len(), twice.hist[l].len());
            for (key, count) in &once.hist[l] {
                assert_eq!(twice.hist[l][key], count * 2);
            }
            for (key, count) in &once.joint[l] {
                assert_eq!(twice.joint[l][key], count * 2);
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn next_token_distribution_normalizes(
            streams in proptest::collection::vec(
                proptest::collection::vec(0u32..16, 1..12), 1..6),
            history in proptest::collection::vec(0u32..16, 0..2),
        ) {
            let mut lm = ConditionalLm::new(3, 0.1, 16);
            for s in &streams {
                lm.count_stream(s);
            }
            let total: f64 = (0..16).map(|t| lm.prob(&history, t)).sum();
            proptest::prop_assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn model_file_round_trip() {
        let windows = vec![window(&[4, 5], &[6], &[7]), window(&[5, 4], &[7], &[6])];
        let lm = train_lm(&windows, Arrangement::Right, 3, 0.1, 9);
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("lm1.bin");
        let p2 = dir.path().join("lm2.bin");
        lm.save(&p1).unwrap();
        let loaded = ConditionalLm::load(&p1).unwrap();
        assert_eq!(loaded, lm);
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}

//! Correlation metrics and file-driven evaluation flows.
//!
//! The two correlation measures reported everywhere are Spearman's rank
//! correlation (Pearson over average ranks, so ties are handled the standard
//! way) and the plain product-moment Pearson coefficient. Triplet accuracy
//! covers the anchor/positive/negative protocol, with ties counted as
//! incorrect so a constant model cannot score above chance. The `evaluate_*`
//! drivers read tab-separated files, score them through a caller-supplied
//! similarity function in parallel, and return bounded [MetricReport] values.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One named metric over a dataset, tagged with the model fingerprint that
/// produced it so reports stay traceable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub n_items: usize,
    pub fingerprint: String,
}

impl MetricReport {
    fn new(metric: &str, value: f64, n_items: usize, fingerprint: &str) -> MetricReport {
        debug_assert!((-1.0..=1.0).contains(&value), "{metric} out of bounds: {value}");
        MetricReport {
            metric: metric.to_string(),
            value,
            n_items,
            fingerprint: fingerprint.to_string(),
        }
    }
}

/// Renders reports as a small aligned text table for terminal output.
pub fn format_reports(reports: &[MetricReport]) -> String {
    let name_width = reports.iter().map(|r| r.metric.len()).max().unwrap_or(6).max(6);
    let mut out = format!("{:<name_width$}  {:>12}  {:>8}\n", "metric", "value", "n");
    for r in reports {
        out.push_str(&format!("{:<name_width$}  {:>12.6}  {:>8}\n", r.metric, r.value, r.n_items));
    }
    out
}

fn mean_of(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    values.sum::<f64>() / n as f64
}

fn is_constant(xs: &[f64]) -> bool {
    xs.iter().all(|&x| x == xs[0])
}

/// Average ranks, 1-based; tied values share the mean of their rank span.
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // Positions i..=j hold one tie group; ranks are 1-based.
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = shared;
        }
        i = j + 1;
    }
    ranks
}

/// Product-moment correlation of two equal-length samples.
///
/// Row order never changes the result, down to the last bit: the pairs are
/// accumulated in a canonical sorted order, so shuffling a dataset and
/// re-evaluating reproduces the report exactly.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    assert_eq!(xs.len(), ys.len(), "correlation inputs must be equal length");
    if xs.len() < 2 {
        return Err(Error::DatasetTooSmall(xs.len()));
    }
    let mut pairs: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
    pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mx = mean_of(pairs.iter().map(|p| p.0), pairs.len());
    let my = mean_of(pairs.iter().map(|p| p.1), pairs.len());
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for &(x, y) in &pairs {
        let (dx, dy) = (x - mx, y - my);
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 || var_y == 0.0 {
        return Err(Error::ZeroVariance);
    }
    // Rounding can push perfectly collinear data a few ulps past the bound.
    Ok((cov / (var_x.sqrt() * var_y.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation: Pearson over average-ranked data.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    assert_eq!(xs.len(), ys.len(), "correlation inputs must be equal length");
    if xs.len() < 2 {
        return Err(Error::DatasetTooSmall(xs.len()));
    }
    if is_constant(xs) || is_constant(ys) {
        return Err(Error::ConstantInput);
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// One anchor/positive/negative judgment row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: String,
    pub positive: String,
    pub negative: String,
}

/// Fraction of triplets where the positive is strictly closer to the anchor
/// than the negative. Ties count as incorrect.
pub fn triplet_accuracy<F>(sim: F, triplets: &[Triplet]) -> Result<f64>
where
    F: Fn(&str, &str) -> Result<f64> + Sync,
{
    if triplets.is_empty() {
        return Err(Error::DatasetTooSmall(0));
    }
    let correct: usize = triplets
        .par_iter()
        .map(|t| {
            let pos = sim(&t.anchor, &t.positive)?;
            let neg = sim(&t.anchor, &t.negative)?;
            Ok(usize::from(pos > neg))
        })
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum();
    Ok(correct as f64 / triplets.len() as f64)
}

fn split_fields(lineno: usize, line: &str) -> Result<Vec<&str>> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 3 {
        return Err(Error::MalformedRow {
            line: lineno,
            reason: format!("expected 3 tab-separated fields, got {}", fields.len()),
        });
    }
    for (slot, field) in fields.iter().enumerate().take(2) {
        if field.trim().is_empty() {
            return Err(Error::MalformedRow {
                line: lineno,
                reason: format!("sentence field {} is empty", slot + 1),
            });
        }
    }
    Ok(fields)
}

/// Parses one "sent1<TAB>sent2<TAB>gold" row. `lineno` is 1-based and only
/// used for error reporting.
pub fn parse_pair_line(lineno: usize, line: &str) -> Result<(String, String, f64)> {
    let fields = split_fields(lineno, line)?;
    let gold: f64 = fields[2].trim().parse().map_err(|_| Error::MalformedRow {
        line: lineno,
        reason: format!("gold label is not a number: {:?}", fields[2]),
    })?;
    if !gold.is_finite() {
        return Err(Error::MalformedRow {
            line: lineno,
            reason: format!("gold label is not finite: {gold}"),
        });
    }
    Ok((fields[0].to_string(), fields[1].to_string(), gold))
}

/// Parses one "anchor<TAB>pos<TAB>neg" row.
pub fn parse_triplet_line(lineno: usize, line: &str) -> Result<Triplet> {
    let fields = split_fields(lineno, line)?;
    if fields[2].trim().is_empty() {
        return Err(Error::MalformedRow {
            line: lineno,
            reason: "sentence field 3 is empty".to_string(),
        });
    }
    Ok(Triplet {
        anchor: fields[0].to_string(),
        positive: fields[1].to_string(),
        negative: fields[2].to_string(),
    })
}

/// One scored sentence pair from an evaluation file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairPrediction {
    pub line: usize,
    pub sent1: String,
    pub sent2: String,
    pub gold: f64,
    pub predicted: f64,
}

/// Everything `evaluate_pairs` produces: both correlation reports plus the
/// per-pair predictions they were computed from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairEvaluation {
    pub spearman: MetricReport,
    pub pearson: MetricReport,
    pub predictions: Vec<PairPrediction>,
    pub skipped_rows: usize,
}

/// Scores every pair in a "sent1<TAB>sent2<TAB>gold" file and correlates the
/// predictions with the gold labels. Malformed rows are skipped with a logged
/// warning carrying their line number; fewer than two usable rows is an
/// error. Predictions are also written next to the input file as
/// `<name>.predictions.tsv`.
pub fn evaluate_pairs<F>(sim: F, tsv_path: &Path, fingerprint: &str) -> Result<PairEvaluation>
where
    F: Fn(&str, &str) -> Result<f64> + Sync,
{
    let text = fs::read_to_string(tsv_path)?;
    let mut rows = Vec::new();
    let mut skipped_rows = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_pair_line(i + 1, line) {
            Ok(row) => rows.push((i + 1, row)),
            Err(e) => {
                log::warn!("{}: skipping row: {e}", tsv_path.display());
                skipped_rows += 1;
            }
        }
    }
    if rows.len() < 2 {
        return Err(Error::DatasetTooSmall(rows.len()));
    }
    let predictions: Vec<PairPrediction> = rows
        .par_iter()
        .map(|(line, (s1, s2, gold))| {
            Ok(PairPrediction {
                line: *line,
                sent1: s1.clone(),
                sent2: s2.clone(),
                gold: *gold,
                predicted: sim(s1, s2)?,
            })
        })
        .collect::<Result<_>>()?;
    let golds: Vec<f64> = predictions.iter().map(|p| p.gold).collect();
    let preds: Vec<f64> = predictions.iter().map(|p| p.predicted).collect();
    let rho = spearman(&preds, &golds)?;
    let r = pearson(&preds, &golds)?;
    write_predictions(tsv_path, &predictions)?;
    Ok(PairEvaluation {
        spearman: MetricReport::new("spearman_rho", rho, predictions.len(), fingerprint),
        pearson: MetricReport::new("pearson_r", r, predictions.len(), fingerprint),
        predictions,
        skipped_rows,
    })
}

fn write_predictions(tsv_path: &Path, predictions: &[PairPrediction]) -> Result<()> {
    let out_path = tsv_path.with_extension("predictions.tsv");
    let mut out = String::new();
    for p in predictions {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", p.sent1, p.sent2, p.gold, p.predicted));
    }
    fs::write(out_path, out)?;
    Ok(())
}

/// Scores every triplet in an "anchor<TAB>pos<TAB>neg" file. Malformed rows
/// are skipped with a logged warning; an empty usable set is an error.
pub fn evaluate_triplets<F>(sim: F, tsv_path: &Path, fingerprint: &str) -> Result<MetricReport>
where
    F: Fn(&str, &str) -> Result<f64> + Sync,
{
    let text = fs::read_to_string(tsv_path)?;
    let mut triplets = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_triplet_line(i + 1, line) {
            Ok(t) => triplets.push(t),
            Err(e) => log::warn!("{}: skipping row: {e}", tsv_path.display()),
        }
    }
    let accuracy = triplet_accuracy(sim, &triplets)?;
    Ok(MetricReport::new("triplet_accuracy", accuracy, triplets.len(), fingerprint))
}

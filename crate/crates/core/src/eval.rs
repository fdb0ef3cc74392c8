//! Metrics: Spearman rank correlation (the headline metric), classification
//! accuracy, and the embedding-similarity evaluation driver.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::LabeledPair;
use crate::error::{Error, Result};
use crate::views::cosine_score;

/// Average ranks (fractional ranking): ties share the mean of the positions
/// they occupy. Ranks are 1-based.
fn average_ranks(xs: &[f64]) -> Result<Vec<f64>> {
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("rank of a non-finite value".into()));
    }
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("finite values"));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mean_rank;
        }
        i = j + 1;
    }
    Ok(ranks)
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 || var_y == 0.0 {
        return Err(Error::Numerical(
            "correlation undefined for constant input".into(),
        ));
    }
    Ok(cov / (var_x * var_y).sqrt())
}

/// Spearman rank correlation: Pearson correlation of average-ranked data.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::ShapeMismatch {
            op: "spearman",
            lhs: vec![xs.len()],
            rhs: vec![ys.len()],
        });
    }
    if xs.len() < 2 {
        return Err(Error::InvalidArgument(
            "spearman needs at least two observations".into(),
        ));
    }
    pearson(&average_ranks(xs)?, &average_ranks(ys)?)
}

/// Exact-match fraction.
pub fn accuracy(predictions: &[usize], golds: &[usize]) -> Result<f64> {
    if predictions.len() != golds.len() {
        return Err(Error::ShapeMismatch {
            op: "accuracy",
            lhs: vec![predictions.len()],
            rhs: vec![golds.len()],
        });
    }
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty set".into()));
    }
    let hits = predictions.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// One metric measurement, serialized as a single JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub value: f64,
    pub sample_count: usize,
    pub seed: u64,
    pub config_fingerprint: String,
    /// Kept apart from the deterministic fields so logs stay comparable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

impl EvalReport {
    pub fn new(
        metric: impl Into<String>,
        value: f64,
        sample_count: usize,
        seed: u64,
        config_fingerprint: impl Into<String>,
    ) -> Result<Self> {
        let metric = metric.into();
        let in_range = match metric.as_str() {
            "spearman" => (-1.0..=1.0).contains(&value),
            "accuracy" => (0.0..=1.0).contains(&value),
            _ => value.is_finite(),
        };
        if !in_range {
            return Err(Error::Numerical(format!(
                "metric {metric} value {value} outside its documented range"
            )));
        }
        Ok(EvalReport {
            metric,
            value,
            sample_count,
            seed,
            config_fingerprint: config_fingerprint.into(),
            timestamp: None,
        })
    }

    /// Appends the report as one JSON object per line.
    pub fn append_to(&self, path: &Path) -> Result<()> {
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let line = serde_json::to_string(self)
            .map_err(|e| Error::Numerical(format!("report serialization: {e}")))?;
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))
    }
}

/// Embeds every unique sentence exactly once, scores each pair by cosine,
/// and returns the Spearman correlation against the gold scores.
pub fn eval_sts<F>(mut embed: F, pairs: &[LabeledPair]) -> Result<(f64, usize)>
where
    F: FnMut(&str) -> Result<Vec<f64>>,
{
    let mut embeddings: HashMap<&str, Vec<f64>> = HashMap::new();
    for pair in pairs {
        for sentence in [pair.sentence_a.as_str(), pair.sentence_b.as_str()] {
            if !embeddings.contains_key(sentence) {
                embeddings.insert(sentence, embed(sentence)?);
            }
        }
    }
    let mut predicted = Vec::with_capacity(pairs.len());
    let mut gold = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let u = &embeddings[pair.sentence_a.as_str()];
        let v = &embeddings[pair.sentence_b.as_str()];
        predicted.push(cosine_score(u, v)?);
        gold.push(pair.score()?);
    }
    Ok((spearman(&predicted, &gold)?, pairs.len()))
}

/// Mean and sample standard deviation across seeds (n−1 denominator).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One line of the metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

pub const METRICS_HEADER: &str = "epoch,split,metric,value";

pub fn write_metrics<W: Write>(mut out: W, rows: &[MetricRow]) -> Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.epoch, r.split, r.metric, r.value)?;
    }
    Ok(())
}

/// Fraction of rows whose arg-max (first on ties) equals the target.
pub fn accuracy(logits: &Tensor<f64>, targets: &[usize]) -> Result<f64> {
    if logits.rows() != targets.len() || targets.is_empty() {
        return Err(crate::error::shape_err("accuracy", logits.shape(), &[targets.len()]));
    }
    let hits = targets
        .iter()
        .enumerate()
        .filter(|&(i, &t)| {
            let row = logits.row(i);
            let best = row
                .iter()
                .enumerate()
                .fold(0, |b, (j, &x)| if x > row[b] { j } else { b });
            best == t
        })
        .count();
    Ok(hits as f64 / targets.len() as f64)
}

/// Mean absolute error over all entries.
pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(crate::error::shape_err("mae", &[pred.len()], &[target.len()]));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Mean of `1 / rank`; ranks start at 1.
pub fn mrr(ranks: &[usize]) -> Result<f64> {
    if ranks.is_empty() || ranks.contains(&0) {
        return Err(Error::InvalidArgument("MRR needs at least one rank, all >= 1".into()));
    }
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

/// A scored candidate pair: `(group, score, is_true)`.
pub type Scored = (usize, f64, bool);

/// Rank of each true pair against the false pairs of the same group.
/// Ties count against the true pair.
pub fn pair_ranks(scored: &[Scored]) -> Vec<usize> {
    let mut ranks = Vec::new();
    for &(g, s, truth) in scored {
        if truth {
            let beaten_by = scored
                .iter()
                .filter(|&&(h, t, other)| h == g && !other && t >= s)
                .count();
            ranks.push(1 + beaten_by);
        }
    }
    ranks
}

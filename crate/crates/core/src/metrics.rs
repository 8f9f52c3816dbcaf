//! RMSE, MAE and Common Part of Commuters over OD flow maps.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Ordered `(origin id, destination id)` key.
pub type PairKey = (String, String);

/// Flow value per OD pair.
pub type FlowMap = BTreeMap<PairKey, f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("prediction and truth key sets differ ({missing} missing, {extra} extra)")]
    KeyMismatch { missing: usize, extra: usize },
    #[error("no pairs to evaluate")]
    EmptyInput,
    #[error("both totals are zero; CPC is undefined")]
    BothTotalsZero,
}

fn aligned(pred: &FlowMap, truth: &FlowMap) -> Result<Vec<(f64, f64)>, MetricError> {
    if truth.is_empty() && pred.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let missing = truth.keys().filter(|k| !pred.contains_key(*k)).count();
    let extra = pred.keys().filter(|k| !truth.contains_key(*k)).count();
    if missing + extra > 0 {
        return Err(MetricError::KeyMismatch { missing, extra });
    }
    Ok(pred.values().copied().zip(truth.values().copied()).collect())
}

/// Root mean squared difference over all pairs.
pub fn rmse(pred: &FlowMap, truth: &FlowMap) -> Result<f64, MetricError> {
    let pairs = aligned(pred, truth)?;
    let sse: f64 = pairs.iter().map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / pairs.len() as f64).sqrt())
}

/// Mean absolute difference over all pairs.
pub fn mae(pred: &FlowMap, truth: &FlowMap) -> Result<f64, MetricError> {
    let pairs = aligned(pred, truth)?;
    let sae: f64 = pairs.iter().map(|(p, t)| (p - t).abs()).sum();
    Ok(sae / pairs.len() as f64)
}

/// `2 * sum(min(pred, truth)) / (sum(pred) + sum(truth))`.
pub fn cpc(pred: &FlowMap, truth: &FlowMap) -> Result<f64, MetricError> {
    let pairs = aligned(pred, truth)?;
    let common: f64 = pairs.iter().map(|(p, t)| p.min(*t)).sum();
    let total: f64 = pairs.iter().map(|(p, t)| p + t).sum();
    if total == 0.0 {
        return Err(MetricError::BothTotalsZero);
    }
    Ok(2.0 * common / total)
}

/// Restricts `pred` to the keys of `truth`, filling absent pairs with 0 when
/// `assume_zero` is set; otherwise absent pairs surface as a key mismatch.
pub fn align_predictions(pred: &FlowMap, truth: &FlowMap, assume_zero: bool) -> FlowMap {
    truth
        .keys()
        .filter_map(|k| match pred.get(k) {
            Some(v) => Some((k.clone(), *v)),
            None if assume_zero => Some((k.clone(), 0.0)),
            None => None,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// City or dataset label shown in the first column of the table.
    pub label: String,
    pub split: String,
    pub n_pairs: usize,
    pub rmse: f64,
    pub mae: f64,
    pub cpc: f64,
}

impl EvalReport {
    pub fn compute(
        label: &str,
        split: &str,
        pred: &FlowMap,
        truth: &FlowMap,
    ) -> Result<Self, MetricError> {
        Ok(Self {
            label: label.to_string(),
            split: split.to_string(),
            n_pairs: truth.len(),
            rmse: rmse(pred, truth)?,
            mae: mae(pred, truth)?,
            cpc: cpc(pred, truth)?,
        })
    }

    /// Single-line JSON record.
    pub fn to_record(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    /// Human table with columns City, RMSE, MAE, CPC.
    pub fn to_table(reports: &[EvalReport]) -> String {
        let rows: Vec<[String; 4]> = reports
            .iter()
            .map(|r| {
                [
                    format!("{} ({})", r.label, r.split),
                    format!("{:.2}", r.rmse),
                    format!("{:.2}", r.mae),
                    format!("{:.2}", r.cpc),
                ]
            })
            .collect();
        let header = ["City", "RMSE", "MAE", "CPC*"];
        let mut widths = header.map(str::len);
        for row in &rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: [&str; 4]| {
            let _ = writeln!(
                out,
                "{:<w0$} | {:>w1$} | {:>w2$} | {:>w3$}",
                cells[0],
                cells[1],
                cells[2],
                cells[3],
                w0 = widths[0],
                w1 = widths[1],
                w2 = widths[2],
                w3 = widths[3]
            );
        };
        line(&mut out, header);
        let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 9));
        for row in &rows {
            line(&mut out, [&row[0], &row[1], &row[2], &row[3]]);
        }
        out.push_str("* Higher is better\n");
        out
    }
}

//! Dice and label-quality metrics plus experiment result tables.

use serde::{Deserialize, Serialize};

use crate::correction::SoftLabel;
use crate::error::{Error, Result};
use crate::mask::BinaryMask;

/// Dice coefficient `2|a∩b| / (|a| + |b|)`. Two empty masks score 1.0
/// (total agreement).
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.same_shape(b)?;
    let mut inter = 0usize;
    let mut total = 0usize;
    for (&x, &y) in a.grid().iter().zip(b.grid().iter()) {
        inter += (x & y) as usize;
        total += (x + y) as usize;
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Mean Dice over aligned mask pairs.
pub fn mean_dice(predictions: &[BinaryMask], references: &[BinaryMask]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != references.len() {
        return Err(Error::EmptyDataset(format!(
            "mean_dice needs equal nonempty sets, got {} vs {}",
            predictions.len(),
            references.len()
        )));
    }
    let mut total = 0.0;
    for (p, r) in predictions.iter().zip(references) {
        total += dice(p, r)?;
    }
    Ok(total / predictions.len() as f64)
}

/// Per-sample entry in a [`LabelAccuracySummary`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelAccuracyEntry {
    pub index: usize,
    /// Dice of the corrected label's argmax against the clean mask.
    pub corrected_dice: f64,
    /// Dice of the (possibly corrupted) training mask against the clean mask.
    pub noisy_dice: f64,
    pub delta: f64,
}

/// Compares end-of-training corrected labels and the original training
/// masks against the clean masks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelAccuracySummary {
    pub corrected_dice_mean: f64,
    pub noisy_dice_mean: f64,
    pub per_sample: Vec<LabelAccuracyEntry>,
}

pub fn label_accuracy_report(
    corrected: &[SoftLabel],
    noisy: &[BinaryMask],
    clean: &[BinaryMask],
) -> Result<LabelAccuracySummary> {
    if corrected.len() != noisy.len() || noisy.len() != clean.len() || clean.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "label_accuracy_report needs aligned nonempty sets, got {}/{}/{}",
            corrected.len(),
            noisy.len(),
            clean.len()
        )));
    }
    let mut per_sample = Vec::with_capacity(clean.len());
    let mut corrected_sum = 0.0;
    let mut noisy_sum = 0.0;
    for (i, ((soft, noisy_mask), clean_mask)) in
        corrected.iter().zip(noisy).zip(clean).enumerate()
    {
        let corrected_dice = dice(&soft.argmax_mask()?, clean_mask)?;
        let noisy_dice = dice(noisy_mask, clean_mask)?;
        corrected_sum += corrected_dice;
        noisy_sum += noisy_dice;
        per_sample.push(LabelAccuracyEntry {
            index: i,
            corrected_dice,
            noisy_dice,
            delta: corrected_dice - noisy_dice,
        });
    }
    let n = clean.len() as f64;
    Ok(LabelAccuracySummary {
        corrected_dice_mean: corrected_sum / n,
        noisy_dice_mean: noisy_sum / n,
        per_sample,
    })
}

/// One line of an experiment results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub noise_ratio: f64,
    /// Inclusive iteration bounds of the corruption, if any.
    pub noise_level: Option<(u32, u32)>,
    pub strategy: String,
    /// Joint-optimization start epoch, for strategies that have one.
    pub k: Option<u32>,
    pub dice: f64,
    pub seed: u64,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
    Json,
}

pub const CSV_HEADER: &str = "noise_ratio,noise_level,strategy,k,dice,seed,runtime_s";

fn fmt_noise_level(level: Option<(u32, u32)>) -> String {
    match level {
        None => "-".into(),
        Some((lo, hi)) if lo == hi => format!("{lo}"),
        Some((lo, hi)) => format!("{lo}-{hi}"),
    }
}

fn parse_noise_level(s: &str) -> Result<Option<(u32, u32)>> {
    let bad = |s: &str| Error::InvalidConfig(format!("bad noise_level field: {s:?}"));
    if s == "-" {
        return Ok(None);
    }
    if let Some((lo, hi)) = s.split_once('-') {
        let lo = lo.trim().parse().map_err(|_| bad(s))?;
        let hi = hi.trim().parse().map_err(|_| bad(s))?;
        Ok(Some((lo, hi)))
    } else {
        let n = s.trim().parse().map_err(|_| bad(s))?;
        Ok(Some((n, n)))
    }
}

fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| {
        a.noise_ratio
            .total_cmp(&b.noise_ratio)
            .then_with(|| a.strategy.cmp(&b.strategy))
            .then_with(|| a.k.cmp(&b.k))
            .then_with(|| a.seed.cmp(&b.seed))
    });
}

/// Rounds to the precision the table renders with, so every format carries
/// identical numeric content.
fn canonical(row: &ResultRow) -> ResultRow {
    ResultRow {
        dice: (row.dice * 1e4).round() / 1e4,
        runtime_s: (row.runtime_s * 1e3).round() / 1e3,
        ..row.clone()
    }
}

fn row_fields(row: &ResultRow) -> [String; 7] {
    let r = canonical(row);
    [
        format!("{}", r.noise_ratio),
        fmt_noise_level(r.noise_level),
        r.strategy.clone(),
        r.k.map_or_else(|| "-".into(), |k| k.to_string()),
        format!("{:.4}", r.dice),
        r.seed.to_string(),
        format!("{}", r.runtime_s),
    ]
}

/// Renders rows as a deterministic table: sorted by (noise ratio, strategy,
/// k, seed), Dice to 4 decimals.
pub fn emit_table(rows: &[ResultRow], format: TableFormat) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::EmptyDataset("emit_table needs at least one row".into()));
    }
    let mut rows = rows.to_vec();
    sort_rows(&mut rows);
    match format {
        TableFormat::Csv => {
            let mut out = String::from(CSV_HEADER);
            out.push('\n');
            for row in &rows {
                out.push_str(&row_fields(row).join(","));
                out.push('\n');
            }
            Ok(out)
        }
        TableFormat::Markdown => {
            let mut out = String::new();
            out.push_str("| noise_ratio | noise_level | strategy | k | dice | seed | runtime_s |\n");
            out.push_str("|---|---|---|---|---|---|---|\n");
            for row in &rows {
                out.push_str("| ");
                out.push_str(&row_fields(row).join(" | "));
                out.push_str(" |\n");
            }
            Ok(out)
        }
        TableFormat::Json => {
            let canon: Vec<ResultRow> = rows.iter().map(canonical).collect();
            let mut s = serde_json::to_string_pretty(&canon)?;
            s.push('\n');
            Ok(s)
        }
    }
}

/// Parses a table previously emitted as CSV.
pub fn parse_table_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        other => {
            return Err(Error::InvalidConfig(format!(
                "bad CSV header: {other:?}"
            )))
        }
    }
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::InvalidConfig(format!(
                "line {}: expected 7 fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("line {}: bad {what}: {s:?}", lineno + 2)))
        };
        rows.push(ResultRow {
            noise_ratio: parse_f(fields[0], "noise_ratio")?,
            noise_level: parse_noise_level(fields[1])?,
            strategy: fields[2].trim().to_string(),
            k: if fields[3].trim() == "-" {
                None
            } else {
                Some(fields[3].trim().parse().map_err(|_| {
                    Error::InvalidConfig(format!("line {}: bad k: {:?}", lineno + 2, fields[3]))
                })?)
            },
            dice: parse_f(fields[4], "dice")?,
            seed: fields[5].trim().parse().map_err(|_| {
                Error::InvalidConfig(format!("line {}: bad seed: {:?}", lineno + 2, fields[5]))
            })?,
            runtime_s: parse_f(fields[6], "runtime_s")?,
        });
    }
    Ok(rows)
}

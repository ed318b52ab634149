//! Bit-exact sparse-storage accounting.
//!
//! Two CSR encodings are modeled. The absolute scheme stores, per block,
//! nonzero values, in-block column indices, and a row-extent array --
//! `2n + r + 1` stored numbers for a single block. The relative scheme stores
//! one bounded-bit-width gap per value, inserting a dummy zero whenever a gap
//! exceeds what the bit width can represent; gaps are encoded as `gap - 1`,
//! so `b` bits cover gaps `1..=2^b`. Storage byte counts use decimal units
//! (KB = 10^3, MB = 10^6 bytes) against a 32-bit dense baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::LayerKind;

pub const DENSE_BASELINE_BITS: u64 = 32;
pub const DEFAULT_BLOCK: (usize, usize) = (64, 64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Absolute,
    Relative,
}

// ---------------------------------------------------------------------------
// CSR with absolute indices (blocked)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct CsrBlock {
    pub row0: usize,
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    /// Column index within the block, one per value.
    pub col_indices: Vec<u32>,
    /// Cumulative nonzero count per block row; `rows + 1` entries.
    pub row_extents: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsrAbsolute {
    pub rows: usize,
    pub cols: usize,
    pub block: (usize, usize),
    pub blocks: Vec<CsrBlock>,
}

impl CsrAbsolute {
    pub fn nonzero_count(&self) -> usize {
        self.blocks.iter().map(|b| b.values.len()).sum()
    }

    /// Total numbers stored (values + indices + extents); `2n + r + 1` when a
    /// single block covers the whole matrix.
    pub fn stored_numbers(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| 2 * b.values.len() + b.row_extents.len())
            .sum()
    }

    /// Index-side bits under the block estimation model: per block,
    /// `ceil(log2(block cols))` bits per column index plus `rows + 1`
    /// row extents of `ceil(log2(nnz + 1))` bits each.
    pub fn index_bits_total(&self) -> u64 {
        self.blocks
            .iter()
            .map(|b| {
                let n = b.values.len() as u64;
                let col_bits = bits_for(b.cols.max(1) as u64);
                let extent_bits = bits_for(n + 1);
                n * col_bits + (b.rows as u64 + 1) * extent_bits
            })
            .sum()
    }
}

/// Smallest number of bits that can distinguish `count` values.
fn bits_for(count: u64) -> u64 {
    if count <= 1 {
        0
    } else {
        64 - (count - 1).leading_zeros() as u64
    }
}

pub fn encode_csr_absolute(values: &[f64], rows: usize, cols: usize, block: (usize, usize)) -> Result<CsrAbsolute> {
    if values.len() != rows * cols {
        return Err(Error::Shape(format!(
            "matrix values {} != {rows}x{cols}",
            values.len()
        )));
    }
    if block.0 == 0 || block.1 == 0 {
        return Err(Error::Shape("block dims must be >= 1".into()));
    }
    let mut blocks = Vec::new();
    let mut row0 = 0;
    while row0 < rows {
        let brows = block.0.min(rows - row0);
        let mut col0 = 0;
        while col0 < cols {
            let bcols = block.1.min(cols - col0);
            let mut vals = Vec::new();
            let mut idxs = Vec::new();
            let mut extents = Vec::with_capacity(brows + 1);
            extents.push(0);
            for r in 0..brows {
                let base = (row0 + r) * cols + col0;
                for c in 0..bcols {
                    let v = values[base + c];
                    if v != 0.0 {
                        vals.push(v);
                        idxs.push(c as u32);
                    }
                }
                extents.push(vals.len() as u32);
            }
            blocks.push(CsrBlock {
                row0,
                col0,
                rows: brows,
                cols: bcols,
                values: vals,
                col_indices: idxs,
                row_extents: extents,
            });
            col0 += bcols;
        }
        row0 += brows;
    }
    Ok(CsrAbsolute { rows, cols, block, blocks })
}

pub fn decode_csr_absolute(enc: &CsrAbsolute) -> Vec<f64> {
    let mut dense = vec![0.0; enc.rows * enc.cols];
    for b in &enc.blocks {
        for r in 0..b.rows {
            let lo = b.row_extents[r] as usize;
            let hi = b.row_extents[r + 1] as usize;
            for k in lo..hi {
                let c = b.col_indices[k] as usize;
                dense[(b.row0 + r) * enc.cols + b.col0 + c] = b.values[k];
            }
        }
    }
    dense
}

// ---------------------------------------------------------------------------
// CSR with relative indices
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct CsrRelative {
    pub rows: usize,
    pub cols: usize,
    pub bits: u32,
    /// Stored values, dummies included, in scan order.
    pub values: Vec<f64>,
    /// `gap - 1` codes, one per stored value; each `< 2^bits`.
    pub gap_codes: Vec<u32>,
    pub dummy_zero_count: usize,
}

impl CsrRelative {
    /// Stored numbers: one value + one gap per entry, dummies included.
    pub fn stored_numbers(&self) -> usize {
        2 * self.values.len()
    }
}

pub fn encode_csr_relative(values: &[f64], rows: usize, cols: usize, bits: u32) -> Result<CsrRelative> {
    if values.len() != rows * cols {
        return Err(Error::Shape(format!(
            "matrix values {} != {rows}x{cols}",
            values.len()
        )));
    }
    if !(1..=32).contains(&bits) {
        return Err(Error::Constraint(format!("index bits {bits} outside 1..=32")));
    }
    let max_gap: u64 = 1 << bits;
    let mut out_values = Vec::new();
    let mut codes = Vec::new();
    let mut dummies = 0usize;
    let mut prev: i64 = -1;
    for (pos, &v) in values.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let mut gap = (pos as i64 - prev) as u64;
        while gap > max_gap {
            out_values.push(0.0);
            codes.push((max_gap - 1) as u32);
            dummies += 1;
            gap -= max_gap;
        }
        out_values.push(v);
        codes.push((gap - 1) as u32);
        prev = pos as i64;
    }
    Ok(CsrRelative {
        rows,
        cols,
        bits,
        values: out_values,
        gap_codes: codes,
        dummy_zero_count: dummies,
    })
}

pub fn decode_csr_relative(enc: &CsrRelative) -> Vec<f64> {
    let mut dense = vec![0.0; enc.rows * enc.cols];
    let mut pos: i64 = -1;
    for (v, code) in enc.values.iter().zip(&enc.gap_codes) {
        pos += *code as i64 + 1;
        dense[pos as usize] = *v;
    }
    dense
}

/// Gaps between consecutive nonzeros in a row-major scan (first gap counts
/// from position -1), plus the nonzero count.
pub fn nonzero_gaps(values: &[f64]) -> (Vec<u64>, usize) {
    let mut gaps = Vec::new();
    let mut prev: i64 = -1;
    for (pos, &v) in values.iter().enumerate() {
        if v != 0.0 {
            gaps.push((pos as i64 - prev) as u64);
            prev = pos as i64;
        }
    }
    let n = gaps.len();
    (gaps, n)
}

/// Dummies needed at width `bits`: sum of `ceil(gap / 2^bits) - 1`.
pub fn dummy_count_for_bits(gaps: &[u64], bits: u32) -> u64 {
    let max_gap: u64 = 1 << bits;
    gaps.iter().map(|g| (g - 1) / max_gap).sum()
}

// ---------------------------------------------------------------------------
// Storage reports
// ---------------------------------------------------------------------------

/// All storage columns for one matrix or one model, in exact bit counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageReport {
    pub dense_count: usize,
    pub weight_count: usize,
    pub quant_bits: u32,
    /// Per-weight relative-index width; `None` for structured reports, which
    /// carry no index storage at all.
    pub index_bits: Option<u32>,
    pub dummy_zeros: usize,
    pub structured: bool,
    pub dense_baseline_bytes: f64,
    pub weight_store_bytes: f64,
    pub weight_index_relative_bytes: f64,
    pub weight_index_absolute_bytes: Option<f64>,
    /// Dense baseline over weight+index (relative) bytes for non-structured,
    /// over weight storage alone for structured.
    pub compression_rate: f64,
}

/// Build a report from raw counts. This is the arithmetic core shared by the
/// model analyzer and the published-results table tool.
pub fn report_from_counts(
    dense_count: usize,
    weight_count: usize,
    quant_bits: u32,
    index_bits: Option<u32>,
    dummy_zeros: usize,
    absolute_index_bits_total: Option<u64>,
    structured: bool,
) -> StorageReport {
    let dense_baseline_bytes = dense_count as f64 * DENSE_BASELINE_BITS as f64 / 8.0;
    let weight_store_bytes = weight_count as f64 * quant_bits as f64 / 8.0;
    let (weight_index_relative_bytes, weight_index_absolute_bytes) = if structured {
        (weight_store_bytes, Some(weight_store_bytes))
    } else {
        let i = index_bits.unwrap_or(0) as f64;
        let rel = (weight_count + dummy_zeros) as f64 * (quant_bits as f64 + i) / 8.0;
        let abs = absolute_index_bits_total
            .map(|bits| weight_count as f64 * quant_bits as f64 / 8.0 + bits as f64 / 8.0);
        (rel, abs)
    };
    let denom = if structured { weight_store_bytes } else { weight_index_relative_bytes };
    let compression_rate = if denom > 0.0 { dense_baseline_bytes / denom } else { f64::INFINITY };
    StorageReport {
        dense_count,
        weight_count,
        quant_bits,
        index_bits: if structured { None } else { index_bits },
        dummy_zeros,
        structured,
        dense_baseline_bytes,
        weight_store_bytes,
        weight_index_relative_bytes,
        weight_index_absolute_bytes,
        compression_rate,
    }
}

/// Sweep index widths 1..=32 and return the one minimizing relative-scheme
/// bytes, dummies included; ties prefer fewer bits.
pub fn optimize_index_bits_for_gaps(gaps: &[u64], n: usize, quant_bits: u32) -> (u32, u64) {
    let mut best = (1u32, u64::MAX);
    for b in 1..=32u32 {
        let dummies = dummy_count_for_bits(gaps, b);
        let cost = (n as u64 + dummies) * (quant_bits as u64 + b as u64);
        if cost < best.1 {
            best = (b, cost);
        }
    }
    best
}

/// Optimal relative index width for a single matrix, with its report.
pub fn optimize_index_bits(values: &[f64], rows: usize, cols: usize, quant_bits: u32) -> (u32, StorageReport) {
    let (gaps, n) = nonzero_gaps(values);
    if n == 0 {
        let report = report_from_counts(rows * cols, 0, quant_bits, Some(1), 0, Some(0), false);
        return (1, report);
    }
    let (bits, _) = optimize_index_bits_for_gaps(&gaps, n, quant_bits);
    let dummies = dummy_count_for_bits(&gaps, bits) as usize;
    let abs = encode_csr_absolute(values, rows, cols, DEFAULT_BLOCK)
        .map(|e| e.index_bits_total())
        .unwrap_or(0);
    let report = report_from_counts(rows * cols, n, quant_bits, Some(bits), dummies, Some(abs), false);
    (bits, report)
}

/// Whole-model report. Eligible layers (all, or conv only) are scanned
/// independently; one index width is chosen jointly to minimize the summed
/// relative storage, mirroring a single per-network index width.
pub fn storage_report(model: &Model, quant_bits: u32, conv_only: bool, structured: bool) -> StorageReport {
    let mut per_layer_gaps: Vec<Vec<u64>> = Vec::new();
    let mut n_total = 0usize;
    let mut dense_total = 0usize;
    let mut abs_bits_total = 0u64;
    for layer in &model.layers {
        if conv_only && layer.kind() != LayerKind::Conv {
            continue;
        }
        let (rows, cols) = layer.weights.matrix_shape();
        dense_total += layer.weights.numel();
        let (gaps, n) = nonzero_gaps(layer.weights.values());
        n_total += n;
        per_layer_gaps.push(gaps);
        if let Ok(enc) = encode_csr_absolute(layer.weights.values(), rows, cols, DEFAULT_BLOCK) {
            abs_bits_total += enc.index_bits_total();
        }
    }
    if structured {
        return report_from_counts(dense_total, n_total, quant_bits, None, 0, None, true);
    }
    let mut best = (1u32, u64::MAX, 0u64);
    for b in 1..=32u32 {
        let dummies: u64 = per_layer_gaps.iter().map(|g| dummy_count_for_bits(g, b)).sum();
        let cost = (n_total as u64 + dummies) * (quant_bits as u64 + b as u64);
        if cost < best.1 {
            best = (b, cost, dummies);
        }
    }
    report_from_counts(
        dense_total,
        n_total,
        quant_bits,
        Some(best.0),
        best.2 as usize,
        Some(abs_bits_total),
        false,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum StorageUnit {
    Kb,
    Mb,
}

impl StorageUnit {
    pub fn divisor(self) -> f64 {
        match self {
            StorageUnit::Kb => 1e3,
            StorageUnit::Mb => 1e6,
        }
    }

    pub fn suffix(self) -> &'static str {
        match self {
            StorageUnit::Kb => "KB",
            StorageUnit::Mb => "MB",
        }
    }
}

/// Format in a fixed decimal unit, two decimals, trailing zeros trimmed.
pub fn format_storage_in(bytes: f64, unit: StorageUnit) -> String {
    let s = format!("{:.2}", bytes / unit.divisor());
    let s = s.trim_end_matches('0').trim_end_matches('.');
    format!("{s}{}", unit.suffix())
}

/// Decimal storage formatting with an automatic unit (MB from 10^6 bytes).
pub fn format_storage(bytes: f64) -> String {
    let unit = if bytes >= 1e6 { StorageUnit::Mb } else { StorageUnit::Kb };
    format_storage_in(bytes, unit)
}

/// Standalone sparse-matrix file: dims plus a dense value list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SparseMatrixFile {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl SparseMatrixFile {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let m: SparseMatrixFile = serde_json::from_str(&text)?;
        if m.values.len() != m.rows * m.cols {
            return Err(Error::Shape("sparse-matrix file dims do not match value list".into()));
        }
        Ok(m)
    }
}

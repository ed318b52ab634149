//! Weight tensors, their GEMM (matrix) form, and structured group views.
//!
//! A convolution weight tensor has dims `(A, B, C, D)` = (filters, channels,
//! kernel height, kernel width), stored row-major. Fully-connected weights are
//! treated as `(rows, cols, 1, 1)` so every structured operation applies
//! uniformly to both layer kinds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Fc,
}

/// The three structured-pruning group axes.
///
/// * `Filter` — one group per output filter (a GEMM row).
/// * `Channel` — one group per input channel (a band of GEMM columns).
/// * `Column` — one group per kernel position `(b, c, d)` across all filters
///   (a single GEMM column).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StructuredAxis {
    Filter,
    Channel,
    Column,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTensor {
    dims: [usize; 4],
    values: Vec<f64>,
    kind: LayerKind,
}

impl WeightTensor {
    pub fn new_conv(dims: [usize; 4], values: Vec<f64>) -> Result<Self> {
        Self::new(dims, values, LayerKind::Conv)
    }

    /// FC weights as `(rows, cols, 1, 1)`.
    pub fn new_fc(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::new([rows, cols, 1, 1], values, LayerKind::Fc)
    }

    fn new(dims: [usize; 4], values: Vec<f64>, kind: LayerKind) -> Result<Self> {
        let numel: usize = dims.iter().product();
        if dims.contains(&0) {
            return Err(Error::Shape(format!("zero-sized dims {dims:?}")));
        }
        if values.len() != numel {
            return Err(Error::Shape(format!(
                "values length {} does not match dims {:?} (numel {})",
                values.len(),
                dims,
                numel
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "weight value at flat index {pos} is {}",
                values[pos]
            )));
        }
        Ok(Self { dims, values, kind })
    }

    pub fn zeros(dims: [usize; 4], kind: LayerKind) -> Self {
        let numel = dims.iter().product();
        Self {
            dims,
            values: vec![0.0; numel],
            kind,
        }
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self::zeros(other.dims, other.kind)
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    /// Number of filters (conv) or output rows (fc).
    pub fn num_filters(&self) -> usize {
        self.dims[0]
    }

    /// Number of input channels (conv) or input columns (fc).
    pub fn num_channels(&self) -> usize {
        self.dims[1]
    }

    pub fn kernel_hw(&self) -> (usize, usize) {
        (self.dims[2], self.dims[3])
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn validate_finite(&self) -> Result<()> {
        if let Some(pos) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "weight value at flat index {pos} is {}",
                self.values[pos]
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn flat_index(&self, a: usize, b: usize, c: usize, d: usize) -> usize {
        let [_, bb, cc, dd] = self.dims;
        ((a * bb + b) * cc + c) * dd + d
    }

    /// Matrix shape `(rows, cols)` of the GEMM form: `A x (B*C*D)`.
    pub fn matrix_shape(&self) -> (usize, usize) {
        let [a, b, c, d] = self.dims;
        (a, b * c * d)
    }

    pub fn count_nonzero(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }

    pub fn group_count(&self, axis: StructuredAxis) -> usize {
        let [a, b, c, d] = self.dims;
        match axis {
            StructuredAxis::Filter => a,
            StructuredAxis::Channel => b,
            StructuredAxis::Column => b * c * d,
        }
    }

    pub fn group_size(&self, axis: StructuredAxis) -> usize {
        let [a, b, c, d] = self.dims;
        match axis {
            StructuredAxis::Filter => b * c * d,
            StructuredAxis::Channel => a * c * d,
            StructuredAxis::Column => a,
        }
    }

    /// Flat indices of group `g` along `axis`, in increasing order.
    pub fn group_indices(&self, axis: StructuredAxis, g: usize) -> Vec<usize> {
        let [a, b, c, d] = self.dims;
        let cd = c * d;
        let bcd = b * cd;
        match axis {
            StructuredAxis::Filter => (g * bcd..(g + 1) * bcd).collect(),
            StructuredAxis::Channel => (0..a)
                .flat_map(|fa| (0..cd).map(move |k| fa * bcd + g * cd + k))
                .collect(),
            StructuredAxis::Column => (0..a).map(|fa| fa * bcd + g).collect(),
        }
    }

    /// All groups along `axis`; together they partition `0..numel`.
    pub fn structured_view(&self, axis: StructuredAxis) -> Vec<Vec<usize>> {
        (0..self.group_count(axis))
            .map(|g| self.group_indices(axis, g))
            .collect()
    }

    /// Squared Frobenius norm of each group along `axis`.
    pub fn group_norms_sq(&self, axis: StructuredAxis) -> Vec<f64> {
        let [a, b, c, d] = self.dims;
        let cd = c * d;
        let bcd = b * cd;
        let mut norms = vec![0.0; self.group_count(axis)];
        match axis {
            StructuredAxis::Filter => {
                for (g, chunk) in self.values.chunks_exact(bcd).enumerate() {
                    norms[g] = chunk.iter().map(|v| v * v).sum();
                }
            }
            StructuredAxis::Channel => {
                for fa in 0..a {
                    for g in 0..b {
                        let base = fa * bcd + g * cd;
                        norms[g] += self.values[base..base + cd].iter().map(|v| v * v).sum::<f64>();
                    }
                }
            }
            StructuredAxis::Column => {
                for fa in 0..a {
                    let base = fa * bcd;
                    for g in 0..bcd {
                        let v = self.values[base + g];
                        norms[g] += v * v;
                    }
                }
            }
        }
        norms
    }

    /// Number of groups along `axis` containing at least one nonzero entry.
    pub fn count_nonzero_groups(&self, axis: StructuredAxis) -> usize {
        self.group_norms_sq(axis).iter().filter(|n| **n != 0.0).count()
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Flatten a conv tensor to its GEMM matrix: row `a` is filter `a` in
    /// row-major `(b, c, d)` order.
    pub fn to_gemm(&self) -> Result<GemmMatrix> {
        if self.kind != LayerKind::Conv {
            return Err(Error::Shape(
                "to_gemm expects a conv tensor; fc weights are already a matrix".into(),
            ));
        }
        let (rows, cols) = self.matrix_shape();
        Ok(GemmMatrix {
            rows,
            cols,
            values: self.values.clone(),
            source_dims: self.dims,
        })
    }
}

/// GEMM (im2col) matrix form of a conv weight tensor. Keeps the source dims
/// so the round trip back to the tensor is lossless.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GemmMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    source_dims: [usize; 4],
}

impl GemmMatrix {
    pub fn source_dims(&self) -> [usize; 4] {
        self.source_dims
    }

    pub fn from_gemm(&self) -> Result<WeightTensor> {
        let numel: usize = self.source_dims.iter().product();
        if numel != self.values.len() || self.rows * self.cols != numel {
            return Err(Error::Shape(format!(
                "gemm matrix {}x{} does not match source dims {:?}",
                self.rows, self.cols, self.source_dims
            )));
        }
        WeightTensor::new_conv(self.source_dims, self.values.clone())
    }
}

/// Exact pruning rate: original element count over remaining nonzeros.
/// Kept as an integer pair so callers can report the exact rational.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneRate {
    pub total: usize,
    pub nonzero: usize,
}

impl PruneRate {
    /// As a real number; an all-zero tensor reports infinity rather than
    /// crashing on the division.
    pub fn ratio(&self) -> f64 {
        if self.nonzero == 0 {
            f64::INFINITY
        } else {
            self.total as f64 / self.nonzero as f64
        }
    }
}

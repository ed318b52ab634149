//! Closed-form Euclidean projections onto the per-layer constraint sets:
//! element cardinality, nonzero-filter / channel / column budgets, and
//! equal-distance quantization lattices.
//!
//! Every projection returns the nearest feasible tensor together with the
//! survivor mask and the squared distance moved. Ties (equal magnitudes or
//! equal group norms) keep the lower index so results are deterministic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{StructuredAxis, WeightTensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ConstraintSpec {
    /// At most `max_nonzero` nonzero elements.
    NonStructured { max_nonzero: usize },
    /// At most `max_filters` nonzero filters (GEMM rows).
    Filter { max_filters: usize },
    /// At most `max_channels` nonzero input channels.
    Channel { max_channels: usize },
    /// At most `max_columns` nonzero kernel-position vectors (GEMM columns).
    Column { max_columns: usize },
    /// Every element on one of these strictly increasing, equally spaced
    /// levels.
    Quantization { levels: Vec<f64> },
}

impl ConstraintSpec {
    pub fn axis(&self) -> Option<StructuredAxis> {
        match self {
            ConstraintSpec::Filter { .. } => Some(StructuredAxis::Filter),
            ConstraintSpec::Channel { .. } => Some(StructuredAxis::Channel),
            ConstraintSpec::Column { .. } => Some(StructuredAxis::Column),
            _ => None,
        }
    }

    pub fn budget(&self) -> Option<usize> {
        match *self {
            ConstraintSpec::NonStructured { max_nonzero } => Some(max_nonzero),
            ConstraintSpec::Filter { max_filters } => Some(max_filters),
            ConstraintSpec::Channel { max_channels } => Some(max_channels),
            ConstraintSpec::Column { max_columns } => Some(max_columns),
            ConstraintSpec::Quantization { .. } => None,
        }
    }

    pub fn is_pruning(&self) -> bool {
        !matches!(self, ConstraintSpec::Quantization { .. })
    }

    /// Budget within the group count; quantization levels increasing with
    /// constant spacing.
    pub fn validate_for(&self, w: &WeightTensor) -> Result<()> {
        match self {
            ConstraintSpec::NonStructured { max_nonzero } => {
                if *max_nonzero > w.numel() {
                    return Err(Error::Constraint(format!(
                        "nonzero budget {} exceeds element count {}",
                        max_nonzero,
                        w.numel()
                    )));
                }
            }
            ConstraintSpec::Filter { .. }
            | ConstraintSpec::Channel { .. }
            | ConstraintSpec::Column { .. } => {
                let axis = self.axis().unwrap();
                let budget = self.budget().unwrap();
                if budget > w.group_count(axis) {
                    return Err(Error::Constraint(format!(
                        "group budget {} exceeds {:?} group count {}",
                        budget,
                        axis,
                        w.group_count(axis)
                    )));
                }
            }
            ConstraintSpec::Quantization { levels } => {
                validate_levels(levels)?;
            }
        }
        Ok(())
    }

    /// A pruning budget that no tensor can violate; such layers need no
    /// regularization at all.
    pub fn is_vacuous_for(&self, w: &WeightTensor) -> bool {
        match self {
            ConstraintSpec::NonStructured { max_nonzero } => *max_nonzero >= w.numel(),
            ConstraintSpec::Quantization { .. } => false,
            _ => self.budget().unwrap() >= w.group_count(self.axis().unwrap()),
        }
    }

    /// Exact feasibility check, counting on raw values.
    pub fn is_satisfied_by(&self, w: &WeightTensor) -> bool {
        match self {
            ConstraintSpec::NonStructured { max_nonzero } => w.count_nonzero() <= *max_nonzero,
            ConstraintSpec::Quantization { levels } => w
                .values()
                .iter()
                .all(|v| *v == 0.0 || levels.iter().any(|l| l == v)),
            _ => {
                let axis = self.axis().unwrap();
                w.count_nonzero_groups(axis) <= self.budget().unwrap()
            }
        }
    }
}

pub fn validate_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::Constraint("quantization needs at least one level".into()));
    }
    if levels.iter().any(|l| !l.is_finite()) {
        return Err(Error::Constraint("quantization levels must be finite".into()));
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Constraint("quantization levels must be strictly increasing".into()));
    }
    if levels.len() >= 3 {
        let d0 = levels[1] - levels[0];
        for w in levels.windows(2) {
            let d = w[1] - w[0];
            if (d - d0).abs() > 1e-9 * d0.abs().max(1.0) {
                return Err(Error::Constraint(
                    "quantization levels must be equally spaced".into(),
                ));
            }
        }
    }
    Ok(())
}

/// Equally spaced levels symmetric about zero; zero itself is a level exactly
/// when the count is odd. Binary is `{-s, +s}` (count 2, spacing 2s), ternary
/// `{-s, 0, +s}`.
pub fn symmetric_levels(count: usize, spacing: f64) -> Vec<f64> {
    assert!(count >= 1 && spacing > 0.0);
    let offset = (count as f64 - 1.0) / 2.0;
    (0..count).map(|j| (j as f64 - offset) * spacing).collect()
}

/// Sweep the level spacing to minimize projection distance of `w` onto a
/// symmetric lattice with `count` levels. Used to calibrate per-layer scales
/// for fixed bit-width quantization.
pub fn calibrate_spacing(values: &[f64], count: usize, alive: Option<&[bool]>) -> f64 {
    let max_abs = values
        .iter()
        .enumerate()
        .filter(|(i, _)| alive.map(|m| m[*i]).unwrap_or(true))
        .map(|(_, v)| v.abs())
        .fold(0.0f64, f64::max);
    if max_abs == 0.0 {
        return 1.0;
    }
    let top = (count as f64 - 1.0) / 2.0; // outermost level multiple
    let d_max = if top > 0.0 { max_abs / top } else { 2.0 * max_abs };
    let mut best = (f64::INFINITY, d_max);
    for step in 1..=200 {
        let d = d_max * step as f64 / 200.0;
        let levels = symmetric_levels(count, d);
        let mut dist = 0.0;
        for (i, v) in values.iter().enumerate() {
            if alive.map(|m| m[i]).unwrap_or(true) {
                let q = nearest_level(&levels, *v);
                dist += (v - q) * (v - q);
            }
        }
        if dist < best.0 {
            best = (dist, d);
        }
    }
    best.1
}

/// Nearest level, ties toward the smaller level.
pub fn nearest_level(levels: &[f64], v: f64) -> f64 {
    let idx = levels.partition_point(|l| *l <= v);
    if idx == 0 {
        return levels[0];
    }
    if idx == levels.len() {
        return levels[idx - 1];
    }
    let lo = levels[idx - 1];
    let hi = levels[idx];
    if v - lo <= hi - v {
        lo
    } else {
        hi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub tensor: WeightTensor,
    /// Surviving coordinates (pruning) or simply the eligible coordinates
    /// (quantization).
    pub mask: Vec<bool>,
    /// Squared Euclidean distance between input and output.
    pub distance_sq: f64,
}

/// Indices of the `k` largest scores; equal scores keep the lower index.
fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then_with(|| a.cmp(&b))
    });
    order.truncate(k);
    order
}

pub fn project_nonstructured(x: &WeightTensor, max_nonzero: usize) -> Result<ProjectionResult> {
    project_nonstructured_masked(x, max_nonzero, None)
}

/// Keep the `max_nonzero` largest-magnitude elements, zero the rest. With an
/// alive mask, dead coordinates are forced to zero and never selected.
pub fn project_nonstructured_masked(
    x: &WeightTensor,
    max_nonzero: usize,
    alive: Option<&[bool]>,
) -> Result<ProjectionResult> {
    ConstraintSpec::NonStructured { max_nonzero }.validate_for(x)?;
    let scores: Vec<f64> = x
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if alive.map(|m| m[i]).unwrap_or(true) {
                v.abs()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let alive_count = alive
        .map(|m| m.iter().filter(|b| **b).count())
        .unwrap_or(x.numel());
    let keep = top_k_indices(&scores, max_nonzero.min(alive_count));
    build_pruned(x, &keep)
}

fn build_pruned(x: &WeightTensor, keep: &[usize]) -> Result<ProjectionResult> {
    let mut mask = vec![false; x.numel()];
    for &i in keep {
        mask[i] = true;
    }
    let mut values = vec![0.0; x.numel()];
    let mut distance_sq = 0.0;
    for (i, &v) in x.values().iter().enumerate() {
        if mask[i] {
            values[i] = v;
        } else {
            distance_sq += v * v;
        }
    }
    let tensor = match x.kind() {
        crate::tensor::LayerKind::Conv => WeightTensor::new_conv(x.dims(), values)?,
        crate::tensor::LayerKind::Fc => {
            WeightTensor::new_fc(x.dims()[0], x.dims()[1], values)?
        }
    };
    Ok(ProjectionResult { tensor, mask, distance_sq })
}

fn project_groups(
    x: &WeightTensor,
    axis: StructuredAxis,
    budget: usize,
    alive: Option<&[bool]>,
) -> Result<ProjectionResult> {
    let norms = x.group_norms_sq(axis);
    let scores: Vec<f64> = norms
        .iter()
        .enumerate()
        .map(|(g, n)| {
            let eligible = alive
                .map(|m| x.group_indices(axis, g).iter().any(|&i| m[i]))
                .unwrap_or(true);
            if eligible {
                *n
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let eligible_count = scores.iter().filter(|s| s.is_finite()).count();
    let kept_groups = top_k_indices(&scores, budget.min(eligible_count));
    let mut keep = Vec::new();
    for &g in &kept_groups {
        for i in x.group_indices(axis, g) {
            if alive.map(|m| m[i]).unwrap_or(true) {
                keep.push(i);
            }
        }
    }
    build_pruned(x, &keep)
}

/// Keep the filters with the largest squared Frobenius norms.
pub fn project_filter(x: &WeightTensor, max_filters: usize) -> Result<ProjectionResult> {
    ConstraintSpec::Filter { max_filters }.validate_for(x)?;
    project_groups(x, StructuredAxis::Filter, max_filters, None)
}

pub fn project_channel(x: &WeightTensor, max_channels: usize) -> Result<ProjectionResult> {
    ConstraintSpec::Channel { max_channels }.validate_for(x)?;
    project_groups(x, StructuredAxis::Channel, max_channels, None)
}

pub fn project_column(x: &WeightTensor, max_columns: usize) -> Result<ProjectionResult> {
    ConstraintSpec::Column { max_columns }.validate_for(x)?;
    project_groups(x, StructuredAxis::Column, max_columns, None)
}

pub fn project_quantization(x: &WeightTensor, levels: &[f64]) -> Result<ProjectionResult> {
    project_quantization_masked(x, levels, None)
}

/// Map every (alive) element to its nearest level; dead coordinates stay at
/// exactly zero.
pub fn project_quantization_masked(
    x: &WeightTensor,
    levels: &[f64],
    alive: Option<&[bool]>,
) -> Result<ProjectionResult> {
    validate_levels(levels)?;
    let mut values = Vec::with_capacity(x.numel());
    let mut distance_sq = 0.0;
    for (i, &v) in x.values().iter().enumerate() {
        if alive.map(|m| m[i]).unwrap_or(true) {
            let q = nearest_level(levels, v);
            distance_sq += (v - q) * (v - q);
            values.push(q);
        } else {
            values.push(0.0);
        }
    }
    let mask = alive
        .map(|m| m.to_vec())
        .unwrap_or_else(|| vec![true; x.numel()]);
    let tensor = match x.kind() {
        crate::tensor::LayerKind::Conv => WeightTensor::new_conv(x.dims(), values)?,
        crate::tensor::LayerKind::Fc => {
            WeightTensor::new_fc(x.dims()[0], x.dims()[1], values)?
        }
    };
    Ok(ProjectionResult { tensor, mask, distance_sq })
}

/// Dispatch on the constraint variant.
pub fn project(x: &WeightTensor, spec: &ConstraintSpec) -> Result<ProjectionResult> {
    project_masked(x, spec, None)
}

pub fn project_masked(
    x: &WeightTensor,
    spec: &ConstraintSpec,
    alive: Option<&[bool]>,
) -> Result<ProjectionResult> {
    spec.validate_for(x)?;
    match spec {
        ConstraintSpec::NonStructured { max_nonzero } => {
            project_nonstructured_masked(x, *max_nonzero, alive)
        }
        ConstraintSpec::Filter { max_filters } => {
            project_groups(x, StructuredAxis::Filter, *max_filters, alive)
        }
        ConstraintSpec::Channel { max_channels } => {
            project_groups(x, StructuredAxis::Channel, *max_channels, alive)
        }
        ConstraintSpec::Column { max_columns } => {
            project_groups(x, StructuredAxis::Column, *max_columns, alive)
        }
        ConstraintSpec::Quantization { levels } => {
            project_quantization_masked(x, levels, alive)
        }
    }
}

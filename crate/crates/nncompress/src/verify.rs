//! Independent feasibility verifier for compressed checkpoints.
//!
//! Deliberately avoids the projection and engine code paths: nonzeros and
//! structure counts are re-derived with plain loops over the raw buffers.

use serde::{Deserialize, Serialize};

use crate::model::Model;
use crate::projection::ConstraintSpec;
use crate::tensor::StructuredAxis;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerVerification {
    pub layer: usize,
    pub nonzero_weights: usize,
    pub budget_ok: Option<bool>,
    pub quantized_on_levels: Option<bool>,
    pub masked_zeros_exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub feasible: bool,
    pub layers: Vec<LayerVerification>,
    pub messages: Vec<String>,
}

fn group_nonzero_count(values: &[f64], dims: [usize; 4], axis: StructuredAxis) -> usize {
    let [a, b, c, d] = dims;
    let cd = c * d;
    let bcd = b * cd;
    let groups = match axis {
        StructuredAxis::Filter => a,
        StructuredAxis::Channel => b,
        StructuredAxis::Column => bcd,
    };
    let mut nonzero = vec![false; groups];
    for (i, v) in values.iter().enumerate() {
        if *v == 0.0 {
            continue;
        }
        let fa = i / bcd;
        let rem = i % bcd;
        let g = match axis {
            StructuredAxis::Filter => fa,
            StructuredAxis::Channel => rem / cd,
            StructuredAxis::Column => rem,
        };
        nonzero[g] = true;
    }
    nonzero.iter().filter(|x| **x).count()
}

/// Check a checkpoint against its constraints: nonzero counts within
/// budgets, every surviving quantized weight bit-exactly on a level, masked
/// coordinates bit-exactly zero.
pub fn verify_checkpoint(model: &Model, specs: Option<&[Option<ConstraintSpec>]>) -> VerificationReport {
    let mut layers = Vec::new();
    let mut messages = Vec::new();
    let mut feasible = true;
    for (li, layer) in model.layers.iter().enumerate() {
        let values = layer.weights.values();
        let nonzero_weights = values.iter().filter(|v| **v != 0.0).count();

        let mut masked_zeros_exact = true;
        if let Some(mask) = &layer.weight_mask {
            for (v, keep) in values.iter().zip(mask) {
                if !keep && *v != 0.0 {
                    masked_zeros_exact = false;
                }
            }
        }
        if let Some(mask) = &layer.bias_mask {
            for (v, keep) in layer.bias.values.iter().zip(mask) {
                if !keep && *v != 0.0 {
                    masked_zeros_exact = false;
                }
            }
        }
        if !masked_zeros_exact {
            messages.push(format!("layer {li}: masked coordinate holds a nonzero value"));
        }

        let budget_ok = specs.and_then(|s| s[li].as_ref()).map(|spec| match spec {
            ConstraintSpec::NonStructured { max_nonzero } => nonzero_weights <= *max_nonzero,
            ConstraintSpec::Filter { max_filters } => {
                group_nonzero_count(values, layer.weights.dims(), StructuredAxis::Filter)
                    <= *max_filters
            }
            ConstraintSpec::Channel { max_channels } => {
                group_nonzero_count(values, layer.weights.dims(), StructuredAxis::Channel)
                    <= *max_channels
            }
            ConstraintSpec::Column { max_columns } => {
                group_nonzero_count(values, layer.weights.dims(), StructuredAxis::Column)
                    <= *max_columns
            }
            ConstraintSpec::Quantization { levels } => values
                .iter()
                .enumerate()
                .all(|(i, v)| {
                    let alive = layer.weight_mask.as_ref().map(|m| m[i]).unwrap_or(true);
                    !alive || levels.iter().any(|l| l.to_bits() == v.to_bits())
                }),
        });
        if budget_ok == Some(false) {
            messages.push(format!("layer {li}: constraint violated"));
        }

        let quantized_on_levels = layer.quant_levels.as_ref().map(|levels| {
            values.iter().enumerate().all(|(i, v)| {
                let alive = layer.weight_mask.as_ref().map(|m| m[i]).unwrap_or(true);
                !alive || levels.iter().any(|l| l.to_bits() == v.to_bits())
            })
        });
        if quantized_on_levels == Some(false) {
            messages.push(format!("layer {li}: weight off its recorded quantization levels"));
        }

        feasible &= masked_zeros_exact
            && budget_ok.unwrap_or(true)
            && quantized_on_levels.unwrap_or(true);
        layers.push(LayerVerification {
            layer: li,
            nonzero_weights,
            budget_ok,
            quantized_on_levels,
            masked_zeros_exact,
        });
    }
    VerificationReport { feasible, layers, messages }
}

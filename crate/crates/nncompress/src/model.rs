//! Network definition: layers, masks, shape checking, filter-prune
//! propagation, and the versioned checkpoint container.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{LayerKind, PruneRate, StructuredAxis, WeightTensor};

pub const CHECKPOINT_FORMAT: &str = "nncompress-model";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasVector {
    pub values: Vec<f64>,
}

impl BiasVector {
    pub fn zeros(n: usize) -> Self {
        Self { values: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// 2x2 max pooling with stride 2.
    Max2,
    None,
}

/// One layer: weights + bias + activation/pooling tags, plus compression
/// metadata. Pruned structures stay as exact zeros under a mask (`false` =
/// frozen at zero) until [`Model::compact`] physically removes them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: WeightTensor,
    pub bias: BiasVector,
    pub activation: Activation,
    pub pooling: Pooling,
    #[serde(default)]
    pub weight_mask: Option<Vec<bool>>,
    #[serde(default)]
    pub bias_mask: Option<Vec<bool>>,
    /// Set once the layer has been quantized; every unmasked weight then
    /// lies exactly on one of these levels.
    #[serde(default)]
    pub quant_levels: Option<Vec<f64>>,
}

impl Layer {
    pub fn new(weights: WeightTensor, bias: BiasVector, activation: Activation, pooling: Pooling) -> Result<Self> {
        if bias.len() != weights.num_filters() {
            return Err(Error::Shape(format!(
                "bias length {} != filter count {}",
                bias.len(),
                weights.num_filters()
            )));
        }
        Ok(Self {
            weights,
            bias,
            activation,
            pooling,
            weight_mask: None,
            bias_mask: None,
            quant_levels: None,
        })
    }

    pub fn kind(&self) -> LayerKind {
        self.weights.kind()
    }

    /// Zero every weight whose mask entry is `false`. Bit-exact `0.0`.
    pub fn enforce_mask(&mut self) {
        if let Some(mask) = &self.weight_mask {
            for (v, keep) in self.weights.values_mut().iter_mut().zip(mask) {
                if !keep {
                    *v = 0.0;
                }
            }
        }
        if let Some(mask) = &self.bias_mask {
            for (v, keep) in self.bias.values.iter_mut().zip(mask) {
                if !keep {
                    *v = 0.0;
                }
            }
        }
    }

    /// Intersect the existing mask with `new_mask` (false wins).
    pub fn merge_weight_mask(&mut self, new_mask: &[bool]) {
        match &mut self.weight_mask {
            Some(mask) => {
                for (m, n) in mask.iter_mut().zip(new_mask) {
                    *m = *m && *n;
                }
            }
            None => self.weight_mask = Some(new_mask.to_vec()),
        }
    }

    pub fn alive_count(&self) -> usize {
        match &self.weight_mask {
            Some(mask) => mask.iter().filter(|m| **m).count(),
            None => self.weights.numel(),
        }
    }
}

/// Spatial shape `(channels, height, width)` flowing between layers.
pub type FeatureShape = (usize, usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub layers: Vec<Layer>,
    pub input_shape: FeatureShape,
    pub class_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Propagation {
    /// Downstream channels of the next layer were zeroed and masked.
    Applied,
    /// The pruned layer is the last one; nothing downstream to update.
    LastLayerNoOp,
}

impl Model {
    pub fn new(layers: Vec<Layer>, input_shape: FeatureShape, class_count: usize) -> Result<Self> {
        let model = Self { layers, input_shape, class_count };
        model.validate()?;
        Ok(model)
    }

    /// Check finiteness, mask lengths, and that adjacent layer shapes compose.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("model has no layers".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.weights.validate_finite()?;
            if layer.bias.len() != layer.weights.num_filters() {
                return Err(Error::Shape(format!("layer {i}: bias/filter mismatch")));
            }
            if let Some(mask) = &layer.weight_mask {
                if mask.len() != layer.weights.numel() {
                    return Err(Error::Shape(format!("layer {i}: weight mask length mismatch")));
                }
            }
            if let Some(mask) = &layer.bias_mask {
                if mask.len() != layer.bias.len() {
                    return Err(Error::Shape(format!("layer {i}: bias mask length mismatch")));
                }
            }
            if let Some(levels) = &layer.quant_levels {
                if levels.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Constraint(format!(
                        "layer {i}: quantization levels must be strictly increasing"
                    )));
                }
            }
        }
        self.feature_shapes().map(|_| ())
    }

    /// Input feature shape of every layer plus the final output shape.
    /// Errors when adjacent layers do not compose.
    pub fn feature_shapes(&self) -> Result<Vec<FeatureShape>> {
        let mut shapes = vec![self.input_shape];
        let mut cur = self.input_shape;
        for (i, layer) in self.layers.iter().enumerate() {
            let (c, h, w) = cur;
            cur = match layer.kind() {
                LayerKind::Conv => {
                    let [a, b, kh, kw] = layer.weights.dims();
                    if b != c {
                        return Err(Error::Shape(format!(
                            "layer {i}: expects {b} input channels, got {c}"
                        )));
                    }
                    if kh > h || kw > w {
                        return Err(Error::Shape(format!("layer {i}: kernel larger than input")));
                    }
                    let (mut oh, mut ow) = (h - kh + 1, w - kw + 1);
                    if layer.pooling == Pooling::Max2 {
                        if oh % 2 != 0 || ow % 2 != 0 {
                            return Err(Error::Shape(format!(
                                "layer {i}: 2x2 pooling needs even spatial dims, got {oh}x{ow}"
                            )));
                        }
                        oh /= 2;
                        ow /= 2;
                    }
                    (a, oh, ow)
                }
                LayerKind::Fc => {
                    let (rows, cols) = layer.weights.matrix_shape();
                    if cols != c * h * w {
                        return Err(Error::Shape(format!(
                            "layer {i}: fc expects {cols} inputs, got {}",
                            c * h * w
                        )));
                    }
                    if layer.pooling != Pooling::None {
                        return Err(Error::Shape(format!("layer {i}: pooling on fc layer")));
                    }
                    (rows, 1, 1)
                }
            };
            shapes.push(cur);
        }
        let (c, h, w) = cur;
        if c * h * w != self.class_count {
            return Err(Error::Shape(format!(
                "final output size {} != class count {}",
                c * h * w,
                self.class_count
            )));
        }
        Ok(shapes)
    }

    pub fn enforce_masks(&mut self) {
        for layer in &mut self.layers {
            layer.enforce_mask();
        }
    }

    /// Total weight parameters (biases not counted).
    pub fn weight_param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.numel()).sum()
    }

    pub fn nonzero_weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.count_nonzero()).sum()
    }

    /// Overall pruning rate: original over remaining nonzero weights.
    pub fn pruning_rate(&self) -> PruneRate {
        PruneRate {
            total: self.weight_param_count(),
            nonzero: self.nonzero_weight_count(),
        }
    }

    /// Pruning rate restricted to conv layers.
    pub fn conv_pruning_rate(&self) -> PruneRate {
        let conv = self.layers.iter().filter(|l| l.kind() == LayerKind::Conv);
        let (total, nonzero) = conv.fold((0, 0), |(t, n), l| {
            (t + l.weights.numel(), n + l.weights.count_nonzero())
        });
        PruneRate { total, nonzero }
    }

    /// Zero the filters listed in `removed` in layer `layer_idx` (they must
    /// already hold all-zero weights), zero their biases, and zero/mask the
    /// corresponding structures of the next layer: input channels for a conv
    /// successor, the filter's block of input columns for an fc successor.
    pub fn propagate_filter_pruning(
        &self,
        layer_idx: usize,
        removed: &BTreeSet<usize>,
    ) -> Result<(Model, Propagation)> {
        let n_layers = self.layers.len();
        if layer_idx >= n_layers {
            return Err(Error::Shape(format!("layer index {layer_idx} out of range")));
        }
        let mut model = self.clone();
        if removed.is_empty() {
            return Ok((model, Propagation::Applied));
        }
        let layer = &self.layers[layer_idx];
        let filters = layer.weights.num_filters();
        for &f in removed {
            if f >= filters {
                return Err(Error::Shape(format!("filter {f} out of range (A={filters})")));
            }
            let all_zero = layer
                .weights
                .group_indices(StructuredAxis::Filter, f)
                .iter()
                .all(|&i| layer.weights.values()[i] == 0.0);
            if !all_zero {
                return Err(Error::Constraint(format!(
                    "filter {f} of layer {layer_idx} is not zero; prune it before propagating"
                )));
            }
        }

        // Dead filters produce dead feature maps, so their biases go too.
        {
            let layer = &mut model.layers[layer_idx];
            let mut bias_mask = layer
                .bias_mask
                .clone()
                .unwrap_or_else(|| vec![true; layer.bias.len()]);
            let mut weight_mask = layer
                .weight_mask
                .clone()
                .unwrap_or_else(|| vec![true; layer.weights.numel()]);
            for &f in removed {
                layer.bias.values[f] = 0.0;
                bias_mask[f] = false;
                for i in layer.weights.group_indices(StructuredAxis::Filter, f) {
                    weight_mask[i] = false;
                }
            }
            layer.bias_mask = Some(bias_mask);
            layer.weight_mask = Some(weight_mask);
        }

        if layer_idx + 1 == n_layers {
            return Ok((model, Propagation::LastLayerNoOp));
        }

        let shapes = self.feature_shapes()?;
        let (_, out_h, out_w) = shapes[layer_idx + 1];
        let next = &mut model.layers[layer_idx + 1];
        let mut dead: Vec<usize> = Vec::new();
        match next.kind() {
            LayerKind::Conv => {
                for &f in removed {
                    dead.extend(next.weights.group_indices(StructuredAxis::Channel, f));
                }
            }
            LayerKind::Fc => {
                // Column block [f*H*W, (f+1)*H*W) of the fc input corresponds
                // to filter f's feature map.
                let (rows, cols) = next.weights.matrix_shape();
                let span = out_h * out_w;
                for &f in removed {
                    for r in 0..rows {
                        for k in 0..span {
                            dead.push(r * cols + f * span + k);
                        }
                    }
                }
            }
        }
        let mut mask = next
            .weight_mask
            .clone()
            .unwrap_or_else(|| vec![true; next.weights.numel()]);
        for i in dead {
            next.weights.values_mut()[i] = 0.0;
            mask[i] = false;
        }
        next.weight_mask = Some(mask);
        Ok((model, Propagation::Applied))
    }

    /// Physically remove all-zero filters (and the matching downstream
    /// channels / fc columns) from every conv layer except the last layer.
    /// Column-pruned positions stay as stored zeros; only whole filters
    /// shrink the tensors.
    pub fn compact(&self) -> Result<Model> {
        let shapes = self.feature_shapes()?;
        let mut model = self.clone();
        for i in 0..model.layers.len().saturating_sub(1) {
            if model.layers[i].kind() != LayerKind::Conv {
                continue;
            }
            let dead: Vec<usize> = {
                let layer = &model.layers[i];
                (0..layer.weights.num_filters())
                    .filter(|&f| {
                        layer
                            .weights
                            .group_indices(StructuredAxis::Filter, f)
                            .iter()
                            .all(|&k| layer.weights.values()[k] == 0.0)
                            && layer.bias.values[f] == 0.0
                    })
                    .collect()
            };
            if dead.is_empty() {
                continue;
            }
            let keep: Vec<usize> = (0..model.layers[i].weights.num_filters())
                .filter(|f| !dead.contains(f))
                .collect();
            if keep.is_empty() {
                return Err(Error::Shape(format!("layer {i}: cannot compact away every filter")));
            }

            // Shrink layer i along the filter axis.
            {
                let layer = &mut model.layers[i];
                let [_, b, c, d] = layer.weights.dims();
                let mut values = Vec::with_capacity(keep.len() * b * c * d);
                let mut mask = Vec::new();
                for &f in &keep {
                    for k in layer.weights.group_indices(StructuredAxis::Filter, f) {
                        values.push(layer.weights.values()[k]);
                        if let Some(m) = &layer.weight_mask {
                            mask.push(m[k]);
                        }
                    }
                }
                layer.weights = WeightTensor::new_conv([keep.len(), b, c, d], values)?;
                layer.weight_mask = layer.weight_mask.as_ref().map(|_| mask);
                layer.bias.values = keep.iter().map(|&f| layer.bias.values[f]).collect();
                layer.bias_mask = layer
                    .bias_mask
                    .as_ref()
                    .map(|m| keep.iter().map(|&f| m[f]).collect());
            }

            // Shrink layer i+1 along its input axis.
            let (_, out_h, out_w) = shapes[i + 1];
            let next = &mut model.layers[i + 1];
            match next.kind() {
                LayerKind::Conv => {
                    let [a, _, c, d] = next.weights.dims();
                    let mut values = Vec::with_capacity(a * keep.len() * c * d);
                    let mut mask = Vec::new();
                    for fa in 0..a {
                        for &ch in &keep {
                            for cc in 0..c {
                                for dd in 0..d {
                                    let k = next.weights.flat_index(fa, ch, cc, dd);
                                    values.push(next.weights.values()[k]);
                                    if let Some(m) = &next.weight_mask {
                                        mask.push(m[k]);
                                    }
                                }
                            }
                        }
                    }
                    next.weight_mask = next.weight_mask.as_ref().map(|_| mask);
                    next.weights = WeightTensor::new_conv([a, keep.len(), c, d], values)?;
                }
                LayerKind::Fc => {
                    let (rows, cols) = next.weights.matrix_shape();
                    let span = out_h * out_w;
                    let mut values = Vec::with_capacity(rows * keep.len() * span);
                    let mut mask = Vec::new();
                    for r in 0..rows {
                        for &ch in &keep {
                            for k in 0..span {
                                let idx = r * cols + ch * span + k;
                                values.push(next.weights.values()[idx]);
                                if let Some(m) = &next.weight_mask {
                                    mask.push(m[idx]);
                                }
                            }
                        }
                    }
                    next.weight_mask = next.weight_mask.as_ref().map(|_| mask);
                    next.weights = WeightTensor::new_fc(rows, keep.len() * span, values)?;
                }
            }
        }
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            model: self.clone(),
        };
        let json = serde_json::to_string(&file)?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model> {
        let text = fs::read_to_string(path)?;
        let file: CheckpointFile = serde_json::from_str(&text)?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format '{}'", file.format)));
        }
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {})",
                file.version, CHECKPOINT_VERSION
            )));
        }
        file.model.validate()?;
        Ok(file.model)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    model: Model,
}

// ---------------------------------------------------------------------------
// Architecture registry
// ---------------------------------------------------------------------------

/// Known architectures constructible by id from configs and the CLI.
pub fn build_architecture(id: &str, seed: u64) -> Result<Model> {
    match id {
        "lenet5" => Ok(lenet5(seed)),
        "toy-conv" => Ok(toy_conv(seed)),
        "toy-mlp" => Ok(toy_mlp(seed)),
        other => Err(Error::Config(format!(
            "unknown architecture '{other}' (known: lenet5, toy-conv, toy-mlp)"
        ))),
    }
}

fn he_init(rng: &mut ChaCha8Rng, numel: usize, fan_in: usize) -> Vec<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..numel).map(|_| rng.random_range(-bound..bound)).collect()
}

fn conv_layer(
    rng: &mut ChaCha8Rng,
    dims: [usize; 4],
    activation: Activation,
    pooling: Pooling,
) -> Layer {
    let fan_in = dims[1] * dims[2] * dims[3];
    let numel = dims.iter().product();
    let w = WeightTensor::new_conv(dims, he_init(rng, numel, fan_in)).unwrap();
    let b = BiasVector::zeros(dims[0]);
    Layer::new(w, b, activation, pooling).unwrap()
}

fn fc_layer(rng: &mut ChaCha8Rng, rows: usize, cols: usize, activation: Activation) -> Layer {
    let w = WeightTensor::new_fc(rows, cols, he_init(rng, rows * cols, cols)).unwrap();
    let b = BiasVector::zeros(rows);
    Layer::new(w, b, activation, Pooling::None).unwrap()
}

/// The classic 32x32-input variant: conv 6x1x5x5, pool, conv 16x6x5x5, pool,
/// fc 400-120, fc 120-84, fc 84-10. 28x28 images are zero-padded to 32x32 by
/// the data pipeline.
pub fn lenet5(seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = vec![
        conv_layer(&mut rng, [6, 1, 5, 5], Activation::Relu, Pooling::Max2),
        conv_layer(&mut rng, [16, 6, 5, 5], Activation::Relu, Pooling::Max2),
        fc_layer(&mut rng, 120, 400, Activation::Relu),
        fc_layer(&mut rng, 84, 120, Activation::Relu),
        fc_layer(&mut rng, 10, 84, Activation::None),
    ];
    Model::new(layers, (1, 32, 32), 10).unwrap()
}

/// Small two-conv network on 12x12 inputs; cheap enough for gradient checks.
pub fn toy_conv(seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = vec![
        conv_layer(&mut rng, [3, 1, 3, 3], Activation::Relu, Pooling::Max2),
        conv_layer(&mut rng, [4, 3, 2, 2], Activation::Relu, Pooling::Max2),
        fc_layer(&mut rng, 4, 4 * 2 * 2, Activation::None),
    ];
    Model::new(layers, (1, 12, 12), 4).unwrap()
}

/// Two-layer perceptron on 6x6 inputs.
pub fn toy_mlp(seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = vec![
        fc_layer(&mut rng, 16, 36, Activation::Relu),
        fc_layer(&mut rng, 3, 16, Activation::None),
    ];
    Model::new(layers, (1, 6, 6), 3).unwrap()
}

//! Double-precision training backend: forward pass, cross-entropy loss,
//! exact backpropagation, momentum SGD, and the gradient-descent solver for
//! the first ADMM subproblem (loss plus per-layer quadratic pull terms).
//!
//! Convolutions run as im2col + GEMM. The loop is single-threaded by
//! contract: identical seed, config, and data give bit-identical weights.

use std::io::Write;

use ndarray::{Array2, Array4, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::model::{Activation, Layer, Model, Pooling};
use crate::tensor::LayerKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrStep {
    pub every_epochs: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default)]
    pub weight_decay: Option<f64>,
    #[serde(default)]
    pub lr_step: Option<LrStep>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 64,
            epochs: 10,
            seed: 0,
            weight_decay: None,
            lr_step: Some(LrStep { every_epochs: 8, factor: 0.5 }),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be > 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        match self.lr_step {
            Some(LrStep { every_epochs, factor }) if every_epochs > 0 => {
                self.learning_rate * factor.powi((epoch / every_epochs) as i32)
            }
            _ => self.learning_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            weights: model.layers.iter().map(|l| vec![0.0; l.weights.numel()]).collect(),
            biases: model.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    /// Zero gradient entries whose model mask is `false`.
    pub fn apply_model_masks(&mut self, model: &Model) {
        for (i, layer) in model.layers.iter().enumerate() {
            if let Some(mask) = &layer.weight_mask {
                for (g, keep) in self.weights[i].iter_mut().zip(mask) {
                    if !keep {
                        *g = 0.0;
                    }
                }
            }
            if let Some(mask) = &layer.bias_mask {
                for (g, keep) in self.biases[i].iter_mut().zip(mask) {
                    if !keep {
                        *g = 0.0;
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

enum Cache {
    Conv {
        input_shape: (usize, usize, usize, usize),
        col: Array2<f64>,
        pre: Array4<f64>,
        /// Flat argmax position (0..4) per pooled output element.
        pool_argmax: Option<Vec<u8>>,
    },
    Fc {
        input: Array2<f64>,
        /// Set when the fc layer consumed a spatial input that was flattened.
        spatial_input: Option<(usize, usize, usize, usize)>,
        pre: Array2<f64>,
    },
}

enum Features {
    Spatial(Array4<f64>),
    Flat(Array2<f64>),
}

fn im2col(x: &Array4<f64>, kh: usize, kw: usize) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let mut col = Array2::<f64>::zeros((n * oh * ow, c * kh * kw));
    let xs = x.as_slice().expect("standard layout");
    let cs = col.as_slice_mut().expect("standard layout");
    let row_len = c * kh * kw;
    for ni in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((ni * oh + oy) * ow + ox) * row_len;
                for ci in 0..c {
                    let src = ((ni * c + ci) * h + oy) * w + ox;
                    let dst = row + ci * kh * kw;
                    for ky in 0..kh {
                        cs[dst + ky * kw..dst + ky * kw + kw]
                            .copy_from_slice(&xs[src + ky * w..src + ky * w + kw]);
                    }
                }
            }
        }
    }
    col
}

fn col2im(dcol: &Array2<f64>, shape: (usize, usize, usize, usize), kh: usize, kw: usize) -> Array4<f64> {
    let (n, c, h, w) = shape;
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let mut dx = Array4::<f64>::zeros(shape);
    let ds = dcol.as_slice().expect("standard layout");
    let xs = dx.as_slice_mut().expect("standard layout");
    let row_len = c * kh * kw;
    for ni in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((ni * oh + oy) * ow + ox) * row_len;
                for ci in 0..c {
                    let dst = ((ni * c + ci) * h + oy) * w + ox;
                    let src = row + ci * kh * kw;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            xs[dst + ky * w + kx] += ds[src + ky * kw + kx];
                        }
                    }
                }
            }
        }
    }
    dx
}

fn weight_matrix(layer: &Layer) -> ArrayView2<'_, f64> {
    let (rows, cols) = layer.weights.matrix_shape();
    ArrayView2::from_shape((rows, cols), layer.weights.values()).expect("weight matrix view")
}

/// (N*OH*OW, A) row-major -> (N, A, OH, OW).
fn rows_to_spatial(m: &Array2<f64>, n: usize, a: usize, oh: usize, ow: usize) -> Array4<f64> {
    let mut out = Array4::<f64>::zeros((n, a, oh, ow));
    let src = m.as_slice().expect("standard layout");
    let dst = out.as_slice_mut().expect("standard layout");
    for ni in 0..n {
        for y in 0..oh {
            for x in 0..ow {
                let row = ((ni * oh + y) * ow + x) * a;
                for ai in 0..a {
                    dst[((ni * a + ai) * oh + y) * ow + x] = src[row + ai];
                }
            }
        }
    }
    out
}

fn spatial_to_rows(t: &Array4<f64>) -> Array2<f64> {
    let (n, a, oh, ow) = t.dim();
    let mut out = Array2::<f64>::zeros((n * oh * ow, a));
    let src = t.as_slice().expect("standard layout");
    let dst = out.as_slice_mut().expect("standard layout");
    for ni in 0..n {
        for ai in 0..a {
            for y in 0..oh {
                for x in 0..ow {
                    dst[((ni * oh + y) * ow + x) * a + ai] = src[((ni * a + ai) * oh + y) * ow + x];
                }
            }
        }
    }
    out
}

fn max_pool2(x: &Array4<f64>) -> (Array4<f64>, Vec<u8>) {
    let (n, c, h, w) = x.dim();
    let (ph, pw) = (h / 2, w / 2);
    let mut out = Array4::<f64>::zeros((n, c, ph, pw));
    let mut argmax = vec![0u8; n * c * ph * pw];
    let src = x.as_slice().expect("standard layout");
    let dst = out.as_slice_mut().expect("standard layout");
    for nc in 0..n * c {
        let plane = nc * h * w;
        for py in 0..ph {
            for px in 0..pw {
                let base = plane + (2 * py) * w + 2 * px;
                let cand = [src[base], src[base + 1], src[base + w], src[base + w + 1]];
                let mut best = 0usize;
                for k in 1..4 {
                    if cand[k] > cand[best] {
                        best = k;
                    }
                }
                let oi = nc * ph * pw + py * pw + px;
                dst[oi] = cand[best];
                argmax[oi] = best as u8;
            }
        }
    }
    (out, argmax)
}

fn unpool2(dy: &Array4<f64>, argmax: &[u8], h: usize, w: usize) -> Array4<f64> {
    let (n, c, ph, pw) = dy.dim();
    let mut dx = Array4::<f64>::zeros((n, c, h, w));
    let src = dy.as_slice().expect("standard layout");
    let dst = dx.as_slice_mut().expect("standard layout");
    for nc in 0..n * c {
        let plane = nc * h * w;
        for py in 0..ph {
            for px in 0..pw {
                let oi = nc * ph * pw + py * pw + px;
                let pos = argmax[oi] as usize;
                let (dy_off, dx_off) = (pos / 2, pos % 2);
                dst[plane + (2 * py + dy_off) * w + 2 * px + dx_off] += src[oi];
            }
        }
    }
    dx
}

fn relu_inplace(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

fn forward_with_caches(model: &Model, batch: &Batch) -> Result<(Array2<f64>, Vec<Cache>)> {
    let (c, h, w) = model.input_shape;
    let dim = batch.images.dim();
    if dim.1 != c || dim.2 != h || dim.3 != w {
        return Err(Error::Shape(format!(
            "batch images {:?} do not match model input {:?}",
            dim, model.input_shape
        )));
    }
    let mut caches = Vec::with_capacity(model.layers.len());
    let mut features = Features::Spatial(batch.images.clone());
    for (li, layer) in model.layers.iter().enumerate() {
        features = match (layer.kind(), features) {
            (LayerKind::Conv, Features::Spatial(x)) => {
                let [a, _, kh, kw] = layer.weights.dims();
                let (n, _, ih, iw) = x.dim();
                let (oh, ow) = (ih - kh + 1, iw - kw + 1);
                let col = im2col(&x, kh, kw);
                let mut pre_mat = col.dot(&weight_matrix(layer).t());
                for mut row in pre_mat.rows_mut() {
                    for (v, b) in row.iter_mut().zip(&layer.bias.values) {
                        *v += *b;
                    }
                }
                let mut pre = rows_to_spatial(&pre_mat, n, a, oh, ow);
                let mut post = pre.clone();
                if layer.activation == Activation::Relu {
                    relu_inplace(post.as_slice_mut().unwrap());
                } else {
                    pre = post.clone();
                }
                let (out, argmax) = match layer.pooling {
                    Pooling::Max2 => {
                        let (o, am) = max_pool2(&post);
                        (o, Some(am))
                    }
                    Pooling::None => (post, None),
                };
                caches.push(Cache::Conv {
                    input_shape: x.dim(),
                    col,
                    pre,
                    pool_argmax: argmax,
                });
                Features::Spatial(out)
            }
            (LayerKind::Fc, feats) => {
                let (input, spatial_input) = match feats {
                    Features::Spatial(x) => {
                        let dims = x.dim();
                        let n = dims.0;
                        let flat = x
                            .into_shape_with_order((n, dims.1 * dims.2 * dims.3))
                            .expect("flatten");
                        (flat, Some(dims))
                    }
                    Features::Flat(x) => (x, None),
                };
                let mut pre = input.dot(&weight_matrix(layer).t());
                for mut row in pre.rows_mut() {
                    for (v, b) in row.iter_mut().zip(&layer.bias.values) {
                        *v += *b;
                    }
                }
                let mut post = pre.clone();
                if layer.activation == Activation::Relu {
                    relu_inplace(post.as_slice_mut().unwrap());
                }
                caches.push(Cache::Fc { input, spatial_input, pre });
                Features::Flat(post)
            }
            (LayerKind::Conv, Features::Flat(_)) => {
                return Err(Error::Shape(format!("layer {li}: conv after flatten")));
            }
        };
    }
    match features {
        Features::Flat(logits) => {
            if let Some(bad) = logits.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "logit {bad} is not finite (check earlier layers for overflow)"
                )));
            }
            Ok((logits, caches))
        }
        Features::Spatial(_) => Err(Error::Shape("model must end in an fc layer".into())),
    }
}

/// Mean cross-entropy of logits against labels, with the softmax gradient.
fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let n = logits.nrows();
    let mut dlogits = logits.clone();
    let mut loss = 0.0;
    for (i, mut row) in dlogits.rows_mut().into_iter().enumerate() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        loss += -(row[labels[i]] / sum).ln();
        for v in row.iter_mut() {
            *v /= sum;
        }
        row[labels[i]] -= 1.0;
    }
    dlogits.mapv_inplace(|v| v / n as f64);
    (loss / n as f64, dlogits)
}

/// Run the network on one batch. Returns logits and the mean cross-entropy.
pub fn forward(model: &Model, batch: &Batch) -> Result<(Array2<f64>, f64)> {
    let (logits, _) = forward_with_caches(model, batch)?;
    let (loss, _) = cross_entropy(&logits, &batch.labels);
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss is not finite".into()));
    }
    Ok((logits, loss))
}

/// Exact backpropagation. Returns per-layer gradients along with the batch
/// loss and logits from the forward pass it ran.
pub fn backward(model: &Model, batch: &Batch) -> Result<(Gradients, f64, Array2<f64>)> {
    let (logits, caches) = forward_with_caches(model, batch)?;
    let (loss, dlogits) = cross_entropy(&logits, &batch.labels);
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss is not finite".into()));
    }
    let mut grads = Gradients::zeros_like(model);
    let mut upstream = Features::Flat(dlogits);
    for (li, layer) in model.layers.iter().enumerate().rev() {
        match (&caches[li], upstream) {
            (Cache::Fc { input, spatial_input, pre }, Features::Flat(dout)) => {
                let mut dpre = dout;
                if layer.activation == Activation::Relu {
                    for (d, p) in dpre.iter_mut().zip(pre.iter()) {
                        if *p <= 0.0 {
                            *d = 0.0;
                        }
                    }
                }
                let dw = dpre.t().dot(input);
                grads.weights[li].copy_from_slice(dw.as_slice().unwrap());
                for (bi, g) in grads.biases[li].iter_mut().enumerate() {
                    *g = dpre.column(bi).sum();
                }
                let dx = dpre.dot(&weight_matrix(layer));
                upstream = match spatial_input {
                    Some(dims) => {
                        Features::Spatial(dx.into_shape_with_order(*dims).expect("unflatten"))
                    }
                    None => Features::Flat(dx),
                };
            }
            (Cache::Conv { input_shape, col, pre, pool_argmax }, Features::Spatial(dout)) => {
                let (_, a, oh, ow) = pre.dim();
                let dpost = match pool_argmax {
                    Some(argmax) => unpool2(&dout, argmax, oh, ow),
                    None => dout,
                };
                let mut dpre = dpost;
                if layer.activation == Activation::Relu {
                    for (d, p) in dpre
                        .as_slice_mut()
                        .unwrap()
                        .iter_mut()
                        .zip(pre.as_slice().unwrap())
                    {
                        if *p <= 0.0 {
                            *d = 0.0;
                        }
                    }
                }
                let dpre_mat = spatial_to_rows(&dpre);
                let dw = dpre_mat.t().dot(col);
                grads.weights[li].copy_from_slice(dw.as_slice().unwrap());
                for ai in 0..a {
                    grads.biases[li][ai] = dpre_mat.column(ai).sum();
                }
                let [_, _, kh, kw] = layer.weights.dims();
                let dcol = dpre_mat.dot(&weight_matrix(layer));
                let dx = col2im(&dcol, *input_shape, kh, kw);
                upstream = Features::Spatial(dx);
            }
            _ => return Err(Error::Shape(format!("layer {li}: cache/gradient kind mismatch"))),
        }
    }
    Ok((grads, loss, logits))
}

// ---------------------------------------------------------------------------
// SGD
// ---------------------------------------------------------------------------

/// Momentum-SGD state. Masked coordinates are skipped outright, so their
/// weights and velocities stay bit-exact at zero.
#[derive(Debug, Clone)]
pub struct SgdOptimizer {
    velocity_w: Vec<Vec<f64>>,
    velocity_b: Vec<Vec<f64>>,
    momentum: f64,
    weight_decay: f64,
}

/// Per-layer freeze sets (`true` = do not update) used by quantization
/// retraining, where frozen values are nonzero.
pub type FrozenSets = Vec<Option<Vec<bool>>>;

impl SgdOptimizer {
    pub fn new(model: &Model, config: &TrainConfig) -> Self {
        Self {
            velocity_w: model.layers.iter().map(|l| vec![0.0; l.weights.numel()]).collect(),
            velocity_b: model.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
            momentum: config.momentum,
            weight_decay: config.weight_decay.unwrap_or(0.0),
        }
    }

    pub fn step(&mut self, model: &mut Model, grads: &Gradients, lr: f64) -> Result<()> {
        self.step_with_frozen(model, grads, lr, None)
    }

    pub fn step_with_frozen(
        &mut self,
        model: &mut Model,
        grads: &Gradients,
        lr: f64,
        frozen: Option<&FrozenSets>,
    ) -> Result<()> {
        for (li, layer) in model.layers.iter_mut().enumerate() {
            if let Some(bad) = grads.weights[li].iter().position(|g| !g.is_finite()) {
                return Err(Error::Diverged(format!(
                    "layer {li}: non-finite weight gradient at flat index {bad}"
                )));
            }
            let mask = layer.weight_mask.as_deref();
            let layer_frozen = frozen.and_then(|f| f[li].as_deref());
            let w = layer.weights.values_mut();
            let v = &mut self.velocity_w[li];
            for i in 0..w.len() {
                if mask.map(|m| !m[i]).unwrap_or(false) || layer_frozen.map(|f| f[i]).unwrap_or(false) {
                    continue;
                }
                let g = grads.weights[li][i] + self.weight_decay * w[i];
                v[i] = self.momentum * v[i] - lr * g;
                w[i] += v[i];
            }
            let bmask = layer.bias_mask.as_deref();
            let b = &mut layer.bias.values;
            let vb = &mut self.velocity_b[li];
            for i in 0..b.len() {
                if bmask.map(|m| !m[i]).unwrap_or(false) {
                    continue;
                }
                if !grads.biases[li][i].is_finite() {
                    return Err(Error::Diverged(format!("layer {li}: non-finite bias gradient")));
                }
                vb[i] = self.momentum * vb[i] - lr * grads.biases[li][i];
                b[i] += vb[i];
            }
        }
        Ok(())
    }
}

/// One plain (no momentum state) SGD step; masked entries stay untouched.
pub fn sgd_step(model: &mut Model, grads: &Gradients, config: &TrainConfig) -> Result<()> {
    let mut cfg = config.clone();
    cfg.momentum = 0.0;
    let mut opt = SgdOptimizer::new(model, &cfg);
    opt.step(model, grads, config.learning_rate)
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

/// Per-layer quadratic pull `rho/2 * ||W - Z + U||_F^2` added to the loss of
/// subproblem one; its exact per-step weight gradient is `rho * (W - Z + U)`.
#[derive(Debug, Clone)]
pub struct QuadraticPull {
    pub target_z: Vec<f64>,
    pub dual_u: Vec<f64>,
    pub rho: f64,
}

/// Current value of the quadratic terms (for monitoring and tests).
pub fn regularizer_value(model: &Model, pulls: &[Option<QuadraticPull>]) -> f64 {
    let mut total = 0.0;
    for (layer, pull) in model.layers.iter().zip(pulls) {
        if let Some(p) = pull {
            let mut sq = 0.0;
            for ((w, z), u) in layer.weights.values().iter().zip(&p.target_z).zip(&p.dual_u) {
                let d = w - z + u;
                sq += d * d;
            }
            total += 0.5 * p.rho * sq;
        }
    }
    total
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainStats {
    pub epoch_losses: Vec<f64>,
    pub epoch_accuracy: Vec<Option<f64>>,
}

/// Options threaded through the epoch loop.
pub struct LoopOptions<'a> {
    /// `rho`-weighted pulls per layer; empty slice or `None`s mean plain SGD.
    pub pulls: &'a [Option<QuadraticPull>],
    /// Extra frozen coordinates (quantization retraining).
    pub frozen: Option<&'a FrozenSets>,
    /// Evaluate accuracy on this set after each epoch.
    pub eval: Option<&'a Dataset>,
    /// Append `epoch,loss,accuracy` lines here.
    pub log: Option<&'a mut dyn Write>,
    /// Abort when an epoch's mean loss exceeds 10x the first epoch's.
    pub divergence_guard: bool,
}

impl Default for LoopOptions<'_> {
    fn default() -> Self {
        Self {
            pulls: &[],
            frozen: None,
            eval: None,
            log: None,
            divergence_guard: true,
        }
    }
}

/// Plain training: momentum SGD on the dataset for `config.epochs`.
pub fn train(model: &mut Model, dataset: &Dataset, config: &TrainConfig) -> Result<TrainStats> {
    run_epochs(model, dataset, config, LoopOptions::default())
}

/// Solve ADMM subproblem one: minimize loss plus the quadratic pulls, by
/// momentum SGD with the pull gradient `rho * (W - Z + U)` added each step.
pub fn solve_subproblem1(
    model: &mut Model,
    pulls: &[Option<QuadraticPull>],
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<TrainStats> {
    run_epochs(
        model,
        dataset,
        config,
        LoopOptions { pulls, ..Default::default() },
    )
}

pub fn run_epochs(
    model: &mut Model,
    dataset: &Dataset,
    config: &TrainConfig,
    mut opts: LoopOptions<'_>,
) -> Result<TrainStats> {
    config.validate()?;
    if !opts.pulls.is_empty() && opts.pulls.len() != model.layers.len() {
        return Err(Error::Shape("one pull slot per layer required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = SgdOptimizer::new(model, config);
    let mut stats = TrainStats::default();
    let mut first_epoch_loss = None;
    for epoch in 0..config.epochs {
        let lr = config.lr_at_epoch(epoch);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for indices in dataset.epoch_indices(config.batch_size, &mut rng) {
            let batch = dataset.batch(&indices);
            let (mut grads, loss, _) = backward(model, &batch)?;
            if !opts.pulls.is_empty() {
                for (li, pull) in opts.pulls.iter().enumerate() {
                    if let Some(p) = pull {
                        let w = model.layers[li].weights.values();
                        let g = &mut grads.weights[li];
                        for i in 0..w.len() {
                            g[i] += p.rho * (w[i] - p.target_z[i] + p.dual_u[i]);
                        }
                    }
                }
            }
            grads.apply_model_masks(model);
            opt.step_with_frozen(model, &grads, lr, opts.frozen)?;
            loss_sum += loss;
            batches += 1;
        }
        let mean_loss = loss_sum / batches.max(1) as f64;
        let accuracy = match opts.eval {
            Some(eval) => Some(evaluate(model, eval, 256)?),
            None => None,
        };
        if let Some(log) = opts.log.as_deref_mut() {
            let acc = accuracy.map(|a| format!("{a:.6}")).unwrap_or_default();
            writeln!(log, "{epoch},{mean_loss:.8},{acc}")?;
        }
        stats.epoch_losses.push(mean_loss);
        stats.epoch_accuracy.push(accuracy);
        let first = *first_epoch_loss.get_or_insert(mean_loss);
        if opts.divergence_guard && mean_loss > 10.0 * first.max(1e-12) {
            return Err(Error::Diverged(format!(
                "epoch {epoch}: mean loss {mean_loss:.4} exceeds 10x initial {first:.4}"
            )));
        }
    }
    Ok(stats)
}

/// Top-1 accuracy over a dataset.
pub fn evaluate(model: &Model, dataset: &Dataset, batch_size: usize) -> Result<f64> {
    let mut correct = 0usize;
    for indices in dataset.sequential_indices(batch_size) {
        let batch = dataset.batch(&indices);
        let (logits, _) = forward(model, &batch)?;
        for (row, label) in logits.rows().into_iter().zip(&batch.labels) {
            let mut best = 0usize;
            for (k, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = k;
                }
            }
            if best == *label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic;
    use crate::model::{lenet5, toy_conv, toy_mlp, BiasVector, Model};
    use crate::tensor::WeightTensor;
    use crate::model::{Activation as Act, Layer, Pooling as Pool};
    use ndarray::Array4;

    fn tiny_batch(model: &Model, seed: u64, n: usize) -> Batch {
        let (c, h, w) = model.input_shape;
        let ds = synthetic(seed, n.max(model.class_count), h, w, model.class_count);
        assert_eq!(c, 1);
        ds.batch(&(0..n).collect::<Vec<_>>())
    }

    #[test]
    fn zero_model_gives_uniform_loss_ln10() {
        let mut model = lenet5(0);
        for layer in &mut model.layers {
            layer.weights.values_mut().fill(0.0);
            layer.bias.values.fill(0.0);
        }
        let batch = tiny_batch(&model, 0, 4);
        let (_, loss) = forward(&model, &batch).unwrap();
        assert!((loss - 10.0f64.ln()).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn single_linear_layer_matches_hand_computed_cross_entropy() {
        // 3-class linear model on a 2-pixel input; arithmetic done by hand.
        let w = WeightTensor::new_fc(3, 2, vec![1.0, -1.0, 0.5, 0.5, -0.25, 2.0]).unwrap();
        let mut layer = Layer::new(w, BiasVector::zeros(3), Act::None, Pool::None).unwrap();
        layer.bias.values = vec![0.1, -0.2, 0.0];
        let model = Model::new(vec![layer], (1, 1, 2), 3).unwrap();
        let mut images = Array4::<f64>::zeros((1, 1, 1, 2));
        images[[0, 0, 0, 0]] = 0.6;
        images[[0, 0, 0, 1]] = -0.4;
        let batch = Batch::new(images, vec![2], 3).unwrap();
        let (logits, loss) = forward(&model, &batch).unwrap();
        let z = [
            1.0 * 0.6 + -1.0 * -0.4 + 0.1,
            0.5 * 0.6 + 0.5 * -0.4 + -0.2,
            -0.25 * 0.6 + 2.0 * -0.4 + 0.0,
        ];
        for (a, b) in logits.iter().zip(&z) {
            assert!((a - b).abs() < 1e-15);
        }
        let denom: f64 = z.iter().map(|v| v.exp()).sum();
        let expected = -(z[2].exp() / denom).ln();
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_central_differences_on_toy_nets() {
        for seed in [1u64, 2, 3] {
            let model = toy_conv(seed);
            let batch = tiny_batch(&model, seed + 100, 3);
            let (grads, _, _) = backward(&model, &batch).unwrap();
            let mut max_rel = 0.0f64;
            let mut checked = 0;
            for li in 0..model.layers.len() {
                let numel = model.layers[li].weights.numel();
                let stride = (numel / 12).max(1);
                for i in (0..numel).step_by(stride) {
                    let w0 = model.layers[li].weights.values()[i];
                    let h = 1e-5 * (1.0 + w0.abs());
                    let mut plus = model.clone();
                    plus.layers[li].weights.values_mut()[i] = w0 + h;
                    let mut minus = model.clone();
                    minus.layers[li].weights.values_mut()[i] = w0 - h;
                    let (_, lp) = forward(&plus, &batch).unwrap();
                    let (_, lm) = forward(&minus, &batch).unwrap();
                    let fd = (lp - lm) / (2.0 * h);
                    let g = grads.weights[li][i];
                    let denom = g.abs().max(fd.abs()).max(1e-8);
                    max_rel = max_rel.max((g - fd).abs() / denom);
                    checked += 1;
                }
            }
            assert!(checked > 20);
            assert!(max_rel <= 1e-4, "seed {seed}: max rel err {max_rel}");
        }
    }

    #[test]
    fn zero_input_bias_free_net_has_zero_first_layer_gradient() {
        let mut model = toy_mlp(5);
        for layer in &mut model.layers {
            layer.bias.values.fill(0.0);
        }
        let images = Array4::<f64>::zeros((2, 1, 6, 6));
        let batch = Batch::new(images, vec![0, 1], 3).unwrap();
        let (grads, _, _) = backward(&model, &batch).unwrap();
        assert!(grads.weights[0].iter().all(|g| *g == 0.0));
    }

    #[test]
    fn masked_gradients_are_zeroed() {
        let mut model = toy_mlp(6);
        let numel = model.layers[0].weights.numel();
        let mut mask = vec![true; numel];
        mask[0] = false;
        mask[7] = false;
        model.layers[0].weight_mask = Some(mask);
        model.layers[0].weights.values_mut()[0] = 0.0;
        model.layers[0].weights.values_mut()[7] = 0.0;
        let batch = tiny_batch(&model, 9, 4);
        let (mut grads, _, _) = backward(&model, &batch).unwrap();
        grads.apply_model_masks(&model);
        assert_eq!(grads.weights[0][0], 0.0);
        assert_eq!(grads.weights[0][7], 0.0);
        assert!(grads.weights[0].iter().any(|g| *g != 0.0));
    }

    #[test]
    fn lr_zero_is_rejected_and_tiny_lr_moves_by_rule() {
        let model = toy_mlp(7);
        let batch = tiny_batch(&model, 1, 3);
        let (grads, _, _) = backward(&model, &batch).unwrap();

        // Loop configs require lr > 0, but a bare step at lr 0 is a no-op.
        let bad = TrainConfig { learning_rate: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let mut frozen = model.clone();
        let mut opt = SgdOptimizer::new(&frozen, &TrainConfig::default());
        opt.step(&mut frozen, &grads, 0.0).unwrap();
        assert_eq!(frozen, model);

        // One plain step without momentum: w' = w - lr*g, elementwise.
        let mut stepped = model.clone();
        let cfg = TrainConfig { learning_rate: 0.01, momentum: 0.0, ..Default::default() };
        sgd_step(&mut stepped, &grads, &cfg).unwrap();
        for li in 0..model.layers.len() {
            for (i, (w1, w0)) in stepped.layers[li]
                .weights
                .values()
                .iter()
                .zip(model.layers[li].weights.values())
                .enumerate()
            {
                let expected = w0 - 0.01 * grads.weights[li][i];
                assert_eq!(*w1, expected);
            }
        }
    }

    #[test]
    fn masked_entries_stay_exactly_zero_over_100_steps() {
        let mut model = toy_mlp(8);
        let numel = model.layers[0].weights.numel();
        let mask: Vec<bool> = (0..numel).map(|i| i % 3 != 0).collect();
        for (i, keep) in mask.iter().enumerate() {
            if !keep {
                model.layers[0].weights.values_mut()[i] = 0.0;
            }
        }
        model.layers[0].weight_mask = Some(mask.clone());
        let ds = synthetic(3, 30, 6, 6, 3);
        let cfg = TrainConfig {
            learning_rate: 0.05,
            epochs: 20, // 30 samples / 6 per batch = 5 steps per epoch
            batch_size: 6,
            seed: 4,
            ..Default::default()
        };
        train(&mut model, &ds, &cfg).unwrap();
        for (i, keep) in mask.iter().enumerate() {
            if !keep {
                assert_eq!(model.layers[0].weights.values()[i], 0.0);
            }
        }
    }

    #[test]
    fn training_is_bit_deterministic() {
        let ds = synthetic(11, 60, 6, 6, 3);
        let cfg = TrainConfig { epochs: 3, batch_size: 8, seed: 42, ..Default::default() };
        let mut a = toy_mlp(12);
        let mut b = toy_mlp(12);
        train(&mut a, &ds, &cfg).unwrap();
        train(&mut b, &ds, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn subproblem1_with_no_pulls_is_plain_sgd() {
        let ds = synthetic(13, 40, 6, 6, 3);
        let cfg = TrainConfig { epochs: 2, batch_size: 8, seed: 7, ..Default::default() };
        let mut plain = toy_mlp(14);
        train(&mut plain, &ds, &cfg).unwrap();
        let mut admm = toy_mlp(14);
        let pulls: Vec<Option<QuadraticPull>> = vec![None, None];
        solve_subproblem1(&mut admm, &pulls, &ds, &cfg).unwrap();
        assert_eq!(plain, admm);

        // rho = 0 pulls degenerate to the same trajectory.
        let mut zero_rho = toy_mlp(14);
        let degenerate: Vec<Option<QuadraticPull>> = plain
            .layers
            .iter()
            .map(|l| {
                Some(QuadraticPull {
                    target_z: vec![0.7; l.weights.numel()],
                    dual_u: vec![-0.1; l.weights.numel()],
                    rho: 0.0,
                })
            })
            .collect();
        solve_subproblem1(&mut zero_rho, &degenerate, &ds, &cfg).unwrap();
        for (a, b) in zero_rho.layers.iter().zip(&plain.layers) {
            for (x, y) in a.weights.values().iter().zip(b.weights.values()) {
                assert_eq!(*x, *y);
            }
        }
    }

    #[test]
    fn large_rho_pulls_weights_toward_z_minus_u() {
        // Frozen loss surrogate: batch loss still present but rho dominates.
        let mut model = toy_mlp(15);
        let ds = synthetic(16, 24, 6, 6, 3);
        let targets: Vec<Option<QuadraticPull>> = model
            .layers
            .iter()
            .map(|l| {
                Some(QuadraticPull {
                    target_z: vec![0.25; l.weights.numel()],
                    dual_u: vec![0.05; l.weights.numel()],
                    rho: 500.0,
                })
            })
            .collect();
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            momentum: 0.0,
            epochs: 60,
            batch_size: 24,
            seed: 1,
            lr_step: None,
            ..Default::default()
        };
        run_epochs(
            &mut model,
            &ds,
            &cfg,
            LoopOptions { pulls: &targets, divergence_guard: false, ..Default::default() },
        )
        .unwrap();
        // Analytic minimizer of the quadratic alone is z - u = 0.2.
        for layer in &model.layers {
            for w in layer.weights.values() {
                assert!((w - 0.2).abs() < 0.02, "w = {w}");
            }
        }
    }

    #[test]
    fn regularizer_value_matches_direct_frobenius_sum() {
        let model = toy_mlp(17);
        let pulls: Vec<Option<QuadraticPull>> = model
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                Some(QuadraticPull {
                    target_z: vec![0.1 * (i + 1) as f64; l.weights.numel()],
                    dual_u: vec![-0.02; l.weights.numel()],
                    rho: 0.5 + i as f64,
                })
            })
            .collect();
        let got = regularizer_value(&model, &pulls);
        let mut want = 0.0;
        for (l, p) in model.layers.iter().zip(pulls.iter().flatten()) {
            let sq: f64 = l
                .weights
                .values()
                .iter()
                .zip(&p.target_z)
                .zip(&p.dual_u)
                .map(|((w, z), u)| (w - z + u).powi(2))
                .sum();
            want += 0.5 * p.rho * sq;
        }
        assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
    }

    #[test]
    fn full_batch_objective_is_non_increasing_with_small_lr() {
        let ds = synthetic(19, 16, 6, 6, 3);
        let mut model = toy_mlp(20);
        let pulls: Vec<Option<QuadraticPull>> = model
            .layers
            .iter()
            .map(|l| {
                Some(QuadraticPull {
                    target_z: vec![0.0; l.weights.numel()],
                    dual_u: vec![0.0; l.weights.numel()],
                    rho: 0.01,
                })
            })
            .collect();
        let cfg = TrainConfig {
            learning_rate: 0.01,
            momentum: 0.0,
            epochs: 1,
            batch_size: 16, // full batch
            seed: 3,
            lr_step: None,
            ..Default::default()
        };
        let batch = ds.batch(&(0..16).collect::<Vec<_>>());
        let mut prev = {
            let (_, loss) = forward(&model, &batch).unwrap();
            loss + regularizer_value(&model, &pulls)
        };
        for _ in 0..25 {
            solve_subproblem1(&mut model, &pulls, &ds, &cfg).unwrap();
            let (_, loss) = forward(&model, &batch).unwrap();
            let obj = loss + regularizer_value(&model, &pulls);
            assert!(obj <= prev + 1e-9, "objective rose: {prev} -> {obj}");
            prev = obj;
        }
    }

    #[test]
    fn divergence_guard_aborts() {
        let ds = synthetic(23, 40, 6, 6, 3);
        let mut model = toy_mlp(24);
        let cfg = TrainConfig {
            learning_rate: 50.0, // absurd on purpose
            epochs: 30,
            batch_size: 8,
            seed: 5,
            lr_step: None,
            ..Default::default()
        };
        let got = train(&mut model, &ds, &cfg);
        assert!(matches!(got, Err(Error::Diverged(_)) | Err(Error::NonFinite(_))));
    }

    #[test]
    fn masked_and_compacted_models_agree() {
        let model = toy_conv(30);
        let mut masked = model.clone();
        // Zero filter 1 of layer 0 (weights and bias) and propagate.
        for i in masked.layers[0]
            .weights
            .group_indices(crate::tensor::StructuredAxis::Filter, 1)
        {
            masked.layers[0].weights.values_mut()[i] = 0.0;
        }
        masked.layers[0].bias.values[1] = 0.0;
        let removed: std::collections::BTreeSet<usize> = [1].into();
        let (masked, _) = masked.propagate_filter_pruning(0, &removed).unwrap();
        let compacted = masked.compact().unwrap();
        assert_eq!(compacted.layers[0].weights.num_filters(), 2);
        let batch = tiny_batch(&model, 31, 5);
        let (lm, _) = forward(&masked, &batch).unwrap();
        let (lc, _) = forward(&compacted, &batch).unwrap();
        for (a, b) in lm.iter().zip(lc.iter()) {
            assert!((a - b).abs() <= 1e-12, "masked {a} vs compacted {b}");
        }
    }

    #[test]
    fn propagation_preserves_forward_outputs_exactly() {
        let model = toy_conv(33);
        let mut pruned = model.clone();
        for i in pruned.layers[0]
            .weights
            .group_indices(crate::tensor::StructuredAxis::Filter, 2)
        {
            pruned.layers[0].weights.values_mut()[i] = 0.0;
        }
        pruned.layers[0].bias.values[2] = 0.0;
        let batch = tiny_batch(&model, 34, 4);
        let (before, _) = forward(&pruned, &batch).unwrap();
        let removed: std::collections::BTreeSet<usize> = [2].into();
        let (after_model, _) = pruned.propagate_filter_pruning(0, &removed).unwrap();
        let (after, _) = forward(&after_model, &batch).unwrap();
        for (a, b) in before.iter().zip(after.iter()) {
            assert_eq!(a, b);
        }
    }
}

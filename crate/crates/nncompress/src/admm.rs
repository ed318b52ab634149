//! The alternating-optimization engine for constrained weight compression.
//!
//! Each iteration alternates three updates per constrained layer i:
//!
//! 1. subproblem one — descend `loss + rho_i/2 * ||W_i - Z_i + U_i||_F^2`
//!    (the trainer, with the quadratic pull added to each weight gradient);
//! 2. subproblem two — `Z_i = project(W_i + U_i)` onto the constraint set,
//!    solved in closed form by the projection operators;
//! 3. dual update — `U_i = U_i + W_i - Z_i`.
//!
//! `rho` starts small and grows each iteration. Feasibility is made exact at
//! the end by masked mapping and retraining: project, freeze the resulting
//! pattern, and retrain the free parameters.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::projection::{self, ConstraintSpec};
use crate::tensor::StructuredAxis;
use crate::train::{self, FrozenSets, QuadraticPull, TrainConfig, TrainStats};

pub const MANIFEST_FORMAT: &str = "nncompress-admm-run";
pub const MANIFEST_VERSION: u32 = 1;

/// Penalty schedule: start small, grow every iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoSchedule {
    pub initial_rho: f64,
    pub growth: f64,
    pub max_iterations: usize,
    /// Stop early once every constrained layer has relative residual
    /// `||W - Z||_F / ||W||_F` at or below this.
    #[serde(default)]
    pub stop_rel_residual: Option<f64>,
    /// Learning-rate decay applied per iteration inside the regularization
    /// loop (1.0 = constant). Damping the SGD noise in late iterations lets
    /// the weights settle onto the projection targets.
    #[serde(default)]
    pub lr_decay_per_iteration: Option<f64>,
}

impl Default for RhoSchedule {
    fn default() -> Self {
        Self {
            initial_rho: 1.5e-3,
            growth: 1.5,
            max_iterations: 12,
            stop_rel_residual: None,
            lr_decay_per_iteration: None,
        }
    }
}

impl RhoSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_rho > 0.0) {
            return Err(Error::Config("initial rho must be > 0".into()));
        }
        if self.growth < 1.0 {
            return Err(Error::Config("rho growth factor must be >= 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("need at least one iteration".into()));
        }
        if let Some(d) = self.lr_decay_per_iteration {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::Config("lr decay per iteration must be in (0, 1]".into()));
            }
        }
        Ok(())
    }

    pub fn lr_at_iteration(&self, base_lr: f64, iteration: usize) -> f64 {
        match self.lr_decay_per_iteration {
            Some(d) => base_lr * d.powi(iteration as i32),
            None => base_lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerAdmmState {
    pub z: Vec<f64>,
    pub u: Vec<f64>,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerResidual {
    pub layer: usize,
    pub absolute: f64,
    pub relative: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdmmState {
    pub layers: Vec<Option<LayerAdmmState>>,
    pub iteration: usize,
    /// One entry per completed iteration, one residual per constrained layer.
    pub residuals: Vec<Vec<LayerResidual>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub schedule: RhoSchedule,
    pub specs: Vec<Option<ConstraintSpec>>,
    pub epochs_per_iteration: usize,
    pub completed_iterations: usize,
    pub residuals: Vec<Vec<LayerResidual>>,
    pub accuracy_trace: Vec<f64>,
    pub warnings: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct AdmmCheckpoint {
    format: String,
    version: u32,
    model: Model,
    specs: Vec<Option<ConstraintSpec>>,
    schedule: RhoSchedule,
    state: AdmmState,
}

/// One compression job: a model, its per-layer constraints, and the dual
/// state. Layers with `None` (or vacuous) constraints carry no state and no
/// regularization, so a fully unconstrained run is plain training.
#[derive(Debug, Clone)]
pub struct AdmmEngine {
    pub model: Model,
    pub specs: Vec<Option<ConstraintSpec>>,
    pub schedule: RhoSchedule,
    pub state: AdmmState,
    pub warnings: Vec<String>,
    pub accuracy_trace: Vec<f64>,
}

impl AdmmEngine {
    pub fn new(model: Model, specs: Vec<Option<ConstraintSpec>>, schedule: RhoSchedule) -> Result<Self> {
        schedule.validate()?;
        if specs.len() != model.layers.len() {
            return Err(Error::Config(format!(
                "{} constraint slots for {} layers",
                specs.len(),
                model.layers.len()
            )));
        }
        let mut effective = specs;
        for (layer, spec) in model.layers.iter().zip(effective.iter_mut()) {
            if let Some(s) = spec {
                s.validate_for(&layer.weights)?;
                if s.is_vacuous_for(&layer.weights) {
                    *spec = None;
                }
            }
        }
        let layers = model
            .layers
            .iter()
            .zip(&effective)
            .map(|(layer, spec)| {
                spec.as_ref().map(|s| {
                    let alive = layer.weight_mask.as_deref();
                    let proj = projection::project_masked(&layer.weights, s, alive)
                        .expect("spec validated above");
                    LayerAdmmState {
                        z: proj.tensor.values().to_vec(),
                        u: vec![0.0; layer.weights.numel()],
                        rho: schedule.initial_rho,
                    }
                })
            })
            .collect();
        Ok(Self {
            model,
            specs: effective,
            schedule,
            state: AdmmState { layers, iteration: 0, residuals: Vec::new() },
            warnings: Vec::new(),
            accuracy_trace: Vec::new(),
        })
    }

    pub fn active_layer_count(&self) -> usize {
        self.specs.iter().flatten().count()
    }

    fn pulls(&self) -> Vec<Option<QuadraticPull>> {
        self.state
            .layers
            .iter()
            .map(|s| {
                s.as_ref().map(|st| QuadraticPull {
                    target_z: st.z.clone(),
                    dual_u: st.u.clone(),
                    rho: st.rho,
                })
            })
            .collect()
    }

    /// Subproblem one for this iteration: SGD on loss + quadratic pulls.
    pub fn subproblem1(&mut self, dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainStats> {
        let pulls = self.pulls();
        train::solve_subproblem1(&mut self.model, &pulls, dataset, cfg)
    }

    /// Subproblem two plus the dual update: `Z = project(W + U)` and
    /// `U += W - Z` elementwise. Grows rho and logs residuals.
    pub fn project_and_dual_update(&mut self) -> Result<Vec<LayerResidual>> {
        let mut residuals = Vec::new();
        for (li, slot) in self.state.layers.iter_mut().enumerate() {
            let Some(st) = slot else { continue };
            let spec = self.specs[li].as_ref().expect("state implies spec");
            let layer = &self.model.layers[li];
            let w = layer.weights.values();
            let mut shifted = layer.weights.clone();
            for (s, u) in shifted.values_mut().iter_mut().zip(&st.u) {
                *s += *u;
            }
            let proj = projection::project_masked(&shifted, spec, layer.weight_mask.as_deref())?;
            debug_assert!(spec.is_satisfied_by(&proj.tensor));
            st.z.copy_from_slice(proj.tensor.values());
            let mut abs_sq = 0.0;
            let mut w_sq = 0.0;
            for i in 0..w.len() {
                let d = w[i] - st.z[i];
                st.u[i] += d;
                abs_sq += d * d;
                w_sq += w[i] * w[i];
            }
            let absolute = abs_sq.sqrt();
            let relative = if w_sq > 0.0 { absolute / w_sq.sqrt() } else { 0.0 };
            residuals.push(LayerResidual { layer: li, absolute, relative });
            st.rho *= self.schedule.growth;
        }
        self.state.iteration += 1;
        self.state.residuals.push(residuals.clone());
        self.check_residual_trend();
        Ok(residuals)
    }

    /// One full iteration. The shuffle seed advances with the iteration
    /// counter so epochs across iterations see different batch orders, and
    /// the schedule's per-iteration learning-rate decay applies.
    pub fn iterate(&mut self, dataset: &Dataset, cfg: &TrainConfig) -> Result<Vec<LayerResidual>> {
        let mut cfg = cfg.clone();
        cfg.seed = cfg.seed.wrapping_add(self.state.iteration as u64);
        cfg.learning_rate = self.schedule.lr_at_iteration(cfg.learning_rate, self.state.iteration);
        self.subproblem1(dataset, &cfg)?;
        self.project_and_dual_update()
    }

    pub fn max_rel_residual(&self) -> Option<f64> {
        self.state
            .residuals
            .last()
            .map(|rs| rs.iter().map(|r| r.relative).fold(0.0, f64::max))
    }

    fn check_residual_trend(&mut self) {
        let n = self.state.residuals.len();
        if n < 4 {
            return;
        }
        let max_of = |rs: &Vec<LayerResidual>| rs.iter().map(|r| r.absolute).fold(0.0, f64::max);
        let grew = (n - 3..n).all(|k| max_of(&self.state.residuals[k]) > max_of(&self.state.residuals[k - 1]));
        if grew {
            self.warnings.push(format!(
                "residual grew for 3 consecutive iterations up to iteration {}",
                self.state.iteration
            ));
        }
    }

    /// Run the regularization loop: up to `max_iterations`, early-stopped by
    /// `stop_rel_residual`. With no active constraints this is exactly one
    /// plain training call over the whole epoch budget.
    pub fn run(
        &mut self,
        dataset: &Dataset,
        train_template: &TrainConfig,
        epochs_per_iteration: usize,
        eval: Option<&Dataset>,
        manifest_dir: Option<&Path>,
    ) -> Result<()> {
        let mut cfg = train_template.clone();
        cfg.epochs = epochs_per_iteration.max(1);
        if self.active_layer_count() == 0 {
            cfg.epochs = epochs_per_iteration.max(1) * self.schedule.max_iterations;
            train::train(&mut self.model, dataset, &cfg)?;
            if let Some(dir) = manifest_dir {
                self.save_run(dir, train_template.seed, epochs_per_iteration)?;
            }
            return Ok(());
        }
        while self.state.iteration < self.schedule.max_iterations {
            self.iterate(dataset, &cfg)?;
            if let Some(eval) = eval {
                let acc = train::evaluate(&self.model, eval, 256)?;
                self.accuracy_trace.push(acc);
            }
            if let Some(dir) = manifest_dir {
                self.save_run(dir, train_template.seed, epochs_per_iteration)?;
            }
            if let (Some(tol), Some(max_rel)) = (self.schedule.stop_rel_residual, self.max_rel_residual()) {
                if max_rel <= tol {
                    break;
                }
            }
        }
        Ok(())
    }

    pub fn manifest(&self, seed: u64, epochs_per_iteration: usize) -> RunManifest {
        RunManifest {
            format: MANIFEST_FORMAT.to_string(),
            version: MANIFEST_VERSION,
            seed,
            schedule: self.schedule.clone(),
            specs: self.specs.clone(),
            epochs_per_iteration,
            completed_iterations: self.state.iteration,
            residuals: self.state.residuals.clone(),
            accuracy_trace: self.accuracy_trace.clone(),
            warnings: self.warnings.clone(),
        }
    }

    /// Write the manifest and a resumable checkpoint into `dir`.
    pub fn save_run(&self, dir: &Path, seed: u64, epochs_per_iteration: usize) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = self.manifest(seed, epochs_per_iteration);
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        let ck = AdmmCheckpoint {
            format: MANIFEST_FORMAT.to_string(),
            version: MANIFEST_VERSION,
            model: self.model.clone(),
            specs: self.specs.clone(),
            schedule: self.schedule.clone(),
            state: self.state.clone(),
        };
        fs::write(dir.join("admm_checkpoint.json"), serde_json::to_string(&ck)?)?;
        Ok(())
    }

    /// Continue a run from the last completed iteration saved in `dir`.
    pub fn resume(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join("admm_checkpoint.json"))?;
        let ck: AdmmCheckpoint = serde_json::from_str(&text)?;
        if ck.format != MANIFEST_FORMAT || ck.version != MANIFEST_VERSION {
            return Err(Error::Checkpoint("unrecognized run checkpoint".into()));
        }
        ck.model.validate()?;
        let manifest_path = dir.join("manifest.json");
        let (warnings, accuracy_trace) = if manifest_path.exists() {
            let m: RunManifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
            (m.warnings, m.accuracy_trace)
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(Self {
            model: ck.model,
            specs: ck.specs,
            schedule: ck.schedule,
            state: ck.state,
            warnings,
            accuracy_trace,
        })
    }
}

/// Regularize `model` toward the given constraints and return the model with
/// its dual state. Convenience wrapper over [`AdmmEngine`].
pub fn admm_regularize(
    model: Model,
    specs: Vec<Option<ConstraintSpec>>,
    dataset: &Dataset,
    schedule: RhoSchedule,
    train_template: &TrainConfig,
    epochs_per_iteration: usize,
) -> Result<(Model, AdmmState, Vec<String>)> {
    let mut engine = AdmmEngine::new(model, specs, schedule)?;
    engine.run(dataset, train_template, epochs_per_iteration, None, None)?;
    Ok((engine.model, engine.state, engine.warnings))
}

// ---------------------------------------------------------------------------
// Masked mapping and retraining
// ---------------------------------------------------------------------------

/// Abort retraining when accuracy lands this far (in points) below the
/// recorded baseline. A plumbing constant, deliberately loose.
pub const COLLAPSE_GUARD_POINTS: f64 = 0.20;

#[derive(Debug, Clone, Copy)]
pub struct AccuracyGuard {
    pub baseline_accuracy: f64,
    pub max_drop: f64,
}

impl Default for AccuracyGuard {
    fn default() -> Self {
        Self { baseline_accuracy: 1.0, max_drop: COLLAPSE_GUARD_POINTS }
    }
}

fn run_guard(model: &Model, eval: Option<&Dataset>, guard: Option<AccuracyGuard>) -> Result<()> {
    if let (Some(eval), Some(g)) = (eval, guard) {
        let acc = train::evaluate(model, eval, 256)?;
        if g.baseline_accuracy - acc > g.max_drop {
            return Err(Error::AccuracyCollapse(format!(
                "accuracy {acc:.4} fell more than {:.2} below baseline {:.4}",
                g.max_drop, g.baseline_accuracy
            )));
        }
    }
    Ok(())
}

/// Make pruning constraints exactly feasible, freeze the resulting zero
/// pattern, and retrain the surviving weights. Filter constraints also zero
/// and freeze the dead filters' biases.
pub fn masked_map_retrain_prune(
    mut model: Model,
    specs: &[Option<ConstraintSpec>],
    dataset: &Dataset,
    cfg: &TrainConfig,
    eval: Option<&Dataset>,
    guard: Option<AccuracyGuard>,
) -> Result<(Model, TrainStats)> {
    if specs.len() != model.layers.len() {
        return Err(Error::Config("one constraint slot per layer required".into()));
    }
    for (li, spec) in specs.iter().enumerate() {
        let Some(spec) = spec else { continue };
        if !spec.is_pruning() {
            return Err(Error::Config(format!(
                "layer {li}: quantization constraint passed to the pruning finalizer"
            )));
        }
        let layer = &mut model.layers[li];
        let proj = projection::project_masked(&layer.weights, spec, layer.weight_mask.as_deref())?;
        layer.weights = proj.tensor;
        layer.merge_weight_mask(&proj.mask);
        if let ConstraintSpec::Filter { .. } = spec {
            let dead: Vec<usize> = (0..layer.weights.num_filters())
                .filter(|&f| {
                    layer
                        .weights
                        .group_indices(StructuredAxis::Filter, f)
                        .iter()
                        .all(|&i| layer.weights.values()[i] == 0.0)
                })
                .collect();
            let mut bias_mask = layer
                .bias_mask
                .clone()
                .unwrap_or_else(|| vec![true; layer.bias.len()]);
            for f in dead {
                layer.bias.values[f] = 0.0;
                bias_mask[f] = false;
            }
            layer.bias_mask = Some(bias_mask);
        }
        debug_assert!(spec.is_satisfied_by(&model.layers[li].weights));
    }
    let stats = train::train(&mut model, dataset, cfg)?;
    model.enforce_masks();
    run_guard(&model, eval, guard)?;
    Ok((model, stats))
}

/// Quantization finalizer, three phases: (1) snap and freeze the weights
/// already within `epsilon` of a level, (2) retrain the remaining free
/// weights with frozen/masked ones fixed, (3) snap the remainder. Masked
/// zeros are untouched throughout and `quant_levels` is recorded per layer.
pub fn masked_map_retrain_quant(
    mut model: Model,
    levels_per_layer: &[Option<Vec<f64>>],
    epsilon_fraction: f64,
    dataset: &Dataset,
    cfg: &TrainConfig,
    eval: Option<&Dataset>,
    guard: Option<AccuracyGuard>,
) -> Result<(Model, TrainStats)> {
    if levels_per_layer.len() != model.layers.len() {
        return Err(Error::Config("one level set slot per layer required".into()));
    }
    if epsilon_fraction < 0.0 {
        return Err(Error::Config("epsilon must be >= 0".into()));
    }
    let mut frozen: FrozenSets = model.layers.iter().map(|_| None).collect();
    for (li, levels) in levels_per_layer.iter().enumerate() {
        let Some(levels) = levels else { continue };
        projection::validate_levels(levels)?;
        let spacing = if levels.len() >= 2 { levels[1] - levels[0] } else { 0.0 };
        let eps = epsilon_fraction * spacing;
        let layer = &mut model.layers[li];
        let alive = layer.weight_mask.clone();
        let mut layer_frozen = vec![false; layer.weights.numel()];
        for (i, w) in layer.weights.values_mut().iter_mut().enumerate() {
            if alive.as_ref().map(|m| !m[i]).unwrap_or(false) {
                continue;
            }
            let q = projection::nearest_level(levels, *w);
            if (*w - q).abs() <= eps {
                *w = q;
                layer_frozen[i] = true;
            }
        }
        frozen[li] = Some(layer_frozen);
    }
    let stats = train::run_epochs(
        &mut model,
        dataset,
        cfg,
        train::LoopOptions { frozen: Some(&frozen), ..Default::default() },
    )?;
    for (li, levels) in levels_per_layer.iter().enumerate() {
        let Some(levels) = levels else { continue };
        let layer = &mut model.layers[li];
        let alive = layer.weight_mask.clone();
        for (i, w) in layer.weights.values_mut().iter_mut().enumerate() {
            if alive.as_ref().map(|m| !m[i]).unwrap_or(false) {
                continue;
            }
            *w = projection::nearest_level(levels, *w);
        }
        layer.quant_levels = Some(levels.clone());
    }
    model.enforce_masks();
    run_guard(&model, eval, guard)?;
    Ok((model, stats))
}

// ---------------------------------------------------------------------------
// Progressive pruning and plan derivation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompressionPlan {
    /// Per-round, per-layer constraints. Later rounds only tighten.
    pub rounds: Vec<Vec<Option<ConstraintSpec>>>,
    pub schedule: RhoSchedule,
    pub epochs_per_iteration: usize,
    pub retrain_epochs: usize,
    /// Quantization snap threshold as a fraction of the level spacing.
    pub quant_epsilon_fraction: f64,
}

impl CompressionPlan {
    pub fn single_round(
        specs: Vec<Option<ConstraintSpec>>,
        schedule: RhoSchedule,
        epochs_per_iteration: usize,
        retrain_epochs: usize,
    ) -> Self {
        Self {
            rounds: vec![specs],
            schedule,
            epochs_per_iteration,
            retrain_epochs,
            quant_epsilon_fraction: DEFAULT_QUANT_EPSILON_FRACTION,
        }
    }

    pub fn validate(&self, model: &Model) -> Result<()> {
        self.schedule.validate()?;
        if self.rounds.is_empty() {
            return Err(Error::Config("plan needs at least one round".into()));
        }
        for specs in &self.rounds {
            if specs.len() != model.layers.len() {
                return Err(Error::Config("one constraint slot per layer per round".into()));
            }
            for (layer, spec) in model.layers.iter().zip(specs) {
                if let Some(s) = spec {
                    s.validate_for(&layer.weights)?;
                }
            }
        }
        for pair in self.rounds.windows(2) {
            for (li, (a, b)) in pair[0].iter().zip(&pair[1]).enumerate() {
                match (a, b) {
                    (Some(a), Some(b)) => {
                        if std::mem::discriminant(a) != std::mem::discriminant(b) {
                            return Err(Error::Config(format!(
                                "layer {li}: constraint variant changes between rounds"
                            )));
                        }
                        if let (Some(ba), Some(bb)) = (a.budget(), b.budget()) {
                            if bb > ba {
                                return Err(Error::Infeasible(format!(
                                    "layer {li}: round budget grows from {ba} to {bb}; pruning only tightens"
                                )));
                            }
                        }
                    }
                    (None, Some(_)) | (Some(_), None) => {
                        return Err(Error::Config(format!(
                            "layer {li}: constrained in one round but not the other"
                        )));
                    }
                    (None, None) => {}
                }
            }
        }
        Ok(())
    }
}

/// Default snap threshold: 20% of the inter-level spacing.
pub const DEFAULT_QUANT_EPSILON_FRACTION: f64 = 0.2;

/// Consecutive pruning rounds. Round-one zeros are frozen by their masks, so
/// they are never revived; each round ends with masked mapping + retraining.
pub fn progressive_prune(
    model: Model,
    plan: &CompressionPlan,
    dataset: &Dataset,
    train_template: &TrainConfig,
    eval: Option<&Dataset>,
    guard: Option<AccuracyGuard>,
    manifest_dir: Option<&Path>,
) -> Result<(Model, Vec<AdmmState>)> {
    plan.validate(&model)?;
    let mut current = model;
    let mut states = Vec::new();
    for (round, specs) in plan.rounds.iter().enumerate() {
        // A round-two budget must fit inside the surviving support.
        for (li, spec) in specs.iter().enumerate() {
            if let (Some(spec), Some(budget)) = (spec, spec.as_ref().and_then(|s| s.budget())) {
                let layer = &current.layers[li];
                let available = match spec.axis() {
                    None => layer.alive_count(),
                    Some(axis) => (0..layer.weights.group_count(axis))
                        .filter(|&g| {
                            layer
                                .weights
                                .group_indices(axis, g)
                                .iter()
                                .any(|&i| layer.weight_mask.as_ref().map(|m| m[i]).unwrap_or(true))
                        })
                        .count(),
                };
                if round > 0 && budget > available {
                    return Err(Error::Infeasible(format!(
                        "round {round} layer {li}: budget {budget} exceeds the {available} structures left by the previous round"
                    )));
                }
            }
        }
        let dir = manifest_dir.map(|d| d.join(format!("round{}", round + 1)));
        let mut engine = AdmmEngine::new(current, specs.clone(), plan.schedule.clone())?;
        engine.run(
            dataset,
            train_template,
            plan.epochs_per_iteration,
            eval,
            dir.as_deref(),
        )?;
        let mut retrain_cfg = train_template.clone();
        retrain_cfg.epochs = plan.retrain_epochs.max(1);
        retrain_cfg.seed = train_template.seed.wrapping_add(1000 + round as u64);
        let (next, _) = masked_map_retrain_prune(engine.model, specs, dataset, &retrain_cfg, eval, guard)?;
        states.push(engine.state);
        current = next;
    }
    Ok((current, states))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedBudgets {
    /// Keep-counts per layer for each round.
    pub round1: Vec<usize>,
    pub round2: Vec<usize>,
    pub round1_rates: Vec<f64>,
    pub round2_rates: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Turn published per-layer pruning rates into two-round targets: the first
/// round aims at 1.5x the prior rate and the second doubles that (3x prior).
/// Rates convert to integer keep-budgets by flooring `count / rate`.
pub fn derive_plan(prior_rates: &[f64], group_counts: &[usize]) -> Result<DerivedBudgets> {
    if prior_rates.len() != group_counts.len() {
        return Err(Error::Config("one prior rate per layer required".into()));
    }
    if let Some(bad) = prior_rates.iter().find(|r| !(**r >= 1.0)) {
        return Err(Error::Config(format!("prior rate {bad} must be >= 1")));
    }
    let mut out = DerivedBudgets {
        round1: Vec::new(),
        round2: Vec::new(),
        round1_rates: Vec::new(),
        round2_rates: Vec::new(),
        warnings: Vec::new(),
    };
    for (li, (&rate, &count)) in prior_rates.iter().zip(group_counts).enumerate() {
        let r1 = 1.5 * rate;
        let r2 = 2.0 * r1;
        let mut budget = |r: f64| -> usize {
            let b = (count as f64 / r).floor() as usize;
            if b == 0 {
                out.warnings.push(format!(
                    "layer {li}: rate {r:.2} on {count} structures rounds to zero; clamped to 1"
                ));
                1
            } else {
                b
            }
        };
        let b1 = budget(r1);
        let b2 = budget(r2);
        out.round1.push(b1);
        out.round2.push(b2.min(b1));
        out.round1_rates.push(r1);
        out.round2_rates.push(r2);
    }
    Ok(out)
}

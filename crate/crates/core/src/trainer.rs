//! The training loop: one global forward (main loss and teacher label), one
//! local forward (student), one SGD-with-momentum update of the shared
//! weights per step.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use ndarray::{Array2, Array4, ArrayD, Zip};
use serde::{Deserialize, Serialize};

use crate::backbone::{save_checkpoint, BnUpdate, Grads, Model};
use crate::data_manifest::{Role, Sample, SplitManifest};
use crate::error::{Error, Result};
use crate::image_pipeline::{make_batch, Batch, ImageSource, PipelineConfig};
use crate::nn::Real;
use crate::objectives::{
    cross_entropy_with_grad, distillation_loss_with_grad, teacher_hard_label, total_loss, DistVariant, LossConfig,
    LossReport, DIST_WEIGHT, MAIN_WEIGHT,
};
use crate::rng::{self, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Global branch only, cross-entropy against ground truth.
    Vanilla,
    /// Global view and local crop both trained with cross-entropy against
    /// ground truth; no distillation.
    VanillaPlusSampling,
    /// Global teacher, local student, shared weights.
    KdCtcnet,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Vanilla, Method::VanillaPlusSampling, Method::KdCtcnet];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::VanillaPlusSampling => "vanilla_plus_sampling",
            Method::KdCtcnet => "kd_ctcnet",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown method {s:?} (vanilla, vanilla_plus_sampling, kd_ctcnet)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub loss_cfg: LossConfig,
    pub mixed_precision: bool,
    pub seed: u64,
    /// Evaluate on the validation manifest every this many steps (0: never).
    pub eval_every: usize,
    /// Write an intermediate checkpoint every this many steps (0: only at
    /// the end).
    pub checkpoint_every: usize,
    /// Run the local forward. Only `kd_ctcnet` honours `false`.
    pub local_branch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::KdCtcnet,
            lr: 0.01,
            momentum: 0.9,
            batch_size: 32,
            total_steps: 3000,
            loss_cfg: LossConfig::default(),
            mixed_precision: false,
            seed: 0,
            eval_every: 0,
            checkpoint_every: 0,
            local_branch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.total_steps < 1 {
            return Err(Error::Config("total_steps must be >= 1".into()));
        }
        self.loss_cfg.validate()
    }

    fn uses_local(&self) -> bool {
        match self.method {
            Method::Vanilla => false,
            Method::VanillaPlusSampling => true,
            Method::KdCtcnet => self.local_branch,
        }
    }
}

/// Losses, gradients and batch-norm statistics of one step, before the update.
pub struct StepOutput<T> {
    pub l_main: T,
    pub l_dist: T,
    pub total: T,
    pub variant: Option<DistVariant>,
    pub grads: Grads<T>,
    pub bn_updates: Vec<BnUpdate<T>>,
}

/// Forward and backward for one batch. Both forwards read the same
/// parameters; running statistics are returned, not applied.
pub fn loss_and_grads<T: Real>(
    model: &Model<T>,
    global: &Array4<T>,
    local: Option<&Array4<T>>,
    labels: &[usize],
    n_im_per_class: usize,
    method: Method,
    loss_cfg: &LossConfig,
) -> Result<StepOutput<T>> {
    let (z_t, mut tape_t) = model.forward_train(global)?;
    let (l_main, g_main) = cross_entropy_with_grad(z_t.view(), labels)?;
    let mut grads = Grads::zeros_like(model);
    let mut bn_updates = tape_t.take_bn_updates();

    let (l_dist, variant, total, local_grad) = match (method, local) {
        (Method::Vanilla, _) | (Method::KdCtcnet, None) => {
            (T::zero(), None, total_loss(l_main, T::zero(), loss_cfg), None)
        }
        (Method::KdCtcnet, Some(x)) => {
            let y_t = teacher_hard_label(z_t.view());
            let (z_s, tape_s) = model.forward_train(x)?;
            let (l_dist, variant, g) = distillation_loss_with_grad(z_s.view(), &y_t, n_im_per_class, loss_cfg)?;
            let scale = T::lit(loss_cfg.alpha * DIST_WEIGHT);
            (l_dist, Some(variant), total_loss(l_main, l_dist, loss_cfg), Some((tape_s, g.mapv(|v| v * scale))))
        }
        (Method::VanillaPlusSampling, Some(x)) => {
            let (z_s, tape_s) = model.forward_train(x)?;
            let (l_local, g) = cross_entropy_with_grad(z_s.view(), labels)?;
            let total = T::lit(MAIN_WEIGHT) * l_main + T::lit(DIST_WEIGHT) * l_local;
            let scale = T::lit(DIST_WEIGHT);
            (l_local, Some(DistVariant::CrossEntropy), total, Some((tape_s, g.mapv(|v| v * scale))))
        }
        (Method::VanillaPlusSampling, None) => {
            return Err(Error::Validation("vanilla_plus_sampling needs local views".into()))
        }
    };

    let main_scale = T::lit(MAIN_WEIGHT);
    let d_t: Array2<T> = g_main.mapv(|v| v * main_scale);
    model.backward(tape_t, &d_t, &mut grads);
    if let Some((mut tape_s, d_s)) = local_grad {
        bn_updates.extend(tape_s.take_bn_updates());
        model.backward(tape_s, &d_s, &mut grads);
    }
    Ok(StepOutput {
        l_main,
        l_dist,
        total,
        variant,
        grads,
        bn_updates,
    })
}

/// Classic momentum without dampening or weight decay:
/// `v = momentum * v + g; p = p - lr * v`.
pub fn sgd_momentum_update<T: Real>(
    params: &mut [ArrayD<T>],
    grads: &[ArrayD<T>],
    velocity: &mut [ArrayD<T>],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::Shape(format!(
            "{} parameters, {} gradients, {} velocity buffers",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for (i, ((p, g), v)) in params.iter().zip(grads).zip(velocity.iter()).enumerate() {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::Shape(format!(
                "parameter {i}: {:?} vs gradient {:?} vs velocity {:?}",
                p.shape(),
                g.shape(),
                v.shape()
            )));
        }
    }
    let (lr, m) = (T::lit(lr), T::lit(momentum));
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        Zip::from(p).and(g).and(v).for_each(|p, &g, v| {
            *v = m * *v + g;
            *p -= lr * *v;
        });
    }
    Ok(())
}

/// Everything needed to continue training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub step: usize,
    pub model: Model<f32>,
    pub velocity: Vec<ArrayD<f32>>,
    /// Drives epoch shuffles and augmentation.
    pub rng: SeededRng,
    pub history: Vec<LossReport>,
}

impl TrainState {
    pub fn new(mut model: Model<f32>, cfg: &TrainConfig) -> Self {
        model.set_low_precision(cfg.mixed_precision);
        let velocity = model.params().iter().map(|p| ArrayD::zeros(p.raw_dim())).collect();
        Self {
            step: 0,
            model,
            velocity,
            rng: rng::seeded(cfg.seed),
            history: Vec::new(),
        }
    }
}

/// One optimization step on a train-mode batch.
pub fn train_step(state: &mut TrainState, batch: &Batch, n_im_per_class: usize, cfg: &TrainConfig) -> Result<LossReport> {
    if !batch.local_used {
        return Err(Error::Validation("train_step needs a train-mode batch".into()));
    }
    let local = cfg.uses_local().then_some(&batch.local);
    let out = loss_and_grads(
        &state.model,
        &batch.global,
        local,
        &batch.labels,
        n_im_per_class,
        cfg.method,
        &cfg.loss_cfg,
    )?;
    let step = state.step + 1;
    if !(out.total.is_finite() && out.l_main.is_finite() && out.l_dist.is_finite()) {
        return Err(Error::NonFiniteLoss {
            step,
            l_main: out.l_main.to_f64_lossy(),
            l_dist: out.l_dist.to_f64_lossy(),
            entries: batch.paths.clone(),
        });
    }
    sgd_momentum_update(state.model.params_mut(), &out.grads.0, &mut state.velocity, cfg.lr, cfg.momentum)?;
    state.model.apply_bn_updates(&out.bn_updates);
    state.step = step;
    let report = LossReport {
        step,
        l_main: out.l_main.to_f64_lossy(),
        l_dist: out.l_dist.to_f64_lossy(),
        total: out.total.to_f64_lossy(),
        dist_variant: out.variant,
        n_im_per_class,
    };
    state.history.push(report.clone());
    Ok(report)
}

pub const LOSS_LOG_HEADER: &str = "step\tl_main\tl_dist\tvariant\ttotal\tlr";

pub fn loss_log_line(r: &LossReport, lr: f64) -> String {
    let variant = r.dist_variant.map_or("none".to_string(), |v| v.to_string());
    format!("{}\t{:.8}\t{:.8}\t{}\t{:.8}\t{}", r.step, r.l_main, r.l_dist, variant, r.total, lr)
}

/// Accuracy on the validation manifest at a given step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub accuracy: f64,
}

/// Optional side channels of [`train`].
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Receives [`LOSS_LOG_HEADER`] and one line per step.
    pub loss_log: Option<&'a mut dyn Write>,
    /// Receives one patch line per training sample (see [`Batch::patch_log`]).
    pub patch_log: Option<&'a mut dyn Write>,
    /// Written on completion, on abort, and every `checkpoint_every` steps.
    pub checkpoint: Option<PathBuf>,
    pub validation: Option<(&'a SplitManifest, &'a dyn ImageSource)>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub evals: Vec<EvalPoint>,
}

fn log_err(e: std::io::Error) -> Error {
    Error::Io {
        path: PathBuf::from("<training log>"),
        source: e,
    }
}

/// Trains `model` on `manifest` for `cfg.total_steps` steps over seeded
/// shuffled epochs, keeping the final partial batch of each epoch.
pub fn train(
    manifest: &SplitManifest,
    source: &dyn ImageSource,
    pipeline: &PipelineConfig,
    cfg: &TrainConfig,
    model: Model<f32>,
    mut hooks: TrainHooks<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    pipeline.validate()?;
    manifest.validate()?;
    if manifest.role != Role::Train {
        return Err(Error::Validation(format!("cannot train on a {} manifest", manifest.role)));
    }
    if manifest.is_empty() {
        return Err(Error::Validation("training manifest is empty".into()));
    }
    if model.class_names() != manifest.classes.as_slice() {
        return Err(Error::Validation(format!(
            "model classes {:?} do not match manifest classes {:?}",
            model.class_names(),
            manifest.classes
        )));
    }
    let n_im = manifest.per_class_count;
    let mut state = TrainState::new(model, cfg);
    let mut evals = Vec::new();
    if let Some(w) = hooks.loss_log.as_mut() {
        writeln!(w, "{LOSS_LOG_HEADER}").map_err(log_err)?;
    }

    let result = (|| -> Result<()> {
        let mut order: Vec<usize> = Vec::new();
        let mut cursor = 0;
        while state.step < cfg.total_steps {
            if cursor >= order.len() {
                order = (0..manifest.len()).collect();
                rng::shuffle(&mut state.rng, &mut order);
                cursor = 0;
            }
            let end = (cursor + cfg.batch_size).min(order.len());
            let entries: Vec<Sample> = order[cursor..end].iter().map(|&i| manifest.entries[i].clone()).collect();
            cursor = end;
            let batch = make_batch(&entries, source, pipeline, true, &mut state.rng)?;
            let report = train_step(&mut state, &batch, n_im, cfg)?;
            if let Some(w) = hooks.loss_log.as_mut() {
                writeln!(w, "{}", loss_log_line(&report, cfg.lr)).map_err(log_err)?;
            }
            if let Some(w) = hooks.patch_log.as_mut() {
                w.write_all(batch.patch_log(state.step).as_bytes()).map_err(log_err)?;
            }
            if cfg.eval_every > 0 && state.step % cfg.eval_every == 0 {
                if let Some((val, val_source)) = hooks.validation {
                    let ev = crate::experiment::evaluate(&state.model, val, val_source, pipeline, cfg.batch_size)?;
                    log::info!("step {} validation accuracy {:.4}", state.step, ev.accuracy);
                    evals.push(EvalPoint {
                        step: state.step,
                        accuracy: ev.accuracy,
                    });
                }
            }
            if cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 && state.step < cfg.total_steps {
                if let Some(path) = &hooks.checkpoint {
                    save_checkpoint(&state.model, path)?;
                }
            }
        }
        Ok(())
    })();

    if let Some(path) = &hooks.checkpoint {
        let saved = save_checkpoint(&state.model, path);
        if let Err(e) = &result {
            log::error!("training aborted at step {}: {e}; checkpoint written to {}", state.step, path.display());
        }
        saved?;
    }
    result?;
    Ok(TrainOutcome { state, evals })
}

//! Training loop, evaluation, and the comparison harnesses.

mod compare;
mod losses;
mod optim;

pub use compare::{
    ablation_table, comparison_table, frozen_eval_set, run_ablation, run_comparison, AblationRow, Comparison, ComparisonConfig,
    RunResult, REFERENCE_ROWS,
};
pub use losses::{
    alpha_prediction_loss, batch_unknown_mask, compositional_loss, gradient_filters, gradient_loss, gradient_magnitude_var, LOSS_EPS,
};
pub use optim::{Adam, AdamConfig, Schedule};

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::checkpoint::{model_checkpoint, model_from_checkpoint, Checkpoint};
use crate::data::{stack, EvalItem, MattingSample, SampleSource};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_pair, MetricReport};
use crate::model::{MattingModel, ModelConfig};
use crate::nn::{Ctx, Mode};
use crate::tensor::Tensor;

/// Which loss terms are summed into the training objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossFlags {
    pub rec: bool,
    pub comp: bool,
    pub gradl: bool,
}

impl Default for LossFlags {
    fn default() -> Self {
        LossFlags { rec: true, comp: false, gradl: false }
    }
}

impl LossFlags {
    pub fn any(&self) -> bool {
        self.rec || self.comp || self.gradl
    }

    pub fn label(&self) -> String {
        let parts: Vec<&str> = [(self.rec, "rec"), (self.comp, "comp"), (self.gradl, "gradl")]
            .iter()
            .filter(|(on, _)| *on)
            .map(|(_, n)| *n)
            .collect();
        parts.join("+")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub total_steps: u64,
    /// Warmup length as a fraction of `total_steps`.
    pub warmup_frac: f64,
    pub batch: usize,
    pub seed: u64,
    pub losses: LossFlags,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        TrainConfig {
            lr: 4e-4,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            total_steps: 2000,
            warmup_frac: 0.05,
            batch: 4,
            seed: 0,
            losses: LossFlags::default(),
            checkpoint_every: 500,
        }
    }

    pub fn full() -> Self {
        TrainConfig { total_steps: 200_000, batch: 40, ..Self::desk() }
    }

    pub fn warmup_steps(&self) -> u64 {
        if self.total_steps == 0 {
            return 0;
        }
        ((self.warmup_frac * self.total_steps as f64).round() as u64).clamp(1, self.total_steps)
    }

    pub fn schedule(&self) -> Schedule {
        Schedule { lr: self.lr, warmup_steps: self.warmup_steps(), total_steps: self.total_steps }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("train.lr must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("train.beta1 and train.beta2 must lie in [0, 1)");
        }
        if self.adam_eps <= 0.0 {
            return bad("train.adam_eps must be positive");
        }
        if !(0.0..=1.0).contains(&self.warmup_frac) {
            return bad("train.warmup_frac must lie in [0, 1]");
        }
        if self.batch == 0 {
            return bad("train.batch must be at least 1");
        }
        if self.checkpoint_every == 0 {
            return bad("train.checkpoint_every must be at least 1");
        }
        if !self.losses.any() {
            return bad("train.losses enables no loss term");
        }
        Ok(())
    }
}

/// A stacked batch of samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub image: Tensor<f32>,
    pub trimap: Tensor<f32>,
    pub alpha: Tensor<f32>,
    pub fg: Tensor<f32>,
    pub bg: Tensor<f32>,
}

impl Batch {
    pub fn from_samples(samples: &[MattingSample]) -> Result<Self> {
        let col = |f: fn(&MattingSample) -> &Tensor<f32>| stack(&samples.iter().map(f).collect::<Vec<_>>());
        Ok(Batch {
            image: col(|s| &s.image)?,
            trimap: col(|s| &s.trimap)?,
            alpha: col(|s| &s.alpha)?,
            fg: col(|s| &s.fg)?,
            bg: col(|s| &s.bg)?,
        })
    }
}

/// Supplies the batch for a given step. Implementations must be pure
/// functions of `(step, size)` so runs are reproducible and resumable.
pub trait BatchSource {
    fn batch(&self, step: u64, size: usize) -> Result<Batch>;
}

impl BatchSource for SampleSource {
    fn batch(&self, step: u64, size: usize) -> Result<Batch> {
        let samples: Vec<MattingSample> =
            (0..size as u64).into_par_iter().map(|i| self.sample(step * size as u64 + i)).collect::<Result<_>>()?;
        Batch::from_samples(&samples)
    }
}

/// The same sample at every step, ignoring the batch size.
#[derive(Clone, Debug)]
pub struct FixedSample(pub MattingSample);

impl BatchSource for FixedSample {
    fn batch(&self, _step: u64, _size: usize) -> Result<Batch> {
        Batch::from_samples(std::slice::from_ref(&self.0))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub rec: Option<f64>,
    pub comp: Option<f64>,
    pub gradl: Option<f64>,
    /// Mean `|α̂−α|` over unknown pixels, without smoothing.
    pub unknown_l1: f64,
    pub skipped: bool,
}

pub const LOSS_CSV_HEADER: &str = "step,lr,loss,rec,comp,gradl,unknown_l1,skipped";

impl StepLog {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.9}"));
        format!(
            "{},{:.9e},{:.9},{},{},{},{:.9},{}",
            self.step,
            self.lr,
            self.loss,
            opt(self.rec),
            opt(self.comp),
            opt(self.gradl),
            self.unknown_l1,
            self.skipped
        )
    }
}

const STEP_KEY: &str = "meta/step";
const ADAM_T_KEY: &str = "meta/adam_t";
const TRAIN_CONFIG_KEY: &str = "meta/train_config";

/// Model, optimizer state and step counter of one training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: MattingModel<f32>,
    pub cfg: TrainConfig,
    pub adam: Adam<f32>,
    pub step: u64,
}

impl Trainer {
    pub fn new(model_cfg: ModelConfig, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = MattingModel::new(model_cfg, cfg.seed)?;
        Ok(Self::from_model(model, cfg))
    }

    pub fn from_model(model: MattingModel<f32>, cfg: TrainConfig) -> Self {
        let adam = Adam::new(cfg.adam());
        Trainer { model, cfg, adam, step: 0 }
    }

    /// One forward/backward/update on `batch` at the scheduled learning rate.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepLog> {
        let lr = self.cfg.schedule().lr(self.step);
        let log = self.step_with_lr(batch, lr)?;
        self.step += 1;
        Ok(log)
    }

    /// Like [`Trainer::train_step`] at a fixed learning rate, without
    /// advancing the step counter.
    pub fn step_with_lr(&mut self, batch: &Batch, lr: f64) -> Result<StepLog> {
        let flags = self.cfg.losses;
        let mask = batch_unknown_mask(&batch.trimap);
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &mut self.model.store, Mode::Train);
        let image = ctx.constant(batch.image.clone());
        let out = self.model.net.forward(&mut ctx, image, &batch.trimap)?;
        let gt = ctx.constant(batch.alpha.clone());
        let g = &mut *ctx.graph;
        let mut terms = Vec::new();
        let mut record = |g: &mut Graph<f32>, on: bool, f: &dyn Fn(&mut Graph<f32>) -> Result<crate::autograd::Var>| -> Result<Option<f64>> {
            if !on {
                return Ok(None);
            }
            let v = f(g)?;
            terms.push(v);
            Ok(Some(g.value(v).item()? as f64))
        };
        let rec = record(g, flags.rec, &|g| alpha_prediction_loss(g, out.alpha, gt, &mask))?;
        let comp = record(g, flags.comp, &|g| {
            let fg = g.constant(batch.fg.clone());
            let bg = g.constant(batch.bg.clone());
            let img = g.constant(batch.image.clone());
            compositional_loss(g, out.alpha, fg, bg, img, &mask)
        })?;
        let gradl = record(g, flags.gradl, &|g| gradient_loss(g, out.alpha, gt, &mask))?;
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = g.add(total, t)?;
        }
        let loss = g.value(total).item()? as f64;
        let unknown_l1 = unknown_l1(g.value(out.alpha), &batch.alpha, &mask);
        g.backward(total)?;
        let grads = ctx.param_grads();
        let applied = self.adam.step(&mut self.model.store, &grads, lr);
        Ok(StepLog { step: self.step, lr, loss, rec, comp, gradl, unknown_l1, skipped: !applied })
    }

    /// Runs until `total_steps`. With `out`, appends to `loss.csv`, writes
    /// `ckpt_NNNNNN.gcam` every `checkpoint_every` steps and `final.gcam`
    /// at the end. On a failed step the current state is saved to
    /// `abort.gcam` before the error is returned.
    pub fn run(&mut self, source: &dyn BatchSource, out: Option<&Path>, mut on_step: impl FnMut(&StepLog)) -> Result<Vec<StepLog>> {
        let mut csv = match out {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                let path = dir.join("loss.csv");
                let fresh = self.step == 0 || !path.exists();
                let mut f = OpenOptions::new().create(true).write(true).append(!fresh).truncate(fresh).open(&path)?;
                if fresh {
                    writeln!(f, "{LOSS_CSV_HEADER}")?;
                }
                Some(f)
            }
            None => None,
        };
        let mut logs = Vec::new();
        while self.step < self.cfg.total_steps {
            let res = source.batch(self.step, self.cfg.batch).and_then(|b| self.train_step(&b));
            let log = match res {
                Ok(l) => l,
                Err(e) => {
                    if let Some(dir) = out {
                        if let Err(save) = self.save(&dir.join("abort.gcam")) {
                            log::error!("could not save abort checkpoint: {save}");
                        }
                    }
                    return Err(e);
                }
            };
            if let Some(f) = csv.as_mut() {
                writeln!(f, "{}", log.csv_row())?;
            }
            on_step(&log);
            logs.push(log);
            if let Some(dir) = out {
                if self.step % self.cfg.checkpoint_every == 0 && self.step < self.cfg.total_steps {
                    self.save(&dir.join(format!("ckpt_{:06}.gcam", self.step)))?;
                }
            }
        }
        if let Some(dir) = out {
            self.save(&dir.join("final.gcam"))?;
        }
        Ok(logs)
    }

    /// Model tensors plus optimizer moments, step counter and configs.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = model_checkpoint(&self.model)?;
        let cfg = toml::to_string(&self.cfg).map_err(|e| Error::Config(e.to_string()))?;
        ck.push_bytes(TRAIN_CONFIG_KEY, cfg.into_bytes());
        ck.push_bytes(STEP_KEY, self.step.to_le_bytes().to_vec());
        ck.push_bytes(ADAM_T_KEY, self.adam.t.to_le_bytes().to_vec());
        for (name, (m, v)) in &self.adam.moments {
            ck.push_tensor(format!("adam.m/{name}"), m.clone());
            ck.push_tensor(format!("adam.v/{name}"), v.clone());
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.checkpoint()?.save(path)
    }

    /// Restores a run saved by [`Trainer::save`]. The data stream depends
    /// only on the seed and step, so no generator state is stored.
    pub fn resume(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let model = model_from_checkpoint(&ck)?;
        let cfg: TrainConfig = toml::from_str(ck.text(TRAIN_CONFIG_KEY)?).map_err(|e| Error::Format(format!("train config: {e}")))?;
        let mut t = Trainer::from_model(model, cfg);
        t.step = ck.u64(STEP_KEY)?;
        t.adam.t = ck.u64(ADAM_T_KEY)?;
        for (name, p) in &ck.entries {
            if let (Some(param), crate::checkpoint::Payload::F32(m)) = (name.strip_prefix("adam.m/"), p) {
                let v = ck.tensor(&format!("adam.v/{param}"))?;
                t.adam.moments.insert(param.to_string(), (m.clone(), v.clone()));
            }
        }
        Ok(t)
    }
}

/// Mean `|p − g|` over masked pixels.
pub fn unknown_l1(pred: &Tensor<f32>, gt: &Tensor<f32>, mask: &[bool]) -> f64 {
    let (s, n) = pred
        .data()
        .iter()
        .zip(gt.data())
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), ((&p, &g), _)| (s + (p as f64 - g as f64).abs(), n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Whole-image inference and all four metrics for every item with ground
/// truth and a non-empty unknown region; other items are skipped with a
/// warning. Images are processed in parallel on clones of `model`.
pub fn evaluate(model: &MattingModel<f32>, items: &[EvalItem]) -> Result<MetricReport> {
    let rows: Vec<Option<crate::metrics::MetricRow>> = items
        .par_iter()
        .map_init(
            || model.clone(),
            |m, item| -> Result<_> {
                let Some(gt) = &item.alpha else {
                    log::warn!("{}: no ground-truth alpha, skipped", item.name);
                    return Ok(None);
                };
                let mask = crate::data::unknown_mask(&item.trimap);
                if !mask.iter().any(|&u| u) {
                    log::warn!("{}: trimap has no unknown pixels, skipped", item.name);
                    return Ok(None);
                }
                let pred = m.infer_full(&item.image, &item.trimap)?.alpha;
                evaluate_pair(&item.name, &pred, gt, &mask).map(Some)
            },
        )
        .collect::<Result<_>>()?;
    Ok(MetricReport { rows: rows.into_iter().flatten().collect() })
}

/// Output directory layout of a training run.
pub fn final_checkpoint_path(out: &Path) -> PathBuf {
    out.join("final.gcam")
}

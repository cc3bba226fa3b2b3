//! Alternating critic/generator training, loss logging and checkpointing.

use std::fs;
use std::path::{Path as FsPath, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, TrainState};
use crate::codec::{to_model_input, ClassLogits};
use crate::error::{Error, Result};
use crate::grid::{ClassRaster, Label};
use crate::mapgen::{load_split, DatasetManifest, Split};
use crate::model::{
    adversarial_generator_loss, critic_input, discriminator_loss, gradient_penalty, logits_grad_from_critic,
    softmax_channels, supervised_loss, total_generator_loss, Ablation, AdvMode, DiscriminatorSpec, GeneratorSpec,
    LossConfig, ModelBundle, SupMode,
};
use crate::nn::{Adam, AdamConfig, Tensor};
use crate::seed;

pub const TRAIN_LOG: &str = "train.csv";
pub const VAL_LOG: &str = "val.csv";
pub const FINAL_CHECKPOINT: &str = "model.ckpt";
pub const DIAGNOSTIC_CHECKPOINT: &str = "diverged.ckpt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub data: PathBuf,
    pub out: PathBuf,
    pub ablation: Ablation,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    pub g_features: Option<usize>,
    pub g_depth: Option<usize>,
    pub g_norm: Option<String>,
    pub d_features: Option<usize>,
    /// Save an intermediate checkpoint every this many steps (0: final only).
    pub checkpoint_every: u64,
    /// Stop after this many optimizer steps even if epochs remain.
    pub max_steps: Option<u64>,
    /// Use only the first `n` training instances.
    pub max_train: Option<usize>,
    /// Random horizontal/vertical flips of each training pair.
    pub augment: bool,
    /// Record mean validation cross-entropy per epoch in `val.csv`.
    pub validate: bool,
    pub resume: Option<PathBuf>,
    /// Informational only; all computation runs on the CPU.
    pub device: String,
}

impl TrainConfig {
    pub fn new(data: impl Into<PathBuf>, out: impl Into<PathBuf>, ablation: Ablation) -> Self {
        Self {
            data: data.into(),
            out: out.into(),
            ablation,
            epochs: 10,
            batch_size: 16,
            seed: 0,
            loss: ablation.loss_config(),
            adam: AdamConfig::default(),
            g_features: None,
            g_depth: None,
            g_norm: None,
            d_features: None,
            checkpoint_every: 0,
            max_steps: None,
            max_train: None,
            augment: false,
            validate: false,
            resume: None,
            device: "cpu".into(),
        }
    }

    /// Switches preset; resets the loss configuration to the preset's.
    pub fn set_ablation(&mut self, ablation: Ablation) {
        self.ablation = ablation;
        self.loss = ablation.loss_config();
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
        }
        match key {
            "data" => self.data = value.into(),
            "out" => self.out = value.into(),
            "ablation" => self.set_ablation(value.parse()?),
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "lambda_ce" => self.loss.lambda_ce = parse(key, value)?,
            "lambda_gp" => self.loss.lambda_gp = parse(key, value)?,
            "adv_mode" => {
                self.loss.adv_mode = match value {
                    "wgan-gp" => AdvMode::WganGp,
                    "vanilla" => AdvMode::Vanilla,
                    _ => return Err(Error::Config(format!("adv_mode must be wgan-gp or vanilla, got {value:?}"))),
                }
            }
            "sup_mode" => {
                self.loss.sup_mode = match value {
                    "cross-entropy" => SupMode::CrossEntropy,
                    "l1" => SupMode::L1,
                    _ => return Err(Error::Config(format!("sup_mode must be cross-entropy or l1, got {value:?}"))),
                }
            }
            "lr" => self.adam.lr = parse(key, value)?,
            "beta1" => self.adam.beta1 = parse(key, value)?,
            "beta2" => self.adam.beta2 = parse(key, value)?,
            "g_features" => self.g_features = Some(parse(key, value)?),
            "g_depth" => self.g_depth = Some(parse(key, value)?),
            "g_norm" => self.g_norm = Some(value.to_string()),
            "d_features" => self.d_features = Some(parse(key, value)?),
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "max_steps" => self.max_steps = Some(parse(key, value)?),
            "max_train" => self.max_train = Some(parse(key, value)?),
            "augment" => self.augment = parse(key, value)?,
            "validate" => self.validate = parse(key, value)?,
            "resume" => self.resume = Some(value.into()),
            "device" => self.device = value.to_string(),
            _ => return Err(Error::Config(format!("unknown training setting {key:?}"))),
        }
        Ok(())
    }

    /// Applies a key-value text file: one `key = value` per line, `#`
    /// comments and blank lines ignored.
    pub fn apply_file(&mut self, path: &FsPath) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{}:{}: expected key = value", path.display(), lineno + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        self.loss.validate()
    }

    pub fn specs(&self, width: usize, height: usize) -> (GeneratorSpec, DiscriminatorSpec) {
        let mut g = GeneratorSpec::new(width, height);
        if let Some(f) = self.g_features {
            g.base_features = f;
        }
        if let Some(d) = self.g_depth {
            g.depth = d;
        }
        if let Some(n) = &self.g_norm {
            g.norm = n.clone();
        }
        let mut d = DiscriminatorSpec::new(width, height, self.ablation.conditional_critic());
        if let Some(f) = self.d_features {
            d.base_features = f;
        }
        (g, d)
    }
}

/// Input/target pair in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: ClassRaster,
    pub gt: ClassRaster,
}

/// Losses from one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub g_total: f32,
    pub g_sup: f32,
    pub g_adv: f32,
    pub d_loss: f32,
    /// Unweighted gradient penalty (0 when not used).
    pub gp: f32,
}

impl StepLosses {
    fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("g_total", self.g_total),
            ("g_sup", self.g_sup),
            ("g_adv", self.g_adv),
            ("d_loss", self.d_loss),
            ("gp", self.gp),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub epoch: usize,
    pub g_total: f32,
    pub g_sup: f32,
    pub g_adv: f32,
    pub d_loss: f32,
    pub gp: f32,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn load(path: &FsPath) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let rows =
            rdr.deserialize().collect::<std::result::Result<Vec<LogRow>, _>>().map_err(|e| Error::csv(path, e))?;
        Ok(Self { rows })
    }

    pub fn save(&self, path: &FsPath) -> Result<()> {
        write_csv(path, &self.rows)
    }

    /// Mean supervised loss per epoch, in epoch order.
    pub fn epoch_sup_means(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64, usize)> = Vec::new();
        for r in &self.rows {
            match out.last_mut() {
                Some((e, s, n)) if *e == r.epoch => {
                    *s += r.g_sup as f64;
                    *n += 1;
                }
                _ => out.push((r.epoch, r.g_sup as f64, 1)),
            }
        }
        out.into_iter().map(|(e, s, n)| (e, s / n as f64)).collect()
    }
}

pub(crate) fn write_csv<T: Serialize>(path: &FsPath, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValRow {
    pub epoch: usize,
    pub step: u64,
    pub val_sup: f32,
}

/// Networks plus optimizer state; one call to [`Trainer::train_step`] is one
/// critic update followed by one generator update.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub bundle: ModelBundle,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub step: u64,
    seed: u64,
}

fn batch_tensors(batch: &[&Sample]) -> (Tensor, Tensor, Vec<Label>) {
    let (w, h) = (batch[0].input.width(), batch[0].input.height());
    let x = Tensor::stack(&batch.iter().map(|s| to_model_input(&s.input)).collect::<Vec<_>>(), 3, h, w);
    let gt = Tensor::stack(&batch.iter().map(|s| to_model_input(&s.gt)).collect::<Vec<_>>(), 3, h, w);
    let targets = batch.iter().flat_map(|s| s.gt.labels().iter().copied()).collect();
    (x, gt, targets)
}

impl Trainer {
    pub fn new(bundle: ModelBundle, adam: AdamConfig, seed: u64) -> Self {
        Self { bundle, opt_g: Adam::new(adam), opt_d: Adam::new(adam), step: 0, seed }
    }

    pub fn train_step(&mut self, batch: &[&Sample]) -> StepLosses {
        assert!(!batch.is_empty(), "empty batch");
        let loss = self.bundle.loss;
        let conditional = self.bundle.discriminator.spec.conditional_full_image;
        let (x, gt, targets) = batch_tensors(batch);

        let g = &mut self.bundle.generator;
        let (logits, gcache) = g.forward(&x, true);
        g.commit_running_stats(&gcache);
        let probs = softmax_channels(&logits);
        let real_in = critic_input(&gt, &x, conditional);
        let fake_in = critic_input(&probs, &x, conditional);

        // Critic update on a detached fake.
        let d = &mut self.bundle.discriminator;
        d.zero_grad();
        let (real_scores, rc) = d.forward(&real_in);
        let (fake_scores, fc) = d.forward(&fake_in);
        let penalty = (loss.adv_mode == AdvMode::WganGp && loss.lambda_gp > 0.0).then(|| {
            let mut rng = seed::rng(self.seed, &[seed::STEP, self.step]);
            let eps: Vec<f32> = (0..x.n).map(|_| rng.random::<f32>()).collect();
            gradient_penalty(&*d, &real_in, &fake_in, &eps)
        });
        let gp = penalty.as_ref().map_or(0.0, |p| p.value);
        let dl = discriminator_loss(&real_scores, &fake_scores, gp, &loss);
        d.backward(&rc, &dl.d_real);
        d.backward(&fc, &dl.d_fake);
        if let Some(p) = &penalty {
            d.accumulate_penalty_grads(p, loss.lambda_gp);
        }
        self.opt_d.step(&mut d.params_mut());

        // Generator update against the refreshed critic.
        let (scores, fc2) = d.forward(&fake_in);
        let adv = adversarial_generator_loss(&scores, loss.adv_mode);
        let dinput = d.input_gradient(&fc2, &adv.grad);
        let mut dlogits = logits_grad_from_critic(&dinput, &probs, conditional);
        let sup = supervised_loss(&logits, &targets, loss.sup_mode);
        for (a, s) in dlogits.data.iter_mut().zip(&sup.grad.data) {
            *a += loss.lambda_ce * s;
        }
        let g = &mut self.bundle.generator;
        g.zero_grad();
        g.backward(&gcache, &dlogits);
        self.opt_g.step(&mut g.params_mut());
        self.step += 1;

        StepLosses {
            g_total: total_generator_loss(sup.value, adv.value, &loss),
            g_sup: sup.value,
            g_adv: adv.value,
            d_loss: dl.value,
            gp,
        }
    }

    /// Mean supervised loss in inference mode; parameters are untouched.
    pub fn evaluate_supervised(&self, samples: &[Sample], batch_size: usize) -> f32 {
        let mut total = 0.0f64;
        for chunk in samples.chunks(batch_size.max(1)) {
            let refs: Vec<&Sample> = chunk.iter().collect();
            let (x, _, targets) = batch_tensors(&refs);
            let logits = self.bundle.generator.forward_eval(&x);
            total += supervised_loss(&logits, &targets, self.bundle.loss.sup_mode).value as f64 * chunk.len() as f64;
        }
        (total / samples.len().max(1) as f64) as f32
    }

    fn checkpoint(&self, epoch: usize, batch_in_epoch: usize, cfg: &TrainConfig) -> Checkpoint {
        Checkpoint {
            bundle: self.bundle.clone(),
            train: Some(TrainState {
                step: self.step,
                epoch,
                batch_in_epoch,
                opt_g: self.opt_g.clone(),
                opt_d: self.opt_d.clone(),
                meta: serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null),
            }),
        }
    }
}

/// Flips each sample by a code drawn from (seed, step); a mirrored map with
/// its mirrored path is another valid instance.
pub fn augment_batch(batch: &[&Sample], seed_value: u64, step: u64) -> Vec<Sample> {
    let mut rng = seed::rng(seed_value, &[seed::AUGMENT, step]);
    batch
        .iter()
        .map(|s| {
            let code: u8 = rng.random_range(0..4);
            let (h, v) = (code & 1 == 1, code & 2 == 2);
            Sample { input: s.input.flipped(h, v), gt: s.gt.flipped(h, v) }
        })
        .collect()
}

/// Batch order for one epoch: a permutation seeded by (seed, epoch).
pub fn epoch_order(n: usize, seed_value: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed_value, &[seed::SHUFFLE, epoch as u64]));
    order
}

fn load_samples(dir: &FsPath, manifest: &DatasetManifest, split: Split) -> Result<Vec<Sample>> {
    Ok(load_split(dir, manifest, split)?.into_iter().map(|li| Sample { input: li.input, gt: li.gt }).collect())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub log: TrainLog,
    pub bundle: ModelBundle,
}

/// Runs training from a dataset directory. Writes `train.csv`, optional
/// `val.csv`, periodic checkpoints and `model.ckpt` into `cfg.out`.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let manifest = DatasetManifest::load(&cfg.data)?;
    let mut samples = load_samples(&cfg.data, &manifest, Split::Train)?;
    if let Some(n) = cfg.max_train {
        samples.truncate(n);
    }
    if samples.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let val = if cfg.validate { load_samples(&cfg.data, &manifest, Split::Validation)? } else { Vec::new() };
    train_samples(cfg, &samples, &val)
}

/// Training on in-memory samples; see [`train`].
pub fn train_samples(cfg: &TrainConfig, samples: &[Sample], val: &[Sample]) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let (w, h) = (samples[0].input.width(), samples[0].input.height());
    let log_path = cfg.out.join(TRAIN_LOG);
    let val_path = cfg.out.join(VAL_LOG);

    let (mut trainer, mut epoch, mut start_batch, mut log, mut val_rows) = match &cfg.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let state =
                ck.train.ok_or_else(|| Error::Checkpoint(format!("{} has no training state", path.display())))?;
            let spec = &ck.bundle.generator.spec;
            if (spec.width, spec.height) != (w, h) {
                return Err(Error::Config("checkpoint map size differs from the dataset".into()));
            }
            let mut t = Trainer::new(ck.bundle, cfg.adam, cfg.seed);
            t.opt_g = state.opt_g;
            t.opt_d = state.opt_d;
            t.step = state.step;
            let mut log = if log_path.exists() { TrainLog::load(&log_path)? } else { TrainLog::default() };
            log.rows.retain(|r| r.step < state.step);
            let mut val_rows: Vec<ValRow> = if val_path.exists() { read_csv(&val_path)? } else { Vec::new() };
            val_rows.retain(|r| r.step <= state.step);
            (t, state.epoch, state.batch_in_epoch, log, val_rows)
        }
        None => {
            let (gs, ds) = cfg.specs(w, h);
            let bundle = ModelBundle::new(gs, ds, cfg.loss, cfg.seed)?;
            (Trainer::new(bundle, cfg.adam, cfg.seed), 0, 0, TrainLog::default(), Vec::new())
        }
    };
    log::info!(
        "training {} on {} samples ({}x{}), generator {} params",
        cfg.ablation.as_str(),
        samples.len(),
        w,
        h,
        trainer.bundle.generator.parameter_count()
    );

    let clock = Instant::now();
    let offset = log.rows.last().map_or(0.0, |r| r.seconds);
    let batches = samples.len().div_ceil(cfg.batch_size);
    let done = |t: &Trainer| cfg.max_steps.is_some_and(|m| t.step >= m);
    'epochs: while epoch < cfg.epochs && !done(&trainer) {
        let order = epoch_order(samples.len(), cfg.seed, epoch);
        for b in start_batch..batches {
            if done(&trainer) {
                break 'epochs;
            }
            let batch: Vec<&Sample> = order[b * cfg.batch_size..((b + 1) * cfg.batch_size).min(samples.len())]
                .iter()
                .map(|&i| &samples[i])
                .collect();
            let step = trainer.step;
            let losses = if cfg.augment {
                let owned = augment_batch(&batch, cfg.seed, step);
                trainer.train_step(&owned.iter().collect::<Vec<_>>())
            } else {
                trainer.train_step(&batch)
            };
            if let Some(what) = losses.first_non_finite() {
                let path = cfg.out.join(DIAGNOSTIC_CHECKPOINT);
                trainer.checkpoint(epoch, b + 1, cfg).save(&path)?;
                log.save(&log_path)?;
                return Err(Error::NonFinite { step, what: what.into(), checkpoint: path });
            }
            log.rows.push(LogRow {
                step,
                epoch,
                g_total: losses.g_total,
                g_sup: losses.g_sup,
                g_adv: losses.g_adv,
                d_loss: losses.d_loss,
                gp: losses.gp,
                seconds: offset + clock.elapsed().as_secs_f64(),
            });
            if cfg.checkpoint_every > 0 && trainer.step % cfg.checkpoint_every == 0 {
                let (e, nb) = if b + 1 == batches { (epoch + 1, 0) } else { (epoch, b + 1) };
                trainer.checkpoint(e, nb, cfg).save(&cfg.out.join(format!("step-{:08}.ckpt", trainer.step)))?;
                log.save(&log_path)?;
            }
        }
        start_batch = 0;
        epoch += 1;
        let means = log.epoch_sup_means();
        log::info!(
            "epoch {epoch}/{} step {} sup {:.4} ({:.1}s)",
            cfg.epochs,
            trainer.step,
            means.last().map_or(f64::NAN, |m| m.1),
            clock.elapsed().as_secs_f64()
        );
        if cfg.validate && !val.is_empty() {
            let v = trainer.evaluate_supervised(val, cfg.batch_size);
            val_rows.push(ValRow { epoch: epoch - 1, step: trainer.step, val_sup: v });
            write_csv(&val_path, &val_rows)?;
        }
    }

    log.save(&log_path)?;
    let final_path = cfg.out.join(FINAL_CHECKPOINT);
    trainer.checkpoint(epoch, start_batch, cfg).save(&final_path)?;
    Ok(TrainOutcome { checkpoint: final_path, log, bundle: trainer.bundle })
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &FsPath) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    rdr.deserialize().collect::<std::result::Result<Vec<T>, _>>().map_err(|e| Error::csv(path, e))
}

/// Loads a checkpoint and runs inference on each input raster.
pub fn infer(checkpoint: &FsPath, inputs: &[&ClassRaster]) -> Result<Vec<ClassLogits>> {
    Checkpoint::load(checkpoint)?.bundle.infer(inputs)
}

/// Outcome of the discriminator-collapse check on a training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub passed: bool,
    /// Number of leading steps examined (20% of the run).
    pub early_steps: usize,
    pub window: usize,
    /// Smallest `max - min` of the critic loss over any window in the early
    /// part, relative to `1 + |mean|`.
    pub min_relative_range: f64,
    /// Step at which the critic loss flattened while the generator was
    /// still improving, if any.
    pub collapsed_at: Option<u64>,
}

/// Flags a critic loss that goes flat within the first 20% of steps while the
/// generator loss is still well above its final level.
pub fn stability_check(log: &TrainLog) -> StabilityReport {
    const FLAT: f64 = 1e-3;
    let rows = &log.rows;
    let early = rows.len().div_ceil(5);
    let window = (rows.len() / 20).max(5);
    let tail = &rows[rows.len() - rows.len().div_ceil(10).max(1).min(rows.len())..];
    let g_final = tail.iter().map(|r| r.g_total as f64).sum::<f64>() / tail.len().max(1) as f64;
    let mut min_rel = f64::INFINITY;
    let mut collapsed_at = None;
    if early >= window {
        for s in 0..=early - window {
            let win = &rows[s..s + window];
            let (lo, hi, sum) = win.iter().fold((f64::INFINITY, f64::NEG_INFINITY, 0.0), |(lo, hi, sum), r| {
                let v = r.d_loss as f64;
                (lo.min(v), hi.max(v), sum + v)
            });
            let rel = (hi - lo) / (1.0 + (sum / window as f64).abs());
            min_rel = min_rel.min(rel);
            let g_win = win.iter().map(|r| r.g_total as f64).sum::<f64>() / window as f64;
            let still_improving = g_win > g_final + 1e-3 * (1.0 + g_final.abs());
            if rel < FLAT && still_improving && collapsed_at.is_none() {
                collapsed_at = Some(win[0].step);
            }
        }
    }
    StabilityReport {
        passed: collapsed_at.is_none() && early >= window,
        early_steps: early,
        window,
        min_relative_range: min_rel,
        collapsed_at,
    }
}

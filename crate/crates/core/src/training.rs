//! Plain autoencoder training and adversarial fine-tuning, with selection of
//! the epoch that has the lowest validation reconstruction error.

use crate::models::{build_spec, init_weights, save_weights, ArchId, GradAt, ModelWeights};
use crate::numerics::{
    bce_loss, mse_grad, mse_loss, BnMode, Dims4, OptimizerKind, OptimizerState, Tensor4,
};
use crate::seed::{derive_seed, text_hash};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

/// Consecutive epochs of near-zero discriminator loss before warning.
const COLLAPSE_EPOCHS: usize = 10;
const COLLAPSE_BCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Plain,
    Gan,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Plain => "plain",
            Stage::Gan => "gan",
        }
    }

    /// Column label used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            Stage::Plain => "Without GAN",
            Stage::Gan => "With GAN",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Stage::Plain),
            "gan" => Ok(Stage::Gan),
            other => Err(Error::InvalidArgument(format!(
                "unknown strategy {other:?}"
            ))),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub arch: ArchId,
    pub epochs: usize,
    pub batch_size: usize,
    pub gen_lr: f64,
    pub disc_lr: f64,
    pub gen_optimizer: OptimizerKind,
    pub disc_optimizer: OptimizerKind,
    /// Weight of the MSE term in the generator objective; the adversarial
    /// term gets `1 - reconstruction_weight`.
    pub reconstruction_weight: f64,
    pub seed: u64,
    /// Every epoch's weights are written here when set.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: ArchId::A4,
            epochs: 100,
            batch_size: 128,
            gen_lr: 0.001,
            disc_lr: 0.001,
            gen_optimizer: OptimizerKind::adam(),
            disc_optimizer: OptimizerKind::Sgd,
            reconstruction_weight: 0.999,
            seed: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !self.arch.is_autoencoder() {
            return bad("training arch must be an autoencoder");
        }
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2 for batch norm");
        }
        if !(self.gen_lr > 0.0 && self.disc_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(0.0..=1.0).contains(&self.reconstruction_weight) {
            return bad("reconstruction_weight must lie in [0, 1]");
        }
        Ok(())
    }

    /// Short fingerprint of every setting except the checkpoint location.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.checkpoint_dir = None;
        text_hash(&format!("{c:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    /// Mean discriminator BCE over the epoch's batches (GAN only).
    pub disc_bce: Option<f64>,
    /// Mean non-saturating generator loss, `-ln D(G(x))` (GAN only).
    pub gen_adv: Option<f64>,
    /// Discriminator accuracy on validation patches against their
    /// reconstructions, eval mode (GAN only).
    pub disc_accuracy: Option<f64>,
}

/// Which optimizer updated a network, at what rate, and how often.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerRecord {
    pub role: &'static str,
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub stage: Stage,
    /// Validation MSE of the starting weights.
    pub initial_val_mse: f64,
    pub records: Vec<EpochRecord>,
    /// 1-based epoch with the lowest validation MSE.
    pub best_epoch: usize,
    pub collapse_warning: bool,
    pub optimizers: Vec<OptimizerRecord>,
}

impl TrainHistory {
    pub fn best(&self) -> &EpochRecord {
        &self.records[self.best_epoch - 1]
    }

    pub fn val_mses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.val_mse).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub weights: ModelWeights<f32>,
    pub epoch: usize,
    pub val_mse: f64,
    pub stage: Stage,
}

/// 1-based index of the smallest value; the earliest wins ties.
pub fn best_epoch(val_mse: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in val_mse.iter().enumerate() {
        if best.map_or(true, |(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i + 1)
}

/// Checkpoint with the lowest validation MSE, earliest epoch on ties.
pub fn select_best(checkpoints: &[Checkpoint]) -> Result<&Checkpoint> {
    let mut sorted: Vec<&Checkpoint> = checkpoints.iter().collect();
    sorted.sort_by_key(|c| c.epoch);
    let mses: Vec<f64> = sorted.iter().map(|c| c.val_mse).collect();
    best_epoch(&mses)
        .map(|i| sorted[i - 1])
        .ok_or(Error::Empty("checkpoints"))
}

/// Mean squared reconstruction error over `patches`, eval-mode batch norm.
pub fn validation_mse(weights: &ModelWeights<f32>, patches: &Tensor4<f32>) -> Result<f64> {
    let recon = weights.reconstruct(patches)?;
    mse_loss(&recon, patches)
}

fn check_patches(name: &'static str, p: &Tensor4<f32>) -> Result<()> {
    let d = p.dims();
    if d.n == 0 {
        return Err(Error::Empty(name));
    }
    if (d.h, d.w, d.c) != (64, 64, 3) {
        return Err(Error::shape(name, "Nx64x64x3", d));
    }
    Ok(())
}

/// Shuffled batches for one epoch. A trailing batch of one sample is
/// dropped since train-mode batch norm needs two.
fn epoch_batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

fn finite(what: &str, epoch: usize, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{what} at epoch {epoch}")))
    }
}

fn write_checkpoint(dir: &Path, cp: &Checkpoint, config: &TrainConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = format!("{}_epoch{:03}", cp.stage, cp.epoch);
    save_weights(&cp.weights, &dir.join(format!("{stem}.weights")))?;
    let meta = format!(
        "epoch={}\nval_mse={:e}\nstage={}\nseed={}\nconfig_hash={}\n",
        cp.epoch,
        cp.val_mse,
        cp.stage,
        config.seed,
        config.hash()
    );
    let path = dir.join(format!("{stem}.meta"));
    fs::write(&path, meta).map_err(|e| Error::io(&path, e))
}

/// Bookkeeping shared by both stages: best-so-far tracking and checkpoints.
struct Selector<'a> {
    config: &'a TrainConfig,
    stage: Stage,
    best: Option<Checkpoint>,
}

impl Selector<'_> {
    fn observe(&mut self, weights: &ModelWeights<f32>, epoch: usize, val_mse: f64) -> Result<()> {
        let mut snapshot = weights.clone();
        snapshot.meta.stage = self.stage.as_str().to_string();
        let cp = Checkpoint {
            weights: snapshot,
            epoch,
            val_mse,
            stage: self.stage,
        };
        if let Some(dir) = &self.config.checkpoint_dir {
            write_checkpoint(dir, &cp, self.config)?;
        }
        if self.best.as_ref().map_or(true, |b| val_mse < b.val_mse) {
            self.best = Some(cp);
        }
        Ok(())
    }
}

/// Train a freshly initialized autoencoder on MSE.
pub fn train_autoencoder(
    train: &Tensor4<f32>,
    val: &Tensor4<f32>,
    config: &TrainConfig,
) -> Result<(ModelWeights<f32>, TrainHistory)> {
    config.validate()?;
    let mut w = init_weights::<f32>(
        &build_spec(config.arch),
        derive_seed(config.seed, "training", "init"),
    );
    w.meta.seed = config.seed;
    continue_autoencoder(w, train, val, config)
}

/// MSE training starting from `weights`.
pub fn continue_autoencoder(
    mut w: ModelWeights<f32>,
    train: &Tensor4<f32>,
    val: &Tensor4<f32>,
    config: &TrainConfig,
) -> Result<(ModelWeights<f32>, TrainHistory)> {
    config.validate()?;
    check_patches("train patches", train)?;
    check_patches("val patches", val)?;
    let mut opt = OptimizerState::<f32>::new(config.gen_optimizer, config.gen_lr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "training", "shuffle"));
    let initial_val_mse = finite("initial validation MSE", 0, validation_mse(&w, val)?)?;
    let mut sel = Selector {
        config,
        stage: Stage::Plain,
        best: None,
    };
    let mut records = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let (mut sum, mut count) = (0.0, 0usize);
        for batch in epoch_batches(train.dims().n, config.batch_size, &mut rng) {
            let x = train.gather(&batch);
            let (y, trace) = w.forward(&x, BnMode::Train)?;
            let loss = finite("training MSE", epoch, mse_loss(&y, &x)?)?;
            let (_, grads) = w.backward(&trace, &mse_grad(&y, &x, 1.0)?, GradAt::Output)?;
            w.commit_batch_stats(&trace);
            opt.step(&mut w.trainable_mut(), &grads.slices())?;
            sum += loss * batch.len() as f64;
            count += batch.len();
        }
        let val_mse = finite("validation MSE", epoch, validation_mse(&w, val)?)?;
        let train_mse = sum / count.max(1) as f64;
        log::info!("stage=plain epoch={epoch} train_mse={train_mse:.6e} val_mse={val_mse:.6e}");
        records.push(EpochRecord {
            epoch,
            train_mse,
            val_mse,
            disc_bce: None,
            gen_adv: None,
            disc_accuracy: None,
        });
        sel.observe(&w, epoch, val_mse)?;
    }
    let best = sel.best.expect("at least one epoch");
    let history = TrainHistory {
        stage: Stage::Plain,
        initial_val_mse,
        best_epoch: best.epoch,
        records,
        collapse_warning: false,
        optimizers: vec![OptimizerRecord {
            role: "generator",
            kind: config.gen_optimizer,
            learning_rate: config.gen_lr,
            steps: opt.steps(),
        }],
    };
    Ok((best.weights, history))
}

fn column(values: &[f64]) -> Result<Tensor4<f32>> {
    Tensor4::from_vec(
        Dims4::new(values.len(), 1, 1, 1),
        values.iter().map(|&v| v as f32).collect(),
    )
}

/// Fraction of real patches scored above 0.5 and reconstructions at or
/// below it, discriminator in eval mode.
pub fn discriminator_accuracy(
    disc: &ModelWeights<f32>,
    generator: &ModelWeights<f32>,
    patches: &Tensor4<f32>,
) -> Result<f64> {
    let real = disc.discriminate(patches)?;
    let fake = disc.discriminate(&generator.reconstruct(patches)?)?;
    let hits =
        real.iter().filter(|&&p| p > 0.5).count() + fake.iter().filter(|&&p| p <= 0.5).count();
    Ok(hits as f64 / (real.len() + fake.len()) as f64)
}

/// Adversarial fine-tuning of `pretrained` against a fresh discriminator.
/// Returns the generator from the epoch with the lowest validation MSE.
pub fn train_gan(
    pretrained: &ModelWeights<f32>,
    train: &Tensor4<f32>,
    val: &Tensor4<f32>,
    config: &TrainConfig,
) -> Result<(ModelWeights<f32>, TrainHistory)> {
    config.validate()?;
    check_patches("train patches", train)?;
    check_patches("val patches", val)?;
    let mut g = pretrained.clone();
    let mut d = init_weights::<f32>(
        &build_spec(ArchId::D),
        derive_seed(config.seed, "training", "discriminator"),
    );
    let mut gopt = OptimizerState::<f32>::new(config.gen_optimizer, config.gen_lr)?;
    let mut dopt = OptimizerState::<f32>::new(config.disc_optimizer, config.disc_lr)?;
    let lambda = config.reconstruction_weight;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "training", "shuffle"));
    let initial_val_mse = finite("initial validation MSE", 0, validation_mse(&g, val)?)?;
    let mut sel = Selector {
        config,
        stage: Stage::Gan,
        best: None,
    };
    let mut records = Vec::with_capacity(config.epochs);
    let (mut low_bce_run, mut collapse_warning) = (0usize, false);
    for epoch in 1..=config.epochs {
        let (mut mse_sum, mut bce_sum, mut adv_sum, mut count, mut batches) =
            (0.0, 0.0, 0.0, 0usize, 0usize);
        for batch in epoch_batches(train.dims().n, config.batch_size, &mut rng) {
            let n = batch.len();
            let x = train.gather(&batch);
            let (fake, gtrace) = g.forward(&x, BnMode::Train)?;

            // Discriminator: real patches labeled 1, reconstructions 0.
            let both = Tensor4::concat(&[&x, &fake])?;
            let labels: Vec<f64> = (0..2 * n).map(|i| if i < n { 1.0 } else { 0.0 }).collect();
            let (p, dtrace) = d.forward(&both, BnMode::Train)?;
            let p: Vec<f64> = p.data().iter().map(|&v| f64::from(v)).collect();
            let bce = finite("discriminator BCE", epoch, bce_loss(&p, &labels)?)?;
            let dlogit: Vec<f64> = p
                .iter()
                .zip(&labels)
                .map(|(p, y)| (p - y) / (2 * n) as f64)
                .collect();
            let (_, dgrads) = d.backward(&dtrace, &column(&dlogit)?, GradAt::Logits)?;
            d.commit_batch_stats(&dtrace);
            dopt.step(&mut d.trainable_mut(), &dgrads.slices())?;

            // Generator: lambda * MSE + (1 - lambda) * -ln D(G(x)). The
            // discriminator's own gradients from this pass are discarded.
            let (pf, ftrace) = d.forward(&fake, BnMode::Train)?;
            let pf: Vec<f64> = pf.data().iter().map(|&v| f64::from(v)).collect();
            let adv = finite(
                "generator adversarial loss",
                epoch,
                bce_loss(&pf, &vec![1.0; n])?,
            )?;
            let flogit: Vec<f64> = pf.iter().map(|p| (p - 1.0) / n as f64).collect();
            let (gadv, _) = d.backward(&ftrace, &column(&flogit)?, GradAt::Logits)?;
            let mse = finite("training MSE", epoch, mse_loss(&fake, &x)?)?;
            let mut upstream = mse_grad(&fake, &x, lambda)?;
            let adv_weight = (1.0 - lambda) as f32;
            for (u, a) in upstream.data_mut().iter_mut().zip(gadv.data()) {
                *u += adv_weight * a;
            }
            let (_, ggrads) = g.backward(&gtrace, &upstream, GradAt::Output)?;
            g.commit_batch_stats(&gtrace);
            gopt.step(&mut g.trainable_mut(), &ggrads.slices())?;

            mse_sum += mse * n as f64;
            count += n;
            bce_sum += bce;
            adv_sum += adv;
            batches += 1;
        }
        let val_mse = finite("validation MSE", epoch, validation_mse(&g, val)?)?;
        let accuracy = discriminator_accuracy(&d, &g, val)?;
        let disc_bce = bce_sum / batches.max(1) as f64;
        let gen_adv = adv_sum / batches.max(1) as f64;
        let train_mse = mse_sum / count.max(1) as f64;
        log::info!(
            "stage=gan epoch={epoch} train_mse={train_mse:.6e} val_mse={val_mse:.6e} disc_bce={disc_bce:.6e} gen_adv={gen_adv:.6e} disc_acc={accuracy:.4}"
        );
        low_bce_run = if disc_bce < COLLAPSE_BCE {
            low_bce_run + 1
        } else {
            0
        };
        if low_bce_run == COLLAPSE_EPOCHS {
            collapse_warning = true;
            log::warn!("stage=gan epoch={epoch} event=discriminator_collapse consecutive_epochs={COLLAPSE_EPOCHS}");
        }
        records.push(EpochRecord {
            epoch,
            train_mse,
            val_mse,
            disc_bce: Some(disc_bce),
            gen_adv: Some(gen_adv),
            disc_accuracy: Some(accuracy),
        });
        sel.observe(&g, epoch, val_mse)?;
    }
    let best = sel.best.expect("at least one epoch");
    let history = TrainHistory {
        stage: Stage::Gan,
        initial_val_mse,
        best_epoch: best.epoch,
        records,
        collapse_warning,
        optimizers: vec![
            OptimizerRecord {
                role: "generator",
                kind: config.gen_optimizer,
                learning_rate: config.gen_lr,
                steps: gopt.steps(),
            },
            OptimizerRecord {
                role: "discriminator",
                kind: config.disc_optimizer,
                learning_rate: config.disc_lr,
                steps: dopt.steps(),
            },
        ],
    };
    Ok((best.weights, history))
}

//! Alternating GAN training over the two generators and the patch
//! discriminator.
//!
//! One step, in pinned order:
//!
//! 1. restoration forward (training mode, one tape reused by both of the
//!    following phases), then its batch-norm updates;
//! 2. discriminator step: score the real pair and the detached fake pair,
//!    descend the discriminator loss, then fold its batch-norm updates in,
//!    real batch before fake batch;
//! 3. generator step: degradation forward (batch-norm updates applied
//!    unless the physics weight is zero), a fresh discriminator forward on
//!    the fake pair — through the *updated* discriminator, whose statistics
//!    this extra pass must not touch — and one joint backward through
//!    `adv_g + λ1·l1 + λ2·l2` into both generators.
//!
//! With the physics weight at zero the degradation generator still runs
//! forward (its reconstruction error is worth reporting) but nothing about
//! it changes: no statistics fold-in, no backward, no optimizer step.

use std::path::{Path, PathBuf};

use ndarray::{Array4, ArrayView4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::nn::generator::{join_g2_grad, split_g2_output};
use crate::nn::ops::split_channels;
use crate::nn::{
    DiscriminatorConfig, GenTape, GeneratorConfig, Mode, ParamStore, PatchDiscriminator, Scalar,
    UNetGenerator,
};
use crate::train::adam::{AdamParams, AdamState};
use crate::train::losses::{
    adversarial_d_loss, bce_with_logits_grad, bce_with_logits_mean, l1_grad, l1_mean, recompose,
    recompose_l1_grads,
};

/// Fold distinct u64 parts into one seed (splitmix64 over the sequence).
/// Every stochastic site keys its stream from `(seed, epoch, step, purpose)`
/// so runs replay exactly and no two sites share a stream.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        let mut z = h ^ p.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// The visiting order of one training epoch: a ChaCha8 shuffle keyed by
/// `shuffle_seed + epoch`, shared by the trainer and external batch
/// iterators so both walk the samples identically.
pub fn epoch_order(n: usize, shuffle_seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed.wrapping_add(epoch as u64));
    order.shuffle(&mut rng);
    order
}

const PURPOSE_G1_INIT: u64 = 11;
const PURPOSE_G2_INIT: u64 = 12;
const PURPOSE_D_INIT: u64 = 13;
const PURPOSE_G1_NOISE: u64 = 1;
const PURPOSE_G2_NOISE: u64 = 2;

/// Network shape knobs shared by both generators and the discriminator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub depth: usize,
    pub base_width: usize,
    pub disc_base_width: usize,
    pub dru_blocks_per_skip: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            depth: 8,
            base_width: 64,
            disc_base_width: 64,
            dru_blocks_per_skip: 1,
        }
    }
}

impl ArchConfig {
    pub fn build_models(&self) -> Result<(UNetGenerator, UNetGenerator, PatchDiscriminator)> {
        let g1 = UNetGenerator::build(GeneratorConfig::g1(
            self.base_width,
            self.depth,
            self.dru_blocks_per_skip,
        ))?;
        let g2 = UNetGenerator::build(GeneratorConfig::g2(
            self.base_width,
            self.depth,
            self.dru_blocks_per_skip,
        ))?;
        let disc = PatchDiscriminator::build(DiscriminatorConfig::new(self.disc_base_width))?;
        Ok((g1, g2, disc))
    }
}

/// Optimization schedule and loss weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the restoration pixel loss.
    pub lambda1: f64,
    /// Weight of the physics-recomposition loss.
    pub lambda2: f64,
    pub adam: AdamParams,
    /// Master seed: parameter init and dropout noise derive from it.
    pub seed: u64,
    /// Per-epoch sample order derives from `shuffle_seed + epoch`.
    pub shuffle_seed: u64,
    /// Save a checkpoint every this many epochs (0 = only at the end).
    pub checkpoint_every: usize,
    /// Treat the restored image as a constant inside the physics loss, so
    /// only the degradation generator learns from it.
    pub detach_g1_in_l2: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 850,
            batch_size: 5,
            lambda1: 100.0,
            lambda2: 0.5,
            adam: AdamParams::default(),
            seed: 17,
            shuffle_seed: 17,
            checkpoint_every: 0,
            detach_g1_in_l2: false,
        }
    }
}

/// One training batch in NCHW: the observed underwater image, its clean
/// reference, and the stacked `[transmission | veiling]` supervision.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub x1: Array4<f32>,
    pub y1: Array4<f32>,
    pub x2: Array4<f32>,
}

impl TrainBatch {
    pub fn validate(&self) -> Result<()> {
        let (n, c1, h, w) = self.x1.dim();
        if self.y1.dim() != (n, 3, h, w) || c1 != 3 {
            return Err(Error::invalid("batch x1/y1 must be (N,3,H,W) and agree"));
        }
        if self.x2.dim() != (n, 6, h, w) {
            return Err(Error::invalid(
                "batch x2 must stack transmission and veiling as (N,6,H,W)",
            ));
        }
        Ok(())
    }
}

/// Deterministic provider of training samples by index. `epoch` lets a
/// source draw per-epoch augmentations (the same (epoch, index) pair must
/// always yield the same tensors).
pub trait BatchSource {
    fn num_samples(&self) -> usize;
    fn batch(&self, epoch: usize, indices: &[usize]) -> Result<TrainBatch>;
}

/// Per-step loss components (also per-epoch means). `total_g` is exactly
/// `adv_g + lambda1*l1_g1 + lambda2*l2_g2` summed in f64.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub adv_d: f64,
    pub adv_g: f64,
    pub l1_g1: f64,
    pub l2_g2: f64,
    pub total_g: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.adv_d.is_finite()
            && self.adv_g.is_finite()
            && self.l1_g1.is_finite()
            && self.l2_g2.is_finite()
            && self.total_g.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based epoch label.
    pub epoch: usize,
    pub losses: LossBreakdown,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub rows: Vec<EpochStats>,
}

impl EpochStats {
    /// One CSV line, matching [`TrainHistory::CSV_HEADER`].
    pub fn csv_row(&self) -> String {
        let l = &self.losses;
        format!(
            "{},{:.9},{:.9},{:.9},{:.9},{:.9}\n",
            self.epoch, l.adv_d, l.adv_g, l.l1_g1, l.l2_g2, l.total_g
        )
    }
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str = "epoch,adv_d,adv_g,l1_g1,l2_g2,total_g\n";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        for r in &self.rows {
            out.push_str(&r.csv_row());
        }
        out
    }
}

pub(crate) struct GEvalOut<F: Scalar> {
    pub adv_g: f64,
    pub l1: f64,
    pub l2: f64,
    pub g2_tape: GenTape<F>,
}

/// The generator-step objective, shared verbatim by the trainer and the
/// gradient checker: degradation forward, discriminator scoring of the fake
/// pair, and the three generator loss terms. With `grads` present, also one
/// joint backward (the degradation generator only sees gradient when the
/// physics weight is nonzero).
#[allow(clippy::too_many_arguments)]
pub(crate) fn eval_g_path<F: Scalar>(
    g1: &UNetGenerator,
    g2: &UNetGenerator,
    disc: &PatchDiscriminator,
    g1_store: &ParamStore<F>,
    g2_store: &ParamStore<F>,
    d_store: &ParamStore<F>,
    x1: ArrayView4<F>,
    y1: ArrayView4<F>,
    x2: ArrayView4<F>,
    g1_out: &Array4<F>,
    g1_tape: &GenTape<F>,
    g2_seed: u64,
    lambda1: f64,
    lambda2: f64,
    detach_g1_in_l2: bool,
    grads: Option<(&mut ParamStore<F>, &mut ParamStore<F>)>,
) -> Result<GEvalOut<F>> {
    let (g2_out, g2_tape) = g2.forward(g2_store, x2, Mode::Train, g2_seed)?;
    let (g2_t, g2_a) = split_g2_output(&g2_out);
    let (fake_logits, d_tape) = disc.forward(d_store, x1, g1_out.view(), Mode::Train)?;

    let adv_g = bce_with_logits_mean(fake_logits.view(), 1.0);
    let l1 = l1_mean(g1_out.view(), y1);
    let recomposed = recompose(g1_out, &g2_t, &g2_a);
    let l2 = l1_mean(recomposed.view(), x1);

    if let Some((g1_grads, g2_grads)) = grads {
        let d_fake_logits = bce_with_logits_grad(fake_logits.view(), 1.0, 1.0);
        let mut d_scratch = ParamStore::zeros(disc.schema());
        let d_input = disc.backward(d_store, &d_tape, d_fake_logits.view(), &mut d_scratch);
        let (_, d_g1_adv) = split_channels(d_input.view(), x1.dim().1);

        let mut d_g1_total = d_g1_adv + l1_grad(g1_out.view(), y1, lambda1);
        if lambda2 != 0.0 {
            let (d_restored, d_t, d_a) =
                recompose_l1_grads(g1_out, &g2_t, &recomposed, x1, lambda2);
            if !detach_g1_in_l2 {
                d_g1_total += &d_restored;
            }
            let d_g2_head = join_g2_grad(d_t.view(), d_a.view());
            g2.backward(g2_store, &g2_tape, d_g2_head.view(), g2_grads);
        }
        g1.backward(g1_store, g1_tape, d_g1_total.view(), g1_grads);
    }

    Ok(GEvalOut {
        adv_g,
        l1,
        l2,
        g2_tape,
    })
}

/// Owns the three networks, their parameters, and the optimizer state.
pub struct Trainer {
    pub(crate) arch: ArchConfig,
    pub(crate) opts: TrainOptions,
    pub(crate) g1: UNetGenerator,
    pub(crate) g2: UNetGenerator,
    pub(crate) disc: PatchDiscriminator,
    pub(crate) g1_store: ParamStore<f32>,
    pub(crate) g2_store: ParamStore<f32>,
    pub(crate) d_store: ParamStore<f32>,
    pub(crate) opt_g1: AdamState<f32>,
    pub(crate) opt_g2: AdamState<f32>,
    pub(crate) opt_d: AdamState<f32>,
    /// Completed epochs (also the next epoch index to run).
    pub(crate) epoch: usize,
    pub(crate) last_checkpoint: Option<PathBuf>,
}

impl Trainer {
    pub fn new(arch: ArchConfig, opts: TrainOptions) -> Result<Self> {
        let (g1, g2, disc) = arch.build_models()?;
        let g1_store = ParamStore::init(g1.schema(), derive_seed(&[opts.seed, PURPOSE_G1_INIT]));
        let g2_store = ParamStore::init(g2.schema(), derive_seed(&[opts.seed, PURPOSE_G2_INIT]));
        let d_store = ParamStore::init(disc.schema(), derive_seed(&[opts.seed, PURPOSE_D_INIT]));
        let opt_g1 = AdamState::new(g1.schema());
        let opt_g2 = AdamState::new(g2.schema());
        let opt_d = AdamState::new(disc.schema());
        Ok(Self {
            arch,
            opts,
            g1,
            g2,
            disc,
            g1_store,
            g2_store,
            d_store,
            opt_g1,
            opt_g2,
            opt_d,
            epoch: 0,
            last_checkpoint: None,
        })
    }

    pub fn options(&self) -> &TrainOptions {
        &self.opts
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn completed_epochs(&self) -> usize {
        self.epoch
    }

    /// Snapshot of the restoration generator (for inspection/bindings).
    pub fn g1_parameter_count(&self) -> usize {
        self.g1.parameter_count()
    }

    pub fn g2_parameter_count(&self) -> usize {
        self.g2.parameter_count()
    }

    pub fn disc_parameter_count(&self) -> usize {
        self.disc.parameter_count()
    }

    /// Bit-exact flat copy of the degradation generator's trainable
    /// parameters, in schema order. Buffers (batch-norm running statistics)
    /// are excluded: they track activations, not gradients, so they are not
    /// part of an update-isolation check.
    pub fn g2_parameters(&self) -> Vec<f32> {
        self.g2
            .schema()
            .iter()
            .filter(|(_, spec)| spec.trainable)
            .flat_map(|(id, _)| self.g2_store.get(id).iter().copied())
            .collect()
    }

    /// One full alternating step on `batch`. `epoch`/`step` only key the
    /// dropout streams (and error reports) — all state lives in `self`.
    pub fn train_step(
        &mut self,
        batch: &TrainBatch,
        epoch: usize,
        step: usize,
    ) -> Result<LossBreakdown> {
        batch.validate()?;
        let g1_seed = derive_seed(&[
            self.opts.seed,
            epoch as u64,
            step as u64,
            PURPOSE_G1_NOISE,
        ]);
        let g2_seed = derive_seed(&[
            self.opts.seed,
            epoch as u64,
            step as u64,
            PURPOSE_G2_NOISE,
        ]);

        // Phase 1: restoration forward; its tape serves the discriminator's
        // fake batch and the generator step alike.
        let (g1_out, g1_tape) =
            self.g1
                .forward(&self.g1_store, batch.x1.view(), Mode::Train, g1_seed)?;
        g1_tape.apply_bn_updates(&mut self.g1_store);

        // Phase 2: discriminator step on (real, fake-detached).
        let (real_logits, real_tape) = self.disc.forward(
            &self.d_store,
            batch.x1.view(),
            batch.y1.view(),
            Mode::Train,
        )?;
        let (fake_logits, fake_tape) =
            self.disc
                .forward(&self.d_store, batch.x1.view(), g1_out.view(), Mode::Train)?;
        let adv_d = adversarial_d_loss(real_logits.view(), fake_logits.view());
        let mut d_grads = ParamStore::zeros(self.disc.schema());
        let d_real = bce_with_logits_grad(real_logits.view(), 1.0, 0.5);
        let d_fake = bce_with_logits_grad(fake_logits.view(), 0.0, 0.5);
        self.disc
            .backward(&self.d_store, &real_tape, d_real.view(), &mut d_grads);
        self.disc
            .backward(&self.d_store, &fake_tape, d_fake.view(), &mut d_grads);
        self.opt_d
            .step(self.disc.schema(), &mut self.d_store, &d_grads, &self.opts.adam);
        real_tape.apply_bn_updates(&mut self.d_store);
        fake_tape.apply_bn_updates(&mut self.d_store);

        // Phase 3: generator step against the just-updated discriminator.
        let mut g1_grads = ParamStore::zeros(self.g1.schema());
        let mut g2_grads = ParamStore::zeros(self.g2.schema());
        let out = eval_g_path(
            &self.g1,
            &self.g2,
            &self.disc,
            &self.g1_store,
            &self.g2_store,
            &self.d_store,
            batch.x1.view(),
            batch.y1.view(),
            batch.x2.view(),
            &g1_out,
            &g1_tape,
            g2_seed,
            self.opts.lambda1,
            self.opts.lambda2,
            self.opts.detach_g1_in_l2,
            Some((&mut g1_grads, &mut g2_grads)),
        )?;
        if self.opts.lambda2 != 0.0 {
            out.g2_tape.apply_bn_updates(&mut self.g2_store);
        }
        self.opt_g1
            .step(self.g1.schema(), &mut self.g1_store, &g1_grads, &self.opts.adam);
        if self.opts.lambda2 != 0.0 {
            self.opt_g2
                .step(self.g2.schema(), &mut self.g2_store, &g2_grads, &self.opts.adam);
        }

        let total_g = out.adv_g + self.opts.lambda1 * out.l1 + self.opts.lambda2 * out.l2;
        let losses = LossBreakdown {
            adv_d,
            adv_g: out.adv_g,
            l1_g1: out.l1,
            l2_g2: out.l2,
            total_g,
        };
        if !losses.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                step,
                last_checkpoint: self
                    .last_checkpoint
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_else(|| "none".to_string()),
            });
        }
        Ok(losses)
    }

    /// Run the remaining epochs, reshuffling samples every epoch from
    /// `shuffle_seed + epoch` and keeping a short final batch. Returns
    /// per-epoch mean losses for the epochs run by this call.
    pub fn train(
        &mut self,
        source: &dyn BatchSource,
        checkpoint_dir: Option<&Path>,
    ) -> Result<TrainHistory> {
        self.train_observed(source, checkpoint_dir, &mut |_| {})
    }

    /// [`Self::train`], additionally handing each finished epoch's mean
    /// losses to `observe` as soon as they exist (progress logging).
    pub fn train_observed(
        &mut self,
        source: &dyn BatchSource,
        checkpoint_dir: Option<&Path>,
        observe: &mut dyn FnMut(&EpochStats),
    ) -> Result<TrainHistory> {
        let n = source.num_samples();
        if n == 0 {
            return Err(Error::invalid("training requires at least one sample"));
        }
        if self.opts.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        let mut history = TrainHistory::default();
        for epoch in self.epoch..self.opts.epochs {
            let order = epoch_order(n, self.opts.shuffle_seed, epoch);
            let mut sums = LossBreakdown {
                adv_d: 0.0,
                adv_g: 0.0,
                l1_g1: 0.0,
                l2_g2: 0.0,
                total_g: 0.0,
            };
            let mut steps = 0usize;
            for (step, chunk) in order.chunks(self.opts.batch_size).enumerate() {
                let batch = source.batch(epoch, chunk)?;
                let l = self.train_step(&batch, epoch, step)?;
                sums.adv_d += l.adv_d;
                sums.adv_g += l.adv_g;
                sums.l1_g1 += l.l1_g1;
                sums.l2_g2 += l.l2_g2;
                sums.total_g += l.total_g;
                steps += 1;
            }
            let k = steps as f64;
            self.epoch = epoch + 1;
            let stats = EpochStats {
                epoch: epoch + 1,
                losses: LossBreakdown {
                    adv_d: sums.adv_d / k,
                    adv_g: sums.adv_g / k,
                    l1_g1: sums.l1_g1 / k,
                    l2_g2: sums.l2_g2 / k,
                    total_g: sums.total_g / k,
                },
            };
            observe(&stats);
            history.rows.push(stats);
            if let Some(dir) = checkpoint_dir {
                let every = self.opts.checkpoint_every;
                if every > 0 && (epoch + 1) % every == 0 && epoch + 1 < self.opts.epochs {
                    let path = dir.join(format!("checkpoint_epoch_{:04}.ckpt", epoch + 1));
                    self.save_checkpoint(&path)?;
                }
            }
        }
        if let Some(dir) = checkpoint_dir {
            let path = dir.join("checkpoint_final.ckpt");
            self.save_checkpoint(&path)?;
        }
        Ok(history)
    }

    /// Restore one image with the trained generator (eval-mode statistics;
    /// the dropout noise stays on and is keyed by `noise_seed`). Input dims
    /// must be divisible by `2^depth` — callers pad beforehand.
    pub fn restore(&self, image: &ImageTensor, noise_seed: u64) -> Result<ImageTensor> {
        let x = crate::train::image_to_nchw::<f32>(image);
        let (y, _) = self
            .g1
            .forward(&self.g1_store, x.view(), Mode::Eval, noise_seed)?;
        crate::train::nchw_to_image(y.view())
    }

    /// Degrade `[transmission | veiling]` supervision through the trained
    /// degradation generator, returning its transmission and veiling
    /// estimates.
    pub fn degrade(
        &self,
        x2: &Array4<f32>,
        noise_seed: u64,
    ) -> Result<(Array4<f32>, Array4<f32>)> {
        let (y, _) = self
            .g2
            .forward(&self.g2_store, x2.view(), Mode::Eval, noise_seed)?;
        Ok(split_g2_output(&y))
    }
}

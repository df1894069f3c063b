//! Patch discriminator scoring (input, candidate) pairs.
//!
//! Five 4x4 convolutions at strides 2,2,2,1,1 with channels
//! `dw, 2dw, 4dw, 8dw, 1`; every block but the first inserts batch norm
//! between the convolution and its LeakyReLU(0.2), and the last block emits
//! raw per-patch logits with no activation. The two stride-1 tail blocks
//! shave 1 pixel each, so 256x256 inputs score a 30x30 logit grid and the
//! 64x64 toy images a 6x6 grid — each logit judging one receptive-field
//! patch rather than the whole image.
//!
//! The discriminator always sees the conditioning image and the candidate
//! stacked as 6 channels; its input gradient therefore carries a candidate
//! half (channels 3-5) that the generator step feeds from.

use ndarray::{Array4, ArrayView4};

use crate::error::{Error, Result};
use crate::nn::generator::{w1, w4, BnUpdate};
use crate::nn::ops::{
    bn_backward, bn_forward_eval, bn_forward_train, concat_channels, conv2d_backward,
    conv2d_forward, leaky_relu_backward, leaky_relu_forward, BnCache, Conv2dCache, Scalar,
};
use crate::nn::store::{Init, ParamStore, Schema, VarId};
use crate::nn::Mode;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DiscriminatorConfig {
    /// Stacked conditioning + candidate channels (3 + 3).
    pub in_channels: usize,
    pub base_width: usize,
}

impl DiscriminatorConfig {
    pub fn new(base_width: usize) -> Self {
        Self {
            in_channels: 6,
            base_width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels < 2 {
            return Err(Error::invalid(
                "discriminator input must stack condition and candidate",
            ));
        }
        if self.base_width < 1 {
            return Err(Error::invalid("base_width must be >= 1"));
        }
        Ok(())
    }
}

const STRIDES: [usize; 5] = [2, 2, 2, 1, 1];

struct Block {
    w: VarId,
    b: VarId,
    bn: Option<(VarId, VarId, VarId, VarId)>, // gamma, beta, mean, var
    stride: usize,
    activated: bool,
}

pub struct PatchDiscriminator {
    cfg: DiscriminatorConfig,
    schema: Schema,
    blocks: Vec<Block>,
}

struct BlockCache<F> {
    conv: Conv2dCache<F>,
    bn: Option<BnCache<F>>,
    leaky_y: Option<Array4<F>>,
}

/// Caches of one forward pass; eval tapes lack BN caches and are not
/// differentiable.
pub struct DiscTape<F> {
    blocks: Vec<BlockCache<F>>,
    bn_updates: Vec<BnUpdate<F>>,
}

impl<F: Scalar> DiscTape<F> {
    pub fn apply_bn_updates(&self, store: &mut ParamStore<F>) {
        for u in &self.bn_updates {
            u.apply(store);
        }
    }
}

impl PatchDiscriminator {
    pub fn build(cfg: DiscriminatorConfig) -> Result<Self> {
        cfg.validate()?;
        let dw = cfg.base_width;
        let outs = [dw, 2 * dw, 4 * dw, 8 * dw, 1];
        let mut schema = Schema::new();
        let mut blocks = Vec::with_capacity(5);
        let mut cin = cfg.in_channels;
        for (idx, (&cout, &stride)) in outs.iter().zip(STRIDES.iter()).enumerate() {
            let w = schema.trainable(
                format!("disc{idx}.conv.w"),
                &[cout, cin, 4, 4],
                Init::Gaussian { std: 0.02 },
            );
            let b = schema.trainable(format!("disc{idx}.conv.b"), &[cout], Init::Zeros);
            // No normalization on the first block (raw pixel statistics) or
            // the logit head.
            let bn = (idx != 0 && idx != 4).then(|| {
                (
                    schema.trainable(format!("disc{idx}.bn.gamma"), &[cout], Init::Ones),
                    schema.trainable(format!("disc{idx}.bn.beta"), &[cout], Init::Zeros),
                    schema.buffer(format!("disc{idx}.bn.running_mean"), &[cout], Init::Zeros),
                    schema.buffer(format!("disc{idx}.bn.running_var"), &[cout], Init::Ones),
                )
            });
            blocks.push(Block {
                w,
                b,
                bn,
                stride,
                activated: idx != 4,
            });
            cin = cout;
        }
        Ok(Self {
            cfg,
            schema,
            blocks,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn parameter_count(&self) -> usize {
        self.schema.parameter_count()
    }

    /// Score a (condition, candidate) pair. Returns raw per-patch logits of
    /// shape `(N, 1, Hp, Wp)`.
    pub fn forward<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        condition: ArrayView4<F>,
        candidate: ArrayView4<F>,
        mode: Mode,
    ) -> Result<(Array4<F>, DiscTape<F>)> {
        if condition.dim().1 + candidate.dim().1 != self.cfg.in_channels {
            return Err(Error::invalid(format!(
                "discriminator expects {} stacked channels, got {} + {}",
                self.cfg.in_channels,
                condition.dim().1,
                candidate.dim().1
            )));
        }
        if condition.dim().0 != candidate.dim().0
            || condition.dim().2 != candidate.dim().2
            || condition.dim().3 != candidate.dim().3
        {
            return Err(Error::invalid(
                "condition and candidate must agree in batch and spatial dims",
            ));
        }
        // Three halvings then two k4 s1 convolutions that each shave one
        // pixel: h/8 - 2 >= 1 requires 24.
        let (_, _, h, w) = condition.dim();
        if h < 24 || w < 24 {
            return Err(Error::invalid(format!(
                "patch discriminator needs at least 24x24 inputs, got {h}x{w}"
            )));
        }
        let mut cur = concat_channels(condition, candidate);
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut bn_updates = Vec::new();
        for block in &self.blocks {
            let (mut y, conv_cache) = conv2d_forward(
                cur.view(),
                w4(store, block.w),
                w1(store, block.b),
                block.stride,
                1,
            );
            let mut bn_cache = None;
            if let Some((gamma, beta, mean, var)) = block.bn {
                match mode {
                    Mode::Train => {
                        let (normed, cache) =
                            bn_forward_train(y.view(), w1(store, gamma), w1(store, beta));
                        bn_updates.push(BnUpdate::from_cache(mean, var, &cache));
                        y = normed;
                        bn_cache = Some(cache);
                    }
                    Mode::Eval => {
                        y = bn_forward_eval(
                            y.view(),
                            w1(store, gamma),
                            w1(store, beta),
                            store.get(mean).view().into_dimensionality().unwrap(),
                            store.get(var).view().into_dimensionality().unwrap(),
                        );
                    }
                }
            }
            let leaky_y = if block.activated {
                let act = leaky_relu_forward(&y);
                y = act.clone();
                Some(act)
            } else {
                None
            };
            caches.push(BlockCache {
                conv: conv_cache,
                bn: bn_cache,
                leaky_y,
            });
            cur = y;
        }
        Ok((cur, DiscTape { blocks: caches, bn_updates }))
    }

    /// Backpropagate `d_logits` through a training-mode tape. Parameter
    /// gradients accumulate into `grads`; the return value is the gradient
    /// w.r.t. the stacked 6-channel input (candidate half at channels 3-5).
    pub fn backward<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        tape: &DiscTape<F>,
        d_logits: ArrayView4<F>,
        grads: &mut ParamStore<F>,
    ) -> Array4<F> {
        let mut d_cur = d_logits.to_owned();
        for (block, cache) in self.blocks.iter().zip(&tape.blocks).rev() {
            if let Some(y) = &cache.leaky_y {
                d_cur = leaky_relu_backward(y, d_cur.view());
            }
            if let Some((gamma, beta, _, _)) = block.bn {
                let bn_cache = cache.bn.as_ref().expect("train-mode tape");
                let (dx, dg, db) = bn_backward(bn_cache, d_cur.view());
                *grads.get_mut(gamma) += &dg.into_dyn();
                *grads.get_mut(beta) += &db.into_dyn();
                d_cur = dx;
            }
            let (dx, dw, db) = conv2d_backward(&cache.conv, w4(store, block.w), d_cur.view());
            *grads.get_mut(block.w) += &dw.into_dyn();
            *grads.get_mut(block.b) += &db.into_dyn();
            d_cur = dx;
        }
        d_cur
    }
}

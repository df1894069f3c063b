//! U-Net generators with residual units on the skip connections.
//!
//! Both generators share one architecture, differing in channel counts and
//! output head:
//!
//! - the restoration generator maps a 3-channel underwater image to a
//!   3-channel scene estimate through a `(tanh+1)/2` head;
//! - the degradation generator maps the 6-channel `[T | A]` supervision
//!   tensor to 6 channels split into a floored-sigmoid transmission head and
//!   a sigmoid veiling-light head.
//!
//! Layout for `depth` levels with encoder widths
//! `w_i = min(base_width * 2^i, 8 * base_width)`:
//!
//! ```text
//! enc_0:       Conv4x4 s2          in_ch        -> w_0        (bare)
//! enc_i:       BN -> ReLU -> Conv4x4 s2   w_{i-1} -> w_i      (i = 1..depth-1)
//! skip_l:      dru_blocks_per_skip residual units on e_l      (l = 0..depth-2)
//! dec_0:       BN -> ReLU -> ConvT4x4 s2  w_{d-1}  -> w_{d-2}
//! dec_j:       BN -> ReLU -> ConvT4x4 s2  [prev | skip] -> w_{d-2-j}
//! dec_{d-1}:   BN -> ReLU -> ConvT4x4 s2  [prev | skip] -> out_ch -> head
//! ```
//!
//! A residual unit is `x + Conv3x3(ReLU(Conv3x3(x)))` with no normalization
//! inside, so zeroed convolutions make it the identity. Seeded dropout
//! (rate 0.5) on the three innermost decoder outputs realizes the hidden
//! condition noise; it stays active at inference, which makes restoration
//! outputs a function of `(params, input, noise_seed)` rather than params
//! and input alone.
//!
//! For depth 8, base 64 the encoder runs 64-128-256-512-512-512-512-512; a
//! 256x256 input therefore bottoms out at 1x1, and depth 9 is rejected.

use ndarray::{Array4, ArrayView4, Axis};

use crate::error::{Error, Result};
use crate::image::T_FLOOR;
use crate::nn::ops::{
    bn_backward, bn_forward_eval, bn_forward_train, c, concat_channels, conv2d_backward,
    conv2d_forward, conv_transpose2d_backward, conv_transpose2d_forward, dropout_backward,
    dropout_forward, relu_backward, relu_forward, scaled_tanh_backward, scaled_tanh_forward,
    seeded_rng, sigmoid_forward, split_channels, BnCache, Conv2dCache, ConvT2dCache, Scalar,
};
use crate::nn::store::{Init, ParamStore, Schema, VarId};
use crate::nn::Mode;

/// Dropout rate of the hidden-condition noise.
pub const NOISE_RATE: f64 = 0.5;
/// Encoder/decoder widths saturate at this multiple of the base width.
pub const WIDTH_CAP_FACTOR: usize = 8;
const GAUSS: Init = Init::Gaussian { std: 0.02 };

/// Output head selecting the generator's role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum HeadKind {
    /// `(tanh + 1) / 2`, for the scene-radiance generator.
    ScaledTanh,
    /// Channels 0-2: sigmoid floored at the transmission floor; channels
    /// 3-5: plain sigmoid. For the degradation generator.
    SplitSigmoid,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GeneratorConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_width: usize,
    pub depth: usize,
    pub dru_blocks_per_skip: usize,
    pub head: HeadKind,
}

impl GeneratorConfig {
    /// Scene-radiance generator: 3 -> 3 channels, scaled-tanh head.
    pub fn g1(base_width: usize, depth: usize, dru_blocks_per_skip: usize) -> Self {
        Self {
            in_channels: 3,
            out_channels: 3,
            base_width,
            depth,
            dru_blocks_per_skip,
            head: HeadKind::ScaledTanh,
        }
    }

    /// Degradation generator: 6 -> 6 channels, split sigmoid heads.
    pub fn g2(base_width: usize, depth: usize, dru_blocks_per_skip: usize) -> Self {
        Self {
            in_channels: 6,
            out_channels: 6,
            base_width,
            depth,
            dru_blocks_per_skip,
            head: HeadKind::SplitSigmoid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels < 1 || self.out_channels < 1 {
            return Err(Error::invalid("generator channel counts must be >= 1"));
        }
        if self.base_width < 1 {
            return Err(Error::invalid("base_width must be >= 1"));
        }
        if self.depth < 1 || self.depth > 16 {
            return Err(Error::invalid("depth must be in 1..=16"));
        }
        if self.head == HeadKind::SplitSigmoid && self.out_channels != 6 {
            return Err(Error::invalid(
                "split-head generator must emit 6 channels (transmission | veiling)",
            ));
        }
        Ok(())
    }

    /// Encoder width at `level`, capped at [`WIDTH_CAP_FACTOR`] times base.
    pub fn width(&self, level: usize) -> usize {
        (self.base_width << level.min(10)).min(WIDTH_CAP_FACTOR * self.base_width)
    }

    /// Channels entering decoder block `j` (after skip concatenation).
    fn dec_in(&self, j: usize) -> usize {
        let d = self.depth;
        if j == 0 {
            self.width(d - 1)
        } else {
            self.dec_out(j - 1) + self.width(d - 1 - j)
        }
    }

    /// Channels leaving decoder block `j`.
    fn dec_out(&self, j: usize) -> usize {
        let d = self.depth;
        if j == d - 1 {
            self.out_channels
        } else {
            self.width(d - 2 - j)
        }
    }

    /// Decoder blocks that receive hidden-condition dropout: the (up to)
    /// three closest to the bottleneck, never the output block.
    fn has_dropout(&self, j: usize) -> bool {
        j < 3 && j + 1 < self.depth
    }
}

#[derive(Debug, Clone)]
struct Conv {
    w: VarId,
    b: VarId,
}

#[derive(Debug, Clone)]
struct Bn {
    gamma: VarId,
    beta: VarId,
    mean: VarId,
    var: VarId,
}

#[derive(Debug, Clone)]
struct Dru {
    c1: Conv,
    c2: Conv,
}

fn push_conv(schema: &mut Schema, name: &str, cout: usize, cin: usize, k: usize) -> Conv {
    Conv {
        w: schema.trainable(format!("{name}.w"), &[cout, cin, k, k], GAUSS),
        b: schema.trainable(format!("{name}.b"), &[cout], Init::Zeros),
    }
}

fn push_convt(schema: &mut Schema, name: &str, cin: usize, cout: usize, k: usize) -> Conv {
    Conv {
        w: schema.trainable(format!("{name}.w"), &[cin, cout, k, k], GAUSS),
        b: schema.trainable(format!("{name}.b"), &[cout], Init::Zeros),
    }
}

fn push_bn(schema: &mut Schema, name: &str, ch: usize) -> Bn {
    Bn {
        gamma: schema.trainable(format!("{name}.gamma"), &[ch], Init::Ones),
        beta: schema.trainable(format!("{name}.beta"), &[ch], Init::Zeros),
        mean: schema.buffer(format!("{name}.running_mean"), &[ch], Init::Zeros),
        var: schema.buffer(format!("{name}.running_var"), &[ch], Init::Ones),
    }
}

/// Deferred batch-norm running-statistics write, recorded during a
/// training-mode forward and applied explicitly by the owner of the store.
///
/// Batch statistics are captured at record time, but the momentum blend
/// happens against the buffer's value *at apply time*, so applying several
/// updates in sequence (e.g. the discriminator's real batch then its fake
/// batch) chains exactly like in-place updates would.
#[derive(Debug, Clone)]
pub struct BnUpdate<F> {
    mean_id: VarId,
    var_id: VarId,
    batch_mean: ndarray::Array1<F>,
    batch_var: ndarray::Array1<F>,
}

impl<F: Scalar> BnUpdate<F> {
    pub fn apply(&self, store: &mut ParamStore<F>) {
        let mom = c::<F>(crate::nn::ops::BN_MOMENTUM);
        let keep = F::one() - mom;
        let mean = store.get(self.mean_id).mapv(|r| r * keep)
            + &self.batch_mean.mapv(|b| b * mom).into_dyn();
        let var = store.get(self.var_id).mapv(|r| r * keep)
            + &self.batch_var.mapv(|b| b * mom).into_dyn();
        store.set(self.mean_id, mean);
        store.set(self.var_id, var);
    }

    pub(crate) fn from_cache(mean_id: VarId, var_id: VarId, cache: &BnCache<F>) -> Self {
        Self {
            mean_id,
            var_id,
            batch_mean: cache.batch_mean.clone(),
            batch_var: cache.batch_var.clone(),
        }
    }
}

fn record_bn_update<F: Scalar>(updates: &mut Vec<BnUpdate<F>>, bn: &Bn, cache: &BnCache<F>) {
    updates.push(BnUpdate::from_cache(bn.mean, bn.var, cache));
}

pub(crate) fn w4<F: Scalar>(store: &ParamStore<F>, id: VarId) -> ArrayView4<'_, F> {
    store.get(id).view().into_dimensionality().unwrap()
}

pub(crate) fn w1<F: Scalar>(store: &ParamStore<F>, id: VarId) -> ndarray::ArrayView1<'_, F> {
    store.get(id).view().into_dimensionality().unwrap()
}

fn add_grad4<F: Scalar>(grads: &mut ParamStore<F>, id: VarId, delta: Array4<F>) {
    *grads.get_mut(id) += &delta.into_dyn();
}

fn add_grad1<F: Scalar>(grads: &mut ParamStore<F>, id: VarId, delta: ndarray::Array1<F>) {
    *grads.get_mut(id) += &delta.into_dyn();
}

/// BN in the requested mode; training mode records a running-stats update.
fn bn_apply<F: Scalar>(
    store: &ParamStore<F>,
    bn: &Bn,
    x: ArrayView4<F>,
    mode: Mode,
    updates: &mut Vec<BnUpdate<F>>,
) -> (Array4<F>, Option<BnCache<F>>) {
    match mode {
        Mode::Train => {
            let (y, cache) = bn_forward_train(x, w1(store, bn.gamma), w1(store, bn.beta));
            record_bn_update(updates, bn, &cache);
            (y, Some(cache))
        }
        Mode::Eval => {
            let y = bn_forward_eval(
                x,
                w1(store, bn.gamma),
                w1(store, bn.beta),
                store.get(bn.mean).view().into_dimensionality().unwrap(),
                store.get(bn.var).view().into_dimensionality().unwrap(),
            );
            (y, None)
        }
    }
}

struct DruCache<F> {
    c1: Conv2dCache<F>,
    relu_y: Array4<F>,
    c2: Conv2dCache<F>,
}

fn dru_forward<F: Scalar>(
    store: &ParamStore<F>,
    dru: &Dru,
    x: &Array4<F>,
) -> (Array4<F>, DruCache<F>) {
    let (h1, c1) = conv2d_forward(x.view(), w4(store, dru.c1.w), w1(store, dru.c1.b), 1, 1);
    let relu_y = relu_forward(&h1);
    let (h2, c2) = conv2d_forward(
        relu_y.view(),
        w4(store, dru.c2.w),
        w1(store, dru.c2.b),
        1,
        1,
    );
    (x + &h2, DruCache { c1, relu_y, c2 })
}

fn dru_backward<F: Scalar>(
    store: &ParamStore<F>,
    dru: &Dru,
    cache: &DruCache<F>,
    d_out: ArrayView4<F>,
    grads: &mut ParamStore<F>,
) -> Array4<F> {
    let (d_relu, dw2, db2) = conv2d_backward(&cache.c2, w4(store, dru.c2.w), d_out);
    add_grad4(grads, dru.c2.w, dw2);
    add_grad1(grads, dru.c2.b, db2);
    let d_h1 = relu_backward(&cache.relu_y, d_relu.view());
    let (d_x, dw1, db1) = conv2d_backward(&cache.c1, w4(store, dru.c1.w), d_h1.view());
    add_grad4(grads, dru.c1.w, dw1);
    add_grad1(grads, dru.c1.b, db1);
    &d_x + &d_out // identity shortcut
}

struct EncCache<F> {
    bn: BnCache<F>,
    relu_y: Array4<F>,
    conv: Conv2dCache<F>,
}

struct DecCache<F> {
    bn: BnCache<F>,
    relu_y: Array4<F>,
    convt: ConvT2dCache<F>,
    dropout_mask: Option<Array4<F>>,
}

enum HeadCache<F> {
    /// Post-head output of the scaled tanh.
    Tanh(Array4<F>),
    /// Raw sigmoid values of all 6 channels (pre-floor).
    Sigmoid(Array4<F>),
}

/// Everything one training-mode forward stashes for its backward pass.
/// Eval-mode tapes lack BN caches and cannot be backpropagated through.
pub struct GenTape<F> {
    enc0: Conv2dCache<F>,
    enc: Vec<EncCache<F>>,
    skips: Vec<Vec<DruCache<F>>>,
    dec: Vec<DecCache<F>>,
    head: HeadCache<F>,
    bn_updates: Vec<BnUpdate<F>>,
}

impl<F: Scalar> GenTape<F> {
    /// Fold this forward's batch statistics into the running buffers.
    /// Separate from the forward so a store can stay immutable during loss
    /// evaluation (and so the degradation generator can be exercised
    /// without being touched when its loss weight is zero).
    pub fn apply_bn_updates(&self, store: &mut ParamStore<F>) {
        for u in &self.bn_updates {
            u.apply(store);
        }
    }
}

pub struct UNetGenerator {
    cfg: GeneratorConfig,
    schema: Schema,
    enc0: Conv,
    enc: Vec<(Bn, Conv)>,
    skips: Vec<Vec<Dru>>,
    dec: Vec<(Bn, Conv)>,
}

impl UNetGenerator {
    /// Declare every layer of the architecture for `cfg`. The parameter
    /// store is built separately (seeded) from the returned network's
    /// [`schema`](Self::schema).
    pub fn build(cfg: GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.depth;
        let mut schema = Schema::new();
        let enc0 = push_conv(&mut schema, "enc0.conv", cfg.width(0), cfg.in_channels, 4);
        let mut enc = Vec::with_capacity(d - 1);
        for i in 1..d {
            let bn = push_bn(&mut schema, &format!("enc{i}.bn"), cfg.width(i - 1));
            let conv = push_conv(
                &mut schema,
                &format!("enc{i}.conv"),
                cfg.width(i),
                cfg.width(i - 1),
                4,
            );
            enc.push((bn, conv));
        }
        let mut skips = Vec::with_capacity(d.saturating_sub(1));
        for l in 0..d.saturating_sub(1) {
            let mut units = Vec::with_capacity(cfg.dru_blocks_per_skip);
            for u in 0..cfg.dru_blocks_per_skip {
                let w = cfg.width(l);
                units.push(Dru {
                    c1: push_conv(&mut schema, &format!("skip{l}.dru{u}.conv1"), w, w, 3),
                    c2: push_conv(&mut schema, &format!("skip{l}.dru{u}.conv2"), w, w, 3),
                });
            }
            skips.push(units);
        }
        let mut dec = Vec::with_capacity(d);
        for j in 0..d {
            let in_ch = cfg.dec_in(j);
            let bn = push_bn(&mut schema, &format!("dec{j}.bn"), in_ch);
            let convt = push_convt(
                &mut schema,
                &format!("dec{j}.convt"),
                in_ch,
                cfg.dec_out(j),
                4,
            );
            dec.push((bn, convt));
        }
        Ok(Self {
            cfg,
            schema,
            enc0,
            enc,
            skips,
            dec,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    /// Trainable scalar count.
    pub fn parameter_count(&self) -> usize {
        self.schema.parameter_count()
    }

    fn check_input<F: Scalar>(&self, x: &ArrayView4<F>) -> Result<()> {
        let (_, ch, h, w) = x.dim();
        if ch != self.cfg.in_channels {
            return Err(Error::invalid(format!(
                "generator expects {} input channels, got {ch}",
                self.cfg.in_channels
            )));
        }
        let stride_total = 1usize << self.cfg.depth;
        if h % stride_total != 0 || w % stride_total != 0 {
            return Err(Error::invalid(format!(
                "spatial dims {h}x{w} must be divisible by 2^depth = {stride_total}"
            )));
        }
        Ok(())
    }

    /// Run the network. Output spatial dims equal input dims; channel count
    /// and value range are set by the head ([0,1] for the tanh head;
    /// `[T_floor,1] x [0,1]` for the split head, channels 0-2 / 3-5).
    ///
    /// Pure in `store`; training-mode batch statistics are recorded on the
    /// tape for the caller to apply.
    pub fn forward<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        x: ArrayView4<F>,
        mode: Mode,
        noise_seed: u64,
    ) -> Result<(Array4<F>, GenTape<F>)> {
        self.check_input(&x)?;
        let d = self.cfg.depth;
        let mut bn_updates = Vec::new();

        // Encoder.
        let (e0, enc0_cache) = conv2d_forward(x, w4(store, self.enc0.w), w1(store, self.enc0.b), 2, 1);
        let mut enc_feats: Vec<Array4<F>> = vec![e0];
        let mut enc_caches = Vec::with_capacity(d - 1);
        for (bn, conv) in &self.enc {
            let prev = enc_feats.last().unwrap();
            let (h, bn_cache) = bn_apply(store, bn, prev.view(), mode, &mut bn_updates);
            let relu_y = relu_forward(&h);
            let (e, conv_cache) = conv2d_forward(relu_y.view(), w4(store, conv.w), w1(store, conv.b), 2, 1);
            enc_caches.push(EncCache {
                // Eval tapes are never backpropagated; a placeholder keeps
                // the tape layout uniform.
                bn: bn_cache.unwrap_or_else(|| {
                    let (_, c) = bn_forward_train(
                        Array4::<F>::zeros((1, prev.dim().1, 1, 1)).view(),
                        w1(store, bn.gamma),
                        w1(store, bn.beta),
                    );
                    c
                }),
                relu_y,
                conv: conv_cache,
            });
            enc_feats.push(e);
        }

        // Skip paths through the residual units.
        let mut skip_feats = Vec::with_capacity(d.saturating_sub(1));
        let mut skip_caches = Vec::with_capacity(d.saturating_sub(1));
        for (l, units) in self.skips.iter().enumerate() {
            let mut s = enc_feats[l].clone();
            let mut caches = Vec::with_capacity(units.len());
            for dru in units {
                let (next, cache) = dru_forward(store, dru, &s);
                s = next;
                caches.push(cache);
            }
            skip_feats.push(s);
            skip_caches.push(caches);
        }

        // Decoder.
        let mut cur = enc_feats[d - 1].clone();
        let mut dec_caches = Vec::with_capacity(d);
        for (j, (bn, convt)) in self.dec.iter().enumerate() {
            let joined = if j == 0 {
                cur
            } else {
                concat_channels(cur.view(), skip_feats[d - 1 - j].view())
            };
            let (h, bn_cache) = bn_apply(store, bn, joined.view(), mode, &mut bn_updates);
            let relu_y = relu_forward(&h);
            let (mut up, convt_cache) =
                conv_transpose2d_forward(relu_y.view(), w4(store, convt.w), w1(store, convt.b), 2, 1);
            let mut dropout_mask = None;
            if self.cfg.has_dropout(j) {
                let mut rng = seeded_rng(noise_seed, j as u64);
                let (dropped, mask) = dropout_forward(&up, NOISE_RATE, &mut rng);
                up = dropped;
                dropout_mask = Some(mask);
            }
            dec_caches.push(DecCache {
                bn: bn_cache.unwrap_or_else(|| {
                    let (_, c) = bn_forward_train(
                        Array4::<F>::zeros((1, joined.dim().1, 1, 1)).view(),
                        w1(store, bn.gamma),
                        w1(store, bn.beta),
                    );
                    c
                }),
                relu_y,
                convt: convt_cache,
                dropout_mask,
            });
            cur = up;
        }

        // Head.
        let (out, head) = match self.cfg.head {
            HeadKind::ScaledTanh => {
                let y = scaled_tanh_forward(&cur);
                (y.clone(), HeadCache::Tanh(y))
            }
            HeadKind::SplitSigmoid => {
                let s = sigmoid_forward(&cur);
                let floor = c::<F>(T_FLOOR);
                let mut out = s.clone();
                out.slice_mut(ndarray::s![.., ..3, .., ..])
                    .mapv_inplace(|v| v.max(floor));
                (out, HeadCache::Sigmoid(s))
            }
        };
        Ok((
            out,
            GenTape {
                enc0: enc0_cache,
                enc: enc_caches,
                skips: skip_caches,
                dec: dec_caches,
                head,
                bn_updates,
            },
        ))
    }

    /// Backpropagate `d_out` (gradient w.r.t. the post-head output) through
    /// a training-mode tape, accumulating parameter gradients into `grads`
    /// and returning the gradient w.r.t. the network input.
    pub fn backward<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        tape: &GenTape<F>,
        d_out: ArrayView4<F>,
        grads: &mut ParamStore<F>,
    ) -> Array4<F> {
        let d = self.cfg.depth;

        // Head.
        let mut d_cur = match &tape.head {
            HeadCache::Tanh(y) => scaled_tanh_backward(y, d_out),
            HeadCache::Sigmoid(s) => {
                // Floor on channels 0-2: gradient passes only where the raw
                // sigmoid cleared the floor.
                let floor = c::<F>(T_FLOOR);
                let mut dd = d_out.to_owned();
                let mut head3 = dd.slice_mut(ndarray::s![.., ..3, .., ..]);
                let s3 = s.slice(ndarray::s![.., ..3, .., ..]);
                ndarray::Zip::from(&mut head3).and(&s3).for_each(|g, &sv| {
                    if sv <= floor {
                        *g = F::zero();
                    }
                });
                let mut dx = dd;
                ndarray::Zip::from(&mut dx).and(s).for_each(|g, &sv| {
                    *g = *g * sv * (F::one() - sv);
                });
                dx
            }
        };

        // Decoder, collecting gradients flowing back to encoder features.
        let mut d_enc: Vec<Option<Array4<F>>> = (0..d).map(|_| None).collect();
        for j in (0..d).rev() {
            let (bn, convt) = &self.dec[j];
            let cache = &tape.dec[j];
            if let Some(mask) = &cache.dropout_mask {
                d_cur = dropout_backward(mask, d_cur.view());
            }
            let (d_relu, dw, db) = conv_transpose2d_backward(&cache.convt, w4(store, convt.w), d_cur.view());
            add_grad4(grads, convt.w, dw);
            add_grad1(grads, convt.b, db);
            let d_bn_out = relu_backward(&cache.relu_y, d_relu.view());
            let (d_joined, dg, dbeta) = bn_backward(&cache.bn, d_bn_out.view());
            add_grad1(grads, bn.gamma, dg);
            add_grad1(grads, bn.beta, dbeta);
            if j == 0 {
                accumulate(&mut d_enc[d - 1], d_joined);
            } else {
                let prev_ch = self.cfg.dec_out(j - 1);
                let (d_prev, d_skip) = split_channels(d_joined.view(), prev_ch);
                // Through the residual units, innermost last.
                let level = d - 1 - j;
                let mut d_s = d_skip;
                for (dru, cache) in self.skips[level]
                    .iter()
                    .zip(&tape.skips[level])
                    .rev()
                {
                    d_s = dru_backward(store, dru, cache, d_s.view(), grads);
                }
                accumulate(&mut d_enc[level], d_s);
                d_cur = d_prev;
            }
        }

        // Encoder, deepest block first.
        for i in (1..d).rev() {
            let (bn, conv) = &self.enc[i - 1];
            let cache = &tape.enc[i - 1];
            let d_e = d_enc[i].take().expect("decoder populated this level");
            let (d_relu, dw, db) = conv2d_backward(&cache.conv, w4(store, conv.w), d_e.view());
            add_grad4(grads, conv.w, dw);
            add_grad1(grads, conv.b, db);
            let d_bn_out = relu_backward(&cache.relu_y, d_relu.view());
            let (d_prev, dg, dbeta) = bn_backward(&cache.bn, d_bn_out.view());
            add_grad1(grads, bn.gamma, dg);
            add_grad1(grads, bn.beta, dbeta);
            accumulate(&mut d_enc[i - 1], d_prev);
        }
        let d_e0 = d_enc[0].take().expect("level 0 gradient");
        let (d_x, dw, db) = conv2d_backward(&tape.enc0, w4(store, self.enc0.w), d_e0.view());
        add_grad4(grads, self.enc0.w, dw);
        add_grad1(grads, self.enc0.b, db);
        d_x
    }
}

fn accumulate<F: Scalar>(slot: &mut Option<Array4<F>>, delta: Array4<F>) {
    match slot {
        Some(acc) => *acc += &delta,
        None => *slot = Some(delta),
    }
}

/// View the split-head output as `(transmission, veiling)` halves.
pub fn split_g2_output<F: Scalar>(out: &Array4<F>) -> (Array4<F>, Array4<F>) {
    debug_assert_eq!(out.dim().1, 6);
    (
        out.slice(ndarray::s![.., ..3, .., ..]).to_owned(),
        out.slice(ndarray::s![.., 3.., .., ..]).to_owned(),
    )
}

/// Rejoin per-half gradients into the 6-channel head gradient.
pub fn join_g2_grad<F: Scalar>(d_t: ArrayView4<F>, d_a: ArrayView4<F>) -> Array4<F> {
    ndarray::concatenate(Axis(1), &[d_t, d_a]).expect("matching dims")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rand_input(rng: &mut StdRng, n: usize, ch: usize, hw: usize) -> Array4<f32> {
        Array4::from_shape_fn((n, ch, hw, hw), |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn output_shape_matches_input() {
        let gen = UNetGenerator::build(GeneratorConfig::g1(4, 3, 1)).unwrap();
        let store: ParamStore<f32> = ParamStore::init(gen.schema(), 1);
        let mut rng = StdRng::seed_from_u64(61);
        let x = rand_input(&mut rng, 2, 3, 16);
        let (y, _) = gen.forward(&store, x.view(), Mode::Train, 7).unwrap();
        assert_eq!(y.dim(), (2, 3, 16, 16));
    }

    #[test]
    fn g1_output_in_unit_range() {
        let gen = UNetGenerator::build(GeneratorConfig::g1(4, 3, 1)).unwrap();
        let store: ParamStore<f32> = ParamStore::init(gen.schema(), 2);
        let mut rng = StdRng::seed_from_u64(62);
        let x = rand_input(&mut rng, 1, 3, 16);
        let (y, _) = gen.forward(&store, x.view(), Mode::Train, 7).unwrap();
        assert!(y.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn g2_head_ranges() {
        let gen = UNetGenerator::build(GeneratorConfig::g2(4, 3, 1)).unwrap();
        let store: ParamStore<f32> = ParamStore::init(gen.schema(), 3);
        let mut rng = StdRng::seed_from_u64(63);
        let x = rand_input(&mut rng, 2, 6, 16);
        let (y, _) = gen.forward(&store, x.view(), Mode::Train, 9).unwrap();
        let (t, a) = split_g2_output(&y);
        let floor = T_FLOOR as f32;
        assert!(t.iter().all(|&v| v >= floor && v <= 1.0));
        assert!(a.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn forward_is_deterministic() {
        let gen = UNetGenerator::build(GeneratorConfig::g1(4, 4, 1)).unwrap();
        let store: ParamStore<f32> = ParamStore::init(gen.schema(), 4);
        let mut rng = StdRng::seed_from_u64(64);
        let x = rand_input(&mut rng, 2, 3, 16);
        let (y1, _) = gen.forward(&store, x.view(), Mode::Train, 11).unwrap();
        let (y2, _) = gen.forward(&store, x.view(), Mode::Train, 11).unwrap();
        assert_eq!(y1, y2);
        // A different noise seed flips different dropout units.
        let (y3, _) = gen.forward(&store, x.view(), Mode::Train, 12).unwrap();
        assert_ne!(y1, y3);
    }

    #[test]
    fn same_build_seed_gives_identical_params() {
        let gen = UNetGenerator::build(GeneratorConfig::g1(8, 4, 1)).unwrap();
        let a: ParamStore<f32> = ParamStore::init(gen.schema(), 99);
        let b: ParamStore<f32> = ParamStore::init(gen.schema(), 99);
        assert_eq!(a, b);
    }

    #[test]
    fn zero_params_give_half_gray() {
        let gen = UNetGenerator::build(GeneratorConfig::g1(4, 3, 1)).unwrap();
        let store: ParamStore<f32> = ParamStore::zeros_with_buffers(gen.schema());
        let mut rng = StdRng::seed_from_u64(65);
        let x = rand_input(&mut rng, 1, 3, 8);
        let (y, _) = gen.forward(&store, x.view(), Mode::Train, 3).unwrap();
        assert!(y.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn zero_params_split_head_gives_half() {
        let gen = UNetGenerator::build(GeneratorConfig::g2(4, 3, 1)).unwrap();
        let store: ParamStore<f32> = ParamStore::zeros_with_buffers(gen.schema());
        let mut rng = StdRng::seed_from_u64(66);
        let x = rand_input(&mut rng, 1, 6, 8);
        let (y, _) = gen.forward(&store, x.view(), Mode::Train, 3).unwrap();
        assert!(y.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn indivisible_input_rejected() {
        // Depth 9 demands multiples of 512; a 256 input must be refused.
        let gen = UNetGenerator::build(GeneratorConfig::g1(1, 9, 0)).unwrap();
        let store: ParamStore<f32> = ParamStore::zeros_with_buffers(gen.schema());
        let x = Array4::<f32>::zeros((1, 3, 256, 256));
        assert!(gen.forward(&store, x.view(), Mode::Train, 0).is_err());
    }

    #[test]
    fn residual_units_zeroed_are_identity() {
        // Zero every skip conv in an otherwise random store: the skip path
        // must deliver the raw encoder feature, which we observe by
        // comparing against a dru-free network with the same seed.
        let cfg_with = GeneratorConfig::g1(4, 3, 2);
        let cfg_without = GeneratorConfig::g1(4, 3, 0);
        let gen_with = UNetGenerator::build(cfg_with).unwrap();
        let gen_without = UNetGenerator::build(cfg_without).unwrap();
        // Build the dru-network store, zero the dru convs, and copy the
        // shared (non-dru) weights from a store built on the dru-free
        // schema with the same draw order... draw orders differ, so instead
        // copy variable-by-variable by name.
        let store_with: ParamStore<f32> = {
            let mut s = ParamStore::init(gen_with.schema(), 7);
            for (id, spec) in gen_with.schema().iter() {
                if spec.name.contains(".dru") {
                    s.get_mut(id).fill(0.0);
                }
            }
            s
        };
        let store_without: ParamStore<f32> = {
            let mut s = ParamStore::zeros(gen_without.schema());
            for (id_w, spec_w) in gen_with.schema().iter() {
                for (id_wo, spec_wo) in gen_without.schema().iter() {
                    if spec_w.name == spec_wo.name {
                        s.set(id_wo, store_with.get(id_w).clone());
                    }
                }
                let _ = spec_w;
            }
            s
        };
        let mut rng = StdRng::seed_from_u64(67);
        let x = rand_input(&mut rng, 1, 3, 16);
        let (y_with, _) = gen_with.forward(&store_with, x.view(), Mode::Train, 5).unwrap();
        let (y_without, _) = gen_without
            .forward(&store_without, x.view(), Mode::Train, 5)
            .unwrap();
        assert_eq!(y_with, y_without);
    }

    #[test]
    fn depth8_base64_parameter_count_matches_closed_form() {
        // Independent evaluation of the architecture table for the
        // full-scale restoration generator (3 -> 3, depth 8, base 64,
        // one residual unit per skip).
        let w = [64usize, 128, 256, 512, 512, 512, 512, 512];
        let mut expected = 0usize;
        // enc0: bare 4x4 s2 conv, 3 -> 64.
        expected += 64 * 3 * 16 + 64;
        // enc1..enc7: BN(w[i-1]) + conv w[i-1] -> w[i].
        for i in 1..8 {
            expected += 2 * w[i - 1];
            expected += w[i] * w[i - 1] * 16 + w[i];
        }
        // skips 0..6: one residual unit = two 3x3 convs w -> w.
        for wl in &w[..7] {
            expected += 2 * (wl * wl * 9 + wl);
        }
        // decoder: BN(in) + convT in -> out.
        let dec_in = [512usize, 1024, 1024, 1024, 1024, 512, 256, 128];
        let dec_out = [512usize, 512, 512, 512, 256, 128, 64, 3];
        for j in 0..8 {
            expected += 2 * dec_in[j];
            expected += dec_in[j] * dec_out[j] * 16 + dec_out[j];
        }
        let gen = UNetGenerator::build(GeneratorConfig::g1(64, 8, 1)).unwrap();
        assert_eq!(gen.parameter_count(), expected);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(UNetGenerator::build(GeneratorConfig {
            in_channels: 3,
            out_channels: 3,
            base_width: 0,
            depth: 4,
            dru_blocks_per_skip: 1,
            head: HeadKind::ScaledTanh,
        })
        .is_err());
        assert!(UNetGenerator::build(GeneratorConfig {
            in_channels: 6,
            out_channels: 3,
            base_width: 4,
            depth: 4,
            dru_blocks_per_skip: 1,
            head: HeadKind::SplitSigmoid,
        })
        .is_err());
    }

    #[test]
    fn wrong_channel_count_rejected() {
        let gen = UNetGenerator::build(GeneratorConfig::g1(4, 3, 1)).unwrap();
        let store: ParamStore<f32> = ParamStore::zeros_with_buffers(gen.schema());
        let x = Array4::<f32>::zeros((1, 6, 16, 16));
        assert!(gen.forward(&store, x.view(), Mode::Train, 0).is_err());
    }

    #[test]
    fn bn_updates_only_in_train_mode() {
        let gen = UNetGenerator::build(GeneratorConfig::g1(4, 3, 1)).unwrap();
        let store: ParamStore<f32> = ParamStore::init(gen.schema(), 8);
        let mut rng = StdRng::seed_from_u64(68);
        let x = rand_input(&mut rng, 2, 3, 16);
        let (_, tape_train) = gen.forward(&store, x.view(), Mode::Train, 1).unwrap();
        let (_, tape_eval) = gen.forward(&store, x.view(), Mode::Eval, 1).unwrap();
        assert!(!tape_train.bn_updates.is_empty());
        assert!(tape_eval.bn_updates.is_empty());
        // Applying the updates changes running stats only.
        let mut updated = store.clone();
        tape_train.apply_bn_updates(&mut updated);
        let mut changed = 0;
        for ((id, spec), (_, before)) in gen.schema().iter().zip(store.iter()) {
            if updated.get(id) != before {
                assert!(!spec.trainable, "only buffers may change");
                changed += 1;
            }
        }
        assert!(changed > 0);
    }

    #[test]
    fn backward_produces_finite_grads_for_all_params() {
        let gen = UNetGenerator::build(GeneratorConfig::g1(4, 3, 1)).unwrap();
        let store: ParamStore<f64> = ParamStore::init(gen.schema(), 9);
        let mut rng = StdRng::seed_from_u64(69);
        let x = Array4::from_shape_fn((2, 3, 16, 16), |_| rng.random_range(0.0..1.0));
        let (y, tape) = gen.forward(&store, x.view(), Mode::Train, 13).unwrap();
        let d_out = Array4::from_elem(y.dim(), 1.0 / y.len() as f64);
        let mut grads = ParamStore::zeros(gen.schema());
        let d_x = gen.backward(&store, &tape, d_out.view(), &mut grads);
        assert_eq!(d_x.dim(), x.dim());
        assert!(grads.all_finite());
        // Every trainable parameter should see some gradient signal.
        let mut touched = 0;
        for (id, spec) in gen.schema().iter() {
            if spec.trainable && grads.get(id).iter().any(|&g| g != 0.0) {
                touched += 1;
            }
        }
        let trainables = gen.schema().iter().filter(|(_, s)| s.trainable).count();
        assert_eq!(touched, trainables);
    }
}

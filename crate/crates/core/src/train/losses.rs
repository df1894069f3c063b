//! Adversarial, pixel, and physics-recomposition losses.
//!
//! Losses are reported in f64 regardless of the network float width; the
//! accumulation order is fixed (flat element order), so equal inputs give
//! bit-equal loss values.

use ndarray::{Array4, ArrayView4};

use crate::nn::ops::{c, Scalar};

/// Numerically stable binary cross-entropy on raw logits against a uniform
/// target, averaged over every element:
/// `max(l, 0) - l*t + ln(1 + exp(-|l|))`.
pub fn bce_with_logits_mean<F: Scalar>(logits: ArrayView4<F>, target: f64) -> f64 {
    let n = logits.len() as f64;
    let mut acc = 0.0f64;
    for &l in logits.iter() {
        let l = l.to_f64().unwrap();
        acc += l.max(0.0) - l * target + (-l.abs()).exp().ln_1p();
    }
    acc / n
}

/// Gradient of [`bce_with_logits_mean`] w.r.t. the logits, times `scale`:
/// `(sigmoid(l) - t) * scale / n`.
pub fn bce_with_logits_grad<F: Scalar>(logits: ArrayView4<F>, target: f64, scale: f64) -> Array4<F> {
    let per = scale / logits.len() as f64;
    logits.mapv(|l| {
        let l = l.to_f64().unwrap();
        let s = 1.0 / (1.0 + (-l).exp());
        c::<F>((s - target) * per)
    })
}

/// Discriminator objective: average of the real-batch BCE toward 1 and the
/// fake-batch BCE toward 0.
pub fn adversarial_d_loss<F: Scalar>(real_logits: ArrayView4<F>, fake_logits: ArrayView4<F>) -> f64 {
    0.5 * (bce_with_logits_mean(real_logits, 1.0) + bce_with_logits_mean(fake_logits, 0.0))
}

/// Generator objective on the discriminator's fake-batch logits: BCE toward 1.
pub fn adversarial_g_loss<F: Scalar>(fake_logits: ArrayView4<F>) -> f64 {
    bce_with_logits_mean(fake_logits, 1.0)
}

/// Mean absolute difference over every element.
pub fn l1_mean<F: Scalar>(a: ArrayView4<F>, b: ArrayView4<F>) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    let n = a.len() as f64;
    let mut acc = 0.0f64;
    for (&x, &y) in a.iter().zip(b.iter()) {
        acc += (x.to_f64().unwrap() - y.to_f64().unwrap()).abs();
    }
    acc / n
}

/// Gradient of [`l1_mean`] w.r.t. `a`, times `scale`: `sign(a - b) * scale / n`
/// (subgradient 0 where the terms tie).
pub fn l1_grad<F: Scalar>(a: ArrayView4<F>, b: ArrayView4<F>, scale: f64) -> Array4<F> {
    debug_assert_eq!(a.dim(), b.dim());
    let per = c::<F>(scale / a.len() as f64);
    let mut out = Array4::<F>::zeros(a.dim());
    ndarray::Zip::from(&mut out).and(&a).and(&b).for_each(|g, &x, &y| {
        *g = if x > y {
            per
        } else if x < y {
            -per
        } else {
            F::zero()
        };
    });
    out
}

/// Underwater image formation applied to network outputs:
/// `restored ⊙ transmission + veiling`. Deliberately unclamped — the
/// physics loss must see overshoot instead of hiding it.
pub fn recompose<F: Scalar>(
    restored: &Array4<F>,
    transmission: &Array4<F>,
    veiling: &Array4<F>,
) -> Array4<F> {
    debug_assert_eq!(restored.dim(), transmission.dim());
    debug_assert_eq!(restored.dim(), veiling.dim());
    restored * transmission + veiling
}

/// Gradients of `l1_mean(recompose(j,t,a), x)` w.r.t. `(j, t, a)`, each
/// times `scale`.
pub fn recompose_l1_grads<F: Scalar>(
    restored: &Array4<F>,
    transmission: &Array4<F>,
    recomposed: &Array4<F>,
    observed: ArrayView4<F>,
    scale: f64,
) -> (Array4<F>, Array4<F>, Array4<F>) {
    let d_n = l1_grad(recomposed.view(), observed, scale);
    let d_restored = &d_n * transmission;
    let d_transmission = &d_n * restored;
    (d_restored, d_transmission, d_n)
}

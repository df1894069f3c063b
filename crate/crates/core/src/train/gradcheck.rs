//! Central finite-difference verification of the hand-written backwards.
//!
//! Checks the full composite objectives, not individual ops: both
//! generators are differentiated through `adv_g + λ1·l1 + λ2·l2` (the exact
//! generator-step path, discriminator parameters frozen) and the
//! discriminator through its own real/fake objective. Runs in f64 — the
//! f32 training width drowns a small central-difference probe in rounding
//! noise.

use ndarray::Array4;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::store::{ParamStore, Schema, VarId};
use crate::nn::Mode;
use crate::train::losses::{adversarial_d_loss, bce_with_logits_grad};
use crate::train::trainer::{derive_seed, eval_g_path, ArchConfig};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub arch: ArchConfig,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Trainable coordinates probed per network, sampled without
    /// replacement across every trainable array.
    pub weights_per_network: usize,
    /// Central-difference step. The objectives are piecewise-smooth (ReLU
    /// crossings, L1 ties), and under training-mode batch norm a weight
    /// nudge shifts the batch statistics, dragging every pre-activation —
    /// kinks straddled by ±h corrupt the quotient with O(1) error, so
    /// truncation falls as h shrinks while f64 roundoff (~eps·|loss|/h)
    /// rises. 1e-6 sits at the bottom of that V on the configs probed here.
    pub fd_step: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            arch: ArchConfig {
                depth: 3,
                base_width: 8,
                disc_base_width: 8,
                dru_blocks_per_skip: 1,
            },
            lambda1: 100.0,
            lambda2: 0.5,
            weights_per_network: 20,
            fd_step: 1e-6,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NetworkCheck {
    pub name: &'static str,
    pub checked: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub networks: Vec<NetworkCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.networks
            .iter()
            .map(|n| n.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn all_below(&self, tol: f64) -> bool {
        self.networks.iter().all(|n| n.max_rel_err < tol)
    }
}

/// `|fd - analytic|` relative to the larger magnitude, floored so that a
/// pair of near-zero values (finite-difference noise on a genuinely dead
/// coordinate) cannot manufacture a failure.
fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-4)
}

/// Sample `k` distinct trainable flat coordinates of `schema`.
fn sample_coords(schema: &Schema, k: usize, rng: &mut ChaCha8Rng) -> Vec<(VarId, usize)> {
    let trainables: Vec<(VarId, usize)> = schema
        .iter()
        .filter(|(_, s)| s.trainable)
        .map(|(id, s)| (id, s.shape.iter().product()))
        .collect();
    let total: usize = trainables.iter().map(|(_, n)| n).sum();
    let picks = rand::seq::index::sample(rng, total, k.min(total));
    picks
        .into_iter()
        .map(|mut flat| {
            for &(id, n) in &trainables {
                if flat < n {
                    return (id, flat);
                }
                flat -= n;
            }
            unreachable!("flat coordinate within total")
        })
        .collect()
}

fn perturbed(store: &ParamStore<f64>, id: VarId, flat: usize, delta: f64) -> ParamStore<f64> {
    let mut out = store.clone();
    let arr = out.get_mut(id);
    let v = arr.as_slice_mut().expect("standard layout");
    v[flat] += delta;
    out
}

fn check_network<L>(
    name: &'static str,
    store: &ParamStore<f64>,
    grads: &ParamStore<f64>,
    schema: &Schema,
    cfg: &GradCheckConfig,
    steps: &[f64],
    rng: &mut ChaCha8Rng,
    mut loss_at: L,
) -> Result<NetworkCheck>
where
    L: FnMut(&ParamStore<f64>) -> Result<f64>,
{
    let coords = sample_coords(schema, cfg.weights_per_network, rng);
    let mut max_rel: f64 = 0.0;
    for (id, flat) in &coords {
        let analytic = grads.get(*id).as_slice().expect("standard layout")[*flat];
        // A coordinate's score is its best agreement across the step set:
        // see `run_gradcheck_scan` for why the minimum is the right statistic.
        let mut best = f64::INFINITY;
        for &h in steps {
            let plus = loss_at(&perturbed(store, *id, *flat, h))?;
            let minus = loss_at(&perturbed(store, *id, *flat, -h))?;
            let fd = (plus - minus) / (2.0 * h);
            best = best.min(rel_err(analytic, fd));
        }
        max_rel = max_rel.max(best);
    }
    Ok(NetworkCheck {
        name,
        checked: coords.len(),
        max_rel_err: max_rel,
    })
}

/// Probe sampled weights of all three networks against central differences
/// of their training objectives on the given batch, at the single step
/// `cfg.fd_step`.
pub fn run_gradcheck(
    cfg: &GradCheckConfig,
    x1: &Array4<f64>,
    y1: &Array4<f64>,
    x2: &Array4<f64>,
) -> Result<GradCheckReport> {
    run_gradcheck_scan(cfg, &[cfg.fd_step], x1, y1, x2)
}

/// Like [`run_gradcheck`], but evaluates every sampled weight at each step
/// in `steps` and scores it by the best agreement achieved.
///
/// The objectives are piecewise-smooth, and under training-mode batch norm
/// a weight nudge shifts the batch statistics, dragging every downstream
/// pre-activation; whenever some unit's ReLU crossing or some pixel's L1
/// tie lands inside the ±h bracket, that quotient picks up O(1) error that
/// no step size cures — but a given corner only contaminates brackets on
/// the order of its distance to the probe point, so the minimum over a
/// spread of steps isolates the analytic-vs-FD disagreement from bracket
/// noise. A genuinely wrong analytic gradient disagrees at every step and
/// still fails.
pub fn run_gradcheck_scan(
    cfg: &GradCheckConfig,
    steps: &[f64],
    x1: &Array4<f64>,
    y1: &Array4<f64>,
    x2: &Array4<f64>,
) -> Result<GradCheckReport> {
    if steps.is_empty() || steps.iter().any(|h| !h.is_finite() || *h <= 0.0) {
        return Err(Error::invalid(
            "finite-difference steps must be positive and finite",
        ));
    }
    let (n, c1, h, w) = x1.dim();
    if y1.dim() != (n, 3, h, w) || c1 != 3 || x2.dim() != (n, 6, h, w) {
        return Err(Error::invalid(
            "gradcheck batch must be x1/y1 (N,3,H,W) and x2 (N,6,H,W)",
        ));
    }
    let (g1, g2, disc) = cfg.arch.build_models()?;
    let g1_store: ParamStore<f64> = ParamStore::init(g1.schema(), derive_seed(&[cfg.seed, 21]));
    let g2_store: ParamStore<f64> = ParamStore::init(g2.schema(), derive_seed(&[cfg.seed, 22]));
    let d_store: ParamStore<f64> = ParamStore::init(disc.schema(), derive_seed(&[cfg.seed, 23]));
    let g1_seed = derive_seed(&[cfg.seed, 31]);
    let g2_seed = derive_seed(&[cfg.seed, 32]);

    // Generator objective as a pure function of the two generator stores.
    let g_loss = |g1s: &ParamStore<f64>, g2s: &ParamStore<f64>| -> Result<f64> {
        let (g1_out, g1_tape) = g1.forward(g1s, x1.view(), Mode::Train, g1_seed)?;
        let out = eval_g_path(
            &g1,
            &g2,
            &disc,
            g1s,
            g2s,
            &d_store,
            x1.view(),
            y1.view(),
            x2.view(),
            &g1_out,
            &g1_tape,
            g2_seed,
            cfg.lambda1,
            cfg.lambda2,
            false,
            None,
        )?;
        Ok(out.adv_g + cfg.lambda1 * out.l1 + cfg.lambda2 * out.l2)
    };

    // Analytic generator gradients via the shared generator-step backward.
    let mut g1_grads = ParamStore::zeros(g1.schema());
    let mut g2_grads = ParamStore::zeros(g2.schema());
    {
        let (g1_out, g1_tape) = g1.forward(&g1_store, x1.view(), Mode::Train, g1_seed)?;
        eval_g_path(
            &g1,
            &g2,
            &disc,
            &g1_store,
            &g2_store,
            &d_store,
            x1.view(),
            y1.view(),
            x2.view(),
            &g1_out,
            &g1_tape,
            g2_seed,
            cfg.lambda1,
            cfg.lambda2,
            false,
            Some((&mut g1_grads, &mut g2_grads)),
        )?;
    }

    // Discriminator objective: its own loss on (real, fixed fake).
    let (fake, _) = g1.forward(&g1_store, x1.view(), Mode::Train, g1_seed)?;
    let d_loss = |ds: &ParamStore<f64>| -> Result<f64> {
        let (rl, _) = disc.forward(ds, x1.view(), y1.view(), Mode::Train)?;
        let (fl, _) = disc.forward(ds, x1.view(), fake.view(), Mode::Train)?;
        Ok(adversarial_d_loss(rl.view(), fl.view()))
    };
    let mut d_grads = ParamStore::zeros(disc.schema());
    {
        let (rl, rt) = disc.forward(&d_store, x1.view(), y1.view(), Mode::Train)?;
        let (fl, ft) = disc.forward(&d_store, x1.view(), fake.view(), Mode::Train)?;
        let d_real = bce_with_logits_grad(rl.view(), 1.0, 0.5);
        let d_fake = bce_with_logits_grad(fl.view(), 0.0, 0.5);
        disc.backward(&d_store, &rt, d_real.view(), &mut d_grads);
        disc.backward(&d_store, &ft, d_fake.view(), &mut d_grads);
    }

    let mut rng = crate::nn::ops::seeded_rng(derive_seed(&[cfg.seed, 41]), 0);
    let networks = vec![
        check_network(
            "restoration_generator",
            &g1_store,
            &g1_grads,
            g1.schema(),
            cfg,
            steps,
            &mut rng,
            |s| g_loss(s, &g2_store),
        )?,
        check_network(
            "degradation_generator",
            &g2_store,
            &g2_grads,
            g2.schema(),
            cfg,
            steps,
            &mut rng,
            |s| g_loss(&g1_store, s),
        )?,
        check_network(
            "patch_discriminator",
            &d_store,
            &d_grads,
            disc.schema(),
            cfg,
            steps,
            &mut rng,
            d_loss,
        )?,
    ];
    Ok(GradCheckReport { networks })
}

//! The five toolkit commands, as library functions the `dewater` binary
//! wraps.
//!
//! Commands write their artifacts to disk and return the warnings they
//! accumulated; the binary maps no-warnings to exit 0, warnings to exit 2
//! and `Err` to exit 1. Rerunning a command with the same inputs, config
//! and seed reproduces its report files byte-for-byte — run-dependent facts
//! (cache hits, skip notices) go to the log, never into an artifact.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use serde::Serialize;

use crate::config::RunConfig;
use crate::dataset::{prepare_to_cache, PipelineOptions, PrepareReport, SampleSet, Split, SplitManifest};
use crate::error::{Error, Result};
use crate::image::{DepthMap, ImageTensor, VeilingLightField};
use crate::imageio::{crop_to, list_images, load_image, pad_to_multiple, save_png};
use crate::metrics::{build_report, MetricsReport, ReportEntry};
use crate::train::{derive_seed, TrainHistory, Trainer};
use crate::uifm::{compose_underwater, duntley_radiance, transmission_from_depth, DuntleyParams};

/// Split manifest file name inside the cache directory.
pub const MANIFEST_FILE: &str = "manifest.json";
/// Preparation report file name inside the cache directory.
pub const PREPARE_REPORT_FILE: &str = "prepare_report.json";
/// Loss history file name inside the training output directory.
pub const HISTORY_FILE: &str = "history.csv";
/// Category directory synthesized pairs are written under.
pub const SYNTH_CATEGORY: &str = "synthetic";
/// Suffix appended to restored image stems.
pub const DEWATERED_SUFFIX: &str = "_dewatered";

/// Non-fatal problems a command ran into. Any entry means exit code 2.
#[derive(Debug, Default)]
pub struct Outcome {
    pub warnings: Vec<String>,
}

impl Outcome {
    /// Record a warning and surface it immediately on stderr.
    fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        eprintln!("warning: {msg}");
        self.warnings.push(msg);
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

// ---------------------------------------------------------------------------
// prepare-data

#[derive(Serialize)]
struct SkipArtifact {
    path: String,
    reason: String,
}

/// The on-disk preparation report. Deliberately excludes cache hits — those
/// describe a particular run, and the report must not change across reruns.
#[derive(Serialize)]
struct PrepareArtifact {
    pairs: usize,
    samples: usize,
    train_samples: usize,
    test_samples: usize,
    clamped_target_values: usize,
    examined_target_values: usize,
    skipped: Vec<SkipArtifact>,
}

/// Scan `root`, fill the sample cache, and write the split manifest plus a
/// preparation report into `cache_dir`.
pub fn cmd_prepare_data(
    root: &Path,
    cache_dir: &Path,
    opts: &PipelineOptions,
) -> Result<(PrepareReport, Outcome)> {
    let mut outcome = Outcome::default();
    let report = prepare_to_cache(root, cache_dir, opts)?;
    for skip in &report.skipped {
        outcome.warn(format!("skipped {}: {}", skip.path.display(), skip.reason));
    }
    match &report.manifest {
        Some(manifest) => manifest.save(&cache_dir.join(MANIFEST_FILE))?,
        None if report.samples == 0 => {
            outcome.warn(format!("no samples prepared from {}", root.display()));
        }
        None => outcome.warn(format!(
            "{} sample(s) is too few to split; no manifest written",
            report.samples
        )),
    }
    let artifact = PrepareArtifact {
        pairs: report.pairs,
        samples: report.samples,
        train_samples: report.manifest.as_ref().map_or(0, |m| m.train_ids.len()),
        test_samples: report.manifest.as_ref().map_or(0, |m| m.test_ids.len()),
        clamped_target_values: report.clamp.clamped,
        examined_target_values: report.clamp.total,
        skipped: report
            .skipped
            .iter()
            .map(|s| SkipArtifact {
                path: s.path.display().to_string(),
                reason: s.reason.clone(),
            })
            .collect(),
    };
    let mut json = serde_json::to_string_pretty(&artifact)?;
    json.push('\n');
    write_file(&cache_dir.join(PREPARE_REPORT_FILE), json)?;
    println!(
        "prepared {} samples from {} pairs ({} from cache), split {}/{}, clamped {}/{} target values",
        report.samples,
        report.pairs,
        report.cache_hits,
        artifact.train_samples,
        artifact.test_samples,
        report.clamp.clamped,
        report.clamp.total,
    );
    Ok((report, outcome))
}

// ---------------------------------------------------------------------------
// train

/// Newest checkpoint in `dir`: the final one if present, otherwise the
/// highest-numbered periodic one.
fn latest_checkpoint(dir: &Path) -> Option<PathBuf> {
    let final_path = dir.join("checkpoint_final.ckpt");
    if final_path.is_file() {
        return Some(final_path);
    }
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in std::fs::read_dir(dir).ok()?.flatten() {
        let path = entry.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(epoch) = name
            .strip_prefix("checkpoint_epoch_")
            .and_then(|s| s.strip_suffix(".ckpt"))
            .and_then(|s| s.parse::<usize>().ok())
        else {
            continue;
        };
        if best.as_ref().is_none_or(|(e, _)| epoch > *e) {
            best = Some((epoch, path));
        }
    }
    best.map(|(_, path)| path)
}

/// Train on the prepared cache named by the config, writing checkpoints and
/// a per-epoch loss history CSV into `out_dir`. With `resume`, training
/// continues from `cfg.checkpoint` (or the newest checkpoint in `out_dir`)
/// under the schedule stored in that checkpoint.
pub fn cmd_train(cfg: &RunConfig, resume: bool) -> Result<(TrainHistory, Outcome)> {
    let cache_dir = cfg
        .cache_dir
        .as_deref()
        .ok_or_else(|| Error::Config("cache_dir is required for training".into()))?;
    let out_dir = cfg
        .out_dir
        .as_deref()
        .ok_or_else(|| Error::Config("out_dir is required for training".into()))?;
    let manifest_path = cache_dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(Error::invalid(format!(
            "no split manifest at {}: run prepare-data first",
            manifest_path.display()
        )));
    }
    let manifest = SplitManifest::load(&manifest_path)?;
    let opts = cfg.train_options();
    let train_set = SampleSet::load_split(cache_dir, &manifest, Split::Train, opts.shuffle_seed)?;
    ensure_dir(out_dir)?;

    let mut trainer = if resume {
        let source = match &cfg.checkpoint {
            Some(path) => path.clone(),
            None => latest_checkpoint(out_dir).ok_or_else(|| {
                Error::Checkpoint(format!(
                    "nothing to resume from in {}",
                    out_dir.display()
                ))
            })?,
        };
        println!("resuming from {}", source.display());
        Trainer::load_checkpoint(&source)?
    } else {
        Trainer::new(cfg.arch_config(), opts)?
    };

    let total = trainer.options().epochs;
    println!(
        "training on {} samples for {} epochs (batch {})",
        train_set.len(),
        total,
        trainer.options().batch_size
    );
    let history = trainer.train_observed(&train_set, Some(out_dir), &mut |stats| {
        let l = &stats.losses;
        println!(
            "epoch {:>4}/{}  adv_d {:.6}  adv_g {:.6}  l1_g1 {:.6}  l2_g2 {:.6}  total_g {:.6}",
            stats.epoch, total, l.adv_d, l.adv_g, l.l1_g1, l.l2_g2, l.total_g
        );
    })?;

    let csv_path = out_dir.join(HISTORY_FILE);
    if resume && csv_path.is_file() {
        let mut text = std::fs::read_to_string(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        for row in &history.rows {
            text.push_str(&row.csv_row());
        }
        write_file(&csv_path, text)?;
    } else {
        write_file(&csv_path, history.to_csv())?;
    }
    Ok((history, Outcome::default()))
}

// ---------------------------------------------------------------------------
// dewater

/// Restore a single image or every image in a directory with the checkpoint
/// generator. Inputs are reflect-padded up to the generator's size multiple
/// and cropped back, so output dimensions always equal input dimensions.
pub fn cmd_dewater(
    checkpoint: &Path,
    input: &Path,
    out_dir: &Path,
    seed: u64,
) -> Result<(Vec<PathBuf>, Outcome)> {
    let trainer = Trainer::load_checkpoint(checkpoint)?;
    let multiple = 1usize << trainer.arch().depth;
    let inputs = if input.is_dir() {
        list_images(input)?
    } else {
        vec![input.to_path_buf()]
    };
    if inputs.is_empty() {
        return Err(Error::invalid(format!(
            "no images found in {}",
            input.display()
        )));
    }
    ensure_dir(out_dir)?;
    let mut outcome = Outcome::default();
    let mut written = Vec::new();
    for (i, path) in inputs.iter().enumerate() {
        let img = match load_image(path) {
            Ok(img) => img,
            Err(e) => {
                outcome.warn(format!("skipping {}: {e}", path.display()));
                continue;
            }
        };
        let (h, w) = (img.height(), img.width());
        let padded = pad_to_multiple(&img, multiple)?;
        let restored = trainer.restore(&padded, derive_seed(&[seed, i as u64]))?;
        let cropped = crop_to(&restored, h, w)?;
        let out_path = out_dir.join(format!("{}{DEWATERED_SUFFIX}.png", stem_of(path)));
        save_png(&out_path, &cropped)?;
        println!("{} -> {}", path.display(), out_path.display());
        written.push(out_path);
    }
    if written.is_empty() {
        return Err(Error::invalid("no images could be processed"));
    }
    Ok((written, outcome))
}

// ---------------------------------------------------------------------------
// evaluate

/// Stems are matched with any restoration suffix removed, so dewater output
/// can be scored directly against the original references.
fn eval_stem(path: &Path) -> String {
    let stem = stem_of(path);
    stem.strip_suffix(DEWATERED_SUFFIX)
        .map(str::to_string)
        .unwrap_or(stem)
}

fn stem_index(paths: Vec<PathBuf>, label: &str) -> Result<BTreeMap<String, PathBuf>> {
    let mut map = BTreeMap::new();
    for path in paths {
        let stem = eval_stem(&path);
        if let Some(previous) = map.insert(stem.clone(), path.clone()) {
            return Err(Error::invalid(format!(
                "ambiguous {label} stem {stem:?}: {} and {}",
                previous.display(),
                path.display()
            )));
        }
    }
    Ok(map)
}

/// Score predictions against references (all four metrics) or alone
/// (no-reference quality only), writing `metrics.csv` and `metrics.json`
/// into `out_dir`.
pub fn cmd_evaluate(
    pred_dir: &Path,
    ref_dir: Option<&Path>,
    out_dir: &Path,
) -> Result<(MetricsReport, Outcome)> {
    let mut outcome = Outcome::default();
    let preds = stem_index(list_images(pred_dir)?, "prediction")?;
    if preds.is_empty() {
        return Err(Error::invalid(format!(
            "no prediction images in {}",
            pred_dir.display()
        )));
    }
    let refs = match ref_dir {
        Some(dir) => Some(stem_index(list_images(dir)?, "reference")?),
        None => None,
    };

    let mut entries = Vec::new();
    for (stem, pred_path) in &preds {
        let reference = match &refs {
            None => None,
            Some(refs) => match refs.get(stem) {
                Some(ref_path) => {
                    let reference = load_image(ref_path)?;
                    let pred_probe = load_image(pred_path)?;
                    if (reference.height(), reference.width())
                        != (pred_probe.height(), pred_probe.width())
                    {
                        outcome.warn(format!(
                            "skipping {stem:?}: prediction is {}x{} but reference is {}x{}",
                            pred_probe.height(),
                            pred_probe.width(),
                            reference.height(),
                            reference.width()
                        ));
                        continue;
                    }
                    entries.push(ReportEntry {
                        image_id: stem.clone(),
                        pred: pred_probe,
                        reference: Some(reference),
                    });
                    continue;
                }
                None => {
                    outcome.warn(format!("no reference for prediction {stem:?}"));
                    continue;
                }
            },
        };
        entries.push(ReportEntry {
            image_id: stem.clone(),
            pred: load_image(pred_path)?,
            reference,
        });
    }
    if let Some(refs) = &refs {
        for stem in refs.keys() {
            if !preds.contains_key(stem) {
                outcome.warn(format!("no prediction for reference {stem:?}"));
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::invalid("no image pairs to evaluate"));
    }

    let dataset_id = ref_dir.map_or_else(|| "no-reference".to_string(), dir_label);
    let report = build_report(&dataset_id, &dir_label(pred_dir), &entries)?;
    ensure_dir(out_dir)?;
    write_file(&out_dir.join("metrics.csv"), report.to_csv())?;
    write_file(&out_dir.join("metrics.json"), report.to_json()?)?;
    let agg = &report.aggregate;
    println!(
        "evaluated {} image(s): ed_avg {}  psnr {}  ssim {}  uiqm {}",
        report.per_image.len(),
        fmt_cell(agg.ed_avg),
        fmt_cell(agg.psnr_db),
        fmt_cell(agg.ssim),
        fmt_cell(agg.uiqm),
    );
    Ok((report, outcome))
}

fn dir_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

// ---------------------------------------------------------------------------
// synthesize

/// Depth field specification for synthesis.
#[derive(Debug, Clone, Copy, PartialEq)]
enum DepthSpec {
    Constant(f64),
    /// Linear ramp from `near` at the top row to `far` at the bottom row.
    Gradient { near: f64, far: f64 },
}

impl DepthSpec {
    fn build(&self, height: usize, width: usize) -> Result<DepthMap> {
        match *self {
            DepthSpec::Constant(d) => DepthMap::constant(height, width, d),
            DepthSpec::Gradient { near, far } => {
                let rows = (height.max(2) - 1) as f64;
                DepthMap::new(Array2::from_shape_fn((height, width), |(y, _)| {
                    near + (far - near) * y as f64 / rows
                }))
            }
        }
    }

    fn max_depth(&self) -> f64 {
        match *self {
            DepthSpec::Constant(d) => d,
            DepthSpec::Gradient { near, far } => near.max(far),
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let bad = |d: f64| !d.is_finite() || d < 0.0;
        let offender = match *self {
            DepthSpec::Constant(d) if bad(d) => Some(d),
            DepthSpec::Gradient { near, .. } if bad(near) => Some(near),
            DepthSpec::Gradient { far, .. } if bad(far) => Some(far),
            _ => None,
        };
        match offender {
            Some(d) => Err(format!("depth {d} must be finite and non-negative")),
            None => Ok(()),
        }
    }
}

/// How the water column degrades a clean image.
#[derive(Debug, Clone, Copy, PartialEq)]
enum WaterModel {
    /// Exponential attenuation with a uniform veiling light.
    Attenuation { beta: [f64; 3], a: [f64; 3] },
    /// Full radiative path: per-channel attenuation of the signal plus a
    /// diffusely attenuated ambient buildup along a path inclined `theta`
    /// from vertical.
    Radiative {
        alpha: [f64; 3],
        ambient: [f64; 3],
        k: [f64; 3],
        theta: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct SynthParams {
    model: WaterModel,
    depth: DepthSpec,
}

/// One `key = value` with the line it came from, for diagnostics.
#[derive(Debug, Clone, Default)]
struct ParamDraft {
    beta: Option<([f64; 3], usize)>,
    a: Option<([f64; 3], usize)>,
    alpha: Option<([f64; 3], usize)>,
    ambient: Option<([f64; 3], usize)>,
    k: Option<([f64; 3], usize)>,
    theta: Option<(f64, usize)>,
    depth: Option<(DepthSpec, usize)>,
}

impl ParamDraft {
    /// Section values fall back to the global draft key by key.
    fn or(&self, global: &ParamDraft) -> ParamDraft {
        ParamDraft {
            beta: self.beta.or(global.beta),
            a: self.a.or(global.a),
            alpha: self.alpha.or(global.alpha),
            ambient: self.ambient.or(global.ambient),
            k: self.k.or(global.k),
            theta: self.theta.or(global.theta),
            depth: self.depth.or(global.depth),
        }
    }
}

fn parse_triple(value: &str) -> std::result::Result<[f64; 3], String> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated numbers, got {value:?}"));
    }
    let mut out = [0.0; 3];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = part
            .parse()
            .map_err(|e| format!("cannot parse {part:?}: {e}"))?;
    }
    Ok(out)
}

fn parse_scalar(value: &str) -> std::result::Result<f64, String> {
    value
        .parse()
        .map_err(|e| format!("cannot parse {value:?}: {e}"))
}

fn parse_depth(value: &str) -> std::result::Result<DepthSpec, String> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    match parts.as_slice() {
        ["constant", d] => Ok(DepthSpec::Constant(parse_scalar(d)?)),
        ["gradient", near, far] => Ok(DepthSpec::Gradient {
            near: parse_scalar(near)?,
            far: parse_scalar(far)?,
        }),
        _ => Err(format!(
            "expected `constant <meters>` or `gradient <near> <far>`, got {value:?}"
        )),
    }
}

/// Parse a synthesis params file: global `key = value` lines, then optional
/// `[stem]` sections overriding them per image.
fn parse_params_file(
    path: &Path,
) -> Result<(ParamDraft, BTreeMap<String, ParamDraft>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut global = ParamDraft::default();
    let mut sections: BTreeMap<String, ParamDraft> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let at =
            |msg: String| Error::Config(format!("{}:{}: {msg}", path.display(), i + 1));
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(stem) = line.strip_prefix('[') {
            let stem = stem
                .strip_suffix(']')
                .ok_or_else(|| at(format!("unterminated section header {line:?}")))?
                .trim();
            if stem.is_empty() {
                return Err(at("empty section name".to_string()));
            }
            if sections.contains_key(stem) {
                return Err(at(format!("duplicate section [{stem}]")));
            }
            sections.insert(stem.to_string(), ParamDraft::default());
            current = Some(stem.to_string());
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| at(format!("expected `key = value`, got {line:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        let draft = match &current {
            Some(stem) => sections.get_mut(stem).expect("section was inserted"),
            None => &mut global,
        };
        let dup = |line_no: usize| {
            at(format!("duplicate key {key:?} (first set on line {line_no})"))
        };
        match key {
            "beta" => {
                if let Some((_, l)) = draft.beta {
                    return Err(dup(l));
                }
                draft.beta = Some((parse_triple(value).map_err(at)?, i + 1));
            }
            "a" => {
                if let Some((_, l)) = draft.a {
                    return Err(dup(l));
                }
                draft.a = Some((parse_triple(value).map_err(at)?, i + 1));
            }
            "alpha" => {
                if let Some((_, l)) = draft.alpha {
                    return Err(dup(l));
                }
                draft.alpha = Some((parse_triple(value).map_err(at)?, i + 1));
            }
            "ambient" => {
                if let Some((_, l)) = draft.ambient {
                    return Err(dup(l));
                }
                draft.ambient = Some((parse_triple(value).map_err(at)?, i + 1));
            }
            "k" => {
                if let Some((_, l)) = draft.k {
                    return Err(dup(l));
                }
                draft.k = Some((parse_triple(value).map_err(at)?, i + 1));
            }
            "theta" => {
                if let Some((_, l)) = draft.theta {
                    return Err(dup(l));
                }
                draft.theta = Some((parse_scalar(value).map_err(at)?, i + 1));
            }
            "depth" => {
                if let Some((_, l)) = draft.depth {
                    return Err(dup(l));
                }
                draft.depth = Some((parse_depth(value).map_err(at)?, i + 1));
            }
            other => {
                return Err(at(format!(
                    "unknown key {other:?} (expected beta, a, alpha, ambient, k, theta or depth)"
                )))
            }
        }
    }
    Ok((global, sections))
}

/// Turn a merged draft into one image's synthesis parameters, rejecting
/// mixed or incomplete model specifications.
fn resolve_params(stem: &str, draft: &ParamDraft, path: &Path) -> Result<SynthParams> {
    let fail = |msg: String| Error::Config(format!("{} [{stem}]: {msg}", path.display()));
    let radiative_lines: Vec<usize> = [
        draft.alpha.map(|(_, l)| l),
        draft.ambient.map(|(_, l)| l),
        draft.k.map(|(_, l)| l),
        draft.theta.map(|(_, l)| l),
    ]
    .into_iter()
    .flatten()
    .collect();
    let (depth, depth_line) = draft
        .depth
        .ok_or_else(|| fail("missing `depth` (constant or gradient)".to_string()))?;
    depth
        .validate()
        .map_err(|msg| fail(format!("{msg} (line {depth_line})")))?;
    let model = match (draft.beta, radiative_lines.first()) {
        (Some((_, beta_line)), Some(rad_line)) => {
            return Err(fail(format!(
                "mixes attenuation (`beta`, line {beta_line}) with radiative keys (line {rad_line}); pick one model"
            )))
        }
        (Some((beta, _)), None) => {
            let (a, _) = draft
                .a
                .ok_or_else(|| fail("missing `a` (veiling light) for the beta model".to_string()))?;
            WaterModel::Attenuation { beta, a }
        }
        (None, Some(_)) => {
            let (alpha, _) = draft
                .alpha
                .ok_or_else(|| fail("missing `alpha` for the radiative model".to_string()))?;
            let (ambient, _) = draft.ambient.ok_or_else(|| {
                fail("missing `ambient` for the radiative model".to_string())
            })?;
            let (k, _) = draft
                .k
                .ok_or_else(|| fail("missing `k` for the radiative model".to_string()))?;
            let theta = draft.theta.map_or(0.0, |(v, _)| v);
            WaterModel::Radiative {
                alpha,
                ambient,
                k,
                theta,
            }
        }
        (None, None) => {
            return Err(fail(
                "no water model: set `beta` + `a`, or `alpha` + `ambient` + `k`".to_string(),
            ))
        }
    };
    let params = SynthParams { model, depth };
    // Validate once per channel with a probe evaluation so bad parameters
    // fail here, with file context, instead of mid-image.
    match params.model {
        WaterModel::Attenuation { beta, a } => {
            for (b, a_c) in beta.iter().zip(a) {
                if !b.is_finite() || *b < 0.0 {
                    return Err(fail(format!(
                        "beta component {b} must be finite and non-negative (line {})",
                        draft.beta.expect("beta mode").1
                    )));
                }
                if !a_c.is_finite() || !(0.0..=1.0).contains(&a_c) {
                    return Err(fail(format!(
                        "veiling component {a_c} outside [0, 1] (line {})",
                        draft.a.expect("beta mode").1
                    )));
                }
            }
        }
        WaterModel::Radiative {
            alpha,
            ambient,
            k,
            theta,
        } => {
            for c in 0..3 {
                let probe = DuntleyParams {
                    inherent_radiance: 0.0,
                    ambient_radiance: ambient[c],
                    alpha: alpha[c],
                    k: k[c],
                    theta,
                    range: params.depth.max_depth(),
                };
                probe
                    .validate()
                    .map_err(|e| fail(format!("channel {c}: {e}")))?;
            }
        }
    }
    Ok(params)
}

fn synthesize_one(clean: &ImageTensor, params: &SynthParams) -> Result<ImageTensor> {
    let (h, w) = (clean.height(), clean.width());
    let depth = params.depth.build(h, w)?;
    match params.model {
        WaterModel::Attenuation { beta, a } => {
            let (t, _) = transmission_from_depth(&depth, beta)?;
            let veiling = VeilingLightField::uniform(h, w, a)?;
            let (underwater, _) = compose_underwater(clean, &t, &veiling)?;
            Ok(underwater)
        }
        WaterModel::Radiative {
            alpha,
            ambient,
            k,
            theta,
        } => {
            let mut out = Array3::zeros((h, w, 3));
            for ((y, x, c), v) in out.indexed_iter_mut() {
                let (clamped, _) = duntley_radiance(&DuntleyParams {
                    inherent_radiance: clean.data()[[y, x, c]],
                    ambient_radiance: ambient[c],
                    alpha: alpha[c],
                    k: k[c],
                    theta,
                    range: depth.data()[[y, x]],
                })?;
                *v = clamped;
            }
            ImageTensor::new(out)
        }
    }
}

/// Degrade every clean image through a parameterized water column, writing
/// `underwater/` + `reference/` pairs in the dataset layout under
/// `out_dir/synthetic/`. `_seed` is accepted for CLI uniformity; synthesis
/// is fully deterministic and consumes no randomness.
pub fn cmd_synthesize(
    clean_dir: &Path,
    params_file: &Path,
    out_dir: &Path,
    _seed: u64,
) -> Result<(Vec<PathBuf>, Outcome)> {
    let (global, sections) = parse_params_file(params_file)?;
    let inputs = list_images(clean_dir)?;
    if inputs.is_empty() {
        return Err(Error::invalid(format!(
            "no clean images in {}",
            clean_dir.display()
        )));
    }
    let stems: BTreeMap<String, &PathBuf> =
        inputs.iter().map(|p| (stem_of(p), p)).collect();
    for stem in sections.keys() {
        if !stems.contains_key(stem) {
            return Err(Error::Config(format!(
                "{}: section [{stem}] names no image in {}",
                params_file.display(),
                clean_dir.display()
            )));
        }
    }

    let uw_dir = out_dir.join(SYNTH_CATEGORY).join("underwater");
    let ref_dir = out_dir.join(SYNTH_CATEGORY).join("reference");
    ensure_dir(&uw_dir)?;
    ensure_dir(&ref_dir)?;
    let mut outcome = Outcome::default();
    let mut written = Vec::new();
    for (stem, path) in &stems {
        let draft = sections
            .get(stem)
            .map_or_else(|| global.clone(), |s| s.or(&global));
        let params = resolve_params(stem, &draft, params_file)?;
        let clean = match load_image(path) {
            Ok(img) => img,
            Err(e) => {
                outcome.warn(format!("skipping {}: {e}", path.display()));
                continue;
            }
        };
        let underwater = synthesize_one(&clean, &params)?;
        save_png(&ref_dir.join(format!("{stem}.png")), &clean)?;
        let uw_path = uw_dir.join(format!("{stem}.png"));
        save_png(&uw_path, &underwater)?;
        written.push(uw_path);
    }
    if written.is_empty() {
        return Err(Error::invalid("no images could be synthesized"));
    }
    println!(
        "synthesized {} pair(s) under {}",
        written.len(),
        out_dir.join(SYNTH_CATEGORY).display()
    );
    Ok((written, outcome))
}

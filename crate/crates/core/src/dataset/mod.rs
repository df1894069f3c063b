//! The data-preparation pipeline: scan paired image folders, quadrisect,
//! resize, precompute physics targets, cache to disk, and split train/test.
//!
//! The pipeline is a pure function of (directory contents, options): reruns
//! reproduce every sample bit-for-bit whether they compute or hit the cache,
//! because freshly computed samples are rounded to the cache's float32
//! storage precision before anyone sees them.

pub mod cache;
pub mod scan;
pub mod set;
pub mod split;
pub mod transform;

use std::path::{Path, PathBuf};

use ndarray::{s, Array3};

use crate::error::{Error, Result};
use crate::image::{ClampStats, ImageTensor, TransmissionMap, VeilingLightField};
use crate::imageio::decode_bytes;

pub use cache::{
    load_sample, probe_sample, quantize_to_storage, sample_cache_key, save_sample, scan_cache,
    CacheKeyParams, SampleInfo,
};
pub use scan::{scan_dataset, RawPair, ScanReport, SkippedFile};
pub use set::SampleSet;
pub use split::{make_split, make_split_with_fraction, Split, SplitManifest, TRAIN_FRACTION};
pub use transform::{
    augment_flips, flip_sample, precompute_targets, quadrisect, resize_bilinear,
};

/// Seed used across the toolkit when none is configured.
pub const DEFAULT_SEED: u64 = 17;

/// Training side length samples are resized to by default.
pub const DEFAULT_TRAIN_SIZE: usize = 256;

/// One training-ready sample: a degraded input, its clean reference, and
/// the physics targets derived from the pair after all geometry transforms.
#[derive(Debug, Clone)]
pub struct PairedSample {
    /// Degraded (underwater) input.
    pub x1: ImageTensor,
    /// Clean reference.
    pub y1: ImageTensor,
    /// Closed-form transmission target.
    pub t: TransmissionMap,
    /// Gray-world veiling-light estimate.
    pub a: VeilingLightField,
    /// `category/stem` plus a `.qN` quadrant suffix when quadrisecting.
    pub sample_id: String,
}

impl PairedSample {
    /// The physics branch's target stack: transmission and veiling light as
    /// one `(H, W, 6)` array, channels `[t_r, t_g, t_b, a_r, a_g, a_b]`.
    pub fn x2(&self) -> Array3<f64> {
        let (h, w) = (self.t.height(), self.t.width());
        let mut out = Array3::zeros((h, w, 6));
        out.slice_mut(s![.., .., 0..3]).assign(self.t.data());
        out.slice_mut(s![.., .., 3..6]).assign(self.a.data());
        out
    }
}

/// Knobs of the preparation pipeline. Everything except `train_fraction`
/// participates in the cache key (splitting happens downstream of caching).
#[derive(Debug, Clone, Copy)]
pub struct PipelineOptions {
    /// Side length samples are resized to after quadrisection.
    pub train_size: usize,
    /// Cut each source pair into four quadrants before resizing.
    pub quadrisect: bool,
    /// Fraction of samples assigned to the training split.
    pub train_fraction: f64,
    /// Seed deciding split membership.
    pub seed: u64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            train_size: DEFAULT_TRAIN_SIZE,
            quadrisect: true,
            train_fraction: TRAIN_FRACTION,
            seed: DEFAULT_SEED,
        }
    }
}

/// What a preparation run found and did.
#[derive(Debug, Clone)]
pub struct PrepareReport {
    /// Source image pairs the scan matched up.
    pub pairs: usize,
    /// Prepared samples (pairs × quadrants).
    pub samples: usize,
    /// Samples served from the cache without recomputation.
    pub cache_hits: usize,
    /// Files the scan skipped, with reasons.
    pub skipped: Vec<SkippedFile>,
    /// Aggregate clamping during target precomputation (reproduced from
    /// cache headers on hits, so reruns report identical numbers).
    pub clamp: ClampStats,
    /// Train/test membership; `None` when fewer than two samples exist.
    pub manifest: Option<SplitManifest>,
}

/// Run the full pipeline and keep every prepared sample in memory.
pub fn prepare_samples(
    root: &Path,
    cache_dir: Option<&Path>,
    opts: &PipelineOptions,
) -> Result<(Vec<PairedSample>, PrepareReport)> {
    run_pipeline(root, cache_dir, opts, true)
}

/// Run the full pipeline for the cache's sake only: samples are written (or
/// confirmed present) and dropped, never accumulated. Use this for
/// full-scale datasets.
pub fn prepare_to_cache(
    root: &Path,
    cache_dir: &Path,
    opts: &PipelineOptions,
) -> Result<PrepareReport> {
    run_pipeline(root, Some(cache_dir), opts, false).map(|(_, report)| report)
}

fn sample_id_for(pair: &RawPair, quadrisect: bool, quadrant: usize) -> String {
    if quadrisect {
        format!("{}/{}.q{quadrant}", pair.category, pair.stem)
    } else {
        format!("{}/{}", pair.category, pair.stem)
    }
}

fn run_pipeline(
    root: &Path,
    cache_dir: Option<&Path>,
    opts: &PipelineOptions,
    collect: bool,
) -> Result<(Vec<PairedSample>, PrepareReport)> {
    if opts.train_size < 1 {
        return Err(Error::invalid("train_size must be >= 1"));
    }
    if !(0.0..=1.0).contains(&opts.train_fraction) {
        return Err(Error::invalid(format!(
            "train fraction {} must lie in [0, 1]",
            opts.train_fraction
        )));
    }
    let scanned = scan_dataset(root)?;
    if let Some(dir) = cache_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let quadrants = if opts.quadrisect { 4 } else { 1 };
    let mut samples = Vec::new();
    let mut ids = Vec::with_capacity(scanned.pairs.len() * quadrants);
    let mut cache_hits = 0usize;
    let mut clamp = ClampStats::default();

    for pair in &scanned.pairs {
        let in_pair = |e: Error| {
            Error::invalid(format!("{}/{}: {e}", pair.category, pair.stem))
        };
        let uw_bytes = std::fs::read(&pair.underwater_path)
            .map_err(|e| Error::io(&pair.underwater_path, e))?;
        let gt_bytes = std::fs::read(&pair.groundtruth_path)
            .map_err(|e| Error::io(&pair.groundtruth_path, e))?;
        let pair_ids: Vec<String> = (0..quadrants)
            .map(|qi| sample_id_for(pair, opts.quadrisect, qi))
            .collect();
        let cache_paths: Option<Vec<PathBuf>> = cache_dir.map(|dir| {
            pair_ids
                .iter()
                .enumerate()
                .map(|(qi, id)| {
                    dir.join(sample_cache_key(
                        &uw_bytes,
                        &gt_bytes,
                        &CacheKeyParams {
                            sample_id: id,
                            seed: opts.seed,
                            train_size: opts.train_size,
                            quadrisect: opts.quadrisect,
                            quadrant: qi,
                        },
                    ))
                })
                .collect()
        });

        // Fast path: every quadrant of this pair is already cached.
        if let Some(paths) = cache_paths
            .as_ref()
            .filter(|paths| paths.iter().all(|p| p.is_file()))
        {
            for (id, path) in pair_ids.iter().zip(paths) {
                let info = probe_sample(path)?;
                if info.sample_id != *id
                    || info.height != opts.train_size
                    || info.width != opts.train_size
                {
                    return Err(Error::invalid(format!(
                        "cache file {} holds {:?} ({}x{}), expected {id:?} ({}x{})",
                        path.display(),
                        info.sample_id,
                        info.height,
                        info.width,
                        opts.train_size,
                        opts.train_size,
                    )));
                }
                clamp.merge(info.clamp);
                if collect {
                    samples.push(load_sample(path)?);
                }
                ids.push(id.clone());
                cache_hits += 1;
            }
            continue;
        }

        // Slow path: decode, transform, cache.
        let uw = decode_bytes(&uw_bytes, &pair.underwater_path)?;
        let gt = decode_bytes(&gt_bytes, &pair.groundtruth_path)?;
        let crops: Vec<(ImageTensor, ImageTensor)> = if opts.quadrisect {
            let u4 = quadrisect(&uw).map_err(in_pair)?;
            let g4 = quadrisect(&gt).map_err(in_pair)?;
            u4.into_iter().zip(g4).collect()
        } else {
            vec![(uw, gt)]
        };
        for (qi, (u, g)) in crops.into_iter().enumerate() {
            let x1 = resize_bilinear(&u, opts.train_size, opts.train_size).map_err(in_pair)?;
            let y1 = resize_bilinear(&g, opts.train_size, opts.train_size).map_err(in_pair)?;
            let (t, a, stats) = precompute_targets(&x1, &y1).map_err(in_pair)?;
            clamp.merge(stats);
            let sample = PairedSample {
                x1,
                y1,
                t,
                a,
                sample_id: pair_ids[qi].clone(),
            };
            if let Some(paths) = &cache_paths {
                save_sample(&paths[qi], &sample, stats)?;
            }
            if collect {
                samples.push(quantize_to_storage(&sample));
            }
            ids.push(pair_ids[qi].clone());
        }
    }

    samples.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    ids.sort();
    let manifest = if ids.len() >= 2 {
        Some(make_split_with_fraction(&ids, opts.seed, opts.train_fraction)?)
    } else {
        None
    };
    let report = PrepareReport {
        pairs: scanned.pairs.len(),
        samples: ids.len(),
        cache_hits,
        skipped: scanned.skipped,
        clamp,
        manifest,
    };
    Ok((samples, report))
}

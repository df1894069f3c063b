//! In-memory sample collections that serve training batches.

use std::path::Path;

use ndarray::Array4;

use crate::dataset::cache::{load_sample, scan_cache};
use crate::dataset::split::{Split, SplitManifest};
use crate::dataset::transform::augment_flips;
use crate::dataset::PairedSample;
use crate::error::{Error, Result};
use crate::nn::ops::seeded_rng;
use crate::train::{derive_seed, epoch_order, BatchSource, TrainBatch};

/// Samples of one split, ready to batch. With augmentation enabled each
/// `(epoch, sample)` pair draws its own flip decisions, so an epoch sees
/// every sample exactly once but under fresh flips, reproducibly.
pub struct SampleSet {
    samples: Vec<PairedSample>,
    augment: bool,
    flip_seed: u64,
}

impl SampleSet {
    pub fn new(samples: Vec<PairedSample>, augment: bool, flip_seed: u64) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::invalid("a sample set needs at least one sample"));
        };
        let (h, w) = (first.x1.height(), first.x1.width());
        for s in &samples {
            if (s.x1.height(), s.x1.width()) != (h, w) {
                return Err(Error::invalid(format!(
                    "sample {} is {}x{} but the set is {h}x{w}",
                    s.sample_id,
                    s.x1.height(),
                    s.x1.width()
                )));
            }
        }
        Ok(Self {
            samples,
            augment,
            flip_seed,
        })
    }

    /// Load one split out of a prepared cache directory. Train sets augment;
    /// test sets never do (metrics must score the actual images).
    pub fn load_split(
        cache_dir: &Path,
        manifest: &SplitManifest,
        split: Split,
        flip_seed: u64,
    ) -> Result<Self> {
        let index = scan_cache(cache_dir)?;
        let ids = manifest.ids(split);
        if ids.is_empty() {
            return Err(Error::invalid(format!("the {split} split is empty")));
        }
        let mut samples = Vec::with_capacity(ids.len());
        for id in ids {
            let path = index.get(id).ok_or_else(|| {
                Error::invalid(format!(
                    "sample {id:?} from the manifest is missing from the cache {}; re-run prepare-data",
                    cache_dir.display()
                ))
            })?;
            samples.push(load_sample(path)?);
        }
        Self::new(samples, split == Split::Train, flip_seed)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[PairedSample] {
        &self.samples
    }

    /// Mini-batch index plan for one epoch: every sample once, short final
    /// batch kept. `shuffled` (train) reorders samples with the same rule
    /// the trainer uses; test epochs keep manifest order.
    pub fn epoch_batches(
        &self,
        batch_size: usize,
        shuffle_seed: u64,
        epoch: usize,
        shuffled: bool,
    ) -> Result<Vec<Vec<usize>>> {
        if batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        let order = if shuffled {
            epoch_order(self.samples.len(), shuffle_seed, epoch)
        } else {
            (0..self.samples.len()).collect()
        };
        Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
    }
}

impl BatchSource for SampleSet {
    fn num_samples(&self) -> usize {
        self.samples.len()
    }

    fn batch(&self, epoch: usize, indices: &[usize]) -> Result<TrainBatch> {
        let Some(&first) = indices.first() else {
            return Err(Error::invalid("cannot build an empty batch"));
        };
        let probe = self
            .samples
            .get(first)
            .ok_or_else(|| Error::invalid(format!("sample index {first} out of range")))?;
        let (h, w) = (probe.x1.height(), probe.x1.width());
        let n = indices.len();
        let mut x1 = Array4::<f32>::zeros((n, 3, h, w));
        let mut y1 = Array4::<f32>::zeros((n, 3, h, w));
        let mut x2 = Array4::<f32>::zeros((n, 6, h, w));
        for (bi, &si) in indices.iter().enumerate() {
            let sample = self
                .samples
                .get(si)
                .ok_or_else(|| Error::invalid(format!("sample index {si} out of range")))?;
            let flipped;
            let sample = if self.augment {
                let mut rng =
                    seeded_rng(derive_seed(&[self.flip_seed, epoch as u64]), si as u64);
                flipped = augment_flips(sample, &mut rng);
                &flipped
            } else {
                sample
            };
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        x1[[bi, c, y, x]] = sample.x1.data()[[y, x, c]] as f32;
                        y1[[bi, c, y, x]] = sample.y1.data()[[y, x, c]] as f32;
                        x2[[bi, c, y, x]] = sample.t.data()[[y, x, c]] as f32;
                        x2[[bi, c + 3, y, x]] = sample.a.data()[[y, x, c]] as f32;
                    }
                }
            }
        }
        let batch = TrainBatch { x1, y1, x2 };
        batch.validate()?;
        Ok(batch)
    }
}

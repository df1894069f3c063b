//! Single-file training snapshots.
//!
//! Layout: the ASCII magic `dgd-ckpt-v1\n`, a little-endian u64 giving the
//! JSON header length, the header, then every array as raw little-endian
//! f32 in C order. The header carries the architecture, the full training
//! options (seeds included), the completed-epoch count, the optimizer step
//! counters, and an index of array names/shapes in payload order — enough
//! to resume bit-exactly or to restore images without the original config.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamStore, Schema};
use crate::train::adam::AdamState;
use crate::train::trainer::{ArchConfig, TrainOptions, Trainer};

const MAGIC: &[u8] = b"dgd-ckpt-v1\n";
const MAX_HEADER_BYTES: u64 = 16 * 1024 * 1024;

#[derive(Serialize, Deserialize)]
struct AdamSteps {
    g1: u64,
    g2: u64,
    d: u64,
}

#[derive(Serialize, Deserialize)]
struct ArrayMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    epoch: usize,
    arch: ArchConfig,
    opts: TrainOptions,
    adam_steps: AdamSteps,
    arrays: Vec<ArrayMeta>,
}

fn section<'a>(
    prefix: &str,
    schema: &'a Schema,
    store: &'a ParamStore<f32>,
) -> impl Iterator<Item = (String, &'a ArrayD<f32>)> + 'a {
    let prefix = prefix.to_string();
    schema
        .iter()
        .zip(store.iter())
        .map(move |((_, spec), (_, arr))| (format!("{prefix}.{}", spec.name), arr))
}

fn moment_sections<'a>(
    prefix: &str,
    schema: &'a Schema,
    arrays: &'a [ArrayD<f32>],
) -> impl Iterator<Item = (String, &'a ArrayD<f32>)> + 'a {
    let prefix = prefix.to_string();
    schema
        .iter()
        .zip(arrays.iter())
        .map(move |((_, spec), arr)| (format!("{prefix}.{}", spec.name), arr))
}

impl Trainer {
    /// Write the complete training state to `path`.
    pub fn save_checkpoint(&mut self, path: &Path) -> Result<()> {
        let (g1_m, g1_v, g1_t) = self.opt_g1.export();
        let (g2_m, g2_v, g2_t) = self.opt_g2.export();
        let (d_m, d_v, d_t) = self.opt_d.export();

        let entries: Vec<(String, &ArrayD<f32>)> = section("params.g1", self.g1.schema(), &self.g1_store)
            .chain(section("params.g2", self.g2.schema(), &self.g2_store))
            .chain(section("params.d", self.disc.schema(), &self.d_store))
            .chain(moment_sections("adam.g1.m", self.g1.schema(), &g1_m))
            .chain(moment_sections("adam.g1.v", self.g1.schema(), &g1_v))
            .chain(moment_sections("adam.g2.m", self.g2.schema(), &g2_m))
            .chain(moment_sections("adam.g2.v", self.g2.schema(), &g2_v))
            .chain(moment_sections("adam.d.m", self.disc.schema(), &d_m))
            .chain(moment_sections("adam.d.v", self.disc.schema(), &d_v))
            .collect();

        let header = Header {
            format: "dgd-ckpt-v1".to_string(),
            epoch: self.epoch,
            arch: self.arch.clone(),
            opts: self.opts.clone(),
            adam_steps: AdamSteps {
                g1: g1_t,
                g2: g2_t,
                d: d_t,
            },
            arrays: entries
                .iter()
                .map(|(name, arr)| ArrayMeta {
                    name: name.clone(),
                    shape: arr.shape().to_vec(),
                })
                .collect(),
        };
        let header_bytes = serde_json::to_vec(&header)?;

        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io_err = |e| Error::io(path, e);
        w.write_all(MAGIC).map_err(io_err)?;
        w.write_all(&(header_bytes.len() as u64).to_le_bytes())
            .map_err(io_err)?;
        w.write_all(&header_bytes).map_err(io_err)?;
        for (_, arr) in &entries {
            for &v in arr.iter() {
                w.write_all(&v.to_le_bytes()).map_err(io_err)?;
            }
        }
        w.flush().map_err(io_err)?;
        self.last_checkpoint = Some(path.to_path_buf());
        Ok(())
    }

    /// Rebuild a trainer, bit-exactly, from a checkpoint file.
    pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let io_err = |e| Error::io(path, e);

        let mut magic = [0u8; 12];
        r.read_exact(&mut magic).map_err(io_err)?;
        if magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "{} is not a dgd-ckpt-v1 file",
                path.display()
            )));
        }
        let mut len_bytes = [0u8; 8];
        r.read_exact(&mut len_bytes).map_err(io_err)?;
        let header_len = u64::from_le_bytes(len_bytes);
        if header_len == 0 || header_len > MAX_HEADER_BYTES {
            return Err(Error::Checkpoint(format!(
                "implausible header length {header_len}"
            )));
        }
        let mut header_bytes = vec![0u8; header_len as usize];
        r.read_exact(&mut header_bytes).map_err(io_err)?;
        let header: Header = serde_json::from_slice(&header_bytes)?;
        if header.format != "dgd-ckpt-v1" {
            return Err(Error::Checkpoint(format!(
                "unsupported format tag {:?}",
                header.format
            )));
        }

        let (g1, g2, disc) = header.arch.build_models()?;
        let sizes = [g1.schema().len(), g2.schema().len(), disc.schema().len()];
        let expected_arrays = 3 * (sizes[0] + sizes[1] + sizes[2]);
        if header.arrays.len() != expected_arrays {
            return Err(Error::Checkpoint(format!(
                "array index has {} entries, architecture implies {expected_arrays}",
                header.arrays.len()
            )));
        }

        let mut arrays = Vec::with_capacity(header.arrays.len());
        for meta in &header.arrays {
            let numel: usize = meta.shape.iter().product();
            let mut buf = vec![0u8; numel * 4];
            r.read_exact(&mut buf).map_err(|e| {
                Error::Checkpoint(format!("payload truncated at {:?}: {e}", meta.name))
            })?;
            let values: Vec<f32> = buf
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let arr = ArrayD::from_shape_vec(meta.shape.clone(), values)
                .map_err(|e| Error::Checkpoint(format!("bad shape for {:?}: {e}", meta.name)))?;
            arrays.push(arr);
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing).map_err(io_err)? != 0 {
            return Err(Error::Checkpoint(
                "trailing bytes after declared arrays".to_string(),
            ));
        }

        let mut it = arrays.into_iter();
        let mut take = |n: usize| -> Vec<ArrayD<f32>> { it.by_ref().take(n).collect() };
        let g1_params = ParamStore::from_arrays(g1.schema(), take(sizes[0]))?;
        let g2_params = ParamStore::from_arrays(g2.schema(), take(sizes[1]))?;
        let d_params = ParamStore::from_arrays(disc.schema(), take(sizes[2]))?;
        let opt_g1 = AdamState::import(
            g1.schema(),
            take(sizes[0]),
            take(sizes[0]),
            header.adam_steps.g1,
        )?;
        let opt_g2 = AdamState::import(
            g2.schema(),
            take(sizes[1]),
            take(sizes[1]),
            header.adam_steps.g2,
        )?;
        let opt_d = AdamState::import(
            disc.schema(),
            take(sizes[2]),
            take(sizes[2]),
            header.adam_steps.d,
        )?;
        if !g1_params.all_finite() || !g2_params.all_finite() || !d_params.all_finite() {
            return Err(Error::Checkpoint(
                "checkpoint contains non-finite parameters".to_string(),
            ));
        }

        Ok(Trainer {
            arch: header.arch,
            opts: header.opts,
            g1,
            g2,
            disc,
            g1_store: g1_params,
            g2_store: g2_params,
            d_store: d_params,
            opt_g1,
            opt_g2,
            opt_d,
            epoch: header.epoch,
            last_checkpoint: Some(path.to_path_buf()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::trainer::TrainBatch;
    use ndarray::Array4;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn tiny_trainer() -> Trainer {
        Trainer::new(
            ArchConfig {
                depth: 3,
                base_width: 4,
                disc_base_width: 4,
                dru_blocks_per_skip: 1,
            },
            TrainOptions {
                epochs: 3,
                batch_size: 2,
                seed: 9,
                shuffle_seed: 10,
                ..TrainOptions::default()
            },
        )
        .unwrap()
    }

    fn batch(seed: u64) -> TrainBatch {
        let mut rng = StdRng::seed_from_u64(seed);
        TrainBatch {
            x1: Array4::from_shape_fn((2, 3, 32, 32), |_| rng.random_range(0.0..1.0)),
            y1: Array4::from_shape_fn((2, 3, 32, 32), |_| rng.random_range(0.0..1.0)),
            x2: Array4::from_shape_fn((2, 6, 32, 32), |_| rng.random_range(0.0..1.0)),
        }
    }

    #[test]
    fn round_trip_resumes_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.ckpt");
        let mut t = tiny_trainer();
        t.train_step(&batch(1), 0, 0).unwrap();
        t.epoch = 1;
        t.save_checkpoint(&path).unwrap();

        let mut resumed = Trainer::load_checkpoint(&path).unwrap();
        assert_eq!(resumed.epoch, 1);
        assert_eq!(resumed.g1_store, t.g1_store);
        assert_eq!(resumed.g2_store, t.g2_store);
        assert_eq!(resumed.d_store, t.d_store);
        assert_eq!(resumed.opts, t.opts);

        // The next step must agree bit-for-bit with the uninterrupted run.
        let b = batch(2);
        let l_direct = t.train_step(&b, 1, 0).unwrap();
        let l_resumed = resumed.train_step(&b, 1, 0).unwrap();
        assert_eq!(l_direct, l_resumed);
        assert_eq!(t.g1_store, resumed.g1_store);
        assert_eq!(t.d_store, resumed.d_store);
    }

    #[test]
    fn wrong_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.ckpt");
        std::fs::write(&path, b"not a checkpoint at all............").unwrap();
        assert!(matches!(
            Trainer::load_checkpoint(&path),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.ckpt");
        let mut t = tiny_trainer();
        t.save_checkpoint(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 64]).unwrap();
        assert!(matches!(
            Trainer::load_checkpoint(&path),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn trailing_garbage_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.ckpt");
        let mut t = tiny_trainer();
        t.save_checkpoint(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.extend_from_slice(&[0u8; 16]);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            Trainer::load_checkpoint(&path),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn save_records_last_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.ckpt");
        let mut t = tiny_trainer();
        assert!(t.last_checkpoint.is_none());
        t.save_checkpoint(&path).unwrap();
        assert_eq!(t.last_checkpoint.as_deref(), Some(path.as_path()));
    }
}

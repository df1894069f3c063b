//! Train/test partitioning of prepared samples and its on-disk manifest.

use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default fraction of samples assigned to training.
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!(
                "unknown split {other:?}: expected \"train\" or \"test\""
            ))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Which sample ids landed in which split, plus the seed that decided it.
/// A pure function of its inputs — no timestamps — so rerunning a pipeline
/// rewrites the manifest byte-for-byte.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub seed: u64,
}

impl SplitManifest {
    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train_ids,
            Split::Test => &self.test_ids,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: SplitManifest = serde_json::from_str(&json)
            .map_err(|e| Error::invalid(format!("malformed manifest {}: {e}", path.display())))?;
        let dup = manifest
            .train_ids
            .iter()
            .any(|id| manifest.test_ids.contains(id));
        if dup {
            return Err(Error::invalid(format!(
                "manifest {} assigns a sample to both splits",
                path.display()
            )));
        }
        Ok(manifest)
    }
}

/// Shuffle ids with a seeded generator and cut at `round(fraction * N)`.
/// Both lists come back sorted; the shuffle only decides membership.
pub fn make_split_with_fraction(
    ids: &[String],
    seed: u64,
    fraction: f64,
) -> Result<SplitManifest> {
    if ids.len() < 2 {
        return Err(Error::invalid(format!(
            "cannot split {} sample(s): need at least 2",
            ids.len()
        )));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!(
            "train fraction {fraction} must lie in [0, 1]"
        )));
    }
    let mut seen = std::collections::BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::invalid(format!("duplicate sample id {id:?}")));
        }
    }
    let mut shuffled: Vec<&String> = ids.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let n_train = (fraction * ids.len() as f64).round() as usize;
    let mut train_ids: Vec<String> = shuffled[..n_train].iter().map(|s| (*s).clone()).collect();
    let mut test_ids: Vec<String> = shuffled[n_train..].iter().map(|s| (*s).clone()).collect();
    train_ids.sort();
    test_ids.sort();
    Ok(SplitManifest {
        train_ids,
        test_ids,
        seed,
    })
}

/// The default 80/20 split.
pub fn make_split(ids: &[String], seed: u64) -> Result<SplitManifest> {
    make_split_with_fraction(ids, seed, TRAIN_FRACTION)
}

//! Flat key-value run configuration.
//!
//! One `key = value` per line; lines starting with `#` and blank lines are
//! ignored. Every key has a default, unknown keys are rejected, and a key
//! may appear at most once — a config file is an unambiguous list of
//! overrides, not a program. `DGD_CONFIG` may point at a file to load when
//! no `--config` is given.

use std::path::{Path, PathBuf};

use crate::dataset::{PipelineOptions, DEFAULT_SEED, DEFAULT_TRAIN_SIZE, TRAIN_FRACTION};
use crate::error::{Error, Result};
use crate::train::{AdamParams, ArchConfig, TrainOptions};

/// Environment variable naming a default config file.
pub const CONFIG_ENV: &str = "DGD_CONFIG";

/// Union of everything the commands can be told through a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Dataset root (`<root>/<category>/{underwater,reference}/`).
    pub root: Option<PathBuf>,
    /// Directory holding prepared sample files and the split manifest.
    pub cache_dir: Option<PathBuf>,
    /// Where commands write images, checkpoints and reports.
    pub out_dir: Option<PathBuf>,
    /// Checkpoint to restore images with, or to resume training from.
    pub checkpoint: Option<PathBuf>,

    /// Side length samples are resized to during preparation.
    pub train_size: usize,
    /// Cut each source pair into four quadrants before resizing.
    pub quadrisect: bool,
    /// Fraction of samples assigned to the training split.
    pub train_fraction: f64,

    /// Down/upsampling stages in each generator.
    pub depth: usize,
    /// Channel width of the first generator stage.
    pub base_width: usize,
    /// Channel width of the first discriminator stage.
    pub disc_base_width: usize,
    /// Residual units on each skip connection.
    pub dru_per_skip: usize,

    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the restoration pixel loss.
    pub lambda1: f64,
    /// Weight of the physics-recomposition loss.
    pub lambda2: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Master seed: init, dropout noise, split membership, flips.
    pub seed: u64,
    /// Epoch shuffling seed; `None` follows `seed`.
    pub shuffle_seed: Option<u64>,
    /// Save a checkpoint every this many epochs (0 = only at the end).
    pub checkpoint_every: usize,
    /// Treat the restored image as constant inside the physics loss.
    pub detach_g1_in_l2: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let adam = AdamParams::default();
        Self {
            root: None,
            cache_dir: None,
            out_dir: None,
            checkpoint: None,
            train_size: DEFAULT_TRAIN_SIZE,
            quadrisect: true,
            train_fraction: TRAIN_FRACTION,
            depth: 8,
            base_width: 64,
            disc_base_width: 64,
            dru_per_skip: 1,
            epochs: 850,
            batch_size: 5,
            lambda1: 100.0,
            lambda2: 0.5,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            seed: DEFAULT_SEED,
            shuffle_seed: None,
            checkpoint_every: 0,
            detach_g1_in_l2: false,
        }
    }
}

/// `(key, what it does)` for every accepted key, in file order. The single
/// source of truth: the parser and the help text are both built from it.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("root", "dataset root (<root>/<category>/{underwater,reference}/)"),
    ("cache_dir", "directory for prepared samples and the split manifest"),
    ("out_dir", "where images, checkpoints and reports are written"),
    ("checkpoint", "checkpoint file to restore or resume from"),
    ("train_size", "side length samples are resized to"),
    ("quadrisect", "cut each source pair into four quadrants (true/false)"),
    ("train_fraction", "fraction of samples assigned to training"),
    ("depth", "down/upsampling stages in each generator"),
    ("base_width", "channel width of the first generator stage"),
    ("disc_base_width", "channel width of the first discriminator stage"),
    ("dru_per_skip", "residual units on each skip connection"),
    ("epochs", "training epochs"),
    ("batch_size", "samples per training step"),
    ("lambda1", "weight of the restoration pixel loss"),
    ("lambda2", "weight of the physics-recomposition loss"),
    ("lr", "Adam learning rate"),
    ("beta1", "Adam first-moment decay"),
    ("beta2", "Adam second-moment decay"),
    ("adam_eps", "Adam denominator epsilon"),
    ("seed", "master seed (init, noise, split, flips)"),
    ("shuffle_seed", "epoch shuffling seed (defaults to seed)"),
    ("checkpoint_every", "checkpoint interval in epochs (0 = end only)"),
    (
        "detach_g1_in_l2",
        "keep the physics loss from training the restorer (true/false)",
    ),
];

impl RunConfig {
    /// Parse a config file, starting from defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        let mut seen = std::collections::BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = |msg: String| {
                Error::Config(format!("{}:{}: {msg}", path.display(), i + 1))
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected `key = value`, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(at(format!("duplicate key {key:?}")));
            }
            cfg.set_key(key, value).map_err(|e| match e {
                Error::Config(msg) => at(msg),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    /// The file named by `DGD_CONFIG` if set, otherwise plain defaults.
    pub fn from_env() -> Result<Self> {
        Self::from_env_value(std::env::var_os(CONFIG_ENV).map(PathBuf::from))
    }

    fn from_env_value(path: Option<PathBuf>) -> Result<Self> {
        match path {
            Some(path) => Self::from_file(&path),
            None => Ok(Self::default()),
        }
    }

    /// Apply one `key = value` override.
    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            value
                .parse()
                .map_err(|e| Error::Config(format!("key {key:?}: cannot parse {value:?}: {e}")))
        }
        match key {
            "root" => self.root = Some(PathBuf::from(value)),
            "cache_dir" => self.cache_dir = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "train_size" => self.train_size = parse(key, value)?,
            "quadrisect" => self.quadrisect = parse(key, value)?,
            "train_fraction" => self.train_fraction = parse(key, value)?,
            "depth" => self.depth = parse(key, value)?,
            "base_width" => self.base_width = parse(key, value)?,
            "disc_base_width" => self.disc_base_width = parse(key, value)?,
            "dru_per_skip" => self.dru_per_skip = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lambda1" => self.lambda1 = parse(key, value)?,
            "lambda2" => self.lambda2 = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "shuffle_seed" => self.shuffle_seed = Some(parse(key, value)?),
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "detach_g1_in_l2" => self.detach_g1_in_l2 = parse(key, value)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown key {other:?} (see --help for the accepted keys)"
                )))
            }
        }
        Ok(())
    }

    pub fn pipeline_options(&self) -> PipelineOptions {
        PipelineOptions {
            train_size: self.train_size,
            quadrisect: self.quadrisect,
            train_fraction: self.train_fraction,
            seed: self.seed,
        }
    }

    pub fn arch_config(&self) -> ArchConfig {
        ArchConfig {
            depth: self.depth,
            base_width: self.base_width,
            disc_base_width: self.disc_base_width,
            dru_blocks_per_skip: self.dru_per_skip,
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            adam: AdamParams {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.adam_eps,
            },
            seed: self.seed,
            shuffle_seed: self.shuffle_seed.unwrap_or(self.seed),
            checkpoint_every: self.checkpoint_every,
            detach_g1_in_l2: self.detach_g1_in_l2,
        }
    }

    /// Current value of a key, formatted the way a config file would write
    /// it. Backs the generated help text so documented defaults can never
    /// drift from the real ones.
    fn format_key(&self, key: &str) -> String {
        fn path(p: &Option<PathBuf>) -> String {
            p.as_ref()
                .map_or_else(|| "(unset)".to_string(), |p| p.display().to_string())
        }
        match key {
            "root" => path(&self.root),
            "cache_dir" => path(&self.cache_dir),
            "out_dir" => path(&self.out_dir),
            "checkpoint" => path(&self.checkpoint),
            "train_size" => self.train_size.to_string(),
            "quadrisect" => self.quadrisect.to_string(),
            "train_fraction" => self.train_fraction.to_string(),
            "depth" => self.depth.to_string(),
            "base_width" => self.base_width.to_string(),
            "disc_base_width" => self.disc_base_width.to_string(),
            "dru_per_skip" => self.dru_per_skip.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lambda1" => self.lambda1.to_string(),
            "lambda2" => self.lambda2.to_string(),
            "lr" => self.lr.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "adam_eps" => self.adam_eps.to_string(),
            "seed" => self.seed.to_string(),
            "shuffle_seed" => self
                .shuffle_seed
                .map_or_else(|| "(follows seed)".to_string(), |s| s.to_string()),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "detach_g1_in_l2" => self.detach_g1_in_l2.to_string(),
            other => unreachable!("undocumented key {other}"),
        }
    }
}

/// Help text listing every config key with its default and meaning.
pub fn key_help() -> String {
    let defaults = RunConfig::default();
    let width = CONFIG_KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::from("Config file keys (one `key = value` per line):\n");
    for (key, doc) in CONFIG_KEYS {
        out.push_str(&format!(
            "  {key:width$}  {doc} [default: {}]\n",
            defaults.format_key(key)
        ));
    }
    out.push_str(&format!(
        "\nThe {CONFIG_ENV} environment variable may name a config file to use\nwhen --config is not given.\n"
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, text: &str) -> PathBuf {
        let path = dir.path().join("run.conf");
        std::fs::write(&path, text).unwrap();
        path
    }

    #[test]
    fn defaults_survive_an_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "# nothing but comments\n\n");
        assert_eq!(RunConfig::from_file(&path).unwrap(), RunConfig::default());
    }

    #[test]
    fn file_overrides_take_effect() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            &dir,
            "root = /data/turbid\nepochs = 12\nlambda2 = 0.25\nquadrisect = false\nshuffle_seed = 99\n",
        );
        let cfg = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg.root.as_deref(), Some(Path::new("/data/turbid")));
        assert_eq!(cfg.epochs, 12);
        assert_eq!(cfg.lambda2, 0.25);
        assert!(!cfg.quadrisect);
        assert_eq!(cfg.train_options().shuffle_seed, 99);
        // Untouched keys keep defaults.
        assert_eq!(cfg.batch_size, 5);
        assert_eq!(cfg.lambda1, 100.0);
    }

    #[test]
    fn shuffle_seed_follows_seed_unless_set() {
        let mut cfg = RunConfig::default();
        cfg.set_key("seed", "41").unwrap();
        assert_eq!(cfg.train_options().shuffle_seed, 41);
        cfg.set_key("shuffle_seed", "7").unwrap();
        assert_eq!(cfg.train_options().shuffle_seed, 7);
        assert_eq!(cfg.train_options().seed, 41);
    }

    #[test]
    fn malformed_lines_cite_the_line_number() {
        let dir = tempfile::tempdir().unwrap();
        for (text, needle) in [
            ("epochs = 12\nnot a line\n", ":2:"),
            ("bogus_key = 1\n", "bogus_key"),
            ("epochs = twelve\n", "twelve"),
            ("epochs = 1\nepochs = 2\n", "duplicate"),
        ] {
            let path = write(&dir, text);
            let msg = RunConfig::from_file(&path).unwrap_err().to_string();
            assert!(msg.contains(needle), "{msg:?} should mention {needle:?}");
        }
    }

    #[test]
    fn env_fallback_loads_file_or_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "epochs = 3\n");
        let cfg = RunConfig::from_env_value(Some(path)).unwrap();
        assert_eq!(cfg.epochs, 3);
        let cfg = RunConfig::from_env_value(None).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert!(RunConfig::from_env_value(Some(PathBuf::from("/nonexistent/conf"))).is_err());
    }

    #[test]
    fn every_documented_key_parses_and_prints() {
        let mut cfg = RunConfig::default();
        for (key, _) in CONFIG_KEYS {
            let sample = match *key {
                "root" | "cache_dir" | "out_dir" | "checkpoint" => "/tmp/x",
                "quadrisect" | "detach_g1_in_l2" => "true",
                "train_fraction" | "lambda1" | "lambda2" | "lr" | "beta1" | "beta2"
                | "adam_eps" => "0.5",
                _ => "3",
            };
            cfg.set_key(key, sample)
                .unwrap_or_else(|e| panic!("documented key {key} rejected: {e}"));
        }
        let help = key_help();
        for (key, _) in CONFIG_KEYS {
            assert!(help.contains(key), "help misses {key}");
        }
        assert!(help.contains("default: 850"));
        assert!(help.contains(CONFIG_ENV));
    }

    #[test]
    fn derived_structs_mirror_the_fields() {
        let mut cfg = RunConfig::default();
        cfg.set_key("train_size", "64").unwrap();
        cfg.set_key("depth", "4").unwrap();
        cfg.set_key("lr", "0.001").unwrap();
        let p = cfg.pipeline_options();
        assert_eq!(p.train_size, 64);
        assert_eq!(p.seed, 17);
        let a = cfg.arch_config();
        assert_eq!(a.depth, 4);
        assert_eq!(a.base_width, 64);
        let t = cfg.train_options();
        assert_eq!(t.adam.lr, 0.001);
        assert_eq!(t.epochs, 850);
    }
}

//! Flat `key = value` run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use vexrec::eval::F1Mode;
use vexrec::params::InitScheme;
use vexrec::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub split_fraction: f64,
    pub min_count: usize,
    /// Context size for image-free runs without a feature file.
    pub context_dim: usize,
    pub top_n: usize,
    pub max_review_len: usize,
    pub f1_mode: F1Mode,
    pub interactions: Option<PathBuf>,
    pub reviews: Option<PathBuf>,
    pub features: Option<PathBuf>,
    /// Item ids in feature-row order; without it rows follow the dense item order.
    pub feature_manifest: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            split_fraction: 0.7,
            min_count: 1,
            context_dim: 16,
            top_n: 5,
            max_review_len: 30,
            f1_mode: F1Mode::OfAverages,
            interactions: None,
            reviews: None,
            features: None,
            feature_manifest: None,
            labels: None,
            checkpoint: None,
            output_dir: PathBuf::from("."),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow::anyhow!("invalid value {value:?} for {key}: {e}"))
}

impl RunConfig {
    /// Sets one key. Relative paths are resolved against `base`.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let path = || -> Option<PathBuf> {
            if value.is_empty() {
                None
            } else {
                Some(base.join(value))
            }
        };
        let t = &mut self.train;
        match key {
            "variant" => t.variant = parse(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "delta" => t.delta = parse(key, value)?,
            "lambda" => t.lambda = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "k" => t.k = parse(key, value)?,
            "z" => t.z = parse(key, value)?,
            "o" => t.o = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "init" => t.init = parse::<InitScheme>(key, value)?,
            "split_fraction" => self.split_fraction = parse(key, value)?,
            "min_count" => self.min_count = parse(key, value)?,
            "context_dim" => self.context_dim = parse(key, value)?,
            "top_n" => self.top_n = parse(key, value)?,
            "max_review_len" => self.max_review_len = parse(key, value)?,
            "f1_mode" => {
                self.f1_mode = match value {
                    "of-averages" => F1Mode::OfAverages,
                    "average-of-users" => F1Mode::AverageOfUsers,
                    _ => bail!("invalid value {value:?} for f1_mode (of-averages | average-of-users)"),
                }
            }
            "interactions" => self.interactions = path(),
            "reviews" => self.reviews = path(),
            "features" => self.features = path(),
            "feature_manifest" => self.feature_manifest = path(),
            "labels" => self.labels = path(),
            "checkpoint" => self.checkpoint = path(),
            "output_dir" => self.output_dir = path().unwrap_or_else(|| base.to_path_buf()),
            _ => bail!("unknown config key {key:?}"),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. Repeated keys are an error.
    pub fn parse_str(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {}: expected key = value", i + 1);
            };
            let key = key.trim();
            if seen.contains(&key) {
                bail!("line {}: key {key:?} given twice", i + 1);
            }
            seen.push(key);
            cfg.set(key, value.trim(), base)
                .with_context(|| format!("line {}", i + 1))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse_str(&text, base).with_context(|| format!("in config {}", path.display()))
    }

    /// Applies `key=value` overrides; relative paths resolve against the working directory.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let Some((key, value)) = o.split_once('=') else {
                bail!("override {o:?} is not key=value");
            };
            self.set(key.trim(), value.trim(), Path::new("."))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            bail!("split_fraction must lie in (0, 1), got {}", self.split_fraction);
        }
        if self.top_n == 0 || self.max_review_len == 0 || self.context_dim == 0 || self.min_count == 0 {
            bail!("top_n, max_review_len, context_dim and min_count must be positive");
        }
        Ok(())
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.output_dir.join("model.vxcp"))
    }

    /// Renders the configuration in the file format, with paths as given.
    pub fn render(&self) -> String {
        let t = &self.train;
        let mut lines = vec![
            format!("variant = {}", t.variant),
            format!("learning_rate = {}", t.learning_rate),
            format!("delta = {}", t.delta),
            format!("lambda = {}", t.lambda),
            format!("epochs = {}", t.epochs),
            format!("seed = {}", t.seed),
            format!("k = {}", t.k),
            format!("z = {}", t.z),
            format!("o = {}", t.o),
            format!("batch_size = {}", t.batch_size),
            format!("init = {}", t.init),
            format!("split_fraction = {}", self.split_fraction),
            format!("min_count = {}", self.min_count),
            format!("context_dim = {}", self.context_dim),
            format!("top_n = {}", self.top_n),
            format!("max_review_len = {}", self.max_review_len),
            format!(
                "f1_mode = {}",
                match self.f1_mode {
                    F1Mode::OfAverages => "of-averages",
                    F1Mode::AverageOfUsers => "average-of-users",
                }
            ),
        ];
        let paths = [
            ("interactions", &self.interactions),
            ("reviews", &self.reviews),
            ("features", &self.features),
            ("feature_manifest", &self.feature_manifest),
            ("labels", &self.labels),
            ("checkpoint", &self.checkpoint),
        ];
        for (k, p) in paths {
            if let Some(p) = p {
                lines.push(format!("{k} = {}", p.display()));
            }
        }
        lines.push(format!("output_dir = {}", self.output_dir.display()));
        lines.join("\n") + "\n"
    }
}

/// Fails unless every given path names an existing file.
pub fn require_files(paths: &[(&str, Option<&PathBuf>)]) -> Result<()> {
    for (key, p) in paths {
        match p {
            None => bail!("config key {key} is required for this command"),
            Some(p) if !p.is_file() => bail!("{key} file {} does not exist", p.display()),
            _ => {}
        }
    }
    Ok(())
}

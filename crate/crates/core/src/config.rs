//! Flat `key = value` run configuration with layered resolution.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::training::{SplitScheme, TrainingConfig};

pub const RESOLVED_NAME: &str = "config.resolved";

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub training: TrainingConfig,
    pub split: SplitScheme,
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            training: TrainingConfig::default(),
            split: SplitScheme::Holdout33,
            manifest: None,
            out: None,
        }
    }
}

/// Keys in the order they are written out.
pub const KEYS: [&str; 18] = [
    "manifest",
    "out",
    "split",
    "mode",
    "seed",
    "patch",
    "pool_stride",
    "epochs",
    "steps_per_epoch",
    "batch",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "lambda",
    "lambda_s",
    "w_rec",
    "augment",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key} = {value}: {e}")))
}

/// Splits config text into `(key, value)` pairs. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got '{line}'", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.training;
        match key {
            "manifest" => self.manifest = (!value.is_empty()).then(|| PathBuf::from(value)),
            "out" => self.out = (!value.is_empty()).then(|| PathBuf::from(value)),
            "split" => self.split = value.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "mode" => t.mode = value.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "seed" => t.seed = parse(key, value)?,
            "patch" => t.patch = parse(key, value)?,
            "pool_stride" => t.pool_stride = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "steps_per_epoch" => t.steps_per_epoch = parse(key, value)?,
            "batch" => t.batch = parse(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "beta1" => t.beta1 = parse(key, value)?,
            "beta2" => t.beta2 = parse(key, value)?,
            "eps" => t.eps = parse(key, value)?,
            "lambda" => t.lambda = parse(key, value)?,
            "lambda_s" => t.lambda_s = parse(key, value)?,
            "w_rec" => t.w_rec = parse(key, value)?,
            "augment" => t.augment = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.training;
        let path = |p: &Option<PathBuf>| p.as_ref().map_or_else(String::new, |p| p.display().to_string());
        Some(match key {
            "manifest" => path(&self.manifest),
            "out" => path(&self.out),
            "split" => self.split.to_string(),
            "mode" => t.mode.to_string(),
            "seed" => t.seed.to_string(),
            "patch" => t.patch.to_string(),
            "pool_stride" => t.pool_stride.to_string(),
            "epochs" => t.epochs.to_string(),
            "steps_per_epoch" => t.steps_per_epoch.to_string(),
            "batch" => t.batch.to_string(),
            // `{:?}` prints the shortest string that parses back to the same f64
            "lr" => format!("{:?}", t.lr),
            "beta1" => format!("{:?}", t.beta1),
            "beta2" => format!("{:?}", t.beta2),
            "eps" => format!("{:?}", t.eps),
            "lambda" => format!("{:?}", t.lambda),
            "lambda_s" => format!("{:?}", t.lambda_s),
            "w_rec" => format!("{:?}", t.w_rec),
            "augment" => t.augment.to_string(),
            _ => return None,
        })
    }

    /// Applies every pair in order; later pairs win.
    pub fn apply<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
        for (k, v) in pairs {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Config::default();
        let pairs = parse_pairs(text)?;
        c.apply(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::from_text(&text)
    }

    /// Every key with its resolved value.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k).unwrap_or_default());
        }
        s
    }

    /// Writes `config.resolved` into `dir`.
    pub fn write_resolved(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RESOLVED_NAME);
        std::fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Mode;

    #[test]
    fn layering_and_round_trip() {
        let file = "# comment\nmode = baseline\nlr = 0.005\n\nepochs=3\n";
        let mut c = Config::from_text(file).unwrap();
        c.apply([("epochs", "7"), ("lambda_s", "0.25")]).unwrap();
        assert_eq!(c.training.mode, Mode::Baseline);
        assert_eq!(c.training.lr, 0.005);
        assert_eq!(c.training.epochs, 7);
        assert_eq!(c.training.batch, 16);
        let text = c.to_text();
        assert_eq!(text.lines().count(), KEYS.len());
        assert_eq!(Config::from_text(&text).unwrap(), c);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(Config::from_text("lr 0.1").is_err());
        assert!(Config::from_text("colour = red").is_err());
        assert!(Config::from_text("epochs = -1").is_err());
        assert!(Config::from_text("mode = hybrid").is_err());
    }

    #[test]
    fn awkward_floats_survive() {
        let mut c = Config::default();
        c.training.lr = 0.1 + 0.2;
        c.training.lambda = 1e-300;
        assert_eq!(Config::from_text(&c.to_text()).unwrap(), c);
    }
}

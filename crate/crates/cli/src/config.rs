//! Flat `key = value` experiment files.

use std::collections::HashSet;
use std::fmt::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use mardpg_core::baselines::Variant;
use mardpg_core::env::SimConfig;
use mardpg_core::train::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub sim: SimConfig,
    pub train: TrainConfig,
    pub out: PathBuf,
    pub plots: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            variant: Variant::MaRdpg,
            sim: SimConfig::default(),
            train: TrainConfig::default(),
            out: PathBuf::from("runs/default"),
            plots: true,
        }
    }
}

impl ExperimentConfig {
    /// Parse a config file body. Blank lines and `#` comments are ignored;
    /// unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {line_no}: expected `key = value`, got {raw:?}"))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                bail!("line {line_no}: missing key");
            }
            if !seen.insert(key.to_string()) {
                bail!("line {line_no}: duplicate key {key:?}");
            }
            cfg.set(key, value).with_context(|| format!("line {line_no}"))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "variant" => self.variant = Variant::parse(value)?,
            "out" => self.out = PathBuf::from(value),
            "plots" => {
                self.plots = value
                    .parse()
                    .map_err(|_| anyhow!("invalid value {value:?} for plots; use true or false"))?
            }
            _ => {
                if !self.sim.set_key(key, value)? && !self.train.set_key(key, value)? {
                    bail!("unknown key {key:?}");
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Every setting, one per line, in a form [`ExperimentConfig::parse`] reads back.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "variant = {}", self.variant.as_str());
        let _ = writeln!(s, "out = {}", self.out.display());
        let _ = writeln!(s, "plots = {}", self.plots);
        for (k, v) in self.sim.to_pairs().into_iter().chain(self.train.to_pairs()) {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let cfg = ExperimentConfig::parse(
            "# a run\nvariant = independent\n\nkappa = 0   # no coupling\nepochs=3\nplots = false\n",
        )
        .unwrap();
        assert_eq!(cfg.variant, Variant::Independent);
        assert_eq!(cfg.sim.kappa, 0.0);
        assert_eq!(cfg.train.epochs, 3);
        assert!(!cfg.plots);
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = ExperimentConfig::parse("epochs = 3\nlearning_rate = 1\n").unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("learning_rate"), "{msg}");
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(ExperimentConfig::parse("epochs 3\n").is_err());
        assert!(ExperimentConfig::parse("epochs = 3\nepochs = 4\n").is_err());
        assert!(ExperimentConfig::parse("gamma = 1.5\n").is_err());
        assert!(ExperimentConfig::parse("variant = l2r\n").is_err());
        assert!(ExperimentConfig::parse("horizon = ten\n").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.train.lr_actor = 0.1 + 0.2;
        cfg.sim.store_bonus = 0.0;
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}

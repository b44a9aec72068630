//! Configuration resolution: defaults, then a config file, then flags.
//!
//! Config files are flat `key = value` lines; `#` starts a comment and
//! blank lines are skipped. Every key corresponds to one command-line flag
//! of the same name (kebab-cased). Unknown keys are rejected by name so a
//! typo cannot silently fall back to a default.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chebgraph::error::{Error, Result};
use chebgraph::{FusionMethod, ModelConfig, TrainConfig};

/// Every tunable setting, fully resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub dataset_name: String,
    pub dataset_dir: PathBuf,
    pub fusion: FusionMethod,
    pub k_order: usize,
    pub conv_widths: Vec<usize>,
    pub fc_width: usize,
    pub dropout: f64,
    pub lr: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub milestones: Vec<usize>,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub proj_hidden: usize,
    pub edge_hidden: usize,
    pub use_learned_edges: bool,
    pub learned_edge_recompute: bool,
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for Settings {
    fn default() -> Settings {
        Settings {
            dataset_name: "MUTAG".into(),
            dataset_dir: "data".into(),
            fusion: FusionMethod::Single,
            k_order: 4,
            conv_widths: vec![32, 32, 32],
            fc_width: 96,
            dropout: 0.1,
            lr: 0.001,
            gamma: 0.1,
            epochs: 50,
            milestones: vec![25, 35, 45],
            batch_size: 32,
            weight_decay: 1e-4,
            proj_hidden: 128,
            edge_hidden: 128,
            use_learned_edges: false,
            learned_edge_recompute: false,
            folds: 10,
            repeats: 10,
            seed: 1,
        }
    }
}

fn bad_value(key: &str, raw: &str, what: &str) -> Error {
    Error::Config {
        key: key.to_string(),
        reason: format!("expected {what}, found `{raw}`"),
    }
}

fn parse_scalar<T: FromStr>(key: &str, raw: &str, what: &str) -> Result<T> {
    raw.trim().parse().map_err(|_| bad_value(key, raw, what))
}

/// Comma-separated list; an empty string is an empty list.
pub fn parse_list<T: FromStr>(key: &str, raw: &str, what: &str) -> Result<Vec<T>> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|tok| tok.trim().parse().map_err(|_| bad_value(key, tok, what)))
        .collect()
}

fn render_list<T: Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl Settings {
    /// Set one key from its textual value (config-file syntax).
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        match key {
            "dataset_name" => self.dataset_name = raw.trim().to_string(),
            "dataset_dir" => self.dataset_dir = PathBuf::from(raw.trim()),
            "fusion" => self.fusion = raw.trim().parse()?,
            "k_order" => self.k_order = parse_scalar(key, raw, "a positive integer")?,
            "conv_widths" => {
                self.conv_widths = parse_list(key, raw, "a comma-separated list of widths")?
            }
            "fc_width" => self.fc_width = parse_scalar(key, raw, "a positive integer")?,
            "dropout" => self.dropout = parse_scalar(key, raw, "a probability")?,
            "lr" => self.lr = parse_scalar(key, raw, "a learning rate")?,
            "gamma" => self.gamma = parse_scalar(key, raw, "a decay factor")?,
            "epochs" => self.epochs = parse_scalar(key, raw, "an epoch count")?,
            "milestones" => {
                self.milestones = parse_list(key, raw, "a comma-separated list of epochs")?
            }
            "batch_size" => self.batch_size = parse_scalar(key, raw, "a positive integer")?,
            "weight_decay" => self.weight_decay = parse_scalar(key, raw, "a decay coefficient")?,
            "proj_hidden" => self.proj_hidden = parse_scalar(key, raw, "a positive integer")?,
            "edge_hidden" => self.edge_hidden = parse_scalar(key, raw, "a positive integer")?,
            "use_learned_edges" => {
                self.use_learned_edges = parse_scalar(key, raw, "`true` or `false`")?
            }
            "learned_edge_recompute" => {
                self.learned_edge_recompute = parse_scalar(key, raw, "`true` or `false`")?
            }
            "folds" => self.folds = parse_scalar(key, raw, "a fold count")?,
            "repeats" => self.repeats = parse_scalar(key, raw, "a repeat count")?,
            "seed" => self.seed = parse_scalar(key, raw, "an unsigned integer")?,
            other => {
                return Err(Error::Config {
                    key: other.to_string(),
                    reason: "unknown configuration key".into(),
                })
            }
        }
        Ok(())
    }

    /// Apply a config file on top of the current values.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            key: "config".into(),
            reason: format!("cannot read {}: {e}", path.display()),
        })?;
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config {
                    key: "config".into(),
                    reason: format!(
                        "{} line {}: expected `key = value`, found `{line}`",
                        path.display(),
                        i + 1
                    ),
                });
            };
            self.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::Config { key, reason } => Error::Config {
                    key,
                    reason: format!("{reason} ({} line {})", path.display(), i + 1),
                },
                other => other,
            })?;
        }
        Ok(())
    }

    /// The effective configuration as `key = value` lines, every key in a
    /// fixed order. This text is echoed verbatim into reports.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        kv("dataset_name", self.dataset_name.clone());
        kv("dataset_dir", self.dataset_dir.display().to_string());
        kv("fusion", self.fusion.to_string());
        kv("k_order", self.k_order.to_string());
        kv("conv_widths", render_list(&self.conv_widths));
        kv("fc_width", self.fc_width.to_string());
        kv("dropout", self.dropout.to_string());
        kv("lr", self.lr.to_string());
        kv("gamma", self.gamma.to_string());
        kv("epochs", self.epochs.to_string());
        kv("milestones", render_list(&self.milestones));
        kv("batch_size", self.batch_size.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("proj_hidden", self.proj_hidden.to_string());
        kv("edge_hidden", self.edge_hidden.to_string());
        kv("use_learned_edges", self.use_learned_edges.to_string());
        kv("learned_edge_recompute", self.learned_edge_recompute.to_string());
        kv("folds", self.folds.to_string());
        kv("repeats", self.repeats.to_string());
        kv("seed", self.seed.to_string());
        out
    }

    pub fn model_config(&self, n_classes: usize) -> ModelConfig {
        ModelConfig {
            fusion: self.fusion,
            k_order: self.k_order,
            conv_widths: self.conv_widths.clone(),
            fc_width: self.fc_width,
            n_classes,
            dropout: self.dropout,
            proj_hidden: self.proj_hidden,
            edge_hidden: self.edge_hidden,
            use_learned_edges: self.use_learned_edges,
            learned_edge_recompute: self.learned_edge_recompute,
        }
    }

    pub fn train_config(&self, n_classes: usize) -> TrainConfig {
        TrainConfig {
            model: self.model_config(n_classes),
            lr: self.lr,
            gamma: self.gamma,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            milestones: self.milestones.clone(),
            batch_size: self.batch_size,
            folds: self.folds,
            repeats: self.repeats,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_echo_every_key_once() {
        let echo = Settings::default().echo();
        assert_eq!(echo.lines().count(), 20);
        assert!(echo.contains("dataset_name = MUTAG\n"));
        assert!(echo.contains("milestones = 25,35,45\n"));
        assert!(echo.contains("weight_decay = 0.0001\n"));
        assert!(echo.contains("use_learned_edges = false\n"));
    }

    #[test]
    fn config_files_override_defaults() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            file,
            "# comment line\nfusion = multiply  # trailing comment\nk_order = 3\n\nmilestones = \nuse_learned_edges = true"
        )
        .unwrap();
        let mut s = Settings::default();
        s.apply_file(file.path()).unwrap();
        assert_eq!(s.fusion, FusionMethod::Multiply);
        assert_eq!(s.k_order, 3);
        assert!(s.milestones.is_empty());
        assert!(s.use_learned_edges);
        assert_eq!(s.epochs, 50, "untouched keys keep their defaults");
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "learning_rate = 0.1").unwrap();
        let mut s = Settings::default();
        match s.apply_file(file.path()) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "learning_rate"),
            other => panic!("expected Config error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_values_name_the_key_and_line() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "epochs = fifty").unwrap();
        let mut s = Settings::default();
        match s.apply_file(file.path()) {
            Err(Error::Config { key, reason }) => {
                assert_eq!(key, "epochs");
                assert!(reason.contains("line 1"), "{reason}");
            }
            other => panic!("expected Config error, got {other:?}"),
        }
    }

    #[test]
    fn echo_round_trips_through_the_file_parser() {
        let mut custom = Settings::default();
        custom.fusion = FusionMethod::TwoDCheb;
        custom.use_learned_edges = true;
        custom.conv_widths = vec![16, 64];
        custom.seed = 99;
        let mut file = tempfile::NamedTempFile::new().unwrap();
        write!(file, "{}", custom.echo()).unwrap();
        let mut parsed = Settings::default();
        parsed.apply_file(file.path()).unwrap();
        assert_eq!(parsed, custom);
    }
}

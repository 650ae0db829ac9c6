//! Training hyperparameters and the `key = value` config format.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    /// T in the alternating outer loop.
    pub outer_iterations: usize,
    pub epochs_per_inner_loop: usize,
    pub batch_size: usize,
    pub qf: u8,
    pub augment: bool,
    /// Save checkpoints every this many outer iterations; 0 = only at the
    /// end.
    pub checkpoint_interval: usize,
    pub comcnn_lr: (f64, f64),
    pub reccnn_lr: (f64, f64),
    /// Progress lines on stderr (not a config-file key).
    pub verbose: bool,
}

impl TrainConfig {
    /// Desk-scale defaults: ten 180x180 images -> 640 patches, batch 32,
    /// 30 epochs per inner loop, T = 2, qf = 20.
    pub fn desk() -> Self {
        TrainConfig {
            seed: 1,
            outer_iterations: 2,
            epochs_per_inner_loop: 30,
            batch_size: 32,
            qf: 20,
            augment: false,
            checkpoint_interval: 0,
            comcnn_lr: (1e-3, 1e-4),
            reccnn_lr: (1e-3, 1e-4),
            verbose: false,
        }
    }

    /// The full-size regime: 50 epochs at batch 128 with augmentation and
    /// the exponential schedules 0.01 -> 0.0001 (ComCNN) and 0.1 -> 0.0001
    /// (RecCNN). Hours of compute; not exercised by the test suite.
    pub fn paper_scale() -> Self {
        TrainConfig {
            seed: 1,
            outer_iterations: 2,
            epochs_per_inner_loop: 50,
            batch_size: 128,
            qf: 10,
            augment: true,
            checkpoint_interval: 1,
            comcnn_lr: (1e-2, 1e-4),
            reccnn_lr: (1e-1, 1e-4),
            verbose: false,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Ingest {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// Flat `key = value` lines, `#` comments, unknown keys rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::desk();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| {
                Error::Config(format!("line {}: bad {what} `{value}`", lineno + 1))
            };
            match key {
                "seed" => cfg.seed = value.parse().map_err(|_| bad("seed"))?,
                "outer_iterations" => {
                    cfg.outer_iterations = value.parse().map_err(|_| bad("outer_iterations"))?
                }
                "epochs_per_inner_loop" => {
                    cfg.epochs_per_inner_loop =
                        value.parse().map_err(|_| bad("epochs_per_inner_loop"))?
                }
                "batch_size" => cfg.batch_size = value.parse().map_err(|_| bad("batch_size"))?,
                "qf" => cfg.qf = value.parse().map_err(|_| bad("qf"))?,
                "augment" => {
                    cfg.augment = match value {
                        "true" => true,
                        "false" => false,
                        _ => return Err(bad("augment (true|false)")),
                    }
                }
                "checkpoint_interval" => {
                    cfg.checkpoint_interval =
                        value.parse().map_err(|_| bad("checkpoint_interval"))?
                }
                "comcnn_lr_start" => cfg.comcnn_lr.0 = value.parse().map_err(|_| bad("lr"))?,
                "comcnn_lr_end" => cfg.comcnn_lr.1 = value.parse().map_err(|_| bad("lr"))?,
                "reccnn_lr_start" => cfg.reccnn_lr.0 = value.parse().map_err(|_| bad("lr"))?,
                "reccnn_lr_end" => cfg.reccnn_lr.1 = value.parse().map_err(|_| bad("lr"))?,
                _ => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key `{key}`",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.outer_iterations == 0 {
            return Err(Error::Config("outer_iterations must be at least 1".to_string()));
        }
        if self.epochs_per_inner_loop == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs_per_inner_loop and batch_size must be positive".to_string(),
            ));
        }
        if !(1..=100).contains(&self.qf) {
            return Err(Error::Config(format!("qf {} outside 1..=100", self.qf)));
        }
        for (name, (start, end)) in [("comcnn", self.comcnn_lr), ("reccnn", self.reccnn_lr)] {
            if !(end > 0.0 && start >= end) {
                return Err(Error::Config(format!(
                    "{name} learning rates need start >= end > 0, got ({start}, {end})"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let cfg = TrainConfig::parse(
            "# desk run\n\
             seed = 7\n\
             outer_iterations = 3\n\
             epochs_per_inner_loop = 5\n\
             batch_size = 16\n\
             qf = 35   # rate knob\n\
             augment = true\n\
             checkpoint_interval = 2\n\
             comcnn_lr_start = 0.01\n\
             comcnn_lr_end = 0.0001\n\
             reccnn_lr_start = 0.1\n\
             reccnn_lr_end = 0.0001\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.outer_iterations, 3);
        assert_eq!(cfg.qf, 35);
        assert!(cfg.augment);
        assert_eq!(cfg.comcnn_lr, (0.01, 0.0001));
        assert_eq!(cfg.reccnn_lr, (0.1, 0.0001));
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = TrainConfig::parse("learning_rate = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("unknown key"));
    }

    #[test]
    fn bad_value_is_rejected_with_line() {
        let err = TrainConfig::parse("seed = banana\n").unwrap_err();
        assert!(err.to_string().contains("line 1"));
    }

    #[test]
    fn invalid_lr_order_is_rejected() {
        assert!(TrainConfig::parse("comcnn_lr_start = 0.0001\ncomcnn_lr_end = 0.1\n").is_err());
    }

    #[test]
    fn zero_qf_is_rejected() {
        assert!(TrainConfig::parse("qf = 0\n").is_err());
    }
}

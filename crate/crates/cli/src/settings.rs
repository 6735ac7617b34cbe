//! Training/run settings with file < environment < flags precedence.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::Failure;

/// Everything a training run needs. The defaults are the reference
/// protocol: embedding size 32, three hops, a memory of 30 lines, Adam at
/// 1e-2, and ten-best snapshot averaging.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub dim: usize,
    pub hops: usize,
    pub mem_slots: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub snapshot_top_k: usize,
    pub grad_clip: Option<f64>,
    pub mask_padding: bool,
    /// Independent training runs (distinct seeds); snapshots of all runs
    /// are pooled at evaluation time.
    pub runs: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            dim: 32,
            hops: 3,
            mem_slots: 30,
            learning_rate: 1e-2,
            batch_size: 32,
            epochs: 100,
            seed: 42,
            snapshot_top_k: 10,
            grad_clip: None,
            mask_padding: false,
            runs: 1,
        }
    }
}

/// Flag-level overrides; `None` means "not given".
#[derive(Debug, Clone, Default, clap::Args)]
pub struct SettingsOverride {
    /// Embedding size d.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Number of attention hops.
    #[arg(long)]
    pub hops: Option<usize>,
    /// Memory capacity in lines.
    #[arg(long)]
    pub mem_slots: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Snapshots kept for score averaging.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Global-norm gradient clipping threshold.
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Mask empty memory slots out of the attention softmax.
    #[arg(long)]
    pub mask: bool,
    /// Train this many independent seeds and pool their snapshots.
    #[arg(long)]
    pub runs: Option<usize>,
}

impl Settings {
    /// Resolves settings from, in increasing precedence: defaults, a TOML
    /// config file, `OVRUN_*` environment variables, and command-line
    /// flags. `preset` resets everything to the reference protocol before
    /// flags are applied.
    pub fn resolve(
        config_file: Option<&Path>,
        preset: Option<&str>,
        flags: &SettingsOverride,
    ) -> Result<Settings, Failure> {
        let mut settings = match config_file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    Failure::Config(format!("cannot read config file {}: {e}", path.display()))
                })?;
                toml::from_str(&text).map_err(|e| {
                    Failure::Config(format!("bad config file {}: {e}", path.display()))
                })?
            }
            None => Settings::default(),
        };
        settings.apply_env()?;
        if let Some(name) = preset {
            match name {
                "paper" => settings = Settings::default(),
                other => {
                    return Err(Failure::Config(format!(
                        "unknown preset `{other}`, expected `paper`"
                    )))
                }
            }
        }
        settings.apply_flags(flags);
        settings.validate()?;
        Ok(settings)
    }

    fn apply_env(&mut self) -> Result<(), Failure> {
        fn get<T: std::str::FromStr>(key: &str, slot: &mut T) -> Result<(), Failure> {
            if let Ok(raw) = std::env::var(key) {
                *slot = raw
                    .parse()
                    .map_err(|_| Failure::Config(format!("cannot parse {key}={raw}")))?;
            }
            Ok(())
        }
        get("OVRUN_DIM", &mut self.dim)?;
        get("OVRUN_HOPS", &mut self.hops)?;
        get("OVRUN_MEM_SLOTS", &mut self.mem_slots)?;
        get("OVRUN_LEARNING_RATE", &mut self.learning_rate)?;
        get("OVRUN_BATCH_SIZE", &mut self.batch_size)?;
        get("OVRUN_EPOCHS", &mut self.epochs)?;
        get("OVRUN_SEED", &mut self.seed)?;
        get("OVRUN_TOP_K", &mut self.snapshot_top_k)?;
        get("OVRUN_RUNS", &mut self.runs)?;
        if let Ok(raw) = std::env::var("OVRUN_GRAD_CLIP") {
            self.grad_clip = Some(
                raw.parse()
                    .map_err(|_| Failure::Config(format!("cannot parse OVRUN_GRAD_CLIP={raw}")))?,
            );
        }
        if let Ok(raw) = std::env::var("OVRUN_MASK_PADDING") {
            self.mask_padding = raw == "1" || raw.eq_ignore_ascii_case("true");
        }
        Ok(())
    }

    fn apply_flags(&mut self, flags: &SettingsOverride) {
        macro_rules! take {
            ($field:ident, $flag:expr) => {
                if let Some(v) = $flag {
                    self.$field = v;
                }
            };
        }
        take!(dim, flags.dim);
        take!(hops, flags.hops);
        take!(mem_slots, flags.mem_slots);
        take!(learning_rate, flags.lr);
        take!(batch_size, flags.batch_size);
        take!(epochs, flags.epochs);
        take!(seed, flags.seed);
        take!(snapshot_top_k, flags.top_k);
        take!(runs, flags.runs);
        if flags.grad_clip.is_some() {
            self.grad_clip = flags.grad_clip;
        }
        if flags.mask {
            self.mask_padding = true;
        }
    }

    fn validate(&self) -> Result<(), Failure> {
        if self.dim == 0 || self.hops == 0 || self.mem_slots == 0 || self.runs == 0 {
            return Err(Failure::Config(
                "dim, hops, mem_slots and runs must all be >= 1".to_string(),
            ));
        }
        Ok(())
    }

    pub fn train_config(&self, seed: u64) -> ovrun_core::training::TrainConfig {
        ovrun_core::training::TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
            snapshot_top_k: self.snapshot_top_k,
            grad_clip: self.grad_clip,
            mask_padding: self.mask_padding,
        }
    }

    pub fn forward_options(&self) -> ovrun_core::model::ForwardOptions {
        ovrun_core::model::ForwardOptions {
            mask_padding: self.mask_padding,
        }
    }
}

/// Full provenance written into each run directory: settings plus the
/// exact inputs, so a run can be reproduced bit for bit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub settings: Settings,
    pub corpus_path: String,
    pub corpus_sha256: String,
    pub vocab_size: usize,
    pub max_words: usize,
    /// Seeds actually used, one per run.
    pub run_seeds: Vec<u64>,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<(), Failure> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Failure::Data(format!("cannot serialize run manifest: {e}")))?;
        std::fs::write(path, text)
            .map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Data(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| Failure::Data(format!("bad run manifest {}: {e}", path.display())))
    }
}

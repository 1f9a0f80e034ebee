use std::path::Path;

use anyhow::{bail, Context};
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use rlsum::classifier::ClassifierConfig;
use rlsum::dataset::SyntheticConfig;
use rlsum::env::EnvConfig;
use rlsum::qnet::QNetConfig;
use rlsum::rewards::RewardConfig;
use rlsum::summary::{Selection, SummaryConfig};
use rlsum::trainer::TrainerConfig;

/// Every tunable of every command, as one flat document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub parallel: usize,

    pub classes: usize,
    pub per_class: usize,
    pub frames: usize,
    pub dim: usize,
    pub signal_fraction: f64,
    pub noise_level: f64,
    pub shot_length: usize,

    pub omega: f64,
    pub classifier_learning_rate: f64,
    pub classifier_epochs: usize,
    pub classifier_embed_size: usize,
    pub classifier_hidden_size: usize,

    pub episodes: usize,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub target_sync: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub epsilon_start: f64,
    pub epsilon_floor: f64,
    pub epsilon_decay_fraction: f64,
    pub update_every: usize,
    pub embed_size: usize,
    pub hidden_size: usize,
    pub gamma: f64,
    pub min_keep_fraction: f64,
    pub rewards: String,
    pub eta: f64,
    pub checkpoint_every: usize,

    pub budget: f64,
    pub selection: String,
    pub folds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let syn = SyntheticConfig::default();
        let clf = ClassifierConfig::default();
        let tr = TrainerConfig::default();
        let sm = SummaryConfig::default();
        Self {
            seed: 0,
            parallel: 1,
            classes: syn.classes,
            per_class: syn.per_class,
            frames: syn.frames,
            dim: syn.dim,
            signal_fraction: syn.signal_fraction,
            noise_level: syn.noise_level,
            shot_length: syn.shot_length,
            omega: clf.omega,
            classifier_learning_rate: clf.learning_rate,
            classifier_epochs: clf.epochs,
            classifier_embed_size: clf.embed_size,
            classifier_hidden_size: clf.hidden_size,
            episodes: tr.episodes,
            batch_size: tr.batch_size,
            replay_capacity: tr.replay_capacity,
            target_sync: tr.target_sync,
            learning_rate: tr.learning_rate,
            grad_clip: tr.grad_clip,
            epsilon_start: tr.epsilon_start,
            epsilon_floor: tr.epsilon_floor,
            epsilon_decay_fraction: tr.epsilon_decay_fraction,
            update_every: tr.update_every,
            embed_size: tr.qnet.embed_size,
            hidden_size: tr.qnet.hidden_size,
            gamma: tr.env.gamma,
            min_keep_fraction: tr.env.min_keep_fraction,
            rewards: tr.rewards.components(),
            eta: tr.rewards.eta,
            checkpoint_every: 0,
            budget: sm.budget_fraction,
            selection: "knapsack".into(),
            folds: 5,
        }
    }
}

/// Command-line overrides; each flag mirrors the config key of the same name.
#[derive(Args, Clone, Debug, Default, Serialize)]
pub struct Overrides {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Worker threads for read-only scoring.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parallel: Option<usize>,
    #[arg(long, help_heading = "Synthetic data")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    #[arg(long, help_heading = "Synthetic data")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_class: Option<usize>,
    #[arg(long, help_heading = "Synthetic data")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frames: Option<usize>,
    #[arg(long, help_heading = "Synthetic data")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[arg(long, help_heading = "Synthetic data")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signal_fraction: Option<f64>,
    #[arg(long, help_heading = "Synthetic data")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_level: Option<f64>,
    #[arg(long, help_heading = "Synthetic data")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shot_length: Option<usize>,
    #[arg(long, help_heading = "Classifier")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[arg(long, help_heading = "Classifier")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classifier_learning_rate: Option<f64>,
    #[arg(long, help_heading = "Classifier")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classifier_epochs: Option<usize>,
    #[arg(long, help_heading = "Classifier")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classifier_embed_size: Option<usize>,
    #[arg(long, help_heading = "Classifier")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classifier_hidden_size: Option<usize>,
    #[arg(long, help_heading = "Q-learning")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub episodes: Option<usize>,
    #[arg(long, help_heading = "Q-learning")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[arg(long, help_heading = "Q-learning")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replay_capacity: Option<usize>,
    #[arg(long, help_heading = "Q-learning")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_sync: Option<usize>,
    #[arg(long, help_heading = "Q-learning")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[arg(long, help_heading = "Q-learning")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
    #[arg(long, help_heading = "Q-learning")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_start: Option<f64>,
    #[arg(long, help_heading = "Q-learning")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_floor: Option<f64>,
    #[arg(long, help_heading = "Q-learning")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_decay_fraction: Option<f64>,
    #[arg(long, help_heading = "Q-learning")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub update_every: Option<usize>,
    #[arg(long, help_heading = "Q-learning")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embed_size: Option<usize>,
    #[arg(long, help_heading = "Q-learning")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden_size: Option<usize>,
    #[arg(long, help_heading = "Q-learning")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[arg(long, help_heading = "Q-learning")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_keep_fraction: Option<f64>,
    /// Comma-separated reward components out of g, l, u.
    #[arg(long, help_heading = "Q-learning")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rewards: Option<String>,
    #[arg(long, help_heading = "Q-learning")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Write a checkpoint every N episodes (0 disables).
    #[arg(long, help_heading = "Q-learning")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
    #[arg(long, help_heading = "Summaries")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
    /// knapsack or greedy.
    #[arg(long, help_heading = "Summaries")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection: Option<String>,
    #[arg(long, help_heading = "Summaries")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub folds: Option<usize>,
}

fn overlay(base: &mut Map<String, Value>, top: Map<String, Value>) {
    for (k, v) in top {
        base.insert(k, v);
    }
}

impl RunConfig {
    /// Defaults, then the config file, then explicit flags.
    pub fn resolve(file: Option<&Path>, flags: &Overrides) -> anyhow::Result<Self> {
        let Value::Object(mut merged) = serde_json::to_value(RunConfig::default())? else {
            unreachable!()
        };
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let parsed: Value =
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
            let Value::Object(map) = parsed else {
                bail!("config {} must be a JSON object", path.display());
            };
            // reject unknown keys with the file name attached
            serde_json::from_value::<RunConfig>(Value::Object(map.clone()))
                .with_context(|| format!("invalid config {}", path.display()))?;
            overlay(&mut merged, map);
        }
        let Value::Object(cli) = serde_json::to_value(flags)? else {
            unreachable!()
        };
        overlay(&mut merged, cli);
        let config: RunConfig = serde_json::from_value(Value::Object(merged))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.synthetic().validate()?;
        self.classifier().validate()?;
        self.trainer()?.validate()?;
        self.summary()?;
        if !(self.budget > 0.0 && self.budget <= 1.0) {
            bail!("budget {} not in (0, 1]", self.budget);
        }
        if self.folds < 2 {
            bail!("folds must be at least 2");
        }
        if self.parallel == 0 {
            bail!("parallel must be at least 1");
        }
        Ok(())
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            classes: self.classes,
            per_class: self.per_class,
            frames: self.frames,
            dim: self.dim,
            signal_fraction: self.signal_fraction,
            noise_level: self.noise_level,
            shot_length: self.shot_length,
            seed: self.seed,
        }
    }

    pub fn classifier(&self) -> ClassifierConfig {
        ClassifierConfig {
            omega: self.omega,
            learning_rate: self.classifier_learning_rate,
            epochs: self.classifier_epochs,
            embed_size: self.classifier_embed_size,
            hidden_size: self.classifier_hidden_size,
            seed: self.seed,
        }
    }

    pub fn env(&self) -> EnvConfig {
        EnvConfig {
            min_keep_fraction: self.min_keep_fraction,
            gamma: self.gamma,
        }
    }

    pub fn trainer(&self) -> anyhow::Result<TrainerConfig> {
        Ok(TrainerConfig {
            episodes: self.episodes,
            batch_size: self.batch_size,
            replay_capacity: self.replay_capacity,
            target_sync: self.target_sync,
            learning_rate: self.learning_rate,
            grad_clip: self.grad_clip,
            epsilon_start: self.epsilon_start,
            epsilon_floor: self.epsilon_floor,
            epsilon_decay_fraction: self.epsilon_decay_fraction,
            update_every: self.update_every,
            qnet: QNetConfig {
                embed_size: self.embed_size,
                hidden_size: self.hidden_size,
                seed: self.seed,
            },
            env: self.env(),
            rewards: RewardConfig {
                eta: self.eta,
                ..RewardConfig::default()
            }
            .with_components(&self.rewards)?,
            seed: self.seed,
        })
    }

    pub fn summary(&self) -> anyhow::Result<SummaryConfig> {
        Ok(SummaryConfig {
            budget_fraction: self.budget,
            selection: self.selection.parse::<Selection>()?,
            env: self.env(),
        })
    }

    /// Writes the effective config as `config.json` in `dir`.
    pub fn echo(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("config.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }
}

//! Reward functions: global recognisability, local relative importance
//! (rank change of the true category), and diversity-representativeness.
//!
//! Intermediate steps earn only the local reward; the terminal step earns the
//! global and diversity-representativeness rewards with unit weights.

use serde::{Deserialize, Serialize};

use crate::classifier::{rank_of_true, ClassifierModel};
use crate::dataset::{FeatureSequence, VideoRecord};
use crate::env::{Action, EpisodeState};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    /// Rank-change scale inside the tanh.
    pub eta: f64,
    pub use_global: bool,
    pub use_local: bool,
    pub use_unsupervised: bool,
    pub discard_bonus: f64,
    pub recognised_reward: f64,
    pub unrecognised_penalty: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            eta: 0.15,
            use_global: true,
            use_local: true,
            use_unsupervised: true,
            discard_bonus: 0.05,
            recognised_reward: 1.0,
            unrecognised_penalty: -5.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) {
            return Err(Error::Config(format!("eta must be > 0, got {}", self.eta)));
        }
        Ok(())
    }

    /// Whether any enabled component needs the classifier.
    pub fn needs_classifier(&self) -> bool {
        self.use_global || self.use_local
    }

    /// Parses a comma-separated component list such as `g,l,u`.
    pub fn with_components(mut self, list: &str) -> Result<Self> {
        self.use_global = false;
        self.use_local = false;
        self.use_unsupervised = false;
        for part in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match part {
                "g" => self.use_global = true,
                "l" => self.use_local = true,
                "u" => self.use_unsupervised = true,
                other => return Err(Error::Config(format!("unknown reward component {other:?} (expected g, l, u)"))),
            }
        }
        Ok(self)
    }

    pub fn components(&self) -> String {
        let mut parts = Vec::new();
        if self.use_global {
            parts.push("g");
        }
        if self.use_local {
            parts.push("l");
        }
        if self.use_unsupervised {
            parts.push("u");
        }
        parts.join(",")
    }
}

/// `+1` when the summary is recognised, `−5` otherwise (configurable constants).
pub fn reward_global(predicted: usize, truth: usize, config: &RewardConfig) -> f64 {
    if predicted == truth {
        config.recognised_reward
    } else {
        config.unrecognised_penalty
    }
}

/// Zero for keep; for discard, the bonus plus `tanh((ξ_before − ξ_after)/η)`.
pub fn reward_local(action: Action, rank_before: usize, rank_after: usize, eta: f64) -> f64 {
    reward_local_with_bonus(action, rank_before, rank_after, eta, 0.05)
}

pub fn reward_local_with_bonus(action: Action, rank_before: usize, rank_after: usize, eta: f64, bonus: f64) -> f64 {
    match action {
        Action::Keep => 0.0,
        Action::Discard => bonus + ((rank_before as f64 - rank_after as f64) / eta).tanh(),
    }
}

/// Diversity (mean pairwise cosine dissimilarity among kept frames, 0 for a
/// single frame) plus representativeness (`exp` of minus the mean distance
/// from every frame to its nearest kept frame). Rows are assumed unit-norm;
/// a zero row has dissimilarity 1 to everything.
pub fn reward_dr(features: &FeatureSequence, kept: &[usize]) -> Result<f64> {
    if kept.is_empty() {
        return Err(Error::EmptyInput("diversity-representativeness reward needs a kept frame"));
    }
    let t_len = features.len();
    if let Some(&bad) = kept.iter().find(|&&k| k >= t_len) {
        return Err(Error::OutOfRange {
            context: "kept frame",
            index: bad,
            bound: t_len,
        });
    }
    let n = kept.len();
    let diversity = if n < 2 {
        0.0
    } else {
        let mut sum = 0.0;
        for (i, &a) in kept.iter().enumerate() {
            let xa = features.frame(a);
            for &b in &kept[i + 1..] {
                let dot: f64 = xa.iter().zip(features.frame(b)).map(|(p, q)| p * q).sum();
                sum += 1.0 - dot;
            }
        }
        2.0 * sum / (n * (n - 1)) as f64
    };
    let mut total = 0.0;
    for t in 0..t_len {
        let x = features.frame(t);
        let nearest = kept
            .iter()
            .map(|&k| {
                x.iter()
                    .zip(features.frame(k))
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min);
        total += nearest.sqrt();
    }
    Ok(diversity + (-total / t_len as f64).exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    Intermediate,
    Terminal,
}

/// Raw component values for one step; `None` when not computed.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RewardComponents {
    pub global: Option<f64>,
    pub local: Option<f64>,
    pub unsupervised: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_global: f64,
    pub r_local: f64,
    pub r_unsup: f64,
    pub total: f64,
}

/// Combines the enabled components for a step of the given kind.
pub fn assemble_reward(kind: StepKind, components: RewardComponents, config: &RewardConfig) -> Result<RewardBreakdown> {
    let pick = |enabled: bool, v: Option<f64>| if enabled { v.unwrap_or(0.0) } else { 0.0 };
    let b = match kind {
        StepKind::Intermediate => {
            if components.global.is_some() || components.unsupervised.is_some() {
                return Err(Error::State("terminal reward components supplied at an intermediate step".into()));
            }
            RewardBreakdown {
                r_local: pick(config.use_local, components.local),
                ..RewardBreakdown::default()
            }
        }
        StepKind::Terminal => RewardBreakdown {
            r_global: pick(config.use_global, components.global),
            r_unsup: pick(config.use_unsupervised, components.unsupervised),
            ..RewardBreakdown::default()
        },
    };
    Ok(RewardBreakdown {
        total: b.r_global + b.r_local + b.r_unsup,
        ..b
    })
}

/// Reward for one transition with the ranks that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReward {
    pub breakdown: RewardBreakdown,
    pub rank_before: Option<usize>,
    pub rank_after: Option<usize>,
    /// Terminal steps with a classifier: whether the summary was recognised.
    pub recognised: Option<bool>,
}

/// Computes rewards along one episode, caching the current rank of the true
/// category so each discard costs one classifier call.
pub struct RewardTracker<'a> {
    config: &'a RewardConfig,
    classifier: Option<&'a ClassifierModel>,
    video: &'a VideoRecord,
    label: Option<usize>,
    rank: Option<usize>,
}

impl<'a> RewardTracker<'a> {
    pub fn new(config: &'a RewardConfig, classifier: Option<&'a ClassifierModel>, video: &'a VideoRecord) -> Result<Self> {
        config.validate()?;
        let needs = config.needs_classifier();
        if needs && classifier.is_none() {
            return Err(Error::Config("global/local rewards need a trained classifier".into()));
        }
        let label = if needs { Some(video.require_label()?) } else { None };
        Ok(Self {
            config,
            classifier: if needs { classifier } else { None },
            video,
            label,
            rank: None,
        })
    }

    fn rank_of(&self, retained: &[usize]) -> Result<usize> {
        let (clf, y) = (self.classifier.unwrap(), self.label.unwrap());
        rank_of_true(&clf.classify(&self.video.features, retained)?, y)
    }

    pub fn step(&mut self, before: &EpisodeState, action: Action, after: &EpisodeState) -> Result<StepReward> {
        if after.done {
            let kept = after.retained.indices();
            let mut components = RewardComponents::default();
            let mut recognised = None;
            let mut rank_after = None;
            if self.classifier.is_some() {
                let rank = self.rank_of(&kept)?;
                rank_after = Some(rank);
                recognised = Some(rank == 1);
                if self.config.use_global {
                    // rank 1 under the shared tie rule is exactly argmax == y
                    let y = self.label.unwrap();
                    let predicted = if rank == 1 { y } else { usize::MAX };
                    components.global = Some(reward_global(predicted, y, self.config));
                }
            }
            if self.config.use_unsupervised {
                components.unsupervised = Some(reward_dr(&self.video.features, &kept)?);
            }
            let breakdown = assemble_reward(StepKind::Terminal, components, self.config)?;
            return Ok(StepReward {
                breakdown,
                rank_before: self.rank,
                rank_after,
                recognised,
            });
        }
        let mut components = RewardComponents::default();
        let (mut rank_before, mut rank_after) = (None, None);
        if self.config.use_local && action == Action::Discard {
            let before_rank = match self.rank {
                Some(r) => r,
                None => self.rank_of(&before.retained.indices())?,
            };
            let after_rank = self.rank_of(&after.retained.indices())?;
            components.local = Some(reward_local_with_bonus(
                action,
                before_rank,
                after_rank,
                self.config.eta,
                self.config.discard_bonus,
            ));
            rank_before = Some(before_rank);
            rank_after = Some(after_rank);
            self.rank = Some(after_rank);
        }
        let breakdown = assemble_reward(StepKind::Intermediate, components, self.config)?;
        Ok(StepReward {
            breakdown,
            rank_before,
            rank_after,
            recognised: None,
        })
    }
}

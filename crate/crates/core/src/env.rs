//! The keep/discard decision process over one video.
//!
//! The episode starts with every frame retained and attention on frame 0.
//! Each step decides the attended frame: keep leaves the retained set alone,
//! discard removes the frame. Attention then moves to the next frame. The
//! episode ends after the last frame or when a discard brings the retained
//! set down to the floor `ceil(min_keep_fraction · T)`; frames not yet
//! decided at that point stay retained.

use serde::{Deserialize, Serialize};

use crate::dataset::VideoRecord;
use crate::error::{Error, Result};
use crate::rewards::{RewardBreakdown, RewardTracker};

/// Compact set of frame indices in `[0, T)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FrameSet {
    len: usize,
    words: Vec<u64>,
}

impl FrameSet {
    pub fn full(len: usize) -> Self {
        let mut words = vec![u64::MAX; len.div_ceil(64)];
        if len % 64 != 0 {
            if let Some(last) = words.last_mut() {
                *last = (1u64 << (len % 64)) - 1;
            }
        }
        Self { len, words }
    }

    pub fn empty(len: usize) -> Self {
        Self {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn from_indices(len: usize, indices: &[usize]) -> Result<Self> {
        let mut s = Self::empty(len);
        for &i in indices {
            if i >= len {
                return Err(Error::OutOfRange {
                    context: "frame set",
                    index: i,
                    bound: len,
                });
            }
            s.insert(i);
        }
        Ok(s)
    }

    /// Universe size `T`.
    pub fn universe(&self) -> usize {
        self.len
    }

    pub fn contains(&self, i: usize) -> bool {
        i < self.len && self.words[i / 64] & (1 << (i % 64)) != 0
    }

    pub fn insert(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn remove(&mut self, i: usize) {
        self.words[i / 64] &= !(1 << (i % 64));
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// Ascending member indices.
    pub fn indices(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.count());
        for (wi, &w) in self.words.iter().enumerate() {
            let mut bits = w;
            while bits != 0 {
                let b = bits.trailing_zeros() as usize;
                out.push(wi * 64 + b);
                bits &= bits - 1;
            }
        }
        out
    }

    /// Position of member `i` in ascending order.
    pub fn position(&self, i: usize) -> Option<usize> {
        if !self.contains(i) {
            return None;
        }
        let word = i / 64;
        let below: usize = self.words[..word].iter().map(|w| w.count_ones() as usize).sum();
        let mask = (1u64 << (i % 64)) - 1;
        Some(below + (self.words[word] & mask).count_ones() as usize)
    }

    pub fn is_subset(&self, other: &FrameSet) -> bool {
        self.len == other.len && self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Discard = 0,
    Keep = 1,
}

impl Action {
    pub fn from_index(a: usize) -> Result<Self> {
        match a {
            0 => Ok(Action::Discard),
            1 => Ok(Action::Keep),
            _ => Err(Error::State(format!("action {a} is not in {{0, 1}}"))),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Episode ends when a discard brings the retained set to `ceil(min_keep_fraction · T)`.
    pub min_keep_fraction: f64,
    pub gamma: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            min_keep_fraction: 0.15,
            gamma: 0.99,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_keep_fraction > 0.0 && self.min_keep_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "min_keep_fraction {} not in (0, 1]",
                self.min_keep_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} not in [0, 1]", self.gamma)));
        }
        Ok(())
    }

    /// Smallest retained-set size an episode may reach.
    pub fn floor(&self, frames: usize) -> usize {
        let f = (self.min_keep_fraction * frames as f64 - 1e-9).ceil() as usize;
        f.clamp(1, frames.max(1))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeState {
    pub video_id: String,
    pub retained: FrameSet,
    pub attention: usize,
    /// 1-based decision counter.
    pub t: usize,
    pub done: bool,
}

impl EpisodeState {
    pub fn frames(&self) -> usize {
        self.retained.universe()
    }

    /// Position of the attended frame within the retained order.
    pub fn attention_position(&self) -> Result<usize> {
        self.retained.position(self.attention).ok_or_else(|| {
            Error::State(format!(
                "attended frame {} is not retained in video {}",
                self.attention, self.video_id
            ))
        })
    }
}

/// One stored decision: the state before, the action, its reward and the
/// attention after. The retained set after is implied by the action.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    /// Index of the video in the dataset the transition came from.
    pub video: usize,
    pub retained: FrameSet,
    pub attention: usize,
    pub action: Action,
    pub reward: f64,
    pub next_attention: usize,
    pub done: bool,
}

impl Transition {
    /// Retained set after the action. Exact for non-terminal transitions; a
    /// discard refused at the floor is always terminal.
    pub fn next_retained(&self) -> FrameSet {
        let mut next = self.retained.clone();
        if self.action == Action::Discard {
            next.remove(self.attention);
        }
        next
    }
}

#[derive(Clone, Debug, Default)]
pub struct Environment {
    pub config: EnvConfig,
}

impl Environment {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn reset(&self, video_id: &str, frames: usize) -> Result<EpisodeState> {
        if frames == 0 {
            return Err(Error::EmptyInput("cannot start an episode on an empty video"));
        }
        Ok(EpisodeState {
            video_id: video_id.to_owned(),
            retained: FrameSet::full(frames),
            attention: 0,
            t: 1,
            done: false,
        })
    }

    pub fn step(&self, state: &EpisodeState, action: Action) -> Result<EpisodeState> {
        if state.done {
            return Err(Error::State(format!("episode for video {} already finished", state.video_id)));
        }
        let frames = state.frames();
        let floor = self.config.floor(frames);
        let mut retained = state.retained.clone();
        // a discard that would go below the floor leaves the frame in place
        if action == Action::Discard && retained.count() > floor {
            retained.remove(state.attention);
        }
        let t = state.t + 1;
        let floor_hit = action == Action::Discard && retained.count() <= floor;
        let done = t > frames || floor_hit;
        let attention = if done { state.attention } else { state.attention + 1 };
        Ok(EpisodeState {
            video_id: state.video_id.clone(),
            retained,
            attention,
            t,
            done,
        })
    }
}

/// One line of the episode log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub video_id: String,
    pub t: usize,
    pub attention: usize,
    pub action: usize,
    pub r_global: f64,
    pub r_local: f64,
    pub r_unsup: f64,
    pub reward: f64,
    pub rank_before: Option<usize>,
    pub rank_after: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct EpisodeOutcome {
    pub transitions: Vec<Transition>,
    pub records: Vec<StepRecord>,
    /// `Σ γ^(t−1) r_t` from the first decision.
    pub episode_return: f64,
    pub terminal: RewardBreakdown,
    pub recognised: Option<bool>,
    pub final_state: EpisodeState,
}

/// An episode in progress, advanced one decision at a time.
pub struct Episode<'a> {
    env: &'a Environment,
    video_index: usize,
    tracker: RewardTracker<'a>,
    state: EpisodeState,
    discount: f64,
    outcome_return: f64,
    transitions: Vec<Transition>,
    records: Vec<StepRecord>,
    terminal: RewardBreakdown,
    recognised: Option<bool>,
}

impl<'a> Episode<'a> {
    pub fn new(env: &'a Environment, video_index: usize, video: &'a VideoRecord, tracker: RewardTracker<'a>) -> Result<Self> {
        Ok(Self {
            env,
            video_index,
            tracker,
            state: env.reset(&video.id, video.frames())?,
            discount: 1.0,
            outcome_return: 0.0,
            transitions: Vec::with_capacity(video.frames()),
            records: Vec::with_capacity(video.frames()),
            terminal: RewardBreakdown::default(),
            recognised: None,
        })
    }

    pub fn state(&self) -> &EpisodeState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.done
    }

    /// Applies `action`, scores it and returns the stored transition.
    pub fn step(&mut self, action: Action) -> Result<&Transition> {
        let next = self.env.step(&self.state, action)?;
        let reward = self.tracker.step(&self.state, action, &next)?;
        let b = reward.breakdown;
        self.outcome_return += self.discount * b.total;
        self.discount *= self.env.config.gamma;
        if next.done {
            self.terminal = b;
            self.recognised = reward.recognised;
        }
        self.records.push(StepRecord {
            video_id: self.state.video_id.clone(),
            t: self.state.t,
            attention: self.state.attention,
            action: action.index(),
            r_global: b.r_global,
            r_local: b.r_local,
            r_unsup: b.r_unsup,
            reward: b.total,
            rank_before: reward.rank_before,
            rank_after: reward.rank_after,
        });
        let before = std::mem::replace(&mut self.state, next);
        self.transitions.push(Transition {
            video: self.video_index,
            retained: before.retained,
            attention: before.attention,
            action,
            reward: b.total,
            next_attention: self.state.attention,
            done: self.state.done,
        });
        Ok(self.transitions.last().unwrap())
    }

    pub fn finish(self) -> EpisodeOutcome {
        EpisodeOutcome {
            transitions: self.transitions,
            records: self.records,
            episode_return: self.outcome_return,
            terminal: self.terminal,
            recognised: self.recognised,
            final_state: self.state,
        }
    }
}

/// Runs a whole episode under `policy`.
pub fn run_episode<F>(
    env: &Environment,
    video_index: usize,
    video: &VideoRecord,
    tracker: RewardTracker<'_>,
    mut policy: F,
) -> Result<EpisodeOutcome>
where
    F: FnMut(&EpisodeState) -> Result<Action>,
{
    let mut episode = Episode::new(env, video_index, video, tracker)?;
    while !episode.is_done() {
        let action = policy(episode.state())?;
        episode.step(action)?;
    }
    Ok(episode.finish())
}

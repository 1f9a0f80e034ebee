//! Deep Q-learning for the summarisation network: replay memory, ε-greedy
//! exploration with an exponential schedule, a periodically synced target
//! network and double-Q targets regressed with the Huber loss.

use std::collections::HashMap;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierModel;
use crate::dataset::Dataset;
use crate::env::{Action, EnvConfig, Environment, Episode, FrameSet, StepRecord, Transition};
use crate::error::{Error, Result};
use crate::neural::{clip_gradients, huber_loss, AdamConfig, AdamState};
use crate::qnet::{ActionValues, QNetConfig, QNetwork};
use crate::rewards::{RewardBreakdown, RewardConfig, RewardTracker};

/// Fixed-capacity FIFO buffer of transitions.
#[derive(Clone, Debug)]
pub struct ReplayMemory {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
    inserted: u64,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
            inserted: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Total number of pushes so far.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    /// Appends `t`, evicting the oldest entry when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        self.inserted += 1;
    }

    /// Stored transitions, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    /// Storage slots of `n` uniform draws: with replacement while the memory
    /// holds fewer than `n` items, without replacement otherwise.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        let size = self.items.len();
        if size == 0 {
            return Err(Error::EmptyInput("cannot sample from an empty replay memory"));
        }
        if size < n {
            Ok((0..n).map(|_| rng.random_range(0..size)).collect())
        } else {
            Ok(index::sample(rng, size, n).into_vec())
        }
    }

    pub fn sample_minibatch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        Ok(self.sample_indices(n, rng)?.into_iter().map(|i| &self.items[i]).collect())
    }
}

/// `ε(step) = max(floor, start · (floor/start)^(step/decay_steps))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub floor: f64,
    /// Steps after which ε has decayed to the floor.
    pub decay_steps: f64,
}

impl EpsilonSchedule {
    pub fn new(start: f64, floor: f64, decay_steps: f64) -> Result<Self> {
        if !(0.0 < floor && floor <= start && start <= 1.0) || !(decay_steps > 0.0) {
            return Err(Error::Config(format!(
                "invalid epsilon schedule start={start} floor={floor} decay_steps={decay_steps}"
            )));
        }
        Ok(Self {
            start,
            floor,
            decay_steps,
        })
    }

    /// Per-step multiplicative decay rate.
    pub fn rate(&self) -> f64 {
        (self.floor / self.start).powf(1.0 / self.decay_steps)
    }

    pub fn value(&self, step: u64) -> f64 {
        if step == 0 {
            return self.start;
        }
        let v = self.start * (self.floor / self.start).powf(step as f64 / self.decay_steps);
        v.max(self.floor)
    }
}

/// Exploration draw: `Some(random action)` with probability `epsilon`.
pub fn explore<R: Rng + ?Sized>(epsilon: f64, rng: &mut R) -> Option<Action> {
    if rng.random::<f64>() < epsilon {
        Some(if rng.random_bool(0.5) { Action::Keep } else { Action::Discard })
    } else {
        None
    }
}

/// ε-greedy action; greedy ties go to keep.
pub fn select_action<R: Rng + ?Sized>(q: &ActionValues, epsilon: f64, rng: &mut R) -> Action {
    explore(epsilon, rng).unwrap_or_else(|| q.greedy())
}

/// `r` for terminal transitions, otherwise `r + γ · Q_target(s′, argmax_a Q_online(s′, a))`.
pub fn double_q_target(reward: f64, done: bool, gamma: f64, online_next: &ActionValues, target_next: &ActionValues) -> f64 {
    if done {
        return reward;
    }
    reward + gamma * target_next.q(online_next.greedy())
}

/// [`double_q_target`] with both networks evaluated on the transition's next state.
pub fn double_q_target_net(
    transition: &Transition,
    dataset: &Dataset,
    online: &QNetwork,
    target: &QNetwork,
    gamma: f64,
) -> Result<f64> {
    if transition.done {
        return Ok(transition.reward);
    }
    let (next, pos) = next_readout(transition)?;
    let features = &video_at(dataset, transition.video)?.features;
    let on = online.q_at(&next, pos, features)?;
    let tg = target.q_at(&next, pos, features)?;
    Ok(double_q_target(transition.reward, false, gamma, &on, &tg))
}

fn next_readout(t: &Transition) -> Result<(FrameSet, usize)> {
    let next = t.next_retained();
    let pos = next.position(t.next_attention).ok_or_else(|| {
        Error::State(format!("next attention {} is not in the next retained set", t.next_attention))
    })?;
    Ok((next, pos))
}

fn video_at(dataset: &Dataset, i: usize) -> Result<&crate::dataset::VideoRecord> {
    dataset.videos.get(i).ok_or(Error::OutOfRange {
        context: "transition video",
        index: i,
        bound: dataset.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub episodes: usize,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Online-to-target copy period, in gradient updates.
    pub target_sync: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub epsilon_start: f64,
    pub epsilon_floor: f64,
    /// Fraction of the scheduled decision steps after which ε reaches the floor.
    pub epsilon_decay_fraction: f64,
    /// Gradient update every this many decision steps.
    pub update_every: usize,
    pub qnet: QNetConfig,
    pub env: EnvConfig,
    pub rewards: RewardConfig,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            episodes: 300,
            batch_size: 200,
            replay_capacity: 6000,
            target_sync: 500,
            learning_rate: 1e-4,
            grad_clip: 5.0,
            epsilon_start: 1.0,
            epsilon_floor: 0.1,
            epsilon_decay_fraction: 0.6,
            update_every: 1,
            qnet: QNetConfig::default(),
            env: EnvConfig::default(),
            rewards: RewardConfig::default(),
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("replay_capacity", self.replay_capacity),
            ("target_sync", self.target_sync),
            ("update_every", self.update_every),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.learning_rate > 0.0 && self.grad_clip > 0.0) {
            return Err(Error::Config("learning_rate and grad_clip must be positive".into()));
        }
        if !(self.epsilon_decay_fraction > 0.0) {
            return Err(Error::Config("epsilon_decay_fraction must be positive".into()));
        }
        EpsilonSchedule::new(self.epsilon_start, self.epsilon_floor, 1.0)?;
        self.env.validate()?;
        self.rewards.validate()
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub video_id: String,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub terminal_reward_breakdown: RewardBreakdown,
    pub recognised: Option<bool>,
    pub epsilon: f64,
    pub mean_minibatch_loss: Option<f64>,
    pub steps: usize,
    pub kept: usize,
}

pub struct TrainingOutcome {
    pub network: QNetwork,
    pub log: Vec<EpisodeLog>,
    pub updates: u64,
}

/// Minibatch entries that read one (video, retained set) forward pass.
struct Group {
    video: usize,
    retained: FrameSet,
    /// `(batch index, position)` pairs trained at s_t.
    train: Vec<(usize, usize)>,
    /// `(batch index, position)` pairs read as next states.
    read: Vec<(usize, usize)>,
}

/// Online/target pair with its optimiser.
struct Learner {
    online: QNetwork,
    target: QNetwork,
    adam: AdamState,
    updates: u64,
}

impl Learner {
    /// One Huber-regression update on `batch`; returns the mean loss.
    fn update(&mut self, batch: &[&Transition], dataset: &Dataset, config: &TrainerConfig) -> Result<f64> {
        let gamma = config.env.gamma;
        let mut targets = vec![0.0; batch.len()];
        // One online pass per (video, retained set) serves both the trained
        // readouts at s_t and the next-state readouts that land on it.
        let mut groups: Vec<Group> = Vec::new();
        let mut index: HashMap<(usize, FrameSet), usize> = HashMap::new();
        let mut group_of = |video: usize, retained: &FrameSet, groups: &mut Vec<Group>| {
            *index.entry((video, retained.clone())).or_insert_with(|| {
                groups.push(Group {
                    video,
                    retained: retained.clone(),
                    train: Vec::new(),
                    read: Vec::new(),
                });
                groups.len() - 1
            })
        };
        for (i, t) in batch.iter().enumerate() {
            let pos = t
                .retained
                .position(t.attention)
                .ok_or_else(|| Error::State("stored attention is not retained".into()))?;
            let g = group_of(t.video, &t.retained, &mut groups);
            groups[g].train.push((i, pos));
            if t.done {
                targets[i] = t.reward;
            } else {
                let (next, pos) = next_readout(t)?;
                let g = group_of(t.video, &next, &mut groups);
                groups[g].read.push((i, pos));
            }
        }

        let mut traces = Vec::with_capacity(groups.len());
        for g in &groups {
            let features = &video_at(dataset, g.video)?.features;
            let input = features.gather(&g.retained.indices());
            let positions: Vec<usize> = g.train.iter().chain(&g.read).map(|m| m.1).collect();
            let trace = self.online.forward_positions(input.clone(), &positions)?;
            if !g.read.is_empty() {
                let read_positions: Vec<usize> = g.read.iter().map(|m| m.1).collect();
                let tg = self.target.forward_positions(input, &read_positions)?.values;
                let on = &trace.values[g.train.len()..];
                for (k, &(i, _)) in g.read.iter().enumerate() {
                    targets[i] = double_q_target(batch[i].reward, false, gamma, &on[k], &tg[k]);
                }
            }
            traces.push(trace);
        }

        self.online.params_mut().zero_grad();
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for (g, trace) in groups.iter().zip(&traces) {
            if g.train.is_empty() {
                continue;
            }
            let mut d_q = vec![(0.0, 0.0); g.train.len() + g.read.len()];
            for (k, &(i, _)) in g.train.iter().enumerate() {
                let q = trace.values[k].q(batch[i].action);
                let (loss, grad) = huber_loss(q, targets[i]);
                total += loss;
                d_q[k] = match batch[i].action {
                    Action::Discard => (grad * scale, 0.0),
                    Action::Keep => (0.0, grad * scale),
                };
            }
            self.online.backward(trace, &d_q)?;
        }
        clip_gradients(self.online.params_mut(), config.grad_clip);
        self.adam.step(self.online.params_mut())?;
        self.updates += 1;
        if self.updates % config.target_sync as u64 == 0 {
            self.target.copy_weights_from(&self.online)?;
        }
        Ok(total * scale)
    }
}

/// Trains a Q-network on `train` (features unit-normalised). `on_episode`
/// sees every log line with the episode's per-step records and the current
/// online network.
pub fn train_dqsn<F>(
    train: &Dataset,
    classifier: Option<&ClassifierModel>,
    config: &TrainerConfig,
    mut on_episode: F,
) -> Result<TrainingOutcome>
where
    F: FnMut(&EpisodeLog, &[StepRecord], &QNetwork) -> Result<()>,
{
    config.validate()?;
    if config.rewards.needs_classifier() {
        match classifier {
            None => {
                return Err(Error::Config(
                    "rewards g and l need a frozen classifier checkpoint".into(),
                ))
            }
            Some(c) if !c.is_frozen() => return Err(Error::Config("classifier must be frozen".into())),
            _ => {}
        }
    }
    if train.is_empty() {
        return Err(Error::EmptyInput("training split is empty"));
    }
    let dim = train.feature_dim().unwrap();
    if let Some(c) = classifier {
        if c.feature_dim() != dim {
            return Err(Error::dim("classifier feature dimension", dim, c.feature_dim()));
        }
    }
    let online = QNetwork::new(dim, &config.qnet)?;
    let mut learner = Learner {
        target: online.clone(),
        adam: AdamState::new(
            online.params(),
            AdamConfig {
                learning_rate: config.learning_rate,
                ..AdamConfig::default()
            },
        ),
        online,
        updates: 0,
    };
    let env = Environment::new(config.env.clone())?;
    let mean_frames = train.videos.iter().map(|v| v.frames()).sum::<usize>() as f64 / train.len() as f64;
    let scheduled = (config.episodes as f64 * mean_frames * config.epsilon_decay_fraction).max(1.0);
    let schedule = EpsilonSchedule::new(config.epsilon_start, config.epsilon_floor, scheduled)?;
    let mut memory = ReplayMemory::new(config.replay_capacity)?;
    let mut shuffle_rng = crate::seed::component_rng(config.seed, "trainer.shuffle");
    let mut explore_rng = crate::seed::component_rng(config.seed, "trainer.explore");
    let mut replay_rng = crate::seed::component_rng(config.seed, "trainer.replay");

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(config.episodes);
    let mut step: u64 = 0;
    for episode in 0..config.episodes {
        if episode % order.len() == 0 {
            order.shuffle(&mut shuffle_rng);
        }
        let vi = order[episode % order.len()];
        let video = &train.videos[vi];
        let tracker = RewardTracker::new(&config.rewards, classifier, video)?;
        let mut ep = Episode::new(&env, vi, video, tracker)?;
        let epsilon_at_start = schedule.value(step);
        let (mut loss_sum, mut loss_count) = (0.0, 0usize);
        while !ep.is_done() {
            let action = match explore(schedule.value(step), &mut explore_rng) {
                Some(a) => a,
                None => learner.online.q_forward(ep.state(), &video.features)?.greedy(),
            };
            let transition = ep.step(action)?.clone();
            memory.push(transition);
            step += 1;
            if memory.len() >= config.batch_size && step % config.update_every as u64 == 0 {
                let batch = memory.sample_minibatch(config.batch_size, &mut replay_rng)?;
                loss_sum += learner.update(&batch, train, config)?;
                loss_count += 1;
            }
        }
        let outcome = ep.finish();
        let entry = EpisodeLog {
            episode,
            video_id: video.id.clone(),
            episode_return: outcome.episode_return,
            terminal_reward_breakdown: outcome.terminal,
            recognised: outcome.recognised,
            epsilon: epsilon_at_start,
            mean_minibatch_loss: (loss_count > 0).then(|| loss_sum / loss_count as f64),
            steps: outcome.transitions.len(),
            kept: outcome.final_state.retained.count(),
        };
        log::debug!(
            "episode {episode} video {} return {:.3} eps {:.3}",
            entry.video_id,
            entry.episode_return,
            entry.epsilon
        );
        on_episode(&entry, &outcome.records, &learner.online)?;
        log.push(entry);
    }
    Ok(TrainingOutcome {
        network: learner.online,
        log,
        updates: learner.updates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn transition(reward: f64) -> Transition {
        Transition {
            video: 0,
            retained: FrameSet::full(2),
            attention: 0,
            action: Action::Keep,
            reward,
            next_attention: 1,
            done: false,
        }
    }

    fn av(q_discard: f64, q_keep: f64) -> ActionValues {
        ActionValues {
            q_discard,
            q_keep,
            v: 0.5 * (q_discard + q_keep),
            a_discard: 0.5 * (q_discard - q_keep),
            a_keep: 0.5 * (q_keep - q_discard),
        }
    }

    #[test]
    fn memory_fifo() {
        let mut m = ReplayMemory::new(3).unwrap();
        for r in 0..5 {
            m.push(transition(r as f64));
        }
        assert_eq!(m.len(), 3);
        let rewards: Vec<f64> = m.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn sampling_rules() {
        let mut m = ReplayMemory::new(10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(m.sample_indices(3, &mut rng).is_err());
        m.push(transition(1.0));
        assert_eq!(m.sample_indices(3, &mut rng).unwrap(), vec![0, 0, 0]);
        for _ in 0..5 {
            m.push(transition(0.0));
        }
        let mut s = m.sample_indices(6, &mut rng).unwrap();
        s.sort();
        assert_eq!(s, vec![0, 1, 2, 3, 4, 5]);
        let a = m.sample_indices(4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = m.sample_indices(4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn double_q_examples() {
        let r = double_q_target(-5.0, true, 0.99, &av(9.0, 9.0), &av(9.0, 9.0));
        assert_eq!(r, -5.0);
        let r = double_q_target(1.0, false, 0.99, &av(0.2, 0.5), &av(7.0, 0.3));
        assert!((r - 1.297).abs() < 1e-12);
        assert_eq!(double_q_target(0.4, false, 0.0, &av(0.2, 0.5), &av(7.0, 0.3)), 0.4);
    }

    #[test]
    fn epsilon_endpoints() {
        let s = EpsilonSchedule::new(1.0, 0.1, 100.0).unwrap();
        assert_eq!(s.value(0), 1.0);
        assert!((s.value(100) - 0.1).abs() < 1e-12);
        assert_eq!(s.value(1000), 0.1);
        assert!((s.value(1) - s.rate()).abs() < 1e-15);
    }

    #[test]
    fn greedy_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(select_action(&av(1.0, 1.0), 0.0, &mut rng), Action::Keep);
        assert_eq!(select_action(&av(2.0, 1.0), 0.0, &mut rng), Action::Discard);
    }

    #[test]
    fn classifier_required_for_g_and_l() {
        let data = crate::dataset::generate_synthetic(&crate::dataset::SyntheticConfig {
            classes: 2,
            per_class: 1,
            frames: 4,
            dim: 3,
            ..Default::default()
        })
        .unwrap()
        .dataset;
        let cfg = TrainerConfig {
            episodes: 1,
            ..Default::default()
        };
        assert!(matches!(
            train_dqsn(&data, None, &cfg, |_, _, _| Ok(())),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zero_episodes_returns_initial_network() {
        let data = crate::dataset::generate_synthetic(&crate::dataset::SyntheticConfig {
            classes: 2,
            per_class: 1,
            frames: 4,
            dim: 3,
            ..Default::default()
        })
        .unwrap()
        .dataset;
        let cfg = TrainerConfig {
            episodes: 0,
            rewards: RewardConfig::default().with_components("u").unwrap(),
            qnet: QNetConfig {
                embed_size: 3,
                hidden_size: 2,
                seed: 0,
            },
            ..Default::default()
        };
        let out = train_dqsn(&data, None, &cfg, |_, _, _| Ok(())).unwrap();
        let fresh = QNetwork::new(3, &cfg.qnet).unwrap();
        assert_eq!(out.network.params().flat_values(), fresh.params().flat_values());
        assert!(out.log.is_empty());
    }
}

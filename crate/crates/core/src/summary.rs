//! Test-time summary generation and F-score evaluation.
//!
//! A greedy episode scores every frame with the softmax keep probability,
//! shots take the mean of their frames, and a 0/1 knapsack picks shots under
//! the duration budget.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Fold, Shot, VideoRecord};
use crate::env::{EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::qnet::QNetwork;

/// Keep probability of every frame from a greedy (ε = 0) episode. Frames left
/// undecided by an early stop are scored on the final state.
pub fn score_frames(qnet: &QNetwork, video: &VideoRecord, env: &EnvConfig) -> Result<Vec<f64>> {
    let env = Environment::new(env.clone())?;
    let frames = video.frames();
    let mut scores = vec![f64::NAN; frames];
    let mut state = env.reset(&video.id, frames)?;
    while !state.done {
        let q = qnet.q_forward(&state, &video.features)?;
        scores[state.attention] = q.keep_probability();
        state = env.step(&state, q.greedy())?;
    }
    if scores.iter().any(|s| s.is_nan()) {
        let all = qnet.q_forward_all(&state.retained, &video.features)?;
        for (frame, q) in state.retained.indices().into_iter().zip(all) {
            if scores[frame].is_nan() {
                scores[frame] = q.keep_probability();
            }
        }
    }
    Ok(scores)
}

/// Mean frame score per shot.
pub fn shot_scores(frame_scores: &[f64], shots: &[Shot]) -> Result<Vec<f64>> {
    shots
        .iter()
        .map(|s| {
            if s.is_empty() {
                return Err(Error::EmptyInput("shot has no frames"));
            }
            let slice = frame_scores.get(s.start..s.end).ok_or(Error::OutOfRange {
                context: "shot end",
                index: s.end,
                bound: frame_scores.len(),
            })?;
            Ok(slice.iter().sum::<f64>() / slice.len() as f64)
        })
        .collect()
}

/// `floor(budget_fraction · frames)`.
pub fn budget_frames(budget_fraction: f64, frames: usize) -> Result<usize> {
    if !(budget_fraction > 0.0 && budget_fraction <= 1.0) {
        return Err(Error::Config(format!("budget fraction {budget_fraction} not in (0, 1]")));
    }
    Ok(((budget_fraction * frames as f64) + 1e-9).floor() as usize)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    #[default]
    Knapsack,
    Greedy,
}

impl std::str::FromStr for Selection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "knapsack" => Ok(Selection::Knapsack),
            "greedy" => Ok(Selection::Greedy),
            other => Err(Error::Config(format!("unknown selection {other:?} (knapsack or greedy)"))),
        }
    }
}

/// Exact 0/1 knapsack over shots: maximises `Σ score·len` with
/// `Σ len ≤ capacity`. Among equal optima earlier shots are preferred.
pub fn select_shots(scores: &[f64], lengths: &[usize], capacity: usize) -> Result<Vec<usize>> {
    if scores.len() != lengths.len() {
        return Err(Error::dim("shot lengths", scores.len(), lengths.len()));
    }
    let n = scores.len();
    let width = capacity + 1;
    // best[i][c]: optimum over shots i.. with capacity c
    let mut best = vec![0.0f64; (n + 1) * width];
    for i in (0..n).rev() {
        let value = scores[i] * lengths[i] as f64;
        for c in 0..width {
            let skip = best[(i + 1) * width + c];
            let take = if lengths[i] <= c {
                best[(i + 1) * width + c - lengths[i]] + value
            } else {
                f64::NEG_INFINITY
            };
            best[i * width + c] = skip.max(take);
        }
    }
    let mut chosen = Vec::new();
    let mut c = capacity;
    for i in 0..n {
        if lengths[i] <= c {
            let take = best[(i + 1) * width + c - lengths[i]] + scores[i] * lengths[i] as f64;
            if take >= best[(i + 1) * width + c] {
                chosen.push(i);
                c -= lengths[i];
            }
        }
    }
    Ok(chosen)
}

/// Highest-scoring shots first (earlier index on ties), skipping any that
/// would exceed the capacity.
pub fn select_shots_greedy(scores: &[f64], lengths: &[usize], capacity: usize) -> Result<Vec<usize>> {
    if scores.len() != lengths.len() {
        return Err(Error::dim("shot lengths", scores.len(), lengths.len()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut used = 0;
    let mut chosen = Vec::new();
    for i in order {
        if used + lengths[i] <= capacity {
            used += lengths[i];
            chosen.push(i);
        }
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Harmonic mean of precision and recall of `machine` against `human`;
/// 0 when either set is empty or they do not overlap.
pub fn f_score(machine: &[usize], human: &[usize]) -> f64 {
    if machine.is_empty() || human.is_empty() {
        return 0.0;
    }
    let mut m = machine.to_vec();
    m.sort_unstable();
    m.dedup();
    let mut h = human.to_vec();
    h.sort_unstable();
    h.dedup();
    let overlap = m.iter().filter(|x| h.binary_search(x).is_ok()).count();
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / m.len() as f64;
    let r = overlap as f64 / h.len() as f64;
    2.0 * p * r / (p + r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub video_id: String,
    pub frame_scores: Vec<f64>,
    pub selected_shots: Vec<usize>,
    pub selected_frames: Vec<usize>,
    pub budget_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryConfig {
    pub budget_fraction: f64,
    pub selection: Selection,
    pub env: EnvConfig,
}

impl Default for SummaryConfig {
    fn default() -> Self {
        Self {
            budget_fraction: 0.15,
            selection: Selection::Knapsack,
            env: EnvConfig::default(),
        }
    }
}

/// Builds a summary from already computed frame scores.
pub fn summary_from_scores(video: &VideoRecord, frame_scores: Vec<f64>, config: &SummaryConfig) -> Result<Summary> {
    if frame_scores.len() != video.frames() {
        return Err(Error::dim("frame scores", video.frames(), frame_scores.len()));
    }
    let per_shot = shot_scores(&frame_scores, &video.shots)?;
    let lengths: Vec<usize> = video.shots.iter().map(Shot::len).collect();
    let capacity = budget_frames(config.budget_fraction, video.frames())?;
    let selected_shots = match config.selection {
        Selection::Knapsack => select_shots(&per_shot, &lengths, capacity)?,
        Selection::Greedy => select_shots_greedy(&per_shot, &lengths, capacity)?,
    };
    let selected_frames = selected_shots.iter().flat_map(|&s| video.shots[s].frames()).collect();
    Ok(Summary {
        video_id: video.id.clone(),
        frame_scores,
        selected_shots,
        selected_frames,
        budget_fraction: config.budget_fraction,
    })
}

pub fn summarize(qnet: &QNetwork, video: &VideoRecord, config: &SummaryConfig) -> Result<Summary> {
    let scores = score_frames(qnet, video, &config.env)?;
    summary_from_scores(video, scores, config)
}

/// Summarises `videos` on up to `threads` worker threads; output order
/// matches input order.
pub fn summarize_all(qnet: &QNetwork, videos: &[&VideoRecord], config: &SummaryConfig, threads: usize) -> Result<Vec<Summary>> {
    let threads = threads.max(1).min(videos.len().max(1));
    if threads == 1 {
        return videos.iter().map(|v| summarize(qnet, v, config)).collect();
    }
    let chunk = videos.len().div_ceil(threads);
    let parts: Vec<Result<Vec<Summary>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = videos
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|v| summarize(qnet, v, config)).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("summary worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(videos.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub video_id: String,
    pub fold: usize,
    pub f_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_video: Vec<VideoScore>,
    pub per_fold: Vec<f64>,
    /// Mean of the per-fold means.
    pub overall: f64,
}

impl EvalReport {
    /// Plain-text table with percentages to one decimal.
    pub fn to_table(&self) -> String {
        let mut s = String::from("fold  videos  F (%)\n");
        for (k, mean) in self.per_fold.iter().enumerate() {
            let n = self.per_video.iter().filter(|v| v.fold == k).count();
            let _ = writeln!(s, "{k:>4}  {n:>6}  {:>5.1}", 100.0 * mean);
        }
        let _ = writeln!(s, " all  {:>6}  {:>5.1}", self.per_video.len(), 100.0 * self.overall);
        s
    }
}

/// Mean F-score of a machine summary over the video's human summaries.
pub fn video_f_score(selected: &[usize], video: &VideoRecord) -> Result<f64> {
    if video.human_summaries.is_empty() {
        return Err(Error::State(format!("video {} has no human summaries", video.id)));
    }
    let total: f64 = video.human_summaries.iter().map(|h| f_score(selected, h)).sum();
    Ok(total / video.human_summaries.len() as f64)
}

/// Scores `summaries` (matched by video id) against human summaries and
/// aggregates by the test folds of `folds`.
pub fn evaluate_summaries(dataset: &Dataset, summaries: &[Summary], folds: &[Fold]) -> Result<EvalReport> {
    let by_id: HashMap<&str, &Summary> = summaries.iter().map(|s| (s.video_id.as_str(), s)).collect();
    let missing: Vec<&str> = dataset
        .videos
        .iter()
        .filter(|v| v.human_summaries.is_empty())
        .map(|v| v.id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::State(format!("videos without human summaries: {}", missing.join(", "))));
    }
    let mut fold_of = vec![None; dataset.len()];
    for (k, f) in folds.iter().enumerate() {
        for &i in &f.test {
            fold_of[i] = Some(k);
        }
    }
    let mut per_video = Vec::with_capacity(dataset.len());
    let mut sums = vec![(0.0, 0usize); folds.len()];
    for (i, v) in dataset.videos.iter().enumerate() {
        let fold = fold_of[i].ok_or_else(|| Error::State(format!("video {} is in no test fold", v.id)))?;
        let summary = by_id
            .get(v.id.as_str())
            .ok_or_else(|| Error::State(format!("no summary for video {}", v.id)))?;
        let f = video_f_score(&summary.selected_frames, v)?;
        sums[fold].0 += f;
        sums[fold].1 += 1;
        per_video.push(VideoScore {
            video_id: v.id.clone(),
            fold,
            f_score: f,
        });
    }
    let per_fold: Vec<f64> = sums
        .iter()
        .map(|&(s, n)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect();
    let overall = if per_fold.is_empty() {
        0.0
    } else {
        per_fold.iter().sum::<f64>() / per_fold.len() as f64
    };
    Ok(EvalReport {
        per_video,
        per_fold,
        overall,
    })
}

/// Summarises each video with the model of the fold whose test split holds
/// it, then scores the summaries.
pub fn evaluate(
    dataset: &Dataset,
    models: &[QNetwork],
    folds: &[Fold],
    config: &SummaryConfig,
    threads: usize,
) -> Result<(EvalReport, Vec<Summary>)> {
    if models.len() != folds.len() {
        return Err(Error::dim("fold models", folds.len(), models.len()));
    }
    let mut summaries = Vec::with_capacity(dataset.len());
    for (model, fold) in models.iter().zip(folds) {
        let videos: Vec<&VideoRecord> = fold.test.iter().map(|&i| &dataset.videos[i]).collect();
        summaries.extend(summarize_all(model, &videos, config, threads)?);
    }
    let report = evaluate_summaries(dataset, &summaries, folds)?;
    Ok((report, summaries))
}

//! Category-structured synthetic sequences.
//!
//! Each category owns a unit prototype direction. A video is cut into uniform
//! shots; a random subset of shots (the last one possibly truncated) is filled
//! with noisy copies of the category prototype, and every other shot with
//! noisy copies of one vector drawn from a distractor pool shared by all
//! categories. Only signal frames carry category information. The signal
//! frames are stored as the video's single human summary.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{uniform_shots, Dataset, FeatureSequence, VideoRecord, DEFAULT_SHOT_LENGTH};
use crate::error::{Error, Result};
use crate::neural::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub per_class: usize,
    pub frames: usize,
    pub dim: usize,
    pub signal_fraction: f64,
    pub noise_level: f64,
    pub shot_length: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: 5,
            per_class: 20,
            frames: 60,
            dim: 16,
            signal_fraction: 0.4,
            noise_level: 0.2,
            shot_length: DEFAULT_SHOT_LENGTH,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.classes < 2 {
            return fail(format!("classes must be >= 2, got {}", self.classes));
        }
        if self.dim < self.classes {
            return fail(format!("dim ({}) must be >= classes ({})", self.dim, self.classes));
        }
        if self.frames < 2 {
            return fail(format!("frames must be >= 2, got {}", self.frames));
        }
        if self.per_class == 0 || self.shot_length == 0 {
            return fail("per_class and shot_length must be positive".into());
        }
        if !(self.signal_fraction > 0.0 && self.signal_fraction < 1.0) {
            return fail(format!("signal_fraction {} not in (0, 1)", self.signal_fraction));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return fail(format!("noise_level {} must be finite and >= 0", self.noise_level));
        }
        Ok(())
    }

    /// Distractor pool size.
    pub fn pool_size(&self) -> usize {
        self.classes.max(4)
    }
}

/// Generated data plus the latent directions it was built from.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// `C × D`, unit rows.
    pub prototypes: Matrix,
    /// Unit rows.
    pub distractors: Matrix,
}

fn unit_gaussian<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Random unit directions, mutually orthogonal for the first `dim` of them.
fn directions<R: Rng + ?Sized>(count: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut v = unit_gaussian(dim, rng);
        if out.len() < dim {
            for u in &out {
                let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n < 1e-6 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= n);
        }
        out.push(v);
    }
    out
}

fn noisy_copy<R: Rng + ?Sized>(base: &[f64], noise: f64, rng: &mut R) -> Vec<f64> {
    let scale = noise / (base.len() as f64).sqrt();
    base.iter()
        .map(|&b| {
            let v = if noise > 0.0 {
                b + scale * rng.sample::<f64, _>(StandardNormal)
            } else {
                b
            };
            f64::from(v as f32)
        })
        .collect()
}

/// Deterministic given `config.seed`. Feature values are `f32`-representable
/// so the dataset round-trips through feature files exactly.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticData> {
    config.validate()?;
    let mut rng = crate::seed::component_rng(config.seed, "synthetic");
    let dirs = directions(config.classes + config.pool_size(), config.dim, &mut rng);
    let round = |v: &Vec<f64>| v.iter().map(|&x| f64::from(x as f32)).collect::<Vec<f64>>();
    let prototypes: Vec<Vec<f64>> = dirs[..config.classes].iter().map(round).collect();
    let distractors: Vec<Vec<f64>> = dirs[config.classes..].iter().map(round).collect();

    let t = config.frames;
    let n_signal = ((config.signal_fraction * t as f64).round() as usize).clamp(1, t - 1);
    let shots = uniform_shots(t, config.shot_length);
    let mut videos = Vec::with_capacity(config.classes * config.per_class);
    for c in 0..config.classes {
        for i in 0..config.per_class {
            let mut order: Vec<usize> = (0..shots.len()).collect();
            order.shuffle(&mut rng);
            let mut is_signal = vec![false; t];
            let mut remaining = n_signal;
            for &s in &order {
                if remaining == 0 {
                    break;
                }
                for f in shots[s].frames().take(remaining) {
                    is_signal[f] = true;
                    remaining -= 1;
                }
            }
            let mut rows = Vec::with_capacity(t);
            for shot in &shots {
                let distractor = &distractors[rng.random_range(0..distractors.len())];
                for f in shot.frames() {
                    let base = if is_signal[f] { &prototypes[c] } else { distractor };
                    rows.push(noisy_copy(base, config.noise_level, &mut rng));
                }
            }
            let features = FeatureSequence::new(Matrix::from_rows(&rows)?)?;
            let signal: Vec<usize> = (0..t).filter(|&f| is_signal[f]).collect();
            videos.push(VideoRecord {
                id: format!("syn-c{c:02}-{i:03}"),
                features,
                label: Some(c),
                shots: shots.clone(),
                human_summaries: vec![signal],
            });
        }
    }
    Ok(SyntheticData {
        dataset: Dataset {
            categories: (0..config.classes).map(|c| format!("category-{c}")).collect(),
            videos,
        },
        prototypes: Matrix::from_rows(&prototypes)?,
        distractors: Matrix::from_rows(&distractors)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn counting_and_structure() {
        let cfg = SyntheticConfig {
            seed: 7,
            ..SyntheticConfig::default()
        };
        let data = generate_synthetic(&cfg).unwrap();
        let d = &data.dataset;
        assert_eq!(d.len(), 100);
        assert!(!d.validate().has_errors());
        for v in &d.videos {
            assert_eq!(v.human_summaries.len(), 1);
            assert_eq!(v.human_summaries[0].len(), 24);
        }
    }

    #[test]
    fn zero_noise_signal_frames_equal_prototype() {
        let cfg = SyntheticConfig {
            classes: 3,
            per_class: 2,
            frames: 20,
            dim: 8,
            noise_level: 0.0,
            seed: 1,
            ..SyntheticConfig::default()
        };
        let data = generate_synthetic(&cfg).unwrap();
        for v in &data.dataset.videos {
            let proto = data.prototypes.row(v.label.unwrap());
            for &f in &v.human_summaries[0] {
                assert_eq!(v.features.frame(f), proto);
            }
        }
    }

    #[test]
    fn signal_frames_closest_to_own_prototype() {
        for noise in [0.1, 0.2, 0.3] {
            let cfg = SyntheticConfig {
                noise_level: noise,
                seed: 42,
                ..SyntheticConfig::default()
            };
            let data = generate_synthetic(&cfg).unwrap();
            for v in &data.dataset.videos {
                let own = v.label.unwrap();
                for &f in &v.human_summaries[0] {
                    let x = v.features.frame(f);
                    let s_own = cosine(x, data.prototypes.row(own));
                    for c in (0..cfg.classes).filter(|&c| c != own) {
                        assert!(s_own > cosine(x, data.prototypes.row(c)));
                    }
                }
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SyntheticConfig {
            per_class: 3,
            seed: 5,
            ..SyntheticConfig::default()
        };
        let a = generate_synthetic(&cfg).unwrap().dataset;
        let b = generate_synthetic(&cfg).unwrap().dataset;
        assert_eq!(a, b);
        let c = generate_synthetic(&SyntheticConfig { seed: 6, ..cfg }).unwrap().dataset;
        assert_ne!(a, c);
    }

    #[test]
    fn parameter_violations() {
        let base = SyntheticConfig::default();
        for bad in [
            SyntheticConfig { classes: 1, ..base.clone() },
            SyntheticConfig { dim: 3, ..base.clone() },
            SyntheticConfig { signal_fraction: 1.0, ..base.clone() },
            SyntheticConfig { signal_fraction: 0.0, ..base.clone() },
            SyntheticConfig { dim: 0, ..base.clone() },
        ] {
            assert!(generate_synthetic(&bad).is_err());
        }
    }
}

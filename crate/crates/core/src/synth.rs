//! Synthetic album generator with known ground truth. Every event gets a
//! unit-norm prototype direction and a power-law importance profile; image
//! features are the prototype scaled by ground-truth importance plus noise,
//! so event identity and importance are both recoverable by construction.
//! Also simulates multi-label crowd votes for consistency analyses.

use alloc::string::String;
use alloc::vec::Vec;

use libm::{pow, sqrt};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::dataset::{
    AlbumRecord, DatasetManifest, EventLabelDistribution, EventVocabulary, Split, VoteSet,
};
use crate::linalg::{argmax, dot, Mat32};
use crate::rng::{indexed_rng, stream_rng};

/// Prototypes closer than this in absolute cosine are redrawn.
const MAX_PROTOTYPE_COS: f64 = 0.85;
const PROTOTYPE_ATTEMPTS: usize = 1000;

/// Mass split between the primary and secondary label of ambiguous albums.
const PRIMARY_MASS: f64 = 0.7;
const SECONDARY_MASS: f64 = 0.3;

/// Chance a simulated worker votes the argmax label outright.
const WORKER_FIDELITY: f64 = 0.8;

/// Ceiling on ground-truth importance of outlier images.
const OUTLIER_IMPORTANCE_CAP: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    ConfigError(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub events: usize,
    pub albums_per_event: usize,
    pub album_size: (usize, usize),
    pub feature_dim: usize,
    /// Noise added to ground-truth importance before clamping.
    pub importance_noise: f64,
    /// Per-coordinate noise added to features.
    pub feature_noise: f64,
    /// Fraction of images drawn from a non-primary event.
    pub outlier_rate: f64,
    /// Probability an album carries a second ground-truth label.
    pub ambiguity: f64,
    pub workers: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            events: 6,
            albums_per_event: 40,
            album_size: (8, 20),
            feature_dim: 24,
            importance_noise: 0.1,
            feature_noise: 0.3,
            outlier_rate: 0.15,
            ambiguity: 0.2,
            workers: 12,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let err = |msg: &str| Err(SynthError::ConfigError(String::from(msg)));
        if self.events < 2 {
            return err("need at least 2 events");
        }
        if self.albums_per_event == 0 {
            return err("need at least 1 album per event");
        }
        if self.album_size.0 == 0 || self.album_size.0 > self.album_size.1 {
            return err("album size range must satisfy 1 <= min <= max");
        }
        if self.feature_dim == 0 {
            return err("feature dimension must be positive");
        }
        if !(self.importance_noise >= 0.0) || !(self.feature_noise >= 0.0) {
            return err("noise levels must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.outlier_rate) {
            return err("outlier rate must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.ambiguity) {
            return err("ambiguity must lie in [0, 1]");
        }
        if self.workers == 0 {
            return err("need at least 1 worker");
        }
        Ok(())
    }

    pub fn num_albums(&self) -> usize {
        self.events * self.albums_per_event
    }
}

/// The latent structure behind a generated dataset: one unit-norm feature
/// direction and one importance-profile exponent per event.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeGroundTruth {
    pub prototypes: Vec<Vec<f64>>,
    pub gammas: Vec<f64>,
}

impl GenerativeGroundTruth {
    /// Importance profile of event `e`: u^gamma_e on [0, 1].
    pub fn profile(&self, event: usize, u: f64) -> f64 {
        pow(u, self.gammas[event])
    }

    /// Event whose prototype is most aligned with the feature vector.
    pub fn nearest_prototype(&self, feature: &[f64]) -> usize {
        let sims: Vec<f64> = self.prototypes.iter().map(|p| dot(p, feature)).collect();
        argmax(&sims)
    }
}

/// The latent event structure implied by the config, reproducible without
/// generating any albums.
pub fn generative_truth(cfg: &SynthConfig) -> Result<GenerativeGroundTruth, SynthError> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, "synth-prototypes");
    let mut prototypes: Vec<Vec<f64>> = Vec::with_capacity(cfg.events);
    for _ in 0..cfg.events {
        let mut attempts = 0;
        let accepted = loop {
            attempts += 1;
            if attempts > PROTOTYPE_ATTEMPTS {
                return Err(SynthError::ConfigError(String::from(
                    "cannot place that many well-separated prototypes in this dimension",
                )));
            }
            let mut v: Vec<f64> =
                (0..cfg.feature_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = sqrt(dot(&v, &v));
            if norm < 1e-9 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            if prototypes.iter().all(|p| dot(p, &v).abs() < MAX_PROTOTYPE_COS) {
                break v;
            }
        };
        prototypes.push(accepted);
    }
    let gammas = (0..cfg.events).map(|e| [0.5, 1.0, 2.0][e % 3]).collect();
    Ok(GenerativeGroundTruth { prototypes, gammas })
}

/// Generates the full synthetic dataset: `events * albums_per_event` albums
/// with features, importance ground truth, and label distributions, split
/// 4:1:1 into train, validation, and test.
pub fn generate(cfg: &SynthConfig) -> Result<DatasetManifest, SynthError> {
    let truth = generative_truth(cfg)?;
    let vocab = EventVocabulary::new(
        (0..cfg.events).map(|e| alloc::format!("event-{e:02}")).collect(),
    )
    .expect("validated event count");

    let total = cfg.num_albums();
    let splits = assign_splits(total, cfg.seed);

    let importance_noise = Normal::new(0.0, cfg.importance_noise)
        .map_err(|_| SynthError::ConfigError(String::from("bad importance noise")))?;
    let feature_noise = Normal::new(0.0, cfg.feature_noise)
        .map_err(|_| SynthError::ConfigError(String::from("bad feature noise")))?;

    let mut albums = Vec::with_capacity(total);
    for i in 0..total {
        let primary = i / cfg.albums_per_event;
        // Each album owns an indexed stream so its content is independent of
        // generation order.
        let mut rng = indexed_rng(cfg.seed, "synth-album", i as u64);

        let n = rng.random_range(cfg.album_size.0..=cfg.album_size.1);
        let label_dist = if rng.random::<f64>() < cfg.ambiguity {
            let secondary = draw_other_event(&mut rng, cfg.events, primary);
            let mut probs = alloc::vec![0.0; cfg.events];
            probs[primary] = PRIMARY_MASS;
            probs[secondary] = SECONDARY_MASS;
            EventLabelDistribution::new(probs).expect("masses sum to 1")
        } else {
            EventLabelDistribution::degenerate(cfg.events, primary)
        };

        let mut gt = Vec::with_capacity(n);
        let mut features = Mat32::zeros(n, cfg.feature_dim);
        for j in 0..n {
            let outlier = rng.random::<f64>() < cfg.outlier_rate;
            let image_event =
                if outlier { draw_other_event(&mut rng, cfg.events, primary) } else { primary };
            let u: f64 = rng.random();
            let mut importance =
                (truth.profile(primary, u) + importance_noise.sample(&mut rng)).clamp(0.0, 1.0);
            if outlier {
                importance = importance.min(OUTLIER_IMPORTANCE_CAP);
            }
            gt.push(importance);
            let row = features.row_mut(j);
            for (x, &proto) in row.iter_mut().zip(&truth.prototypes[image_event]) {
                *x = (importance * proto + feature_noise.sample(&mut rng)) as f32;
            }
        }

        albums.push(
            AlbumRecord::new(
                alloc::format!("album-{i:04}"),
                (0..n).map(|j| alloc::format!("album-{i:04}-img-{j:03}")).collect(),
                features,
                Some(gt),
                label_dist,
                splits[i],
            )
            .expect("generated album is valid"),
        );
    }

    Ok(DatasetManifest::new(vocab, albums, cfg.feature_dim).expect("generated manifest is valid"))
}

fn draw_other_event<R: Rng>(rng: &mut R, events: usize, excluded: usize) -> usize {
    let pick = rng.random_range(0..events - 1);
    if pick >= excluded {
        pick + 1
    } else {
        pick
    }
}

/// Deterministic 4:1:1 assignment over a seeded shuffle of album indices.
fn assign_splits(total: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut stream_rng(seed, "synth-splits"));
    let n_train = total * 4 / 6;
    let n_val = total / 6;
    let mut splits = alloc::vec![Split::Test; total];
    for (pos, &album) in order.iter().enumerate() {
        splits[album] = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_val {
            Split::Validation
        } else {
            Split::Test
        };
    }
    splits
}

/// Simulates one album's crowd votes: each worker votes the argmax label
/// with high fidelity (otherwise a sample from the distribution) and adds
/// the runner-up label with probability equal to its mass.
pub fn simulate_votes<R: Rng>(
    album_id: &str,
    label_dist: &EventLabelDistribution,
    vocab: &EventVocabulary,
    workers: usize,
    rng: &mut R,
) -> VoteSet {
    let top = argmax(label_dist.probs());
    let second = runner_up(label_dist.probs(), top);
    let second_mass = second.map_or(0.0, |s| label_dist.probs()[s]);

    let mut votes = Vec::with_capacity(workers);
    for w in 0..workers {
        let first = if rng.random::<f64>() < WORKER_FIDELITY {
            top
        } else {
            crate::dataset::sample_label(label_dist, rng)
        };
        let mut labels = alloc::vec![String::from(vocab.name(first))];
        if rng.random::<f64>() < second_mass {
            let candidate = second.expect("positive mass implies a runner-up");
            let extra = if candidate == first { top } else { candidate };
            if extra != first {
                labels.push(String::from(vocab.name(extra)));
            }
        }
        votes.push((alloc::format!("worker-{w:02}"), labels));
    }
    VoteSet::new(String::from(album_id), votes).expect("simulated votes are well-formed")
}

fn runner_up(probs: &[f64], top: usize) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &p) in probs.iter().enumerate() {
        if i == top || p <= 0.0 {
            continue;
        }
        if best.is_none_or(|b| p > probs[b]) {
            best = Some(i);
        }
    }
    best
}

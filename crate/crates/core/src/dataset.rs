//! Data model for multi-label event albums: the event vocabulary, raw
//! annotator votes and their aggregation into label distributions, album
//! records with ordered image features, and the split-half worker
//! consistency analysis.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::linalg::Mat32;

pub const DIST_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DatasetError {
    #[error("vocabulary must contain at least 2 unique, non-empty names")]
    InvalidVocabulary,
    #[error("voted label `{0}` is not in the vocabulary")]
    UnknownLabel(String),
    #[error("every label was eliminated by the single-vote rule")]
    NoSurvivingLabel,
    #[error("worker `{0}` appears more than once in the vote set")]
    DuplicateWorker(String),
    #[error("a worker's label set must contain 1 to 3 labels")]
    BadLabelSetSize,
    #[error("label distribution is not a valid distribution")]
    InvalidDistribution,
    #[error("no workers present in the vote sets")]
    NoWorkers,
    #[error("no album had votes in both halves in any trial")]
    NoOverlap,
    #[error("{0}")]
    DimensionMismatch(String),
    #[error("ground-truth importance values must lie in [0, 1]")]
    ImportanceOutOfRange,
}

/// Ordered list of the C distinct event-type names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventVocabulary {
    names: Vec<String>,
}

impl EventVocabulary {
    pub fn new(names: Vec<String>) -> Result<Self, DatasetError> {
        if names.len() < 2 {
            return Err(DatasetError::InvalidVocabulary);
        }
        let unique: BTreeSet<&String> = names.iter().collect();
        if unique.len() != names.len() || names.iter().any(String::is_empty) {
            return Err(DatasetError::InvalidVocabulary);
        }
        Ok(EventVocabulary { names })
    }

    /// Number of event types C.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// One album's raw annotations: each worker selected 1 to 3 event names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteSet {
    pub album_id: String,
    votes: Vec<(String, Vec<String>)>,
}

impl VoteSet {
    pub fn new(album_id: String, votes: Vec<(String, Vec<String>)>) -> Result<Self, DatasetError> {
        let mut seen = BTreeSet::new();
        for (worker, labels) in &votes {
            if !seen.insert(worker) {
                return Err(DatasetError::DuplicateWorker(worker.clone()));
            }
            let distinct: BTreeSet<&String> = labels.iter().collect();
            if labels.is_empty() || labels.len() > 3 || distinct.len() != labels.len() {
                return Err(DatasetError::BadLabelSetSize);
            }
        }
        Ok(VoteSet { album_id, votes })
    }

    pub fn votes(&self) -> &[(String, Vec<String>)] {
        &self.votes
    }
}

/// Probability distribution over the event vocabulary with non-empty support.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLabelDistribution {
    probs: Vec<f64>,
}

impl EventLabelDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, DatasetError> {
        if probs.is_empty() || probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(DatasetError::InvalidDistribution);
        }
        let sum: f64 = probs.iter().sum();
        if libm::fabs(sum - 1.0) > DIST_SUM_TOL || probs.iter().all(|&p| p == 0.0) {
            return Err(DatasetError::InvalidDistribution);
        }
        Ok(EventLabelDistribution { probs })
    }

    /// Degenerate distribution putting all mass on `index`.
    pub fn degenerate(len: usize, index: usize) -> Self {
        let mut probs = alloc::vec![0.0; len];
        probs[index] = 1.0;
        EventLabelDistribution { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Indices with strictly positive mass.
    pub fn support(&self) -> Vec<usize> {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "validation" => Some(Split::Validation),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// One album: an ordered image sequence with features, an optional
/// ground-truth importance vector, and an event-label distribution.
///
/// Image order is the temporal sequence and is preserved by all I/O.
#[derive(Debug, Clone, PartialEq)]
pub struct AlbumRecord {
    pub album_id: String,
    pub image_ids: Vec<String>,
    pub features: Mat32,
    pub gt_importance: Option<Vec<f64>>,
    pub label_dist: EventLabelDistribution,
    pub split: Split,
}

impl AlbumRecord {
    pub fn new(
        album_id: String,
        image_ids: Vec<String>,
        features: Mat32,
        gt_importance: Option<Vec<f64>>,
        label_dist: EventLabelDistribution,
        split: Split,
    ) -> Result<Self, DatasetError> {
        let n = image_ids.len();
        if n == 0 {
            return Err(DatasetError::DimensionMismatch(String::from(
                "album must contain at least one image",
            )));
        }
        if features.rows() != n {
            return Err(DatasetError::DimensionMismatch(alloc::format!(
                "album `{album_id}`: {} feature rows for {n} images",
                features.rows()
            )));
        }
        if let Some(gt) = &gt_importance {
            if gt.len() != n {
                return Err(DatasetError::DimensionMismatch(alloc::format!(
                    "album `{album_id}`: {} importance values for {n} images",
                    gt.len()
                )));
            }
            if gt.iter().any(|&g| !(0.0..=1.0).contains(&g)) {
                return Err(DatasetError::ImportanceOutOfRange);
            }
        }
        Ok(AlbumRecord { album_id, image_ids, features, gt_importance, label_dist, split })
    }

    pub fn len(&self) -> usize {
        self.image_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_ids.is_empty()
    }
}

/// The full dataset: vocabulary, albums, and the shared feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub vocabulary: EventVocabulary,
    pub albums: Vec<AlbumRecord>,
    pub feature_dim: usize,
}

impl DatasetManifest {
    pub fn new(
        vocabulary: EventVocabulary,
        albums: Vec<AlbumRecord>,
        feature_dim: usize,
    ) -> Result<Self, DatasetError> {
        let c = vocabulary.len();
        for album in &albums {
            if album.features.cols() != feature_dim {
                return Err(DatasetError::DimensionMismatch(alloc::format!(
                    "album `{}`: feature dim {} != manifest dim {feature_dim}",
                    album.album_id,
                    album.features.cols()
                )));
            }
            if album.label_dist.len() != c {
                return Err(DatasetError::DimensionMismatch(alloc::format!(
                    "album `{}`: label distribution length {} != vocabulary size {c}",
                    album.album_id,
                    album.label_dist.len()
                )));
            }
        }
        Ok(DatasetManifest { vocabulary, albums, feature_dim })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &AlbumRecord> {
        self.albums.iter().filter(move |a| a.split == split)
    }
}

/// Aggregates one album's votes into a label distribution: each worker casts
/// one vote per selected label, labels with exactly one vote are eliminated,
/// and the surviving counts are normalized to sum 1.
pub fn aggregate_votes(
    votes: &VoteSet,
    vocab: &EventVocabulary,
) -> Result<EventLabelDistribution, DatasetError> {
    let mut counts = alloc::vec![0u32; vocab.len()];
    for (_, labels) in votes.votes() {
        for label in labels {
            let idx = vocab
                .index_of(label)
                .ok_or_else(|| DatasetError::UnknownLabel(label.clone()))?;
            counts[idx] += 1;
        }
    }
    let surviving: u32 = counts.iter().filter(|&&c| c >= 2).sum();
    if surviving == 0 {
        return Err(DatasetError::NoSurvivingLabel);
    }
    let probs = counts
        .iter()
        .map(|&c| if c >= 2 { f64::from(c) / f64::from(surviving) } else { 0.0 })
        .collect();
    EventLabelDistribution::new(probs)
}

/// Draws an event index with probability `probs[c]`.
pub fn sample_label<R: Rng>(dist: &EventLabelDistribution, rng: &mut R) -> usize {
    let r: f64 = rng.random();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &p) in dist.probs().iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            cum += p;
            if r < cum {
                return i;
            }
        }
    }
    // r landed in the rounding slack at the top of the CDF.
    last_positive
}

/// Split-half worker consistency: for each trial the distinct workers are
/// split into two random halves, and an album counts as agreeing when the
/// two halves' top-voted label sets intersect. Albums where either half cast
/// no votes are excluded from that trial's denominator. Returns agreement
/// pooled over albums and trials.
pub fn split_half_consistency<R: Rng>(
    votesets: &[VoteSet],
    trials: usize,
    rng: &mut R,
) -> Result<f64, DatasetError> {
    // Workers in first-appearance order, so the result is invariant under
    // worker-id relabeling.
    let mut workers: Vec<&String> = Vec::new();
    let mut worker_index: BTreeMap<&String, usize> = BTreeMap::new();
    for vs in votesets {
        for (worker, _) in vs.votes() {
            if !worker_index.contains_key(worker) {
                worker_index.insert(worker, workers.len());
                workers.push(worker);
            }
        }
    }
    if workers.is_empty() {
        return Err(DatasetError::NoWorkers);
    }

    // Per album, the label counts contributed by each worker index.
    let tallies: Vec<Vec<(usize, &[String])>> = votesets
        .iter()
        .map(|vs| {
            vs.votes()
                .iter()
                .map(|(w, labels)| (worker_index[w], labels.as_slice()))
                .collect()
        })
        .collect();

    let mut in_first_half = alloc::vec![false; workers.len()];
    let mut order: Vec<usize> = (0..workers.len()).collect();
    let mut agreed = 0u64;
    let mut counted = 0u64;
    for _ in 0..trials {
        order.shuffle(rng);
        let half = workers.len() / 2;
        for (i, &w) in order.iter().enumerate() {
            in_first_half[w] = i < half;
        }
        for tally in &tallies {
            let mut top = [BTreeMap::<&str, u32>::new(), BTreeMap::new()];
            for &(w, labels) in tally {
                let side = usize::from(!in_first_half[w]);
                for label in labels {
                    *top[side].entry(label.as_str()).or_insert(0) += 1;
                }
            }
            if top[0].is_empty() || top[1].is_empty() {
                continue;
            }
            counted += 1;
            if argmax_labels(&top[0]).intersection(&argmax_labels(&top[1])).next().is_some() {
                agreed += 1;
            }
        }
    }
    if counted == 0 {
        return Err(DatasetError::NoOverlap);
    }
    Ok(agreed as f64 / counted as f64)
}

fn argmax_labels<'a>(counts: &BTreeMap<&'a str, u32>) -> BTreeSet<&'a str> {
    let max = counts.values().copied().max().unwrap_or(0);
    counts
        .iter()
        .filter(|(_, &c)| c == max)
        .map(|(&l, _)| l)
        .collect()
}

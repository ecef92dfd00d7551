//! The three trainable reference predictors that feed the fusion loop:
//!
//! - [`ImageEventModel`]: per-image event classifier producing the `N x C`
//!   matrix `Q`.
//! - [`SequenceEventModel`]: LSTM over the album's image order producing the
//!   anchor distribution `p_hat`.
//! - [`ImportanceModel`]: gated Siamese scorer producing the
//!   event-conditioned importance matrix `W`.
//!
//! All gradients are handwritten and checked against central finite
//! differences. Training is plain SGD, single-threaded, and deterministic
//! given the config seed.

mod common;
mod image_event;
mod importance;
mod pca;
mod ranking;
mod sequence_event;

pub use common::{cross_entropy, sigmoid, softmax, tanh, Dense, FlatParams};
pub use image_event::{predict_image_events, train_image_event, ImageEventGrad, ImageEventModel};
pub use importance::{predict_importance, train_importance, ImportanceGrad, ImportanceModel};
pub use pca::{pca_apply, pca_fit, PcaTransform};
pub use ranking::piecewise_ranking_loss;
pub use sequence_event::{
    lstm_step, predict_sequence_event, train_sequence_event, LstmCell, SequenceEventGrad,
    SequenceEventModel,
};

use alloc::string::String;
use alloc::vec::Vec;

use crate::dataset::{DatasetManifest, Split};
use crate::linalg::Mat;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PredictorError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("the requested split contains no albums")]
    EmptySplit,
    #[error("a training album is missing ground-truth importance")]
    MissingGroundTruth,
    #[error("{0}")]
    DimensionMismatch(String),
    #[error("covariance is zero (all feature rows identical)")]
    DegenerateCovariance,
    #[error("{rows} samples are too few to fit {needed} principal directions")]
    InsufficientSamples { rows: usize, needed: usize },
    #[error("invalid margins: m_s = {m_s}, m_d = {m_d} (need 0 <= m_s < m_d)")]
    InvalidMargins { m_s: f64, m_d: f64 },
    #[error("album has no images")]
    EmptyAlbum,
}

/// Hyper-parameters shared by the three trainers.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Similar-pair margin of the piecewise ranking loss.
    pub margin_similar: f64,
    /// Different-pair margin of the piecewise ranking loss.
    pub margin_different: f64,
    /// Hidden width; 0 makes the image-event model linear.
    pub hidden: usize,
    /// PCA output dimension d'.
    pub reduced_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 30,
            batch_size: 16,
            seed: 0,
            margin_similar: 0.1,
            margin_different: 0.3,
            hidden: 32,
            reduced_dim: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PredictorError> {
        if !(self.learning_rate > 0.0) {
            return Err(PredictorError::InvalidConfig(String::from(
                "learning rate must be positive",
            )));
        }
        if self.epochs == 0 {
            return Err(PredictorError::InvalidConfig(String::from("epochs must be at least 1")));
        }
        if self.batch_size == 0 {
            return Err(PredictorError::InvalidConfig(String::from(
                "batch size must be at least 1",
            )));
        }
        if self.reduced_dim == 0 {
            return Err(PredictorError::InvalidConfig(String::from(
                "reduced dimension must be at least 1",
            )));
        }
        if !(0.0 <= self.margin_similar && self.margin_similar < self.margin_different) {
            return Err(PredictorError::InvalidMargins {
                m_s: self.margin_similar,
                m_d: self.margin_different,
            });
        }
        Ok(())
    }
}

/// A trained model together with the mean loss observed in each epoch.
#[derive(Debug, Clone)]
pub struct TrainRun<M> {
    pub model: M,
    pub epoch_losses: Vec<f64>,
}

/// Train-split albums reduced through a freshly fit PCA. Shared preamble of
/// all three trainers.
struct ReducedTrainSet {
    pca: PcaTransform,
    /// One reduced `N x d'` matrix per train album, in manifest order.
    albums: Vec<Mat>,
    /// Indices of the train albums in `manifest.albums`.
    album_indices: Vec<usize>,
}

fn reduce_train_split(
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
) -> Result<ReducedTrainSet, PredictorError> {
    let album_indices: Vec<usize> = manifest
        .albums
        .iter()
        .enumerate()
        .filter(|(_, a)| a.split == Split::Train)
        .map(|(i, _)| i)
        .collect();
    if album_indices.is_empty() {
        return Err(PredictorError::EmptySplit);
    }

    let total: usize = album_indices.iter().map(|&i| manifest.albums[i].len()).sum();
    let mut stacked = Mat::zeros(total, manifest.feature_dim);
    let mut row = 0;
    for &i in &album_indices {
        let feats = manifest.albums[i].features.to_f64();
        for r in 0..feats.rows() {
            stacked.row_mut(row).copy_from_slice(feats.row(r));
            row += 1;
        }
    }

    let pca = pca_fit(&stacked, cfg.reduced_dim)?;
    let albums = album_indices
        .iter()
        .map(|&i| pca_apply(&pca, &manifest.albums[i].features.to_f64()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ReducedTrainSet { pca, albums, album_indices })
}

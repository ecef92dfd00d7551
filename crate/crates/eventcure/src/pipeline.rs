//! Album-level orchestration: computing predictor outputs per album, running
//! the fusion loop across a manifest, and scoring the evaluation methods on
//! the test split. Albums are processed in parallel; results are collected in
//! manifest order so outputs stay deterministic.

use std::env;

use eventcure_core::dataset::{AlbumRecord, DatasetManifest, Split};
use eventcure_core::fusion::{
    grid_search, iterate, iterate_unanchored, FusionConfig, FusionError, FusionInputs,
    FusionResult, GridSearchOutcome, LabeledInputs,
};
use eventcure_core::linalg::{argmax, Mat};
use eventcure_core::metrics::{
    evaluate_curation, f1_score, top1_accuracy, ConfusionMatrix, EvaluationReport, MetricsError,
};
use eventcure_core::predictors::{
    pca_apply, predict_image_events, predict_importance, predict_sequence_event, ImageEventModel,
    ImportanceModel, PredictorError, SequenceEventModel,
};
use eventcure_core::rng::indexed_rng;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "EVENTCURE_THREADS";

#[derive(Debug, Error)]
pub enum PipelineError {
    /// A flag or setting is unusable, before any data was touched.
    #[error("{0}")]
    Config(String),
    /// The manifest or a model file does not fit the requested run.
    #[error("{0}")]
    Data(String),
    /// An internal invariant broke on inputs that had already validated.
    #[error("{0}")]
    Internal(String),
}

fn predictor_err(e: PredictorError) -> PipelineError {
    PipelineError::Data(e.to_string())
}

/// The evaluation methods. The first four produce an album event
/// distribution; the iterative ones and the last three also or instead
/// produce per-image curation scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    CnnRecognition,
    CnnLstm,
    CnnIterative,
    CnnLstmIterative,
    NoeventTest,
    GtEvent,
    Random,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::CnnRecognition,
        Method::CnnLstm,
        Method::CnnIterative,
        Method::CnnLstmIterative,
        Method::NoeventTest,
        Method::GtEvent,
        Method::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::CnnRecognition => "cnn-recognition",
            Method::CnnLstm => "cnn-lstm",
            Method::CnnIterative => "cnn-iterative",
            Method::CnnLstmIterative => "cnn-lstm-iterative",
            Method::NoeventTest => "noevent-test",
            Method::GtEvent => "gt-event",
            Method::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.as_str() == s)
    }

    fn needs_image(self) -> bool {
        matches!(self, Method::CnnRecognition | Method::CnnIterative | Method::CnnLstmIterative)
    }

    fn needs_sequence(self) -> bool {
        matches!(self, Method::CnnLstm | Method::CnnLstmIterative)
    }

    fn needs_importance(self) -> bool {
        matches!(
            self,
            Method::CnnIterative | Method::CnnLstmIterative | Method::NoeventTest | Method::GtEvent
        )
    }
}

/// Whatever trained models a run has on hand; each method checks out the
/// ones it needs.
#[derive(Debug, Default)]
pub struct ModelSet {
    pub image: Option<ImageEventModel>,
    pub sequence: Option<SequenceEventModel>,
    pub importance: Option<ImportanceModel>,
}

impl ModelSet {
    fn require(&self, method: Method) -> Result<(), PipelineError> {
        let missing = |what: &str, flag: &str| {
            PipelineError::Data(format!(
                "method `{}` needs {what} model ({flag})",
                method.as_str()
            ))
        };
        if method.needs_image() && self.image.is_none() {
            return Err(missing("an image event", "--image-model"));
        }
        if method.needs_sequence() && self.sequence.is_none() {
            return Err(missing("a sequence event", "--sequence-model"));
        }
        if method.needs_importance() && self.importance.is_none() {
            return Err(missing("an importance", "--importance-model"));
        }
        Ok(())
    }
}

/// Runs `f` under the thread cap from [`THREADS_ENV`], if any.
fn with_thread_cap<R: Send>(f: impl FnOnce() -> R + Send) -> Result<R, PipelineError> {
    match env::var(THREADS_ENV) {
        Err(env::VarError::NotPresent) => Ok(f()),
        Err(e) => Err(PipelineError::Config(format!("{THREADS_ENV}: {e}"))),
        Ok(s) => {
            let n = parse_thread_limit(&s)?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| PipelineError::Internal(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

fn parse_thread_limit(s: &str) -> Result<usize, PipelineError> {
    match s.trim().parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(PipelineError::Config(format!(
            "{THREADS_ENV}=`{s}` is not a positive thread count"
        ))),
    }
}

fn image_q(model: &ImageEventModel, features: &Mat) -> Result<Mat, PipelineError> {
    let reduced = pca_apply(&model.pca, features).map_err(predictor_err)?;
    predict_image_events(model, &reduced).map_err(predictor_err)
}

fn importance_w(model: &ImportanceModel, features: &Mat) -> Result<Mat, PipelineError> {
    let reduced = pca_apply(&model.pca, features).map_err(predictor_err)?;
    predict_importance(model, &reduced).map_err(predictor_err)
}

fn sequence_p_hat(model: &SequenceEventModel, features: &Mat) -> Result<Vec<f64>, PipelineError> {
    let reduced = pca_apply(&model.pca, features).map_err(predictor_err)?;
    predict_sequence_event(model, &reduced).map_err(predictor_err)
}

fn mean_rows(m: &Mat) -> Vec<f64> {
    let mut mean = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (acc, &x) in mean.iter_mut().zip(m.row(r)) {
            *acc += x / m.rows() as f64;
        }
    }
    mean
}

/// Predictor outputs for one album, assembled with each model's own
/// dimensionality reduction.
pub fn fusion_inputs(
    image: &ImageEventModel,
    sequence: &SequenceEventModel,
    importance: &ImportanceModel,
    album: &AlbumRecord,
) -> Result<FusionInputs, PipelineError> {
    let features = album.features.to_f64();
    let q = image_q(image, &features)?;
    let w = importance_w(importance, &features)?;
    let p_hat = sequence_p_hat(sequence, &features)?;
    FusionInputs::new(q, w, p_hat)
        .map_err(|e| PipelineError::Internal(format!("album `{}`: {e}", album.album_id)))
}

/// Runs the full fusion loop over every album, in manifest order.
pub fn fuse_all(
    manifest: &DatasetManifest,
    image: &ImageEventModel,
    sequence: &SequenceEventModel,
    importance: &ImportanceModel,
    cfg: &FusionConfig,
) -> Result<Vec<(String, FusionResult)>, PipelineError> {
    cfg.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
    with_thread_cap(|| {
        manifest
            .albums
            .par_iter()
            .map(|album| {
                let inputs = fusion_inputs(image, sequence, importance, album)?;
                let result = iterate(&inputs, cfg).map_err(|e| {
                    PipelineError::Internal(format!("album `{}`: {e}", album.album_id))
                })?;
                Ok((album.album_id.clone(), result))
            })
            .collect()
    })?
}

struct AlbumScores {
    p: Option<Vec<f64>>,
    v: Option<Vec<f64>>,
}

fn score_album(
    models: &ModelSet,
    method: Method,
    cfg: &FusionConfig,
    seed: u64,
    index: usize,
    album: &AlbumRecord,
) -> Result<AlbumScores, PipelineError> {
    let features = album.features.to_f64();
    let fusion_err = |e: FusionError| {
        PipelineError::Internal(format!("album `{}`: {e}", album.album_id))
    };
    Ok(match method {
        Method::CnnRecognition => {
            let q = image_q(models.image.as_ref().unwrap(), &features)?;
            AlbumScores { p: Some(mean_rows(&q)), v: None }
        }
        Method::CnnLstm => {
            let p = sequence_p_hat(models.sequence.as_ref().unwrap(), &features)?;
            AlbumScores { p: Some(p), v: None }
        }
        Method::CnnIterative => {
            let q = image_q(models.image.as_ref().unwrap(), &features)?;
            let w = importance_w(models.importance.as_ref().unwrap(), &features)?;
            // Placeholder anchor; the unanchored loop never reads it.
            let uniform = vec![1.0 / q.cols() as f64; q.cols()];
            let inputs = FusionInputs::new(q, w, uniform).map_err(fusion_err)?;
            let result = iterate_unanchored(&inputs, cfg).map_err(fusion_err)?;
            AlbumScores { p: Some(result.p), v: Some(result.v) }
        }
        Method::CnnLstmIterative => {
            let inputs = fusion_inputs(
                models.image.as_ref().unwrap(),
                models.sequence.as_ref().unwrap(),
                models.importance.as_ref().unwrap(),
                album,
            )?;
            let result = iterate(&inputs, cfg).map_err(fusion_err)?;
            AlbumScores { p: Some(result.p), v: Some(result.v) }
        }
        Method::NoeventTest => {
            let w = importance_w(models.importance.as_ref().unwrap(), &features)?;
            let v = (0..w.rows())
                .map(|r| w.row(r).iter().sum::<f64>() / w.cols() as f64)
                .collect();
            AlbumScores { p: None, v: Some(v) }
        }
        Method::GtEvent => {
            let w = importance_w(models.importance.as_ref().unwrap(), &features)?;
            let event = argmax(album.label_dist.probs());
            AlbumScores { p: None, v: Some(w.column(event)) }
        }
        Method::Random => {
            let mut rng = indexed_rng(seed, "eval-random", index as u64);
            let v = (0..album.len()).map(|_| rng.random::<f64>()).collect();
            AlbumScores { p: None, v: Some(v) }
        }
    })
}

/// A method's scores on the test split: the report rows it defines, plus the
/// recognition confusion matrix when the method predicts events.
#[derive(Debug, Clone)]
pub struct MethodEvaluation {
    pub report: EvaluationReport,
    pub confusion: Option<ConfusionMatrix>,
}

/// Scores `method` on the manifest's test split. Recognition methods report
/// `accuracy` and `f1`; curation methods report `map` and `precision` at each
/// cutoff in `t_list`; the iterative methods report both.
pub fn evaluate_method(
    manifest: &DatasetManifest,
    models: &ModelSet,
    method: Method,
    cfg: &FusionConfig,
    t_list: &[u32],
    seed: u64,
) -> Result<MethodEvaluation, PipelineError> {
    models.require(method)?;
    cfg.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
    let albums: Vec<(usize, &AlbumRecord)> = manifest
        .albums
        .iter()
        .enumerate()
        .filter(|(_, a)| a.split == Split::Test)
        .collect();
    if albums.is_empty() {
        return Err(PipelineError::Data(String::from("manifest has no test albums")));
    }

    let scored: Vec<AlbumScores> = with_thread_cap(|| {
        albums
            .par_iter()
            .map(|&(index, album)| score_album(models, method, cfg, seed, index, album))
            .collect::<Result<_, _>>()
    })??;

    let mut report = EvaluationReport::new();
    let mut confusion = None;
    if scored[0].p.is_some() {
        let ps: Vec<Vec<f64>> = scored.iter().map(|s| s.p.clone().unwrap()).collect();
        let gts: Vec<_> = albums.iter().map(|&(_, a)| a.label_dist.clone()).collect();
        let internal = |e: MetricsError| PipelineError::Internal(e.to_string());
        report.push("accuracy", None, top1_accuracy(&ps, &gts).map_err(internal)?);
        report.push("f1", None, f1_score(&ps, &gts).map_err(internal)?);
        confusion = Some(ConfusionMatrix::from_predictions(&ps, &gts).map_err(internal)?);
    }
    if scored[0].v.is_some() {
        let refs: Vec<&AlbumRecord> = albums.iter().map(|&(_, a)| a).collect();
        let scores: Vec<Vec<f64>> = scored.iter().map(|s| s.v.clone().unwrap()).collect();
        let curation = evaluate_curation(&refs, &scores, t_list).map_err(|e| match e {
            MetricsError::MissingGroundTruth => PipelineError::Data(String::from(
                "curation metrics need ground-truth importance on every test album",
            )),
            MetricsError::InvalidPercent(t) => {
                PipelineError::Config(format!("cutoff {t}% is out of range"))
            }
            MetricsError::EmptyEvaluation => {
                PipelineError::Config(String::from("empty cutoff list"))
            }
            other => PipelineError::Internal(other.to_string()),
        })?;
        report.rows.extend(curation.rows);
    }
    Ok(MethodEvaluation { report, confusion })
}

/// Grid search over the validation split.
pub fn grid_search_validation(
    manifest: &DatasetManifest,
    image: &ImageEventModel,
    sequence: &SequenceEventModel,
    importance: &ImportanceModel,
    alpha_grid: &[f64],
    m_grid: &[f64],
    template: &FusionConfig,
) -> Result<GridSearchOutcome, PipelineError> {
    let validation: Vec<&AlbumRecord> = manifest.split(Split::Validation).collect();
    let labeled: Vec<LabeledInputs> = with_thread_cap(|| {
        validation
            .par_iter()
            .map(|album| {
                Ok(LabeledInputs {
                    inputs: fusion_inputs(image, sequence, importance, album)?,
                    labels: album.label_dist.clone(),
                })
            })
            .collect::<Result<_, PipelineError>>()
    })??;
    grid_search(&labeled, alpha_grid, m_grid, template).map_err(|e| match e {
        FusionError::EmptyGrid => PipelineError::Config(String::from("empty parameter grid")),
        FusionError::EmptyValidationSet => {
            PipelineError::Data(String::from("manifest has no validation albums"))
        }
        FusionError::InvalidConfig(msg) => PipelineError::Config(msg.to_string()),
        other => PipelineError::Internal(other.to_string()),
    })
}

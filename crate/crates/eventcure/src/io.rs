//! On-disk formats: the dataset manifest with its per-album feature files,
//! trained model snapshots, fusion results, confusion matrices, class
//! mappings, and report CSVs.
//!
//! The manifest is a single JSON document; each album's features live in a
//! sidecar binary file referenced by a path relative to the manifest. All
//! writers refuse to clobber existing files unless `force` is set.

use std::fs;
use std::path::{Path, PathBuf};

use eventcure_core::dataset::{
    AlbumRecord, DatasetManifest, EventLabelDistribution, EventVocabulary, Split,
};
use eventcure_core::fusion::{FusionResult, GridSearchOutcome};
use eventcure_core::linalg::{Mat, Mat32};
use eventcure_core::metrics::{ConfusionMatrix, EvaluationReport, LabelMapping};
use eventcure_core::predictors::{
    Dense, ImageEventModel, ImportanceModel, LstmCell, PcaTransform, SequenceEventModel,
};
use eventcure_core::synth::SynthConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Leading bytes of every feature file.
pub const FEATURE_MAGIC: [u8; 4] = *b"EVCF";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: PathBuf, line: usize, column: usize, message: String },
    #[error("{0}")]
    Data(String),
    #[error("{0} exists; pass --force to overwrite")]
    WouldOverwrite(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

fn parse_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| IoError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Fails unless `path` is absent or `force` is set.
pub fn check_overwrite(path: &Path, force: bool) -> Result<(), IoError> {
    if !force && path.exists() {
        return Err(IoError::WouldOverwrite(path.to_path_buf()));
    }
    Ok(())
}

/// Writes `text` under the overwrite guard.
pub fn write_text(path: &Path, text: &str, force: bool) -> Result<(), IoError> {
    check_overwrite(path, force)?;
    fs::write(path, text).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T, force: bool) -> Result<(), IoError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| IoError::Data(e.to_string()))?;
    text.push('\n');
    write_text(path, &text, force)
}

/// Binary feature file: magic, u32 row count, u32 column count, then
/// row-major f32 values, all little-endian.
pub fn write_features(path: &Path, features: &Mat32) -> Result<(), IoError> {
    let rows = u32::try_from(features.rows())
        .map_err(|_| IoError::Data(format!("{} rows exceed the format", features.rows())))?;
    let cols = u32::try_from(features.cols())
        .map_err(|_| IoError::Data(format!("{} columns exceed the format", features.cols())))?;
    let mut out = Vec::with_capacity(12 + features.as_slice().len() * 4);
    out.extend_from_slice(&FEATURE_MAGIC);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for &x in features.as_slice() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn read_features(path: &Path) -> Result<Mat32, IoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let fail = |m: String| IoError::Data(format!("{}: {m}", path.display()));
    if bytes.len() < 12 {
        return Err(fail(format!("{} bytes is too short for a feature file", bytes.len())));
    }
    if bytes[..4] != FEATURE_MAGIC {
        return Err(fail(String::from("bad magic bytes")));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| fail(String::from("declared size overflows")))?;
    if bytes.len() != 12 + payload {
        return Err(fail(format!(
            "{} payload bytes for a {rows}x{cols} matrix",
            bytes.len() - 12
        )));
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Mat32::from_vec(rows, cols, data))
}

#[derive(Serialize, Deserialize)]
struct ManifestDoc {
    vocabulary: Vec<String>,
    feature_dim: usize,
    albums: Vec<AlbumDoc>,
}

#[derive(Serialize, Deserialize)]
struct AlbumDoc {
    album_id: String,
    image_ids: Vec<String>,
    label_dist: Vec<f64>,
    gt_importance: Option<Vec<f64>>,
    split: String,
    features_file: String,
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Writes the manifest JSON at `path` and one feature file per album under
/// `features/` next to it.
pub fn save_manifest(manifest: &DatasetManifest, path: &Path, force: bool) -> Result<(), IoError> {
    check_overwrite(path, force)?;
    let dir = manifest_dir(path);
    let features_dir = dir.join("features");
    fs::create_dir_all(&features_dir).map_err(io_err(&features_dir))?;
    let mut albums = Vec::with_capacity(manifest.albums.len());
    for album in &manifest.albums {
        if album.album_id.contains(['/', '\\']) {
            return Err(IoError::Data(format!(
                "album id `{}` cannot name a feature file",
                album.album_id
            )));
        }
        let rel = format!("features/{}.evcf", album.album_id);
        let feature_path = dir.join(&rel);
        check_overwrite(&feature_path, force)?;
        write_features(&feature_path, &album.features)?;
        albums.push(AlbumDoc {
            album_id: album.album_id.clone(),
            image_ids: album.image_ids.clone(),
            label_dist: album.label_dist.probs().to_vec(),
            gt_importance: album.gt_importance.clone(),
            split: album.split.as_str().to_string(),
            features_file: rel,
        });
    }
    let doc = ManifestDoc {
        vocabulary: manifest.vocabulary.names().to_vec(),
        feature_dim: manifest.feature_dim,
        albums,
    };
    write_json(path, &doc, force)
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest, IoError> {
    let doc: ManifestDoc = parse_json(path)?;
    let dir = manifest_dir(path);
    let vocabulary = EventVocabulary::new(doc.vocabulary).map_err(|e| IoError::Data(e.to_string()))?;
    let mut albums = Vec::with_capacity(doc.albums.len());
    for a in doc.albums {
        let features = read_features(&dir.join(&a.features_file))?;
        let split = Split::parse(&a.split).ok_or_else(|| {
            IoError::Data(format!("album `{}`: unknown split `{}`", a.album_id, a.split))
        })?;
        let label_dist = EventLabelDistribution::new(a.label_dist)
            .map_err(|e| IoError::Data(format!("album `{}`: {e}", a.album_id)))?;
        let record =
            AlbumRecord::new(a.album_id, a.image_ids, features, a.gt_importance, label_dist, split)
                .map_err(|e| IoError::Data(e.to_string()))?;
        albums.push(record);
    }
    DatasetManifest::new(vocabulary, albums, doc.feature_dim)
        .map_err(|e| IoError::Data(e.to_string()))
}

/// Generator settings read from a JSON document; absent fields keep their
/// defaults, and command-line flags override both.
#[derive(Debug, Default, Deserialize)]
pub struct SynthPatch {
    pub events: Option<usize>,
    pub albums_per_event: Option<usize>,
    pub album_size: Option<(usize, usize)>,
    pub feature_dim: Option<usize>,
    pub importance_noise: Option<f64>,
    pub feature_noise: Option<f64>,
    pub outlier_rate: Option<f64>,
    pub ambiguity: Option<f64>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
}

impl SynthPatch {
    pub fn apply(&self, cfg: &mut SynthConfig) {
        if let Some(v) = self.events {
            cfg.events = v;
        }
        if let Some(v) = self.albums_per_event {
            cfg.albums_per_event = v;
        }
        if let Some(v) = self.album_size {
            cfg.album_size = v;
        }
        if let Some(v) = self.feature_dim {
            cfg.feature_dim = v;
        }
        if let Some(v) = self.importance_noise {
            cfg.importance_noise = v;
        }
        if let Some(v) = self.feature_noise {
            cfg.feature_noise = v;
        }
        if let Some(v) = self.outlier_rate {
            cfg.outlier_rate = v;
        }
        if let Some(v) = self.ambiguity {
            cfg.ambiguity = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
    }
}

pub fn load_synth_patch(path: &Path) -> Result<SynthPatch, IoError> {
    parse_json(path)
}

#[derive(Serialize, Deserialize)]
struct MatDoc {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl MatDoc {
    fn from_mat(m: &Mat) -> MatDoc {
        MatDoc { rows: m.rows(), cols: m.cols(), data: m.as_slice().to_vec() }
    }

    fn into_mat(self, what: &str) -> Result<Mat, IoError> {
        let expected = self.rows.checked_mul(self.cols);
        if expected != Some(self.data.len()) {
            return Err(IoError::Data(format!(
                "{what}: {}x{} shape with {} values",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(Mat::from_vec(self.rows, self.cols, self.data))
    }
}

#[derive(Serialize, Deserialize)]
struct DenseDoc {
    w: MatDoc,
    b: Vec<f64>,
}

impl DenseDoc {
    fn from_dense(d: &Dense) -> DenseDoc {
        DenseDoc { w: MatDoc::from_mat(&d.w), b: d.b.clone() }
    }

    fn into_dense(self, what: &str) -> Result<Dense, IoError> {
        let w = self.w.into_mat(what)?;
        if self.b.len() != w.rows() {
            return Err(IoError::Data(format!(
                "{what}: {} bias entries for {} output rows",
                self.b.len(),
                w.rows()
            )));
        }
        Ok(Dense { w, b: self.b })
    }
}

#[derive(Serialize, Deserialize)]
struct PcaDoc {
    mean: Vec<f64>,
    basis: MatDoc,
    explained_variance: Vec<f64>,
}

impl PcaDoc {
    fn from_pca(p: &PcaTransform) -> PcaDoc {
        PcaDoc {
            mean: p.mean.clone(),
            basis: MatDoc::from_mat(&p.basis),
            explained_variance: p.explained_variance.clone(),
        }
    }

    fn into_pca(self) -> Result<PcaTransform, IoError> {
        let basis = self.basis.into_mat("pca basis")?;
        if basis.rows() != self.mean.len() || basis.cols() != self.explained_variance.len() {
            return Err(IoError::Data(format!(
                "pca: {}x{} basis against {} means and {} variances",
                basis.rows(),
                basis.cols(),
                self.mean.len(),
                self.explained_variance.len()
            )));
        }
        Ok(PcaTransform { mean: self.mean, basis, explained_variance: self.explained_variance })
    }
}

#[derive(Serialize, Deserialize)]
struct CellDoc {
    w: Vec<MatDoc>,
    u: Vec<MatDoc>,
    b: Vec<Vec<f64>>,
}

impl CellDoc {
    fn from_cell(c: &LstmCell) -> CellDoc {
        CellDoc {
            w: c.w.iter().map(MatDoc::from_mat).collect(),
            u: c.u.iter().map(MatDoc::from_mat).collect(),
            b: c.b.to_vec(),
        }
    }

    fn into_cell(self) -> Result<LstmCell, IoError> {
        if self.w.len() != 4 || self.u.len() != 4 || self.b.len() != 4 {
            return Err(IoError::Data(String::from("cell: expected one weight set per gate")));
        }
        let w: Vec<Mat> =
            self.w.into_iter().map(|m| m.into_mat("cell input weights")).collect::<Result<_, _>>()?;
        let u: Vec<Mat> = self
            .u
            .into_iter()
            .map(|m| m.into_mat("cell recurrent weights"))
            .collect::<Result<_, _>>()?;
        let hidden = self.b[0].len();
        let input = w[0].cols();
        for g in 0..4 {
            if w[g].rows() != hidden
                || w[g].cols() != input
                || u[g].rows() != hidden
                || u[g].cols() != hidden
                || self.b[g].len() != hidden
            {
                return Err(IoError::Data(format!("cell: gate {g} shapes disagree")));
            }
        }
        let into_array = |v: Vec<Mat>| <[Mat; 4]>::try_from(v).expect("length checked");
        Ok(LstmCell {
            w: into_array(w),
            u: into_array(u),
            b: <[Vec<f64>; 4]>::try_from(self.b).expect("length checked"),
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum ModelDoc {
    ImageEvent { pca: PcaDoc, hidden: Option<DenseDoc>, output: DenseDoc },
    SequenceEvent { pca: PcaDoc, cell: CellDoc, output: DenseDoc },
    Importance { pca: PcaDoc, trunk: DenseDoc, heads: DenseDoc, pathway2: MatDoc },
}

impl ModelDoc {
    fn kind(&self) -> &'static str {
        match self {
            ModelDoc::ImageEvent { .. } => "image-event",
            ModelDoc::SequenceEvent { .. } => "sequence-event",
            ModelDoc::Importance { .. } => "importance",
        }
    }
}

fn wrong_kind(path: &Path, expected: &str, found: &ModelDoc) -> IoError {
    IoError::Data(format!(
        "{}: expected {expected} model, found `{}`",
        path.display(),
        found.kind()
    ))
}

pub fn save_image_event_model(
    path: &Path,
    model: &ImageEventModel,
    force: bool,
) -> Result<(), IoError> {
    let doc = ModelDoc::ImageEvent {
        pca: PcaDoc::from_pca(&model.pca),
        hidden: model.hidden.as_ref().map(DenseDoc::from_dense),
        output: DenseDoc::from_dense(&model.output),
    };
    write_json(path, &doc, force)
}

pub fn load_image_event_model(path: &Path) -> Result<ImageEventModel, IoError> {
    match parse_json::<ModelDoc>(path)? {
        ModelDoc::ImageEvent { pca, hidden, output } => Ok(ImageEventModel {
            pca: pca.into_pca()?,
            hidden: hidden.map(|h| h.into_dense("hidden")).transpose()?,
            output: output.into_dense("output")?,
        }),
        other => Err(wrong_kind(path, "an image-event", &other)),
    }
}

pub fn save_sequence_event_model(
    path: &Path,
    model: &SequenceEventModel,
    force: bool,
) -> Result<(), IoError> {
    let doc = ModelDoc::SequenceEvent {
        pca: PcaDoc::from_pca(&model.pca),
        cell: CellDoc::from_cell(&model.cell),
        output: DenseDoc::from_dense(&model.output),
    };
    write_json(path, &doc, force)
}

pub fn load_sequence_event_model(path: &Path) -> Result<SequenceEventModel, IoError> {
    match parse_json::<ModelDoc>(path)? {
        ModelDoc::SequenceEvent { pca, cell, output } => Ok(SequenceEventModel {
            pca: pca.into_pca()?,
            cell: cell.into_cell()?,
            output: output.into_dense("output")?,
        }),
        other => Err(wrong_kind(path, "a sequence-event", &other)),
    }
}

pub fn save_importance_model(
    path: &Path,
    model: &ImportanceModel,
    force: bool,
) -> Result<(), IoError> {
    let doc = ModelDoc::Importance {
        pca: PcaDoc::from_pca(&model.pca),
        trunk: DenseDoc::from_dense(&model.trunk),
        heads: DenseDoc::from_dense(&model.heads),
        pathway2: MatDoc::from_mat(&model.pathway2),
    };
    write_json(path, &doc, force)
}

pub fn load_importance_model(path: &Path) -> Result<ImportanceModel, IoError> {
    match parse_json::<ModelDoc>(path)? {
        ModelDoc::Importance { pca, trunk, heads, pathway2 } => Ok(ImportanceModel {
            pca: pca.into_pca()?,
            trunk: trunk.into_dense("trunk")?,
            heads: heads.into_dense("heads")?,
            pathway2: pathway2.into_mat("pathway2")?,
        }),
        other => Err(wrong_kind(path, "an importance", &other)),
    }
}

/// One album's fusion outcome, keyed for joins against the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionRecord {
    pub album_id: String,
    pub p: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: usize,
    pub converged: bool,
}

impl FusionRecord {
    pub fn new(album_id: String, result: FusionResult) -> FusionRecord {
        FusionRecord {
            album_id,
            p: result.p,
            v: result.v,
            steps: result.steps,
            converged: result.converged,
        }
    }
}

pub fn save_fusion_results(
    path: &Path,
    records: &[FusionRecord],
    force: bool,
) -> Result<(), IoError> {
    write_json(path, &records, force)
}

pub fn load_fusion_results(path: &Path) -> Result<Vec<FusionRecord>, IoError> {
    parse_json(path)
}

#[derive(Serialize, Deserialize)]
struct ConfusionDoc {
    classes: Vec<String>,
    counts: Vec<Vec<u64>>,
}

pub fn save_confusion(
    path: &Path,
    classes: &[String],
    cm: &ConfusionMatrix,
    force: bool,
) -> Result<(), IoError> {
    if classes.len() != cm.num_classes() {
        return Err(IoError::Data(format!(
            "{} class names for a {}-class matrix",
            classes.len(),
            cm.num_classes()
        )));
    }
    let doc = ConfusionDoc { classes: classes.to_vec(), counts: cm.counts().to_vec() };
    write_json(path, &doc, force)
}

pub fn load_confusion(path: &Path) -> Result<(Vec<String>, ConfusionMatrix), IoError> {
    let doc: ConfusionDoc = parse_json(path)?;
    let cm = ConfusionMatrix::new(doc.counts).map_err(|e| IoError::Data(e.to_string()))?;
    if doc.classes.len() != cm.num_classes() {
        return Err(IoError::Data(format!(
            "{}: {} class names for a {}-class matrix",
            path.display(),
            doc.classes.len(),
            cm.num_classes()
        )));
    }
    Ok((doc.classes, cm))
}

/// Class mapping document: `map[i]` names the target class for source class
/// `i`, or is null to drop it.
#[derive(Serialize, Deserialize)]
struct MappingDoc {
    target_classes: Vec<String>,
    map: Vec<Option<String>>,
}

pub fn load_mapping(path: &Path) -> Result<(Vec<String>, LabelMapping), IoError> {
    let doc: MappingDoc = parse_json(path)?;
    let mut targets = Vec::with_capacity(doc.map.len());
    for (i, name) in doc.map.iter().enumerate() {
        match name {
            None => targets.push(None),
            Some(name) => {
                let idx = doc.target_classes.iter().position(|t| t == name).ok_or_else(|| {
                    IoError::Data(format!(
                        "{}: source class {i} maps to unknown target `{name}`",
                        path.display()
                    ))
                })?;
                targets.push(Some(idx));
            }
        }
    }
    let mapping = LabelMapping::new(targets, doc.target_classes.len())
        .map_err(|e| IoError::Data(e.to_string()))?;
    Ok((doc.target_classes, mapping))
}

pub fn save_report(path: &Path, report: &EvaluationReport, force: bool) -> Result<(), IoError> {
    write_text(path, &report.to_csv(), force)
}

/// Grid search table as CSV, one row per `(alpha, mask_fraction)` point.
pub fn save_grid_table(path: &Path, outcome: &GridSearchOutcome, force: bool) -> Result<(), IoError> {
    let mut csv = String::from("alpha,mask_fraction,accuracy\n");
    for score in &outcome.table {
        csv.push_str(&format!(
            "{:.6},{:.6},{:.6}\n",
            score.alpha, score.mask_fraction, score.accuracy
        ));
    }
    write_text(path, &csv, force)
}

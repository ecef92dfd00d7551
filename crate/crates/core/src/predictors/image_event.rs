//! Per-image event classifier: an optionally one-hidden-layer network over
//! reduced features, trained with cross-entropy against one-hot targets
//! freshly sampled from each album's label distribution every epoch.

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::dataset::{sample_label, DatasetManifest};
use crate::linalg::Mat;
use crate::predictors::common::{cross_entropy, softmax, tanh, Dense, FlatParams};
use crate::predictors::{reduce_train_split, PcaTransform, PredictorError, TrainConfig, TrainRun};
use crate::rng::stream_rng;

/// Feature -> C event logits, with an optional tanh hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEventModel {
    pub pca: PcaTransform,
    pub hidden: Option<Dense>,
    pub output: Dense,
}

impl ImageEventModel {
    pub fn reduced_dim(&self) -> usize {
        self.hidden.as_ref().map_or(self.output.in_dim(), Dense::in_dim)
    }

    pub fn num_classes(&self) -> usize {
        self.output.out_dim()
    }

    /// Event distribution for one reduced feature vector.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        match &self.hidden {
            Some(hidden) => {
                let mut a = hidden.forward(x);
                a.iter_mut().for_each(|v| *v = tanh(*v));
                self.output.forward(&a)
            }
            None => self.output.forward(x),
        }
    }

    /// Cross-entropy loss and parameter gradients for one example,
    /// accumulated into `grad`.
    pub fn loss_and_grad(&self, grad: &mut ImageEventGrad, x: &[f64], target: usize) -> f64 {
        match &self.hidden {
            Some(hidden) => {
                let mut act = hidden.forward(x);
                act.iter_mut().for_each(|v| *v = tanh(*v));
                let probs = softmax(&self.output.forward(&act));
                let (loss, dlogits) = cross_entropy(&probs, target);
                let mut dact =
                    self.output.backward(grad.hidden_out(), &act, &dlogits);
                for (d, &a) in dact.iter_mut().zip(&act) {
                    *d *= 1.0 - a * a;
                }
                hidden.backward(grad.hidden_in(), x, &dact);
                loss
            }
            None => {
                let probs = softmax(&self.output.forward(x));
                let (loss, dlogits) = cross_entropy(&probs, target);
                self.output.backward(grad.hidden_out(), x, &dlogits);
                loss
            }
        }
    }
}

/// Gradient buffer matching [`ImageEventModel`]'s parameter shapes.
#[derive(Debug, Clone)]
pub struct ImageEventGrad {
    hidden: Option<Dense>,
    output: Dense,
}

impl ImageEventGrad {
    pub fn zeros_like(model: &ImageEventModel) -> Self {
        ImageEventGrad {
            hidden: model.hidden.as_ref().map(|h| Dense::zeros(h.out_dim(), h.in_dim())),
            output: Dense::zeros(model.output.out_dim(), model.output.in_dim()),
        }
    }

    fn hidden_in(&mut self) -> &mut Dense {
        self.hidden.as_mut().expect("model has a hidden layer")
    }

    fn hidden_out(&mut self) -> &mut Dense {
        &mut self.output
    }

    pub fn reset(&mut self) {
        if let Some(h) = &mut self.hidden {
            h.fill(0.0);
        }
        self.output.fill(0.0);
    }

    pub fn apply(&self, model: &mut ImageEventModel, step: f64) {
        if let (Some(mh), Some(gh)) = (&mut model.hidden, &self.hidden) {
            mh.add_scaled(gh, step);
        }
        model.output.add_scaled(&self.output, step);
    }

    /// Gradient entries in the same order as [`ImageEventModel::params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        if let Some(h) = &self.hidden {
            out.extend(h.params());
        }
        out.extend(self.output.params());
        out
    }
}

impl FlatParams for ImageEventModel {
    fn params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        if let Some(h) = &self.hidden {
            out.extend(h.params());
        }
        out.extend(self.output.params());
        out
    }

    fn set_params(&mut self, flat: &[f64]) {
        let mut offset = 0;
        if let Some(h) = &mut self.hidden {
            let n = h.params().len();
            h.set_params(&flat[..n]);
            offset = n;
        }
        self.output.set_params(&flat[offset..]);
    }
}

/// Per-image event distributions for an album's reduced `N x d'` features.
/// Every row of the result sums to 1.
pub fn predict_image_events(
    model: &ImageEventModel,
    features: &Mat,
) -> Result<Mat, PredictorError> {
    if features.cols() != model.reduced_dim() {
        return Err(PredictorError::DimensionMismatch(alloc::format!(
            "expected {} reduced feature columns, got {}",
            model.reduced_dim(),
            features.cols()
        )));
    }
    let c = model.num_classes();
    let mut q = Mat::zeros(features.rows(), c);
    for r in 0..features.rows() {
        q.row_mut(r).copy_from_slice(&model.predict(features.row(r)));
    }
    Ok(q)
}

pub fn train_image_event(
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
) -> Result<TrainRun<ImageEventModel>, PredictorError> {
    cfg.validate()?;
    let reduced = reduce_train_split(manifest, cfg)?;
    let c = manifest.vocabulary.len();

    let mut rng = stream_rng(cfg.seed, "train-image-event");
    let mut model = ImageEventModel {
        pca: reduced.pca.clone(),
        hidden: (cfg.hidden > 0).then(|| Dense::init(cfg.hidden, cfg.reduced_dim, &mut rng)),
        output: Dense::init(
            c,
            if cfg.hidden > 0 { cfg.hidden } else { cfg.reduced_dim },
            &mut rng,
        ),
    };

    // (album slot, image row) pairs across the train split.
    let mut examples: Vec<(usize, usize)> = Vec::new();
    for (slot, feats) in reduced.albums.iter().enumerate() {
        for r in 0..feats.rows() {
            examples.push((slot, r));
        }
    }

    let mut grad = ImageEventGrad::zeros_like(&model);
    let mut targets: Vec<usize> = alloc::vec![0; examples.len()];
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        for (t, &(slot, _)) in targets.iter_mut().zip(&examples) {
            let album = &manifest.albums[reduced.album_indices[slot]];
            *t = sample_label(&album.label_dist, &mut rng);
        }
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.reset();
            let mut batch_loss = 0.0;
            for &e in batch {
                let (slot, row) = examples[e];
                batch_loss +=
                    model.loss_and_grad(&mut grad, reduced.albums[slot].row(row), targets[e]);
            }
            epoch_loss += batch_loss;
            grad.apply(&mut model, -cfg.learning_rate / batch.len() as f64);
        }
        epoch_losses.push(epoch_loss / examples.len() as f64);
    }

    Ok(TrainRun { model, epoch_losses })
}

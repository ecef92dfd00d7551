//! Event-conditioned image importance. A shared tanh trunk feeds C scalar
//! scoring heads (one per event) plus a second pathway that maps the
//! difference of trunk outputs straight to a score difference. Training is
//! pairwise: the sampled event gates which head and pathway row learn.

use alloc::vec::Vec;

use rand::Rng;

use crate::dataset::{sample_label, DatasetManifest};
use crate::linalg::{dot, min_max_normalize, Mat};
use crate::predictors::common::{init_uniform, tanh, Dense, FlatParams};
use crate::predictors::ranking::piecewise_ranking_loss;
use crate::predictors::{reduce_train_split, PcaTransform, PredictorError, TrainConfig, TrainRun};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceModel {
    pub pca: PcaTransform,
    /// d' -> h, tanh activation.
    pub trunk: Dense,
    /// One scoring row per event: h -> 1 with bias.
    pub heads: Dense,
    /// Event rows mapping a trunk-output difference to a score difference.
    pub pathway2: Mat,
}

impl ImportanceModel {
    pub fn reduced_dim(&self) -> usize {
        self.trunk.in_dim()
    }

    pub fn num_events(&self) -> usize {
        self.heads.out_dim()
    }

    fn trunk_out(&self, x: &[f64]) -> Vec<f64> {
        let mut t = self.trunk.forward(x);
        t.iter_mut().for_each(|v| *v = tanh(*v));
        t
    }

    /// Raw per-event scores for one reduced feature vector.
    pub fn raw_scores(&self, x: &[f64]) -> Vec<f64> {
        self.heads.forward(&self.trunk_out(x))
    }

    /// Predicted score difference for a pair under one event: the mean of the
    /// twin-head difference and the direct pathway estimate.
    pub fn pair_difference(&self, x_i: &[f64], x_j: &[f64], event: usize) -> f64 {
        let t_i = self.trunk_out(x_i);
        let t_j = self.trunk_out(x_j);
        let twin = self.heads.forward(&t_i)[event] - self.heads.forward(&t_j)[event];
        let diff: Vec<f64> = t_i.iter().zip(&t_j).map(|(a, b)| a - b).collect();
        let direct = dot(self.pathway2.row(event), &diff);
        0.5 * (twin + direct)
    }

    /// Ranking loss and gradients for one pair. Only the trunk, head row
    /// `event`, and pathway row `event` receive gradient.
    pub fn loss_and_grad(
        &self,
        grad: &mut ImportanceGrad,
        x_i: &[f64],
        x_j: &[f64],
        gt_diff: f64,
        event: usize,
        m_s: f64,
        m_d: f64,
    ) -> Result<f64, PredictorError> {
        let t_i = self.trunk_out(x_i);
        let t_j = self.trunk_out(x_j);
        let s_i = dot(self.heads.w.row(event), &t_i) + self.heads.b[event];
        let s_j = dot(self.heads.w.row(event), &t_j) + self.heads.b[event];
        let tdiff: Vec<f64> = t_i.iter().zip(&t_j).map(|(a, b)| a - b).collect();
        let direct = dot(self.pathway2.row(event), &tdiff);
        let d = 0.5 * ((s_i - s_j) + direct);

        let (loss, dd) = piecewise_ranking_loss(d, gt_diff, m_s, m_d)?;
        let half = 0.5 * dd;

        // Head row and pathway row see the trunk-output difference; the head
        // bias cancels between the twins.
        grad.heads.w.row_mut(event).iter_mut().zip(&tdiff).for_each(|(g, &v)| *g += half * v);
        grad.pathway2.row_mut(event).iter_mut().zip(&tdiff).for_each(|(g, &v)| *g += half * v);

        // dt_i = half * (head row + pathway row); dt_j is its negation.
        let mut dt: Vec<f64> = self
            .heads
            .w
            .row(event)
            .iter()
            .zip(self.pathway2.row(event))
            .map(|(&hw, &pw)| half * (hw + pw))
            .collect();
        let da_i: Vec<f64> = dt.iter().zip(&t_i).map(|(&g, &t)| g * (1.0 - t * t)).collect();
        dt.iter_mut().for_each(|v| *v = -*v);
        let da_j: Vec<f64> = dt.iter().zip(&t_j).map(|(&g, &t)| g * (1.0 - t * t)).collect();
        self.trunk.backward(&mut grad.trunk, x_i, &da_i);
        self.trunk.backward(&mut grad.trunk, x_j, &da_j);
        Ok(loss)
    }
}

impl FlatParams for ImportanceModel {
    fn params(&self) -> Vec<f64> {
        let mut out = self.trunk.params();
        out.extend(self.heads.params());
        out.extend_from_slice(self.pathway2.as_slice());
        out
    }

    fn set_params(&mut self, flat: &[f64]) {
        let tn = self.trunk.params().len();
        self.trunk.set_params(&flat[..tn]);
        let hn = self.heads.params().len();
        self.heads.set_params(&flat[tn..tn + hn]);
        self.pathway2.as_mut_slice().copy_from_slice(&flat[tn + hn..]);
    }
}

/// Gradient buffer matching [`ImportanceModel`].
#[derive(Debug, Clone)]
pub struct ImportanceGrad {
    pub trunk: Dense,
    pub heads: Dense,
    pub pathway2: Mat,
}

impl ImportanceGrad {
    pub fn zeros_like(model: &ImportanceModel) -> Self {
        ImportanceGrad {
            trunk: Dense::zeros(model.trunk.out_dim(), model.trunk.in_dim()),
            heads: Dense::zeros(model.heads.out_dim(), model.heads.in_dim()),
            pathway2: Mat::zeros(model.pathway2.rows(), model.pathway2.cols()),
        }
    }

    pub fn reset(&mut self) {
        self.trunk.fill(0.0);
        self.heads.fill(0.0);
        self.pathway2.fill(0.0);
    }

    pub fn apply(&self, model: &mut ImportanceModel, step: f64) {
        model.trunk.add_scaled(&self.trunk, step);
        model.heads.add_scaled(&self.heads, step);
        model.pathway2.add_scaled(&self.pathway2, step);
    }

    /// Gradient entries in the same order as [`ImportanceModel::params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = self.trunk.params();
        out.extend(self.heads.params());
        out.extend_from_slice(self.pathway2.as_slice());
        out
    }
}

/// Event-conditioned importance matrix for an album's reduced `N x d'`
/// features: raw head scores, then each event column min-max normalized to
/// [0, 1]. Constant columns (including N = 1) map to all ones.
pub fn predict_importance(model: &ImportanceModel, features: &Mat) -> Result<Mat, PredictorError> {
    if features.rows() == 0 {
        return Err(PredictorError::EmptyAlbum);
    }
    if features.cols() != model.reduced_dim() {
        return Err(PredictorError::DimensionMismatch(alloc::format!(
            "expected {} reduced feature columns, got {}",
            model.reduced_dim(),
            features.cols()
        )));
    }
    let c = model.num_events();
    let mut w = Mat::zeros(features.rows(), c);
    for r in 0..features.rows() {
        w.row_mut(r).copy_from_slice(&model.raw_scores(features.row(r)));
    }
    for col in 0..c {
        let mut column = w.column(col);
        min_max_normalize(&mut column);
        for r in 0..w.rows() {
            w.row_mut(r)[col] = column[r];
        }
    }
    Ok(w)
}

pub fn train_importance(
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
    pairs_per_album: usize,
) -> Result<TrainRun<ImportanceModel>, PredictorError> {
    cfg.validate()?;
    if pairs_per_album == 0 {
        return Err(PredictorError::InvalidConfig(alloc::string::String::from(
            "pairs_per_album must be at least 1",
        )));
    }
    if manifest
        .split(crate::dataset::Split::Train)
        .any(|album| album.gt_importance.is_none())
    {
        return Err(PredictorError::MissingGroundTruth);
    }
    let reduced = reduce_train_split(manifest, cfg)?;
    let c = manifest.vocabulary.len();

    let mut rng = stream_rng(cfg.seed, "train-importance");
    let mut model = ImportanceModel {
        pca: reduced.pca.clone(),
        trunk: Dense::init(cfg.hidden, cfg.reduced_dim, &mut rng),
        heads: Dense::init(c, cfg.hidden, &mut rng),
        pathway2: {
            let mut m = Mat::zeros(c, cfg.hidden);
            init_uniform(m.as_mut_slice(), &mut rng);
            m
        },
    };

    let mut grad = ImportanceGrad::zeros_like(&model);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        let mut pairs = 0usize;
        for (slot, feats) in reduced.albums.iter().enumerate() {
            let album = &manifest.albums[reduced.album_indices[slot]];
            let n = feats.rows();
            if n < 2 {
                continue;
            }
            let gt = album.gt_importance.as_ref().expect("checked above");
            for _ in 0..pairs_per_album {
                let i = rng.random_range(0..n);
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                let event = sample_label(&album.label_dist, &mut rng);
                grad.reset();
                epoch_loss += model.loss_and_grad(
                    &mut grad,
                    feats.row(i),
                    feats.row(j),
                    gt[i] - gt[j],
                    event,
                    cfg.margin_similar,
                    cfg.margin_different,
                )?;
                grad.apply(&mut model, -cfg.learning_rate);
                pairs += 1;
            }
        }
        epoch_losses.push(if pairs > 0 { epoch_loss / pairs as f64 } else { 0.0 });
    }

    Ok(TrainRun { model, epoch_losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::argmax;
    use crate::rng::stream_rng;

    fn toy_model(seed: u64, input: usize, hidden: usize, events: usize) -> ImportanceModel {
        let mut rng = stream_rng(seed, "imp-toy");
        ImportanceModel {
            pca: PcaTransform {
                mean: alloc::vec![0.0; input],
                basis: Mat::identity(input),
                explained_variance: alloc::vec![1.0; input],
            },
            trunk: Dense::init(hidden, input, &mut rng),
            heads: Dense::init(events, hidden, &mut rng),
            pathway2: {
                let mut m = Mat::zeros(events, hidden);
                init_uniform(m.as_mut_slice(), &mut rng);
                m
            },
        }
    }

    #[test]
    fn ungated_rows_collect_exactly_zero_gradient() {
        let model = toy_model(7, 4, 5, 3);
        let mut grad = ImportanceGrad::zeros_like(&model);
        let mut rng = stream_rng(9, "pair");
        for _ in 0..20 {
            let x_i: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x_j: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            model.loss_and_grad(&mut grad, &x_i, &x_j, 0.8, 1, 0.1, 0.3).unwrap();
        }
        for event in [0, 2] {
            assert!(grad.heads.w.row(event).iter().all(|&g| g == 0.0));
            assert!(grad.pathway2.row(event).iter().all(|&g| g == 0.0));
        }
        assert!(grad.heads.b.iter().all(|&g| g == 0.0));
        assert!(grad.heads.w.row(1).iter().any(|&g| g != 0.0));
        assert!(grad.trunk.w.as_slice().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn ungated_parameters_are_bit_identical_after_a_step() {
        let mut model = toy_model(13, 4, 6, 4);
        let before_heads = model.heads.w.clone();
        let before_path = model.pathway2.clone();
        let mut grad = ImportanceGrad::zeros_like(&model);
        model.loss_and_grad(&mut grad, &[0.4, -0.1, 0.9, 0.3], &[0.0, 0.2, -0.5, 1.0], 0.7, 2, 0.1, 0.3).unwrap();
        grad.apply(&mut model, -0.05);
        for event in [0, 1, 3] {
            for (a, b) in model.heads.w.row(event).iter().zip(before_heads.row(event)) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
            for (a, b) in model.pathway2.row(event).iter().zip(before_path.row(event)) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        assert!(model.heads.w.row(2).iter().zip(before_heads.row(2)).any(|(a, b)| a != b));
    }

    #[test]
    fn pair_gradients_match_finite_differences() {
        let mut rng = stream_rng(17, "imp-fd");
        let mut model = toy_model(19, 3, 4, 3);
        for trial in 0..3 {
            let x_i: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x_j: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            // Spread across the loss pieces.
            let gt_diff = [-0.6, 0.05, 0.7][trial];
            let event = trial % 3;

            let mut grad = ImportanceGrad::zeros_like(&model);
            model.loss_and_grad(&mut grad, &x_i, &x_j, gt_diff, event, 0.1, 0.3).unwrap();
            let mut analytic = grad.trunk.params();
            analytic.extend(grad.heads.params());
            analytic.extend_from_slice(grad.pathway2.as_slice());

            let base = model.params();
            let eps = 1e-4;
            let mut sink = ImportanceGrad::zeros_like(&model);
            for (i, &g) in analytic.iter().enumerate() {
                let mut p = base.clone();
                p[i] += eps;
                model.set_params(&p);
                let lp = model
                    .loss_and_grad(&mut sink, &x_i, &x_j, gt_diff, event, 0.1, 0.3)
                    .unwrap();
                p[i] = base[i] - eps;
                model.set_params(&p);
                let lm = model
                    .loss_and_grad(&mut sink, &x_i, &x_j, gt_diff, event, 0.1, 0.3)
                    .unwrap();
                model.set_params(&base);
                let fd = (lp - lm) / (2.0 * eps);
                let denom = g.abs().max(fd.abs()).max(1e-6);
                assert!((g - fd).abs() / denom < 1e-4, "trial {trial} param {i}: {g} vs {fd}");
            }
        }
    }

    #[test]
    fn single_image_album_is_all_ones() {
        let model = toy_model(23, 4, 5, 3);
        let w = predict_importance(&model, &Mat::from_rows(&[alloc::vec![0.1, 0.2, 0.3, 0.4]]))
            .unwrap();
        assert_eq!(w.rows(), 1);
        assert!(w.row(0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn entries_lie_in_unit_interval() {
        let model = toy_model(29, 4, 6, 5);
        let mut rng = stream_rng(31, "unit");
        let rows: Vec<Vec<f64>> =
            (0..15).map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let w = predict_importance(&model, &Mat::from_rows(&rows)).unwrap();
        for r in 0..w.rows() {
            assert!(w.row(r).iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        for col in 0..w.cols() {
            let column = w.column(col);
            assert!(column.iter().any(|&v| v == 0.0));
            assert!(column.iter().any(|&v| v == 1.0));
        }
    }

    #[test]
    fn column_argmax_survives_normalization() {
        let model = toy_model(37, 3, 5, 4);
        let mut rng = stream_rng(41, "mono");
        let rows: Vec<Vec<f64>> =
            (0..10).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let feats = Mat::from_rows(&rows);
        let raw: Vec<Vec<f64>> = rows.iter().map(|r| model.raw_scores(r)).collect();
        let w = predict_importance(&model, &feats).unwrap();
        for col in 0..4 {
            let raw_col: Vec<f64> = raw.iter().map(|r| r[col]).collect();
            assert_eq!(argmax(&w.column(col)), argmax(&raw_col));
        }
    }

    #[test]
    fn pair_difference_matches_training_forward() {
        let model = toy_model(43, 4, 5, 3);
        let x_i = alloc::vec![0.5, -0.4, 0.2, 0.8];
        let x_j = alloc::vec![-0.3, 0.6, 0.0, 0.1];
        let d = model.pair_difference(&x_i, &x_j, 2);
        let mut grad = ImportanceGrad::zeros_like(&model);
        // G > m_s, so the loss is the closed-form hinge on D.
        let loss = model.loss_and_grad(&mut grad, &x_i, &x_j, 0.9, 2, 0.1, 0.3).unwrap();
        let expected = 0.5 * (0.3f64 - d).max(0.0).powi(2);
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn missing_ground_truth_is_rejected() {
        use crate::dataset::{
            AlbumRecord, DatasetManifest, EventLabelDistribution, EventVocabulary, Split,
        };
        use crate::linalg::Mat32;
        let vocab = EventVocabulary::new(alloc::vec!["A".into(), "B".into()]).unwrap();
        let albums = alloc::vec![AlbumRecord::new(
            alloc::string::String::from("a0"),
            (0..5).map(|i| alloc::format!("i{i}")).collect(),
            Mat32::zeros(5, 3),
            None,
            EventLabelDistribution::degenerate(2, 0),
            Split::Train,
        )
        .unwrap()];
        let manifest = DatasetManifest::new(vocab, albums, 3).unwrap();
        let cfg = TrainConfig { reduced_dim: 2, ..TrainConfig::default() };
        assert!(matches!(
            train_importance(&manifest, &cfg, 4),
            Err(PredictorError::MissingGroundTruth)
        ));
    }
}

//! Album-level event classifier: an LSTM read over the album's image order,
//! mean-pooled hidden states, and a softmax layer, trained with cross-entropy
//! against per-epoch resampled targets.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dataset::{sample_label, DatasetManifest};
use crate::linalg::{axpy, Mat};
use crate::predictors::common::{
    cross_entropy, init_uniform, sigmoid, softmax, tanh, Dense, FlatParams,
};
use crate::predictors::{reduce_train_split, PcaTransform, PredictorError, TrainConfig, TrainRun};
use crate::rng::stream_rng;

const INPUT: usize = 0;
const FORGET: usize = 1;
const OUTPUT: usize = 2;
const CANDIDATE: usize = 3;

/// Standard LSTM cell. Gate order throughout: input, forget, output, candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub w: [Mat; 4],
    pub u: [Mat; 4],
    pub b: [Vec<f64>; 4],
}

impl LstmCell {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        LstmCell {
            w: core::array::from_fn(|_| Mat::zeros(hidden, input)),
            u: core::array::from_fn(|_| Mat::zeros(hidden, hidden)),
            b: core::array::from_fn(|_| alloc::vec![0.0; hidden]),
        }
    }

    /// Forget-gate bias starts at 1 so early training does not wipe the cell
    /// state; everything else is uniform in [-0.08, 0.08].
    pub fn init<R: Rng>(hidden: usize, input: usize, rng: &mut R) -> Self {
        let mut cell = LstmCell::zeros(hidden, input);
        for g in 0..4 {
            init_uniform(cell.w[g].as_mut_slice(), rng);
            init_uniform(cell.u[g].as_mut_slice(), rng);
            init_uniform(&mut cell.b[g], rng);
        }
        cell.b[FORGET].iter_mut().for_each(|v| *v = 1.0);
        cell
    }

    pub fn hidden_dim(&self) -> usize {
        self.b[INPUT].len()
    }

    pub fn input_dim(&self) -> usize {
        self.w[INPUT].cols()
    }

    pub fn add_scaled(&mut self, other: &LstmCell, s: f64) {
        for g in 0..4 {
            self.w[g].add_scaled(&other.w[g], s);
            self.u[g].add_scaled(&other.u[g], s);
            axpy(&mut self.b[g], &other.b[g], s);
        }
    }

    pub fn fill(&mut self, v: f64) {
        for g in 0..4 {
            self.w[g].fill(v);
            self.u[g].fill(v);
            self.b[g].iter_mut().for_each(|x| *x = v);
        }
    }
}

impl FlatParams for LstmCell {
    fn params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in 0..4 {
            out.extend_from_slice(self.w[g].as_slice());
            out.extend_from_slice(self.u[g].as_slice());
            out.extend_from_slice(&self.b[g]);
        }
        out
    }

    fn set_params(&mut self, flat: &[f64]) {
        let mut at = 0;
        for g in 0..4 {
            let wn = self.w[g].as_slice().len();
            self.w[g].as_mut_slice().copy_from_slice(&flat[at..at + wn]);
            at += wn;
            let un = self.u[g].as_slice().len();
            self.u[g].as_mut_slice().copy_from_slice(&flat[at..at + un]);
            at += un;
            let bn = self.b[g].len();
            self.b[g].copy_from_slice(&flat[at..at + bn]);
            at += bn;
        }
    }
}

/// Intermediate values of one cell step, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gates: [Vec<f64>; 4],
    tanh_c: Vec<f64>,
}

fn forward_step(
    cell: &LstmCell,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> (Vec<f64>, Vec<f64>, StepCache) {
    let mut gates: [Vec<f64>; 4] = core::array::from_fn(|g| {
        let mut a = cell.w[g].matvec(x);
        axpy(&mut a, &cell.u[g].matvec(h_prev), 1.0);
        axpy(&mut a, &cell.b[g], 1.0);
        a
    });
    for g in 0..4 {
        let act = if g == CANDIDATE { tanh } else { sigmoid };
        gates[g].iter_mut().for_each(|v| *v = act(*v));
    }
    let c: Vec<f64> = (0..cell.hidden_dim())
        .map(|k| gates[FORGET][k] * c_prev[k] + gates[INPUT][k] * gates[CANDIDATE][k])
        .collect();
    let tanh_c: Vec<f64> = c.iter().map(|&v| tanh(v)).collect();
    let h: Vec<f64> = tanh_c.iter().zip(&gates[OUTPUT]).map(|(&t, &o)| o * t).collect();
    let cache = StepCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        gates,
        tanh_c,
    };
    (h, c, cache)
}

/// One LSTM update: gates from (x, h), then cell and hidden state.
pub fn lstm_step(cell: &LstmCell, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (h_next, c_next, _) = forward_step(cell, x, h, c);
    (h_next, c_next)
}

/// Backward through one step. `dh` and `dc` are gradients flowing into this
/// step's outputs; returns (dx, dh_prev, dc_prev) and accumulates parameter
/// gradients into `grad`.
fn backward_step(
    cell: &LstmCell,
    grad: &mut LstmCell,
    cache: &StepCache,
    dh: &[f64],
    dc: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hdim = cell.hidden_dim();
    let [i, f, o, g] = &cache.gates;

    // Through h = o * tanh(c): split into the output gate and the cell path.
    let mut dcell: Vec<f64> = (0..hdim)
        .map(|k| dc[k] + dh[k] * o[k] * (1.0 - cache.tanh_c[k] * cache.tanh_c[k]))
        .collect();

    let mut dpre: [Vec<f64>; 4] = core::array::from_fn(|_| alloc::vec![0.0; hdim]);
    for k in 0..hdim {
        dpre[OUTPUT][k] = dh[k] * cache.tanh_c[k] * o[k] * (1.0 - o[k]);
        dpre[INPUT][k] = dcell[k] * g[k] * i[k] * (1.0 - i[k]);
        dpre[FORGET][k] = dcell[k] * cache.c_prev[k] * f[k] * (1.0 - f[k]);
        dpre[CANDIDATE][k] = dcell[k] * i[k] * (1.0 - g[k] * g[k]);
        dcell[k] *= f[k]; // becomes dc_prev
    }

    let mut dx = alloc::vec![0.0; cell.input_dim()];
    let mut dh_prev = alloc::vec![0.0; hdim];
    for gate in 0..4 {
        grad.w[gate].add_outer(&dpre[gate], &cache.x, 1.0);
        grad.u[gate].add_outer(&dpre[gate], &cache.h_prev, 1.0);
        axpy(&mut grad.b[gate], &dpre[gate], 1.0);
        axpy(&mut dx, &cell.w[gate].vecmat(&dpre[gate]), 1.0);
        axpy(&mut dh_prev, &cell.u[gate].vecmat(&dpre[gate]), 1.0);
    }
    (dx, dh_prev, dcell)
}

/// LSTM over the album, mean pooling, softmax readout.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceEventModel {
    pub pca: PcaTransform,
    pub cell: LstmCell,
    pub output: Dense,
}

impl SequenceEventModel {
    pub fn reduced_dim(&self) -> usize {
        self.cell.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.output.out_dim()
    }

    fn pooled_hidden(&self, features: &Mat) -> (Vec<f64>, Vec<StepCache>) {
        let hdim = self.cell.hidden_dim();
        let mut h = alloc::vec![0.0; hdim];
        let mut c = alloc::vec![0.0; hdim];
        let mut pooled = alloc::vec![0.0; hdim];
        let mut caches = Vec::with_capacity(features.rows());
        for r in 0..features.rows() {
            let (h_next, c_next, cache) = forward_step(&self.cell, features.row(r), &h, &c);
            h = h_next;
            c = c_next;
            caches.push(cache);
            axpy(&mut pooled, &h, 1.0);
        }
        pooled.iter_mut().for_each(|v| *v /= features.rows() as f64);
        (pooled, caches)
    }

    /// Cross-entropy loss for one album; gradients accumulate into `grad`.
    pub fn loss_and_grad(
        &self,
        grad: &mut SequenceEventGrad,
        features: &Mat,
        target: usize,
    ) -> Result<f64, PredictorError> {
        let n = features.rows();
        if n == 0 {
            return Err(PredictorError::EmptyAlbum);
        }
        let (pooled, caches) = self.pooled_hidden(features);
        let probs = softmax(&self.output.forward(&pooled));
        let (loss, dlogits) = cross_entropy(&probs, target);
        let dpooled = self.output.backward(&mut grad.output, &pooled, &dlogits);

        let hdim = self.cell.hidden_dim();
        let mut dh = alloc::vec![0.0; hdim];
        let mut dc = alloc::vec![0.0; hdim];
        for cache in caches.iter().rev() {
            // Every step's hidden state feeds the mean pool.
            axpy(&mut dh, &dpooled, 1.0 / n as f64);
            let (_, dh_prev, dc_prev) = backward_step(&self.cell, &mut grad.cell, cache, &dh, &dc);
            dh = dh_prev;
            dc = dc_prev;
        }
        Ok(loss)
    }
}

impl FlatParams for SequenceEventModel {
    fn params(&self) -> Vec<f64> {
        let mut out = self.cell.params();
        out.extend(self.output.params());
        out
    }

    fn set_params(&mut self, flat: &[f64]) {
        let n = self.cell.params().len();
        self.cell.set_params(&flat[..n]);
        self.output.set_params(&flat[n..]);
    }
}

/// Gradient buffer matching [`SequenceEventModel`].
#[derive(Debug, Clone)]
pub struct SequenceEventGrad {
    pub cell: LstmCell,
    pub output: Dense,
}

impl SequenceEventGrad {
    pub fn zeros_like(model: &SequenceEventModel) -> Self {
        SequenceEventGrad {
            cell: LstmCell::zeros(model.cell.hidden_dim(), model.cell.input_dim()),
            output: Dense::zeros(model.output.out_dim(), model.output.in_dim()),
        }
    }

    pub fn reset(&mut self) {
        self.cell.fill(0.0);
        self.output.fill(0.0);
    }

    pub fn apply(&self, model: &mut SequenceEventModel, step: f64) {
        model.cell.add_scaled(&self.cell, step);
        model.output.add_scaled(&self.output, step);
    }

    /// Gradient entries in the same order as [`SequenceEventModel::params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = self.cell.params();
        out.extend(self.output.params());
        out
    }
}

/// Album-level event distribution from reduced `N x d'` features.
pub fn predict_sequence_event(
    model: &SequenceEventModel,
    features: &Mat,
) -> Result<Vec<f64>, PredictorError> {
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
    let (pooled, _) = model.pooled_hidden(features);
    Ok(softmax(&model.output.forward(&pooled)))
}

pub fn train_sequence_event(
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
) -> Result<TrainRun<SequenceEventModel>, PredictorError> {
    cfg.validate()?;
    let reduced = reduce_train_split(manifest, cfg)?;
    let c = manifest.vocabulary.len();

    let mut rng = stream_rng(cfg.seed, "train-sequence-event");
    let mut model = SequenceEventModel {
        pca: reduced.pca.clone(),
        cell: LstmCell::init(cfg.hidden, cfg.reduced_dim, &mut rng),
        output: Dense::init(c, cfg.hidden, &mut rng),
    };

    let mut grad = SequenceEventGrad::zeros_like(&model);
    let mut targets = alloc::vec![0; reduced.albums.len()];
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        for (t, &idx) in targets.iter_mut().zip(&reduced.album_indices) {
            *t = sample_label(&manifest.albums[idx].label_dist, &mut rng);
        }
        let mut order: Vec<usize> = (0..reduced.albums.len()).collect();
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.reset();
            for &a in batch {
                epoch_loss += model.loss_and_grad(&mut grad, &reduced.albums[a], targets[a])?;
            }
            grad.apply(&mut model, -cfg.learning_rate / batch.len() as f64);
        }
        epoch_losses.push(epoch_loss / reduced.albums.len() as f64);
    }

    Ok(TrainRun { model, epoch_losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;
    use crate::rng::stream_rng;
    use rand::Rng;

    #[test]
    fn zero_parameter_step_matches_hand_evaluation() {
        let cell = LstmCell::zeros(3, 2);
        let x = alloc::vec![0.7, -0.3];
        let h = alloc::vec![0.2, 0.0, -0.5];
        let c = alloc::vec![1.0, 1.0, 1.0];
        let (h_next, c_next) = lstm_step(&cell, &x, &h, &c);
        for k in 0..3 {
            assert!((c_next[k] - 0.5).abs() < 1e-15);
            assert!((h_next[k] - 0.5 * tanh(0.5)).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_everything_stays_zero() {
        let cell = LstmCell::zeros(4, 3);
        let (h, c) = lstm_step(&cell, &[0.0; 3], &[0.0; 4], &[0.0; 4]);
        assert!(h.iter().all(|&v| v == 0.0));
        assert!(c.iter().all(|&v| v == 0.0));
    }

    fn random_model(seed: u64, input: usize, hidden: usize, classes: usize) -> SequenceEventModel {
        let mut rng = stream_rng(seed, "seq-test");
        SequenceEventModel {
            pca: PcaTransform {
                mean: alloc::vec![0.0; input],
                basis: Mat::identity(input),
                explained_variance: alloc::vec![1.0; input],
            },
            cell: LstmCell::init(hidden, input, &mut rng),
            output: Dense::init(classes, hidden, &mut rng),
        }
    }

    #[test]
    fn step_gradients_match_finite_differences() {
        // Scalar loss = dot(h', r) after one step from a random state.
        let mut rng = stream_rng(11, "step-fd");
        let mut cell = LstmCell::init(4, 3, &mut rng);
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h0: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c0: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();

        let mut grad = LstmCell::zeros(4, 3);
        let (_, _, cache) = forward_step(&cell, &x, &h0, &c0);
        backward_step(&cell, &mut grad, &cache, &r, &alloc::vec![0.0; 4]);

        let analytic = grad.params();
        let base = cell.params();
        let eps = 1e-4;
        for (i, &g) in analytic.iter().enumerate() {
            let mut p = base.clone();
            p[i] += eps;
            cell.set_params(&p);
            let (hp, _) = lstm_step(&cell, &x, &h0, &c0);
            p[i] = base[i] - eps;
            cell.set_params(&p);
            let (hm, _) = lstm_step(&cell, &x, &h0, &c0);
            cell.set_params(&base);
            let fd = (dot(&hp, &r) - dot(&hm, &r)) / (2.0 * eps);
            let denom = g.abs().max(fd.abs()).max(1e-6);
            assert!((g - fd).abs() / denom < 1e-4, "param {i}: {g} vs {fd}");
        }
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        let mut model = random_model(23, 3, 4, 3);
        let mut rng = stream_rng(29, "album-fd");
        let rows: Vec<Vec<f64>> =
            (0..3).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let album = Mat::from_rows(&rows);

        let mut grad = SequenceEventGrad::zeros_like(&model);
        model.loss_and_grad(&mut grad, &album, 1).unwrap();
        let mut analytic = grad.cell.params();
        analytic.extend(grad.output.params());

        let base = model.params();
        let eps = 1e-4;
        let mut sink = SequenceEventGrad::zeros_like(&model);
        for (i, &g) in analytic.iter().enumerate() {
            let mut p = base.clone();
            p[i] += eps;
            model.set_params(&p);
            sink.reset();
            let lp = model.loss_and_grad(&mut sink, &album, 1).unwrap();
            p[i] = base[i] - eps;
            model.set_params(&p);
            sink.reset();
            let lm = model.loss_and_grad(&mut sink, &album, 1).unwrap();
            model.set_params(&base);
            let fd = (lp - lm) / (2.0 * eps);
            let denom = g.abs().max(fd.abs()).max(1e-6);
            assert!((g - fd).abs() / denom < 1e-4, "param {i}: {g} vs {fd}");
        }
    }

    #[test]
    fn single_image_album_matches_direct_evaluation() {
        let model = random_model(31, 3, 5, 4);
        let x = alloc::vec![0.4, -0.2, 0.9];
        let album = Mat::from_rows(&[x.clone()]);
        let p = predict_sequence_event(&model, &album).unwrap();

        let hdim = model.cell.hidden_dim();
        let (h1, _) = lstm_step(&model.cell, &x, &alloc::vec![0.0; hdim], &alloc::vec![0.0; hdim]);
        let direct = softmax(&model.output.forward(&h1));
        for (a, b) in p.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn reversed_order_changes_the_prediction() {
        let model = random_model(37, 3, 6, 3);
        let mut rng = stream_rng(41, "order");
        let rows: Vec<Vec<f64>> =
            (0..5).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let forward = predict_sequence_event(&model, &Mat::from_rows(&rows)).unwrap();
        let mut rev = rows;
        rev.reverse();
        let backward = predict_sequence_event(&model, &Mat::from_rows(&rev)).unwrap();
        assert!(forward.iter().zip(&backward).any(|(a, b)| (a - b).abs() > 1e-9));
    }

    #[test]
    fn zero_softmax_weights_give_uniform_distribution() {
        let mut model = random_model(43, 3, 4, 5);
        model.output.fill(0.0);
        let album = Mat::from_rows(&[alloc::vec![1.0, 2.0, 3.0]]);
        let p = predict_sequence_event(&model, &album).unwrap();
        for &v in &p {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn prediction_sums_to_one_and_is_deterministic() {
        let model = random_model(47, 4, 5, 3);
        let mut rng = stream_rng(53, "sum");
        let rows: Vec<Vec<f64>> =
            (0..7).map(|_| (0..4).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let album = Mat::from_rows(&rows);
        let a = predict_sequence_event(&model, &album).unwrap();
        let b = predict_sequence_event(&model, &album).unwrap();
        assert_eq!(a, b);
        let sum: f64 = a.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(a.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn empty_album_is_rejected() {
        let model = random_model(59, 3, 4, 3);
        assert!(matches!(
            predict_sequence_event(&model, &Mat::zeros(0, 3)),
            Err(PredictorError::EmptyAlbum)
        ));
    }

    #[test]
    fn forget_bias_initialized_to_one() {
        let mut rng = stream_rng(61, "init");
        let cell = LstmCell::init(6, 4, &mut rng);
        assert!(cell.b[FORGET].iter().all(|&v| v == 1.0));
        assert!(cell.b[INPUT].iter().all(|&v| v.abs() <= 0.08));
        assert!(cell.w[CANDIDATE].as_slice().iter().all(|&v| v.abs() <= 0.08));
    }
}

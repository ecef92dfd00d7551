//! Central finite differences against every handwritten gradient, at 10
//! random points per model family.

use eventcure_core::linalg::Mat;
use eventcure_core::predictors::{
    piecewise_ranking_loss, Dense, FlatParams, ImageEventGrad, ImageEventModel, ImportanceGrad,
    ImportanceModel, LstmCell, PcaTransform, SequenceEventGrad, SequenceEventModel,
};
use eventcure_core::rng::stream_rng;
use rand::Rng;

const EPS: f64 = 1e-4;
const REL_TOL: f64 = 1e-4;

fn assert_close(analytic: f64, fd: f64, what: &str) {
    let denom = analytic.abs().max(fd.abs()).max(1e-6);
    assert!(
        (analytic - fd).abs() / denom < REL_TOL,
        "{what}: analytic {analytic} vs finite difference {fd}"
    );
}

/// Checks every analytic parameter gradient of `loss` at `base`.
fn check_all_params(
    mut loss: impl FnMut(&[f64]) -> f64,
    base: &[f64],
    analytic: &[f64],
    what: &str,
) {
    assert_eq!(base.len(), analytic.len());
    for i in 0..base.len() {
        let mut p = base.to_vec();
        p[i] += EPS;
        let up = loss(&p);
        p[i] = base[i] - EPS;
        let down = loss(&p);
        assert_close(analytic[i], (up - down) / (2.0 * EPS), &format!("{what} param {i}"));
    }
}

fn identity_pca(d: usize) -> PcaTransform {
    PcaTransform { mean: vec![0.0; d], basis: Mat::identity(d), explained_variance: vec![1.0; d] }
}

#[test]
fn ranking_loss_gradient() {
    let mut rng = stream_rng(100, "fd-ranking");
    for point in 0..10 {
        let d: f64 = rng.random_range(-0.6..0.6);
        let g: f64 = rng.random_range(-1.0..1.0);
        let (_, analytic) = piecewise_ranking_loss(d, g, 0.1, 0.3).unwrap();
        let up = piecewise_ranking_loss(d + EPS, g, 0.1, 0.3).unwrap().0;
        let down = piecewise_ranking_loss(d - EPS, g, 0.1, 0.3).unwrap().0;
        assert_close(analytic, (up - down) / (2.0 * EPS), &format!("ranking point {point}"));
    }
}

#[test]
fn cross_entropy_network_gradients() {
    let mut rng = stream_rng(101, "fd-ce");
    for point in 0..10 {
        let (input, hidden, classes) = (4, 5, 3);
        let mut model = ImageEventModel {
            pca: identity_pca(input),
            hidden: (point % 2 == 0).then(|| Dense::init(hidden, input, &mut rng)),
            output: Dense::init(
                classes,
                if point % 2 == 0 { hidden } else { input },
                &mut rng,
            ),
        };
        let x: Vec<f64> = (0..input).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target = rng.random_range(0..classes);

        let mut grad = ImageEventGrad::zeros_like(&model);
        model.loss_and_grad(&mut grad, &x, target);
        let base = model.params();
        check_all_params(
            |p| {
                model.set_params(p);
                let mut sink = ImageEventGrad::zeros_like(&model);
                let loss = model.loss_and_grad(&mut sink, &x, target);
                model.set_params(&base);
                loss
            },
            &base.clone(),
            &grad.flat(),
            &format!("cross-entropy point {point}"),
        );
    }
}

#[test]
fn lstm_step_gradients() {
    // A single-image album isolates one cell step plus the readout.
    let mut rng = stream_rng(102, "fd-lstm-step");
    for point in 0..10 {
        let (input, hidden, classes) = (3, 4, 3);
        let mut model = SequenceEventModel {
            pca: identity_pca(input),
            cell: LstmCell::init(hidden, input, &mut rng),
            output: Dense::init(classes, hidden, &mut rng),
        };
        let album = Mat::from_rows(&[(0..input)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect::<Vec<f64>>()]);
        let target = rng.random_range(0..classes);

        let mut grad = SequenceEventGrad::zeros_like(&model);
        model.loss_and_grad(&mut grad, &album, target).unwrap();
        let base = model.params();
        check_all_params(
            |p| {
                model.set_params(p);
                let mut sink = SequenceEventGrad::zeros_like(&model);
                let loss = model.loss_and_grad(&mut sink, &album, target).unwrap();
                model.set_params(&base);
                loss
            },
            &base.clone(),
            &grad.flat(),
            &format!("lstm step point {point}"),
        );
    }
}

#[test]
fn lstm_sequence_gradients() {
    // Multi-image albums exercise backpropagation through time.
    let mut rng = stream_rng(103, "fd-lstm-seq");
    for point in 0..10 {
        let (input, hidden, classes) = (3, 4, 2);
        let mut model = SequenceEventModel {
            pca: identity_pca(input),
            cell: LstmCell::init(hidden, input, &mut rng),
            output: Dense::init(classes, hidden, &mut rng),
        };
        let n = rng.random_range(2..=4);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..input).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let album = Mat::from_rows(&rows);
        let target = rng.random_range(0..classes);

        let mut grad = SequenceEventGrad::zeros_like(&model);
        model.loss_and_grad(&mut grad, &album, target).unwrap();
        let base = model.params();
        check_all_params(
            |p| {
                model.set_params(p);
                let mut sink = SequenceEventGrad::zeros_like(&model);
                let loss = model.loss_and_grad(&mut sink, &album, target).unwrap();
                model.set_params(&base);
                loss
            },
            &base.clone(),
            &grad.flat(),
            &format!("lstm sequence point {point}"),
        );
    }
}

#[test]
fn gated_importance_gradients() {
    let mut rng = stream_rng(104, "fd-importance");
    for point in 0..10 {
        let (input, hidden, events) = (3, 4, 3);
        let mut model = ImportanceModel {
            pca: identity_pca(input),
            trunk: Dense::init(hidden, input, &mut rng),
            heads: Dense::init(events, hidden, &mut rng),
            pathway2: {
                let mut m = Mat::zeros(events, hidden);
                let mut flat: Vec<f64> =
                    (0..events * hidden).map(|_| rng.random_range(-0.08..0.08)).collect();
                m.as_mut_slice().swap_with_slice(&mut flat);
                m
            },
        };
        let x_i: Vec<f64> = (0..input).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x_j: Vec<f64> = (0..input).map(|_| rng.random_range(-1.0..1.0)).collect();
        // Cover all three loss pieces across the 10 points.
        let gt_diff = [-0.8, -0.05, 0.0, 0.05, 0.8][point % 5];
        let event = point % 3;

        let mut grad = ImportanceGrad::zeros_like(&model);
        model.loss_and_grad(&mut grad, &x_i, &x_j, gt_diff, event, 0.1, 0.3).unwrap();
        let base = model.params();
        check_all_params(
            |p| {
                model.set_params(p);
                let mut sink = ImportanceGrad::zeros_like(&model);
                let loss = model
                    .loss_and_grad(&mut sink, &x_i, &x_j, gt_diff, event, 0.1, 0.3)
                    .unwrap();
                model.set_params(&base);
                loss
            },
            &base.clone(),
            &grad.flat(),
            &format!("importance point {point}"),
        );
    }
}

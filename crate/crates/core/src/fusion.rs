//! Iterative fusion of the three predictor outputs: re-estimate the album
//! event distribution from importance-weighted per-image predictions, pull it
//! toward the sequence anchor, then re-score image importance under the
//! refined distribution. Repeats until both estimates stop moving.

use alloc::string::String;
use alloc::vec::Vec;

use libm::pow;

use crate::dataset::EventLabelDistribution;
use crate::linalg::{argmax, linf_distance, min_max_normalize, Mat};

const DIST_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FusionError {
    #[error("importance weights are all zero after exponentiation")]
    AllZeroImportance,
    #[error("importance entries must be finite and non-negative")]
    InvalidImportance,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid fusion configuration: {0}")]
    InvalidConfig(String),
    #[error("hyperparameter grid is empty")]
    EmptyGrid,
    #[error("validation set is empty")]
    EmptyValidationSet,
}

/// The three per-album predictor outputs consumed by the loop.
///
/// `q` holds one event distribution per image, `w` one importance score per
/// image and event in [0, 1], and `p_hat` the album-level anchor
/// distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionInputs {
    q: Mat,
    w: Mat,
    p_hat: Vec<f64>,
}

impl FusionInputs {
    pub fn new(q: Mat, w: Mat, p_hat: Vec<f64>) -> Result<Self, FusionError> {
        if q.rows() == 0 || q.cols() == 0 {
            return Err(FusionError::ShapeMismatch(String::from("Q must be non-empty")));
        }
        if w.rows() != q.rows() || w.cols() != q.cols() {
            return Err(FusionError::ShapeMismatch(alloc::format!(
                "W is {}x{} but Q is {}x{}",
                w.rows(),
                w.cols(),
                q.rows(),
                q.cols()
            )));
        }
        if p_hat.len() != q.cols() {
            return Err(FusionError::ShapeMismatch(alloc::format!(
                "anchor has {} entries but Q has {} columns",
                p_hat.len(),
                q.cols()
            )));
        }
        for r in 0..q.rows() {
            check_distribution(q.row(r), "Q row")?;
        }
        check_distribution(&p_hat, "anchor")?;
        if w.as_slice().iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(FusionError::InvalidDistribution(String::from(
                "W entries must lie in [0, 1]",
            )));
        }
        Ok(FusionInputs { q, w, p_hat })
    }

    pub fn num_images(&self) -> usize {
        self.q.rows()
    }

    pub fn num_events(&self) -> usize {
        self.q.cols()
    }

    pub fn q(&self) -> &Mat {
        &self.q
    }

    pub fn w(&self) -> &Mat {
        &self.w
    }

    pub fn p_hat(&self) -> &[f64] {
        &self.p_hat
    }
}

fn check_distribution(p: &[f64], what: &str) -> Result<(), FusionError> {
    if p.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(FusionError::InvalidDistribution(alloc::format!(
            "{what} has a negative or non-finite entry"
        )));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > DIST_TOL {
        return Err(FusionError::InvalidDistribution(alloc::format!("{what} sums to {sum}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    /// Exponent on the importance weights; 0 ignores importance entirely.
    pub alpha: f64,
    /// Events whose probability falls below this fraction of the maximum are
    /// masked out of the importance update.
    pub mask_fraction: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig { alpha: 1.0, mask_fraction: 0.25, max_iters: 10, tol: 1e-4 }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(FusionError::InvalidConfig(String::from("alpha must be >= 0")));
        }
        if !(0.0..=1.0).contains(&self.mask_fraction) {
            return Err(FusionError::InvalidConfig(String::from(
                "mask fraction must lie in [0, 1]",
            )));
        }
        if self.max_iters == 0 {
            return Err(FusionError::InvalidConfig(String::from("max_iters must be >= 1")));
        }
        if !(self.tol > 0.0) {
            return Err(FusionError::InvalidConfig(String::from("tol must be > 0")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionResult {
    pub p: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: usize,
    pub converged: bool,
}

/// Album event distribution from importance-weighted image predictions:
/// p' proportional to sum_i v_i^alpha * q_i, with 0^0 = 1.
pub fn reweight_event(v: &[f64], q: &Mat, alpha: f64) -> Result<Vec<f64>, FusionError> {
    if v.len() != q.rows() {
        return Err(FusionError::ShapeMismatch(alloc::format!(
            "{} importance entries for {} rows",
            v.len(),
            q.rows()
        )));
    }
    if v.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(FusionError::InvalidImportance);
    }
    let weights: Vec<f64> = v
        .iter()
        .map(|&x| if alpha == 0.0 { 1.0 } else { pow(x, alpha) })
        .collect();
    let mut p = q.vecmat(&weights);
    let total: f64 = p.iter().sum();
    if total <= 0.0 {
        return Err(FusionError::AllZeroImportance);
    }
    p.iter_mut().for_each(|x| *x /= total);
    Ok(p)
}

/// Mean of the re-weighted estimate and the fixed anchor.
pub fn combine_with_anchor(p_prime: &[f64], p_hat: &[f64]) -> Vec<f64> {
    p_prime.iter().zip(p_hat).map(|(&a, &b)| 0.5 * (a + b)).collect()
}

/// Which event columns survive the mask: those with probability at least
/// `m` times the maximum.
pub fn mask_columns(p: &[f64], m: f64) -> Vec<bool> {
    let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    p.iter().map(|&x| x >= m * max).collect()
}

/// Per-image importance under the current event distribution: masked
/// columns of W are zeroed, the rest are averaged with weights p, and the
/// result is min-max normalized (constant scores become all ones).
pub fn update_importance(w: &Mat, p: &[f64], m: f64) -> Result<Vec<f64>, FusionError> {
    if p.len() != w.cols() {
        return Err(FusionError::ShapeMismatch(alloc::format!(
            "{} probabilities for {} columns",
            p.len(),
            w.cols()
        )));
    }
    let kept = mask_columns(p, m);
    let mut v = alloc::vec![0.0; w.rows()];
    for (i, out) in v.iter_mut().enumerate() {
        *out = w
            .row(i)
            .iter()
            .zip(p)
            .zip(&kept)
            .filter(|&(_, &keep)| keep)
            .map(|((&wic, &pc), _)| wic * pc)
            .sum();
    }
    min_max_normalize(&mut v);
    Ok(v)
}

/// Full loop with the anchor pull. Starts from the anchor and uniform
/// importance; stops when neither estimate moves by `tol` in max norm. If
/// `max_iters` passes without convergence, returns the average of the last
/// three states (fewer if fewer ran), re-normalized and clipped.
pub fn iterate(inputs: &FusionInputs, cfg: &FusionConfig) -> Result<FusionResult, FusionError> {
    run_loop(inputs, cfg, true)
}

/// Variant without the anchor pull: the re-weighted estimate is used
/// directly. Starts from the unweighted mean of Q's rows.
pub fn iterate_unanchored(
    inputs: &FusionInputs,
    cfg: &FusionConfig,
) -> Result<FusionResult, FusionError> {
    run_loop(inputs, cfg, false)
}

fn run_loop(
    inputs: &FusionInputs,
    cfg: &FusionConfig,
    anchored: bool,
) -> Result<FusionResult, FusionError> {
    cfg.validate()?;
    let n = inputs.num_images();

    let mut prev_p = if anchored {
        inputs.p_hat.clone()
    } else {
        reweight_event(&alloc::vec![1.0; n], &inputs.q, 0.0)?
    };
    let mut prev_v = alloc::vec![1.0; n];
    let mut history: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(3);

    for step in 1..=cfg.max_iters {
        let p_prime = reweight_event(&prev_v, &inputs.q, cfg.alpha)?;
        let p = if anchored { combine_with_anchor(&p_prime, &inputs.p_hat) } else { p_prime };
        let v = update_importance(&inputs.w, &p, cfg.mask_fraction)?;

        let delta = linf_distance(&p, &prev_p).max(linf_distance(&v, &prev_v));
        if history.len() == 3 {
            history.remove(0);
        }
        history.push((p.clone(), v.clone()));
        if delta < cfg.tol {
            return Ok(FusionResult { p, v, steps: step, converged: true });
        }
        prev_p = p;
        prev_v = v;
    }

    // Did not settle: smooth over the most recent states.
    let count = history.len() as f64;
    let c = inputs.num_events();
    let mut p = alloc::vec![0.0; c];
    let mut v = alloc::vec![0.0; n];
    for (hp, hv) in &history {
        for (acc, &x) in p.iter_mut().zip(hp) {
            *acc += x / count;
        }
        for (acc, &x) in v.iter_mut().zip(hv) {
            *acc += x / count;
        }
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    v.iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
    Ok(FusionResult { p, v, steps: cfg.max_iters, converged: false })
}

/// One validation album: predictor outputs plus its ground-truth labels.
#[derive(Debug, Clone)]
pub struct LabeledInputs {
    pub inputs: FusionInputs,
    pub labels: EventLabelDistribution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridScore {
    pub alpha: f64,
    pub mask_fraction: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchOutcome {
    pub alpha: f64,
    pub mask_fraction: f64,
    pub table: Vec<GridScore>,
}

/// Evaluates top-1 accuracy of the full loop at every grid point and returns
/// the maximizer. Ties break toward smaller alpha, then smaller mask
/// fraction.
pub fn grid_search(
    validation: &[LabeledInputs],
    alpha_grid: &[f64],
    m_grid: &[f64],
    template: &FusionConfig,
) -> Result<GridSearchOutcome, FusionError> {
    if alpha_grid.is_empty() || m_grid.is_empty() {
        return Err(FusionError::EmptyGrid);
    }
    if validation.is_empty() {
        return Err(FusionError::EmptyValidationSet);
    }
    let mut table = Vec::with_capacity(alpha_grid.len() * m_grid.len());
    for &alpha in alpha_grid {
        for &m in m_grid {
            let cfg = FusionConfig { alpha, mask_fraction: m, ..template.clone() };
            let mut correct = 0usize;
            for album in validation {
                let result = iterate(&album.inputs, &cfg)?;
                if album.labels.support().contains(&argmax(&result.p)) {
                    correct += 1;
                }
            }
            table.push(GridScore {
                alpha,
                mask_fraction: m,
                accuracy: correct as f64 / validation.len() as f64,
            });
        }
    }
    let best = table
        .iter()
        .min_by(|a, b| {
            b.accuracy
                .total_cmp(&a.accuracy)
                .then(a.alpha.total_cmp(&b.alpha))
                .then(a.mask_fraction.total_cmp(&b.mask_fraction))
        })
        .expect("table is non-empty");
    Ok(GridSearchOutcome {
        alpha: best.alpha,
        mask_fraction: best.mask_fraction,
        table,
    })
}

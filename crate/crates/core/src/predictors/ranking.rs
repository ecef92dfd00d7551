//! Piecewise ranking loss for Siamese importance training.
//!
//! `d` is the predicted score difference for an image pair and `g` the
//! ground-truth difference. Pairs with `|g| <= m_s` are treated as similar
//! and penalized for predictions outside `[-m_s, m_s]`; pairs with a clear
//! ground-truth ordering are penalized until the prediction clears the
//! larger margin `m_d` in the right direction.

use crate::predictors::PredictorError;

/// Returns `(loss, dLoss/dD)`.
pub fn piecewise_ranking_loss(
    d: f64,
    g: f64,
    m_s: f64,
    m_d: f64,
) -> Result<(f64, f64), PredictorError> {
    if !(0.0..f64::INFINITY).contains(&m_s) || m_s >= m_d {
        return Err(PredictorError::InvalidMargins { m_s, m_d });
    }
    let hinge = |x: f64| x.max(0.0);
    let (loss, grad) = if libm::fabs(g) <= m_s {
        let upper = hinge(d - m_s);
        let lower = hinge(-d - m_s);
        (0.5 * (upper * upper + lower * lower), upper - lower)
    } else if g > m_s {
        let h = hinge(m_d - d);
        (0.5 * h * h, -h)
    } else {
        let h = hinge(m_d + d);
        (0.5 * h * h, h)
    };
    Ok((loss, grad))
}

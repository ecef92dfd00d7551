//! PCA preprocessing: fit an orthonormal basis of the top principal
//! directions via cyclic Jacobi on the sample covariance, then project
//! features into the reduced space.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::Mat;
use crate::predictors::PredictorError;

/// Centered orthonormal projection onto the top `d'` principal directions.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaTransform {
    pub mean: Vec<f64>,
    /// `d x d'` matrix with orthonormal columns, ordered by descending
    /// explained variance.
    pub basis: Mat,
    pub explained_variance: Vec<f64>,
}

impl PcaTransform {
    pub fn input_dim(&self) -> usize {
        self.basis.rows()
    }

    pub fn reduced_dim(&self) -> usize {
        self.basis.cols()
    }
}

/// Fits the transform on an `M x d` feature matrix.
pub fn pca_fit(features: &Mat, reduced_dim: usize) -> Result<PcaTransform, PredictorError> {
    let (m, d) = (features.rows(), features.cols());
    if reduced_dim == 0 || reduced_dim > d {
        return Err(PredictorError::InvalidConfig(alloc::format!(
            "reduced dimension {reduced_dim} must lie in 1..={d}"
        )));
    }
    if m < reduced_dim {
        return Err(PredictorError::InsufficientSamples { rows: m, needed: reduced_dim });
    }

    let mut mean = vec![0.0; d];
    for r in 0..m {
        for (s, &x) in mean.iter_mut().zip(features.row(r)) {
            *s += x;
        }
    }
    mean.iter_mut().for_each(|s| *s /= m as f64);

    // Sample covariance of the centered data.
    let denom = if m > 1 { (m - 1) as f64 } else { 1.0 };
    let mut cov = Mat::zeros(d, d);
    let mut centered = vec![0.0; d];
    for r in 0..m {
        for ((c, &x), &mu) in centered.iter_mut().zip(features.row(r)).zip(&mean) {
            *c = x - mu;
        }
        for i in 0..d {
            let ci = centered[i];
            for j in i..d {
                cov[(i, j)] += ci * centered[j] / denom;
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            cov[(i, j)] = cov[(j, i)];
        }
    }

    let trace: f64 = (0..d).map(|i| cov[(i, i)]).sum();
    if trace == 0.0 {
        return Err(PredictorError::DegenerateCovariance);
    }

    let (mut eigenvalues, vectors) = jacobi_eigen(&cov);

    // Sort eigenpairs by descending eigenvalue, stable in the original index.
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigenvalues[b].total_cmp(&eigenvalues[a]).then(a.cmp(&b)));
    eigenvalues = order.iter().map(|&i| eigenvalues[i]).collect();

    let mut basis = Mat::zeros(d, reduced_dim);
    for (k, &src) in order.iter().take(reduced_dim).enumerate() {
        // Canonical sign: the largest-magnitude component is positive.
        let mut pivot = 0;
        for r in 1..d {
            if libm::fabs(vectors[(r, src)]) > libm::fabs(vectors[(pivot, src)]) {
                pivot = r;
            }
        }
        let sign = if vectors[(pivot, src)] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..d {
            basis[(r, k)] = sign * vectors[(r, src)];
        }
    }

    Ok(PcaTransform { mean, basis, explained_variance: eigenvalues[..reduced_dim].to_vec() })
}

/// Projects an `N x d` matrix to `N x d'` rows `(x - mean) * basis`.
pub fn pca_apply(t: &PcaTransform, features: &Mat) -> Result<Mat, PredictorError> {
    if features.cols() != t.input_dim() {
        return Err(PredictorError::DimensionMismatch(alloc::format!(
            "expected {} feature columns, got {}",
            t.input_dim(),
            features.cols()
        )));
    }
    let n = features.rows();
    let dp = t.reduced_dim();
    let mut out = Mat::zeros(n, dp);
    let mut centered = vec![0.0; t.input_dim()];
    for r in 0..n {
        for ((c, &x), &mu) in centered.iter_mut().zip(features.row(r)).zip(&t.mean) {
            *c = x - mu;
        }
        let row = out.row_mut(r);
        for k in 0..dp {
            let mut acc = 0.0;
            for (i, &c) in centered.iter().enumerate() {
                acc += c * t.basis[(i, k)];
            }
            row[k] = acc;
        }
    }
    Ok(out)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns the
/// eigenvalues and the matrix whose columns are the eigenvectors.
fn jacobi_eigen(sym: &Mat) -> (Vec<f64>, Mat) {
    let n = sym.rows();
    let mut a = sym.clone();
    let mut v = Mat::identity(n);
    let scale: f64 = a.as_slice().iter().map(|x| x * x).sum::<f64>();
    let tol = 1e-28 * scale.max(f64::MIN_POSITIVE);

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
            .map(|(p, q)| a[(p, q)] * a[(p, q)])
            .sum();
        if off <= tol {
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = {
                    let denom = libm::fabs(theta) + libm::sqrt(theta * theta + 1.0);
                    if theta < 0.0 {
                        -1.0 / denom
                    } else {
                        1.0 / denom
                    }
                };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;

                let (app, aqq) = (a[(p, p)], a[(q, q)]);
                a[(p, p)] = c * c * app - 2.0 * s * c * apq + s * s * aqq;
                a[(q, q)] = s * s * app + 2.0 * s * c * apq + c * c * aqq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    if k != p && k != q {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(p, k)] = a[(k, p)];
                        a[(k, q)] = s * akp + c * akq;
                        a[(q, k)] = a[(k, q)];
                    }
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let eigenvalues = (0..n).map(|i| a[(i, i)]).collect();
    (eigenvalues, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;

    fn random_mat(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut rng = stream_rng(seed, "pca-test");
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Mat::from_vec(rows, cols, data)
    }

    #[test]
    fn recovers_exact_two_dim_subspace() {
        // Rows live exactly in the span of two fixed directions.
        let mut rng = stream_rng(5, "subspace");
        let dir_a = [1.0, 0.0, 2.0, -1.0, 0.5];
        let dir_b = [0.0, 3.0, -1.0, 1.0, 1.0];
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                let (a, b): (f64, f64) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
                dir_a.iter().zip(&dir_b).map(|(&x, &y)| a * x + b * y).collect()
            })
            .collect();
        let data = Mat::from_rows(&rows);
        let t = pca_fit(&data, 2).unwrap();
        let reduced = pca_apply(&t, &data).unwrap();
        // Reconstruct and compare.
        for r in 0..data.rows() {
            for i in 0..5 {
                let mut rec = t.mean[i];
                for k in 0..2 {
                    rec += reduced[(r, k)] * t.basis[(i, k)];
                }
                assert!((rec - data[(r, i)]).abs() < 1e-6, "row {r} dim {i}");
            }
        }
    }

    #[test]
    fn full_basis_preserves_pairwise_distances() {
        let data = random_mat(30, 6, 7);
        let t = pca_fit(&data, 6).unwrap();
        let reduced = pca_apply(&t, &data).unwrap();
        for a in 0..data.rows() {
            for b in a + 1..data.rows() {
                let orig: f64 = (0..6)
                    .map(|i| (data[(a, i)] - data[(b, i)]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let red: f64 = (0..6)
                    .map(|i| (reduced[(a, i)] - reduced[(b, i)]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!((orig - red).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn explained_variance_matches_nalgebra_eigensolver() {
        let data = random_mat(100, 10, 11);
        let t = pca_fit(&data, 3).unwrap();

        // Independent oracle: nalgebra's symmetric eigensolver on the same
        // sample covariance.
        let m = data.rows();
        let d = data.cols();
        let mut mean = vec![0.0; d];
        for r in 0..m {
            for (s, &x) in mean.iter_mut().zip(data.row(r)) {
                *s += x;
            }
        }
        mean.iter_mut().for_each(|s| *s /= m as f64);
        let mut cov = nalgebra::DMatrix::<f64>::zeros(d, d);
        for r in 0..m {
            for i in 0..d {
                for j in 0..d {
                    cov[(i, j)] +=
                        (data[(r, i)] - mean[i]) * (data[(r, j)] - mean[j]) / (m as f64 - 1.0);
                }
            }
        }
        let mut eig: Vec<f64> = cov.symmetric_eigen().eigenvalues.iter().copied().collect();
        eig.sort_by(|a, b| b.total_cmp(a));

        for (ours, oracle) in t.explained_variance.iter().zip(&eig) {
            assert!((ours - oracle).abs() < 1e-6, "{ours} vs {oracle}");
        }
        // Non-increasing across columns.
        for w in t.explained_variance.windows(2) {
            assert!(w[0] >= w[1] - 1e-12);
        }
    }

    #[test]
    fn basis_is_orthonormal() {
        let data = random_mat(50, 8, 13);
        let t = pca_fit(&data, 5).unwrap();
        let gram = t.basis.transpose().matmul(&t.basis);
        for i in 0..5 {
            for j in 0..5 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((gram[(i, j)] - expect).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn apply_maps_mean_to_zero_and_basis_columns_to_units() {
        let data = random_mat(40, 5, 17);
        let t = pca_fit(&data, 3).unwrap();
        let mean_row = Mat::from_rows(&[t.mean.clone()]);
        let zero = pca_apply(&t, &mean_row).unwrap();
        for k in 0..3 {
            assert!(zero[(0, k)].abs() < 1e-12);
        }
        for j in 0..3 {
            let shifted: Vec<f64> =
                t.mean.iter().enumerate().map(|(i, &mu)| mu + t.basis[(i, j)]).collect();
            let row = pca_apply(&t, &Mat::from_rows(&[shifted])).unwrap();
            for k in 0..3 {
                let expect = if k == j { 1.0 } else { 0.0 };
                assert!((row[(0, k)] - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn batched_apply_equals_per_row_apply() {
        let data = random_mat(10, 4, 19);
        let t = pca_fit(&data, 2).unwrap();
        let two = Mat::from_rows(&[data.row(0).to_vec(), data.row(1).to_vec()]);
        let batch = pca_apply(&t, &two).unwrap();
        for r in 0..2 {
            let single = pca_apply(&t, &Mat::from_rows(&[data.row(r).to_vec()])).unwrap();
            assert_eq!(batch.row(r), single.row(0));
        }
    }

    #[test]
    fn identical_rows_are_degenerate() {
        let data = Mat::from_rows(&alloc::vec![alloc::vec![1.0, 2.0, 3.0]; 10]);
        assert!(matches!(pca_fit(&data, 2), Err(PredictorError::DegenerateCovariance)));
    }

    #[test]
    fn dimension_errors() {
        let data = random_mat(5, 4, 23);
        assert!(pca_fit(&data, 0).is_err());
        assert!(pca_fit(&data, 5).is_err());
        assert!(matches!(
            pca_fit(&random_mat(2, 4, 23), 3),
            Err(PredictorError::InsufficientSamples { .. })
        ));
        let t = pca_fit(&data, 2).unwrap();
        assert!(matches!(
            pca_apply(&t, &random_mat(3, 5, 29)),
            Err(PredictorError::DimensionMismatch(_))
        ));
    }
}

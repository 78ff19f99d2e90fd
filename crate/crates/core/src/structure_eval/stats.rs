//! Corpus statistics over downsampled structure matrices and the Fréchet
//! distance between Gaussian summaries.

use super::EvalError;
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;

/// Elementwise mean and population variance of a corpus of grid matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct SSMStats {
    pub mean: Array2<f64>,
    pub variance: Array2<f64>,
    pub count: usize,
}

/// Elementwise mean and population variance (divide by count).
pub fn corpus_stats(mats: &[Array2<f64>]) -> Result<SSMStats, EvalError> {
    let first = mats
        .first()
        .ok_or_else(|| EvalError::BadInput("corpus is empty".to_string()))?;
    let shape = (first.nrows(), first.ncols());
    for m in mats {
        if (m.nrows(), m.ncols()) != shape {
            return Err(EvalError::Shape(format!(
                "matrix is {}×{}, expected {}×{}",
                m.nrows(),
                m.ncols(),
                shape.0,
                shape.1
            )));
        }
    }

    let count = mats.len() as f64;
    let mut mean = Array2::zeros(shape);
    for m in mats {
        mean += m;
    }
    mean /= count;

    let mut variance = Array2::zeros(shape);
    for m in mats {
        let centered = m - &mean;
        variance += &(&centered * &centered);
    }
    variance /= count;

    Ok(SSMStats {
        mean,
        variance,
        count: mats.len(),
    })
}

/// Strictly-upper-triangle entries of a 5×5 matrix in row-major order:
/// (0,1), (0,2), …, (3,4).
pub fn upper_triangle_vec(m: &Array2<f64>) -> Result<Vec<f64>, EvalError> {
    if m.nrows() != 5 || m.ncols() != 5 {
        return Err(EvalError::Shape(format!(
            "expected 5×5 matrix, got {}×{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let mut out = Vec::with_capacity(10);
    for i in 0..5 {
        for j in (i + 1)..5 {
            out.push(m[[i, j]]);
        }
    }
    Ok(out)
}

/// Mean vector and covariance of a corpus of structure vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    pub mu: Vec<f64>,
    pub cov: Array2<f64>,
}

impl GaussianSummary {
    /// Validates symmetry (1e-9) and positive semidefiniteness (eigenvalues
    /// ≥ -1e-8).
    pub fn new(mu: Vec<f64>, cov: Array2<f64>) -> Result<Self, EvalError> {
        let d = mu.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(EvalError::Shape(format!(
                "covariance is {}×{}, expected {}×{}",
                cov.nrows(),
                cov.ncols(),
                d,
                d
            )));
        }
        for i in 0..d {
            for j in 0..d {
                if (cov[[i, j]] - cov[[j, i]]).abs() > 1e-9 {
                    return Err(EvalError::BadInput(format!(
                        "covariance asymmetry at ({},{})",
                        i, j
                    )));
                }
            }
        }
        let min_eig = symmetric_eigenvalues(&cov)
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -1e-8 {
            return Err(EvalError::NotPsd(min_eig));
        }
        Ok(GaussianSummary { mu, cov })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Sample mean and sample covariance (divide by count − 1), symmetrized.
pub fn gaussian_summary(vectors: &[Vec<f64>]) -> Result<GaussianSummary, EvalError> {
    if vectors.len() < 2 {
        return Err(EvalError::BadInput(format!(
            "need at least 2 vectors, got {}",
            vectors.len()
        )));
    }
    let d = vectors[0].len();
    for v in vectors {
        if v.len() != d {
            return Err(EvalError::Shape(format!(
                "vector of dim {} in a corpus of dim {}",
                v.len(),
                d
            )));
        }
    }

    let n = vectors.len() as f64;
    let mut mu = vec![0.0; d];
    for v in vectors {
        for (m, &x) in mu.iter_mut().zip(v) {
            *m += x;
        }
    }
    for m in &mut mu {
        *m /= n;
    }

    let mut cov = Array2::zeros((d, d));
    for v in vectors {
        for i in 0..d {
            for j in i..d {
                let c = (v[i] - mu[i]) * (v[j] - mu[j]);
                cov[[i, j]] += c;
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let c = cov[[i, j]] / (n - 1.0);
            cov[[i, j]] = c;
            cov[[j, i]] = c;
        }
    }

    Ok(GaussianSummary { mu, cov })
}

fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn symmetric_eigenvalues(a: &Array2<f64>) -> Vec<f64> {
    SymmetricEigen::new(to_dmatrix(a))
        .eigenvalues
        .iter()
        .copied()
        .collect()
}

// Q max(Λ, 0)^{1/2} Qᵀ of a symmetric matrix.
fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let roots: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let q = eig.eigenvectors;
    let mut scaled = q.clone();
    for (c, &r) in roots.iter().enumerate() {
        scaled.column_mut(c).scale_mut(r);
    }
    scaled * q.transpose()
}

/// Squared Fréchet distance between Gaussians:
/// `|μa − μb|² + tr(Σa + Σb − 2 (Σa Σb)^{1/2})`, computed through the
/// symmetric form `(Σa^{1/2} Σb Σa^{1/2})^{1/2}` with negative eigenvalues
/// clamped at zero. The result is clamped at zero.
pub fn frechet_distance(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64, EvalError> {
    if a.dim() != b.dim() {
        return Err(EvalError::Shape(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    for cov in [&a.cov, &b.cov] {
        let min_eig = symmetric_eigenvalues(cov)
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -1e-8 {
            return Err(EvalError::NotPsd(min_eig));
        }
    }

    let mean_term: f64 = a
        .mu
        .iter()
        .zip(&b.mu)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();

    let ca = to_dmatrix(&a.cov);
    let cb = to_dmatrix(&b.cov);
    let sqrt_a = psd_sqrt(&ca);
    let inner = &sqrt_a * &cb * &sqrt_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let trace_sqrt: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .sum();

    let d2 = mean_term + ca.trace() + cb.trace() - 2.0 * trace_sqrt;
    Ok(d2.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_matrix_stats() {
        let m = Array2::from_shape_fn((5, 5), |(i, j)| (i + j) as f64);
        let stats = corpus_stats(&[m.clone()]).unwrap();
        assert_eq!(stats.mean, m);
        assert!(stats.variance.iter().all(|&v| v == 0.0));
        assert_eq!(stats.count, 1);
    }

    #[test]
    fn mirrored_pair_means_to_center() {
        let m = Array2::from_shape_fn((5, 5), |(i, j)| (i * 5 + j) as f64 * 0.1);
        let c = 0.7;
        let mirrored = m.mapv(|v| -v + 2.0 * c);
        let stats = corpus_stats(&[m, mirrored]).unwrap();
        for &v in stats.mean.iter() {
            assert!((v - c).abs() < 1e-12);
        }
    }

    #[test]
    fn stats_match_two_pass_oracle() {
        // One-pass result against an independent two-pass recomputation.
        let mut state = 99u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((state >> 33) as f64) / ((1u64 << 31) as f64)
        };
        let mats: Vec<Array2<f64>> = (0..100)
            .map(|_| Array2::from_shape_fn((5, 5), |_| next()))
            .collect();
        let stats = corpus_stats(&mats).unwrap();

        for i in 0..5 {
            for j in 0..5 {
                let xs: Vec<f64> = mats.iter().map(|m| m[[i, j]]).collect();
                let mean = xs.iter().sum::<f64>() / xs.len() as f64;
                let var =
                    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
                assert!((stats.mean[[i, j]] - mean).abs() < 1e-12);
                assert!((stats.variance[[i, j]] - var).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(corpus_stats(&[]).is_err());
    }

    #[test]
    fn upper_triangle_ordering() {
        let eye = Array2::from_shape_fn((5, 5), |(i, j)| if i == j { 1.0 } else { 0.0 });
        assert_eq!(upper_triangle_vec(&eye).unwrap(), vec![0.0; 10]);

        let mut single = Array2::zeros((5, 5));
        single[[0, 1]] = 0.7;
        let v = upper_triangle_vec(&single).unwrap();
        assert_eq!(v[0], 0.7);
        assert!(v[1..].iter().all(|&x| x == 0.0));

        let ones = Array2::from_elem((5, 5), 1.0);
        assert_eq!(upper_triangle_vec(&ones).unwrap(), vec![1.0; 10]);

        assert!(upper_triangle_vec(&Array2::zeros((4, 4))).is_err());
    }

    #[test]
    fn identical_vectors_have_zero_covariance() {
        let v = vec![vec![1.0, 2.0, 3.0]; 5];
        let g = gaussian_summary(&v).unwrap();
        assert_eq!(g.mu, vec![1.0, 2.0, 3.0]);
        assert!(g.cov.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn opposed_unit_vectors_covariance() {
        // e1 and -e1: mean 0, sample covariance 2 at (0,0) and 0 elsewhere.
        let mut e1 = vec![0.0; 10];
        e1[0] = 1.0;
        let neg: Vec<f64> = e1.iter().map(|&x| -x).collect();
        let g = gaussian_summary(&[e1, neg]).unwrap();
        assert!(g.mu.iter().all(|&m| m == 0.0));
        assert_eq!(g.cov[[0, 0]], 2.0);
        for i in 0..10 {
            for j in 0..10 {
                if (i, j) != (0, 0) {
                    assert_eq!(g.cov[[i, j]], 0.0);
                }
            }
        }
    }

    #[test]
    fn sample_covariance_is_psd() {
        let mut state = 3u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((state >> 33) as f64) / ((1u64 << 31) as f64) - 0.5
        };
        let vectors: Vec<Vec<f64>> = (0..30).map(|_| (0..10).map(|_| next()).collect()).collect();
        let g = gaussian_summary(&vectors).unwrap();
        let min_eig = symmetric_eigenvalues(&g.cov)
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        assert!(min_eig >= -1e-8);
        GaussianSummary::new(g.mu, g.cov).expect("summary passes its own validation");
    }

    #[test]
    fn frechet_self_distance_is_zero() {
        let g = GaussianSummary::new(
            vec![0.3, -0.2],
            array![[1.0, 0.2], [0.2, 0.5]],
        )
        .unwrap();
        assert!(frechet_distance(&g, &g).unwrap() <= 1e-8);
    }

    #[test]
    fn frechet_one_dimensional_closed_form() {
        // (μa − μb)² + (σa − σb)² with equal unit variances: distance 1.
        let a = GaussianSummary::new(vec![0.0], array![[1.0]]).unwrap();
        let b = GaussianSummary::new(vec![1.0], array![[1.0]]).unwrap();
        let d = frechet_distance(&a, &b).unwrap();
        assert!((d - 1.0).abs() < 1e-9);
    }

    #[test]
    fn frechet_is_symmetric() {
        let a = GaussianSummary::new(
            vec![0.1, 0.5, -0.3],
            array![[2.0, 0.3, 0.1], [0.3, 1.0, 0.0], [0.1, 0.0, 0.7]],
        )
        .unwrap();
        let b = GaussianSummary::new(
            vec![-0.4, 0.2, 0.9],
            array![[1.5, -0.2, 0.0], [-0.2, 0.8, 0.1], [0.0, 0.1, 1.1]],
        )
        .unwrap();
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-9);
        assert!(ab >= 0.0);
    }

    #[test]
    fn frechet_diagonal_case_matches_analytic_formula() {
        // Commuting (diagonal) covariances have the closed form
        // Σ (μa−μb)² + Σ (√σa − √σb)².
        let d = 10;
        let sa: Vec<f64> = (0..d).map(|i| 0.5 + 0.1 * i as f64).collect();
        let sb: Vec<f64> = (0..d).map(|i| 1.7 - 0.05 * i as f64).collect();
        let mu_a: Vec<f64> = (0..d).map(|i| 0.05 * i as f64).collect();
        let mu_b: Vec<f64> = (0..d).map(|i| -0.02 * i as f64).collect();

        let cov_a = Array2::from_shape_fn((d, d), |(i, j)| if i == j { sa[i] } else { 0.0 });
        let cov_b = Array2::from_shape_fn((d, d), |(i, j)| if i == j { sb[i] } else { 0.0 });
        let a = GaussianSummary::new(mu_a.clone(), cov_a).unwrap();
        let b = GaussianSummary::new(mu_b.clone(), cov_b).unwrap();

        let analytic: f64 = (0..d)
            .map(|i| (mu_a[i] - mu_b[i]).powi(2) + (sa[i].sqrt() - sb[i].sqrt()).powi(2))
            .sum();
        let computed = frechet_distance(&a, &b).unwrap();
        assert!(
            (computed - analytic).abs() < 1e-6,
            "{} vs {}",
            computed,
            analytic
        );
    }

    #[test]
    fn frechet_rejects_bad_inputs() {
        let a = GaussianSummary::new(vec![0.0], array![[1.0]]).unwrap();
        let b = GaussianSummary::new(vec![0.0, 0.0], array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!(frechet_distance(&a, &b).is_err());

        assert!(GaussianSummary::new(vec![0.0], array![[-1.0]]).is_err());
    }
}

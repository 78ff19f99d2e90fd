//! Self-similarity matrices and similarity-network fusion.

use super::{EvalError, FeatureMatrix};
use ndarray::Array2;

/// Frame-by-frame similarity: symmetric, unit diagonal, entries in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SSMatrix {
    values: Array2<f64>,
}

impl SSMatrix {
    /// Wraps a matrix after checking symmetry (1e-9), range and unit
    /// diagonal.
    pub fn new(values: Array2<f64>) -> Result<Self, EvalError> {
        let n = values.nrows();
        if values.ncols() != n {
            return Err(EvalError::Shape(format!(
                "expected square matrix, got {}×{}",
                n,
                values.ncols()
            )));
        }
        for i in 0..n {
            if (values[[i, i]] - 1.0).abs() > 1e-9 {
                return Err(EvalError::BadInput(format!(
                    "diagonal entry ({0},{0}) is {1}, not 1",
                    i,
                    values[[i, i]]
                )));
            }
            for j in 0..n {
                let v = values[[i, j]];
                if !(-1e-12..=1.0 + 1e-12).contains(&v) {
                    return Err(EvalError::BadInput(format!(
                        "entry ({},{}) = {} outside [0, 1]",
                        i, j, v
                    )));
                }
                if (v - values[[j, i]]).abs() > 1e-9 {
                    return Err(EvalError::BadInput(format!(
                        "asymmetry at ({},{})",
                        i, j
                    )));
                }
            }
        }
        Ok(SSMatrix { values })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn downsample(&self, grid: usize) -> Result<Array2<f64>, EvalError> {
        downsample_matrix(&self.values, grid)
    }
}

/// Output of similarity-network fusion; entries are nonnegative but not
/// rescaled.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedSSM {
    values: Array2<f64>,
    pub iterations_used: usize,
}

impl FusedSSM {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn downsample(&self, grid: usize) -> Result<Array2<f64>, EvalError> {
        downsample_matrix(&self.values, grid)
    }
}

/// Builds an SSM from frame features with an adaptive Gaussian kernel:
/// `W_ij = exp(-d_ij² / (σ_i σ_j + ε))` over pairwise Euclidean distances,
/// where `σ_i` is the mean distance from frame `i` to its 10 nearest
/// neighbors. The diagonal is forced to 1.
pub fn compute_ssm(f: &FeatureMatrix) -> SSMatrix {
    const KAPPA: usize = 10;
    const EPS: f64 = 1e-12;

    let n = f.frames.nrows();
    let mut dist = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let mut d2 = 0.0;
            for c in 0..f.frames.ncols() {
                let d = f.frames[[i, c]] - f.frames[[j, c]];
                d2 += d * d;
            }
            let d = d2.sqrt();
            dist[[i, j]] = d;
            dist[[j, i]] = d;
        }
    }

    let kappa = KAPPA.min(n.saturating_sub(1)).max(1);
    let sigma: Vec<f64> = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist[[i, j]]).collect();
            row.sort_by(|a, b| a.partial_cmp(b).unwrap());
            row.iter().take(kappa).sum::<f64>() / kappa as f64
        })
        .collect();

    let mut w = Array2::zeros((n, n));
    for i in 0..n {
        w[[i, i]] = 1.0;
        for j in (i + 1)..n {
            let v = (-(dist[[i, j]] * dist[[i, j]]) / (sigma[i] * sigma[j] + EPS)).exp();
            w[[i, j]] = v;
            w[[j, i]] = v;
        }
    }

    SSMatrix { values: w }
}

// Full transition kernel with the half-mass diagonal convention: each
// off-diagonal row carries mass 1/2, the diagonal carries 1/2.
fn full_kernel(w: &Array2<f64>) -> Array2<f64> {
    let n = w.nrows();
    let mut p = Array2::zeros((n, n));
    for i in 0..n {
        let row_sum: f64 = (0..n).filter(|&j| j != i).map(|j| w[[i, j]]).sum();
        if row_sum > 0.0 {
            for j in 0..n {
                if j != i {
                    p[[i, j]] = w[[i, j]] / (2.0 * row_sum);
                }
            }
            p[[i, i]] = 0.5;
        } else {
            p[[i, i]] = 1.0;
        }
    }
    p
}

// Sparse kernel row-normalized over each row's k nearest neighbors.
fn sparse_kernel(w: &Array2<f64>, k: usize) -> Array2<f64> {
    let n = w.nrows();
    let mut s = Array2::zeros((n, n));
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| w[[i, b]].partial_cmp(&w[[i, a]]).unwrap().then(a.cmp(&b)));
        let neighbors = &order[..k];
        let sum: f64 = neighbors.iter().map(|&j| w[[i, j]]).sum();
        if sum > 0.0 {
            for &j in neighbors {
                s[[i, j]] = w[[i, j]] / sum;
            }
        } else {
            for &j in neighbors {
                s[[i, j]] = 1.0 / k as f64;
            }
        }
    }
    s
}

/// Similarity-network fusion of two or more same-size affinity views.
///
/// Each view `v` gets a full kernel `P_v` and a sparse kernel `S_v`; every
/// round updates all views simultaneously as
/// `P_v ← S_v × mean_{u≠v}(P_u) × S_vᵀ`, re-symmetrizing after each round.
/// The result is the mean of the `P_v` after `iterations` rounds.
pub fn fuse_ssms(views: &[SSMatrix], k: usize, iterations: usize) -> Result<FusedSSM, EvalError> {
    if views.len() < 2 {
        return Err(EvalError::BadInput(format!(
            "fusion needs at least 2 views, got {}",
            views.len()
        )));
    }
    let n = views[0].n();
    for (v, view) in views.iter().enumerate() {
        if view.n() != n {
            return Err(EvalError::Shape(format!(
                "view {} is {}×{}, expected {}×{}",
                v,
                view.n(),
                view.n(),
                n,
                n
            )));
        }
    }
    if k == 0 || k >= n {
        return Err(EvalError::BadInput(format!(
            "neighbor count k = {} must satisfy 0 < k < n = {}",
            k, n
        )));
    }

    let mut p: Vec<Array2<f64>> = views.iter().map(|v| full_kernel(v.values())).collect();
    let s: Vec<Array2<f64>> = views
        .iter()
        .map(|v| sparse_kernel(v.values(), k))
        .collect();

    let m = views.len();
    for _ in 0..iterations {
        let mut next: Vec<Array2<f64>> = Vec::with_capacity(m);
        for v in 0..m {
            let mut mean = Array2::<f64>::zeros((n, n));
            for (u, pu) in p.iter().enumerate() {
                if u != v {
                    mean += pu;
                }
            }
            mean /= (m - 1) as f64;
            let prod = s[v].dot(&mean).dot(&s[v].t());
            next.push((&prod + &prod.t()) / 2.0);
        }
        p = next;
    }

    let mut fused = Array2::<f64>::zeros((n, n));
    for pv in &p {
        fused += pv;
    }
    fused /= m as f64;

    Ok(FusedSSM {
        values: fused,
        iterations_used: iterations,
    })
}

/// Rescales a fused matrix to unit diagonal, `A_ij = P_ij / √(P_ii P_jj)`
/// clamped to [0, 1], so fused matrices are comparable across tracks and
/// exportable as images.
pub fn normalize_unit_diagonal(fused: &FusedSSM) -> SSMatrix {
    let n = fused.n();
    let p = fused.values();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        out[[i, i]] = 1.0;
        for j in (i + 1)..n {
            let denom = (p[[i, i]] * p[[j, j]]).sqrt();
            let v = if denom > 0.0 {
                (p[[i, j]] / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    SSMatrix { values: out }
}

/// Mean-pools a square matrix over a `grid × grid` partition with cell
/// boundaries at `round(i × n / grid)`.
pub fn downsample_matrix(values: &Array2<f64>, grid: usize) -> Result<Array2<f64>, EvalError> {
    let n = values.nrows();
    if values.ncols() != n {
        return Err(EvalError::Shape(format!(
            "expected square matrix, got {}×{}",
            n,
            values.ncols()
        )));
    }
    if grid == 0 || n < grid {
        return Err(EvalError::BadInput(format!(
            "cannot pool {}×{} matrix to {}×{}",
            n, n, grid, grid
        )));
    }

    let boundary = |i: usize| ((i as f64 * n as f64 / grid as f64).round() as usize).min(n);
    let mut out = Array2::zeros((grid, grid));
    for gi in 0..grid {
        for gj in 0..grid {
            let (r0, r1) = (boundary(gi), boundary(gi + 1));
            let (c0, c1) = (boundary(gj), boundary(gj + 1));
            let count = ((r1 - r0) * (c1 - c0)) as f64;
            let mut sum = 0.0;
            for r in r0..r1 {
                for c in c0..c1 {
                    sum += values[[r, c]];
                }
            }
            out[[gi, gj]] = sum / count;
        }
    }
    Ok(out)
}

//! Dense symmetric eigensolver (cyclic Jacobi rotations).

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

const SYMMETRY_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum EigenError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric: |a[{row},{col}] - a[{col},{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error(
        "Jacobi iteration did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})"
    )]
    NoConvergence { sweeps: usize, off_norm: f64 },
}

/// Eigenvalues in ascending order with matching orthonormal eigenvector columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl SpectralBasis {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// The first `count` eigenvector columns (lowest frequencies).
    pub fn lowest(&self, count: usize) -> DMatrix<f64> {
        self.eigenvectors.columns(0, count).into_owned()
    }
}

/// Decomposes a symmetric matrix as `V diag(lambda) V^T`.
///
/// Eigenvalues come back ascending. Each eigenvector is signed so that its
/// largest-magnitude entry is positive; among near-equal magnitudes the first
/// index wins.
pub fn eigendecompose(matrix: &DMatrix<f64>) -> Result<SpectralBasis, EigenError> {
    let (rows, cols) = matrix.shape();
    if rows != cols {
        return Err(EigenError::NotSquare { rows, cols });
    }
    if matrix.iter().any(|x| !x.is_finite()) {
        return Err(EigenError::NonFinite);
    }
    let n = rows;
    for i in 0..n {
        for j in (i + 1)..n {
            let gap = (matrix[(i, j)] - matrix[(j, i)]).abs();
            if gap > SYMMETRY_TOL {
                return Err(EigenError::NotSymmetric {
                    row: i,
                    col: j,
                    gap,
                });
            }
        }
    }

    let mut a = matrix.clone();
    // symmetrize away rounding-level asymmetry
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
    let mut v = DMatrix::<f64>::identity(n, n);
    jacobi_sweeps(&mut a, &mut v)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]).then(i.cmp(&j)));

    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| a[(i, i)]));
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = v.column(src).into_owned();
        fix_sign(&mut col);
        eigenvectors.set_column(dst, &col);
    }
    Ok(SpectralBasis {
        eigenvalues,
        eigenvectors,
    })
}

fn off_diagonal_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

fn jacobi_sweeps(a: &mut DMatrix<f64>, v: &mut DMatrix<f64>) -> Result<(), EigenError> {
    let n = a.nrows();
    let scale = a.norm();
    if n < 2 || scale == 0.0 {
        return Ok(());
    }
    let target = scale * 1e-13;
    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(a) <= target {
            return Ok(());
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                // rotation angle annihilating a[p,q]
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(a, v, p, q, c, s);
            }
        }
    }
    let off_norm = off_diagonal_norm(a);
    if off_norm <= target {
        Ok(())
    } else {
        Err(EigenError::NoConvergence {
            sweeps: MAX_SWEEPS,
            off_norm,
        })
    }
}

/// Applies `A <- J^T A J`, `V <- V J` for the Givens rotation in the (p, q) plane.
fn rotate(a: &mut DMatrix<f64>, v: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    let n = a.nrows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

fn fix_sign(col: &mut DVector<f64>) {
    let max = col.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return;
    }
    let tol = max * 1e-10;
    let pivot = col
        .iter()
        .copied()
        .find(|x| x.abs() >= max - tol)
        .unwrap_or(max);
    if pivot < 0.0 {
        col.neg_mut();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_graph(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Graph {
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.random::<f64>() < p {
                    edges.push((u, v, rng.random_range(0.1..2.0)));
                }
            }
        }
        Graph::from_weighted_edges(n, edges).unwrap()
    }

    fn check_basis(l: &DMatrix<f64>, basis: &SpectralBasis) {
        let n = l.nrows();
        let v = &basis.eigenvectors;
        let gram = v.transpose() * v;
        assert!((gram - DMatrix::identity(n, n)).amax() < 1e-8);
        let scale = l.amax().max(1.0);
        for i in 0..n {
            let col = v.column(i);
            let residual = (l * col - col * basis.eigenvalues[i]).amax();
            assert!(residual < 1e-7 * scale, "residual {residual}");
        }
        for w in basis.eigenvalues.as_slice().windows(2) {
            assert!(w[0] <= w[1]);
        }
    }

    #[test]
    fn two_by_two_analytic() {
        let l = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let b = eigendecompose(&l).unwrap();
        assert_abs_diff_eq!(b.eigenvalues[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.eigenvalues[1], 2.0, epsilon = 1e-12);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(b.eigenvectors[(0, 0)], r, epsilon = 1e-12);
        assert_abs_diff_eq!(b.eigenvectors[(1, 0)], r, epsilon = 1e-12);
        assert_abs_diff_eq!(b.eigenvectors[(0, 1)], r, epsilon = 1e-12);
        assert_abs_diff_eq!(b.eigenvectors[(1, 1)], -r, epsilon = 1e-12);
    }

    #[test]
    fn zero_matrix_gives_identity() {
        let b = eigendecompose(&DMatrix::zeros(3, 3)).unwrap();
        assert_eq!(b.eigenvalues, DVector::zeros(3));
        assert_eq!(b.eigenvectors, DMatrix::identity(3, 3));
    }

    #[test]
    fn random_six_node_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = random_graph(6, 0.6, &mut rng);
        let l = g.laplacian();
        check_basis(&l, &eigendecompose(&l).unwrap());
    }

    #[test]
    fn connected_graph_has_zero_smallest_eigenvalue() {
        let g = Graph::from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap();
        let b = g.spectral_basis().unwrap();
        assert_abs_diff_eq!(b.eigenvalues[0], 0.0, epsilon = 1e-8);
        let c = 1.0 / 5f64.sqrt();
        for i in 0..5 {
            assert_abs_diff_eq!(b.eigenvectors[(i, 0)], c, epsilon = 1e-10);
        }
    }

    #[test]
    fn reconstructs_random_graphs_up_to_50_nodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        for n in [2, 7, 13, 25, 50] {
            let g = random_graph(n, 0.3, &mut rng);
            let l = g.laplacian();
            let b = eigendecompose(&l).unwrap();
            check_basis(&l, &b);
            let rebuilt = &b.eigenvectors
                * DMatrix::from_diagonal(&b.eigenvalues)
                * b.eigenvectors.transpose();
            assert!((rebuilt - &l).amax() < 1e-6);
        }
    }

    #[test]
    fn eigenvalues_match_nalgebra_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let g = random_graph(30, 0.2, &mut rng);
        let l = g.laplacian();
        let ours = eigendecompose(&l).unwrap();
        let mut reference: Vec<f64> = l
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        reference.sort_by(f64::total_cmp);
        for (a, b) in ours.eigenvalues.iter().zip(reference) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn sign_convention_is_largest_entry_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = random_graph(12, 0.4, &mut rng).laplacian();
        let b = eigendecompose(&l).unwrap();
        for col in b.eigenvectors.column_iter() {
            let (idx, _) = col.iter().enumerate().fold((0, 0.0), |(bi, bm), (i, x)| {
                if x.abs() > bm + 1e-10 {
                    (i, x.abs())
                } else {
                    (bi, bm)
                }
            });
            assert!(col[idx] > 0.0);
        }
    }

    #[test]
    fn rejects_non_symmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            eigendecompose(&m),
            Err(EigenError::NotSymmetric { row: 0, col: 1, .. })
        ));
        let m = DMatrix::<f64>::zeros(2, 3);
        assert!(matches!(
            eigendecompose(&m),
            Err(EigenError::NotSquare { .. })
        ));
    }

    #[test]
    fn laplacian_is_positive_semidefinite() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let l = random_graph(20, 0.3, &mut rng).laplacian();
        for _ in 0..100 {
            let z = DVector::from_fn(20, |_, _| rng.random_range(-1.0..1.0));
            assert!(z.dot(&(&l * &z)) >= -1e-10);
        }
    }
}

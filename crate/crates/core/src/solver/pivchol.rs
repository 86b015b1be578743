//! Symmetric-pivoted Cholesky for positive semi-definite systems.
//!
//! The matrix is first equilibrated to unit diagonal, then factored as
//! `Pᵀ D A D P = L Lᵀ` with the largest remaining diagonal chosen at every step.
//! Factorization stops once the best remaining pivot drops below `rtol` times the
//! first one; the trailing coefficients are then fixed at zero.
//!
//! When `A = BᵀB` and `B` is at hand, [`PivotedCholesky::from_rows`] obtains the
//! same factor from a column-pivoted Householder reduction of `B`, which never
//! forms `A` and so keeps the accuracy of the solves at `cond(B)` instead of
//! `cond(B)²`. The pivots, drop rule and permutation are identical.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct PivotedCholesky {
    dim: usize,
    rank: usize,
    /// `perm[k]` is the original index factored at step `k`.
    perm: Vec<usize>,
    /// Equilibration factors, `1/√a_ii` (zero for empty rows).
    scale: Vec<f64>,
    /// Leading `rank × rank` factor, column major.
    l: Vec<f64>,
}

impl PivotedCholesky {
    pub fn factor(a: &DMatrix<f64>, rtol: f64) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::InvalidArgument("Cholesky of a non-square matrix".into()));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalInput("normal equations"));
        }
        let scale: Vec<f64> = (0..n)
            .map(|i| {
                let d = a[(i, i)];
                if d > 0.0 {
                    1.0 / d.sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        // lower triangle of D A D, column major
        let mut w = vec![0.0; n * n];
        for j in 0..n {
            for i in j..n {
                w[i + j * n] = a[(i, j)] * scale[i] * scale[j];
            }
        }
        let mut perm: Vec<usize> = (0..n).collect();
        let mut first = 0.0;
        let mut rank = 0;
        for k in 0..n {
            let (mut best, mut arg) = (f64::NEG_INFINITY, k);
            for i in k..n {
                let d = w[i + i * n];
                if d > best {
                    best = d;
                    arg = i;
                }
            }
            if k == 0 {
                first = best;
            }
            if !(best > 0.0 && best > rtol * first) {
                break;
            }
            if arg != k {
                swap_symmetric(&mut w, n, k, arg);
                perm.swap(k, arg);
            }
            let pivot = w[k + k * n].sqrt();
            w[k + k * n] = pivot;
            for i in (k + 1)..n {
                w[i + k * n] /= pivot;
            }
            for j in (k + 1)..n {
                let ljk = w[j + k * n];
                if ljk == 0.0 {
                    continue;
                }
                for i in j..n {
                    w[i + j * n] -= w[i + k * n] * ljk;
                }
            }
            rank = k + 1;
        }
        let mut l = vec![0.0; rank * rank];
        for j in 0..rank {
            for i in j..rank {
                l[i + j * rank] = w[i + j * n];
            }
        }
        Ok(Self {
            dim: n,
            rank,
            perm,
            scale,
            l,
        })
    }

    /// Factor of `BᵀB` from the rows of `B`, with `rhs` carried along: returns
    /// the first `rank` rows of `Qᵀ rhs` as well, where `B D P = Q R`.
    pub fn from_rows(b: &DMatrix<f64>, rhs: &DMatrix<f64>, rtol: f64) -> Result<(Self, DMatrix<f64>)> {
        let (m, n) = b.shape();
        if rhs.nrows() != m {
            return Err(Error::InvalidArgument("right-hand side rows do not match".into()));
        }
        if b.iter().chain(rhs.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NumericalInput("least-squares rows"));
        }
        let scale: Vec<f64> = b
            .column_iter()
            .map(|c| {
                let d = c.norm_squared();
                if d > 0.0 {
                    1.0 / d.sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        let mut w: Vec<f64> = (0..n)
            .flat_map(|j| (0..m).map(move |i| (i, j)))
            .map(|(i, j)| b[(i, j)] * scale[j])
            .collect();
        let k_rhs = rhs.ncols();
        let mut z: Vec<f64> = rhs.as_slice().to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut first = 0.0;
        let mut rank = 0;
        let mut v = vec![0.0; m];
        for k in 0..m.min(n) {
            // remaining column norms are the Schur-complement diagonal
            let (mut best, mut arg) = (f64::NEG_INFINITY, k);
            for j in k..n {
                let d: f64 = w[j * m + k..(j + 1) * m].iter().map(|x| x * x).sum();
                if d > best {
                    best = d;
                    arg = j;
                }
            }
            if k == 0 {
                first = best;
            }
            if !(best > 0.0 && best > rtol * first) {
                break;
            }
            if arg != k {
                for i in 0..m {
                    w.swap(k * m + i, arg * m + i);
                }
                perm.swap(k, arg);
            }
            let col = &w[k * m + k..(k + 1) * m];
            let x0 = col[0];
            let alpha = if x0 > 0.0 { -best.sqrt() } else { best.sqrt() };
            let len = m - k;
            v[..len].copy_from_slice(col);
            v[0] -= alpha;
            let vv: f64 = v[..len].iter().map(|x| x * x).sum();
            let reflect = |c: &mut [f64]| {
                let dot: f64 = c.iter().zip(&v[..len]).map(|(a, b)| a * b).sum();
                let f = 2.0 * dot / vv;
                for (a, b) in c.iter_mut().zip(&v[..len]) {
                    *a -= f * b;
                }
            };
            if vv > 0.0 {
                for j in (k + 1)..n {
                    reflect(&mut w[j * m + k..(j + 1) * m]);
                }
                for j in 0..k_rhs {
                    reflect(&mut z[j * m + k..(j + 1) * m]);
                }
            }
            w[k * m + k] = alpha;
            rank = k + 1;
        }
        let mut l = vec![0.0; rank * rank];
        for j in 0..rank {
            for i in j..rank {
                l[i + j * rank] = w[j + i * m];
            }
        }
        let qtb = DMatrix::from_fn(rank, k_rhs, |i, j| z[j * m + i]);
        Ok((
            Self {
                dim: n,
                rank,
                perm,
                scale,
                l,
            },
            qtb,
        ))
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Original indices of the retained coefficients, in pivot order.
    pub fn retained(&self) -> &[usize] {
        &self.perm[..self.rank]
    }

    /// Solves `A x = b` on the retained coordinates; dropped ones are zero.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut y: Vec<f64> = self
            .retained()
            .iter()
            .map(|&p| b[p] * self.scale[p])
            .collect();
        self.forward(&mut y);
        self.backward(&mut y);
        let mut x = DVector::zeros(self.dim);
        for (k, &p) in self.retained().iter().enumerate() {
            x[p] = y[k] * self.scale[p];
        }
        x
    }

    /// Least-squares coefficients from the transformed right-hand side of
    /// [`from_rows`](Self::from_rows).
    pub fn solve_transformed(&self, qtb: &[f64]) -> DVector<f64> {
        let mut y = qtb[..self.rank].to_vec();
        self.backward(&mut y);
        let mut x = DVector::zeros(self.dim);
        for (k, &p) in self.retained().iter().enumerate() {
            x[p] = y[k] * self.scale[p];
        }
        x
    }

    /// `L⁻¹ (D B)_{retained}` for a `dim × k` matrix `B`.
    pub fn whiten(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.rank, b.ncols());
        let mut y = vec![0.0; self.rank];
        for c in 0..b.ncols() {
            for (k, &p) in self.retained().iter().enumerate() {
                y[k] = b[(p, c)] * self.scale[p];
            }
            self.forward(&mut y);
            for k in 0..self.rank {
                out[(k, c)] = y[k];
            }
        }
        out
    }

    /// `D P L⁻ᵀ E`: maps whitened coordinates back to the original ones.
    pub fn unwhiten(&self, e: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, e.ncols());
        let mut y = vec![0.0; self.rank];
        for c in 0..e.ncols() {
            for k in 0..self.rank {
                y[k] = e[(k, c)];
            }
            self.backward(&mut y);
            for (k, &p) in self.retained().iter().enumerate() {
                out[(p, c)] = y[k] * self.scale[p];
            }
        }
        out
    }

    fn forward(&self, y: &mut [f64]) {
        let r = self.rank;
        for j in 0..r {
            y[j] /= self.l[j + j * r];
            let yj = y[j];
            for i in (j + 1)..r {
                y[i] -= self.l[i + j * r] * yj;
            }
        }
    }

    fn backward(&self, y: &mut [f64]) {
        let r = self.rank;
        for j in (0..r).rev() {
            let mut s = y[j];
            for i in (j + 1)..r {
                s -= self.l[i + j * r] * y[i];
            }
            y[j] = s / self.l[j + j * r];
        }
    }
}

/// Symmetric row/column swap of `k < m` on a lower-triangle column-major store.
fn swap_symmetric(w: &mut [f64], n: usize, k: usize, m: usize) {
    let at = |i: usize, j: usize| if i >= j { i + j * n } else { j + i * n };
    w.swap(at(k, k), at(m, m));
    for j in 0..k {
        w.swap(at(k, j), at(m, j));
    }
    for i in (k + 1)..m {
        w.swap(at(i, k), at(m, i));
    }
    for i in (m + 1)..n {
        w.swap(at(i, k), at(i, m));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let b = DMatrix::from_fn(n, n, |_, _| next());
        &b * b.transpose() + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn full_rank_solve() {
        let a = spd(7, 3);
        let b = DVector::from_fn(7, |i, _| i as f64 - 2.0);
        let f = PivotedCholesky::factor(&a, 1e-10).unwrap();
        assert_eq!(f.rank(), 7);
        let x = f.solve(&b);
        assert!((&a * x - b).norm() < 1e-10);
    }

    #[test]
    fn rank_deficient_drops_trailing() {
        let v = DMatrix::from_fn(6, 3, |i, j| ((i + 1) * (j + 2)) as f64 + if i == j { 1.0 } else { 0.0 });
        let a = &v * v.transpose();
        let f = PivotedCholesky::factor(&a, 1e-10).unwrap();
        assert_eq!(f.rank(), 3);
        // consistent right-hand side in col(A)
        let b = &a * DVector::from_fn(6, |i, _| (i as f64).sin());
        let x = f.solve(&b);
        assert!((&a * &x - &b).norm() < 1e-8 * b.norm());
        let dropped = x.iter().filter(|v| **v == 0.0).count();
        assert_eq!(dropped, 3);
    }

    #[test]
    fn zero_matrix_has_rank_zero() {
        let f = PivotedCholesky::factor(&DMatrix::zeros(3, 3), 1e-10).unwrap();
        assert_eq!(f.rank(), 0);
        assert_eq!(f.solve(&DVector::from_element(3, 1.0)).norm(), 0.0);
    }

    #[test]
    fn non_finite_input() {
        let mut a = spd(3, 1);
        a[(1, 2)] = f64::NAN;
        assert!(matches!(
            PivotedCholesky::factor(&a, 1e-10),
            Err(Error::NumericalInput(_))
        ));
    }

    #[test]
    fn rows_match_normal_equations() {
        let b = DMatrix::from_fn(9, 5, |i, j| ((i * 7 + j * 3) % 5) as f64 - 1.5 + 0.1 * j as f64);
        let y = DMatrix::from_fn(9, 1, |i, _| (i as f64).cos());
        let a = b.tr_mul(&b);
        let (f, qtb) = PivotedCholesky::from_rows(&b, &y, 1e-10).unwrap();
        let g = PivotedCholesky::factor(&a, 1e-10).unwrap();
        assert_eq!(f.rank(), g.rank());
        assert_eq!(f.retained(), g.retained());
        let x = f.solve_transformed(qtb.as_slice());
        let x_ne = g.solve(&b.tr_mul(&y).column(0).into_owned());
        assert!((x - x_ne).norm() < 1e-9);
    }

    #[test]
    fn whiten_unwhiten_identity() {
        let a = spd(5, 9);
        let f = PivotedCholesky::factor(&a, 1e-12).unwrap();
        // (D P L⁻ᵀ)(L⁻¹ P D) = A⁻¹
        let id = DMatrix::identity(5, 5);
        let w = f.whiten(&id);
        let inv = f.unwhiten(&w);
        let prod = &a * inv;
        for i in 0..5 {
            for j in 0..5 {
                assert_abs_diff_eq!(prod[(i, j)], id[(i, j)], epsilon = 1e-10);
            }
        }
    }
}

//! Stack-allocated linear algebra for phase-space dimensions 2..=4.
//!
//! Orbit cascades run millions of matrix-vector products, so the working
//! type is a fixed-capacity row-major matrix with no heap traffic.
//! Factorizations that deserve a mature implementation (SVD, LU solves of
//! general systems) convert to nalgebra in the cold paths.

use nalgebra::DMatrix;

pub const MAX_DIM: usize = 4;

/// Square matrix of runtime dimension 2..=4; entries beyond `dim` stay zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat {
    pub a: [[f64; MAX_DIM]; MAX_DIM],
    pub dim: usize,
}

impl Mat {
    pub fn zeros(dim: usize) -> Self {
        assert!((2..=MAX_DIM).contains(&dim), "unsupported dimension {dim}");
        Mat { a: [[0.0; MAX_DIM]; MAX_DIM], dim }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Mat::zeros(dim);
        for i in 0..dim {
            m.a[i][i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let dim = rows.len();
        let mut m = Mat::zeros(dim);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), dim);
            m.a[i][..dim].copy_from_slice(r);
        }
        m
    }

    #[inline]
    pub fn matvec(&self, v: &[f64; MAX_DIM]) -> [f64; MAX_DIM] {
        let mut out = [0.0; MAX_DIM];
        for i in 0..self.dim {
            let row = &self.a[i];
            let mut acc = 0.0;
            for j in 0..self.dim {
                acc += row[j] * v[j];
            }
            out[i] = acc;
        }
        out
    }

    pub fn mul(&self, rhs: &Mat) -> Mat {
        debug_assert_eq!(self.dim, rhs.dim);
        let mut out = Mat::zeros(self.dim);
        for i in 0..self.dim {
            for k in 0..self.dim {
                let s = self.a[i][k];
                if s == 0.0 {
                    continue;
                }
                for j in 0..self.dim {
                    out.a[i][j] += s * rhs.a[k][j];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.a[j][i] = self.a[i][j];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        (0..self.dim).all(|i| (0..self.dim).all(|j| self.a[i][j].is_finite()))
    }

    pub fn to_na(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.a[i][j])
    }

    /// Descending singular values.
    pub fn singular_values(&self) -> Vec<f64> {
        let sv = self.to_na().singular_values();
        let mut v: Vec<f64> = sv.iter().copied().collect();
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        v
    }

    /// Solve `self * x = b` by partial-pivot elimination. `None` if singular.
    pub fn solve(&self, b: &[f64; MAX_DIM]) -> Option<[f64; MAX_DIM]> {
        let n = self.dim;
        let mut m = self.a;
        let mut rhs = *b;
        for col in 0..n {
            let mut piv = col;
            for r in col + 1..n {
                if m[r][col].abs() > m[piv][col].abs() {
                    piv = r;
                }
            }
            if m[piv][col].abs() < 1e-300 {
                return None;
            }
            m.swap(col, piv);
            rhs.swap(col, piv);
            let d = m[col][col];
            for r in col + 1..n {
                let f = m[r][col] / d;
                if f == 0.0 {
                    continue;
                }
                for c in col..n {
                    m[r][c] -= f * m[col][c];
                }
                rhs[r] -= f * rhs[col];
            }
        }
        let mut x = [0.0; MAX_DIM];
        for i in (0..n).rev() {
            let mut acc = rhs[i];
            for j in i + 1..n {
                acc -= m[i][j] * x[j];
            }
            x[i] = acc / m[i][i];
        }
        Some(x)
    }

    pub fn det(&self) -> f64 {
        let n = self.dim;
        let mut m = self.a;
        let mut det = 1.0;
        for col in 0..n {
            let mut piv = col;
            for r in col + 1..n {
                if m[r][col].abs() > m[piv][col].abs() {
                    piv = r;
                }
            }
            if m[piv][col] == 0.0 {
                return 0.0;
            }
            if piv != col {
                m.swap(col, piv);
                det = -det;
            }
            det *= m[col][col];
            for r in col + 1..n {
                let f = m[r][col] / m[col][col];
                for c in col..n {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
        det
    }
}

/// Largest singular value.
pub fn operator_norm(m: &Mat) -> f64 {
    *m.singular_values().first().unwrap()
}

/// Smallest singular value, the minimal expansion factor of the map.
pub fn min_conorm(m: &Mat) -> f64 {
    *m.singular_values().last().unwrap()
}

/// Closed-form singular value extremes of a 2x2 matrix, (largest, smallest).
#[inline]
pub fn svd2_extremes(a: f64, b: f64, c: f64, d: f64) -> (f64, f64) {
    let q1 = a * a + b * b + c * c + d * d;
    let h1 = a * a + b * b - c * c - d * d;
    let h2 = 2.0 * (a * c + b * d);
    let q2 = (h1 * h1 + h2 * h2).sqrt();
    let smax = (0.5 * (q1 + q2)).max(0.0).sqrt();
    // |det| / smax is more accurate than sqrt of the small eigenvalue
    let det = (a * d - b * c).abs();
    let smin = if smax > 0.0 { det / smax } else { 0.0 };
    (smax, smin)
}

/// Back-substitution for an upper-triangular system stored in a `Mat`.
/// `None` if a diagonal entry is numerically zero.
#[inline]
pub fn solve_upper(r: &Mat, b: &[f64; MAX_DIM], k: usize) -> Option<[f64; MAX_DIM]> {
    let mut x = [0.0; MAX_DIM];
    for i in (0..k).rev() {
        let mut acc = b[i];
        for j in i + 1..k {
            acc -= r.a[i][j] * x[j];
        }
        if r.a[i][i].abs() < 1e-300 {
            return None;
        }
        x[i] = acc / r.a[i][i];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Power iteration on A^T A, independent of the SVD route.
    fn power_norm(m: &Mat, iters: usize) -> f64 {
        let ata = m.transpose().mul(m);
        let mut v = [0.61, 0.52, 0.33, 0.17];
        for j in m.dim..MAX_DIM {
            v[j] = 0.0;
        }
        let mut lam = 0.0;
        for _ in 0..iters {
            let w = ata.matvec(&v);
            let n = (0..m.dim).map(|i| w[i] * w[i]).sum::<f64>().sqrt();
            lam = n;
            for i in 0..m.dim {
                v[i] = w[i] / n;
            }
        }
        lam.sqrt()
    }

    #[test]
    fn norm_and_conorm_identity() {
        let id = Mat::identity(3);
        assert_relative_eq!(operator_norm(&id), 1.0, max_relative = 1e-14);
        assert_relative_eq!(min_conorm(&id), 1.0, max_relative = 1e-14);
    }

    #[test]
    fn norm_and_conorm_diagonal() {
        let m = Mat::from_rows(&[&[2.0, 0.0, 0.0], &[0.0, 0.5, 0.0], &[0.0, 0.0, 1.0]]);
        assert_relative_eq!(operator_norm(&m), 2.0, max_relative = 1e-14);
        assert_relative_eq!(min_conorm(&m), 0.5, max_relative = 1e-14);
        assert!(min_conorm(&m) <= operator_norm(&m));
    }

    #[test]
    fn companion_norm_cross_checked_by_power_iteration() {
        let m = Mat::from_rows(&[&[0.0, 0.0, 1.0], &[1.0, 0.0, -6.0], &[0.0, 1.0, 5.0]]);
        let svd_norm = operator_norm(&m);
        let pw = power_norm(&m, 400);
        assert!((svd_norm - pw).abs() < 1e-8, "svd {svd_norm} vs power {pw}");

        // conorm via power iteration on the inverse (smallest singular value)
        let inv = {
            let mut cols = [[0.0; MAX_DIM]; MAX_DIM];
            for j in 0..3 {
                let mut e = [0.0; MAX_DIM];
                e[j] = 1.0;
                let x = m.solve(&e).unwrap();
                for i in 0..3 {
                    cols[i][j] = x[i];
                }
            }
            Mat { a: cols, dim: 3 }
        };
        let conorm = min_conorm(&m);
        let pw_inv = 1.0 / power_norm(&inv, 400);
        assert!((conorm - pw_inv).abs() < 1e-8, "svd {conorm} vs power {pw_inv}");
    }

    #[test]
    fn svd2_matches_generic() {
        let m = Mat::from_rows(&[&[1.3, -0.7], &[0.4, 2.1]]);
        let (hi, lo) = svd2_extremes(1.3, -0.7, 0.4, 2.1);
        assert_relative_eq!(hi, operator_norm(&m), max_relative = 1e-12);
        assert_relative_eq!(lo, min_conorm(&m), max_relative = 1e-12);
    }

    #[test]
    fn solve_round_trip() {
        let m = Mat::from_rows(&[&[0.0, 0.0, 1.0], &[1.0, 0.0, -6.0], &[0.0, 1.0, 5.0]]);
        let b = [0.3, -1.2, 0.5, 0.0];
        let x = m.solve(&b).unwrap();
        let back = m.matvec(&x);
        for i in 0..3 {
            assert_relative_eq!(back[i], b[i], epsilon = 1e-12);
        }
        assert_relative_eq!(m.det(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn upper_solve() {
        let mut r = Mat::zeros(3);
        r.a = [[2.0, 1.0, -1.0, 0.0], [0.0, 3.0, 0.5, 0.0], [0.0, 0.0, -1.5, 0.0], [0.0; 4]];
        let b = [1.0, 2.0, 3.0, 0.0];
        let x = solve_upper(&r, &b, 3).unwrap();
        assert_relative_eq!(2.0 * x[0] + x[1] - x[2], 1.0, epsilon = 1e-13);
        assert_relative_eq!(3.0 * x[1] + 0.5 * x[2], 2.0, epsilon = 1e-13);
        assert_relative_eq!(-1.5 * x[2], 3.0, epsilon = 1e-13);
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Real symmetric 2×2 matrix stored as its upper triangle, so symmetry holds exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl SymMatrix2 {
    pub const ZERO: SymMatrix2 = SymMatrix2 {
        xx: 0.0,
        xy: 0.0,
        yy: 0.0,
    };
    pub const IDENTITY: SymMatrix2 = SymMatrix2 {
        xx: 1.0,
        xy: 0.0,
        yy: 1.0,
    };

    pub fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    pub fn diag(x: f64, y: f64) -> Self {
        Self::new(x, 0.0, y)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match (i, j) {
            (0, 0) => self.xx,
            (1, 1) => self.yy,
            (0, 1) | (1, 0) => self.xy,
            _ => panic!("index ({i}, {j}) out of range for a 2x2 matrix"),
        }
    }

    pub fn to_array(&self) -> [[f64; 2]; 2] {
        [[self.xx, self.xy], [self.xy, self.yy]]
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn is_finite(&self) -> bool {
        self.xx.is_finite() && self.xy.is_finite() && self.yy.is_finite()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let mean = 0.5 * (self.xx + self.yy);
        let half_diff = 0.5 * (self.xx - self.yy);
        let radius = half_diff.hypot(self.xy);
        (mean - radius, mean + radius)
    }

    /// Eigenvalues (ascending) with unit eigenvectors in matching order.
    pub fn eigen(&self) -> ([f64; 2], [[f64; 2]; 2]) {
        let (lo, hi) = self.eigenvalues();
        let theta = 0.5 * (2.0 * self.xy).atan2(self.xx - self.yy);
        let (s, c) = theta.sin_cos();
        ([lo, hi], [[-s, c], [c, s]])
    }

    /// Positive semi-definite up to `-1e-12 * trace` on the smallest eigenvalue.
    pub fn is_psd(&self) -> bool {
        if !self.is_finite() {
            return false;
        }
        let (lo, _) = self.eigenvalues();
        lo >= -1e-12 * self.trace().abs()
    }

    /// Closed-form inverse; `None` when the determinant vanishes.
    pub fn inverse(&self) -> Option<SymMatrix2> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        Some(SymMatrix2::new(self.yy / det, -self.xy / det, self.xx / det))
    }

    /// `D M D` for `D = diag(dx, dy)`.
    pub fn scale_sandwich(&self, dx: f64, dy: f64) -> SymMatrix2 {
        SymMatrix2::new(self.xx * dx * dx, self.xy * dx * dy, self.yy * dy * dy)
    }

    /// Plain matrix product; the result is not symmetric in general.
    pub fn mul(&self, other: &SymMatrix2) -> [[f64; 2]; 2] {
        let a = self.to_array();
        let b = other.to_array();
        let mut out = [[0.0; 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        out
    }

    /// Symmetric square root `S` with `S S = M`, for positive semi-definite `M`.
    ///
    /// Eigenvalues inside the PSD slack are treated as zero, so rank-deficient
    /// matrices are accepted.
    pub fn sqrt_psd(&self) -> Result<SymMatrix2> {
        if !self.is_psd() {
            return Err(Error::domain(format!(
                "matrix {:?} is not positive semi-definite",
                self.to_array()
            )));
        }
        let (lo, hi) = self.eigenvalues();
        let (lo, hi) = (lo.max(0.0), hi.max(0.0));
        let (s_lo, s_hi) = (lo.sqrt(), hi.sqrt());
        if s_lo + s_hi == 0.0 {
            return Ok(SymMatrix2::ZERO);
        }
        // For 2x2 matrices sqrt(M) = (M + sqrt(det) I) / (sqrt(l1) + sqrt(l2)).
        let sd = s_lo * s_hi;
        let t = s_lo + s_hi;
        Ok(SymMatrix2::new((self.xx + sd) / t, self.xy / t, (self.yy + sd) / t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn inverse_closed_form() {
        let m = SymMatrix2::new(5.0, 2.0, 1.0);
        let inv = m.inverse().unwrap();
        assert_eq!(inv, SymMatrix2::new(1.0, -2.0, 5.0));
        assert!(SymMatrix2::new(1.0, 1.0, 1.0).inverse().is_none());
    }

    #[test]
    fn square_root_squares_back() {
        for m in [
            SymMatrix2::new(1.0, 0.9, 1.0),
            SymMatrix2::new(4.0, -1.0, 0.5),
            SymMatrix2::new(1.0, 1.0, 1.0),
            SymMatrix2::diag(2.0, 0.0),
        ] {
            let s = m.sqrt_psd().unwrap();
            let sq = s.mul(&s);
            for (i, row) in sq.iter().enumerate() {
                for (j, x) in row.iter().enumerate() {
                    assert_abs_diff_eq!(*x, m.get(i, j), epsilon = 1e-12);
                }
            }
        }
        assert_eq!(SymMatrix2::ZERO.sqrt_psd().unwrap(), SymMatrix2::ZERO);
    }

    #[test]
    fn eigenvectors_diagonalize() {
        for m in [
            SymMatrix2::new(2.0, 0.7, -1.0),
            SymMatrix2::new(1.0, 0.0, 3.0),
            SymMatrix2::new(1.0, -2.0, 1.0),
            SymMatrix2::diag(4.0, 4.0),
        ] {
            let (vals, vecs) = m.eigen();
            let a = m.to_array();
            for (val, v) in vals.iter().zip(vecs) {
                assert!((v[0].hypot(v[1]) - 1.0).abs() < 1e-14);
                for i in 0..2 {
                    let mv = a[i][0] * v[0] + a[i][1] * v[1];
                    assert!((mv - val * v[i]).abs() < 1e-12, "{m:?}");
                }
            }
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        assert!(SymMatrix2::new(1.0, 2.0, 1.0).sqrt_psd().is_err());
        assert!(!SymMatrix2::diag(-1.0, 1.0).is_psd());
    }
}

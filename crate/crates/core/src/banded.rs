//! Symmetric tridiagonal factorization.
//!
//! Both implicit operators in this crate, the Helmholtz map `I - D2` and the
//! diffusion step `I - dt*eps*D2`, are constant-coefficient symmetric
//! tridiagonal matrices with a dominant diagonal. They are factored once and
//! then solved many times with the Thomas recursion.

/// LU factors of a symmetric tridiagonal matrix with constant diagonal `a`
/// and constant off-diagonal `b`.
#[derive(Debug, Clone)]
pub struct SymTridiagonal {
    diag: f64,
    off: f64,
    /// Modified super-diagonal `c'_i` of the forward sweep.
    upper: Vec<f64>,
    /// Pivots `d_i - b*c'_{i-1}`.
    pivots: Vec<f64>,
}

impl SymTridiagonal {
    /// Factors the `n x n` matrix `tridiag(off, diag, off)`.
    ///
    /// The matrix must be strictly diagonally dominant (`|diag| > 2|off|`),
    /// which holds for every operator built in this crate.
    pub fn new(n: usize, diag: f64, off: f64) -> Self {
        assert!(n >= 1, "empty tridiagonal system");
        assert!(
            diag.abs() > 2.0 * off.abs(),
            "tridiagonal system is not diagonally dominant"
        );
        let mut upper = vec![0.0; n];
        let mut pivots = vec![0.0; n];
        pivots[0] = diag;
        upper[0] = off / diag;
        for i in 1..n {
            pivots[i] = diag - off * upper[i - 1];
            upper[i] = off / pivots[i];
        }
        Self {
            diag,
            off,
            upper,
            pivots,
        }
    }

    pub fn len(&self) -> usize {
        self.pivots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pivots.is_empty()
    }

    /// Matrix-vector product.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        assert_eq!(x.len(), n);
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut s = self.diag * x[i];
            if i > 0 {
                s += self.off * x[i - 1];
            }
            if i + 1 < n {
                s += self.off * x[i + 1];
            }
            out[i] = s;
        }
        out
    }

    /// Solves in place.
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = self.len();
        assert_eq!(rhs.len(), n);
        rhs[0] /= self.pivots[0];
        for i in 1..n {
            rhs[i] = (rhs[i] - self.off * rhs[i - 1]) / self.pivots[i];
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= self.upper[i] * rhs[i + 1];
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_against_dense_apply() {
        let m = SymTridiagonal::new(7, 3.0, -1.0);
        let x: Vec<f64> = (0..7).map(|i| (i as f64 * 0.7).sin() + 0.1).collect();
        let b = m.apply(&x);
        let back = m.solve(&b);
        for (a, e) in back.iter().zip(&x) {
            assert!((a - e).abs() < 1e-14);
        }
    }

    #[test]
    fn single_unknown() {
        let m = SymTridiagonal::new(1, 4.0, 1.0);
        assert_eq!(m.solve(&[2.0]), vec![0.5]);
    }
}

//! Dense LU with a 1-norm condition estimate.

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::Mat;

use crate::grid::C64;

/// Partial-pivot LU of a square matrix.
pub struct DenseLu<T: faer::traits::ComplexField> {
    lu: PartialPivLu<T>,
    n: usize,
    norm1: f64,
}

macro_rules! dense_lu_impl {
    ($t:ty, $abs:expr, $sign:expr, $from:expr) => {
        impl DenseLu<$t> {
            pub fn new(a: &Mat<$t>) -> Self {
                let n = a.nrows();
                let abs = $abs;
                let norm1 = (0..n)
                    .map(|j| (0..n).map(|i| abs(a[(i, j)])).sum::<f64>())
                    .fold(0.0, f64::max);
                DenseLu {
                    lu: a.partial_piv_lu(),
                    n,
                    norm1,
                }
            }

            pub fn solve(&self, rhs: &Mat<$t>) -> Mat<$t> {
                self.lu.solve(rhs)
            }

            pub fn solve_transpose(&self, rhs: &Mat<$t>) -> Mat<$t> {
                self.lu.solve_transpose(rhs)
            }

            /// Hager's estimate of ‖A‖₁‖A⁻¹‖₁.
            pub fn condition_estimate(&self) -> f64 {
                let n = self.n;
                let abs = $abs;
                let sign = $sign;
                let from = $from;
                let mut x = Mat::<$t>::from_fn(n, 1, |_, _| from(1.0 / n as f64));
                let mut est = 0.0f64;
                let mut last_j = usize::MAX;
                for _ in 0..5 {
                    let y = self.solve(&x);
                    let ynorm: f64 = (0..n).map(|i| abs(y[(i, 0)])).sum();
                    if !ynorm.is_finite() {
                        return f64::INFINITY;
                    }
                    est = est.max(ynorm);
                    let xi = Mat::<$t>::from_fn(n, 1, |i, _| sign(y[(i, 0)]));
                    let z = self.solve_transpose(&xi);
                    let (mut j, mut zmax) = (0, 0.0f64);
                    for i in 0..n {
                        let a = abs(z[(i, 0)]);
                        if a > zmax {
                            zmax = a;
                            j = i;
                        }
                    }
                    if j == last_j {
                        break;
                    }
                    last_j = j;
                    x = Mat::<$t>::from_fn(n, 1, |i, _| from(if i == j { 1.0 } else { 0.0 }));
                }
                (self.norm1 * est).max(1.0)
            }
        }
    };
}

dense_lu_impl!(
    f64,
    |a: f64| a.abs(),
    |a: f64| if a >= 0.0 { 1.0 } else { -1.0 },
    |a: f64| a
);
dense_lu_impl!(
    C64,
    |a: C64| a.norm(),
    |a: C64| if a.norm() > 0.0 { a / a.norm() } else { C64::new(1.0, 0.0) },
    |a: f64| C64::new(a, 0.0)
);

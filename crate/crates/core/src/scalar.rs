//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! Networks, tensors and image operations are generic over [`Real`], which is
//! implemented for `f32` (the default training precision) and `f64` (used for
//! finite-difference gradient checks).

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by the network kernels.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Short identifier written into reports ("f32" / "f64").
    const NAME: &'static str;

    /// General matrix multiply `C = alpha * A * B + beta * C`.
    ///
    /// `A` is `m x k`, `B` is `k x n` and `C` is `m x n`; every operand is
    /// addressed through explicit row/column strides, so transposed views
    /// cost nothing.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 converts to any Real")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("Real converts to f64")
    }
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: isize, cs: isize) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows - 1) as isize * rs + (cols - 1) as isize * cs;
    assert!(
        rs >= 0 && cs >= 0 && (last as usize) < len,
        "gemm operand out of bounds: {rows}x{cols} strides ({rs},{cs}) over {len} elements"
    );
}

/// Products with a long reduction and a small output go to the `gemm` crate,
/// which handles that shape several times faster than matrixmultiply.
fn prefer_long_k(m: usize, k: usize, n: usize) -> bool {
    k >= 4 * m.max(n)
}

macro_rules! impl_real {
    ($t:ty, $name:literal, $kernel:path) => {
        impl Real for $t {
            const NAME: &'static str = $name;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                check_extent(a.len(), m, k, rsa, csa);
                check_extent(b.len(), k, n, rsb, csb);
                check_extent(c.len(), m, n, rsc, csc);
                if m == 0 || n == 0 {
                    return;
                }
                if prefer_long_k(m, k, n) {
                    // SAFETY: extents checked above; no aliasing between c and a/b.
                    unsafe {
                        gemm::gemm(
                            m,
                            n,
                            k,
                            c.as_mut_ptr(),
                            csc,
                            rsc,
                            beta != 0.0,
                            a.as_ptr(),
                            csa,
                            rsa,
                            b.as_ptr(),
                            csb,
                            rsb,
                            beta,
                            alpha,
                            false,
                            false,
                            false,
                            gemm::Parallelism::None,
                        );
                    }
                    return;
                }
                // SAFETY: the extents of all three operands were checked above.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }
        }
    };
}

impl_real!(f32, "f32", matrixmultiply::sgemm);
impl_real!(f64, "f64", matrixmultiply::dgemm);

#[cfg(test)]
mod tests {
    use super::*;

    fn naive<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T]) -> Vec<T> {
        let mut c = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = T::zero();
                for p in 0..k {
                    acc += a[i * k + p] * b[p * n + j];
                }
                c[i * n + j] = acc;
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive_product_with_transposed_view() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        let expected = naive(m, k, n, &a, &b);
        let mut c = vec![0.0; m * n];
        f64::gemm(m, k, n, 1.0, &a, k as isize, 1, &b, n as isize, 1, 0.0, &mut c, n as isize, 1);
        for (x, y) in c.iter().zip(&expected) {
            assert!((x - y).abs() < 1e-12);
        }
        // B^T stored as n x k, read back through swapped strides.
        let bt: Vec<f64> = (0..n * k).map(|idx| b[(idx % k) * n + idx / k]).collect();
        let mut c2 = vec![0.0; m * n];
        f64::gemm(m, k, n, 1.0, &a, k as isize, 1, &bt, 1, k as isize, 0.0, &mut c2, n as isize, 1);
        assert_eq!(c, c2);
    }

    #[test]
    fn long_reduction_path_accumulates_into_c() {
        let (m, k, n) = (2, 64, 3);
        assert!(prefer_long_k(m, k, n));
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).cos()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).sin()).collect();
        let prod = naive(m, k, n, &a, &b);
        let mut c = vec![1.0; m * n];
        f64::gemm(m, k, n, 2.0, &a, k as isize, 1, &b, n as isize, 1, 0.5, &mut c, n as isize, 1);
        for (x, p) in c.iter().zip(&prod) {
            assert!((x - (0.5 + 2.0 * p)).abs() < 1e-12);
        }
    }

    #[test]
    #[should_panic(expected = "out of bounds")]
    fn gemm_rejects_short_operand() {
        let a = vec![1.0f32; 3];
        let b = vec![1.0f32; 4];
        let mut c = vec![0.0f32; 4];
        f32::gemm(2, 2, 2, 1.0, &a, 2, 1, &b, 2, 1, 0.0, &mut c, 2, 1);
    }
}

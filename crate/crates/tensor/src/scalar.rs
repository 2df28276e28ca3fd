use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

/// Floating-point element type usable on a [`crate::Tape`].
pub trait Scalar:
    Float + FromPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    const DTYPE: &'static str;

    /// `c = alpha * a * b + beta * c` for strided `m x k` by `k x n` operands.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
    );

    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to every scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

macro_rules! impl_scalar {
    ($t:ty, $name:literal, $kernel:path) => {
        impl Scalar for $t {
            const DTYPE: &'static str = $name;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                if k > 0 {
                    let last_a = (m as isize - 1) * a_strides.0 + (k as isize - 1) * a_strides.1;
                    let last_b = (k as isize - 1) * b_strides.0 + (n as isize - 1) * b_strides.1;
                    assert!((last_a as usize) < a.len() && (last_b as usize) < b.len());
                }
                // SAFETY: the bounds of every operand were checked above and the
                // output is a dense row-major m x n block.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, "f32", matrixmultiply::sgemm);
impl_scalar!(f64, "f64", matrixmultiply::dgemm);

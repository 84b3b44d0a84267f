//! Minimal NCHW tensor engine with hand-written backward passes.
//!
//! Layers do not own parameters. They hold indices into a [`WeightSet`], and
//! their backward passes accumulate into a matching [`Gradients`]. A
//! forward call in training mode returns a trace that its backward consumes,
//! so one network can be applied several times within a step (cycle and
//! identity paths) and gradients from every application sum up.

mod adam;
mod layers;
mod params;
mod tensor;

pub use adam::{Adam, AdamState};
pub use layers::{
    leaky_relu, leaky_relu_backward, relu, relu_backward_from_output, BatchNorm2d, BnCache, Conv2d,
    InstanceNorm2d, InCache, NormMode,
};
pub use params::{Gradients, InitRecord, Param, WeightSet};
pub use tensor::Tensor;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type the engine runs on (f32 or f64).
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    /// `c = a · b + beta · c` where `a` is `m × k` and `b` is `k × n`, all
    /// row-major. `a_t` / `b_t` mean the operand is stored transposed.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], a_t: bool, b: &[Self], b_t: bool, beta: Self, c: &mut [Self]);

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn gemm(m: usize, k: usize, n: usize, a: &[Self], a_t: bool, b: &[Self], b_t: bool, beta: Self, c: &mut [Self]) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too small");
                let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
                let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
                // SAFETY: operand extents were checked above and the strides
                // address only elements inside those extents.
                unsafe {
                    $gemm(
                        m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta,
                        c.as_mut_ptr(), n as isize, 1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

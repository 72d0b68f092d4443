//! The real type the model is generic over, and the one dense kernel it needs.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub trait Scalar:
    Float
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Name recorded in checkpoints.
    const PRECISION: &'static str;

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }

    /// `c = alpha * a @ b + beta * c` over strided views.
    ///
    /// # Safety
    /// Every index reachable through the given shapes and strides must be in
    /// bounds of the pointed-to allocations, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    const PRECISION: &'static str = "f32";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    const PRECISION: &'static str = "f64";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// A strided read-only matrix view into a slice.
#[derive(Clone, Copy)]
pub(crate) struct View<'a, S> {
    pub data: &'a [S],
    pub off: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, S> View<'a, S> {
    /// Row-major `rows x cols` matrix starting at `off`.
    pub fn rm(data: &'a [S], off: usize, rows: usize, cols: usize) -> Self {
        Self { data, off, rows, cols, rs: cols, cs: 1 }
    }

    /// Row-major block of `cols` columns starting at column `col0`, inside a
    /// matrix whose rows are `stride` long.
    pub fn block(data: &'a [S], row0: usize, col0: usize, rows: usize, cols: usize, stride: usize) -> Self {
        Self { data, off: row0 * stride + col0, rows, cols, rs: stride, cs: 1 }
    }

    pub fn t(self) -> Self {
        Self { rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs, ..self }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = self.off + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }
}

/// Mutable row-major block view.
pub(crate) struct ViewMut<'a, S> {
    pub data: &'a mut [S],
    pub off: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
}

impl<'a, S> ViewMut<'a, S> {
    pub fn rm(data: &'a mut [S], off: usize, rows: usize, cols: usize) -> Self {
        Self { data, off, rows, cols, rs: cols }
    }

    pub fn block(data: &'a mut [S], row0: usize, col0: usize, rows: usize, cols: usize, stride: usize) -> Self {
        Self { data, off: row0 * stride + col0, rows, cols, rs: stride }
    }
}

/// `c = alpha * a @ b + beta * c` with shape and bounds checks.
pub(crate) fn gemm<S: Scalar>(alpha: S, a: View<'_, S>, b: View<'_, S>, beta: S, c: ViewMut<'_, S>) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    assert_eq!((a.rows, b.cols), (c.rows, c.cols), "output shape differs");
    a.check();
    b.check();
    if c.rows == 0 || c.cols == 0 {
        return;
    }
    let last = c.off + (c.rows - 1) * c.rs + c.cols - 1;
    assert!(last < c.data.len(), "output view out of bounds");
    // SAFETY: all three views were bounds-checked above; `c` is a unique
    // borrow so it cannot alias the shared borrows `a` and `b`.
    unsafe {
        S::gemm_raw(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr().add(a.off),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.off),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr().add(c.off),
            c.rs as isize,
            1,
        )
    }
}

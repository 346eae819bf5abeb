//! Strided GEMM on column-major `DMatrix` storage.

use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Op {
    N,
    T,
}

fn shape(m: &DMatrix<f64>, op: Op) -> (usize, usize) {
    match op {
        Op::N => (m.nrows(), m.ncols()),
        Op::T => (m.ncols(), m.nrows()),
    }
}

fn strides(m: &DMatrix<f64>, op: Op) -> (isize, isize) {
    let (rs, cs) = (1isize, m.nrows() as isize);
    match op {
        Op::N => (rs, cs),
        Op::T => (cs, rs),
    }
}

/// `c = alpha * op(a) * op(b) + beta * c`.
pub(crate) fn gemm(
    alpha: f64,
    a: &DMatrix<f64>,
    op_a: Op,
    b: &DMatrix<f64>,
    op_b: Op,
    beta: f64,
    c: &mut DMatrix<f64>,
) {
    let (m, k) = shape(a, op_a);
    let (kb, n) = shape(b, op_b);
    assert_eq!(k, kb, "inner dimensions differ");
    assert_eq!((c.nrows(), c.ncols()), (m, n), "output shape mismatch");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = strides(a, op_a);
    let (rsb, csb) = strides(b, op_b);
    let (rsc, csc) = (1isize, m as isize);
    // SAFETY: shapes were checked above; strides describe the column-major
    // buffers of `a`, `b` and `c`, which are distinct allocations.
    unsafe {
        matrixmultiply::dgemm(
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

/// `c = alpha * op(a) * op(b) + beta * c` for row-major slices with explicit
/// strides, backed by `matrixmultiply::dgemm`.
///
/// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`; `(rs, cs)` are the row and
/// column strides of each operand, so a transpose is expressed by swapping them.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let span = |rows: usize, cols: usize, rs: usize, cs: usize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs + (cols - 1) * cs + 1
        }
    };
    assert!(a.len() >= span(m, k, rsa, csa), "gemm: lhs too short");
    assert!(b.len() >= span(k, n, rsb, csb), "gemm: rhs too short");
    assert!(c.len() >= span(m, n, rsc, csc), "gemm: output too short");
    // SAFETY: the asserts above bound every index dgemm touches within the
    // three slices; `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

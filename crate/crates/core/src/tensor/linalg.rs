use super::Element;

/// Row-major matrix product `c = op(a) * op(b) + beta * c`.
///
/// `a` is stored as `[m, k]` (or `[k, m]` when `trans_a`), `b` as
/// `[k, n]` (or `[n, k]` when `trans_b`), `c` as `[m, n]`.
#[allow(clippy::too_many_arguments)]
pub fn matmul<T: Element>(
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    c: &mut [T],
    m: usize,
    k: usize,
    n: usize,
    beta: T,
) {
    assert_eq!(a.len(), m * k, "lhs size");
    assert_eq!(b.len(), k * n, "rhs size");
    assert_eq!(c.len(), m * n, "out size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x = beta * *x);
        return;
    }
    let (rsa, csa) = if trans_a {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the asserts above pin every buffer to the exact extent the
    // strides address.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

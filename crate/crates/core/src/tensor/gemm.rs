//! Safe row-major wrappers around `matrixmultiply`.

fn strides(rows: usize, cols: usize, trans: bool) -> (isize, isize) {
    // logical `rows x cols`; stored transposed as `cols x rows` when `trans`
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! gemm_impl {
    ($name:ident, $t:ty, $kernel:path) => {
        #[allow(clippy::too_many_arguments)]
        pub(crate) fn $name(
            m: usize,
            k: usize,
            n: usize,
            alpha: $t,
            a: &[$t],
            a_trans: bool,
            b: &[$t],
            b_trans: bool,
            beta: $t,
            c: &mut [$t],
        ) {
            assert!(a.len() >= m * k, "gemm: lhs too short");
            assert!(b.len() >= k * n, "gemm: rhs too short");
            assert!(c.len() >= m * n, "gemm: output too short");
            if m == 0 || n == 0 {
                return;
            }
            let (rsa, csa) = strides(m, k, a_trans);
            let (rsb, csb) = strides(k, n, b_trans);
            // SAFETY: bounds asserted above; strides describe dense row-major
            // storage of the stated logical shapes.
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
                    n as isize,
                    1,
                );
            }
        }
    };
}

gemm_impl!(sgemm, f32, matrixmultiply::sgemm);
gemm_impl!(dgemm, f64, matrixmultiply::dgemm);

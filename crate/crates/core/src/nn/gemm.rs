//! Thin safe wrapper over `matrixmultiply::dgemm` for row-major slices.

/// Matrix operand: a row-major buffer plus an optional transpose.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    /// Distance between consecutive rows of the *stored* matrix.
    pub stride: usize,
    pub transposed: bool,
}

impl<'a> Mat<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Mat { data, rows, cols, stride: cols, transposed: false }
    }

    /// Logical transpose of a stored `rows x cols` matrix.
    pub fn t(self) -> Self {
        Mat { transposed: !self.transposed, ..self }
    }

    fn logical(&self) -> (usize, usize, isize, isize) {
        if self.transposed {
            (self.cols, self.rows, 1, self.stride as isize)
        } else {
            (self.rows, self.cols, self.stride as isize, 1)
        }
    }
}

/// `c = a * b + beta * c`, where `c` is `m x n` row-major with row stride `ldc`.
pub(crate) fn gemm(a: Mat<'_>, b: Mat<'_>, beta: f64, c: &mut [f64], ldc: usize) {
    let (m, k, rsa, csa) = a.logical();
    let (kb, n, rsb, csb) = b.logical();
    assert_eq!(k, kb, "inner dimensions differ");
    assert!(a.rows == 0 || a.data.len() >= (a.rows - 1) * a.stride + a.cols);
    assert!(b.rows == 0 || b.data.len() >= (b.rows - 1) * b.stride + b.cols);
    assert!(m == 0 || c.len() >= (m - 1) * ldc + n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: bounds on all three operands are asserted above and the output
    // does not alias the inputs (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

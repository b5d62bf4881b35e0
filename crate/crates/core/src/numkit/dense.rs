use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::NumError;

/// Floating-point element type of the kernel.
pub trait Real:
    Copy
    + Default
    + PartialEq
    + PartialOrd
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// Human-readable precision label.
    const PRECISION: &'static str;

    fn from_f64c(v: f64) -> Self;
    fn to_f64c(self) -> f64;

    fn zero() -> Self {
        Self::from_f64c(0.0)
    }
    fn one() -> Self {
        Self::from_f64c(1.0)
    }
    fn neg_infinity() -> Self {
        Self::from_f64c(f64::NEG_INFINITY)
    }

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self {
        if self < Self::zero() {
            -self
        } else {
            self
        }
    }
    fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
    fn is_finite(self) -> bool {
        self.to_f64c().is_finite()
    }

    /// `c = alpha * op(a) * op(b) + beta * c` over raw strided storage.
    /// The default is a plain triple loop; hardware floats override it.
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
    ) {
        let at = |i: usize, j: usize, rs: isize, cs: isize| (i as isize * rs + j as isize * cs) as usize;
        for i in 0..m {
            for j in 0..n {
                let mut acc = Self::zero();
                for p in 0..k {
                    acc = acc + a[at(i, p, rsa, csa)] * b[at(p, j, rsb, csb)];
                }
                let slot = &mut c[at(i, j, rsc, csc)];
                *slot = if beta == Self::zero() { alpha * acc } else { alpha * acc + beta * *slot };
            }
        }
    }
}

macro_rules! impl_real {
    ($t:ty, $name:expr, $gemm:path) => {
        impl Real for $t {
            const PRECISION: &'static str = $name;

            #[inline]
            fn from_f64c(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64c(self) -> f64 {
                self as f64
            }
            #[inline]
            fn zero() -> Self {
                0.0
            }
            #[inline]
            fn one() -> Self {
                1.0
            }
            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline]
            fn ln(self) -> Self {
                <$t>::ln(self)
            }
            #[inline]
            fn tanh(self) -> Self {
                <$t>::tanh(self)
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            #[inline]
            fn max(self, other: Self) -> Self {
                <$t>::max(self, other)
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }

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
                if m == 0 || n == 0 {
                    return;
                }
                // Callers pass slices sized from the same shapes used for the
                // strides, so every access stays inside the buffers.
                unsafe {
                    $gemm(
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

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Dense2D<T: Real = f32> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Debug for Dense2D<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Dense2D<{}>({}x{})", T::PRECISION, self.rows, self.cols)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl<T: Real> Dense2D<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, NumError> {
        if data.len() != rows * cols {
            return Err(NumError::Length { len: data.len(), rows, cols });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, NumError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(NumError::Length { len: r.len(), rows: 1, cols });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { T::one() } else { T::zero() })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn map_inplace(&mut self, mut f: impl FnMut(T) -> T) {
        self.data.iter_mut().for_each(|x| *x = f(*x));
    }

    pub fn cast<U: Real>(&self) -> Dense2D<U> {
        Dense2D {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::from_f64c(v.to_f64c())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// Standard matrix product.
    pub fn matmul(&self, other: &Self) -> Result<Self, NumError> {
        let mut out = Self::zeros(self.rows, other.cols);
        gemm_into(&mut out, self, false, other, false, T::one(), T::zero())?;
        Ok(out)
    }

    /// Adds `bias` (a single row) to every row.
    pub fn add_row(&mut self, bias: &[T]) {
        debug_assert_eq!(bias.len(), self.cols);
        for r in 0..self.rows {
            for (x, b) in self.row_mut(r).iter_mut().zip(bias) {
                *x = *x + *b;
            }
        }
    }

    /// Adds the column sums of `self` into `acc`.
    pub fn sum_rows_into(&self, acc: &mut [T]) {
        debug_assert_eq!(acc.len(), self.cols);
        for r in 0..self.rows {
            for (a, x) in acc.iter_mut().zip(self.row(r)) {
                *a = *a + *x;
            }
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` where `op` optionally transposes.
pub fn gemm_into<T: Real>(
    c: &mut Dense2D<T>,
    a: &Dense2D<T>,
    trans_a: bool,
    b: &Dense2D<T>,
    trans_b: bool,
    alpha: T,
    beta: T,
) -> Result<(), NumError> {
    let (m, k) = if trans_a { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (k2, n) = if trans_b { (b.cols, b.rows) } else { (b.rows, b.cols) };
    if k != k2 {
        return Err(NumError::Shape { op: "matmul", left: (m, k), right: (k2, n) });
    }
    if c.shape() != (m, n) {
        return Err(NumError::Shape { op: "matmul output", left: c.shape(), right: (m, n) });
    }
    let (rsa, csa) = if trans_a { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if trans_b { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    if k == 0 {
        c.map_inplace(|x| x * beta);
        return Ok(());
    }
    T::gemm(m, k, n, alpha, &a.data, rsa, csa, &b.data, rsb, csb, beta, &mut c.data, n as isize, 1);
    Ok(())
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows<T: Real>(logits: &Dense2D<T>) -> Dense2D<T> {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

pub(crate) const PROB_FLOOR: f64 = 1e-12;

/// Mean negative log-likelihood of `targets` under the row distributions.
pub fn cross_entropy<T: Real>(probs: &Dense2D<T>, targets: &[usize]) -> Result<f64, NumError> {
    if targets.len() != probs.rows() {
        return Err(NumError::Shape {
            op: "cross_entropy",
            left: probs.shape(),
            right: (targets.len(), 1),
        });
    }
    if targets.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        if t >= probs.cols() {
            return Err(NumError::Index { row: r, index: t, bound: probs.cols() });
        }
        total -= probs.get(r, t).to_f64c().max(PROB_FLOOR).ln();
    }
    Ok(total / targets.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Dense2D<f64> {
        Dense2D::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity_and_vector() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(a.matmul(&Dense2D::identity(2)).unwrap(), a);
        let b = m(&[&[5.0], &[6.0]]);
        assert_eq!(a.matmul(&b).unwrap(), m(&[&[17.0], &[39.0]]));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Dense2D::<f32>::zeros(2, 3);
        let b = Dense2D::<f32>::zeros(4, 2);
        let err = a.matmul(&b).unwrap_err();
        assert_eq!(err, NumError::Shape { op: "matmul", left: (2, 3), right: (4, 2) });
        assert!(err.to_string().contains("(2, 3)") && err.to_string().contains("(4, 2)"));
    }

    #[test]
    fn transposed_gemm_matches_explicit_transpose() {
        let a = Dense2D::<f64>::from_fn(3, 4, |r, c| (r * 4 + c) as f64 * 0.5 - 2.0);
        let b = Dense2D::<f64>::from_fn(3, 2, |r, c| (r + 2 * c) as f64 - 1.0);
        let mut c = Dense2D::zeros(4, 2);
        gemm_into(&mut c, &a, true, &b, false, 1.0, 0.0).unwrap();
        assert_eq!(c, a.transpose().matmul(&b).unwrap());
        let mut d = Dense2D::zeros(3, 3);
        gemm_into(&mut d, &a, false, &a, true, 1.0, 0.0).unwrap();
        assert_eq!(d, a.matmul(&a.transpose()).unwrap());
    }

    #[test]
    fn softmax_closed_forms() {
        let s = softmax_rows(&m(&[&[0.0, 0.0], &[1f64.ln(), 3f64.ln()]]));
        assert_abs_diff_eq!(s.get(0, 0), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s.get(1, 0), 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(s.get(1, 1), 0.75, epsilon = 1e-12);
    }

    #[test]
    fn softmax_handles_large_logits() {
        let s = softmax_rows(&Dense2D::<f32>::from_vec(1, 3, vec![1000.0, 1000.0, -1000.0]).unwrap());
        assert!(s.is_finite());
        assert_abs_diff_eq!(s.get(0, 0), 0.5, epsilon = 1e-6);
    }

    #[test]
    fn cross_entropy_values() {
        let uniform = m(&[&[0.5, 0.5]]);
        assert_abs_diff_eq!(cross_entropy(&uniform, &[1]).unwrap(), 2f64.ln(), epsilon = 1e-12);
        let sure = m(&[&[0.0, 1.0]]);
        assert_eq!(cross_entropy(&sure, &[1]).unwrap(), 0.0);
        let quarter = m(&[&[0.25, 0.75]]);
        assert_abs_diff_eq!(cross_entropy(&quarter, &[0]).unwrap(), 4f64.ln(), epsilon = 1e-12);
        // floored, not infinite
        assert_abs_diff_eq!(cross_entropy(&sure, &[0]).unwrap(), -(1e-12f64.ln()), epsilon = 1e-9);
    }

    #[test]
    fn cross_entropy_index_error() {
        let p = m(&[&[0.5, 0.5]]);
        assert_eq!(cross_entropy(&p, &[2]), Err(NumError::Index { row: 0, index: 2, bound: 2 }));
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(rows in 1usize..6, cols in 1usize..9,
                                   vals in proptest::collection::vec(-50.0f32..50.0, 54)) {
            let d = Dense2D::from_fn(rows, cols, |r, c| vals[r * cols + c]);
            let s = softmax_rows(&d);
            for r in 0..rows {
                let sum: f64 = s.row(r).iter().map(|v| *v as f64).sum();
                prop_assert!((sum - 1.0).abs() < 1e-6);
                prop_assert!(s.row(r).iter().all(|v| *v >= 0.0));
            }
        }

        #[test]
        fn softmax_shift_invariant(vals in proptest::collection::vec(-20.0f64..20.0, 5), shift in -100.0f64..100.0) {
            let a = Dense2D::from_vec(1, 5, vals.clone()).unwrap();
            let b = Dense2D::from_vec(1, 5, vals.iter().map(|v| v + shift).collect()).unwrap();
            let (sa, sb) = (softmax_rows(&a), softmax_rows(&b));
            for c in 0..5 {
                prop_assert!((sa.get(0, c) - sb.get(0, c)).abs() < 1e-12);
            }
        }

        #[test]
        fn cross_entropy_non_negative(vals in proptest::collection::vec(-10.0f64..10.0, 12), t in 0usize..4) {
            let p = softmax_rows(&Dense2D::from_vec(3, 4, vals).unwrap());
            let ce = cross_entropy(&p, &[t, t, t]).unwrap();
            prop_assert!(ce >= 0.0);
        }
    }
}

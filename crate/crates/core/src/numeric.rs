//! Dense row-major matrices and the small set of numerically careful
//! primitives the rest of the crate is built on.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp applied to vector norms inside cosine similarity.
pub const NORM_EPS: f64 = 1e-12;

/// Row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::contract(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows. An empty slice gives a 0x0 matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::contract(format!(
                    "row {i} has length {}, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
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
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        // chunks_exact panics on a zero chunk size
        let width = self.cols.max(1);
        let n = if self.cols == 0 { 0 } else { self.rows };
        self.data.chunks_exact(width).take(n)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// New matrix holding the listed rows, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(indices.len(), self.cols);
        for (dst, &src) in indices.iter().enumerate() {
            out.row_mut(dst).copy_from_slice(self.row(src));
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    /// `self += other`, shapes must agree.
    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        self.check_same_shape(other)?;
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    fn check_same_shape(&self, other: &Matrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::contract(format!(
                "shape mismatch: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::contract(format!(
                "matmul: {}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let a = Operand::plain(self);
        let b = Operand::plain(other);
        Ok(gemm(self.rows, self.cols, other.cols, a, b))
    }

    /// `self * otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::contract(format!(
                "matmul_t: {}x{} times ({}x{})ᵀ",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let a = Operand::plain(self);
        let b = Operand::transposed(other);
        Ok(gemm(self.rows, self.cols, other.rows, a, b))
    }

    /// `selfᵀ * other`.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::contract(format!(
                "t_matmul: ({}x{})ᵀ times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let a = Operand::transposed(self);
        let b = Operand::plain(other);
        Ok(gemm(self.cols, self.rows, other.cols, a, b))
    }
}

struct Operand<'a> {
    data: &'a [f64],
    row_stride: isize,
    col_stride: isize,
}

impl<'a> Operand<'a> {
    fn plain(m: &'a Matrix) -> Self {
        Operand { data: &m.data, row_stride: m.cols as isize, col_stride: 1 }
    }

    fn transposed(m: &'a Matrix) -> Self {
        Operand { data: &m.data, row_stride: 1, col_stride: m.cols as isize }
    }
}

/// `(m x k) * (k x n)` through the blocked SIMD kernel.
fn gemm(m: usize, k: usize, n: usize, a: Operand<'_>, b: Operand<'_>) -> Matrix {
    let mut out = Matrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    // SAFETY: strides describe in-bounds views of the row-major buffers
    // checked by the callers, and `out` is a fresh m x n buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            0.0,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

/// Standard matrix product.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.matmul(b)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Cosine similarity with both norms clamped below by [`NORM_EPS`].
pub fn row_cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::contract(format!(
            "cosine of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = l2_norm(a).max(NORM_EPS);
    let nb = l2_norm(b).max(NORM_EPS);
    Ok(dot(a, b) / (na * nb))
}

/// Rows scaled to unit length (clamped norm), plus the clamped norms.
pub fn normalize_rows(m: &Matrix) -> (Matrix, Vec<f64>) {
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    for i in 0..m.rows() {
        let n = l2_norm(m.row(i)).max(NORM_EPS);
        out.row_mut(i).iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    (out, norms)
}

/// Maps a gradient with respect to the normalized row `unit = x / max(|x|, eps)`
/// back to a gradient with respect to `x`.
pub fn unnormalize_grad(unit: &[f64], raw_norm: f64, grad_unit: &[f64], out: &mut [f64]) {
    let n = raw_norm.max(NORM_EPS);
    if raw_norm > NORM_EPS {
        let proj = dot(grad_unit, unit);
        for ((o, g), u) in out.iter_mut().zip(grad_unit).zip(unit) {
            *o += (g - proj * u) / n;
        }
    } else {
        for (o, g) in out.iter_mut().zip(grad_unit) {
            *o += g / n;
        }
    }
}

/// Entry `(i, j)` is `row_cosine(a_i, b_j)`.
pub fn pairwise_cosine(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::contract(format!(
            "pairwise cosine of widths {} and {}",
            a.cols(),
            b.cols()
        )));
    }
    let (ua, _) = normalize_rows(a);
    let (ub, _) = normalize_rows(b);
    ua.matmul_t(&ub)
}

/// `log Σ exp(v_i)` with a max shift.
pub fn logsumexp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::contract("logsumexp of an empty vector"));
    }
    Ok(logsumexp_nonempty(values))
}

pub(crate) fn logsumexp_nonempty(values: &[f64]) -> f64 {
    if values.len() == 1 {
        return values[0];
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Seeded, platform-independent random stream (ChaCha8).
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream keyed by `tag`; does not advance `self`.
    pub fn derive(&self, tag: u64) -> RngStream {
        // splitmix64 finalizer over (seed, tag)
        let mut z = self
            .seed
            .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
            .wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngStream::new(z ^ (z >> 31))
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, RngCore};

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn random_matrix(rng: &mut RngStream, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn identity_times_a_is_a() {
        let a = m(&[&[1.0, -2.0], &[3.5, 4.0]]);
        assert_eq!(matmul(&Matrix::identity(2), &a).unwrap(), a);
    }

    #[test]
    fn hand_multiplied_product() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = m(&[&[0.0], &[1.0]]);
        assert_eq!(matmul(&a, &b).unwrap(), m(&[&[2.0], &[4.0]]));
    }

    #[test]
    fn product_with_zero_matrix_is_zero() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matmul(&a, &Matrix::zeros(2, 3)).unwrap(), Matrix::zeros(2, 3));
    }

    #[test]
    fn matmul_dimension_mismatch() {
        let a = Matrix::zeros(2, 3);
        assert!(matches!(matmul(&a, &a), Err(Error::Contract(_))));
    }

    #[test]
    fn transposed_products_agree_with_plain_product() {
        let mut rng = RngStream::new(3);
        let a = random_matrix(&mut rng, 40, 30);
        let b = random_matrix(&mut rng, 30, 70);
        let c = random_matrix(&mut rng, 40, 70);
        let reference = a.matmul(&b).unwrap();
        let via_t = a.matmul_t(&b.transpose()).unwrap();
        for (x, y) in reference.as_slice().iter().zip(via_t.as_slice()) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
        let at_c = a.t_matmul(&c).unwrap();
        let reference = a.transpose().matmul(&c).unwrap();
        for (x, y) in reference.as_slice().iter().zip(at_c.as_slice()) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(row_cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(row_cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_relative_eq!(row_cosine(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 1.0, epsilon = 1e-15);
        assert!(row_cosine(&[1.0], &[1.0, 2.0]).is_err());
        // zero vector stays finite thanks to the clamp
        assert_eq!(row_cosine(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn pairwise_cosine_examples() {
        let a = m(&[&[1.0, 0.0], &[0.0, 1.0], &[0.6, 0.8]]);
        let s = pairwise_cosine(&a, &a).unwrap();
        for i in 0..3 {
            assert_relative_eq!(s.get(i, i), 1.0, epsilon = 1e-15);
        }
        let s = pairwise_cosine(&m(&[&[1.0, 0.0]]), &m(&[&[0.0, 1.0], &[1.0, 0.0]])).unwrap();
        assert_eq!(s, m(&[&[0.0, 1.0]]));
        assert!(pairwise_cosine(&Matrix::zeros(1, 2), &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn pairwise_cosine_matches_row_loop() {
        let mut rng = RngStream::new(11);
        let a = random_matrix(&mut rng, 3, 4);
        let b = random_matrix(&mut rng, 2, 4);
        let s = pairwise_cosine(&a, &b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let na = a.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.row(j).iter().map(|x| x * x).sum::<f64>().sqrt();
                let d: f64 = a.row(i).iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
                assert_relative_eq!(s.get(i, j), d / (na * nb), epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn logsumexp_examples() {
        assert_eq!(logsumexp(&[0.0]).unwrap(), 0.0);
        assert_relative_eq!(logsumexp(&[1.5, 1.5]).unwrap(), 1.5 + 2f64.ln(), epsilon = 1e-15);
        let big = logsumexp(&[1000.0, 1000.0]).unwrap();
        assert!(big.is_finite());
        assert_relative_eq!(big, 1000.0 + 2f64.ln(), epsilon = 1e-12);
        assert!(logsumexp(&[]).is_err());
    }

    #[test]
    fn rng_streams_are_reproducible() {
        let mut a = RngStream::new(42);
        let mut b = RngStream::new(42);
        let xs: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_eq!(xs, ys);
        let mut c = a.derive(1);
        let mut d = a.derive(2);
        assert_ne!(c.next_u64(), d.next_u64());
    }

    proptest! {
        #[test]
        fn cosine_entries_bounded(seed in any::<u64>(), n in 1usize..6, k in 1usize..6, d in 1usize..6) {
            let mut rng = RngStream::new(seed);
            let a = random_matrix(&mut rng, n, d);
            let b = random_matrix(&mut rng, k, d);
            let s = pairwise_cosine(&a, &b).unwrap();
            for v in s.as_slice() {
                prop_assert!(*v >= -1.0 - 1e-9 && *v <= 1.0 + 1e-9);
            }
        }

        #[test]
        fn logsumexp_bounds(values in proptest::collection::vec(-50.0f64..50.0, 1..20)) {
            let lse = logsumexp(&values).unwrap();
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lse >= max - 1e-12);
            prop_assert!(lse <= max + (values.len() as f64).ln() + 1e-12);
        }

        #[test]
        fn matmul_is_associative(seed in any::<u64>()) {
            let mut rng = RngStream::new(seed);
            let a = random_matrix(&mut rng, 5, 5);
            let b = random_matrix(&mut rng, 5, 5);
            let c = random_matrix(&mut rng, 5, 5);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            for (x, y) in left.as_slice().iter().zip(right.as_slice()) {
                let scale = x.abs().max(y.abs()).max(1.0);
                prop_assert!((x - y).abs() <= 1e-9 * scale);
            }
        }
    }
}

//! Dense row-major grids and the small set of kernels the rest of the crate
//! is built on.
//!
//! A [`Grid2D`] stores `rows * cols * channels` doubles, channel-interleaved.
//! Images are `rows x cols x 3`, weight matrices and activation batches are
//! single-channel `rows x cols` matrices.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    rows: usize,
    cols: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Grid2D {
    pub fn zeros(rows: usize, cols: usize, channels: usize) -> Self {
        Grid2D {
            rows,
            cols,
            channels,
            data: vec![0.0; rows * cols * channels],
        }
    }

    pub fn filled(rows: usize, cols: usize, channels: usize, value: f64) -> Self {
        Grid2D {
            rows,
            cols,
            channels,
            data: vec![value; rows * cols * channels],
        }
    }

    /// Builds a grid from channel-interleaved row-major data. Rejects
    /// length mismatches and non-finite values.
    pub fn from_vec(rows: usize, cols: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols * channels {
            return Err(Error::ShapeMismatch {
                op: "Grid2D::from_vec",
                left: (rows, cols, channels),
                right: (data.len(), 1, 1),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Grid2D::from_vec"));
        }
        Ok(Grid2D {
            rows,
            cols,
            channels,
            data,
        })
    }

    /// Single-channel matrix from nested rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::invalid("ragged rows"));
            }
            data.extend_from_slice(r);
        }
        Grid2D::from_vec(rows.len(), cols, 1, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut g = Grid2D::zeros(n, n, 1);
        for i in 0..n {
            g.data[i * n + i] = 1.0;
        }
        g
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.channels)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.cols + col) * self.channels + channel]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: f64) {
        self.data[(row * self.cols + col) * self.channels + channel] = value;
    }

    /// Row `r` of a grid, all columns and channels.
    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.cols * self.channels;
        &self.data[r * w..(r + 1) * w]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let w = self.cols * self.channels;
        &mut self.data[r * w..(r + 1) * w]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid2D {
        Grid2D {
            rows: self.rows,
            cols: self.cols,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Grid2D {
        self.map(|v| v * s)
    }

    /// Swaps rows and columns, keeping each pixel's channels together.
    pub fn transpose(&self) -> Grid2D {
        let mut out = Grid2D::zeros(self.cols, self.rows, self.channels);
        for r in 0..self.rows {
            for c in 0..self.cols {
                for ch in 0..self.channels {
                    out.set(c, r, ch, self.get(r, c, ch));
                }
            }
        }
        out
    }

    /// Extracts one channel as a single-channel grid.
    pub fn channel(&self, ch: usize) -> Grid2D {
        let mut out = Grid2D::zeros(self.rows, self.cols, 1);
        for (o, px) in out
            .data
            .iter_mut()
            .zip(self.data.chunks_exact(self.channels))
        {
            *o = px[ch];
        }
        out
    }

    /// Reinterprets a `rows x cols x channels` grid as a
    /// `(rows*cols) x channels` single-channel matrix.
    pub fn flatten_pixels(&self) -> Grid2D {
        Grid2D {
            rows: self.rows * self.cols,
            cols: self.channels,
            channels: 1,
            data: self.data.clone(),
        }
    }

    /// Inverse of [`Grid2D::flatten_pixels`].
    pub fn unflatten_pixels(&self, rows: usize, cols: usize) -> Result<Grid2D> {
        if self.channels != 1 || self.rows != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "unflatten_pixels",
                left: self.shape(),
                right: (rows, cols, self.cols),
            });
        }
        Ok(Grid2D {
            rows,
            cols,
            channels: self.cols,
            data: self.data.clone(),
        })
    }

    /// Selects rows by index into a new grid.
    pub fn gather_rows(&self, idx: &[usize]) -> Grid2D {
        let w = self.cols * self.channels;
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Grid2D {
            rows: idx.len(),
            cols: self.cols,
            channels: self.channels,
            data,
        }
    }

    pub fn sub(&self, other: &Grid2D) -> Result<Grid2D> {
        self.check_same("sub", other)?;
        Ok(Grid2D {
            rows: self.rows,
            cols: self.cols,
            channels: self.channels,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Grid2D) -> Result<()> {
        self.check_same("add_assign", other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub(crate) fn check_same(&self, op: &'static str, other: &Grid2D) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    fn check_matrix(&self, op: &'static str) -> Result<()> {
        if self.channels != 1 {
            return Err(Error::invalid(alloc::format!(
                "{op}: expected a single-channel matrix, got {} channels",
                self.channels
            )));
        }
        Ok(())
    }
}

/// `a * b` for single-channel matrices.
///
/// Each output element accumulates `a[i][t] * b[t][j]` in ascending `t`.
pub fn matmul(a: &Grid2D, b: &Grid2D) -> Result<Grid2D> {
    a.check_matrix("matmul")?;
    b.check_matrix("matmul")?;
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut c = Grid2D::zeros(a.rows, b.cols, 1);
    gemm_nn(&a.data, &b.data, &mut c.data, a.rows, a.cols, b.cols);
    Ok(c)
}

/// `c += a * b` with `a: m x k`, `b: k x n`, `c: m x n`.
///
/// The `t` loop is outside the `j` loop, so every `c[i][j]` still sums its
/// terms in ascending `t`, and the inner loop is a contiguous axpy.
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (t, &a_it) in a_row.iter().enumerate() {
            if a_it == 0.0 {
                continue;
            }
            let b_row = &b[t * n..(t + 1) * n];
            for (cj, &bj) in c_row.iter_mut().zip(b_row) {
                *cj += a_it * bj;
            }
        }
    }
}

/// `c += a^T * b` with `a: k x m`, `b: k x n`, `c: m x n`; sums over `k`
/// in ascending order.
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], k: usize, m: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for t in 0..k {
        let a_row = &a[t * m..(t + 1) * m];
        let b_row = &b[t * n..(t + 1) * n];
        for (i, &a_ti) in a_row.iter().enumerate() {
            if a_ti == 0.0 {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cj, &bj) in c_row.iter_mut().zip(b_row) {
                *cj += a_ti * bj;
            }
        }
    }
}

/// Plain transpose of an `r x c` row-major buffer.
pub(crate) fn transpose_buf(src: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = src[i * c + j];
        }
    }
    out
}

/// 3x3 template.
pub type Kernel3 = [[f64; 3]; 3];

/// Applies a 3x3 template to every channel with clamp-to-edge padding.
///
/// The template is laid over the image as written: `kernel[1 + dr][1 + dc]`
/// weights the pixel at offset `(dr, dc)`. With this reading the horizontal
/// Sobel template `[-1 0 1; -2 0 2; -1 0 1]` responds with `+8` on a ramp
/// that increases to the right.
pub fn conv3x3(img: &Grid2D, kernel: &Kernel3) -> Result<Grid2D> {
    if img.rows == 0 || img.cols == 0 {
        return Err(Error::invalid("conv3x3: empty image"));
    }
    let (rows, cols, ch) = img.shape();
    let mut out = Grid2D::zeros(rows, cols, ch);
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    for r in 0..rows {
        for c in 0..cols {
            for k in 0..ch {
                let mut acc = 0.0;
                for (kr, krow) in kernel.iter().enumerate() {
                    let rr = clamp(r as isize + kr as isize - 1, rows);
                    for (kc, &w) in krow.iter().enumerate() {
                        let cc = clamp(c as isize + kc as isize - 1, cols);
                        acc += w * img.get(rr, cc, k);
                    }
                }
                out.set(r, c, k, acc);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn random_matrix(rng: &mut Rng, r: usize, c: usize) -> Grid2D {
        Grid2D::from_vec(r, c, 1, rng.uniform_vec(-1.0, 1.0, r * c)).unwrap()
    }

    fn triple_loop(a: &Grid2D, b: &Grid2D) -> Grid2D {
        let mut c = Grid2D::zeros(a.rows(), b.cols(), 1);
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for t in 0..a.cols() {
                    s += a.get(i, t, 0) * b.get(t, j, 0);
                }
                c.set(i, j, 0, s);
            }
        }
        c
    }

    #[test]
    fn matmul_identity() {
        let mut rng = Rng::new(3);
        let x = random_matrix(&mut rng, 3, 3);
        assert_eq!(matmul(&Grid2D::identity(3), &x).unwrap(), x);
    }

    #[test]
    fn matmul_hand_case() {
        let a = Grid2D::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Grid2D::from_rows(&[[5.0], [6.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = Rng::new(11);
        let a = random_matrix(&mut rng, 8, 8);
        let b = random_matrix(&mut rng, 8, 8);
        let fast = matmul(&a, &b).unwrap();
        let slow = triple_loop(&a, &b);
        for (x, y) in fast.data().iter().zip(slow.data()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn matmul_dimension_error_names_shapes() {
        let a = Grid2D::zeros(2, 3, 1);
        let b = Grid2D::zeros(2, 3, 1);
        match matmul(&a, &b) {
            Err(Error::ShapeMismatch { left, right, .. }) => {
                assert_eq!(left, (2, 3, 1));
                assert_eq!(right, (2, 3, 1));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn matmul_associative() {
        let mut rng = Rng::new(5);
        let a = random_matrix(&mut rng, 4, 5);
        let b = random_matrix(&mut rng, 5, 3);
        let c = random_matrix(&mut rng, 3, 6);
        let l = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let r = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        for (x, y) in l.data().iter().zip(r.data()) {
            assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }

    #[test]
    fn gemm_tn_matches_transpose_then_matmul() {
        let mut rng = Rng::new(8);
        let a = random_matrix(&mut rng, 6, 4);
        let b = random_matrix(&mut rng, 6, 5);
        let mut c = vec![0.0; 20];
        gemm_tn(a.data(), b.data(), &mut c, 6, 4, 5);
        let want = triple_loop(&a.transpose(), &b);
        for (x, y) in c.iter().zip(want.data()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    const SOBEL_U: Kernel3 = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];

    fn conv_oracle(img: &Grid2D, k: &Kernel3) -> Grid2D {
        let (rows, cols, ch) = img.shape();
        let mut out = Grid2D::zeros(rows, cols, ch);
        for r in 0..rows as isize {
            for c in 0..cols as isize {
                for chn in 0..ch {
                    let mut s = 0.0;
                    for dr in -1..=1isize {
                        for dc in -1..=1isize {
                            let rr = (r + dr).max(0).min(rows as isize - 1) as usize;
                            let cc = (c + dc).max(0).min(cols as isize - 1) as usize;
                            s += k[(dr + 1) as usize][(dc + 1) as usize] * img.get(rr, cc, chn);
                        }
                    }
                    out.set(r as usize, c as usize, chn, s);
                }
            }
        }
        out
    }

    #[test]
    fn conv_zero_sum_kernel_on_constant() {
        let img = Grid2D::filled(5, 6, 2, 0.7);
        let out = conv3x3(&img, &SOBEL_U).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_sobel_on_ramp_is_eight() {
        let mut img = Grid2D::zeros(6, 7, 1);
        for r in 0..6 {
            for c in 0..7 {
                img.set(r, c, 0, c as f64);
            }
        }
        let out = conv3x3(&img, &SOBEL_U).unwrap();
        for r in 1..5 {
            for c in 1..6 {
                assert_eq!(out.get(r, c, 0), 8.0);
            }
        }
    }

    #[test]
    fn conv_matches_loop_oracle() {
        let mut rng = Rng::new(21);
        let img = Grid2D::from_vec(5, 5, 1, rng.uniform_vec(0.0, 1.0, 25)).unwrap();
        let k: Kernel3 = {
            let v = rng.uniform_vec(-1.0, 1.0, 9);
            [[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]]
        };
        let out = conv3x3(&img, &k).unwrap();
        let want = conv_oracle(&img, &k);
        for (x, y) in out.data().iter().zip(want.data()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn conv_zero_kernel_gives_zero() {
        let mut rng = Rng::new(1);
        let img = Grid2D::from_vec(4, 3, 3, rng.uniform_vec(0.0, 1.0, 36)).unwrap();
        let out = conv3x3(&img, &[[0.0; 3]; 3]).unwrap();
        assert_eq!(out, Grid2D::zeros(4, 3, 3));
    }

    proptest! {
        #[test]
        fn conv_is_linear(seed in 0u64..1000, alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
            let mut rng = Rng::new(seed);
            let a = Grid2D::from_vec(4, 5, 2, rng.uniform_vec(-1.0, 1.0, 40)).unwrap();
            let b = Grid2D::from_vec(4, 5, 2, rng.uniform_vec(-1.0, 1.0, 40)).unwrap();
            let mut mix = a.scale(alpha);
            mix.add_assign(&b.scale(beta)).unwrap();
            let lhs = conv3x3(&mix, &SOBEL_U).unwrap();
            let mut rhs = conv3x3(&a, &SOBEL_U).unwrap().scale(alpha);
            rhs.add_assign(&conv3x3(&b, &SOBEL_U).unwrap().scale(beta)).unwrap();
            for (x, y) in lhs.data().iter().zip(rhs.data()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}

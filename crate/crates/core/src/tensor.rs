//! Dense row-major tensors and the elementary numerics every other module
//! builds on: matrix products, temperature softmax, and seeded RNG.
//!
//! Working precision is f32. Reductions spanning at least
//! [`F64_ACCUMULATION_THRESHOLD`] terms accumulate in f64 so that
//! sum-to-one invariants stay testable at 1e-6; softmax sums always
//! accumulate in f64.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};

/// Reductions over this many terms or more switch to f64 accumulators.
pub const F64_ACCUMULATION_THRESHOLD: usize = 4096;

/// Seed for all deterministic random streams in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seed(pub u64);

/// Reproducible random stream: the same seed yields the same sequence on
/// every platform.
pub fn seeded_rng(seed: Seed) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.0)
}

/// Dense row-major f32 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CoreError::Shape(format!(
                "buffer length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[&[f32]]) -> Result<Self> {
        let cols = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(CoreError::Shape("ragged row lengths".into()));
            }
            data.extend_from_slice(r);
        }
        Matrix::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows gathered by index, in order (indices may repeat).
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(CoreError::Parameter(format!(
                    "row index {} out of range for {} rows",
                    i, self.rows
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Matrix::new(indices.len(), self.cols, data)
    }
}

/// Exact matrix product `a * b` with deterministic accumulation order.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(CoreError::Shape(format!(
            "matmul: {}x{} * {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    let n = b.cols;
    if a.cols >= F64_ACCUMULATION_THRESHOLD {
        let mut acc = vec![0f64; n];
        for i in 0..a.rows {
            acc.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..a.cols {
                let aik = a.get(i, k) as f64;
                let brow = b.row(k);
                for j in 0..n {
                    acc[j] += aik * brow[j] as f64;
                }
            }
            let orow = out.row_mut(i);
            for j in 0..n {
                orow[j] = acc[j] as f32;
            }
        }
    } else {
        for i in 0..a.rows {
            // ikj order: accumulate into the output row, vectorizes over j.
            let arow_start = i * a.cols;
            for k in 0..a.cols {
                let aik = a.data[arow_start + k];
                let brow = b.row(k);
                let orow = &mut out.data[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += aik * brow[j];
                }
            }
        }
    }
    Ok(out)
}

/// `a * b^T` without materializing the transpose. Both operands are row
/// major, so each output entry is a contiguous dot product.
pub fn matmul_transpose_b(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(CoreError::Shape(format!(
            "matmul_transpose_b: {}x{} * ({}x{})^T",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    let use_f64 = a.cols >= F64_ACCUMULATION_THRESHOLD;
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = &mut out.data[i * b.rows..(i + 1) * b.rows];
        for j in 0..b.rows {
            let brow = b.row(j);
            orow[j] = if use_f64 {
                arow
                    .iter()
                    .zip(brow)
                    .fold(0f64, |s, (&x, &y)| s + x as f64 * y as f64)
                    as f32
            } else {
                arow.iter().zip(brow).map(|(&x, &y)| x * y).sum::<f32>()
            };
        }
    }
    Ok(out)
}

/// Which slices of the matrix are normalized by [`softmax_dim`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SoftmaxAxis {
    /// Each row sums to 1 (normalization runs along the columns).
    EachRow,
    /// Each column sums to 1 (normalization runs along the rows).
    EachCol,
}

/// Temperature softmax along the selected axis, stabilized by per-slice
/// max subtraction. Exponentials and their sums are computed in f64.
pub fn softmax_dim(x: &Matrix, axis: SoftmaxAxis, temperature: f32) -> Result<Matrix> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(CoreError::Parameter(format!(
            "softmax temperature must be positive and finite, got {temperature}"
        )));
    }
    if x.data.iter().any(|v| v.is_nan()) {
        return Err(CoreError::Input("softmax input contains NaN".into()));
    }
    let tau = temperature as f64;
    let mut out = Matrix::zeros(x.rows, x.cols);
    match axis {
        SoftmaxAxis::EachRow => {
            for i in 0..x.rows {
                let row = x.row(i);
                let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
                let mut sum = 0f64;
                let mut exps = vec![0f64; x.cols];
                for (e, &v) in exps.iter_mut().zip(row) {
                    *e = ((v as f64 - max) / tau).exp();
                    sum += *e;
                }
                let orow = out.row_mut(i);
                for (o, e) in orow.iter_mut().zip(&exps) {
                    *o = (e / sum) as f32;
                }
            }
        }
        SoftmaxAxis::EachCol => {
            for j in 0..x.cols {
                let mut max = f32::NEG_INFINITY;
                for i in 0..x.rows {
                    max = max.max(x.get(i, j));
                }
                let max = max as f64;
                let mut sum = 0f64;
                let mut exps = vec![0f64; x.rows];
                for (i, e) in exps.iter_mut().enumerate() {
                    *e = ((x.get(i, j) as f64 - max) / tau).exp();
                    sum += *e;
                }
                for (i, e) in exps.iter().enumerate() {
                    out.set(i, j, (e / sum) as f32);
                }
            }
        }
    }
    Ok(out)
}

/// Dense video feature tensor `X` of shape N x H x W x C, stored row major
/// with the frame index slowest. The flattened M x C view (M = N*H*W) is
/// the canonical EM input and shares the same buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    flat: Matrix,
}

impl FeatureMap {
    pub fn new(n: usize, h: usize, w: usize, c: usize, data: Vec<f32>) -> Result<Self> {
        if n == 0 || h == 0 || w == 0 || c == 0 {
            return Err(CoreError::Parameter(
                "feature map dimensions must all be >= 1".into(),
            ));
        }
        if data.len() != n * h * w * c {
            return Err(CoreError::Shape(format!(
                "buffer length {} does not match {}x{}x{}x{}",
                data.len(),
                n,
                h,
                w,
                c
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Input("feature map contains NaN or Inf".into()));
        }
        let flat = Matrix::new(n * h * w, c, data)?;
        Ok(Self { n, h, w, c, flat })
    }

    /// Wraps an M x C matrix as a single-row-per-pixel video (H = W = 1).
    pub fn from_matrix(m: Matrix) -> Result<Self> {
        let (rows, cols) = (m.rows(), m.cols());
        Self::new(rows, 1, 1, cols, m.into_data())
    }

    pub fn frames(&self) -> usize {
        self.n
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    /// M = N*H*W.
    pub fn pixels(&self) -> usize {
        self.n * self.h * self.w
    }

    /// The flattened M x C view.
    pub fn flattened(&self) -> &Matrix {
        &self.flat
    }

    pub fn into_flattened(self) -> Matrix {
        self.flat
    }

    pub fn data(&self) -> &[f32] {
        self.flat.data()
    }

    /// Copy of frame `frame` (0-based) as an HW x C matrix.
    pub fn frame_matrix(&self, frame: usize) -> Result<Matrix> {
        if frame >= self.n {
            return Err(CoreError::Parameter(format!(
                "frame {} out of range for {} frames",
                frame, self.n
            )));
        }
        let hw = self.h * self.w;
        let start = frame * hw * self.c;
        Matrix::new(hw, self.c, self.flat.data()[start..start + hw * self.c].to_vec())
    }

    /// Rebuilds a feature map of the same spatial extent from a flattened
    /// M x C' matrix (channel count may differ).
    pub fn with_flattened(&self, flat: Matrix) -> Result<FeatureMap> {
        if flat.rows() != self.pixels() {
            return Err(CoreError::Shape(format!(
                "flattened rows {} do not match pixel count {}",
                flat.rows(),
                self.pixels()
            )));
        }
        let c = flat.cols();
        FeatureMap::new(self.n, self.h, self.w, c, flat.into_data())
    }
}

/// The K x C low-rank bases estimated by EM.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    pub data: Matrix,
}

impl BasisSet {
    pub fn new(data: Matrix) -> Result<Self> {
        if data.rows() == 0 {
            return Err(CoreError::Parameter("basis set needs at least one basis".into()));
        }
        if !data.is_finite() {
            return Err(CoreError::Input("basis set contains NaN or Inf".into()));
        }
        Ok(Self { data })
    }

    pub fn num_bases(&self) -> usize {
        self.data.rows()
    }

    pub fn channels(&self) -> usize {
        self.data.cols()
    }
}

/// The K x M soft-assignment matrix: column m is the posterior over bases
/// for pixel m.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibility {
    pub data: Matrix,
}

impl Responsibility {
    pub fn new(data: Matrix) -> Result<Self> {
        Ok(Self { data })
    }

    pub fn num_bases(&self) -> usize {
        self.data.rows()
    }

    pub fn num_pixels(&self) -> usize {
        self.data.cols()
    }

    /// Checks entries in [0,1] and columns summing to 1 within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        for v in self.data.data() {
            if !(0.0..=1.0).contains(v) {
                return Err(CoreError::Input(format!(
                    "responsibility entry {v} outside [0,1]"
                )));
            }
        }
        for j in 0..self.data.cols() {
            let mut s = 0f64;
            for i in 0..self.data.rows() {
                s += self.data.get(i, j) as f64;
            }
            if (s - 1.0).abs() > tol {
                return Err(CoreError::Input(format!(
                    "responsibility column {j} sums to {s}"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0f64;
                for k in 0..a.cols() {
                    s += a.get(i, k) as f64 * b.get(k, j) as f64;
                }
                out.set(i, j, s as f32);
            }
        }
        out
    }

    #[test]
    fn matmul_identity() {
        let i = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        let b = Matrix::from_rows(&[&[2.0, 3.0], &[4.0, 5.0]]).unwrap();
        assert_eq!(matmul(&i, &b).unwrap(), b);
    }

    #[test]
    fn matmul_row_by_column() {
        let a = Matrix::from_rows(&[&[1.0, 2.0]]).unwrap();
        let b = Matrix::new(2, 1, vec![3.0, 4.0]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = seeded_rng(Seed(7));
        let a = Matrix::new(7, 5, (0..35).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let b = Matrix::new(5, 3, (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let got = matmul(&a, &b).unwrap();
        let want = naive_matmul(&a, &b);
        for (g, w) in got.data().iter().zip(want.data()) {
            assert!((g - w).abs() < 1e-6, "{g} vs {w}");
        }
    }

    #[test]
    fn matmul_shape_mismatch_errors() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(4, 2);
        assert!(matches!(matmul(&a, &b), Err(CoreError::Shape(_))));
    }

    #[test]
    fn softmax_uniform_logits() {
        let x = Matrix::zeros(2, 2);
        let s = softmax_dim(&x, SoftmaxAxis::EachCol, 1.0).unwrap();
        for v in s.data() {
            assert!((v - 0.5).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_saturated_column() {
        let x = Matrix::new(2, 1, vec![20.0, 0.0]).unwrap();
        let s = softmax_dim(&x, SoftmaxAxis::EachCol, 1.0).unwrap();
        let expect_hi = (20f64).exp() / ((20f64).exp() + 1.0);
        // the large branch rounds to 1.0 in f32; the small one keeps full
        // relative precision
        assert!((s.get(0, 0) as f64 - expect_hi).abs() < 1e-7);
        assert!((s.get(1, 0) as f64 - (1.0 - expect_hi)).abs() < 1e-12);
    }

    #[test]
    fn softmax_temperature_equals_prescaled_logits() {
        let mut rng = seeded_rng(Seed(3));
        let x = Matrix::new(4, 6, (0..24).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let tau = 0.37f32;
        let a = softmax_dim(&x, SoftmaxAxis::EachRow, tau).unwrap();
        let scaled =
            Matrix::new(4, 6, x.data().iter().map(|v| v / tau).collect()).unwrap();
        let b = softmax_dim(&scaled, SoftmaxAxis::EachRow, 1.0).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_rejects_bad_inputs() {
        let x = Matrix::zeros(2, 2);
        assert!(matches!(
            softmax_dim(&x, SoftmaxAxis::EachRow, 0.0),
            Err(CoreError::Parameter(_))
        ));
        let bad = Matrix::new(1, 2, vec![f32::NAN, 0.0]).unwrap();
        assert!(matches!(
            softmax_dim(&bad, SoftmaxAxis::EachRow, 1.0),
            Err(CoreError::Input(_))
        ));
    }

    #[test]
    fn seeded_rng_is_reproducible() {
        let mut a = seeded_rng(Seed(0));
        let mut b = seeded_rng(Seed(0));
        let da: Vec<f64> = (0..100).map(|_| a.gen::<f64>()).collect();
        let db: Vec<f64> = (0..100).map(|_| b.gen::<f64>()).collect();
        assert_eq!(da, db);
        let mut c = seeded_rng(Seed(1));
        let dc: Vec<f64> = (0..100).map(|_| c.gen::<f64>()).collect();
        assert_ne!(da, dc);
    }

    #[test]
    fn seeded_rng_uniform_mean() {
        let mut rng = seeded_rng(Seed(42));
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| rng.gen::<f64>()).sum::<f64>() / n as f64;
        assert!((0.49..=0.51).contains(&mean), "mean {mean}");
    }

    #[test]
    fn feature_map_flatten_round_trip() {
        let mut rng = seeded_rng(Seed(9));
        let data: Vec<f32> = (0..2 * 3 * 4 * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fm = FeatureMap::new(2, 3, 4, 5, data.clone()).unwrap();
        assert_eq!(fm.pixels(), 24);
        assert_eq!(fm.flattened().data(), &data[..]);
        let rebuilt =
            FeatureMap::new(2, 3, 4, 5, fm.flattened().data().to_vec()).unwrap();
        assert_eq!(rebuilt, fm);
    }

    #[test]
    fn feature_map_rejects_nan_and_bad_shape() {
        assert!(FeatureMap::new(1, 1, 1, 2, vec![f32::NAN, 0.0]).is_err());
        assert!(FeatureMap::new(1, 2, 2, 1, vec![0.0; 3]).is_err());
        assert!(FeatureMap::new(0, 1, 1, 1, vec![]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_slices_sum_to_one(
            rows in 1usize..6,
            cols in 1usize..6,
            seed in 0u64..1000,
            tau in 0.05f32..10.0,
        ) {
            // keep |logit / tau| small enough that no exponential
            // underflows to zero in the f32 output
            let mut rng = seeded_rng(Seed(seed));
            let x = Matrix::new(
                rows,
                cols,
                (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            ).unwrap();
            let s = softmax_dim(&x, SoftmaxAxis::EachRow, tau).unwrap();
            for i in 0..rows {
                let sum: f64 = s.row(i).iter().map(|&v| v as f64).sum();
                prop_assert!((sum - 1.0).abs() < 1e-6);
                prop_assert!(s.row(i).iter().all(|&v| v > 0.0));
            }
        }

        #[test]
        fn matmul_agrees_with_oracle(
            m in 1usize..6,
            k in 1usize..6,
            n in 1usize..6,
            seed in 0u64..100,
        ) {
            let mut rng = seeded_rng(Seed(seed));
            let a = Matrix::new(m, k, (0..m * k).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap();
            let b = Matrix::new(k, n, (0..k * n).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap();
            let got = matmul(&a, &b).unwrap();
            let want = naive_matmul(&a, &b);
            for (g, w) in got.data().iter().zip(want.data()) {
                prop_assert!((g - w).abs() < 1e-6);
            }
        }
    }
}

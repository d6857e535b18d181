//! Dense row-major matrices and the norm/penalty primitives shared by the
//! rest of the crate.
//!
//! Every prunable layer is represented by its GEMM-view weight matrix: rows
//! are filters (output units), columns are filter-shape positions (input
//! units). Row and column Euclidean norms of these matrices are the groups the
//! structured penalty acts on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense `rows x cols` matrix of `f64`, stored row-major.
///
/// Empty matrices (zero rows or zero columns) are legal; reductions over them
/// return empty vectors or zero.
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

    /// Builds a matrix from row-major data. Fails if the length does not
    /// match or any entry is NaN/infinite.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                format!("{} entries for {rows}x{cols}", rows * cols),
                format!("{} entries", data.len()),
            ));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "matrix entries must be finite, found {bad}"
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from a slice of equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(
                    format!("row of length {cols}"),
                    format!("row {i} of length {}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Matrix::from_vec(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for p in 0..rows {
            for q in 0..cols {
                data.push(f(p, q));
            }
        }
        Matrix { rows, cols, data }
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

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, p: usize, q: usize) -> f64 {
        debug_assert!(p < self.rows && q < self.cols);
        self.data[p * self.cols + q]
    }

    #[inline]
    pub fn set(&mut self, p: usize, q: usize, v: f64) {
        debug_assert!(p < self.rows && q < self.cols);
        self.data[p * self.cols + q] = v;
    }

    #[inline]
    pub fn row(&self, p: usize) -> &[f64] {
        &self.data[p * self.cols..(p + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, p: usize) -> &mut [f64] {
        &mut self.data[p * self.cols..(p + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |p, q| self.get(q, p))
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape(
                format!("{} rows on the right operand", self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for p in 0..self.rows {
            let out_row = &mut out.data[p * other.cols..(p + 1) * other.cols];
            for (k, &a) in self.row(p).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn ensure_same_shape(&self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        Ok(())
    }

    /// Elementwise combination of two equally shaped matrices.
    pub fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        self.ensure_same_shape(other)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&a| f(a)).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|a| a * s)
    }

    /// `self += alpha * x`.
    pub fn axpy(&mut self, alpha: f64, x: &Matrix) -> Result<()> {
        self.ensure_same_shape(x)?;
        for (a, &b) in self.data.iter_mut().zip(&x.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Elementwise (vectorised) inner product.
    pub fn dot(&self, other: &Matrix) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Euclidean norm of every row.
pub fn row_l2_norms(m: &Matrix) -> Vec<f64> {
    (0..m.rows())
        .map(|p| m.row(p).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

/// Euclidean norm of every column.
pub fn col_l2_norms(m: &Matrix) -> Vec<f64> {
    let mut sq = vec![0.0; m.cols()];
    for p in 0..m.rows() {
        for (acc, v) in sq.iter_mut().zip(m.row(p)) {
            *acc += v * v;
        }
    }
    sq.into_iter().map(f64::sqrt).collect()
}

/// Frobenius norm of `a - b`.
pub fn frobenius_distance(a: &Matrix, b: &Matrix) -> Result<f64> {
    a.ensure_same_shape(b)?;
    Ok(a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// The ordered set of prunable weight matrices of a model, keyed by layer id.
///
/// Layer order and shapes are fixed once constructed; pruning zeroes entries
/// but never reshapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightCollection {
    layers: Vec<(String, Matrix)>,
}

impl WeightCollection {
    pub fn new(layers: Vec<(String, Matrix)>) -> Result<Self> {
        for (i, (id, _)) in layers.iter().enumerate() {
            if layers[..i].iter().any(|(other, _)| other == id) {
                return Err(Error::InvalidArgument(format!("duplicate layer id `{id}`")));
            }
        }
        Ok(WeightCollection { layers })
    }

    /// A collection with the same ids and shapes, filled with zeros.
    pub fn zeros_like(&self) -> Self {
        self.map(|_, m| Matrix::zeros(m.rows(), m.cols()))
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.layers.iter().map(|(id, _)| id.as_str())
    }

    pub fn id(&self, i: usize) -> &str {
        &self.layers[i].0
    }

    pub fn matrix(&self, i: usize) -> &Matrix {
        &self.layers[i].1
    }

    pub fn matrix_mut(&mut self, i: usize) -> &mut Matrix {
        &mut self.layers[i].1
    }

    pub fn by_id(&self, id: &str) -> Option<&Matrix> {
        self.layers.iter().find(|(l, _)| l == id).map(|(_, m)| m)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.layers.iter().map(|(id, m)| (id.as_str(), m))
    }

    pub fn matrices(&self) -> impl Iterator<Item = &Matrix> {
        self.layers.iter().map(|(_, m)| m)
    }

    pub fn matrices_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.layers.iter_mut().map(|(_, m)| m)
    }

    /// Applies `f` layerwise, keeping ids.
    pub fn map(&self, mut f: impl FnMut(&str, &Matrix) -> Matrix) -> Self {
        WeightCollection {
            layers: self
                .layers
                .iter()
                .map(|(id, m)| (id.clone(), f(id, m)))
                .collect(),
        }
    }

    /// Layerwise combination of two collections with identical structure.
    pub fn zip_map(
        &self,
        other: &WeightCollection,
        f: impl Fn(&Matrix, &Matrix) -> Result<Matrix>,
    ) -> Result<Self> {
        self.ensure_same_structure(other)?;
        let layers = self
            .layers
            .iter()
            .zip(&other.layers)
            .map(|((id, a), (_, b))| Ok((id.clone(), f(a, b)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(WeightCollection { layers })
    }

    pub fn sub(&self, other: &WeightCollection) -> Result<Self> {
        self.zip_map(other, Matrix::sub)
    }

    pub fn add(&self, other: &WeightCollection) -> Result<Self> {
        self.zip_map(other, Matrix::add)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|_, m| m.scale(s))
    }

    /// `self += alpha * x`, layerwise.
    pub fn axpy(&mut self, alpha: f64, x: &WeightCollection) -> Result<()> {
        self.ensure_same_structure(x)?;
        for ((_, a), (_, b)) in self.layers.iter_mut().zip(&x.layers) {
            a.axpy(alpha, b)?;
        }
        Ok(())
    }

    /// Frobenius norm of the whole collection viewed as one vector.
    pub fn frobenius_norm(&self) -> f64 {
        self.matrices()
            .map(|m| m.as_slice().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn frobenius_distance(&self, other: &WeightCollection) -> Result<f64> {
        self.ensure_same_structure(other)?;
        let mut sq = 0.0;
        for (a, b) in self.matrices().zip(other.matrices()) {
            let d = frobenius_distance(a, b)?;
            sq += d * d;
        }
        Ok(sq.sqrt())
    }

    pub fn transpose(&self) -> Self {
        self.map(|_, m| m.transpose())
    }

    pub fn param_count(&self) -> usize {
        self.matrices().map(Matrix::len).sum()
    }

    pub fn ensure_same_structure(&self, other: &WeightCollection) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::shape(
                format!("{} layers", self.layers.len()),
                format!("{} layers", other.layers.len()),
            ));
        }
        for ((ia, a), (ib, b)) in self.layers.iter().zip(&other.layers) {
            if ia != ib {
                return Err(Error::shape(format!("layer `{ia}`"), format!("layer `{ib}`")));
            }
            a.ensure_same_shape(b)?;
        }
        Ok(())
    }
}

/// Unscaled structured penalty: the sum over layers of all row norms plus all
/// column norms. Callers multiply by the regularisation weight.
pub fn group_penalty(w: &WeightCollection) -> f64 {
    w.matrices()
        .map(|m| row_l2_norms(m).iter().sum::<f64>() + col_l2_norms(m).iter().sum::<f64>())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hypot_norm(v: &[f64]) -> f64 {
        v.iter().fold(0.0_f64, |acc, x| acc.hypot(*x))
    }

    #[test]
    fn row_norms_hand_values() {
        let m = Matrix::from_rows(&[[3.0, 4.0], [0.0, 0.0]]).unwrap();
        assert_eq!(row_l2_norms(&m), vec![5.0, 0.0]);
        assert_eq!(row_l2_norms(&Matrix::zeros(3, 4)), vec![0.0; 3]);
        assert_eq!(row_l2_norms(&Matrix::identity(3)), vec![1.0; 3]);
    }

    #[test]
    fn col_norms_hand_values() {
        let m = Matrix::from_rows(&[[3.0, 0.0], [4.0, 0.0]]).unwrap();
        assert_eq!(col_l2_norms(&m), vec![5.0, 0.0]);
        assert_eq!(col_l2_norms(&Matrix::zeros(2, 5)), vec![0.0; 5]);
    }

    #[test]
    fn empty_matrices_reduce_to_nothing() {
        let m = Matrix::zeros(0, 4);
        assert!(row_l2_norms(&m).is_empty());
        assert_eq!(col_l2_norms(&m), vec![0.0; 4]);
        let w = WeightCollection::new(vec![("e".into(), Matrix::zeros(3, 0))]).unwrap();
        assert_eq!(group_penalty(&w), 0.0);
    }

    #[test]
    fn penalty_hand_value() {
        // rows [5, 0], cols [3, 4]
        let m = Matrix::from_rows(&[[3.0, 4.0], [0.0, 0.0]]).unwrap();
        let expected = hypot_norm(&[3.0, 4.0]) + hypot_norm(&[0.0, 0.0]) + 3.0 + 4.0;
        let w = WeightCollection::new(vec![("l".into(), m)]).unwrap();
        assert_eq!(group_penalty(&w), 12.0);
        assert_eq!(group_penalty(&w), expected);
        assert_eq!(group_penalty(&w.zeros_like()), 0.0);
    }

    #[test]
    fn distance_basics() {
        let a = Matrix::from_rows(&[[1.0]]).unwrap();
        let b = Matrix::from_rows(&[[4.0]]).unwrap();
        assert_eq!(frobenius_distance(&a, &b).unwrap(), 3.0);
        assert_eq!(frobenius_distance(&a, &a).unwrap(), 0.0);
        assert!(matches!(
            frobenius_distance(&a, &Matrix::zeros(1, 2)),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn rejects_non_finite_and_bad_lengths() {
        assert!(Matrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::from_vec(2, 2, vec![1.0]).is_err());
        assert!(Matrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn duplicate_layer_ids_rejected() {
        let m = Matrix::zeros(1, 1);
        assert!(WeightCollection::new(vec![("a".into(), m.clone()), ("a".into(), m)]).is_err());
    }

    #[test]
    fn matmul_small() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[[5.0], [6.0]]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().as_slice(), &[17.0, 39.0]);
        assert!(b.matmul(&b).is_err());
    }

    fn matrix_strategy() -> impl Strategy<Value = Matrix> {
        (0usize..6, 0usize..6).prop_flat_map(|(r, c)| {
            prop::collection::vec(-10.0f64..10.0, r * c)
                .prop_map(move |d| Matrix::from_vec(r, c, d).unwrap())
        })
    }

    fn same_shape_triple() -> impl Strategy<Value = (Matrix, Matrix, Matrix)> {
        (1usize..5, 1usize..5).prop_flat_map(|(r, c)| {
            let m = move || {
                prop::collection::vec(-10.0f64..10.0, r * c)
                    .prop_map(move |d| Matrix::from_vec(r, c, d).unwrap())
            };
            (m(), m(), m())
        })
    }

    proptest! {
        #[test]
        fn row_norms_of_transpose_are_col_norms(m in matrix_strategy()) {
            prop_assert_eq!(row_l2_norms(&m.transpose()).len(), col_l2_norms(&m).len());
            for (a, b) in row_l2_norms(&m.transpose()).iter().zip(col_l2_norms(&m)) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b));
            }
        }

        #[test]
        fn squared_norm_identity(m in matrix_strategy()) {
            let rows: f64 = row_l2_norms(&m).iter().map(|v| v * v).sum();
            let cols: f64 = col_l2_norms(&m).iter().map(|v| v * v).sum();
            let fro = m.frobenius_norm().powi(2);
            prop_assert!((rows - fro).abs() <= 1e-9 * (1.0 + fro));
            prop_assert!((cols - fro).abs() <= 1e-9 * (1.0 + fro));
        }

        #[test]
        fn distance_is_a_metric((a, b, c) in same_shape_triple()) {
            let ab = frobenius_distance(&a, &b).unwrap();
            let ba = frobenius_distance(&b, &a).unwrap();
            let bc = frobenius_distance(&b, &c).unwrap();
            let ac = frobenius_distance(&a, &c).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, ba);
            prop_assert!(ac <= ab + bc + 1e-12);
        }

        #[test]
        fn penalty_is_positively_homogeneous(m in matrix_strategy(), s in 0.0f64..5.0) {
            let w = WeightCollection::new(vec![("l".into(), m)]).unwrap();
            let p = group_penalty(&w);
            let ps = group_penalty(&w.scale(s));
            prop_assert!((ps - s * p).abs() <= 1e-9 * (1.0 + s * p));
        }
    }
}

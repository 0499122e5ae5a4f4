//! Dense d-dimensional tensors and Kronecker algebra.
//!
//! Everything here is the oracle side of the crate: small, explicit, and
//! row-major (last index fastest), matching the global index convention
//! used by the assembly and the TT cores. Dense objects refuse to grow
//! past [`MAX_DENSE_ELEMENTS`].

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Dense tensors refuse to allocate more elements than this.
pub const MAX_DENSE_ELEMENTS: u128 = 1 << 31;

/// Checks the element guard for a dense allocation of `dims`.
pub fn guard_dense(dims: &[usize]) -> Result<usize> {
    let elements: u128 = dims.iter().map(|&n| n as u128).product();
    if elements > MAX_DENSE_ELEMENTS {
        return Err(Error::MemoryGuard {
            elements,
            limit: MAX_DENSE_ELEMENTS,
        });
    }
    Ok(elements as usize)
}

/// Row-major bijection between multi-indices and 0-based linear indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiIndexMap {
    /// Extent of each axis.
    pub dims: Vec<usize>,
}

impl MultiIndexMap {
    pub fn new(dims: Vec<usize>) -> Self {
        Self { dims }
    }

    /// Total number of indices.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Linearize a multi-index (last axis fastest).
    pub fn linear(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        let mut lin = 0;
        for (i, n) in idx.iter().zip(&self.dims) {
            debug_assert!(i < n);
            lin = lin * n + i;
        }
        lin
    }

    /// Inverse of [`MultiIndexMap::linear`].
    pub fn multi(&self, mut lin: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dims.len()];
        for k in (0..self.dims.len()).rev() {
            idx[k] = lin % self.dims[k];
            lin /= self.dims[k];
        }
        idx
    }
}

/// Dense d-dimensional tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    /// Extent of each axis; `d >= 1`.
    pub dims: Vec<usize>,
    /// Flat data of length `prod(dims)`, last index fastest.
    pub data: Vec<f64>,
}

impl DenseTensor {
    /// A zero tensor of the given shape.
    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::InvalidArgument(
                "tensor dims must be non-empty and positive".into(),
            ));
        }
        let len = guard_dense(&dims)?;
        Ok(Self {
            dims,
            data: vec![0.0; len],
        })
    }

    /// Builds a tensor by evaluating `f` at every multi-index.
    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let mut out = Self::zeros(dims)?;
        let map = out.index_map();
        for lin in 0..out.data.len() {
            out.data[lin] = f(&map.multi(lin));
        }
        Ok(out)
    }

    pub fn from_data(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len = guard_dense(&dims)?;
        if data.len() != len {
            return Err(Error::DimMismatch(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn index_map(&self) -> MultiIndexMap {
        MultiIndexMap::new(self.dims.clone())
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.index_map().linear(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let lin = self.index_map().linear(idx);
        self.data[lin] = value;
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Applies `matrix` along axis `mode`: contracts the mode index with
    /// the matrix columns. The mode extent changes from `cols` to `rows`.
    pub fn mode_apply(&self, matrix: &DMatrix<f64>, mode: usize) -> Result<DenseTensor> {
        if mode >= self.dims.len() {
            return Err(Error::InvalidArgument(format!(
                "mode {mode} out of range for order {}",
                self.dims.len()
            )));
        }
        if matrix.ncols() != self.dims[mode] {
            return Err(Error::DimMismatch(format!(
                "matrix has {} columns, axis {mode} has extent {}",
                matrix.ncols(),
                self.dims[mode]
            )));
        }
        let mut dims = self.dims.clone();
        dims[mode] = matrix.nrows();
        let mut out = DenseTensor::zeros(dims)?;
        // Split the flat index as (outer, mode, inner).
        let inner: usize = self.dims[mode + 1..].iter().product();
        let outer: usize = self.dims[..mode].iter().product();
        let n_in = self.dims[mode];
        let n_out = matrix.nrows();
        for o in 0..outer {
            for r in 0..n_out {
                for c in 0..n_in {
                    let a = matrix[(r, c)];
                    if a == 0.0 {
                        continue;
                    }
                    let src = (o * n_in + c) * inner;
                    let dst = (o * n_out + r) * inner;
                    for i in 0..inner {
                        out.data[dst + i] += a * self.data[src + i];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Entrywise product with another tensor of the same shape.
    pub fn hadamard(&self, other: &DenseTensor) -> Result<DenseTensor> {
        if self.dims != other.dims {
            return Err(Error::DimMismatch("hadamard shapes differ".into()));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .collect();
        DenseTensor::from_data(self.dims.clone(), data)
    }
}

/// Kronecker product of two dense matrices.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ma, na) = a.shape();
    let (mb, nb) = b.shape();
    DMatrix::from_fn(ma * mb, na * nb, |i, j| {
        a[(i / mb, j / nb)] * b[(i % mb, j % nb)]
    })
}

/// Kronecker product of a list of matrices, left to right.
pub fn kron_list(factors: &[DMatrix<f64>]) -> DMatrix<f64> {
    let mut acc = factors[0].clone();
    for f in &factors[1..] {
        acc = kron(&acc, f);
    }
    acc
}

/// Tensor (outer) product: dims concatenate, entries multiply.
pub fn outer(a: &DenseTensor, b: &DenseTensor) -> DenseTensor {
    let mut dims = a.dims.clone();
    dims.extend_from_slice(&b.dims);
    let mut data = Vec::with_capacity(a.len() * b.len());
    for &av in &a.data {
        for &bv in &b.data {
            data.push(av * bv);
        }
    }
    DenseTensor { dims, data }
}

/// Reshapes a matrix into an order-`2d` operator tensor with interleaved
/// `(i_k, j_k)` axes, so that contracting the `j` axes against an order-d
/// tensor reproduces the matrix-vector product on the vectorization.
pub fn mat_to_optensor(
    a: &DMatrix<f64>,
    row_dims: &[usize],
    col_dims: &[usize],
) -> Result<DenseTensor> {
    if row_dims.len() != col_dims.len() || row_dims.is_empty() {
        return Err(Error::InvalidArgument(
            "row_dims and col_dims must be equal-length and non-empty".into(),
        ));
    }
    let rows: usize = row_dims.iter().product();
    let cols: usize = col_dims.iter().product();
    if rows != a.nrows() || cols != a.ncols() {
        return Err(Error::DimMismatch(format!(
            "dimension products ({rows}, {cols}) do not match matrix shape {:?}",
            a.shape()
        )));
    }
    let d = row_dims.len();
    let mut dims = Vec::with_capacity(2 * d);
    for k in 0..d {
        dims.push(row_dims[k]);
        dims.push(col_dims[k]);
    }
    let row_map = MultiIndexMap::new(row_dims.to_vec());
    let col_map = MultiIndexMap::new(col_dims.to_vec());
    DenseTensor::from_fn(dims, |idx| {
        let ri: Vec<usize> = (0..d).map(|k| idx[2 * k]).collect();
        let ci: Vec<usize> = (0..d).map(|k| idx[2 * k + 1]).collect();
        a[(row_map.linear(&ri), col_map.linear(&ci))]
    })
}

/// Inverse of [`mat_to_optensor`].
pub fn optensor_to_mat(op: &DenseTensor) -> Result<DMatrix<f64>> {
    if op.dims.len() % 2 != 0 {
        return Err(Error::InvalidArgument(
            "operator tensor must have even order".into(),
        ));
    }
    let d = op.dims.len() / 2;
    let row_dims: Vec<usize> = (0..d).map(|k| op.dims[2 * k]).collect();
    let col_dims: Vec<usize> = (0..d).map(|k| op.dims[2 * k + 1]).collect();
    let row_map = MultiIndexMap::new(row_dims.clone());
    let col_map = MultiIndexMap::new(col_dims.clone());
    let map = op.index_map();
    let mut out = DMatrix::<f64>::zeros(row_map.len(), col_map.len());
    for lin in 0..op.len() {
        let idx = map.multi(lin);
        let ri: Vec<usize> = (0..d).map(|k| idx[2 * k]).collect();
        let ci: Vec<usize> = (0..d).map(|k| idx[2 * k + 1]).collect();
        out[(row_map.linear(&ri), col_map.linear(&ci))] = op.data[lin];
    }
    Ok(out)
}

/// Contracts an order-`2d` operator tensor against an order-`d` tensor.
pub fn apply_optensor(op: &DenseTensor, u: &DenseTensor) -> Result<DenseTensor> {
    if op.dims.len() != 2 * u.dims.len() {
        return Err(Error::DimMismatch(format!(
            "operator order {} does not pair with operand order {}",
            op.dims.len(),
            u.dims.len()
        )));
    }
    let d = u.dims.len();
    let col_dims: Vec<usize> = (0..d).map(|k| op.dims[2 * k + 1]).collect();
    if col_dims != u.dims {
        return Err(Error::DimMismatch(format!(
            "operator column extents {:?} do not match operand dims {:?}",
            col_dims, u.dims
        )));
    }
    let mat = optensor_to_mat(op)?;
    let row_dims: Vec<usize> = (0..d).map(|k| op.dims[2 * k]).collect();
    let v = nalgebra::DVector::from_column_slice(&u.data);
    let out = mat * v;
    DenseTensor::from_data(row_dims, out.as_slice().to_vec())
}

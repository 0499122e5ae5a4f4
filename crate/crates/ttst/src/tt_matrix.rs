//! Tensor-train operators (TT-matrices).
//!
//! A `TTMatrix` is a TT factorization of a linear operator whose cores
//! carry a paired row/column index per axis. Internally the pair
//! `(i_k, j_k)` is fused into one mode of extent `m_k * n_k`, so the
//! operator is stored as a plain [`TTVector`] and all of the vector
//! machinery (rounding, addition, norms, serialization) applies as-is.

use nalgebra::DMatrix;

use crate::tensor::{DenseTensor, MultiIndexMap};
use crate::tt::{flatten_rm, TTVector};
use crate::{Error, Result};

/// Tensor-train operator with per-axis row and column extents.
#[derive(Debug, Clone, PartialEq)]
pub struct TTMatrix {
    /// Fused-mode storage: mode `k` has extent `row_dims[k] * col_dims[k]`
    /// with the column index fastest.
    pub(crate) inner: TTVector,
    pub(crate) row_dims: Vec<usize>,
    pub(crate) col_dims: Vec<usize>,
}

impl TTMatrix {
    /// Wraps fused-mode cores as an operator.
    pub fn from_fused(inner: TTVector, row_dims: Vec<usize>, col_dims: Vec<usize>) -> Result<Self> {
        if row_dims.len() != col_dims.len() || row_dims.len() != inner.order() {
            return Err(Error::DimMismatch(
                "row/column dimension lists do not match the core chain".into(),
            ));
        }
        for k in 0..row_dims.len() {
            if inner.dims()[k] != row_dims[k] * col_dims[k] {
                return Err(Error::DimMismatch(format!(
                    "fused mode {k} has extent {}, expected {}x{}",
                    inner.dims()[k],
                    row_dims[k],
                    col_dims[k]
                )));
            }
        }
        Ok(Self {
            inner,
            row_dims,
            col_dims,
        })
    }

    /// Rank-1 TT-matrix whose matricization is the Kronecker product of
    /// the given factors, left to right.
    pub fn from_kronecker(factors: &[DMatrix<f64>]) -> Self {
        let row_dims: Vec<usize> = factors.iter().map(|f| f.nrows()).collect();
        let col_dims: Vec<usize> = factors.iter().map(|f| f.ncols()).collect();
        let cores = factors.iter().map(flatten_rm).collect();
        let dims: Vec<usize> = row_dims
            .iter()
            .zip(&col_dims)
            .map(|(m, n)| m * n)
            .collect();
        let ranks = vec![1; factors.len() + 1];
        Self {
            inner: TTVector::from_cores(cores, dims, ranks).expect("consistent by construction"),
            row_dims,
            col_dims,
        }
    }

    /// Lifts a TT vector to the diagonal operator `diag(vec(k))`.
    ///
    /// Each new core slice is the diagonal matrix of the old core fiber,
    /// so ranks are preserved exactly.
    pub fn diagonal(k: &TTVector) -> Self {
        let d = k.order();
        let mut cores = Vec::with_capacity(d);
        for p in 0..d {
            let (r0, n, r1) = (k.ranks()[p], k.dims()[p], k.ranks()[p + 1]);
            let mut core = vec![0.0; r0 * n * n * r1];
            for a in 0..r0 {
                for i in 0..n {
                    for b in 0..r1 {
                        // fused index (i, j) with j = i on the diagonal
                        core[((a * n + i) * n + i) * r1 + b] = k.core(p)[(a * n + i) * r1 + b];
                    }
                }
            }
            cores.push(core);
        }
        let dims: Vec<usize> = k.dims().iter().map(|n| n * n).collect();
        Self {
            inner: TTVector::from_cores(cores, dims, k.ranks().to_vec())
                .expect("consistent by construction"),
            row_dims: k.dims().to_vec(),
            col_dims: k.dims().to_vec(),
        }
    }

    /// Identity operator on the given mode extents.
    pub fn identity(dims: &[usize]) -> Self {
        let factors: Vec<DMatrix<f64>> = dims.iter().map(|&n| DMatrix::identity(n, n)).collect();
        Self::from_kronecker(&factors)
    }

    pub fn row_dims(&self) -> &[usize] {
        &self.row_dims
    }

    pub fn col_dims(&self) -> &[usize] {
        &self.col_dims
    }

    pub fn ranks(&self) -> &[usize] {
        self.inner.ranks()
    }

    pub fn order(&self) -> usize {
        self.inner.order()
    }

    pub fn max_rank(&self) -> usize {
        self.inner.max_rank()
    }

    /// Total number of stored core entries.
    pub fn elem_count(&self) -> usize {
        self.inner.elem_count()
    }

    /// Core `k` as a flat `(r_{k-1}, m_k, n_k, r_k)` row-major buffer.
    pub fn core(&self, k: usize) -> &[f64] {
        self.inner.core(k)
    }

    /// Borrow of the fused-mode representation.
    pub fn fused(&self) -> &TTVector {
        &self.inner
    }

    /// Sum of two operators with identical shape; ranks add.
    pub fn add(&self, other: &TTMatrix) -> Result<TTMatrix> {
        if self.row_dims != other.row_dims || self.col_dims != other.col_dims {
            return Err(Error::DimMismatch("operator shapes differ".into()));
        }
        Ok(TTMatrix {
            inner: self.inner.add(&other.inner)?,
            row_dims: self.row_dims.clone(),
            col_dims: self.col_dims.clone(),
        })
    }

    pub fn scale(&self, alpha: f64) -> TTMatrix {
        TTMatrix {
            inner: self.inner.scale(alpha),
            row_dims: self.row_dims.clone(),
            col_dims: self.col_dims.clone(),
        }
    }

    /// Rounds the operator in the fused-mode sense.
    pub fn round(&self, tol: f64, max_rank: Option<usize>) -> TTMatrix {
        TTMatrix {
            inner: self.inner.round(tol, max_rank),
            row_dims: self.row_dims.clone(),
            col_dims: self.col_dims.clone(),
        }
    }

    /// Applies the operator to a TT vector. The result has the product
    /// ranks `ranks(A) * ranks(x)` bondwise; callers round afterwards.
    pub fn apply(&self, x: &TTVector) -> Result<TTVector> {
        if self.col_dims != x.dims() {
            return Err(Error::DimMismatch(format!(
                "operator column dims {:?} do not match operand dims {:?}",
                self.col_dims,
                x.dims()
            )));
        }
        let d = self.order();
        let mut cores = Vec::with_capacity(d);
        let mut ranks = vec![1usize; d + 1];
        for k in 0..d {
            let (pa0, pa1) = (self.ranks()[k], self.ranks()[k + 1]);
            let (rx0, rx1) = (x.ranks()[k], x.ranks()[k + 1]);
            let (m, n) = (self.row_dims[k], self.col_dims[k]);
            let a = self.core(k);
            let xc = x.core(k);
            let (r0, r1) = (pa0 * rx0, pa1 * rx1);
            let mut core = vec![0.0; r0 * m * r1];
            for alpha in 0..pa0 {
                for beta in 0..rx0 {
                    for i in 0..m {
                        for j in 0..n {
                            for ap in 0..pa1 {
                                let av = a[(((alpha * m + i) * n + j) * pa1) + ap];
                                if av == 0.0 {
                                    continue;
                                }
                                for bp in 0..rx1 {
                                    let xv = xc[(beta * n + j) * rx1 + bp];
                                    core[(((alpha * rx0 + beta) * m + i) * pa1 + ap) * rx1 + bp] +=
                                        av * xv;
                                }
                            }
                        }
                    }
                }
            }
            cores.push(core);
            ranks[k] = r0;
            ranks[k + 1] = r1;
        }
        TTVector::from_cores(cores, self.row_dims.clone(), ranks)
    }

    /// Operator product `self * other`; ranks multiply bondwise.
    pub fn matmul(&self, other: &TTMatrix) -> Result<TTMatrix> {
        if self.col_dims != other.row_dims {
            return Err(Error::DimMismatch(format!(
                "cannot multiply operator with column dims {:?} by one with row dims {:?}",
                self.col_dims, other.row_dims
            )));
        }
        let d = self.order();
        let mut cores = Vec::with_capacity(d);
        let mut ranks = vec![1usize; d + 1];
        for k in 0..d {
            let (pa0, pa1) = (self.ranks()[k], self.ranks()[k + 1]);
            let (pb0, pb1) = (other.ranks()[k], other.ranks()[k + 1]);
            let m = self.row_dims[k];
            let n = self.col_dims[k];
            let l = other.col_dims[k];
            let a = self.core(k);
            let b = other.core(k);
            let (r0, r1) = (pa0 * pb0, pa1 * pb1);
            let mut core = vec![0.0; r0 * m * l * r1];
            for alpha in 0..pa0 {
                for beta in 0..pb0 {
                    for i in 0..m {
                        for j in 0..n {
                            for ap in 0..pa1 {
                                let av = a[(((alpha * m + i) * n + j) * pa1) + ap];
                                if av == 0.0 {
                                    continue;
                                }
                                for q in 0..l {
                                    for bp in 0..pb1 {
                                        let bv = b[(((beta * n + j) * l + q) * pb1) + bp];
                                        core[((((alpha * pb0 + beta) * m + i) * l + q) * pa1 + ap)
                                            * pb1
                                            + bp] += av * bv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            cores.push(core);
            ranks[k] = r0;
            ranks[k + 1] = r1;
        }
        let dims: Vec<usize> = self
            .row_dims
            .iter()
            .zip(&other.col_dims)
            .map(|(m, l)| m * l)
            .collect();
        Ok(TTMatrix {
            inner: TTVector::from_cores(cores, dims, ranks)?,
            row_dims: self.row_dims.clone(),
            col_dims: other.col_dims.clone(),
        })
    }

    /// Dense matricization under the row-major global index convention
    /// (guarded by the dense element limit).
    pub fn to_dense_matrix(&self) -> Result<DMatrix<f64>> {
        let dense = self.inner.to_dense()?;
        let rows: usize = self.row_dims.iter().product();
        let cols: usize = self.col_dims.iter().product();
        let row_map = MultiIndexMap::new(self.row_dims.clone());
        let col_map = MultiIndexMap::new(self.col_dims.clone());
        let fused_map = dense.index_map();
        let d = self.order();
        let mut out = DMatrix::<f64>::zeros(rows, cols);
        for lin in 0..dense.len() {
            let fused = fused_map.multi(lin);
            let mut ri = Vec::with_capacity(d);
            let mut ci = Vec::with_capacity(d);
            for k in 0..d {
                ri.push(fused[k] / self.col_dims[k]);
                ci.push(fused[k] % self.col_dims[k]);
            }
            out[(row_map.linear(&ri), col_map.linear(&ci))] = dense.data[lin];
        }
        Ok(out)
    }

    /// Dense operator tensor with interleaved `(i_k, j_k)` axes.
    pub fn to_dense_optensor(&self) -> Result<DenseTensor> {
        let mat = self.to_dense_matrix()?;
        crate::tensor::mat_to_optensor(&mat, &self.row_dims, &self.col_dims)
    }

    /// Extracts one entry of the diagonal-of-operator for interior use.
    pub fn entry(&self, row: &[usize], col: &[usize]) -> f64 {
        debug_assert_eq!(row.len(), self.order());
        let mut v = vec![1.0];
        for k in 0..self.order() {
            let (r0, r1) = (self.ranks()[k], self.ranks()[k + 1]);
            let n = self.col_dims[k];
            let m = self.row_dims[k];
            debug_assert!(row[k] < m && col[k] < n);
            let core = self.core(k);
            let mut next = vec![0.0; r1];
            for a in 0..r0 {
                let va = v[a];
                if va == 0.0 {
                    continue;
                }
                let base = (((a * m + row[k]) * n) + col[k]) * r1;
                for (b, slot) in next.iter_mut().enumerate() {
                    *slot += va * core[base + b];
                }
            }
            v = next;
        }
        v[0]
    }
}

/// Builds a TT-matrix from Kronecker factors; convenience free function
/// mirroring the operator algebra used during assembly.
pub fn kron_to_ttmatrix(factors: &[DMatrix<f64>]) -> TTMatrix {
    TTMatrix::from_kronecker(factors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{kron, kron_list};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn random_tt(dims: &[usize], rank: usize, seed: u64) -> TTVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TTVector::random(dims, rank, &mut rng)
    }

    #[test]
    fn kronecker_identity_matricizes_to_identity() {
        let tt = TTMatrix::from_kronecker(&[DMatrix::identity(2, 2), DMatrix::identity(3, 3)]);
        let dense = tt.to_dense_matrix().unwrap();
        assert_abs_diff_eq!(dense, DMatrix::identity(6, 6), epsilon = 1e-14);
    }

    #[test]
    fn kronecker_matches_dense_kron() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_matrix(&mut rng, 3, 3);
        let factors = vec![
            s.clone(),
            DMatrix::identity(3, 3),
            DMatrix::identity(3, 3),
            DMatrix::identity(3, 3),
        ];
        let tt = TTMatrix::from_kronecker(&factors);
        assert_eq!(tt.max_rank(), 1);
        let want = kron_list(&factors);
        assert_abs_diff_eq!(tt.to_dense_matrix().unwrap(), want, epsilon = 1e-13);
    }

    #[test]
    fn kronecker_single_factor() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_matrix(&mut rng, 4, 3);
        let tt = TTMatrix::from_kronecker(&[a.clone()]);
        assert_abs_diff_eq!(tt.to_dense_matrix().unwrap(), a, epsilon = 1e-14);
    }

    #[test]
    fn diagonal_of_ones_is_identity() {
        let ones = TTVector::rank_one(&[vec![1.0; 2], vec![1.0; 3]]);
        let lifted = TTMatrix::diagonal(&ones);
        assert_abs_diff_eq!(
            lifted.to_dense_matrix().unwrap(),
            DMatrix::identity(6, 6),
            epsilon = 1e-14
        );
    }

    #[test]
    fn diagonal_apply_is_hadamard() {
        let k = random_tt(&[2, 2, 2], 2, 3);
        let u = random_tt(&[2, 2, 2], 2, 4);
        let lifted = TTMatrix::diagonal(&k);
        assert_eq!(lifted.ranks(), k.ranks());
        let out = lifted.apply(&u).unwrap().to_dense().unwrap();
        let want = k
            .to_dense()
            .unwrap()
            .hadamard(&u.to_dense().unwrap())
            .unwrap();
        for (a, b) in out.data.iter().zip(&want.data) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn diagonal_matricization_is_diag_of_vec() {
        let k = random_tt(&[2, 3], 2, 5);
        let lifted = TTMatrix::diagonal(&k);
        let dense = lifted.to_dense_matrix().unwrap();
        let veck = k.to_dense().unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { veck.data[i] } else { 0.0 };
                assert_abs_diff_eq!(dense[(i, j)], want, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn apply_identity_preserves_vector() {
        let x = random_tt(&[3, 3, 3], 2, 6);
        let id = TTMatrix::identity(&[3, 3, 3]);
        let out = id.apply(&x).unwrap().round(1e-13, None);
        let a = out.to_dense().unwrap();
        let b = x.to_dense().unwrap();
        for (u, v) in a.data.iter().zip(&b.data) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-12);
        }
    }

    #[test]
    fn apply_zero_operator() {
        let x = random_tt(&[2, 2], 2, 7);
        let zero = TTMatrix::from_kronecker(&[DMatrix::zeros(2, 2), DMatrix::zeros(2, 2)]);
        let out = zero.apply(&x).unwrap();
        assert!(out.norm() <= 1e-14);
    }

    #[test]
    fn apply_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f1 = random_matrix(&mut rng, 3, 3);
        let f2 = random_matrix(&mut rng, 3, 3);
        let f3 = random_matrix(&mut rng, 3, 3);
        let a = TTMatrix::from_kronecker(&[f1.clone(), f2.clone(), f3.clone()]);
        let x = random_tt(&[3, 3, 3], 3, 9);
        let out = a.apply(&x).unwrap();
        assert_eq!(out.ranks()[1], a.ranks()[1] * x.ranks()[1]);
        let want = kron_list(&[f1, f2, f3])
            * nalgebra::DVector::from_column_slice(&x.to_dense().unwrap().data);
        let got = out.to_dense().unwrap();
        for (u, v) in got.data.iter().zip(want.iter()) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-12);
        }
    }

    #[test]
    fn matmul_against_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = TTMatrix::from_kronecker(&[
            random_matrix(&mut rng, 2, 2),
            random_matrix(&mut rng, 3, 3),
        ]);
        let id = TTMatrix::identity(&[2, 3]);
        let prod = a.matmul(&id).unwrap();
        assert_abs_diff_eq!(
            prod.to_dense_matrix().unwrap(),
            a.to_dense_matrix().unwrap(),
            epsilon = 1e-13
        );
    }

    #[test]
    fn matmul_diag_ones_is_identity_action() {
        let ones = TTVector::rank_one(&[vec![1.0; 2], vec![1.0; 2]]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = TTMatrix::from_kronecker(&[
            random_matrix(&mut rng, 2, 2),
            random_matrix(&mut rng, 2, 2),
        ]);
        let prod = TTMatrix::diagonal(&ones).matmul(&b).unwrap();
        assert_abs_diff_eq!(
            prod.to_dense_matrix().unwrap(),
            b.to_dense_matrix().unwrap(),
            epsilon = 1e-13
        );
    }

    #[test]
    fn matmul_kron_mixed_product_identity() {
        // (S (x) I) (I (x) S) = S (x) S
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s = random_matrix(&mut rng, 3, 3);
        let i = DMatrix::identity(3, 3);
        let left = TTMatrix::from_kronecker(&[s.clone(), i.clone()]);
        let right = TTMatrix::from_kronecker(&[i, s.clone()]);
        let prod = left.matmul(&right).unwrap();
        assert_abs_diff_eq!(
            prod.to_dense_matrix().unwrap(),
            kron(&s, &s),
            epsilon = 1e-12
        );
    }

    #[test]
    fn matmul_matches_dense_product_with_ranks() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a1 = TTMatrix::from_kronecker(&[
            random_matrix(&mut rng, 2, 3),
            random_matrix(&mut rng, 2, 2),
        ]);
        let a2 = TTMatrix::from_kronecker(&[
            random_matrix(&mut rng, 2, 3),
            random_matrix(&mut rng, 2, 2),
        ]);
        let a = a1.add(&a2).unwrap();
        let b1 = TTMatrix::from_kronecker(&[
            random_matrix(&mut rng, 3, 2),
            random_matrix(&mut rng, 2, 4),
        ]);
        let prod = a.matmul(&b1).unwrap();
        assert_eq!(prod.ranks()[1], a.ranks()[1] * b1.ranks()[1]);
        let want = a.to_dense_matrix().unwrap() * b1.to_dense_matrix().unwrap();
        assert_abs_diff_eq!(prod.to_dense_matrix().unwrap(), want, epsilon = 1e-12);
    }

    #[test]
    fn entry_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let a = TTMatrix::from_kronecker(&[
            random_matrix(&mut rng, 2, 3),
            random_matrix(&mut rng, 3, 2),
        ]);
        let dense = a.to_dense_matrix().unwrap();
        let rm = MultiIndexMap::new(a.row_dims().to_vec());
        let cm = MultiIndexMap::new(a.col_dims().to_vec());
        for r in 0..dense.nrows() {
            for c in 0..dense.ncols() {
                assert_abs_diff_eq!(
                    a.entry(&rm.multi(r), &cm.multi(c)),
                    dense[(r, c)],
                    epsilon = 1e-13
                );
            }
        }
    }

    #[test]
    fn shape_guards() {
        let a = TTMatrix::identity(&[2, 2]);
        let x = random_tt(&[3, 2], 1, 15);
        assert!(a.apply(&x).is_err());
        let b = TTMatrix::identity(&[3, 2]);
        assert!(a.matmul(&b).is_err());
    }
}

//! Tensor-train vectors: TT-SVD, rounding, and linear algebra.
//!
//! A `TTVector` stores a d-dimensional tensor as a chain of order-3 cores
//! `G_k` of shape `(r_{k-1}, n_k, r_k)` with boundary ranks 1, so that
//!
//! ```text
//! X(i_1, ..., i_d) = G_1[:, i_1, :] G_2[:, i_2, :] ... G_d[:, i_d, :]
//! ```
//!
//! as a 1x1 matrix product. Cores are flat row-major buffers; all
//! factorizations go through explicit row-major unfoldings so there is a
//! single layout convention in the crate.

use nalgebra::DMatrix;
use rand::Rng;

use crate::tensor::{guard_dense, DenseTensor};
use crate::{Error, Result};

/// Interprets a row-major flat buffer as a `rows x cols` matrix.
pub(crate) fn unfold_rm(data: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    debug_assert_eq!(data.len(), rows * cols);
    DMatrix::from_fn(rows, cols, |i, j| data[i * cols + j])
}

/// Flattens a matrix back to a row-major buffer.
pub(crate) fn flatten_rm(m: &DMatrix<f64>) -> Vec<f64> {
    let (rows, cols) = m.shape();
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Rank of a singular-value tail: smallest `r` with the discarded tail
/// below `abs_tol` in the Frobenius sense. `abs_tol == 0` keeps the
/// numerical rank (relative machine cutoff).
fn truncation_rank(sv: &[f64], abs_tol: f64, max_dim: usize) -> usize {
    if sv.is_empty() || sv[0] == 0.0 {
        return 1;
    }
    let r = if abs_tol > 0.0 {
        let target = abs_tol * abs_tol;
        let mut tail = 0.0;
        let mut keep = sv.len();
        for i in (0..sv.len()).rev() {
            tail += sv[i] * sv[i];
            if tail > target {
                break;
            }
            keep = i;
        }
        keep
    } else {
        let cutoff = sv[0] * f64::EPSILON * max_dim as f64;
        sv.iter().take_while(|s| **s > cutoff).count()
    };
    r.max(1)
}

/// Truncated SVD: returns `(u, sv_t)` with `u` orthonormal columns and
/// `sv_t = diag(sigma) v^T`, keeping the rank selected by `abs_tol` and
/// capped at `max_rank`.
pub(crate) fn truncated_svd(
    m: &DMatrix<f64>,
    abs_tol: f64,
    max_rank: Option<usize>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd failed");
    let vt = svd.v_t.expect("svd failed");
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let mut r = truncation_rank(&sv, abs_tol, m.nrows().max(m.ncols()));
    if let Some(cap) = max_rank {
        r = r.min(cap.max(1));
    }
    let u_r = u.columns(0, r).into_owned();
    let mut sv_t = vt.rows(0, r).into_owned();
    for i in 0..r {
        let s = sv[i];
        for j in 0..sv_t.ncols() {
            sv_t[(i, j)] *= s;
        }
    }
    (u_r, sv_t)
}

/// Tensor-train vector: a chain of order-3 cores.
#[derive(Debug, Clone, PartialEq)]
pub struct TTVector {
    /// Core `k` is a flat row-major `(ranks[k], dims[k], ranks[k+1])` buffer.
    pub(crate) cores: Vec<Vec<f64>>,
    pub(crate) dims: Vec<usize>,
    /// Bond ranks, length `d + 1`, with `ranks[0] = ranks[d] = 1`.
    pub(crate) ranks: Vec<usize>,
}

impl TTVector {
    /// Builds a TT vector from explicit cores, validating the chain.
    pub fn from_cores(cores: Vec<Vec<f64>>, dims: Vec<usize>, ranks: Vec<usize>) -> Result<Self> {
        if dims.is_empty() || cores.len() != dims.len() || ranks.len() != dims.len() + 1 {
            return Err(Error::InvalidArgument(
                "core, dimension, and rank lists are inconsistent".into(),
            ));
        }
        if ranks[0] != 1 || ranks[dims.len()] != 1 {
            return Err(Error::InvalidArgument("boundary ranks must be 1".into()));
        }
        for k in 0..dims.len() {
            if dims[k] == 0 || ranks[k] == 0 {
                return Err(Error::InvalidArgument("zero extent in TT shape".into()));
            }
            if cores[k].len() != ranks[k] * dims[k] * ranks[k + 1] {
                return Err(Error::DimMismatch(format!(
                    "core {k} has {} entries, expected {}",
                    cores[k].len(),
                    ranks[k] * dims[k] * ranks[k + 1]
                )));
            }
        }
        Ok(Self { cores, dims, ranks })
    }

    /// All-zero tensor with rank-1 cores.
    pub fn zeros(dims: &[usize]) -> Self {
        let cores = dims.iter().map(|&n| vec![0.0; n]).collect();
        Self {
            cores,
            dims: dims.to_vec(),
            ranks: vec![1; dims.len() + 1],
        }
    }

    /// Rank-1 TT from per-axis factors.
    pub fn rank_one(factors: &[Vec<f64>]) -> Self {
        let dims: Vec<usize> = factors.iter().map(|f| f.len()).collect();
        Self {
            cores: factors.to_vec(),
            dims: dims.clone(),
            ranks: vec![1; dims.len() + 1],
        }
    }

    /// Random TT with the given interior rank (clamped to valid shapes).
    pub fn random(dims: &[usize], rank: usize, rng: &mut impl Rng) -> Self {
        let d = dims.len();
        let mut ranks = vec![1usize; d + 1];
        // Clamp so each bond does not exceed the unfolding sizes.
        let mut left = 1usize;
        for k in 1..d {
            left = (left * dims[k - 1]).min(rank.max(1));
            ranks[k] = left;
        }
        let mut right = 1usize;
        for k in (1..d).rev() {
            right = (right * dims[k]).min(ranks[k]);
            ranks[k] = right;
        }
        let cores = (0..d)
            .map(|k| {
                (0..ranks[k] * dims[k] * ranks[k + 1])
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect()
            })
            .collect();
        Self {
            cores,
            dims: dims.to_vec(),
            ranks,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn core(&self, k: usize) -> &[f64] {
        &self.cores[k]
    }

    pub fn max_rank(&self) -> usize {
        self.ranks.iter().copied().max().unwrap_or(1)
    }

    /// Total number of stored core entries.
    pub fn elem_count(&self) -> usize {
        self.cores.iter().map(|c| c.len()).sum()
    }

    /// TT-SVD of a dense tensor: successive truncated SVDs on unfoldings.
    ///
    /// The result satisfies `|dense(result) - x|_F <= tol |x|_F`; `tol = 0`
    /// keeps the numerical rank of every unfolding.
    pub fn from_dense(x: &DenseTensor, tol: f64) -> Result<Self> {
        if tol < 0.0 {
            return Err(Error::InvalidArgument("tolerance must be >= 0".into()));
        }
        let d = x.dims.len();
        let norm = x.norm();
        if norm == 0.0 {
            return Ok(Self::zeros(&x.dims));
        }
        if d == 1 {
            return Self::from_cores(vec![x.data.clone()], x.dims.clone(), vec![1, 1]);
        }
        let delta = if tol > 0.0 {
            tol * norm / ((d - 1) as f64).sqrt()
        } else {
            0.0
        };
        let mut cores = Vec::with_capacity(d);
        let mut ranks = vec![1usize; d + 1];
        let mut rest: usize = x.dims.iter().product();
        let mut buffer = x.data.clone();
        let mut r_prev = 1usize;
        for k in 0..d - 1 {
            rest /= x.dims[k];
            let m = unfold_rm(&buffer, r_prev * x.dims[k], rest);
            let (u, sv_t) = truncated_svd(&m, delta, None);
            let r = u.ncols();
            cores.push(flatten_rm(&u));
            ranks[k + 1] = r;
            buffer = flatten_rm(&sv_t);
            r_prev = r;
        }
        cores.push(buffer);
        Self::from_cores(cores, x.dims.clone(), ranks)
    }

    /// Contracts the chain back to a dense tensor (guarded).
    pub fn to_dense(&self) -> Result<DenseTensor> {
        guard_dense(&self.dims)?;
        let d = self.order();
        // Accumulate (prefix_size x r_k) and absorb one core at a time.
        let mut acc = unfold_rm(&self.cores[0], self.dims[0], self.ranks[1]);
        for k in 1..d {
            let core = unfold_rm(
                &self.cores[k],
                self.ranks[k],
                self.dims[k] * self.ranks[k + 1],
            );
            let next = &acc * core;
            let rows = next.nrows() * self.dims[k];
            acc = unfold_rm(&flatten_rm(&next), rows, self.ranks[k + 1]);
        }
        DenseTensor::from_data(self.dims.clone(), flatten_rm(&acc))
    }

    /// Evaluates a single entry by chaining core slices.
    pub fn get(&self, idx: &[usize]) -> f64 {
        debug_assert_eq!(idx.len(), self.order());
        let mut v = vec![1.0];
        for (k, &i) in idx.iter().enumerate() {
            let (r0, n, r1) = (self.ranks[k], self.dims[k], self.ranks[k + 1]);
            debug_assert!(i < n);
            let mut next = vec![0.0; r1];
            for a in 0..r0 {
                let va = v[a];
                if va == 0.0 {
                    continue;
                }
                let base = (a * n + i) * r1;
                for (b, slot) in next.iter_mut().enumerate() {
                    *slot += va * self.cores[k][base + b];
                }
            }
            v = next;
        }
        v[0]
    }

    /// Sum of two TT vectors; bond ranks add.
    pub fn add(&self, other: &TTVector) -> Result<TTVector> {
        if self.dims != other.dims {
            return Err(Error::DimMismatch(format!(
                "cannot add TT of dims {:?} and {:?}",
                self.dims, other.dims
            )));
        }
        let d = self.order();
        if d == 1 {
            let core = self.cores[0]
                .iter()
                .zip(&other.cores[0])
                .map(|(a, b)| a + b)
                .collect();
            return TTVector::from_cores(vec![core], self.dims.clone(), vec![1, 1]);
        }
        let mut cores = Vec::with_capacity(d);
        let mut ranks = vec![1usize; d + 1];
        for k in 0..d {
            let (ra0, ra1) = (self.ranks[k], self.ranks[k + 1]);
            let (rb0, rb1) = (other.ranks[k], other.ranks[k + 1]);
            let n = self.dims[k];
            let (r0, r1) = if k == 0 {
                (1, ra1 + rb1)
            } else if k == d - 1 {
                (ra0 + rb0, 1)
            } else {
                (ra0 + rb0, ra1 + rb1)
            };
            // Block-diagonal slices: A in the top-left corner, B in the
            // bottom-right; boundary cores concatenate along one rank only.
            let mut core = vec![0.0; r0 * n * r1];
            for i in 0..n {
                for a in 0..ra0 {
                    for b in 0..ra1 {
                        core[(a * n + i) * r1 + b] = self.cores[k][(a * n + i) * ra1 + b];
                    }
                }
                let (oa, ob) = if k == 0 { (0, ra1) } else { (ra0, ra1) };
                let ob = if k == d - 1 { 0 } else { ob };
                for a in 0..rb0 {
                    for b in 0..rb1 {
                        core[((oa + a) * n + i) * r1 + (ob + b)] =
                            other.cores[k][(a * n + i) * rb1 + b];
                    }
                }
            }
            cores.push(core);
            ranks[k] = r0;
            ranks[k + 1] = r1;
        }
        TTVector::from_cores(cores, self.dims.clone(), ranks)
    }

    /// Scales the tensor by `alpha` (absorbed into the first core).
    pub fn scale(&self, alpha: f64) -> TTVector {
        let mut out = self.clone();
        for v in out.cores[0].iter_mut() {
            *v *= alpha;
        }
        out
    }

    /// Inner product with another TT vector of the same shape.
    pub fn dot(&self, other: &TTVector) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::DimMismatch("dot shapes differ".into()));
        }
        let mut acc = DMatrix::<f64>::from_element(1, 1, 1.0);
        for k in 0..self.order() {
            let n = self.dims[k];
            let x = unfold_rm(&self.cores[k], self.ranks[k], n * self.ranks[k + 1]);
            // t = acc^T x : (ry_{k-1}, n * rx_k)
            let t = acc.transpose() * x;
            let t = unfold_rm(
                &flatten_rm(&t),
                other.ranks[k] * n,
                self.ranks[k + 1],
            );
            let y = unfold_rm(&other.cores[k], other.ranks[k] * n, other.ranks[k + 1]);
            acc = t.transpose() * y;
        }
        Ok(acc[(0, 0)])
    }

    /// Frobenius norm via the inner product.
    pub fn norm(&self) -> f64 {
        self.dot(self).map(|v| v.max(0.0).sqrt()).unwrap_or(0.0)
    }

    /// Makes every core except the first right-orthogonal (rows of the
    /// `(r_{k-1}, n r_k)` unfolding orthonormal). Bond ranks may shrink.
    pub(crate) fn right_orthogonalize(&mut self) {
        let d = self.order();
        for k in (1..d).rev() {
            let m = unfold_rm(&self.cores[k], self.ranks[k], self.dims[k] * self.ranks[k + 1]);
            let qr = m.transpose().qr();
            let q = qr.q();
            let r = qr.r();
            let new_rank = q.ncols();
            self.cores[k] = flatten_rm(&q.transpose());
            // Absorb r^T into the right rank of core k-1.
            let prev = unfold_rm(
                &self.cores[k - 1],
                self.ranks[k - 1] * self.dims[k - 1],
                self.ranks[k],
            );
            let merged = prev * r.transpose();
            self.cores[k - 1] = flatten_rm(&merged);
            self.ranks[k] = new_rank;
        }
    }

    /// TT rounding: right-orthogonalization followed by a left-to-right
    /// sweep of truncated SVDs with the tolerance split across bonds.
    ///
    /// Guarantees `|dense(out) - dense(self)|_F <= tol |dense(self)|_F`
    /// and bondwise non-increasing ranks. An optional `max_rank` caps
    /// every bond.
    pub fn round(&self, tol: f64, max_rank: Option<usize>) -> TTVector {
        let d = self.order();
        if d == 1 {
            return self.clone();
        }
        let mut work = self.clone();
        work.right_orthogonalize();
        let norm = unfold_rm(&work.cores[0], work.dims[0], work.ranks[1]).norm();
        // |X|_F <= prod_k |G_k|_F; a norm below roundoff on that scale
        // means the tensor cancels to numerical zero (e.g. x - x).
        let representation_scale: f64 = self
            .cores
            .iter()
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .product();
        let noise_floor = representation_scale * f64::EPSILON * 8.0 * d as f64;
        if norm == 0.0 || norm <= noise_floor {
            return TTVector::zeros(&self.dims);
        }
        let delta = if tol > 0.0 {
            tol * norm / ((d - 1) as f64).sqrt()
        } else {
            0.0
        };
        for k in 0..d - 1 {
            let m = unfold_rm(
                &work.cores[k],
                work.ranks[k] * work.dims[k],
                work.ranks[k + 1],
            );
            let (u, sv_t) = truncated_svd(&m, delta, max_rank);
            let r = u.ncols();
            work.cores[k] = flatten_rm(&u);
            let next = unfold_rm(
                &work.cores[k + 1],
                work.ranks[k + 1],
                work.dims[k + 1] * work.ranks[k + 2],
            );
            work.cores[k + 1] = flatten_rm(&(sv_t * next));
            work.ranks[k + 1] = r;
        }
        work
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::outer;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dense(dims: &[usize], seed: u64) -> DenseTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseTensor::from_fn(dims.to_vec(), |_| rng.gen_range(-1.0..1.0)).unwrap()
    }

    fn rel_err(a: &DenseTensor, b: &DenseTensor) -> f64 {
        let diff: f64 = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        diff.sqrt() / b.norm().max(1e-300)
    }

    #[test]
    fn svd_of_rank_one_tensor() {
        let a = DenseTensor::from_data(vec![2], vec![1.0, 2.0]).unwrap();
        let b = DenseTensor::from_data(vec![2], vec![1.0, 1.0]).unwrap();
        let x = outer(&a, &b);
        let tt = TTVector::from_dense(&x, 0.0).unwrap();
        assert_eq!(tt.ranks(), &[1, 1, 1]);
        assert!(rel_err(&tt.to_dense().unwrap(), &x) <= 1e-14);
    }

    #[test]
    fn svd_of_zero_tensor() {
        let x = DenseTensor::zeros(vec![3, 3, 3]).unwrap();
        let tt = TTVector::from_dense(&x, 0.0).unwrap();
        assert_eq!(tt.ranks(), &[1, 1, 1, 1]);
        assert!(tt.cores.iter().all(|c| c.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn svd_round_trip_random_4d() {
        let x = random_dense(&[4, 4, 4, 4], 42);
        let tt = TTVector::from_dense(&x, 0.0).unwrap();
        assert!(rel_err(&tt.to_dense().unwrap(), &x) <= 1e-12);
        assert!(tt.ranks()[1] <= 4 && tt.ranks()[2] <= 16 && tt.ranks()[3] <= 4);
    }

    #[test]
    fn svd_respects_tolerance() {
        let x = random_dense(&[5, 5, 5], 7);
        for tol in [1e-1, 1e-3, 1e-8] {
            let tt = TTVector::from_dense(&x, tol).unwrap();
            assert!(
                rel_err(&tt.to_dense().unwrap(), &x) <= tol,
                "tol={tol} violated"
            );
        }
    }

    #[test]
    fn dense_of_rank_one_ones() {
        let tt = TTVector::rank_one(&[vec![1.0; 2], vec![1.0; 3], vec![1.0; 2]]);
        let x = tt.to_dense().unwrap();
        assert!(x.data.iter().all(|v| (*v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn entry_evaluation_matches_chain_product() {
        let x = random_dense(&[3, 4, 2], 3);
        let tt = TTVector::from_dense(&x, 0.0).unwrap();
        let map = x.index_map();
        for lin in [0, 5, 11, 23] {
            let idx = map.multi(lin);
            assert_abs_diff_eq!(tt.get(&idx), x.get(&idx), epsilon = 1e-12);
        }
    }

    #[test]
    fn add_and_scale_are_linear() {
        let tx = TTVector::from_dense(&random_dense(&[3, 3, 3], 1), 0.0).unwrap();
        let ty = TTVector::from_dense(&random_dense(&[3, 3, 3], 2), 0.0).unwrap();
        let x = tx.to_dense().unwrap();
        let y = ty.to_dense().unwrap();
        let sum = tx.scale(2.5).add(&ty).unwrap();
        let dense = sum.to_dense().unwrap();
        for (lin, v) in dense.data.iter().enumerate() {
            assert_abs_diff_eq!(*v, 2.5 * x.data[lin] + y.data[lin], epsilon = 1e-13);
        }
        // Ranks add bondwise.
        assert_eq!(sum.ranks()[1], tx.ranks()[1] + ty.ranks()[1]);
    }

    #[test]
    fn dot_matches_dense_inner_product() {
        let x = random_dense(&[3, 3, 3], 4);
        let y = random_dense(&[3, 3, 3], 5);
        let tx = TTVector::from_dense(&x, 0.0).unwrap();
        let ty = TTVector::from_dense(&y, 0.0).unwrap();
        let want: f64 = x.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        assert_abs_diff_eq!(tx.dot(&ty).unwrap(), want, epsilon = 1e-12);
    }

    #[test]
    fn dot_with_zero_is_zero() {
        let x = TTVector::from_dense(&random_dense(&[2, 2], 6), 0.0).unwrap();
        let z = TTVector::zeros(&[2, 2]);
        assert_eq!(x.dot(&z).unwrap(), 0.0);
    }

    #[test]
    fn norm_of_all_ones() {
        let tt = TTVector::rank_one(&[vec![1.0; 2], vec![1.0; 2]]);
        assert_abs_diff_eq!(tt.norm(), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn round_cancellation_to_zero() {
        let x = TTVector::from_dense(&random_dense(&[3, 3, 3], 8), 0.0).unwrap();
        let diff = x.add(&x.scale(-1.0)).unwrap();
        let rounded = diff.round(1e-12, None);
        assert_eq!(rounded.ranks(), &[1, 1, 1, 1]);
        assert!(rounded.norm() <= 1e-12);
    }

    #[test]
    fn round_identity_on_rank_one() {
        let tt = TTVector::rank_one(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let rounded = tt.round(1e-12, None);
        assert_eq!(rounded.ranks(), tt.ranks());
        assert!(rel_err(&rounded.to_dense().unwrap(), &tt.to_dense().unwrap()) <= 1e-14);
    }

    #[test]
    fn round_sum_of_rank_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut acc = TTVector::zeros(&[4, 4, 4]);
        for _ in 0..3 {
            let f: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            acc = acc.add(&TTVector::rank_one(&f)).unwrap();
        }
        let rounded = acc.round(1e-14, None);
        assert!(rounded.ranks()[1] <= 3 && rounded.ranks()[2] <= 3);
        assert!(rel_err(&rounded.to_dense().unwrap(), &acc.to_dense().unwrap()) <= 1e-12);
    }

    #[test]
    fn round_contract_and_rank_monotonicity() {
        let x = random_dense(&[4, 4, 4, 4], 9);
        let tt = TTVector::from_dense(&x, 0.0).unwrap();
        for tol in [1e-1, 1e-2, 1e-6, 1e-12] {
            let r = tt.round(tol, None);
            assert!(rel_err(&r.to_dense().unwrap(), &x) <= tol);
            for (a, b) in r.ranks().iter().zip(tt.ranks()) {
                assert!(a <= b);
            }
        }
    }

    #[test]
    fn round_with_rank_cap() {
        let x = random_dense(&[4, 4, 4], 10);
        let tt = TTVector::from_dense(&x, 0.0).unwrap();
        let capped = tt.round(0.0, Some(2));
        assert!(capped.max_rank() <= 2);
    }

    #[test]
    fn random_tt_respects_rank_clamp() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let tt = TTVector::random(&[2, 3, 2], 10, &mut rng);
        // Bond 1 cannot exceed 2, bond 2 cannot exceed 2.
        assert!(tt.ranks()[1] <= 2 && tt.ranks()[2] <= 2);
        assert!(tt.to_dense().is_ok());
    }
}

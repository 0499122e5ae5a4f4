//! Maxvol row selection and TT cross interpolation.
//!
//! Cross interpolation builds a TT representation of a grid function by
//! sampling fibers only, never forming the dense tensor. Alternating
//! left-right and right-left passes re-select pivot index sets with the
//! maximum-volume criterion; a seeded held-out sample estimates the
//! relative error, and a rank-1 enrichment kicks in when the estimate
//! stalls above the target.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tt::{truncated_svd, TTVector};
use crate::{Error, Result};

/// Stopping and pivoting knobs for [`tt_cross`].
#[derive(Debug, Clone)]
pub struct CrossConfig {
    /// Relative stopping tolerance for both the iterate change and the
    /// held-out error estimate.
    pub tol: f64,
    /// Maximum number of alternating sweeps.
    pub max_sweeps: usize,
    /// Bond rank of the initial random fiber selection.
    pub initial_rank: usize,
    /// Seed for fiber selection and the held-out sample.
    pub seed: u64,
    /// Maxvol swap threshold: stop swapping once all coefficient
    /// magnitudes are below `1 + maxvol_delta`.
    pub maxvol_delta: f64,
    /// Size of the held-out error sample.
    pub heldout_samples: usize,
}

impl Default for CrossConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_sweeps: 30,
            initial_rank: 2,
            seed: 20230067,
            maxvol_delta: 1e-2,
            heldout_samples: 1000,
        }
    }
}

impl CrossConfig {
    fn validate(&self) -> Result<()> {
        if self.tol <= 0.0 || self.max_sweeps == 0 || self.initial_rank == 0 {
            return Err(Error::InvalidArgument(
                "cross config requires tol > 0, max_sweeps >= 1, initial_rank >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// A scalar function sampled on the tensor product of per-axis node lists.
#[derive(Clone)]
pub struct GridFunction {
    axes: Vec<Vec<f64>>,
    eval: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl GridFunction {
    pub fn new(
        axes: Vec<Vec<f64>>,
        eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if axes.is_empty() || axes.iter().any(|a| a.is_empty()) {
            return Err(Error::InvalidArgument(
                "grid function needs at least one non-empty axis".into(),
            ));
        }
        Ok(Self {
            axes,
            eval: Arc::new(eval),
        })
    }

    /// Convenience constructor for functions of (t, x, y, z).
    pub fn from_txyz(
        axes: [Vec<f64>; 4],
        f: impl Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        let axes = axes.to_vec();
        Self {
            axes,
            eval: Arc::new(move |c: &[f64]| f(c[0], c[1], c[2], c[3])),
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.len()).collect()
    }

    /// Evaluates at a multi-index, rejecting non-finite samples.
    pub fn value_at(&self, idx: &[usize]) -> Result<f64> {
        let coords: Vec<f64> = idx
            .iter()
            .zip(&self.axes)
            .map(|(&i, axis)| axis[i])
            .collect();
        let v = (self.eval)(&coords);
        if !v.is_finite() {
            return Err(Error::EvalError {
                index: idx.to_vec(),
                value: v,
            });
        }
        Ok(v)
    }
}

/// Output of [`tt_cross`].
#[derive(Debug, Clone)]
pub struct CrossResult {
    pub tt: TTVector,
    /// Whether the held-out estimate reached the tolerance.
    pub converged: bool,
    /// Relative error on the held-out sample (absolute if the sample of
    /// the function is identically zero).
    pub est_rel_error: f64,
    pub sweeps: usize,
}

/// Maximum-volume row selection for a tall full-rank matrix.
///
/// Returns `r` row indices such that every entry of `M M[I,:]^{-1}` has
/// magnitude at most `1 + delta`.
pub fn maxvol(m: &DMatrix<f64>, delta: f64) -> Result<Vec<usize>> {
    maxvol_with_coeffs(m, delta).map(|(sel, _)| sel)
}

/// Maxvol returning the coefficient matrix `M M[I,:]^{-1}` as well.
pub(crate) fn maxvol_with_coeffs(
    m: &DMatrix<f64>,
    delta: f64,
) -> Result<(Vec<usize>, DMatrix<f64>)> {
    let (rows, cols) = m.shape();
    if rows < cols || cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "maxvol needs a tall matrix, got {rows}x{cols}"
        )));
    }
    let mut sel = initial_rows(m)?;
    let mut coeffs = interpolation_coeffs(m, &sel, 0)?;
    // Swap the worst row in; the submatrix volume grows monotonically.
    let max_iter = 200 + 2 * rows;
    for _ in 0..max_iter {
        let mut best = (0usize, 0usize, 0.0f64);
        for i in 0..rows {
            for j in 0..cols {
                let v = coeffs[(i, j)].abs();
                if v > best.2 {
                    best = (i, j, v);
                }
            }
        }
        if best.2 <= 1.0 + delta {
            break;
        }
        sel[best.1] = best.0;
        coeffs = interpolation_coeffs(m, &sel, best.1)?;
    }
    let reached = coeffs.amax();
    assert!(
        reached <= 1.0 + delta + 1e-8,
        "maxvol postcondition violated: max coefficient {reached}"
    );
    Ok((sel, coeffs))
}

/// Row-pivoted elimination picking a nonsingular starting set.
fn initial_rows(m: &DMatrix<f64>) -> Result<Vec<usize>> {
    let (rows, cols) = m.shape();
    let mut work = m.clone();
    let mut used = vec![false; rows];
    let mut sel = Vec::with_capacity(cols);
    let scale = m.amax().max(f64::MIN_POSITIVE);
    for col in 0..cols {
        let mut pivot = usize::MAX;
        let mut best = 0.0;
        for row in 0..rows {
            if !used[row] && work[(row, col)].abs() > best {
                best = work[(row, col)].abs();
                pivot = row;
            }
        }
        if pivot == usize::MAX || best <= scale * 1e-13 {
            return Err(Error::SingularPivot { column: col });
        }
        used[pivot] = true;
        sel.push(pivot);
        let pivot_row = work.row(pivot).into_owned();
        for row in 0..rows {
            if used[row] {
                continue;
            }
            let factor = work[(row, col)] / pivot_row[col];
            if factor != 0.0 {
                for c in col..cols {
                    work[(row, c)] -= factor * pivot_row[c];
                }
            }
        }
    }
    Ok(sel)
}

/// `M M[sel,:]^{-1}`, recomputed from an LU factorization of the pivot
/// block. `column` is only used for the error report.
fn interpolation_coeffs(
    m: &DMatrix<f64>,
    sel: &[usize],
    column: usize,
) -> Result<DMatrix<f64>> {
    let cols = m.ncols();
    let block = DMatrix::from_fn(cols, cols, |i, j| m[(sel[i], j)]);
    let lu = block.transpose().lu();
    lu.solve(&m.transpose())
        .map(|s| s.transpose())
        .ok_or(Error::SingularPivot { column })
}

/// State of one cross interpolation run.
struct CrossState<'a> {
    f: &'a GridFunction,
    dims: Vec<usize>,
    /// Prefix pivots per bond; `isets[k]` holds length-`k` prefixes.
    isets: Vec<Vec<Vec<usize>>>,
    /// Suffix pivots per bond; `jsets[k]` holds suffixes over axes `k..d`.
    jsets: Vec<Vec<Vec<usize>>>,
    delta: f64,
    /// Extra random candidates mixed into every sampling matrix so the
    /// rank-revealing step can discover directions the pivots miss.
    oversample: usize,
    rng: ChaCha8Rng,
}

impl<'a> CrossState<'a> {
    /// Sampling matrix for core `k`: rows `(prefix, i_k)`, columns the
    /// current suffix set of bond `k + 1`.
    fn sample_matrix(&self, k: usize) -> Result<DMatrix<f64>> {
        let prefixes = &self.isets[k];
        let suffixes = &self.jsets[k + 1];
        let n = self.dims[k];
        let rows = prefixes.len() * n;
        let mut m = DMatrix::<f64>::zeros(rows, suffixes.len());
        let mut idx = Vec::with_capacity(self.dims.len());
        for (a, prefix) in prefixes.iter().enumerate() {
            for i in 0..n {
                for (b, suffix) in suffixes.iter().enumerate() {
                    idx.clear();
                    idx.extend_from_slice(prefix);
                    idx.push(i);
                    idx.extend_from_slice(suffix);
                    m[(a * n + i, b)] = self.f.value_at(&idx)?;
                }
            }
        }
        Ok(m)
    }

    /// Appends up to `extra` fresh random suffixes to bond `k`.
    fn top_up_suffixes(&mut self, k: usize, extra: usize) {
        let d = self.dims.len();
        if k == 0 || k >= d {
            return;
        }
        let left: usize = self.dims[..k].iter().product();
        let right: usize = self.dims[k..].iter().product();
        let cap = left.min(right) + self.oversample;
        for _ in 0..extra {
            if self.jsets[k].len() >= cap.min(right) {
                break;
            }
            for _ in 0..64 {
                let candidate: Vec<usize> = (k..d)
                    .map(|a| self.rng.gen_range(0..self.dims[a]))
                    .collect();
                if !self.jsets[k].contains(&candidate) {
                    self.jsets[k].push(candidate);
                    break;
                }
            }
        }
    }

    /// Left-to-right pass: re-selects prefix sets and emits cores.
    fn sweep_left_right(&mut self) -> Result<TTVector> {
        let d = self.dims.len();
        let mut cores = Vec::with_capacity(d);
        let mut ranks = vec![1usize; d + 1];
        self.isets = vec![vec![vec![]]; d + 1];
        for k in 0..d {
            let n = self.dims[k];
            let r_prev = ranks[k];
            if k < d - 1 {
                self.top_up_suffixes(k + 1, self.oversample);
            }
            if k == d - 1 {
                let m = self.sample_matrix(k)?;
                cores.push(core_from_matrix(&m, r_prev, n, 1));
                break;
            }
            let m = self.sample_matrix(k)?;
            if m.amax() == 0.0 {
                // All sampled fibers vanish; carry a rank-1 zero bond and
                // let the held-out estimate decide whether that is real.
                cores.push(vec![0.0; r_prev * n]);
                ranks[k + 1] = 1;
                self.isets[k + 1] = vec![prefix_of(&self.isets[k][0], k, 0)];
                continue;
            }
            let (basis, _) = truncated_svd(&m, 0.0, Some(m.ncols()));
            let (sel, coeffs) = maxvol_with_coeffs(&basis, self.delta)?;
            let r = basis.ncols();
            cores.push(core_from_matrix(&coeffs, r_prev, n, r));
            ranks[k + 1] = r;
            self.isets[k + 1] = sel
                .iter()
                .map(|&row| prefix_of(&self.isets[k][row / n], k, row % n))
                .collect();
        }
        TTVector::from_cores(cores, self.dims.clone(), ranks)
    }

    /// Right-to-left pass: re-selects suffix sets with the current
    /// prefixes fixed.
    fn sweep_right_left(&mut self) -> Result<()> {
        let d = self.dims.len();
        for k in (1..d).rev() {
            let n = self.dims[k];
            let suffixes = std::mem::take(&mut self.jsets[k + 1]);
            let mut prefixes = self.isets[k].clone();
            for _ in 0..self.oversample {
                for _ in 0..64 {
                    let candidate: Vec<usize> = (0..k)
                        .map(|a| self.rng.gen_range(0..self.dims[a]))
                        .collect();
                    if !prefixes.contains(&candidate) {
                        prefixes.push(candidate);
                        break;
                    }
                }
            }
            // Keep the matrix tall: never ask for more pivots than rows.
            let want = prefixes.len().min(n * suffixes.len());
            let mut m = DMatrix::<f64>::zeros(n * suffixes.len(), want);
            let mut idx = Vec::with_capacity(d);
            for i in 0..n {
                for (b, suffix) in suffixes.iter().enumerate() {
                    for (a, prefix) in prefixes.iter().take(want).enumerate() {
                        idx.clear();
                        idx.extend_from_slice(prefix);
                        idx.push(i);
                        idx.extend_from_slice(suffix);
                        m[(i * suffixes.len() + b, a)] = self.f.value_at(&idx)?;
                    }
                }
            }
            let new_set = if m.amax() == 0.0 {
                vec![suffix_of(0, &suffixes[0])]
            } else {
                let (basis, _) = truncated_svd(&m, 0.0, Some(m.ncols()));
                let sel = maxvol(&basis, self.delta)?;
                sel.iter()
                    .map(|&row| suffix_of(row / suffixes.len(), &suffixes[row % suffixes.len()]))
                    .collect()
            };
            self.jsets[k + 1] = suffixes;
            self.jsets[k] = new_set;
        }
        Ok(())
    }

    /// Appends one fresh random suffix per interior bond.
    fn enrich(&mut self) {
        let d = self.dims.len();
        for k in 1..d {
            self.top_up_suffixes(k, 1);
        }
    }
}

fn prefix_of(prefix: &[usize], _axis: usize, i: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(prefix.len() + 1);
    out.extend_from_slice(prefix);
    out.push(i);
    out
}

fn suffix_of(i: usize, suffix: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(suffix.len() + 1);
    out.push(i);
    out.extend_from_slice(suffix);
    out
}

fn core_from_matrix(m: &DMatrix<f64>, r0: usize, n: usize, r1: usize) -> Vec<f64> {
    debug_assert_eq!(m.nrows(), r0 * n);
    debug_assert_eq!(m.ncols(), r1);
    let mut out = Vec::with_capacity(r0 * n * r1);
    for row in 0..r0 * n {
        for col in 0..r1 {
            out.push(m[(row, col)]);
        }
    }
    out
}

/// Cross interpolation of `f` into TT form.
///
/// Sweeps alternate until the change between successive iterates and the
/// held-out error estimate drop below `cfg.tol`, or `cfg.max_sweeps` is
/// reached, in which case the best iterate is returned with
/// `converged = false`.
pub fn tt_cross(f: &GridFunction, cfg: &CrossConfig) -> Result<CrossResult> {
    cfg.validate()?;
    let dims = f.dims();
    let d = dims.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    if d == 1 {
        let mut core = Vec::with_capacity(dims[0]);
        for i in 0..dims[0] {
            core.push(f.value_at(&[i])?);
        }
        return Ok(CrossResult {
            tt: TTVector::from_cores(vec![core], dims, vec![1, 1])?,
            converged: true,
            est_rel_error: 0.0,
            sweeps: 0,
        });
    }

    // Fixed held-out sample, drawn once.
    let holdout: Vec<Vec<usize>> = (0..cfg.heldout_samples.max(1))
        .map(|_| dims.iter().map(|&n| rng.gen_range(0..n)).collect())
        .collect();
    let mut holdout_values = Vec::with_capacity(holdout.len());
    for idx in &holdout {
        holdout_values.push(f.value_at(idx)?);
    }
    let holdout_norm: f64 = holdout_values.iter().map(|v| v * v).sum::<f64>().sqrt();

    let mut state = CrossState {
        f,
        dims: dims.clone(),
        isets: vec![vec![vec![]]; d + 1],
        jsets: vec![Vec::new(); d + 1],
        delta: cfg.maxvol_delta,
        oversample: 2,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1)),
    };
    state.jsets[d] = vec![vec![]];
    for k in 1..d {
        let left: usize = dims[..k].iter().product();
        let right: usize = dims[k..].iter().product();
        let want = cfg.initial_rank.min(left).min(right);
        let mut set: Vec<Vec<usize>> = Vec::new();
        let mut attempts = 0;
        while set.len() < want && attempts < 200 * want {
            attempts += 1;
            let candidate: Vec<usize> = (k..d).map(|a| rng.gen_range(0..dims[a])).collect();
            if !set.contains(&candidate) {
                set.push(candidate);
            }
        }
        state.jsets[k] = set;
    }

    let estimate = |tt: &TTVector| -> f64 {
        let diff: f64 = holdout
            .iter()
            .zip(&holdout_values)
            .map(|(idx, v)| {
                let e = tt.get(idx) - v;
                e * e
            })
            .sum();
        if holdout_norm > 0.0 {
            diff.sqrt() / holdout_norm
        } else {
            diff.sqrt()
        }
    };

    let mut best: Option<(TTVector, f64)> = None;
    let mut previous: Option<(TTVector, f64)> = None;
    let mut sweeps = 0;
    for sweep in 1..=cfg.max_sweeps {
        sweeps = sweep;
        let iterate = state.sweep_left_right()?;
        let est = estimate(&iterate);
        if best.as_ref().map_or(true, |(_, b)| est < *b) {
            best = Some((iterate.clone(), est));
        }
        if est <= cfg.tol {
            return Ok(CrossResult {
                tt: iterate,
                converged: true,
                est_rel_error: est,
                sweeps,
            });
        }
        // Pivot refinement at fixed ranks stalls when the held-out
        // estimate stops contracting decisively (or the iterate stops
        // moving); then grow the rank by one.
        let stalled = previous
            .as_ref()
            .map(|(prev, prev_est)| {
                if est >= 0.1 * prev_est {
                    return true;
                }
                let norm = iterate.norm();
                if norm == 0.0 {
                    return true;
                }
                let diff = iterate
                    .add(&prev.scale(-1.0))
                    .map(|d| d.norm())
                    .unwrap_or(0.0);
                diff / norm <= cfg.tol * 10.0
            })
            .unwrap_or(false);
        previous = Some((iterate, est));
        state.sweep_right_left()?;
        if stalled {
            state.enrich();
        }
    }
    let (tt, est) = best.expect("at least one sweep ran");
    Ok(CrossResult {
        tt,
        converged: false,
        est_rel_error: est,
        sweeps,
    })
}

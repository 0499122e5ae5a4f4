//! Chebyshev-Gauss-Lobatto grids and spectral differentiation matrices.
//!
//! Nodes are stored in ascending order (`nodes[0] = a`, `nodes[N] = b`),
//! so index 0 of a time grid is the initial time and the interior index
//! sets of the space-time assembly read off directly. Differentiation
//! matrices are built from the barycentric weights of the actual nodes,
//! which folds the affine interval scaling into the entries.

use nalgebra::DMatrix;

use crate::{Error, Result};

/// One coordinate's collocation grid: `N + 1` Chebyshev-Gauss-Lobatto
/// nodes on the interval `[a, b]`, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebGrid1D {
    /// Polynomial degree `N`; the grid has `N + 1` nodes.
    pub degree: usize,
    /// The interval `(a, b)` with `a < b`.
    pub interval: (f64, f64),
    /// Node coordinates, strictly ascending, endpoints exact.
    pub nodes: Vec<f64>,
}

impl ChebGrid1D {
    /// Number of nodes, `N + 1`.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// True when the grid is degenerate (never for a constructed grid).
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Dense spectral differentiation matrix on a [`ChebGrid1D`].
#[derive(Debug, Clone, PartialEq)]
pub struct DiffMatrix {
    /// Derivative order, 1 or 2.
    pub order: u8,
    /// `(N+1) x (N+1)` entries.
    pub matrix: DMatrix<f64>,
}

/// Chebyshev-Gauss-Lobatto nodes of degree `n` mapped to `interval`.
///
/// `nodes[k] = (a+b)/2 - ((b-a)/2) cos(k pi / N)`, so `nodes[0] = a` and
/// `nodes[N] = b` exactly.
pub fn cgl_nodes(n: usize, interval: (f64, f64)) -> Result<ChebGrid1D> {
    let (a, b) = interval;
    if n < 1 {
        return Err(Error::InvalidArgument(format!(
            "grid degree must be at least 1, got {n}"
        )));
    }
    if !(a < b) {
        return Err(Error::InvalidArgument(format!(
            "interval must satisfy a < b, got ({a}, {b})"
        )));
    }
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut nodes: Vec<f64> = (0..=n)
        .map(|k| mid - half * (std::f64::consts::PI * k as f64 / n as f64).cos())
        .collect();
    // Endpoints exact regardless of rounding in cos.
    nodes[0] = a;
    nodes[n] = b;
    Ok(ChebGrid1D {
        degree: n,
        interval,
        nodes,
    })
}

/// Barycentric weights of the CGL grid: `(-1)^k`, halved at the endpoints.
///
/// Only weight ratios enter the differentiation formula, so the common
/// interval-dependent factor is dropped.
fn barycentric_weights(n: usize) -> Vec<f64> {
    (0..=n)
        .map(|k| {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            if k == 0 || k == n {
                0.5 * sign
            } else {
                sign
            }
        })
        .collect()
}

/// First-order spectral differentiation matrix on `grid`.
///
/// Entry `(i, j)` is the derivative of the `j`-th cardinal polynomial at
/// node `i`. Off-diagonal entries come from the barycentric formula
/// `d_ij = (w_j / w_i) / (x_i - x_j)`; diagonals use the negative-sum
/// trick so each row sums to zero exactly.
pub fn diff_matrix(grid: &ChebGrid1D) -> DiffMatrix {
    let n = grid.degree;
    let x = &grid.nodes;
    let w = barycentric_weights(n);
    let mut d = DMatrix::<f64>::zeros(n + 1, n + 1);
    for i in 0..=n {
        let mut row_sum = 0.0;
        for j in 0..=n {
            if i != j {
                let v = (w[j] / w[i]) / (x[i] - x[j]);
                d[(i, j)] = v;
                row_sum += v;
            }
        }
        d[(i, i)] = -row_sum;
    }
    DiffMatrix { order: 1, matrix: d }
}

/// Second-order differentiation matrix as the square of a first-order one.
pub fn second_diff_matrix(first: &DiffMatrix) -> Result<DiffMatrix> {
    if first.order != 1 {
        return Err(Error::InvalidArgument(format!(
            "second_diff_matrix expects an order-1 matrix, got order {}",
            first.order
        )));
    }
    Ok(DiffMatrix {
        order: 2,
        matrix: &first.matrix * &first.matrix,
    })
}

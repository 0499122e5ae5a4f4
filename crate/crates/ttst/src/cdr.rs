//! Assembly of the discrete convection-diffusion-reaction system.
//!
//! The space-time operator is a sum of terms of the form
//! `diag(coefficient) * (M_t kron M_x kron M_y kron M_z)`, where each
//! factor is a one-dimensional identity or differentiation matrix. Every
//! assembly path here (interior TT operator, rectangular boundary map,
//! dense oracle) is an emitter over that shared term list:
//!
//! * restricting a Kronecker product to a Cartesian index set restricts
//!   each factor independently, so interior and boundary-map operators
//!   reuse the same factors;
//! * coefficients are cross-interpolated on exactly the row grid the
//!   operator acts from, then lifted to diagonal TT-matrices.
//!
//! The boundary tensor moves BC/IC data to the right-hand side: the map
//! operator takes values on the full grid to residual contributions on
//! interior nodes, and is applied to a tensor that equals `g`/`h` on
//! BC/IC nodes and zero inside. The emitters are dimension-generic; the
//! time-stepping march reuses them for purely spatial operators.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::chebyshev::{cgl_nodes, diff_matrix, second_diff_matrix, ChebGrid1D};
use crate::cross::{tt_cross, CrossConfig, GridFunction};
use crate::tensor::{guard_dense, DenseTensor, MultiIndexMap};
use crate::tt::TTVector;
use crate::tt_matrix::TTMatrix;
use crate::{Error, Result};

/// Scalar field over (t, x, y, z).
pub type SpaceTimeFn = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;
/// Scalar field over (x, y, z).
pub type SpaceFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Data of the continuous problem: coefficients, forcing, and BC/IC.
#[derive(Clone)]
pub struct CdrProblem {
    /// Space box, one interval per coordinate.
    pub domain: [(f64, f64); 3],
    /// Time horizon `(0, T]`.
    pub t_final: f64,
    /// Diffusion coefficient `kappa(t, x, y, z)`.
    pub kappa: SpaceTimeFn,
    /// Convection field components.
    pub convection: [SpaceTimeFn; 3],
    /// Reaction coefficient `c(t, x, y, z)`.
    pub reaction: SpaceTimeFn,
    /// Forcing `f(t, x, y, z)`.
    pub forcing: SpaceTimeFn,
    /// Dirichlet data `g(t, x, y, z)` on the spatial boundary.
    pub boundary: SpaceTimeFn,
    /// Initial data `h(x, y, z)`.
    pub initial: SpaceFn,
}

impl CdrProblem {
    /// Problem with constant coefficients and caller-supplied data.
    pub fn constant_coefficients(
        domain: [(f64, f64); 3],
        t_final: f64,
        kappa: f64,
        convection: [f64; 3],
        reaction: f64,
        forcing: impl Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static,
        boundary: impl Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static,
        initial: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        let [bx, by, bz] = convection;
        Self {
            domain,
            t_final,
            kappa: Arc::new(move |_, _, _, _| kappa),
            convection: [
                Arc::new(move |_, _, _, _| bx),
                Arc::new(move |_, _, _, _| by),
                Arc::new(move |_, _, _, _| bz),
            ],
            reaction: Arc::new(move |_, _, _, _| reaction),
            forcing: Arc::new(forcing),
            boundary: Arc::new(boundary),
            initial: Arc::new(initial),
        }
    }
}

/// Time discretization of the space-time system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeScheme {
    /// Chebyshev collocation in time.
    Spectral,
    /// Uniform grid with the implicit first-order difference matrix.
    BackwardEuler,
}

/// Degree-N collocation grid over (t, x, y, z) with its interior split.
///
/// Interior time indices are `1..=N` (the final time is an unknown);
/// interior space indices are `1..=N-1`.
#[derive(Debug, Clone)]
pub struct SpaceTimeGrid {
    pub degree: usize,
    pub scheme: TimeScheme,
    /// Ascending time nodes with `t_nodes[0] = 0`.
    pub t_nodes: Vec<f64>,
    pub space: [ChebGrid1D; 3],
}

impl SpaceTimeGrid {
    pub fn new(
        degree: usize,
        domain: [(f64, f64); 3],
        t_final: f64,
        scheme: TimeScheme,
    ) -> Result<Self> {
        if degree < 2 {
            return Err(Error::InvalidArgument(
                "space-time grid needs degree >= 2 for a non-empty interior".into(),
            ));
        }
        if !(t_final > 0.0) {
            return Err(Error::InvalidArgument(
                "time horizon must be positive".into(),
            ));
        }
        let t_nodes = match scheme {
            TimeScheme::Spectral => cgl_nodes(degree, (0.0, t_final))?.nodes,
            TimeScheme::BackwardEuler => {
                let dt = t_final / degree as f64;
                (0..=degree).map(|k| k as f64 * dt).collect()
            }
        };
        Ok(Self {
            degree,
            scheme,
            t_nodes,
            space: [
                cgl_nodes(degree, domain[0])?,
                cgl_nodes(degree, domain[1])?,
                cgl_nodes(degree, domain[2])?,
            ],
        })
    }

    /// `[N, N-1, N-1, N-1]`.
    pub fn interior_dims(&self) -> [usize; 4] {
        let n = self.degree;
        [n, n - 1, n - 1, n - 1]
    }

    /// `[N+1; 4]`.
    pub fn full_dims(&self) -> [usize; 4] {
        [self.degree + 1; 4]
    }

    /// Full node coordinates of one axis (0 = t).
    pub fn full_nodes(&self, axis: usize) -> &[f64] {
        if axis == 0 {
            &self.t_nodes
        } else {
            &self.space[axis - 1].nodes
        }
    }

    /// Interior node indices of one axis.
    pub fn interior_indices(&self, axis: usize) -> Vec<usize> {
        if axis == 0 {
            (1..=self.degree).collect()
        } else {
            (1..self.degree).collect()
        }
    }

    /// Interior node coordinates of one axis.
    pub fn interior_nodes(&self, axis: usize) -> Vec<f64> {
        let nodes = self.full_nodes(axis);
        self.interior_indices(axis)
            .into_iter()
            .map(|i| nodes[i])
            .collect()
    }

    /// First-order time differentiation matrix on the full time grid.
    pub fn time_matrix(&self) -> DMatrix<f64> {
        match self.scheme {
            TimeScheme::Spectral => {
                let grid = ChebGrid1D {
                    degree: self.degree,
                    interval: (0.0, *self.t_nodes.last().unwrap()),
                    nodes: self.t_nodes.clone(),
                };
                diff_matrix(&grid).matrix
            }
            TimeScheme::BackwardEuler => {
                backward_euler_time_matrix(self.degree, *self.t_nodes.last().unwrap())
            }
        }
    }

    /// Wall coordinates per spatial axis (exact endpoint values).
    pub fn domain_walls(&self) -> [(f64, f64); 3] {
        [
            self.space[0].interval,
            self.space[1].interval,
            self.space[2].interval,
        ]
    }

    /// True when the node with the given full-grid index is a BC/IC node.
    pub fn is_boundary_index(&self, idx: &[usize; 4]) -> bool {
        let n = self.degree;
        let spatial_wall = (1..4).any(|a| idx[a] == 0 || idx[a] == n);
        spatial_wall || idx[0] == 0
    }
}

/// Bidiagonal implicit-difference time matrix: `1/dt` on the diagonal,
/// `-1/dt` on the subdiagonal, size `(N+1) x (N+1)`.
pub fn backward_euler_time_matrix(degree: usize, t_final: f64) -> DMatrix<f64> {
    let dt = t_final / degree as f64;
    let mut t = DMatrix::<f64>::zeros(degree + 1, degree + 1);
    for i in 0..=degree {
        t[(i, i)] = 1.0 / dt;
        if i > 0 {
            t[(i, i - 1)] = -1.0 / dt;
        }
    }
    t
}

/// Assembled interior system.
#[derive(Clone)]
pub struct DiscreteSystem {
    /// Interior operator over dims `[N, N-1, N-1, N-1]`.
    pub operator: TTMatrix,
    /// `F - F_boundary` on the interior grid.
    pub rhs: TTVector,
    pub grid: SpaceTimeGrid,
    pub assembly_tol: f64,
}

/// Coefficient over per-axis coordinates, used by the generic emitters.
pub type CoeffFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// One additive operator term `scale * diag(coeff) * kron(factors)`.
/// Factors are full-grid matrices, one per axis; emitters restrict them.
pub struct KronTerm {
    pub scale: f64,
    pub coeff: Option<CoeffFn>,
    pub factors: Vec<DMatrix<f64>>,
}

pub fn restrict(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

fn coeff_of(f: &SpaceTimeFn) -> CoeffFn {
    let f = f.clone();
    Arc::new(move |c: &[f64]| f(c[0], c[1], c[2], c[3]))
}

fn subset(nodes: &[f64], set: &[usize]) -> Vec<f64> {
    set.iter().map(|&i| nodes[i]).collect()
}

/// Emits the TT form of a term list restricted to `rows x cols`, with
/// coefficients cross-interpolated on the row grid.
pub fn tt_from_terms(
    terms: &[KronTerm],
    axes: &[Vec<f64>],
    rows: &[Vec<usize>],
    cols: &[Vec<usize>],
    tol: f64,
    cross: &CrossConfig,
) -> Result<TTMatrix> {
    let row_nodes: Vec<Vec<f64>> = axes
        .iter()
        .zip(rows)
        .map(|(nodes, set)| subset(nodes, set))
        .collect();
    let mut acc: Option<TTMatrix> = None;
    for term in terms {
        let factors: Vec<DMatrix<f64>> = term
            .factors
            .iter()
            .enumerate()
            .map(|(a, f)| restrict(f, &rows[a], &cols[a]))
            .collect();
        let mut op = TTMatrix::from_kronecker(&factors);
        if let Some(coeff) = &term.coeff {
            let coeff = coeff.clone();
            let f = GridFunction::new(row_nodes.clone(), move |c: &[f64]| coeff(c))?;
            let result = tt_cross(&f, cross)?;
            if !result.converged {
                return Err(Error::NoConvergence(format!(
                    "coefficient cross interpolation stalled at estimated error {:.3e}",
                    result.est_rel_error
                )));
            }
            op = TTMatrix::diagonal(&result.tt).matmul(&op)?;
        }
        op = op.scale(term.scale);
        acc = Some(match acc {
            None => op,
            Some(sum) => sum.add(&op)?.round(tol, None),
        });
    }
    Ok(acc.expect("term list is never empty").round(tol, None))
}

/// Dense matrix of a term list restricted to `rows x cols` (oracle path;
/// coefficients are evaluated pointwise, no cross interpolation).
pub fn dense_from_terms(
    terms: &[KronTerm],
    axes: &[Vec<f64>],
    rows: &[Vec<usize>],
    cols: &[Vec<usize>],
) -> Result<DMatrix<f64>> {
    let d = axes.len();
    let row_dims: Vec<usize> = rows.iter().map(|r| r.len()).collect();
    let col_dims: Vec<usize> = cols.iter().map(|c| c.len()).collect();
    let m: usize = row_dims.iter().product();
    let n: usize = col_dims.iter().product();
    guard_dense(&[m, n])?;
    let row_map = MultiIndexMap::new(row_dims);
    let col_map = MultiIndexMap::new(col_dims);
    let row_nodes: Vec<Vec<f64>> = axes
        .iter()
        .zip(rows)
        .map(|(nodes, set)| subset(nodes, set))
        .collect();
    let mut out = DMatrix::<f64>::zeros(m, n);
    let mut coords = vec![0.0; d];
    for term in terms {
        let factors: Vec<DMatrix<f64>> = term
            .factors
            .iter()
            .enumerate()
            .map(|(a, f)| restrict(f, &rows[a], &cols[a]))
            .collect();
        for r in 0..m {
            let ridx = row_map.multi(r);
            let scale = match &term.coeff {
                Some(coeff) => {
                    for a in 0..d {
                        coords[a] = row_nodes[a][ridx[a]];
                    }
                    term.scale * coeff(&coords)
                }
                None => term.scale,
            };
            if scale == 0.0 {
                continue;
            }
            for c in 0..n {
                let cidx = col_map.multi(c);
                let mut v = scale;
                for a in 0..d {
                    v *= factors[a][(ridx[a], cidx[a])];
                    if v == 0.0 {
                        break;
                    }
                }
                if v != 0.0 {
                    out[(r, c)] += v;
                }
            }
        }
    }
    Ok(out)
}

/// Applies the full-grid operator of a term list to a full-grid tensor
/// and restricts the result to the row sets (used to build the dense
/// boundary contribution without forming the rectangular map).
pub fn dense_apply_restrict(
    terms: &[KronTerm],
    axes: &[Vec<f64>],
    u: &DenseTensor,
    rows: &[Vec<usize>],
) -> Result<DenseTensor> {
    let d = axes.len();
    let full: Vec<usize> = axes.iter().map(|a| a.len()).collect();
    if u.dims != full {
        return Err(Error::DimMismatch("expected a full-grid tensor".into()));
    }
    let mut acc = DenseTensor::zeros(full.clone())?;
    let mut coords = vec![0.0; d];
    for term in terms {
        let mut w = u.clone();
        for a in 0..d {
            w = w.mode_apply(&term.factors[a], a)?;
        }
        let map = w.index_map();
        for lin in 0..w.len() {
            let scale = match &term.coeff {
                Some(coeff) => {
                    let idx = map.multi(lin);
                    for a in 0..d {
                        coords[a] = axes[a][idx[a]];
                    }
                    term.scale * coeff(&coords)
                }
                None => term.scale,
            };
            acc.data[lin] += scale * w.data[lin];
        }
    }
    let dims: Vec<usize> = rows.iter().map(|s| s.len()).collect();
    let mut out = DenseTensor::zeros(dims)?;
    let out_map = out.index_map();
    let acc_map = acc.index_map();
    for lin in 0..out.len() {
        let idx = out_map.multi(lin);
        let full_idx: Vec<usize> = (0..d).map(|a| rows[a][idx[a]]).collect();
        out.data[lin] = acc.data[acc_map.linear(&full_idx)];
    }
    Ok(out)
}

/// Matrix-free action of the `rows x rows` restriction of a term list.
pub fn dense_restricted_apply(
    terms: &[KronTerm],
    axes: &[Vec<f64>],
    rows: &[Vec<usize>],
    u: &DenseTensor,
) -> Result<DenseTensor> {
    let d = axes.len();
    let row_nodes: Vec<Vec<f64>> = axes
        .iter()
        .zip(rows)
        .map(|(nodes, set)| subset(nodes, set))
        .collect();
    let mut acc = DenseTensor::zeros(u.dims.clone())?;
    let mut coords = vec![0.0; d];
    for term in terms {
        let mut w = u.clone();
        for a in 0..d {
            w = w.mode_apply(&restrict(&term.factors[a], &rows[a], &rows[a]), a)?;
        }
        let map = w.index_map();
        for lin in 0..w.len() {
            let scale = match &term.coeff {
                Some(coeff) => {
                    let idx = map.multi(lin);
                    for a in 0..d {
                        coords[a] = row_nodes[a][idx[a]];
                    }
                    term.scale * coeff(&coords)
                }
                None => term.scale,
            };
            acc.data[lin] += scale * w.data[lin];
        }
    }
    Ok(acc)
}

/// Diagonal of the `rows x rows` restriction of a term list.
pub fn dense_restricted_diagonal(
    terms: &[KronTerm],
    axes: &[Vec<f64>],
    rows: &[Vec<usize>],
) -> Result<DenseTensor> {
    let d = axes.len();
    let dims: Vec<usize> = rows.iter().map(|s| s.len()).collect();
    let row_nodes: Vec<Vec<f64>> = axes
        .iter()
        .zip(rows)
        .map(|(nodes, set)| subset(nodes, set))
        .collect();
    let mut out = DenseTensor::zeros(dims)?;
    let map = out.index_map();
    let mut coords = vec![0.0; d];
    for term in terms {
        for lin in 0..out.len() {
            let idx = map.multi(lin);
            let mut v = term.scale;
            for a in 0..d {
                let node = rows[a][idx[a]];
                v *= term.factors[a][(node, node)];
                if v == 0.0 {
                    break;
                }
            }
            if v == 0.0 {
                continue;
            }
            if let Some(coeff) = &term.coeff {
                for a in 0..d {
                    coords[a] = row_nodes[a][idx[a]];
                }
                v *= coeff(&coords);
            }
            out.data[lin] += v;
        }
    }
    Ok(out)
}

/// Positive time-derivative term on the full grid.
fn time_term(grid: &SpaceTimeGrid) -> KronTerm {
    let np1 = grid.degree + 1;
    let eye = DMatrix::identity(np1, np1);
    KronTerm {
        scale: 1.0,
        coeff: None,
        factors: vec![grid.time_matrix(), eye.clone(), eye.clone(), eye],
    }
}

/// Positive diffusion terms `diag(kappa) * (second derivative per axis)`.
fn diffusion_terms(problem: &CdrProblem, grid: &SpaceTimeGrid) -> Vec<KronTerm> {
    let np1 = grid.degree + 1;
    let eye = DMatrix::identity(np1, np1);
    (0..3)
        .map(|axis| {
            let sxx = second_diff_matrix(&diff_matrix(&grid.space[axis]))
                .expect("order-1 input")
                .matrix;
            let mut factors = vec![eye.clone(), eye.clone(), eye.clone(), eye.clone()];
            factors[axis + 1] = sxx;
            KronTerm {
                scale: 1.0,
                coeff: Some(coeff_of(&problem.kappa)),
                factors,
            }
        })
        .collect()
}

fn convection_terms(problem: &CdrProblem, grid: &SpaceTimeGrid) -> Vec<KronTerm> {
    let np1 = grid.degree + 1;
    let eye = DMatrix::identity(np1, np1);
    (0..3)
        .map(|axis| {
            let sx = diff_matrix(&grid.space[axis]).matrix;
            let mut factors = vec![eye.clone(), eye.clone(), eye.clone(), eye.clone()];
            factors[axis + 1] = sx;
            KronTerm {
                scale: 1.0,
                coeff: Some(coeff_of(&problem.convection[axis])),
                factors,
            }
        })
        .collect()
}

fn reaction_term(problem: &CdrProblem, grid: &SpaceTimeGrid) -> KronTerm {
    let np1 = grid.degree + 1;
    let eye = DMatrix::identity(np1, np1);
    KronTerm {
        scale: 1.0,
        coeff: Some(coeff_of(&problem.reaction)),
        factors: vec![eye.clone(), eye.clone(), eye.clone(), eye],
    }
}

/// All terms of the discrete system with its sign convention: the PDE
/// moves `-kappa lap(u)` to the left-hand side, so diffusion enters
/// negated while time, convection, and reaction enter positively.
pub fn system_terms(problem: &CdrProblem, grid: &SpaceTimeGrid) -> Vec<KronTerm> {
    let mut terms = vec![time_term(grid)];
    for mut t in diffusion_terms(problem, grid) {
        t.scale = -1.0;
        terms.push(t);
    }
    terms.extend(convection_terms(problem, grid));
    terms.push(reaction_term(problem, grid));
    terms
}

pub fn interior_sets(grid: &SpaceTimeGrid) -> Vec<Vec<usize>> {
    (0..4).map(|a| grid.interior_indices(a)).collect()
}

fn all_sets(grid: &SpaceTimeGrid) -> Vec<Vec<usize>> {
    (0..4)
        .map(|a| (0..grid.full_nodes(a).len()).collect())
        .collect()
}

pub fn grid_axes(grid: &SpaceTimeGrid) -> Vec<Vec<f64>> {
    (0..4).map(|a| grid.full_nodes(a).to_vec()).collect()
}

/// TT time operator on the interior grid (rows of the time
/// differentiation matrix at interior times, identities in space).
pub fn assemble_time_spectral(grid: &SpaceTimeGrid) -> Result<TTMatrix> {
    let sets = interior_sets(grid);
    let term = time_term(grid);
    let factors: Vec<DMatrix<f64>> = term
        .factors
        .iter()
        .enumerate()
        .map(|(a, f)| restrict(f, &sets[a], &sets[a]))
        .collect();
    Ok(TTMatrix::from_kronecker(&factors))
}

/// Backward-Euler time matrix plus its interior space-time TT lift.
pub fn assemble_time_backward_euler(
    degree: usize,
    t_final: f64,
) -> Result<(DMatrix<f64>, TTMatrix)> {
    if degree < 2 || !(t_final > 0.0) {
        return Err(Error::InvalidArgument(
            "backward Euler lift needs degree >= 2 and a positive horizon".into(),
        ));
    }
    let t = backward_euler_time_matrix(degree, t_final);
    let it: Vec<usize> = (1..=degree).collect();
    let is: Vec<usize> = (1..degree).collect();
    let eye = DMatrix::identity(degree + 1, degree + 1);
    let eye_int = restrict(&eye, &is, &is);
    let lift = TTMatrix::from_kronecker(&[
        restrict(&t, &it, &it),
        eye_int.clone(),
        eye_int.clone(),
        eye_int,
    ]);
    Ok((t, lift))
}

/// Positive diffusion operator `diag(kappa) * laplacian` on the interior
/// grid. The system assembly negates it.
pub fn assemble_diffusion(
    problem: &CdrProblem,
    grid: &SpaceTimeGrid,
    tol: f64,
    cross: &CrossConfig,
) -> Result<TTMatrix> {
    let sets = interior_sets(grid);
    let axes = grid_axes(grid);
    // Laplacian part without the coefficient.
    let mut lap: Option<TTMatrix> = None;
    for term in diffusion_terms(problem, grid) {
        let factors: Vec<DMatrix<f64>> = term
            .factors
            .iter()
            .enumerate()
            .map(|(a, f)| restrict(f, &sets[a], &sets[a]))
            .collect();
        let op = TTMatrix::from_kronecker(&factors);
        lap = Some(match lap {
            None => op,
            Some(sum) => sum.add(&op)?.round(tol, None),
        });
    }
    let lap = lap.expect("three axes");
    let kappa = coeff_of(&problem.kappa);
    let row_nodes: Vec<Vec<f64>> = axes
        .iter()
        .zip(&sets)
        .map(|(nodes, set)| subset(nodes, set))
        .collect();
    let f = GridFunction::new(row_nodes, move |c: &[f64]| kappa(c))?;
    let result = tt_cross(&f, cross)?;
    if !result.converged {
        return Err(Error::NoConvergence(format!(
            "diffusion coefficient cross stalled at {:.3e}",
            result.est_rel_error
        )));
    }
    Ok(TTMatrix::diagonal(&result.tt).matmul(&lap)?.round(tol, None))
}

/// Convection operator on the interior grid.
pub fn assemble_convection(
    problem: &CdrProblem,
    grid: &SpaceTimeGrid,
    tol: f64,
    cross: &CrossConfig,
) -> Result<TTMatrix> {
    let sets = interior_sets(grid);
    tt_from_terms(
        &convection_terms(problem, grid),
        &grid_axes(grid),
        &sets,
        &sets,
        tol,
        cross,
    )
}

/// Reaction operator (a diagonal lift of the reaction coefficient).
pub fn assemble_reaction(
    problem: &CdrProblem,
    grid: &SpaceTimeGrid,
    tol: f64,
    cross: &CrossConfig,
) -> Result<TTMatrix> {
    let sets = interior_sets(grid);
    tt_from_terms(
        &[reaction_term(problem, grid)],
        &grid_axes(grid),
        &sets,
        &sets,
        tol,
        cross,
    )
}

/// Forcing tensor on the interior grid.
pub fn assemble_rhs(
    problem: &CdrProblem,
    grid: &SpaceTimeGrid,
    tol: f64,
    cross: &CrossConfig,
) -> Result<TTVector> {
    let sets = interior_sets(grid);
    let axes = grid_axes(grid);
    let forcing = coeff_of(&problem.forcing);
    let row_nodes: Vec<Vec<f64>> = axes
        .iter()
        .zip(&sets)
        .map(|(nodes, set)| subset(nodes, set))
        .collect();
    let f = GridFunction::new(row_nodes, move |c: &[f64]| forcing(c))?;
    let result = tt_cross(&f, cross)?;
    if !result.converged {
        return Err(Error::NoConvergence(format!(
            "forcing cross stalled at {:.3e}",
            result.est_rel_error
        )));
    }
    Ok(result.tt.round(tol, None))
}

/// The full-grid function holding `g` on spatial walls, `h` on the
/// initial slice, and zero on interior nodes. Walls take precedence
/// where a corner is both; endpoint coordinates are exact so the
/// classification is by value.
pub fn boundary_value_function(problem: &CdrProblem, grid: &SpaceTimeGrid) -> GridFunction {
    let walls = grid.domain_walls();
    let g = problem.boundary.clone();
    let h = problem.initial.clone();
    let axes = grid_axes(grid);
    GridFunction::new(axes, move |c: &[f64]| {
        let (t, x, y, z) = (c[0], c[1], c[2], c[3]);
        let on_wall = (x == walls[0].0 || x == walls[0].1)
            || (y == walls[1].0 || y == walls[1].1)
            || (z == walls[2].0 || z == walls[2].1);
        if on_wall {
            g(t, x, y, z)
        } else if t == 0.0 {
            h(x, y, z)
        } else {
            0.0
        }
    })
    .expect("axes are non-empty")
}

/// Largest gap `|g(0, x) - h(x)|` over spatial wall nodes at t = 0.
pub fn ic_bc_gap(problem: &CdrProblem, grid: &SpaceTimeGrid) -> f64 {
    let mut gap: f64 = 0.0;
    let n = grid.degree;
    let map = MultiIndexMap::new(vec![n + 1, n + 1, n + 1]);
    for lin in 0..map.len() {
        let idx = map.multi(lin);
        if idx.iter().all(|&i| i != 0 && i != n) {
            continue;
        }
        let x = grid.space[0].nodes[idx[0]];
        let y = grid.space[1].nodes[idx[1]];
        let z = grid.space[2].nodes[idx[2]];
        gap = gap.max(((problem.boundary)(0.0, x, y, z) - (problem.initial)(x, y, z)).abs());
    }
    gap
}

/// Rectangular map from all nodes to interior nodes, in TT form, with
/// the system sign convention (diffusion negated).
pub fn assemble_boundary_map(
    problem: &CdrProblem,
    grid: &SpaceTimeGrid,
    tol: f64,
    cross: &CrossConfig,
) -> Result<TTMatrix> {
    let rows = interior_sets(grid);
    let cols = all_sets(grid);
    tt_from_terms(
        &system_terms(problem, grid),
        &grid_axes(grid),
        &rows,
        &cols,
        tol,
        cross,
    )
}

/// Boundary contribution `F_bd = A_map * G_bd`, in TT form.
///
/// Homogeneous data (`g = h = 0`) yields an exactly zero tensor.
pub fn assemble_boundary(
    problem: &CdrProblem,
    grid: &SpaceTimeGrid,
    tol: f64,
    cross: &CrossConfig,
) -> Result<TTVector> {
    let gap = ic_bc_gap(problem, grid);
    if gap > 1e-10 {
        eprintln!(
            "warning: boundary and initial data disagree by {gap:.3e} at t = 0; \
             wall values take precedence"
        );
    }
    let g_bd = tt_cross(&boundary_value_function(problem, grid), cross)?;
    if !g_bd.converged {
        return Err(Error::NoConvergence(format!(
            "boundary data cross stalled at {:.3e}",
            g_bd.est_rel_error
        )));
    }
    if g_bd.tt.norm() == 0.0 {
        let dims = grid.interior_dims();
        return Ok(TTVector::zeros(&dims));
    }
    let map = assemble_boundary_map(problem, grid, tol, cross)?;
    Ok(map.apply(&g_bd.tt)?.round(tol, None))
}

/// Assembles the interior TT system for the grid's time scheme.
pub fn assemble_system(
    problem: &CdrProblem,
    grid: &SpaceTimeGrid,
    tol: f64,
    cross: &CrossConfig,
) -> Result<DiscreteSystem> {
    let sets = interior_sets(grid);
    let operator = tt_from_terms(
        &system_terms(problem, grid),
        &grid_axes(grid),
        &sets,
        &sets,
        tol,
        cross,
    )?;
    let forcing = assemble_rhs(problem, grid, tol, cross)?;
    let boundary = assemble_boundary(problem, grid, tol, cross)?;
    let rhs = forcing.add(&boundary.scale(-1.0))?.round(tol, None);
    Ok(DiscreteSystem {
        operator,
        rhs,
        grid: grid.clone(),
        assembly_tol: tol,
    })
}

/// Dense mirror of the interior system (operator and right-hand side),
/// built without any TT machinery.
pub fn assemble_dense_system(
    problem: &CdrProblem,
    grid: &SpaceTimeGrid,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let terms = system_terms(problem, grid);
    let axes = grid_axes(grid);
    let sets = interior_sets(grid);
    let matrix = dense_from_terms(&terms, &axes, &sets, &sets)?;
    let rhs = dense_interior_rhs(problem, grid)?;
    Ok((matrix, DVector::from_column_slice(&rhs.data)))
}

/// Dense interior right-hand side `F - F_boundary` (oracle path).
pub fn dense_interior_rhs(problem: &CdrProblem, grid: &SpaceTimeGrid) -> Result<DenseTensor> {
    let terms = system_terms(problem, grid);
    let axes = grid_axes(grid);
    let sets = interior_sets(grid);
    let dims: Vec<usize> = sets.iter().map(|s| s.len()).collect();
    let mut rhs = DenseTensor::zeros(dims)?;
    let map = rhs.index_map();
    for lin in 0..rhs.len() {
        let idx = map.multi(lin);
        let t = axes[0][sets[0][idx[0]]];
        let x = axes[1][sets[1][idx[1]]];
        let y = axes[2][sets[2][idx[2]]];
        let z = axes[3][sets[3][idx[3]]];
        rhs.data[lin] = (problem.forcing)(t, x, y, z);
    }
    let g_bd = dense_boundary_values(problem, grid)?;
    let coupling = dense_apply_restrict(&terms, &axes, &g_bd, &sets)?;
    for (r, c) in rhs.data.iter_mut().zip(&coupling.data) {
        *r -= c;
    }
    Ok(rhs)
}

/// Dense full-grid tensor of BC/IC values (zero on interior nodes).
pub fn dense_boundary_values(problem: &CdrProblem, grid: &SpaceTimeGrid) -> Result<DenseTensor> {
    let f = boundary_value_function(problem, grid);
    let dims: Vec<usize> = (0..4).map(|a| grid.full_nodes(a).len()).collect();
    let map = MultiIndexMap::new(dims.clone());
    let mut out = DenseTensor::zeros(dims)?;
    for lin in 0..out.len() {
        out.data[lin] = f.value_at(&map.multi(lin))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::kron_list;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn zero_data_problem(kappa: f64, b: [f64; 3], c: f64) -> CdrProblem {
        CdrProblem::constant_coefficients(
            [(-1.0, 1.0); 3],
            1.0,
            kappa,
            b,
            c,
            |_, _, _, _| 0.0,
            |_, _, _, _| 0.0,
            |_, _, _| 0.0,
        )
    }

    fn grid(n: usize) -> SpaceTimeGrid {
        SpaceTimeGrid::new(n, [(-1.0, 1.0); 3], 1.0, TimeScheme::Spectral).unwrap()
    }

    #[test]
    fn spectral_time_block_is_submatrix() {
        let g = grid(2);
        let tt = assemble_time_spectral(&g).unwrap();
        let st = g.time_matrix();
        let dense = tt.to_dense_matrix().unwrap();
        // 2x2 lower-right time block, identity in space (one interior point).
        assert_eq!(dense.shape(), (2, 2));
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(dense[(i, j)], st[(i + 1, j + 1)], epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn backward_euler_matrix_entries() {
        let t = backward_euler_time_matrix(2, 1.0);
        assert_abs_diff_eq!(t[(0, 0)], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t[(1, 1)], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t[(1, 0)], -2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t[(2, 1)], -2.0, epsilon = 1e-15);
        assert_eq!(t[(0, 1)], 0.0);
    }

    #[test]
    fn backward_euler_telescopes_on_constants() {
        let n = 5;
        let t = backward_euler_time_matrix(n, 1.0);
        let ones = DVector::from_element(n + 1, 1.0);
        let out = &t * ones;
        assert_abs_diff_eq!(out[0], n as f64, epsilon = 1e-12);
        for k in 1..=n {
            assert_abs_diff_eq!(out[k], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn backward_euler_differences_linear_function() {
        let n = 4;
        let t_final = 2.0;
        let t = backward_euler_time_matrix(n, t_final);
        let dt = t_final / n as f64;
        let samples = DVector::from_fn(n + 1, |k, _| k as f64 * dt);
        let out = &t * samples;
        for k in 1..=n {
            assert_abs_diff_eq!(out[k], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn diffusion_matches_dense_kronecker_laplacian() {
        let g = grid(4);
        let problem = zero_data_problem(1.0, [0.0; 3], 0.0);
        let tt = assemble_diffusion(&problem, &g, 1e-12, &CrossConfig::default()).unwrap();
        let dense = tt.to_dense_matrix().unwrap();
        let is: Vec<usize> = (1..4).collect();
        let eye_t = DMatrix::identity(4, 4);
        let eye_s = DMatrix::identity(3, 3);
        let mut want = DMatrix::zeros(dense.nrows(), dense.ncols());
        for axis in 0..3 {
            let sxx = second_diff_matrix(&diff_matrix(&g.space[axis]))
                .unwrap()
                .matrix;
            let sxx_int = restrict(&sxx, &is, &is);
            let mut factors = vec![eye_t.clone(), eye_s.clone(), eye_s.clone(), eye_s.clone()];
            factors[axis + 1] = sxx_int;
            want += kron_list(&factors);
        }
        let err = (&dense - &want).amax();
        assert!(err <= 1e-12 * want.amax(), "err = {err}");
    }

    #[test]
    fn zero_kappa_gives_zero_diffusion() {
        let g = grid(3);
        let problem = zero_data_problem(0.0, [0.0; 3], 0.0);
        let tt = assemble_diffusion(&problem, &g, 1e-12, &CrossConfig::default()).unwrap();
        assert!(tt.fused().norm() <= 1e-14);
    }

    #[test]
    fn convection_single_component_structure() {
        let g = grid(4);
        let problem = zero_data_problem(0.0, [1.0, 0.0, 0.0], 0.0);
        let tt = assemble_convection(&problem, &g, 1e-12, &CrossConfig::default()).unwrap();
        let is: Vec<usize> = (1..4).collect();
        let sx = diff_matrix(&g.space[0]).matrix;
        let want = kron_list(&[
            DMatrix::identity(4, 4),
            restrict(&sx, &is, &is),
            DMatrix::identity(3, 3),
            DMatrix::identity(3, 3),
        ]);
        let err = (tt.to_dense_matrix().unwrap() - &want).amax();
        assert!(err <= 1e-12 * want.amax());
    }

    #[test]
    fn zero_convection_is_zero_operator() {
        let g = grid(3);
        let problem = zero_data_problem(0.0, [0.0; 3], 0.0);
        let tt = assemble_convection(&problem, &g, 1e-12, &CrossConfig::default()).unwrap();
        assert!(tt.fused().norm() <= 1e-14);
    }

    #[test]
    fn unit_reaction_is_identity() {
        let g = grid(3);
        let problem = zero_data_problem(0.0, [0.0; 3], 1.0);
        let tt = assemble_reaction(&problem, &g, 1e-12, &CrossConfig::default()).unwrap();
        let dense = tt.to_dense_matrix().unwrap();
        let m = dense.nrows();
        assert_abs_diff_eq!(dense, DMatrix::identity(m, m), epsilon = 1e-12);
    }

    #[test]
    fn variable_reaction_matches_pointwise_values() {
        let g = grid(5);
        let two_pi = 2.0 * std::f64::consts::PI;
        let mut problem = zero_data_problem(0.0, [0.0; 3], 0.0);
        problem.reaction = Arc::new(move |t, x, y, z| (two_pi * (t + x + y + z)).cos());
        let tt = assemble_reaction(&problem, &g, 1e-12, &CrossConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dims = g.interior_dims();
        for _ in 0..200 {
            let idx: Vec<usize> = dims.iter().map(|&n| rng.gen_range(0..n)).collect();
            let t = g.interior_nodes(0)[idx[0]];
            let x = g.interior_nodes(1)[idx[1]];
            let y = g.interior_nodes(2)[idx[2]];
            let z = g.interior_nodes(3)[idx[3]];
            let want = (two_pi * (t + x + y + z)).cos();
            assert_abs_diff_eq!(tt.entry(&idx, &idx), want, epsilon = 1e-10);
        }
    }

    #[test]
    fn rhs_special_cases() {
        let g = grid(3);
        let mut problem = zero_data_problem(0.0, [0.0; 3], 0.0);
        let zero = assemble_rhs(&problem, &g, 1e-12, &CrossConfig::default()).unwrap();
        assert!(zero.norm() == 0.0);
        problem.forcing = Arc::new(|_, _, _, _| 1.0);
        let ones = assemble_rhs(&problem, &g, 1e-12, &CrossConfig::default()).unwrap();
        assert_eq!(ones.ranks(), &[1, 1, 1, 1, 1]);
        assert_abs_diff_eq!(ones.get(&[1, 0, 1, 0]), 1.0, epsilon = 1e-13);
    }

    #[test]
    fn homogeneous_boundary_is_zero_tensor() {
        let g = grid(4);
        let problem = zero_data_problem(1.0, [1.0; 3], 1.0);
        let bd = assemble_boundary(&problem, &g, 1e-12, &CrossConfig::default()).unwrap();
        assert_eq!(bd.ranks(), &[1, 1, 1, 1, 1]);
        assert!(bd.norm() == 0.0);
    }

    #[test]
    fn boundary_map_has_rectangular_shape() {
        let g = grid(4);
        let problem = zero_data_problem(1.0, [0.0; 3], 0.0);
        let map = assemble_boundary_map(&problem, &g, 1e-12, &CrossConfig::default()).unwrap();
        assert_eq!(map.row_dims(), &[4, 3, 3, 3]);
        assert_eq!(map.col_dims(), &[5, 5, 5, 5]);
    }

    #[test]
    fn system_matches_dense_assembly() {
        // TT route (cross + TT algebra) against the dense oracle route.
        let g = grid(4);
        let mut problem = zero_data_problem(1.0, [1.0, 1.0, 1.0], 1.0);
        problem.boundary = Arc::new(|t, x, y, z| t + x + y + z);
        problem.initial = Arc::new(|x, y, z| x + y + z);
        problem.forcing = Arc::new(|t, x, _, _| t * x);
        let system = assemble_system(&problem, &g, 1e-12, &CrossConfig::default()).unwrap();
        let (dense_a, dense_rhs) = assemble_dense_system(&problem, &g).unwrap();
        let tt_a = system.operator.to_dense_matrix().unwrap();
        assert!(
            (&tt_a - &dense_a).amax() <= 1e-11 * dense_a.amax(),
            "operator mismatch {}",
            (&tt_a - &dense_a).amax()
        );
        let tt_rhs = system.rhs.to_dense().unwrap();
        let scale = dense_rhs.amax();
        for (got, want) in tt_rhs.data.iter().zip(dense_rhs.iter()) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-9 * scale.max(1.0));
        }
    }

    #[test]
    fn constant_coefficient_operator_has_tiny_ranks() {
        let g = grid(8);
        let problem = zero_data_problem(1.0, [1.0; 3], 1.0);
        let sets = interior_sets(&g);
        let tt = tt_from_terms(
            &system_terms(&problem, &g),
            &grid_axes(&g),
            &sets,
            &sets,
            1e-12,
            &CrossConfig::default(),
        )
        .unwrap();
        assert!(tt.ranks()[1..4].iter().all(|r| *r <= 4), "{:?}", tt.ranks());
    }

    #[test]
    fn pure_time_system_when_coefficients_vanish() {
        let g = grid(3);
        let problem = zero_data_problem(0.0, [0.0; 3], 0.0);
        let system = assemble_system(&problem, &g, 1e-12, &CrossConfig::default()).unwrap();
        let want = assemble_time_spectral(&g)
            .unwrap()
            .to_dense_matrix()
            .unwrap();
        let got = system.operator.to_dense_matrix().unwrap();
        assert!((got - &want).amax() <= 1e-12 * want.amax());
    }

    #[test]
    fn consistency_identity_on_polynomial() {
        // For w = t + x^2 + y^2 + z^2 with unit coefficients the PDE
        // left-hand side is 1 - 6 + 2(x+y+z) + w, exactly representable
        // on the grid, so the full-grid apply must reproduce it.
        let g = grid(6);
        let problem = zero_data_problem(1.0, [1.0; 3], 1.0);
        let terms = system_terms(&problem, &g);
        let axes = grid_axes(&g);
        let sets = interior_sets(&g);
        let np1 = g.degree + 1;
        let full = DenseTensor::from_fn(vec![np1; 4], |idx| {
            let t = g.full_nodes(0)[idx[0]];
            let x = g.full_nodes(1)[idx[1]];
            let y = g.full_nodes(2)[idx[2]];
            let z = g.full_nodes(3)[idx[3]];
            t + x * x + y * y + z * z
        })
        .unwrap();
        let applied = dense_apply_restrict(&terms, &axes, &full, &sets).unwrap();
        let map = applied.index_map();
        for lin in 0..applied.len() {
            let idx = map.multi(lin);
            let t = g.interior_nodes(0)[idx[0]];
            let x = g.interior_nodes(1)[idx[1]];
            let y = g.interior_nodes(2)[idx[2]];
            let z = g.interior_nodes(3)[idx[3]];
            let want = 1.0 - 6.0 + 2.0 * (x + y + z) + (t + x * x + y * y + z * z);
            assert_abs_diff_eq!(applied.data[lin], want, epsilon = 1e-8);
        }
    }

    #[test]
    fn restricted_apply_matches_dense_matrix() {
        let g = grid(3);
        let mut problem = zero_data_problem(1.0, [1.0, 0.5, 0.0], 1.0);
        problem.kappa = Arc::new(|t, _, _, _| 1.0 + t);
        let terms = system_terms(&problem, &g);
        let axes = grid_axes(&g);
        let sets = interior_sets(&g);
        let dense = dense_from_terms(&terms, &axes, &sets, &sets).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dims: Vec<usize> = sets.iter().map(|s| s.len()).collect();
        let u = DenseTensor::from_fn(dims, |_| rng.gen_range(-1.0..1.0)).unwrap();
        let fast = dense_restricted_apply(&terms, &axes, &sets, &u).unwrap();
        let want = &dense * DVector::from_column_slice(&u.data);
        for (got, want) in fast.data.iter().zip(want.iter()) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-11);
        }
        // Diagonal extraction agrees with the dense diagonal.
        let diag = dense_restricted_diagonal(&terms, &axes, &sets).unwrap();
        for (i, v) in diag.data.iter().enumerate() {
            assert_abs_diff_eq!(*v, dense[(i, i)], epsilon = 1e-12);
        }
    }

    #[test]
    fn ic_bc_gap_detects_mismatch() {
        let mut problem = zero_data_problem(1.0, [0.0; 3], 0.0);
        problem.initial = Arc::new(|_, _, _| 1.0);
        let g = grid(3);
        assert!(ic_bc_gap(&problem, &g) >= 1.0 - 1e-12);
        problem.boundary = Arc::new(|_, _, _, _| 1.0);
        assert!(ic_bc_gap(&problem, &g) <= 1e-12);
    }

    #[test]
    fn grid_shape_accessors() {
        let g = grid(5);
        assert_eq!(g.interior_dims(), [5, 4, 4, 4]);
        assert_eq!(g.full_dims(), [6; 4]);
        assert_eq!(g.interior_indices(0), vec![1, 2, 3, 4, 5]);
        assert_eq!(g.interior_indices(1), vec![1, 2, 3, 4]);
        assert!(g.is_boundary_index(&[0, 2, 2, 2]));
        assert!(g.is_boundary_index(&[3, 0, 2, 2]));
        assert!(g.is_boundary_index(&[3, 2, 5, 2]));
        assert!(!g.is_boundary_index(&[5, 2, 2, 2]));
    }

    #[test]
    fn degenerate_grids_are_rejected() {
        assert!(SpaceTimeGrid::new(1, [(-1.0, 1.0); 3], 1.0, TimeScheme::Spectral).is_err());
        assert!(SpaceTimeGrid::new(4, [(-1.0, 1.0); 3], 0.0, TimeScheme::Spectral).is_err());
    }

    #[test]
    fn backward_euler_grid_is_uniform() {
        let g = SpaceTimeGrid::new(4, [(-1.0, 1.0); 3], 2.0, TimeScheme::BackwardEuler).unwrap();
        for (k, t) in g.t_nodes.iter().enumerate() {
            assert_abs_diff_eq!(*t, 0.5 * k as f64, epsilon = 1e-15);
        }
    }
}

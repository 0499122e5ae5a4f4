//! Full-grid reference solvers, manufactured cases, and error metrics.
//!
//! Everything in this module is an independent check on the TT pipeline:
//! the space-time system solved densely (direct up to degree 8,
//! matrix-free GMRES up to degree 24), the classic backward-Euler march
//! in both dense and TT form, and the error/compression bookkeeping the
//! experiment driver reports.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::cdr::{
    self, assemble_dense_system, CdrProblem, SpaceTimeFn, SpaceTimeGrid,
};
use crate::chebyshev::{cgl_nodes, diff_matrix, second_diff_matrix, ChebGrid1D};
use crate::cross::{tt_cross, CrossConfig, GridFunction};
use crate::krylov::gmres;
use crate::solve::{amen_solve, SolveOptions};
use crate::tensor::{DenseTensor, MultiIndexMap};
use crate::tt::TTVector;
use crate::tt_matrix::TTMatrix;
use crate::{Error, Result};

/// Largest grid degree solved by dense LU.
pub const DENSE_DEGREE_LIMIT: usize = 8;
/// Largest grid degree solved matrix-free.
pub const ITERATIVE_DEGREE_LIMIT: usize = 24;

/// A problem with a known exact solution and hard-coded derived forcing.
#[derive(Clone)]
pub struct ManufacturedCase {
    pub name: String,
    pub problem: CdrProblem,
    pub exact: SpaceTimeFn,
}

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

impl ManufacturedCase {
    /// Smooth case with constant coefficients: kappa = 1, b = (1,1,1),
    /// c = 1, exact solution `sin(2 pi (t+x+y+z))`.
    pub fn test1(domain: [(f64, f64); 3], t_final: f64) -> Self {
        let exact: SpaceTimeFn = Arc::new(|t, x, y, z| (TWO_PI * (t + x + y + z)).sin());
        // f = u_t - lap(u) + div-free transport + u
        //   = 8 pi cos(2 pi s) + (12 pi^2 + 1) sin(2 pi s)
        let forcing = move |t: f64, x: f64, y: f64, z: f64| {
            let s = TWO_PI * (t + x + y + z);
            8.0 * std::f64::consts::PI * s.cos() + (12.0 * std::f64::consts::PI.powi(2) + 1.0) * s.sin()
        };
        let g = exact.clone();
        let problem = CdrProblem::constant_coefficients(
            domain,
            t_final,
            1.0,
            [1.0, 1.0, 1.0],
            1.0,
            forcing,
            move |t, x, y, z| g(t, x, y, z),
            move |x, y, z| (TWO_PI * (x + y + z)).sin(),
        );
        Self {
            name: "test1".into(),
            problem,
            exact,
        }
    }

    /// Variable coefficients: kappa = exp(-t^2),
    /// b = (sin 2 pi x, cos 2 pi y, sin 2 pi z), c = cos(2 pi (t+x+y+z)),
    /// same exact solution as `test1`.
    pub fn test2(domain: [(f64, f64); 3], t_final: f64) -> Self {
        let exact: SpaceTimeFn = Arc::new(|t, x, y, z| (TWO_PI * (t + x + y + z)).sin());
        let forcing = move |t: f64, x: f64, y: f64, z: f64| {
            let s = TWO_PI * (t + x + y + z);
            let kappa = (-t * t).exp();
            let transport = (TWO_PI * x).sin() + (TWO_PI * y).cos() + (TWO_PI * z).sin();
            TWO_PI * s.cos()
                + kappa * 12.0 * std::f64::consts::PI.powi(2) * s.sin()
                + TWO_PI * s.cos() * transport
                + s.cos() * s.sin()
        };
        let g = exact.clone();
        let problem = CdrProblem {
            domain,
            t_final,
            kappa: Arc::new(|t, _, _, _| (-t * t).exp()),
            convection: [
                Arc::new(|_, x, _, _| (TWO_PI * x).sin()),
                Arc::new(|_, _, y, _| (TWO_PI * y).cos()),
                Arc::new(|_, _, _, z| (TWO_PI * z).sin()),
            ],
            reaction: Arc::new(|t, x, y, z| (TWO_PI * (t + x + y + z)).cos()),
            forcing: Arc::new(forcing),
            boundary: Arc::new(move |t, x, y, z| g(t, x, y, z)),
            initial: Arc::new(|x, y, z| (TWO_PI * (x + y + z)).sin()),
        };
        Self {
            name: "test2".into(),
            problem,
            exact,
        }
    }

    /// Constant coefficients with the non-smooth exact solution
    /// `sin(pi x) sin(pi y) sin(pi z) + x^2 |x|` (limited regularity at
    /// x = 0 caps the convergence order at an algebraic rate).
    pub fn test3(domain: [(f64, f64); 3], t_final: f64) -> Self {
        let pi = std::f64::consts::PI;
        let exact: SpaceTimeFn =
            Arc::new(move |_t, x, y, z| (pi * x).sin() * (pi * y).sin() * (pi * z).sin() + x * x * x.abs());
        let forcing = move |_t: f64, x: f64, y: f64, z: f64| {
            let s3 = (pi * x).sin() * (pi * y).sin() * (pi * z).sin();
            let grad_sum = pi
                * ((pi * x).cos() * (pi * y).sin() * (pi * z).sin()
                    + (pi * x).sin() * (pi * y).cos() * (pi * z).sin()
                    + (pi * x).sin() * (pi * y).sin() * (pi * z).cos());
            // u_t = 0; -lap(u) = 3 pi^2 s3 - 6|x|; b . grad u; + u
            3.0 * pi * pi * s3 - 6.0 * x.abs() + grad_sum + 3.0 * x * x.abs() + s3
                + x * x * x.abs()
        };
        let g = exact.clone();
        let h = exact.clone();
        let problem = CdrProblem::constant_coefficients(
            domain,
            t_final,
            1.0,
            [1.0, 1.0, 1.0],
            1.0,
            forcing,
            move |t, x, y, z| g(t, x, y, z),
            move |x, y, z| h(0.0, x, y, z),
        );
        Self {
            name: "test3".into(),
            problem,
            exact,
        }
    }

    /// Case lookup on the default desk-scale domain `[0,1] x [-1,1]^3`.
    pub fn by_name(name: &str) -> Option<Self> {
        let domain = [(-1.0, 1.0); 3];
        match name {
            "test1" => Some(Self::test1(domain, 1.0)),
            "test2" => Some(Self::test2(domain, 1.0)),
            "test3" => Some(Self::test3(domain, 1.0)),
            _ => None,
        }
    }

    /// Exact solution sampled on the interior nodes of a grid.
    pub fn exact_interior(&self, grid: &SpaceTimeGrid) -> Result<DenseTensor> {
        let axes: Vec<Vec<f64>> = (0..4).map(|a| grid.interior_nodes(a)).collect();
        sample_fn(&self.exact, &axes)
    }
}

/// Samples a space-time function on the product of the given axes.
pub fn sample_fn(f: &SpaceTimeFn, axes: &[Vec<f64>]) -> Result<DenseTensor> {
    let dims: Vec<usize> = axes.iter().map(|a| a.len()).collect();
    DenseTensor::from_fn(dims, |idx| {
        f(
            axes[0][idx[0]],
            axes[1][idx[1]],
            axes[2][idx[2]],
            axes[3][idx[3]],
        )
    })
}

/// One row of an experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub case: String,
    pub method: String,
    pub n: usize,
    pub rel_l2: f64,
    pub elapsed_s: f64,
    pub cr_solution: f64,
    pub cr_operator: f64,
    pub max_rank: usize,
    pub sweeps: usize,
    pub converged: bool,
}

/// Relative discrete 2-norm error over matching tensors. Falls back to
/// the absolute norm when the reference is identically zero.
pub fn relative_l2_error(u_h: &DenseTensor, exact: &DenseTensor) -> f64 {
    assert_eq!(u_h.dims, exact.dims, "error norm needs matching shapes");
    let diff: f64 = u_h
        .data
        .iter()
        .zip(&exact.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let denom = exact.norm();
    if denom > 0.0 {
        diff.sqrt() / denom
    } else {
        diff.sqrt()
    }
}

/// Ratio of stored TT entries to dense entries.
pub fn compression_ratio(tt_elements: usize, dense_elements: f64) -> f64 {
    tt_elements as f64 / dense_elements
}

/// Compression ratio of a TT vector against its dense element count.
pub fn compression_ratio_vector(x: &TTVector) -> f64 {
    let dense: f64 = x.dims().iter().map(|&n| n as f64).product();
    compression_ratio(x.elem_count(), dense)
}

/// Compression ratio of a TT operator against the squared dense size.
pub fn compression_ratio_operator(a: &TTMatrix) -> f64 {
    let rows: f64 = a.row_dims().iter().map(|&n| n as f64).product();
    let cols: f64 = a.col_dims().iter().map(|&n| n as f64).product();
    compression_ratio(a.elem_count(), rows * cols)
}

/// Storage of a TT object in binary kilobytes (8-byte entries).
pub fn storage_kib(elements: usize) -> f64 {
    elements as f64 * 8.0 / 1024.0
}

/// Solves the interior space-time system on the full grid.
///
/// Degrees up to [`DENSE_DEGREE_LIMIT`] use a dense LU factorization;
/// up to [`ITERATIVE_DEGREE_LIMIT`] a matrix-free restarted GMRES (first
/// unpreconditioned, then Jacobi-scaled) to a 1e-12 residual. Larger
/// grids hit the memory guard.
pub fn full_grid_solve(problem: &CdrProblem, grid: &SpaceTimeGrid) -> Result<DenseTensor> {
    let n = grid.degree;
    let dims = grid.interior_dims();
    let size: usize = dims.iter().product();
    if n <= DENSE_DEGREE_LIMIT {
        let (a, b) = assemble_dense_system(problem, grid)?;
        let sol = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::NoConvergence("dense interior solve is singular".into()))?;
        return DenseTensor::from_data(dims.to_vec(), sol.as_slice().to_vec());
    }
    if n > ITERATIVE_DEGREE_LIMIT {
        return Err(Error::MemoryGuard {
            elements: (size as u128) * (size as u128),
            limit: {
                let m = (ITERATIVE_DEGREE_LIMIT * (ITERATIVE_DEGREE_LIMIT - 1).pow(3)) as u128;
                m * m
            },
        });
    }
    let terms = cdr::system_terms(problem, grid);
    let axes = cdr::grid_axes(grid);
    let sets = cdr::interior_sets(grid);
    let rhs_tensor = cdr::dense_interior_rhs(problem, grid)?;
    let rhs = DVector::from_column_slice(&rhs_tensor.data);
    let apply_tensor = |v: &DVector<f64>| -> DVector<f64> {
        let u = DenseTensor::from_data(dims.to_vec(), v.as_slice().to_vec()).unwrap();
        let out = cdr::dense_restricted_apply(&terms, &axes, &sets, &u).unwrap();
        DVector::from_column_slice(&out.data)
    };
    // First try without preconditioning, then with Jacobi scaling.
    let plain = gmres(&apply_tensor, &rhs, None, 1e-12, 120, 5);
    if plain.converged {
        return DenseTensor::from_data(dims.to_vec(), plain.x.as_slice().to_vec());
    }
    let diag = cdr::dense_restricted_diagonal(&terms, &axes, &sets)?;
    let scale: Vec<f64> = diag
        .data
        .iter()
        .map(|d| if d.abs() < 1e-300 { 1.0 } else { *d })
        .collect();
    let scaled_rhs = DVector::from_fn(size, |i, _| rhs[i] / scale[i]);
    let scaled_apply = |v: &DVector<f64>| -> DVector<f64> {
        let out = apply_tensor(v);
        DVector::from_fn(size, |i, _| out[i] / scale[i])
    };
    let out = gmres(&scaled_apply, &scaled_rhs, Some(&plain.x), 1e-12, 120, 400);
    if !out.converged {
        return Err(Error::NoConvergence(format!(
            "matrix-free interior solve stalled at relative residual {:.3e}",
            out.rel_residual
        )));
    }
    DenseTensor::from_data(dims.to_vec(), out.x.as_slice().to_vec())
}

/// Spatial operator terms of the PDE at a frozen time (3 axes, with the
/// system sign convention).
fn spatial_terms(problem: &CdrProblem, space: &[ChebGrid1D; 3], t: f64) -> Vec<cdr::KronTerm> {
    let np1 = space[0].len();
    let eye = DMatrix::identity(np1, np1);
    let mut terms = Vec::new();
    for axis in 0..3 {
        let sxx = second_diff_matrix(&diff_matrix(&space[axis]))
            .expect("order-1 input")
            .matrix;
        let mut factors = vec![eye.clone(), eye.clone(), eye.clone()];
        factors[axis] = sxx;
        let kappa = problem.kappa.clone();
        terms.push(cdr::KronTerm {
            scale: -1.0,
            coeff: Some(Arc::new(move |c: &[f64]| kappa(t, c[0], c[1], c[2]))),
            factors,
        });
    }
    for axis in 0..3 {
        let sx = diff_matrix(&space[axis]).matrix;
        let mut factors = vec![eye.clone(), eye.clone(), eye.clone()];
        factors[axis] = sx;
        let b = problem.convection[axis].clone();
        terms.push(cdr::KronTerm {
            scale: 1.0,
            coeff: Some(Arc::new(move |c: &[f64]| b(t, c[0], c[1], c[2]))),
            factors,
        });
    }
    let c = problem.reaction.clone();
    terms.push(cdr::KronTerm {
        scale: 1.0,
        coeff: Some(Arc::new(move |cd: &[f64]| c(t, cd[0], cd[1], cd[2]))),
        factors: vec![eye.clone(), eye.clone(), eye],
    });
    terms
}

/// Spatial wall values `g(t, .)` on the full 3D grid, zero inside.
fn spatial_wall_tensor(problem: &CdrProblem, space: &[ChebGrid1D; 3], t: f64) -> DenseTensor {
    let n = space[0].degree;
    let dims = vec![n + 1; 3];
    let map = MultiIndexMap::new(dims.clone());
    let mut out = DenseTensor::zeros(dims).expect("small");
    for lin in 0..out.len() {
        let idx = map.multi(lin);
        if idx.iter().any(|&i| i == 0 || i == n) {
            let x = space[0].nodes[idx[0]];
            let y = space[1].nodes[idx[1]];
            let z = space[2].nodes[idx[2]];
            out.data[lin] = (problem.boundary)(t, x, y, z);
        }
    }
    out
}

fn spatial_axes(space: &[ChebGrid1D; 3]) -> Vec<Vec<f64>> {
    space.iter().map(|g| g.nodes.clone()).collect()
}

fn spatial_interior_sets(space: &[ChebGrid1D; 3]) -> Vec<Vec<usize>> {
    let n = space[0].degree;
    (0..3).map(|_| (1..n).collect()).collect()
}

/// Backward-Euler march on the dense spatial grid. Returns the interior
/// spatial solution at every time level `0..=steps` (level 0 is the
/// initial data).
pub fn backward_euler_march_dense(
    problem: &CdrProblem,
    space_degree: usize,
    steps: usize,
) -> Result<Vec<DenseTensor>> {
    if steps == 0 || space_degree < 2 {
        return Err(Error::InvalidArgument(
            "march needs steps >= 1 and space degree >= 2".into(),
        ));
    }
    let space = [
        cgl_nodes(space_degree, problem.domain[0])?,
        cgl_nodes(space_degree, problem.domain[1])?,
        cgl_nodes(space_degree, problem.domain[2])?,
    ];
    let axes = spatial_axes(&space);
    let sets = spatial_interior_sets(&space);
    let dims: Vec<usize> = sets.iter().map(|s| s.len()).collect();
    let size: usize = dims.iter().product();
    let dt = problem.t_final / steps as f64;
    let interior_nodes: Vec<Vec<f64>> = (0..3)
        .map(|a| sets[a].iter().map(|&i| axes[a][i]).collect())
        .collect();

    let mut u = DenseTensor::from_fn(dims.clone(), |idx| {
        (problem.initial)(
            interior_nodes[0][idx[0]],
            interior_nodes[1][idx[1]],
            interior_nodes[2][idx[2]],
        )
    })?;
    let mut levels = vec![u.clone()];
    for k in 1..=steps {
        let t = k as f64 * dt;
        let terms = spatial_terms(problem, &space, t);
        let s_int = cdr::dense_from_terms(&terms, &axes, &sets, &sets)?;
        let a = DMatrix::identity(size, size) + &s_int * dt;
        let wall = spatial_wall_tensor(problem, &space, t);
        let coupling = cdr::dense_apply_restrict(&terms, &axes, &wall, &sets)?;
        let mut rhs = DVector::from_column_slice(&u.data);
        let rhs_map = MultiIndexMap::new(dims.clone());
        for lin in 0..size {
            let idx = rhs_map.multi(lin);
            let f = (problem.forcing)(
                t,
                interior_nodes[0][idx[0]],
                interior_nodes[1][idx[1]],
                interior_nodes[2][idx[2]],
            );
            rhs[lin] += dt * (f - coupling.data[lin]);
        }
        let sol = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::NoConvergence(format!("march step {k} is singular")))?;
        u = DenseTensor::from_data(dims.clone(), sol.as_slice().to_vec())?;
        levels.push(u.clone());
    }
    Ok(levels)
}

/// Backward-Euler march with the spatial iterate kept in TT form and
/// rounded at `tol` after every step.
pub fn backward_euler_march_tt(
    problem: &CdrProblem,
    space_degree: usize,
    steps: usize,
    tol: f64,
    solve_opts: &SolveOptions,
    cross: &CrossConfig,
) -> Result<Vec<TTVector>> {
    if steps == 0 || space_degree < 2 {
        return Err(Error::InvalidArgument(
            "march needs steps >= 1 and space degree >= 2".into(),
        ));
    }
    let space = [
        cgl_nodes(space_degree, problem.domain[0])?,
        cgl_nodes(space_degree, problem.domain[1])?,
        cgl_nodes(space_degree, problem.domain[2])?,
    ];
    let axes = spatial_axes(&space);
    let sets = spatial_interior_sets(&space);
    let all: Vec<Vec<usize>> = (0..3).map(|_| (0..=space_degree).collect()).collect();
    let dims: Vec<usize> = sets.iter().map(|s| s.len()).collect();
    let dt = problem.t_final / steps as f64;
    let interior_nodes: Vec<Vec<f64>> = (0..3)
        .map(|a| sets[a].iter().map(|&i| axes[a][i]).collect())
        .collect();

    // Initial data via cross interpolation on the interior grid.
    let h = problem.initial.clone();
    let init = tt_cross(
        &GridFunction::new(interior_nodes.clone(), move |c: &[f64]| h(c[0], c[1], c[2]))?,
        cross,
    )?;
    if !init.converged {
        return Err(Error::NoConvergence("initial data cross stalled".into()));
    }
    let mut u = init.tt.round(tol, None);
    let mut levels = vec![u.clone()];
    let identity = TTMatrix::identity(&dims);
    for k in 1..=steps {
        let t = k as f64 * dt;
        let terms = spatial_terms(problem, &space, t);
        let s_int = cdr::tt_from_terms(&terms, &axes, &sets, &sets, tol, cross)?;
        let a = identity.add(&s_int.scale(dt))?.round(tol, None);

        let f = problem.forcing.clone();
        let f_tt = tt_cross(
            &GridFunction::new(interior_nodes.clone(), move |c: &[f64]| {
                f(t, c[0], c[1], c[2])
            })?,
            cross,
        )?;
        if !f_tt.converged {
            return Err(Error::NoConvergence(format!(
                "forcing cross stalled at step {k}"
            )));
        }
        let g = problem.boundary.clone();
        let walls = [
            space[0].interval,
            space[1].interval,
            space[2].interval,
        ];
        let n_top = space_degree;
        let wall_fn = GridFunction::new(axes.clone(), move |c: &[f64]| {
            let on_wall = (c[0] == walls[0].0 || c[0] == walls[0].1)
                || (c[1] == walls[1].0 || c[1] == walls[1].1)
                || (c[2] == walls[2].0 || c[2] == walls[2].1);
            let _ = n_top;
            if on_wall {
                g(t, c[0], c[1], c[2])
            } else {
                0.0
            }
        })?;
        let wall_tt = tt_cross(&wall_fn, cross)?;
        if !wall_tt.converged {
            return Err(Error::NoConvergence(format!(
                "wall data cross stalled at step {k}"
            )));
        }
        let coupling = if wall_tt.tt.norm() == 0.0 {
            TTVector::zeros(&dims)
        } else {
            let map = cdr::tt_from_terms(&terms, &axes, &sets, &all, tol, cross)?;
            map.apply(&wall_tt.tt)?.round(tol, None)
        };
        let rhs = u
            .add(&f_tt.tt.scale(dt))?
            .add(&coupling.scale(-dt))?
            .round(tol, None);
        let (next, report) = amen_solve(&a, &rhs, solve_opts)?;
        if !report.converged {
            return Err(Error::NoConvergence(format!(
                "march solve stalled at step {k} (residual {:.3e})",
                report.residual_history.last().copied().unwrap_or(f64::NAN)
            )));
        }
        u = next.round(tol, None);
        levels.push(u.clone());
    }
    Ok(levels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdr::TimeScheme;
    use approx::assert_abs_diff_eq;

    fn polynomial_case(domain: [(f64, f64); 3]) -> ManufacturedCase {
        // u = t + x^2 with unit coefficients: f = 1 - 2 + 2x + t + x^2.
        let exact: SpaceTimeFn = Arc::new(|t, x, _, _| t + x * x);
        let g = exact.clone();
        let problem = CdrProblem::constant_coefficients(
            domain,
            1.0,
            1.0,
            [1.0, 1.0, 1.0],
            1.0,
            |t, x, _, _| -1.0 + 2.0 * x + t + x * x,
            move |t, x, y, z| g(t, x, y, z),
            |_, x, _| unreachable_initial(x),
        );
        // Replace the placeholder initial data with the exact slice.
        let mut problem = problem;
        let h = exact.clone();
        problem.initial = Arc::new(move |x, y, z| h(0.0, x, y, z));
        ManufacturedCase {
            name: "poly".into(),
            problem,
            exact,
        }
    }

    fn unreachable_initial(_x: f64) -> f64 {
        0.0
    }

    #[test]
    fn polynomial_solution_is_recovered_exactly() {
        let case = polynomial_case([(-1.0, 1.0); 3]);
        let grid = SpaceTimeGrid::new(4, case.problem.domain, 1.0, TimeScheme::Spectral).unwrap();
        let solution = full_grid_solve(&case.problem, &grid).unwrap();
        let exact = case.exact_interior(&grid).unwrap();
        assert!(relative_l2_error(&solution, &exact) <= 1e-10);
    }

    #[test]
    fn exact_samples_satisfy_assembled_equations() {
        let case = polynomial_case([(-1.0, 1.0); 3]);
        let grid = SpaceTimeGrid::new(4, case.problem.domain, 1.0, TimeScheme::Spectral).unwrap();
        let (a, b) = assemble_dense_system(&case.problem, &grid).unwrap();
        let exact = case.exact_interior(&grid).unwrap();
        let residual = &a * DVector::from_column_slice(&exact.data) - b;
        assert!(residual.amax() <= 1e-9, "residual {}", residual.amax());
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let problem = CdrProblem::constant_coefficients(
            [(-1.0, 1.0); 3],
            1.0,
            1.0,
            [1.0, 1.0, 1.0],
            1.0,
            |_, _, _, _| 0.0,
            |_, _, _, _| 0.0,
            |_, _, _| 0.0,
        );
        let grid = SpaceTimeGrid::new(4, problem.domain, 1.0, TimeScheme::Spectral).unwrap();
        let solution = full_grid_solve(&problem, &grid).unwrap();
        assert!(solution.norm() <= 1e-12);
    }

    #[test]
    fn matrix_free_path_matches_dense_path() {
        let case = ManufacturedCase::test1([(-1.0, 1.0); 3], 1.0);
        let grid = SpaceTimeGrid::new(6, case.problem.domain, 1.0, TimeScheme::Spectral).unwrap();
        let dense = full_grid_solve(&case.problem, &grid).unwrap();
        // Rebuild through the matrix-free branch by lowering the dense cap:
        // emulate by calling the internals the way the branch does.
        let terms = cdr::system_terms(&case.problem, &grid);
        let axes = cdr::grid_axes(&grid);
        let sets = cdr::interior_sets(&grid);
        let dims = grid.interior_dims();
        let rhs_tensor = cdr::dense_interior_rhs(&case.problem, &grid).unwrap();
        let rhs = DVector::from_column_slice(&rhs_tensor.data);
        let apply = |v: &DVector<f64>| -> DVector<f64> {
            let u = DenseTensor::from_data(dims.to_vec(), v.as_slice().to_vec()).unwrap();
            let out = cdr::dense_restricted_apply(&terms, &axes, &sets, &u).unwrap();
            DVector::from_column_slice(&out.data)
        };
        let out = gmres(&apply, &rhs, None, 1e-12, 120, 400);
        assert!(out.converged, "gmres residual {}", out.rel_residual);
        let got = DenseTensor::from_data(dims.to_vec(), out.x.as_slice().to_vec()).unwrap();
        assert!(relative_l2_error(&got, &dense) <= 1e-9);
    }

    #[test]
    fn memory_guard_on_large_grids() {
        let case = ManufacturedCase::test1([(-1.0, 1.0); 3], 1.0);
        let grid = SpaceTimeGrid::new(32, case.problem.domain, 1.0, TimeScheme::Spectral).unwrap();
        assert!(matches!(
            full_grid_solve(&case.problem, &grid),
            Err(Error::MemoryGuard { .. })
        ));
    }

    #[test]
    fn march_matches_scalar_decay_recurrence() {
        // kappa = b = 0, c = 1, f = 0, h = 1: every interior value obeys
        // u_k = (1 + dt)^(-k) independent of space.
        let problem = CdrProblem::constant_coefficients(
            [(-1.0, 1.0); 3],
            1.0,
            0.0,
            [0.0; 3],
            1.0,
            |_, _, _, _| 0.0,
            |t, _, _, _| (-t).exp(),
            |_, _, _| 1.0,
        );
        let steps = 8;
        let levels = backward_euler_march_dense(&problem, 2, steps).unwrap();
        let dt = 1.0 / steps as f64;
        for (k, level) in levels.iter().enumerate() {
            let want = (1.0 + dt).powi(-(k as i32));
            for v in &level.data {
                assert_abs_diff_eq!(*v, want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn march_single_step_identity_without_dynamics() {
        let problem = CdrProblem::constant_coefficients(
            [(-1.0, 1.0); 3],
            1.0,
            0.0,
            [0.0; 3],
            0.0,
            |_, _, _, _| 0.0,
            |_, _, _, _| 0.0,
            |x, y, z| x + y + z,
        );
        let levels = backward_euler_march_dense(&problem, 3, 1).unwrap();
        for (a, b) in levels[0].data.iter().zip(&levels[1].data) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn march_agrees_with_single_system_backward_euler() {
        let case = ManufacturedCase::test1([(-1.0, 1.0); 3], 1.0);
        let n = 4;
        let grid =
            SpaceTimeGrid::new(n, case.problem.domain, 1.0, TimeScheme::BackwardEuler).unwrap();
        let single = full_grid_solve(&case.problem, &grid).unwrap();
        let levels = backward_euler_march_dense(&case.problem, n, n).unwrap();
        // Single-system layout is [N, N-1, N-1, N-1] with time fastest
        // axis first; compare level k+1 with time slice k.
        let spatial: usize = (n - 1).pow(3);
        for k in 0..n {
            let slice = &single.data[k * spatial..(k + 1) * spatial];
            for (a, b) in slice.iter().zip(&levels[k + 1].data) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn march_tt_matches_march_dense() {
        let case = ManufacturedCase::test1([(-1.0, 1.0); 3], 1.0);
        let steps = 4;
        let dense_levels = backward_euler_march_dense(&case.problem, 4, steps).unwrap();
        let tt_levels = backward_euler_march_tt(
            &case.problem,
            4,
            steps,
            1e-12,
            &SolveOptions {
                tol: 1e-11,
                ..SolveOptions::default()
            },
            &CrossConfig::default(),
        )
        .unwrap();
        for (tt, dense) in tt_levels.iter().zip(&dense_levels) {
            let got = tt.to_dense().unwrap();
            assert!(relative_l2_error(&got, dense) <= 1e-8);
        }
    }

    #[test]
    fn first_order_in_time_ratio() {
        // Spatially exact manufactured case: u = exp(-t)(x^2+y^2+z^2+xyz),
        // so the march error is purely temporal and halves with dt.
        let exact: SpaceTimeFn =
            Arc::new(|t, x, y, z| (-t).exp() * (x * x + y * y + z * z + x * y * z));
        let g = exact.clone();
        let h = exact.clone();
        let problem = CdrProblem::constant_coefficients(
            [(-1.0, 1.0); 3],
            1.0,
            1.0,
            [1.0, 1.0, 1.0],
            1.0,
            move |t, x, y, z| {
                let p = x * x + y * y + z * z + x * y * z;
                let e = (-t).exp();
                // u_t - lap u + b . grad u + u
                -e * p - 6.0 * e
                    + e * (2.0 * x + y * z + 2.0 * y + x * z + 2.0 * z + x * y)
                    + e * p
            },
            move |t, x, y, z| g(t, x, y, z),
            move |x, y, z| h(0.0, x, y, z),
        );
        let degree = 4;
        let exact_final = |dims: &[usize], nodes: &[Vec<f64>]| {
            DenseTensor::from_fn(dims.to_vec(), |idx| {
                exact(1.0, nodes[0][idx[0]], nodes[1][idx[1]], nodes[2][idx[2]])
            })
            .unwrap()
        };
        let mut errors = Vec::new();
        for steps in [8, 16] {
            let levels = backward_euler_march_dense(&problem, degree, steps).unwrap();
            let last = levels.last().unwrap();
            let nodes: Vec<Vec<f64>> = (0..3)
                .map(|a| {
                    cgl_nodes(degree, problem.domain[a]).unwrap().nodes[1..degree]
                        .to_vec()
                })
                .collect();
            let want = exact_final(&last.dims, &nodes);
            errors.push(relative_l2_error(last, &want));
        }
        let ratio = errors[0] / errors[1];
        assert!(
            (1.6..=2.4).contains(&ratio),
            "halving dt gave ratio {ratio}"
        );
    }

    #[test]
    fn error_norm_conventions() {
        let a = DenseTensor::from_data(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(relative_l2_error(&a, &a), 0.0);
        let double = DenseTensor::from_data(vec![2, 2], vec![2.0, 4.0, 6.0, 8.0]).unwrap();
        assert_abs_diff_eq!(relative_l2_error(&double, &a), 1.0, epsilon = 1e-14);
        let zero = DenseTensor::zeros(vec![2, 2]).unwrap();
        // Absolute fallback when the reference vanishes.
        assert_abs_diff_eq!(relative_l2_error(&a, &zero), a.norm(), epsilon = 1e-14);
    }

    #[test]
    fn compression_ratio_core_counting() {
        let n = 6;
        let tt = TTVector::rank_one(&[vec![1.0; n], vec![1.0; n], vec![1.0; n], vec![1.0; n]]);
        let cr = compression_ratio_vector(&tt);
        let want = (4 * n) as f64 / (n as f64).powi(4);
        assert_abs_diff_eq!(cr, want, epsilon = 1e-15);
    }
}

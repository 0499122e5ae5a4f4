//! Low-rank solver for TT linear systems `A x = b`.
//!
//! The solver sweeps over the cores of `x`, solving a small projected
//! system per core (alternating linear scheme) while enriching the local
//! basis with a low-rank approximation of the residual, which is tracked
//! in a separate TT iterate of rank `kickrank`. The projection uses the
//! same orthogonal interfaces on both sides, so no symmetry of `A` is
//! assumed; local systems are solved directly up to a size cap and by
//! diagonally scaled GMRES above it.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::krylov::gmres;
use crate::tt::{flatten_rm, truncated_svd, unfold_rm, TTVector};
use crate::tt_matrix::TTMatrix;
use crate::{Error, Result};

/// Strategy for the projected core systems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LocalSolver {
    /// Dense LU up to `direct_size_cap` unknowns, scaled GMRES above.
    Auto { direct_size_cap: usize },
    /// Always factor the dense local matrix.
    Direct,
    /// Always iterate (restarted GMRES with Jacobi scaling).
    Iterative { max_iterations: usize, tol: f64 },
}

/// Options for [`amen_solve`].
#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Relative residual target.
    pub tol: f64,
    /// Maximum number of full (left-right plus right-left) sweeps.
    pub max_sweeps: usize,
    pub local_solver: LocalSolver,
    /// Width of the residual-based basis enrichment; 0 disables it.
    pub kickrank: usize,
    /// Optional cap on every bond rank of the iterate.
    pub max_rank: Option<usize>,
    /// Seed for the random initial guess and residual basis.
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_sweeps: 50,
            local_solver: LocalSolver::Auto {
                direct_size_cap: 2000,
            },
            kickrank: 4,
            max_rank: None,
            seed: 20230067,
        }
    }
}

/// Convergence record of one [`amen_solve`] run.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub converged: bool,
    /// Full sweeps performed.
    pub sweeps: usize,
    /// Relative TT residual after each full sweep (raw values; the
    /// history is not guaranteed monotone).
    pub residual_history: Vec<f64>,
    /// Bond ranks of the returned iterate.
    pub final_ranks: Vec<usize>,
}

/// Order-3 environment tensor with explicit shape.
#[derive(Clone)]
struct Env3 {
    data: Vec<f64>,
    shape: (usize, usize, usize),
}

impl Env3 {
    fn unit() -> Self {
        Self {
            data: vec![1.0],
            shape: (1, 1, 1),
        }
    }

    #[inline]
    fn at(&self, a: usize, b: usize, c: usize) -> f64 {
        self.data[(a * self.shape.1 + b) * self.shape.2 + c]
    }
}

/// Order-2 environment with explicit shape.
#[derive(Clone)]
struct Env2 {
    data: Vec<f64>,
    shape: (usize, usize),
}

impl Env2 {
    fn unit() -> Self {
        Self {
            data: vec![1.0],
            shape: (1, 1),
        }
    }

    #[inline]
    fn at(&self, a: usize, b: usize) -> f64 {
        self.data[a * self.shape.1 + b]
    }
}

/// Shape view of a TT-matrix core `(p0, m, n, p1)`.
struct ACore<'a> {
    data: &'a [f64],
    p0: usize,
    m: usize,
    n: usize,
    p1: usize,
}

impl<'a> ACore<'a> {
    #[inline]
    fn at(&self, alpha: usize, i: usize, j: usize, beta: usize) -> f64 {
        self.data[(((alpha * self.m + i) * self.n + j) * self.p1) + beta]
    }
}

/// Shape view of a TT-vector core `(r0, n, r1)`.
struct VCore<'a> {
    data: &'a [f64],
    r0: usize,
    n: usize,
    r1: usize,
}

impl<'a> VCore<'a> {
    #[inline]
    fn at(&self, a: usize, i: usize, b: usize) -> f64 {
        self.data[(a * self.n + i) * self.r1 + b]
    }
}

/// env(bra, A, ket) pushed one core to the right.
fn env3_push_left(env: &Env3, bra: &VCore, a: &ACore, ket: &VCore) -> Env3 {
    let (b1, p1, k1) = (bra.r1, a.p1, ket.r1);
    let mut out = vec![0.0; b1 * p1 * k1];
    // t(alpha, k, i, b') = sum_b env(b, alpha, k) bra(b, i, b')
    let mut t = vec![0.0; a.p0 * ket.r0 * bra.n * b1];
    for b in 0..bra.r0 {
        for alpha in 0..a.p0 {
            for k in 0..ket.r0 {
                let e = env.at(b, alpha, k);
                if e == 0.0 {
                    continue;
                }
                for i in 0..bra.n {
                    for bp in 0..b1 {
                        t[((alpha * ket.r0 + k) * bra.n + i) * b1 + bp] += e * bra.at(b, i, bp);
                    }
                }
            }
        }
    }
    // u(k, b', j, alpha') = sum_{alpha, i} t(alpha, k, i, b') A(alpha, i, j, alpha')
    let mut u = vec![0.0; ket.r0 * b1 * a.n * p1];
    for alpha in 0..a.p0 {
        for k in 0..ket.r0 {
            for i in 0..a.m {
                for bp in 0..b1 {
                    let tv = t[((alpha * ket.r0 + k) * bra.n + i) * b1 + bp];
                    if tv == 0.0 {
                        continue;
                    }
                    for j in 0..a.n {
                        for ap in 0..p1 {
                            u[((k * b1 + bp) * a.n + j) * p1 + ap] += tv * a.at(alpha, i, j, ap);
                        }
                    }
                }
            }
        }
    }
    // out(b', alpha', k') = sum_{k, j} u(k, b', j, alpha') ket(k, j, k')
    for k in 0..ket.r0 {
        for bp in 0..b1 {
            for j in 0..ket.n {
                for ap in 0..p1 {
                    let uv = u[((k * b1 + bp) * a.n + j) * p1 + ap];
                    if uv == 0.0 {
                        continue;
                    }
                    for kp in 0..k1 {
                        out[(bp * p1 + ap) * k1 + kp] += uv * ket.at(k, j, kp);
                    }
                }
            }
        }
    }
    Env3 {
        data: out,
        shape: (b1, p1, k1),
    }
}

/// env(bra, A, ket) pushed one core to the left.
fn env3_push_right(env: &Env3, bra: &VCore, a: &ACore, ket: &VCore) -> Env3 {
    let (b0, p0, k0) = (bra.r0, a.p0, ket.r0);
    let mut out = vec![0.0; b0 * p0 * k0];
    // t(k', j, alpha, b) = sum over (b', alpha', i): bra(b,i,b') A(alpha,i,j,alpha') env(b',alpha',k')
    let mut t = vec![0.0; ket.r1 * a.n * p0 * b0];
    for b in 0..b0 {
        for i in 0..bra.n {
            for bp in 0..bra.r1 {
                let bv = bra.at(b, i, bp);
                if bv == 0.0 {
                    continue;
                }
                for alpha in 0..p0 {
                    for j in 0..a.n {
                        for ap in 0..a.p1 {
                            let av = a.at(alpha, i, j, ap);
                            if av == 0.0 {
                                continue;
                            }
                            let bav = bv * av;
                            for kp in 0..ket.r1 {
                                t[((kp * a.n + j) * p0 + alpha) * b0 + b] +=
                                    bav * env.at(bp, ap, kp);
                            }
                        }
                    }
                }
            }
        }
    }
    for k in 0..k0 {
        for j in 0..ket.n {
            for kp in 0..ket.r1 {
                let kv = ket.at(k, j, kp);
                if kv == 0.0 {
                    continue;
                }
                for alpha in 0..p0 {
                    for b in 0..b0 {
                        out[(b * p0 + alpha) * k0 + k] +=
                            kv * t[((kp * a.n + j) * p0 + alpha) * b0 + b];
                    }
                }
            }
        }
    }
    Env3 {
        data: out,
        shape: (b0, p0, k0),
    }
}

fn env2_push_left(env: &Env2, bra: &VCore, rhs: &VCore) -> Env2 {
    let (b1, s1) = (bra.r1, rhs.r1);
    let mut out = vec![0.0; b1 * s1];
    for b in 0..bra.r0 {
        for s in 0..rhs.r0 {
            let e = env.at(b, s);
            if e == 0.0 {
                continue;
            }
            for i in 0..bra.n {
                for bp in 0..b1 {
                    let bv = bra.at(b, i, bp);
                    if bv == 0.0 {
                        continue;
                    }
                    for sp in 0..s1 {
                        out[bp * s1 + sp] += e * bv * rhs.at(s, i, sp);
                    }
                }
            }
        }
    }
    Env2 {
        data: out,
        shape: (b1, s1),
    }
}

fn env2_push_right(env: &Env2, bra: &VCore, rhs: &VCore) -> Env2 {
    let (b0, s0) = (bra.r0, rhs.r0);
    let mut out = vec![0.0; b0 * s0];
    for b in 0..b0 {
        for i in 0..bra.n {
            for bp in 0..bra.r1 {
                let bv = bra.at(b, i, bp);
                if bv == 0.0 {
                    continue;
                }
                for s in 0..s0 {
                    for sp in 0..rhs.r1 {
                        out[b * s0 + s] += bv * rhs.at(s, i, sp) * env.at(bp, sp);
                    }
                }
            }
        }
    }
    Env2 {
        data: out,
        shape: (b0, s0),
    }
}

/// Local right-hand side `psi_l . B_k . psi_r` as a `(r0, n, r1)` buffer.
fn local_rhs(psi_l: &Env2, rhs: &VCore, psi_r: &Env2) -> Vec<f64> {
    let (r0, r1) = (psi_l.shape.0, psi_r.shape.0);
    let n = rhs.n;
    let mut out = vec![0.0; r0 * n * r1];
    for a in 0..r0 {
        for s in 0..rhs.r0 {
            let lv = psi_l.at(a, s);
            if lv == 0.0 {
                continue;
            }
            for i in 0..n {
                for sp in 0..rhs.r1 {
                    let bv = rhs.at(s, i, sp);
                    if bv == 0.0 {
                        continue;
                    }
                    let lb = lv * bv;
                    for c in 0..r1 {
                        out[(a * n + i) * r1 + c] += lb * psi_r.at(c, sp);
                    }
                }
            }
        }
    }
    out
}

/// Local operator action `phi_l . A_k . phi_r` applied to `(b, j, e)`.
/// The bra interfaces select the row space, ket interfaces the columns.
fn local_apply(phi_l: &Env3, a: &ACore, phi_r: &Env3, v: &[f64]) -> Vec<f64> {
    let (rb0, p0, rk0) = phi_l.shape;
    let (rb1, p1, rk1) = phi_r.shape;
    let (m, n) = (a.m, a.n);
    // t1(b, j, beta, c) = sum_e v(b, j, e) phi_r(c, beta, e)
    let mut t1 = vec![0.0; rk0 * n * p1 * rb1];
    for b in 0..rk0 {
        for j in 0..n {
            for e in 0..rk1 {
                let vv = v[(b * n + j) * rk1 + e];
                if vv == 0.0 {
                    continue;
                }
                for c in 0..rb1 {
                    for beta in 0..p1 {
                        t1[((b * n + j) * p1 + beta) * rb1 + c] += vv * phi_r.at(c, beta, e);
                    }
                }
            }
        }
    }
    // t2(alpha, i, b, c) = sum_{j, beta} A(alpha, i, j, beta) t1(b, j, beta, c)
    let mut t2 = vec![0.0; p0 * m * rk0 * rb1];
    for alpha in 0..p0 {
        for i in 0..m {
            for j in 0..n {
                for beta in 0..p1 {
                    let av = a.at(alpha, i, j, beta);
                    if av == 0.0 {
                        continue;
                    }
                    for b in 0..rk0 {
                        for c in 0..rb1 {
                            t2[((alpha * m + i) * rk0 + b) * rb1 + c] +=
                                av * t1[((b * n + j) * p1 + beta) * rb1 + c];
                        }
                    }
                }
            }
        }
    }
    // out(a, i, c) = sum_{alpha, b} phi_l(a, alpha, b) t2(alpha, i, b, c)
    let mut out = vec![0.0; rb0 * m * rb1];
    for aa in 0..rb0 {
        for alpha in 0..p0 {
            for b in 0..rk0 {
                let lv = phi_l.at(aa, alpha, b);
                if lv == 0.0 {
                    continue;
                }
                for i in 0..m {
                    for c in 0..rb1 {
                        out[(aa * m + i) * rb1 + c] +=
                            lv * t2[((alpha * m + i) * rk0 + b) * rb1 + c];
                    }
                }
            }
        }
    }
    out
}

/// Dense materialization of the local operator.
fn local_matrix(phi_l: &Env3, a: &ACore, phi_r: &Env3) -> DMatrix<f64> {
    let (rb0, p0, rk0) = phi_l.shape;
    let (rb1, p1, rk1) = phi_r.shape;
    let (m, n) = (a.m, a.n);
    let rows = rb0 * m * rb1;
    let cols = rk0 * n * rk1;
    let mut out = DMatrix::<f64>::zeros(rows, cols);
    for alpha in 0..p0 {
        for beta in 0..p1 {
            for aa in 0..rb0 {
                for b in 0..rk0 {
                    let lv = phi_l.at(aa, alpha, b);
                    if lv == 0.0 {
                        continue;
                    }
                    for i in 0..m {
                        for j in 0..n {
                            let av = a.at(alpha, i, j, beta);
                            if av == 0.0 {
                                continue;
                            }
                            let lav = lv * av;
                            for c in 0..rb1 {
                                for e in 0..rk1 {
                                    out[((aa * m + i) * rb1 + c, (b * n + j) * rk1 + e)] +=
                                        lav * phi_r.at(c, beta, e);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

struct Workspace {
    x: TTVector,
    z: TTVector,
    phi_l: Vec<Env3>,
    phi_r: Vec<Env3>,
    psi_l: Vec<Env2>,
    psi_r: Vec<Env2>,
    zphi_l: Vec<Env3>,
    zphi_r: Vec<Env3>,
    zpsi_l: Vec<Env2>,
    zpsi_r: Vec<Env2>,
}

fn vcore<'a>(x: &'a TTVector, k: usize) -> VCore<'a> {
    VCore {
        data: x.core(k),
        r0: x.ranks()[k],
        n: x.dims()[k],
        r1: x.ranks()[k + 1],
    }
}

fn acore<'a>(a: &'a TTMatrix, k: usize) -> ACore<'a> {
    ACore {
        data: a.core(k),
        p0: a.ranks()[k],
        m: a.row_dims()[k],
        n: a.col_dims()[k],
        p1: a.ranks()[k + 1],
    }
}

impl Workspace {
    fn new(a: &TTMatrix, b: &TTVector, opts: &SolveOptions) -> Self {
        let d = b.order();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let rank = opts.kickrank.max(1);
        let mut x = TTVector::random(b.dims(), rank, &mut rng);
        x.right_orthogonalize();
        // Scale the start to the right-hand side magnitude.
        let xn = x.norm();
        if xn > 0.0 {
            let s = b.norm() / xn;
            for v in x.cores[0].iter_mut() {
                *v *= s;
            }
        }
        let mut z = TTVector::random(b.dims(), rank, &mut rng);
        z.right_orthogonalize();

        let mut ws = Workspace {
            x,
            z,
            phi_l: vec![Env3::unit(); d + 1],
            phi_r: vec![Env3::unit(); d + 1],
            psi_l: vec![Env2::unit(); d + 1],
            psi_r: vec![Env2::unit(); d + 1],
            zphi_l: vec![Env3::unit(); d + 1],
            zphi_r: vec![Env3::unit(); d + 1],
            zpsi_l: vec![Env2::unit(); d + 1],
            zpsi_r: vec![Env2::unit(); d + 1],
        };
        for k in (0..d).rev() {
            ws.push_right(k, a, b);
        }
        ws
    }

    /// Refreshes every right environment at position k from core k.
    fn push_right(&mut self, k: usize, a: &TTMatrix, b: &TTVector) {
        let xc = vcore(&self.x, k);
        let ac = acore(a, k);
        let bc = vcore(b, k);
        let zc = vcore(&self.z, k);
        self.phi_r[k] = env3_push_right(&self.phi_r[k + 1], &xc, &ac, &xc);
        self.psi_r[k] = env2_push_right(&self.psi_r[k + 1], &xc, &bc);
        self.zphi_r[k] = env3_push_right(&self.zphi_r[k + 1], &zc, &ac, &xc);
        self.zpsi_r[k] = env2_push_right(&self.zpsi_r[k + 1], &zc, &bc);
    }

    /// Refreshes every left environment at position k+1 from core k.
    fn push_left(&mut self, k: usize, a: &TTMatrix, b: &TTVector) {
        let xc = vcore(&self.x, k);
        let ac = acore(a, k);
        let bc = vcore(b, k);
        let zc = vcore(&self.z, k);
        self.phi_l[k + 1] = env3_push_left(&self.phi_l[k], &xc, &ac, &xc);
        self.psi_l[k + 1] = env2_push_left(&self.psi_l[k], &xc, &bc);
        self.zphi_l[k + 1] = env3_push_left(&self.zphi_l[k], &zc, &ac, &xc);
        self.zpsi_l[k + 1] = env2_push_left(&self.zpsi_l[k], &zc, &bc);
    }
}

/// Residual core in mixed interfaces: `bra_l . b . bra_r - bra_l . A v . bra_r`.
#[allow(clippy::too_many_arguments)]
fn projected_residual(
    psi_l: &Env2,
    bc: &VCore,
    psi_r: &Env2,
    phi_l: &Env3,
    ac: &ACore,
    phi_r: &Env3,
    v: &[f64],
) -> Vec<f64> {
    let mut out = local_rhs(psi_l, bc, psi_r);
    let av = local_apply(phi_l, ac, phi_r, v);
    for (o, w) in out.iter_mut().zip(av) {
        *o -= w;
    }
    out
}

/// Solves the projected core system.
fn solve_local(
    mat_builder: impl Fn() -> DMatrix<f64>,
    apply: impl Fn(&[f64]) -> Vec<f64>,
    rhs: &[f64],
    guess: &[f64],
    solver: LocalSolver,
    fallback_tol: f64,
    sweep: usize,
    core: usize,
) -> Result<Vec<f64>> {
    let size = rhs.len();
    let use_direct = match solver {
        LocalSolver::Direct => true,
        LocalSolver::Iterative { .. } => false,
        LocalSolver::Auto { direct_size_cap } => size <= direct_size_cap,
    };
    if use_direct {
        let mat = mat_builder();
        let lu = mat.lu();
        let sol = lu
            .solve(&DVector::from_column_slice(rhs))
            .ok_or(Error::LocalSolveSingular { sweep, core })?;
        return Ok(sol.as_slice().to_vec());
    }
    let (maxit, tol) = match solver {
        LocalSolver::Iterative {
            max_iterations,
            tol,
        } => (max_iterations, tol),
        _ => (400, (fallback_tol * 0.1).max(1e-14)),
    };
    // Jacobi scaling on the left: solve D^-1 A v = D^-1 rhs.
    let mut diag = apply_diagonal(&apply, size);
    for d in diag.iter_mut() {
        if d.abs() < 1e-300 {
            *d = 1.0;
        }
    }
    let scaled_rhs = DVector::from_fn(size, |i, _| rhs[i] / diag[i]);
    let op = |v: &DVector<f64>| -> DVector<f64> {
        let out = apply(v.as_slice());
        DVector::from_fn(size, |i, _| out[i] / diag[i])
    };
    let guess_v = DVector::from_column_slice(guess);
    let restart = 60.min(size);
    let outer = (maxit / restart.max(1)).max(1);
    let out = gmres(&op, &scaled_rhs, Some(&guess_v), tol, restart, outer);
    Ok(out.x.as_slice().to_vec())
}

/// Extracts the operator diagonal by probing unit vectors in blocks.
fn apply_diagonal(apply: &impl Fn(&[f64]) -> Vec<f64>, size: usize) -> Vec<f64> {
    // Probing all unit vectors is quadratic; a stride trick keeps it
    // cheap enough for the local sizes seen here.
    let mut diag = vec![0.0; size];
    let stride = (size as f64).sqrt().ceil() as usize;
    for offset in 0..stride.min(size) {
        let mut probe = vec![0.0; size];
        let mut idx = offset;
        while idx < size {
            probe[idx] = 1.0;
            idx += stride;
        }
        let out = apply(&probe);
        let mut idx = offset;
        while idx < size {
            diag[idx] = out[idx];
            idx += stride;
        }
    }
    diag
}

fn relative_residual(a: &TTMatrix, x: &TTVector, b: &TTVector, tol: f64) -> f64 {
    let bn = b.norm();
    if bn == 0.0 {
        return x.norm();
    }
    let ax = a.apply(x).expect("shapes checked").round(tol * 0.1, None);
    let r = b.add(&ax.scale(-1.0)).expect("shapes checked");
    r.norm() / bn
}

/// Solves `A x = b` in TT format by ALS sweeps with residual enrichment.
///
/// On convergence the relative TT residual is at most `opts.tol`. If the
/// sweep budget runs out, the best iterate seen is returned with
/// `converged = false` in the report.
pub fn amen_solve(
    a: &TTMatrix,
    b: &TTVector,
    opts: &SolveOptions,
) -> Result<(TTVector, SolveReport)> {
    if a.row_dims() != a.col_dims() {
        return Err(Error::InvalidArgument(
            "amen_solve expects a square operator".into(),
        ));
    }
    if a.col_dims() != b.dims() {
        return Err(Error::DimMismatch(format!(
            "operator dims {:?} do not match rhs dims {:?}",
            a.col_dims(),
            b.dims()
        )));
    }
    if opts.tol <= 0.0 {
        return Err(Error::InvalidArgument("solver tol must be > 0".into()));
    }
    let d = b.order();
    if d == 1 {
        let mat = a.to_dense_matrix()?;
        let rhs = DVector::from_column_slice(&b.to_dense()?.data);
        let sol = mat
            .lu()
            .solve(&rhs)
            .ok_or(Error::LocalSolveSingular { sweep: 0, core: 0 })?;
        let x = TTVector::from_cores(vec![sol.as_slice().to_vec()], b.dims().to_vec(), vec![1, 1])?;
        let res = relative_residual(a, &x, b, opts.tol);
        return Ok((
            x,
            SolveReport {
                converged: res <= opts.tol,
                sweeps: 1,
                residual_history: vec![res],
                final_ranks: vec![1, 1],
            },
        ));
    }

    let mut ws = Workspace::new(a, b, opts);
    let split_tol = opts.tol / ((d - 1) as f64).sqrt() * 0.1;
    let mut history = Vec::new();
    let mut best: Option<(TTVector, f64)> = None;
    let mut converged = false;
    let mut sweeps = 0;

    for sweep in 1..=opts.max_sweeps {
        sweeps = sweep;
        // Left-to-right half sweep.
        for k in 0..d {
            let v = {
                let bc = vcore(b, k);
                let rhs = local_rhs(&ws.psi_l[k], &bc, &ws.psi_r[k + 1]);
                let phi_l = ws.phi_l[k].clone();
                let phi_r = ws.phi_r[k + 1].clone();
                let guess = ws.x.core(k).to_vec();
                solve_local(
                    || local_matrix(&phi_l, &acore(a, k), &phi_r),
                    |w| local_apply(&phi_l, &acore(a, k), &phi_r, w),
                    &rhs,
                    &guess,
                    opts.local_solver,
                    opts.tol,
                    sweep,
                    k,
                )?
            };
            if k == d - 1 {
                ws.x.cores[k] = v;
                break;
            }
            let (r0, n, r1) = (ws.x.ranks()[k], ws.x.dims()[k], ws.x.ranks()[k + 1]);
            let vmat = unfold_rm(&v, r0 * n, r1);
            let vnorm = vmat.norm();
            let (u, sv_t) = truncated_svd(&vmat, split_tol * vnorm, opts.max_rank);
            let (frame, carry) = if opts.kickrank > 0 {
                // Enrich the frame with the projected residual.
                let e = projected_residual(
                    &ws.psi_l[k],
                    &vcore(b, k),
                    &ws.zpsi_r[k + 1],
                    &ws.phi_l[k],
                    &acore(a, k),
                    &ws.zphi_r[k + 1],
                    &v,
                );
                let qz = ws.zphi_r[k + 1].shape.0;
                let emat = unfold_rm(&e, r0 * n, qz);
                let mut stacked = DMatrix::<f64>::zeros(r0 * n, u.ncols() + qz);
                stacked.view_mut((0, 0), (r0 * n, u.ncols())).copy_from(&u);
                stacked
                    .view_mut((0, u.ncols()), (r0 * n, qz))
                    .copy_from(&emat);
                let qr = stacked.qr();
                let q = qr.q();
                let r = qr.r();
                let carry = r.columns(0, u.ncols()).into_owned() * &sv_t;
                (q, carry)
            } else {
                (u.clone(), sv_t)
            };
            let new_rank = frame.ncols();
            ws.x.cores[k] = flatten_rm(&frame);
            ws.x.ranks[k + 1] = new_rank;
            // Absorb the carry into the next core.
            let next = unfold_rm(&ws.x.cores[k + 1], r1, ws.x.dims[k + 1] * ws.x.ranks[k + 2]);
            ws.x.cores[k + 1] = flatten_rm(&(carry * next));
            // Update the residual basis core.
            if opts.kickrank > 0 {
                let zloc = projected_residual(
                    &ws.zpsi_l[k],
                    &vcore(b, k),
                    &ws.zpsi_r[k + 1],
                    &ws.zphi_l[k],
                    &acore(a, k),
                    &ws.zphi_r[k + 1],
                    &v,
                );
                let (q0, q1) = (ws.z.ranks()[k], ws.z.ranks()[k + 1]);
                let zmat = unfold_rm(&zloc, q0 * n, q1);
                let keep = opts.kickrank.min(q0 * n).min(q1).max(1);
                let (zu, _) = truncated_svd(&zmat, 0.0, Some(keep));
                let zrank = zu.ncols();
                ws.z.cores[k] = flatten_rm(&zu);
                ws.z.ranks[k + 1] = zrank;
                let znext = unfold_rm(
                    &ws.z.cores[k + 1],
                    q1,
                    ws.z.dims[k + 1] * ws.z.ranks[k + 2],
                );
                // The next z core only provides a frame; project it to the
                // new rank with the orthonormal basis transpose.
                let reduced = zu.transpose() * unfold_rm(&zloc, q0 * n, q1);
                ws.z.cores[k + 1] = flatten_rm(&(reduced * znext));
            }
            ws.push_left(k, a, b);
        }

        // Right-to-left half sweep.
        for k in (0..d).rev() {
            let v = {
                let bc = vcore(b, k);
                let rhs = local_rhs(&ws.psi_l[k], &bc, &ws.psi_r[k + 1]);
                let phi_l = ws.phi_l[k].clone();
                let phi_r = ws.phi_r[k + 1].clone();
                let guess = ws.x.core(k).to_vec();
                solve_local(
                    || local_matrix(&phi_l, &acore(a, k), &phi_r),
                    |w| local_apply(&phi_l, &acore(a, k), &phi_r, w),
                    &rhs,
                    &guess,
                    opts.local_solver,
                    opts.tol,
                    sweep,
                    k,
                )?
            };
            if k == 0 {
                ws.x.cores[k] = v;
                break;
            }
            let (r0, n, r1) = (ws.x.ranks()[k], ws.x.dims()[k], ws.x.ranks()[k + 1]);
            // Split (r0) x (n r1); the right factor becomes the new core.
            let vmat = unfold_rm(&v, r0, n * r1);
            let vnorm = vmat.norm();
            let (u2, sv_t2) = truncated_svd(&vmat.transpose(), split_tol * vnorm, opts.max_rank);
            // v ~ (sv_t2^T) (u2^T); rows of u2^T are orthonormal.
            let frame0 = u2.transpose();
            let carry0 = sv_t2.transpose();
            let (frame, carry) = if opts.kickrank > 0 {
                let e = projected_residual(
                    &ws.zpsi_l[k],
                    &vcore(b, k),
                    &ws.psi_r[k + 1],
                    &ws.zphi_l[k],
                    &acore(a, k),
                    &ws.phi_r[k + 1],
                    &v,
                );
                let qz = ws.zphi_l[k].shape.0;
                let emat = unfold_rm(&e, qz, n * r1);
                let mut stacked = DMatrix::<f64>::zeros(frame0.nrows() + qz, n * r1);
                stacked
                    .view_mut((0, 0), (frame0.nrows(), n * r1))
                    .copy_from(&frame0);
                stacked
                    .view_mut((frame0.nrows(), 0), (qz, n * r1))
                    .copy_from(&emat);
                let qr = stacked.transpose().qr();
                let q = qr.q();
                let r = qr.r();
                let frame = q.transpose();
                let carry = carry0 * r.columns(0, frame0.nrows()).transpose();
                (frame, carry)
            } else {
                (frame0, carry0)
            };
            let new_rank = frame.nrows();
            ws.x.cores[k] = flatten_rm(&frame);
            ws.x.ranks[k] = new_rank;
            let prev = unfold_rm(
                &ws.x.cores[k - 1],
                ws.x.ranks[k - 1] * ws.x.dims[k - 1],
                r0,
            );
            ws.x.cores[k - 1] = flatten_rm(&(prev * carry));
            if opts.kickrank > 0 {
                let zloc = projected_residual(
                    &ws.zpsi_l[k],
                    &vcore(b, k),
                    &ws.zpsi_r[k + 1],
                    &ws.zphi_l[k],
                    &acore(a, k),
                    &ws.zphi_r[k + 1],
                    &v,
                );
                let (q0, q1) = (ws.z.ranks()[k], ws.z.ranks()[k + 1]);
                let zmat = unfold_rm(&zloc, q0, n * q1);
                let keep = opts.kickrank.min(n * q1).min(q0).max(1);
                let (zu, _) = truncated_svd(&zmat.transpose(), 0.0, Some(keep));
                let zrank = zu.ncols();
                ws.z.cores[k] = flatten_rm(&zu.transpose());
                ws.z.ranks[k] = zrank;
                let zprev = unfold_rm(
                    &ws.z.cores[k - 1],
                    ws.z.ranks[k - 1] * ws.z.dims[k - 1],
                    q0,
                );
                let reduced = unfold_rm(&zloc, q0, n * q1) * zu;
                ws.z.cores[k - 1] = flatten_rm(&(zprev * reduced));
            }
            ws.push_right(k, a, b);
        }

        let res = relative_residual(a, &ws.x, b, opts.tol);
        history.push(res);
        if best.as_ref().map_or(true, |(_, r)| res < *r) {
            best = Some((ws.x.clone(), res));
        }
        if res <= opts.tol {
            converged = true;
            break;
        }
    }

    let (x, _) = best.expect("at least one sweep ran");
    let final_ranks = x.ranks().to_vec();
    Ok((
        x,
        SolveReport {
            converged,
            sweeps,
            residual_history: history,
            final_ranks,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DenseTensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_rel_err(x: &TTVector, y: &TTVector) -> f64 {
        let a = x.to_dense().unwrap();
        let b = y.to_dense().unwrap();
        let num: f64 = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(u, v)| (u - v) * (u - v))
            .sum();
        num.sqrt() / b.norm().max(1e-300)
    }

    fn random_kron_sum_operator(dims: &[usize], shift: f64, seed: u64) -> TTMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = dims.len();
        let identity: Vec<DMatrix<f64>> =
            dims.iter().map(|&n| DMatrix::identity(n, n)).collect();
        let mut acc = TTMatrix::from_kronecker(&identity).scale(shift);
        for axis in 0..d {
            let mut factors = identity.clone();
            factors[axis] =
                DMatrix::from_fn(dims[axis], dims[axis], |_, _| rng.gen_range(-0.5..0.5));
            acc = acc.add(&TTMatrix::from_kronecker(&factors)).unwrap();
        }
        acc.round(1e-14, None)
    }

    #[test]
    fn identity_system_returns_rhs() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let b = TTVector::random(&[3, 3, 3], 2, &mut rng);
        let a = TTMatrix::identity(&[3, 3, 3]);
        let opts = SolveOptions {
            tol: 1e-12,
            ..SolveOptions::default()
        };
        let (x, report) = amen_solve(&a, &b, &opts).unwrap();
        assert!(report.converged);
        assert!(dense_rel_err(&x, &b) <= 1e-10);
    }

    #[test]
    fn diagonal_scaling_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let b = TTVector::random(&[3, 2, 3], 2, &mut rng);
        let twos = TTVector::rank_one(&[vec![2.0; 3], vec![1.0; 2], vec![1.0; 3]]);
        let a = TTMatrix::diagonal(&twos);
        let (x, report) = amen_solve(&a, &b, &SolveOptions::default()).unwrap();
        assert!(report.converged);
        let half = b.scale(0.5);
        assert!(dense_rel_err(&x, &half) <= 1e-9);
    }

    #[test]
    fn laplacian_like_manufactured_solution() {
        let dims = [4, 4, 4];
        let a = random_kron_sum_operator(&dims, 4.0, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x_known = TTVector::random(&dims, 2, &mut rng).round(1e-14, None);
        let b = a.apply(&x_known).unwrap().round(1e-14, None);
        let opts = SolveOptions {
            tol: 1e-10,
            ..SolveOptions::default()
        };
        let (x, report) = amen_solve(&a, &b, &opts).unwrap();
        assert!(report.converged, "history {:?}", report.residual_history);
        assert!(dense_rel_err(&x, &x_known) <= 1e-8);
    }

    #[test]
    fn dense_cross_check_on_small_system() {
        let dims = [3, 3, 3];
        let a = random_kron_sum_operator(&dims, 5.0, 17);
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let b = TTVector::random(&dims, 2, &mut rng);
        let (x, report) = amen_solve(&a, &b, &SolveOptions::default()).unwrap();
        assert!(report.converged);
        let amat = a.to_dense_matrix().unwrap();
        let bvec = DVector::from_column_slice(&b.to_dense().unwrap().data);
        let want = amat.lu().solve(&bvec).unwrap();
        let got = x.to_dense().unwrap();
        let num: f64 = got
            .data
            .iter()
            .zip(want.iter())
            .map(|(u, v)| (u - v) * (u - v))
            .sum();
        assert!(num.sqrt() / want.norm() <= 1e-8);
    }

    #[test]
    fn report_residual_matches_independent_recompute() {
        let dims = [3, 3];
        let a = random_kron_sum_operator(&dims, 4.0, 20);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let b = TTVector::random(&dims, 2, &mut rng);
        let opts = SolveOptions::default();
        let (x, report) = amen_solve(&a, &b, &opts).unwrap();
        let independent = {
            let ax = a.apply(&x).unwrap().round(opts.tol * 0.1, None);
            b.add(&ax.scale(-1.0)).unwrap().norm() / b.norm()
        };
        let reported = *report.residual_history.last().unwrap();
        assert!((reported - independent).abs() <= 1e-10 * independent.max(1e-30) + 1e-14);
    }

    #[test]
    fn deterministic_under_fixed_seed() {
        let dims = [3, 3, 3];
        let a = random_kron_sum_operator(&dims, 4.0, 22);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let b = TTVector::random(&dims, 2, &mut rng);
        let opts = SolveOptions::default();
        let (x1, r1) = amen_solve(&a, &b, &opts).unwrap();
        let (x2, r2) = amen_solve(&a, &b, &opts).unwrap();
        assert_eq!(x1, x2);
        assert_eq!(r1.residual_history, r2.residual_history);
    }

    #[test]
    fn nonsymmetric_operator_converges() {
        // Strongly nonsymmetric: a lower-bidiagonal time-like factor.
        let n = 4;
        let mut tdown = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            tdown[(i, i)] = 2.0;
            if i > 0 {
                tdown[(i, i - 1)] = -2.0;
            }
        }
        let identity = DMatrix::identity(n, n);
        let a = TTMatrix::from_kronecker(&[tdown, identity.clone(), identity.clone()])
            .add(&TTMatrix::identity(&[n, n, n]))
            .unwrap()
            .round(1e-14, None);
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let x_known = TTVector::random(&[n, n, n], 2, &mut rng).round(1e-14, None);
        let b = a.apply(&x_known).unwrap().round(1e-14, None);
        let opts = SolveOptions {
            tol: 1e-9,
            ..SolveOptions::default()
        };
        let (x, report) = amen_solve(&a, &b, &opts).unwrap();
        assert!(report.converged, "history {:?}", report.residual_history);
        assert!(dense_rel_err(&x, &x_known) <= 1e-7);
    }

    #[test]
    fn one_dimensional_fallback() {
        let mat = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 3.0]);
        let a = TTMatrix::from_kronecker(&[mat]);
        let b = TTVector::from_dense(
            &DenseTensor::from_data(vec![2], vec![3.0, 3.0]).unwrap(),
            0.0,
        )
        .unwrap();
        let (x, report) = amen_solve(&a, &b, &SolveOptions::default()).unwrap();
        assert!(report.converged);
        let dense = x.to_dense().unwrap();
        assert!((dense.data[0] - 1.0).abs() < 1e-12);
        assert!((dense.data[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shape_guards() {
        let a = TTMatrix::identity(&[2, 3]);
        let b = TTVector::zeros(&[3, 2]);
        assert!(amen_solve(&a, &b, &SolveOptions::default()).is_err());
    }
}

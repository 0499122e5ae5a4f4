//! Quick invariant suite behind `ttst selftest`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ttst::cdr::{assemble_boundary, CdrProblem, SpaceTimeGrid, TimeScheme};
use ttst::cross::{maxvol, tt_cross, CrossConfig, GridFunction};
use ttst::reference::backward_euler_march_dense;
use ttst::solve::{amen_solve, SolveOptions};
use ttst::tensor::DenseTensor;
use ttst::{TTMatrix, TTVector};

type Check = (&'static str, bool);

fn tt_round_trip() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let x = DenseTensor::from_fn(vec![4, 4, 4], |_| rng.gen_range(-1.0..1.0)).unwrap();
    let tt = match TTVector::from_dense(&x, 0.0) {
        Ok(tt) => tt,
        Err(_) => return false,
    };
    let back = tt.to_dense().unwrap();
    let err: f64 = x
        .data
        .iter()
        .zip(&back.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    err / x.norm() <= 1e-12
}

fn rounding_contract() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for _ in 0..10 {
        let x = DenseTensor::from_fn(vec![4, 4, 4], |_| rng.gen_range(-1.0..1.0)).unwrap();
        let tt = TTVector::from_dense(&x, 0.0).unwrap();
        let tol = 10f64.powi(-rng.gen_range(1..10));
        let rounded = tt.round(tol, None);
        let back = rounded.to_dense().unwrap();
        let err: f64 = x
            .data
            .iter()
            .zip(&back.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if err > tol * x.norm() {
            return false;
        }
    }
    true
}

fn matvec_against_dense() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let factors: Vec<DMatrix<f64>> = (0..3)
        .map(|_| DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0)))
        .collect();
    let a = TTMatrix::from_kronecker(&factors);
    let x = TTVector::random(&[3, 3, 3], 2, &mut rng);
    let got = a.apply(&x).unwrap().to_dense().unwrap();
    let dense_a = a.to_dense_matrix().unwrap();
    let want = dense_a * nalgebra::DVector::from_column_slice(&x.to_dense().unwrap().data);
    got.data
        .iter()
        .zip(want.iter())
        .all(|(u, v)| (u - v).abs() <= 1e-11)
}

fn diag_lift_hadamard() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let k = TTVector::random(&[3, 3, 3], 2, &mut rng);
    let u = TTVector::random(&[3, 3, 3], 2, &mut rng);
    let got = TTMatrix::diagonal(&k).apply(&u).unwrap().to_dense().unwrap();
    let want = k
        .to_dense()
        .unwrap()
        .hadamard(&u.to_dense().unwrap())
        .unwrap();
    got.data
        .iter()
        .zip(&want.data)
        .all(|(a, b)| (a - b).abs() <= 1e-11)
}

fn maxvol_postcondition() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    for _ in 0..10 {
        let m = DMatrix::from_fn(30, 4, |_, _| rng.gen_range(-1.0..1.0));
        let sel = match maxvol(&m, 1e-2) {
            Ok(sel) => sel,
            Err(_) => return false,
        };
        let block = DMatrix::from_fn(4, 4, |i, j| m[(sel[i], j)]);
        let coeffs = block.transpose().lu().solve(&m.transpose()).unwrap().transpose();
        if coeffs.amax() > 1.0 + 1e-2 + 1e-8 {
            return false;
        }
    }
    true
}

fn cross_separable() -> bool {
    let axes: Vec<Vec<f64>> = (0..4).map(|_| vec![0.0, 0.25, 0.5, 0.75, 1.0]).collect();
    let f = GridFunction::new(axes, |c: &[f64]| {
        (1.0 + c[0]) * (2.0 - c[1]) * c[2].exp() * (1.0 + c[3] * c[3])
    })
    .unwrap();
    match tt_cross(&f, &CrossConfig::default()) {
        Ok(result) => result.converged && result.tt.max_rank() == 1,
        Err(_) => false,
    }
}

fn solver_manufactured() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let eye = DMatrix::identity(4, 4);
    let mut a = TTMatrix::identity(&[4, 4, 4]).scale(4.0);
    for axis in 0..3 {
        let mut factors = vec![eye.clone(), eye.clone(), eye.clone()];
        factors[axis] = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-0.5..0.5));
        a = a.add(&TTMatrix::from_kronecker(&factors)).unwrap();
    }
    let a = a.round(1e-14, None);
    let x_known = TTVector::random(&[4, 4, 4], 2, &mut rng).round(1e-14, None);
    let b = a.apply(&x_known).unwrap().round(1e-14, None);
    let opts = SolveOptions {
        tol: 1e-9,
        ..SolveOptions::default()
    };
    match amen_solve(&a, &b, &opts) {
        Ok((x, report)) => {
            if !report.converged {
                return false;
            }
            let got = x.to_dense().unwrap();
            let want = x_known.to_dense().unwrap();
            let num: f64 = got
                .data
                .iter()
                .zip(&want.data)
                .map(|(u, v)| (u - v) * (u - v))
                .sum();
            num.sqrt() / want.norm() <= 1e-7
        }
        Err(_) => false,
    }
}

fn homogeneous_boundary_zero() -> bool {
    let problem = CdrProblem::constant_coefficients(
        [(-1.0, 1.0); 3],
        1.0,
        1.0,
        [1.0; 3],
        1.0,
        |_, _, _, _| 0.0,
        |_, _, _, _| 0.0,
        |_, _, _| 0.0,
    );
    let grid = SpaceTimeGrid::new(4, problem.domain, 1.0, TimeScheme::Spectral).unwrap();
    match assemble_boundary(&problem, &grid, 1e-12, &CrossConfig::default()) {
        Ok(bd) => bd.norm() == 0.0,
        Err(_) => false,
    }
}

fn backward_euler_closed_form() -> bool {
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
    match backward_euler_march_dense(&problem, 2, steps) {
        Ok(levels) => {
            let dt = 1.0 / steps as f64;
            let want = (1.0 + dt).powi(-(steps as i32));
            levels
                .last()
                .unwrap()
                .data
                .iter()
                .all(|v| (v - want).abs() <= 1e-12)
        }
        Err(_) => false,
    }
}

/// Runs the whole suite and returns (name, passed) pairs.
pub fn run() -> Vec<Check> {
    vec![
        ("tt round-trip", tt_round_trip()),
        ("rounding contract", rounding_contract()),
        ("matvec vs dense", matvec_against_dense()),
        ("diag lift is hadamard", diag_lift_hadamard()),
        ("maxvol postcondition", maxvol_postcondition()),
        ("cross on separable function", cross_separable()),
        ("solver recovers manufactured solution", solver_manufactured()),
        ("homogeneous boundary tensor is zero", homogeneous_boundary_zero()),
        ("backward Euler closed form", backward_euler_closed_form()),
    ]
}

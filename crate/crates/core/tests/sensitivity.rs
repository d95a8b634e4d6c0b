use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use deepc_attack::implicit::{
    assemble_sensitivity, directional_sensitivity, residual, solve_adjoint, SensitivityOperators,
};
use deepc_attack::{assemble_compact, assemble_nominal, solve_qp, Error, SaddlePoint};
use deepc_testkit::fd::central_jacobian;
use deepc_testkit::instances::{gaussian_vector, small_problem, SmallSpec};

const TOL: f64 = 1e-9;

struct Case {
    prob: deepc_attack::DpcProblem,
    sol: SaddlePoint,
    ops: SensitivityOperators,
}

fn case(seed: u64) -> Case {
    let (prob, _) = small_problem(seed, SmallSpec::default());
    let qp = assemble_nominal(&prob);
    let sol = solve_qp(&qp, TOL, 200_000).unwrap();
    let ops = assemble_sensitivity(&qp, &sol, TOL).unwrap();
    Case { prob, sol, ops }
}

fn rows_except(m: &DMatrix<f64>, skip: &[usize]) -> DMatrix<f64> {
    let keep: Vec<usize> = (0..m.nrows()).filter(|i| !skip.contains(i)).collect();
    DMatrix::from_fn(keep.len(), m.ncols(), |i, j| m[(keep[i], j)])
}

#[test]
fn jacobians_match_finite_differences_of_the_residual() {
    let mut active_instances = 0;
    for seed in 0..20 {
        let c = case(seed);
        let qp = assemble_nominal(&c.prob);
        let n = qp.n();
        let xi = c.sol.xi();
        let h = 1e-6;
        let j_fd = central_jacobian(
            |x| {
                let z = x.rows(0, n).into_owned();
                let w = x.rows(n, x.len() - n).into_owned();
                residual(&qp, &z, &w).unwrap().value
            },
            &xi,
            h,
        );
        let p0 = DVector::zeros(c.prob.y_ini.len());
        let k_fd = central_jacobian(
            |p| {
                residual(&assemble_compact(&c.prob, p).unwrap(), &c.sol.z, &c.sol.w)
                    .unwrap()
                    .value
            },
            &p0,
            h,
        );
        let skip = c.ops.boundary_flags();
        let j = rows_except(&c.ops.j, skip);
        let k = rows_except(&c.ops.k, skip);
        let j_err = (rows_except(&j_fd, skip) - &j).norm() / j.norm();
        let k_err = (rows_except(&k_fd, skip) - &k).norm() / k.norm();
        assert!(j_err <= 1e-5, "seed {seed}: J error {j_err:e}");
        assert!(k_err <= 1e-5, "seed {seed}: K error {k_err:e}");
        if c.ops.proj_jac.diagonal.iter().any(|d| *d == 0.0) {
            active_instances += 1;
        }
    }
    assert!(
        active_instances >= 5,
        "only {active_instances} instances with active bounds"
    );
}

#[test]
fn forward_sensitivity_matches_resolved_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut informative = 0;
    for seed in 0..20 {
        let c = case(seed);
        let u_len = c.ops.layout.u_len;
        let dp = gaussian_vector(&mut rng, c.prob.y_ini.len()).normalize();
        let d_xi = directional_sensitivity(&c.ops, &dp).unwrap();
        let predicted = d_xi.rows(0, u_len).into_owned();
        let h = 1e-6;
        let u_at = |s: f64| {
            let qp = assemble_compact(&c.prob, &(&dp * s)).unwrap();
            solve_qp(&qp, TOL, 200_000).unwrap().z.rows(0, u_len).into_owned()
        };
        let fd = (u_at(h) - u_at(-h)) / (2.0 * h);
        let scale = fd.norm().max(predicted.norm());
        let err = (&fd - &predicted).norm();
        if scale < 1e-6 {
            // Inputs pinned by active bounds: both sides are re-solve noise.
            assert!(err <= 1e-6, "seed {seed}: absolute error {err:e}");
        } else {
            informative += 1;
            assert!(err <= 1e-3 * scale, "seed {seed}: relative error {:e}", err / scale);
        }
    }
    assert!(
        informative >= 15,
        "only {informative} instances with a nonzero sensitivity"
    );
}

#[test]
fn adjoint_and_forward_modes_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..10 {
        let c = case(seed);
        let u_len = c.ops.layout.u_len;
        let dp = gaussian_vector(&mut rng, c.prob.y_ini.len());
        let v = gaussian_vector(&mut rng, u_len);
        // ⟨v, T dξ⟩ with dξ = −J⁻¹K dp, against ⟨Kᵀη, dp⟩ with Jᵀη = −Tᵀv.
        let forward = v.dot(&directional_sensitivity(&c.ops, &dp).unwrap().rows(0, u_len));
        let eta = solve_adjoint(&c.ops, &v).unwrap().eta;
        let adjoint = (c.ops.k.tr_mul(&eta)).dot(&dp);
        assert!(
            (forward - adjoint).abs() <= 1e-8 * forward.abs().max(1.0),
            "seed {seed}: {forward} vs {adjoint}"
        );
    }
}

#[test]
fn projection_jacobian_is_idempotent() {
    for seed in 0..5 {
        let c = case(seed);
        let d = &c.ops.proj_jac.diagonal;
        assert_eq!(d.component_mul(d), *d);
        assert!(d.iter().all(|v| *v == 0.0 || *v == 1.0));
    }
}

#[test]
fn perturbation_only_enters_the_g_rows() {
    let c = case(1);
    let g = c.ops.layout.g();
    for i in 0..c.ops.k.nrows() {
        if !g.contains(&i) {
            assert!(c.ops.k.row(i).iter().all(|v| *v == 0.0), "row {i} of K is nonzero");
        }
    }
}

#[test]
fn adjoint_dimension_is_primal_plus_dual() {
    let c = case(0);
    let qp = assemble_nominal(&c.prob);
    let adj = solve_adjoint(&c.ops, &DVector::zeros(c.ops.layout.u_len)).unwrap();
    assert_eq!(adj.lsq_dimension, qp.n() + qp.m());
    assert_eq!(adj.eta, DVector::zeros(qp.n() + qp.m()));
}

#[test]
fn differentiation_refuses_a_point_that_is_not_a_solution() {
    let c = case(0);
    let qp = assemble_nominal(&c.prob);
    let mut bad = c.sol.clone();
    bad.z[0] += 1.0;
    assert!(matches!(
        assemble_sensitivity(&qp, &bad, TOL),
        Err(Error::DegenerateSolution { .. })
    ));
}

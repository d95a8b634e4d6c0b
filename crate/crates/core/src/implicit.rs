//! Optimality residual of the compact program and implicit differentiation
//! of its solution map with respect to the output-window perturbation.
//!
//! With `z⁺ = z − Pz − q − Hᵀw`, the primal-dual pair `ξ = (z, w)` is a
//! saddle point exactly when
//!
//! ```text
//! F(ξ, p) = [ z − Π_D(z⁺) ; Hz − b ] = 0.
//! ```
//!
//! Differentiating `F` gives `J = ∂_ξF` and `K = ∂_pF`, and the solution map
//! has derivative `−J⁻¹K` wherever `J` is nonsingular and `Π_D` is smooth at
//! `z⁺`.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{vcat, EquilibratedSvd};
use crate::problem::{Bounds, CompactQp, Layout};
use crate::solver::SaddlePoint;

/// Coordinates of `z⁺` within this distance of a finite bound are treated
/// as clamped and reported.
pub const BOUNDARY_EPS: f64 = 1e-9;

/// Relative singular-value cutoff of the least-squares solves.
pub const LSQ_RCOND: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    /// `F(ξ, p)`, length `n + m`.
    pub value: DVector<f64>,
    /// Pre-projection point `z⁺`.
    pub z_plus: DVector<f64>,
}

impl Residual {
    pub fn norm(&self) -> f64 {
        self.value.norm()
    }
}

/// Acceptance threshold `tol · (1 + ‖q‖)` for `‖F‖`.
pub fn residual_threshold(qp: &CompactQp, tol: f64) -> f64 {
    tol * (1.0 + qp.q.norm())
}

/// Multiple of the rounding error of evaluating `Pz + q + Hᵀw` used as a
/// floor under the acceptance threshold.
pub const ROUNDING_FACTOR: f64 = 10.0;

/// Size of `F` that double precision cannot resolve at `(z, w)`:
/// `ROUNDING_FACTOR · ε · ‖|P||z| + |H|ᵀ|w| + |q|‖`. With a large slack
/// weight and a small `q` this exceeds `tol · (1 + ‖q‖)`.
pub fn rounding_floor(qp: &CompactQp, z: &DVector<f64>, w: &DVector<f64>) -> f64 {
    let mut scale = qp.q.abs();
    for (j, zj) in z.iter().enumerate() {
        let a = zj.abs();
        if a != 0.0 {
            for (s, pij) in scale.iter_mut().zip(qp.p.column(j).iter()) {
                *s += pij.abs() * a;
            }
        }
    }
    for (r, wr) in w.iter().enumerate() {
        let a = wr.abs();
        if a != 0.0 {
            for (s, hri) in scale.iter_mut().zip(qp.h.row(r).iter()) {
                *s += hri.abs() * a;
            }
        }
    }
    ROUNDING_FACTOR * f64::EPSILON * scale.norm()
}

/// `max(tol · (1 + ‖q‖), rounding_floor)`: what the solver and the
/// differentiation step accept as `F = 0`.
pub fn acceptance_threshold(qp: &CompactQp, z: &DVector<f64>, w: &DVector<f64>, tol: f64) -> f64 {
    residual_threshold(qp, tol).max(rounding_floor(qp, z, w))
}

pub fn residual(qp: &CompactQp, z: &DVector<f64>, w: &DVector<f64>) -> Result<Residual> {
    check_dim("primal iterate", qp.n(), z.len())?;
    check_dim("dual iterate", qp.m(), w.len())?;
    let mut grad = &qp.p * z + &qp.q;
    grad.gemv_tr(1.0, &qp.h, w, 1.0);
    let z_plus = z - grad;
    let primal = z - qp.bounds.project(&z_plus);
    let dual = &qp.h * z - &qp.b;
    Ok(Residual {
        value: vcat(&[&primal, &dual]),
        z_plus,
    })
}

/// Diagonal of `∂Π_D(z⁺)` together with the coordinates that sit on a
/// nondifferentiable point.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionJacobian {
    /// 1.0 where the projection is locally the identity, 0.0 where it is
    /// locally constant.
    pub diagonal: DVector<f64>,
    /// Indices within `eps` of a finite bound; these take the clamped
    /// derivative 0.
    pub boundary: Vec<usize>,
}

pub fn projection_jacobian(z_plus: &DVector<f64>, bounds: &Bounds, eps: f64) -> ProjectionJacobian {
    let mut diagonal = DVector::zeros(z_plus.len());
    let mut boundary = Vec::new();
    for (i, &v) in z_plus.iter().enumerate() {
        let (lo, hi) = (bounds.lower[i], bounds.upper[i]);
        if (v - lo).abs() <= eps || (v - hi).abs() <= eps {
            boundary.push(i);
        } else if v > lo && v < hi {
            diagonal[i] = 1.0;
        }
    }
    ProjectionJacobian { diagonal, boundary }
}

/// `J` and `K` at a saddle point.
#[derive(Debug)]
pub struct SensitivityOperators {
    pub j: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub proj_jac: ProjectionJacobian,
    pub layout: Layout,
    svd: OnceLock<EquilibratedSvd>,
}

impl SensitivityOperators {
    /// Builds the operators from an arbitrary projection Jacobian; the
    /// finite-difference tests use this to probe `F` off the solution.
    pub fn from_parts(qp: &CompactQp, proj_jac: ProjectionJacobian) -> Self {
        let (n, m) = (qp.n(), qp.m());
        let d = &proj_jac.diagonal;
        let mut j = DMatrix::zeros(n + m, n + m);
        for i in 0..n {
            if d[i] == 1.0 {
                // I − (I − P) = P on a free row.
                j.view_mut((i, 0), (1, n)).copy_from(&qp.p.row(i));
                for r in 0..m {
                    j[(i, n + r)] = qp.h[(r, i)];
                }
            } else {
                j[(i, i)] = 1.0;
            }
        }
        j.view_mut((n, 0), (m, n)).copy_from(&qp.h);

        let np = qp.q_sensitivity.ncols();
        let mut k = DMatrix::zeros(n + m, np);
        for i in 0..n {
            if d[i] == 1.0 {
                k.view_mut((i, 0), (1, np)).copy_from(&qp.q_sensitivity.row(i));
            }
        }
        Self {
            j,
            k,
            proj_jac,
            layout: qp.layout,
            svd: OnceLock::new(),
        }
    }

    pub fn boundary_flags(&self) -> &[usize] {
        &self.proj_jac.boundary
    }

    /// Truncated SVD of the equilibrated `J`, computed once.
    pub fn svd(&self) -> &EquilibratedSvd {
        self.svd.get_or_init(|| EquilibratedSvd::new(&self.j, LSQ_RCOND))
    }
}

/// `J` and `K` at `xi`, refusing when `xi` is not a solution to within
/// [`acceptance_threshold`].
pub fn assemble_sensitivity(qp: &CompactQp, xi: &SaddlePoint, tol: f64) -> Result<SensitivityOperators> {
    let res = residual(qp, &xi.z, &xi.w)?;
    let threshold = acceptance_threshold(qp, &xi.z, &xi.w, tol);
    if !(res.norm() <= threshold) {
        return Err(Error::DegenerateSolution {
            residual: res.norm(),
            tolerance: threshold,
        });
    }
    let proj_jac = projection_jacobian(&res.z_plus, &qp.bounds, BOUNDARY_EPS);
    Ok(SensitivityOperators::from_parts(qp, proj_jac))
}

/// Least-squares adjoint `η = argmin ‖Jᵀx + Tᵀ∇ψ‖` (minimum norm), where
/// `T` selects the input trajectory from `ξ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjoint {
    pub eta: DVector<f64>,
    pub lsq_residual: f64,
    /// Number of unknowns (and equations) of the least-squares problem.
    pub lsq_dimension: usize,
}

pub fn solve_adjoint(ops: &SensitivityOperators, grad_psi_u: &DVector<f64>) -> Result<Adjoint> {
    check_dim("input-trajectory gradient", ops.layout.u_len, grad_psi_u.len())?;
    let dim = ops.j.nrows();
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, grad_psi_u.len()).copy_from(&-grad_psi_u);
    let eta = if rhs.iter().all(|v| *v == 0.0) {
        DVector::zeros(dim)
    } else {
        ops.svd().solve_transpose(&rhs)
    };
    let lsq_residual = (ops.j.tr_mul(&eta) - &rhs).norm();
    Ok(Adjoint {
        eta,
        lsq_residual,
        lsq_dimension: dim,
    })
}

/// Forward-mode sensitivity: minimum-norm solution of `J dξ = −K dp`.
pub fn directional_sensitivity(ops: &SensitivityOperators, dp: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim("perturbation direction", ops.k.ncols(), dp.len())?;
    let rhs = -(&ops.k * dp);
    if rhs.iter().all(|v| *v == 0.0) {
        return Ok(DVector::zeros(ops.j.nrows()));
    }
    Ok(ops.svd().solve(&rhs))
}

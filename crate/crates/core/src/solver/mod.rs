//! Primal-dual solver for the compact program.
//!
//! A first-order phase on the equilibrated program (operator splitting by
//! default, or the proportional-integral projected gradient iteration)
//! identifies the active bounds; active-set refinement then drives the
//! optimality residual `‖F(ξ, p)‖` below `tol · (1 + ‖q‖)`, which is the
//! only acceptance test.

mod admm;
mod pipg;
mod refine;
mod scaling;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::implicit::{acceptance_threshold, residual, residual_threshold};
use crate::problem::CompactQp;

use refine::{activity_from_point, refine, Activity};
use scaling::ScaledQp;

/// A primal-dual pair `ξ = (z, w)` with diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SaddlePoint {
    pub z: DVector<f64>,
    pub w: DVector<f64>,
    /// `‖F(ξ, p)‖`.
    pub residual_norm: f64,
    /// `L(z, w)`.
    pub lagrangian: f64,
    pub iterations: usize,
}

impl SaddlePoint {
    /// Stacked `ξ = (z, w)`.
    pub fn xi(&self) -> DVector<f64> {
        crate::linalg::vcat(&[&self.z, &self.w])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    #[default]
    Admm,
    Pipg,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    /// Relative tolerance on `‖F‖`, scaled by `1 + ‖q‖`.
    pub tol: f64,
    /// Budget of first-order iterations.
    pub max_iter: usize,
    pub method: Method,
    /// Run active-set refinement whenever the first-order phase reaches a
    /// checkpoint tolerance.
    pub refine: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 200_000,
            method: Method::Admm,
            refine: true,
        }
    }
}

const CHECK_EVERY: usize = 25;
const REFINE_STEPS: usize = 30;

pub(crate) trait FirstOrder {
    fn run(&mut self, iterations: usize);
    fn converged(&self, eps: f64) -> bool;
    fn adapt(&mut self);
    /// Current `(x̄, ȳ)` in scaled coordinates.
    fn iterate(&self) -> (DVector<f64>, DVector<f64>);
    fn activity(&self) -> Vec<Activity>;
}

/// Solve with default settings apart from `tol` and `max_iter`.
pub fn solve_qp(qp: &CompactQp, tol: f64, max_iter: usize) -> Result<SaddlePoint> {
    let settings = SolverSettings {
        tol,
        max_iter,
        ..SolverSettings::default()
    };
    solve_qp_with(qp, &settings, None)
}

struct Tracker<'a> {
    qp: &'a CompactQp,
    sqp: &'a ScaledQp,
    tol: f64,
    iterations: usize,
    best: f64,
    /// Threshold that applied at the best point.
    best_threshold: f64,
}

impl Tracker<'_> {
    /// Unscale a candidate and accept it if its residual is small enough.
    fn accept(&mut self, x: &DVector<f64>, y: &DVector<f64>) -> Result<Option<SaddlePoint>> {
        let z = self.sqp.unscale_primal(x);
        let w = self.sqp.unscale_dual(y);
        let norm = residual(self.qp, &z, &w)?.norm();
        let threshold = acceptance_threshold(self.qp, &z, &w, self.tol);
        if norm < self.best {
            self.best = norm;
            self.best_threshold = threshold;
        }
        if norm <= threshold {
            let lagrangian = self.qp.lagrangian(&z, &w);
            return Ok(Some(SaddlePoint {
                z,
                w,
                residual_norm: norm,
                lagrangian,
                iterations: self.iterations,
            }));
        }
        Ok(None)
    }

    fn refine_from(&mut self, active: Vec<Activity>) -> Result<Option<SaddlePoint>> {
        match refine(self.sqp, active, REFINE_STEPS) {
            Some(r) => {
                self.iterations += r.steps;
                self.accept(&r.x, &r.y)
            }
            None => Ok(None),
        }
    }
}

/// Solve `min ½zᵀPz + qᵀz  s.t.  Hz = b, z ∈ D`, optionally warm-started
/// from a previous saddle point of a program with the same dimensions.
pub fn solve_qp_with(qp: &CompactQp, settings: &SolverSettings, warm: Option<&SaddlePoint>) -> Result<SaddlePoint> {
    if !(settings.tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "solver tolerance must be positive, got {}",
            settings.tol
        )));
    }
    let sqp = ScaledQp::new(qp);
    let mut tracker = Tracker {
        qp,
        sqp: &sqp,
        tol: settings.tol,
        iterations: 0,
        best: f64::INFINITY,
        best_threshold: f64::NAN,
    };

    let start = match warm {
        Some(ws) if ws.z.len() == qp.n() && ws.w.len() == qp.m() => {
            let x = sqp.scale_primal(&ws.z);
            let y = sqp.scale_dual(&ws.w);
            // Refinement first: the relative threshold can be loose enough
            // to accept the previous solution unchanged.
            if settings.refine {
                let x_plus = &x - sqp.gradient(&x, &y);
                if let Some(sol) = tracker.refine_from(activity_from_point(&sqp, &x_plus))? {
                    return Ok(sol);
                }
            }
            if let Some(sol) = tracker.accept(&x, &y)? {
                return Ok(sol);
            }
            Some((x, y))
        }
        _ => None,
    };

    let mut solver: Box<dyn FirstOrder> = match settings.method {
        Method::Admm => Box::new(admm::Admm::new(&sqp, start)),
        Method::Pipg => Box::new(pipg::Pipg::new(&sqp, start)),
    };

    let mut eps = 1e-4;
    let mut done = 0;
    while done < settings.max_iter {
        let chunk = CHECK_EVERY.min(settings.max_iter - done);
        solver.run(chunk);
        done += chunk;
        tracker.iterations += chunk;
        if solver.converged(eps) {
            if settings.refine {
                if let Some(sol) = tracker.refine_from(solver.activity())? {
                    return Ok(sol);
                }
            }
            let (x, y) = solver.iterate();
            if let Some(sol) = tracker.accept(&x, &y)? {
                return Ok(sol);
            }
            eps = (eps * 0.1).max(1e-14);
        }
        solver.adapt();
    }
    Err(Error::MaxIterations {
        iterations: tracker.iterations,
        residual: tracker.best,
        tolerance: if tracker.best_threshold.is_nan() {
            residual_threshold(qp, settings.tol)
        } else {
            tracker.best_threshold
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::Bounds;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn hand_kkt() -> CompactQp {
        CompactQp::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_element(1, 2.0),
            Bounds::unbounded(2),
        )
        .unwrap()
    }

    fn clamped_scalar() -> CompactQp {
        CompactQp::new(
            DMatrix::identity(1, 1),
            DVector::from_element(1, -3.0),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            Bounds::uniform(1, -1.0, 1.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn hand_kkt_solution() {
        for method in [Method::Admm, Method::Pipg] {
            let settings = SolverSettings {
                method,
                ..SolverSettings::default()
            };
            let sol = solve_qp_with(&hand_kkt(), &settings, None).unwrap();
            assert_relative_eq!(sol.z, DVector::from_vec(vec![1.0, 1.0]), epsilon = 1e-9);
            assert_relative_eq!(sol.w[0], -1.0, epsilon = 1e-9);
            assert!(sol.residual_norm <= 1e-9);
        }
    }

    #[test]
    fn clamped_unconstrained_optimum() {
        for method in [Method::Admm, Method::Pipg] {
            for refine in [true, false] {
                let settings = SolverSettings {
                    method,
                    refine,
                    ..SolverSettings::default()
                };
                let sol = solve_qp_with(&clamped_scalar(), &settings, None).unwrap();
                assert_relative_eq!(sol.z[0], 1.0, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn infeasible_program_exhausts_the_budget() {
        // z1 + z2 = 5 with both coordinates in [-1, 1].
        let qp = CompactQp::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_element(1, 5.0),
            Bounds::uniform(2, -1.0, 1.0).unwrap(),
        )
        .unwrap();
        let err = solve_qp(&qp, 1e-9, 2_000).unwrap_err();
        assert!(matches!(err, Error::MaxIterations { .. }));
    }

    #[test]
    fn warm_start_at_the_solution_needs_one_refinement_step() {
        let qp = hand_kkt();
        let sol = solve_qp(&qp, 1e-9, 10_000).unwrap();
        let again = solve_qp_with(&qp, &SolverSettings::default(), Some(&sol)).unwrap();
        assert!(again.iterations <= 1, "{} iterations", again.iterations);
        assert!((&again.z - &sol.z).norm() < 1e-12);
    }

    #[test]
    fn rejects_non_positive_tolerance() {
        assert!(matches!(solve_qp(&hand_kkt(), 0.0, 10), Err(Error::InvalidArgument(_))));
    }
}

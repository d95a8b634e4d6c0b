//! Operator-splitting iteration on the equilibrated program, with the box
//! and equality constraints handled as `l ≤ [H̄; I] x̄ ≤ u`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::refine::Activity;
use super::scaling::ScaledQp;
use super::FirstOrder;

const SIGMA: f64 = 1e-6;
const ALPHA: f64 = 1.6;
const RHO_EQ_FACTOR: f64 = 1e3;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;

pub(crate) struct Admm<'a> {
    sqp: &'a ScaledQp,
    rho: f64,
    rho_eq: DVector<f64>,
    rho_box: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    x: DVector<f64>,
    z_eq: DVector<f64>,
    z_box: DVector<f64>,
    y_eq: DVector<f64>,
    y_box: DVector<f64>,
}

impl<'a> Admm<'a> {
    pub fn new(sqp: &'a ScaledQp, start: Option<(DVector<f64>, DVector<f64>)>) -> Self {
        let (n, m) = (sqp.n(), sqp.m());
        let rho = 0.1;
        let (x, y_eq) = start.unwrap_or_else(|| (DVector::zeros(n), DVector::zeros(m)));
        // Bound multipliers implied by stationarity of the starting point.
        let y_box = -sqp.gradient(&x, &y_eq);
        let z_eq = &sqp.h * &x;
        let mut z_box = x.clone();
        for i in 0..n {
            z_box[i] = z_box[i].clamp(sqp.lower[i], sqp.upper[i]);
        }
        let (rho_eq, rho_box) = Self::rho_vectors(sqp, rho);
        let chol = Self::factor(sqp, &rho_eq, &rho_box);
        Self {
            sqp,
            rho,
            rho_eq,
            rho_box,
            chol,
            x,
            z_eq,
            z_box,
            y_eq,
            y_box,
        }
    }

    fn rho_vectors(sqp: &ScaledQp, rho: f64) -> (DVector<f64>, DVector<f64>) {
        let rho_eq = DVector::from_element(sqp.m(), rho * RHO_EQ_FACTOR);
        let rho_box = DVector::from_fn(sqp.n(), |i, _| {
            if sqp.lower[i].is_infinite() && sqp.upper[i].is_infinite() {
                RHO_MIN
            } else {
                rho
            }
        });
        (rho_eq, rho_box)
    }

    fn factor(sqp: &ScaledQp, rho_eq: &DVector<f64>, rho_box: &DVector<f64>) -> Cholesky<f64, Dyn> {
        let n = sqp.n();
        let mut weighted = sqp.h.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= rho_eq[i];
        }
        let mut mat: DMatrix<f64> = &sqp.p + sqp.h.tr_mul(&weighted);
        for i in 0..n {
            mat[(i, i)] += SIGMA + rho_box[i];
        }
        Cholesky::new(mat).expect("P + σI + AᵀRA is positive definite")
    }

    fn step(&mut self) {
        let sqp = self.sqp;
        let mut rhs = &self.x * SIGMA - &sqp.q;
        let eq_term = self.rho_eq.component_mul(&self.z_eq) - &self.y_eq;
        rhs.gemv_tr(1.0, &sqp.h, &eq_term, 1.0);
        rhs += self.rho_box.component_mul(&self.z_box) - &self.y_box;
        let x_tilde = self.chol.solve(&rhs);
        let zt_eq = &sqp.h * &x_tilde;

        self.x = &x_tilde * ALPHA + &self.x * (1.0 - ALPHA);

        for r in 0..sqp.m() {
            let relaxed = ALPHA * zt_eq[r] + (1.0 - ALPHA) * self.z_eq[r];
            let z_new = sqp.b[r];
            self.y_eq[r] += self.rho_eq[r] * (relaxed - z_new);
            self.z_eq[r] = z_new;
        }
        for i in 0..sqp.n() {
            let relaxed = ALPHA * x_tilde[i] + (1.0 - ALPHA) * self.z_box[i];
            let z_new = (relaxed + self.y_box[i] / self.rho_box[i]).clamp(sqp.lower[i], sqp.upper[i]);
            self.y_box[i] += self.rho_box[i] * (relaxed - z_new);
            self.z_box[i] = z_new;
        }
    }

    /// (primal residual, primal scale, dual residual, dual scale)
    fn residuals(&self) -> (f64, f64, f64, f64) {
        let sqp = self.sqp;
        let hx = &sqp.h * &self.x;
        let prim = (&hx - &self.z_eq).amax().max((&self.x - &self.z_box).amax());
        let prim_scale = hx
            .amax()
            .max(self.x.amax())
            .max(self.z_eq.amax())
            .max(self.z_box.amax());
        let px = &sqp.p * &self.x;
        let mut aty = sqp.h.tr_mul(&self.y_eq);
        aty += &self.y_box;
        let dual = (&px + &sqp.q + &aty).amax();
        let dual_scale = px.amax().max(aty.amax()).max(sqp.q.amax());
        (prim, prim_scale, dual, dual_scale)
    }
}

impl FirstOrder for Admm<'_> {
    fn run(&mut self, iterations: usize) {
        for _ in 0..iterations {
            self.step();
        }
    }

    fn converged(&self, eps: f64) -> bool {
        let (prim, ps, dual, ds) = self.residuals();
        prim <= eps * (1.0 + ps) && dual <= eps * (1.0 + ds)
    }

    fn adapt(&mut self) {
        let (prim, ps, dual, ds) = self.residuals();
        let ratio = (prim / (ps + 1e-30)) / (dual / (ds + 1e-30) + 1e-30);
        if !ratio.is_finite() || ratio <= 0.0 {
            return;
        }
        let rho_new = (self.rho * ratio.sqrt()).clamp(RHO_MIN, RHO_MAX);
        if rho_new > 5.0 * self.rho || rho_new < 0.2 * self.rho {
            self.rho = rho_new;
            let (rho_eq, rho_box) = Self::rho_vectors(self.sqp, rho_new);
            self.rho_eq = rho_eq;
            self.rho_box = rho_box;
            self.chol = Self::factor(self.sqp, &self.rho_eq, &self.rho_box);
        }
    }

    fn iterate(&self) -> (DVector<f64>, DVector<f64>) {
        (self.x.clone(), self.y_eq.clone())
    }

    fn activity(&self) -> Vec<Activity> {
        let sqp = self.sqp;
        (0..sqp.n())
            .map(|i| {
                let (z, y) = (self.z_box[i], self.y_box[i]);
                if sqp.lower[i].is_finite() && z - sqp.lower[i] < -y {
                    Activity::Lower
                } else if sqp.upper[i].is_finite() && sqp.upper[i] - z < y {
                    Activity::Upper
                } else {
                    Activity::Free
                }
            })
            .collect()
    }
}

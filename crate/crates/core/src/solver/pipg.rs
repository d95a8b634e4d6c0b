//! Proportional-integral projected gradient iteration:
//!
//! ```text
//! v  = w + β(H̄x − b̄)
//! x ← Π_D(x − α(P̄x + q̄ + H̄ᵀv))
//! w ← w + β(H̄x − b̄)
//! ```
//!
//! with `α = 2 / (λ + √(λ² + 4ω‖H̄‖²))`, `β = ωα` and `λ ≥ ‖P̄‖`.

use nalgebra::DVector;

use super::refine::{activity_from_point, Activity};
use super::scaling::ScaledQp;
use super::FirstOrder;
use crate::linalg::spectral_norm;

const OMEGA: f64 = 1.0;

pub(crate) struct Pipg<'a> {
    sqp: &'a ScaledQp,
    alpha: f64,
    beta: f64,
    x: DVector<f64>,
    w: DVector<f64>,
}

impl<'a> Pipg<'a> {
    pub fn new(sqp: &'a ScaledQp, start: Option<(DVector<f64>, DVector<f64>)>) -> Self {
        // Power iteration approaches the norm from below; pad it.
        let lambda = 1.01 * spectral_norm(&sqp.p) + 1e-12;
        let h_norm = 1.01 * spectral_norm(&sqp.h);
        let alpha = 2.0 / (lambda + (lambda * lambda + 4.0 * OMEGA * h_norm * h_norm).sqrt());
        let (x, w) = start.unwrap_or_else(|| (DVector::zeros(sqp.n()), DVector::zeros(sqp.m())));
        Self {
            sqp,
            alpha,
            beta: OMEGA * alpha,
            x,
            w,
        }
    }

    fn project(&self, x: &mut DVector<f64>) {
        for i in 0..x.len() {
            x[i] = x[i].clamp(self.sqp.lower[i], self.sqp.upper[i]);
        }
    }

    fn step(&mut self) {
        let sqp = self.sqp;
        let v = &self.w + (&sqp.h * &self.x - &sqp.b) * self.beta;
        let grad = sqp.gradient(&self.x, &v);
        let mut x = &self.x - grad * self.alpha;
        self.project(&mut x);
        self.x = x;
        self.w += (&sqp.h * &self.x - &sqp.b) * self.beta;
    }

    fn x_plus(&self) -> DVector<f64> {
        &self.x - self.sqp.gradient(&self.x, &self.w)
    }
}

impl FirstOrder for Pipg<'_> {
    fn run(&mut self, iterations: usize) {
        for _ in 0..iterations {
            self.step();
        }
    }

    fn converged(&self, eps: f64) -> bool {
        let sqp = self.sqp;
        let hx = &sqp.h * &self.x;
        let prim = (&hx - &sqp.b).amax();
        let mut projected = self.x_plus();
        self.project(&mut projected);
        let fixed_point = (&self.x - projected).amax();
        prim <= eps * (1.0 + hx.amax().max(sqp.b.amax())) && fixed_point <= eps * (1.0 + sqp.q.amax())
    }

    fn adapt(&mut self) {}

    fn iterate(&self) -> (DVector<f64>, DVector<f64>) {
        (self.x.clone(), self.w.clone())
    }

    fn activity(&self) -> Vec<Activity> {
        activity_from_point(self.sqp, &self.x_plus())
    }
}

//! Active-set refinement: Newton's method on the optimality residual.
//!
//! For a fixed guess of which coordinates sit on their bounds, `F = 0`
//! reduces to an equality-constrained KKT system. Solving it and updating
//! the guess from multiplier signs and bound violations is exactly a Newton
//! step on `F` with the generalized Jacobian `J`, so once the guess is right
//! the iterate is a saddle point up to rounding.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};

use super::scaling::ScaledQp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) enum Activity {
    Free,
    Lower,
    Upper,
}

pub(crate) struct Refined {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub steps: usize,
}

const REGULARIZATION: f64 = 1e-10;
const REFINEMENT_PASSES: usize = 25;

/// Classify coordinates from a pre-projection point `x⁺ = x − ∇L`.
pub(crate) fn activity_from_point(sqp: &ScaledQp, x_plus: &DVector<f64>) -> Vec<Activity> {
    (0..sqp.n())
        .map(|i| {
            if x_plus[i] <= sqp.lower[i] {
                Activity::Lower
            } else if x_plus[i] >= sqp.upper[i] {
                Activity::Upper
            } else {
                Activity::Free
            }
        })
        .collect()
}

/// Solve the KKT system with the coordinates in `active` pinned to their
/// bounds. Returns `None` when the factorization breaks down.
fn solve_fixed(sqp: &ScaledQp, active: &[Activity]) -> Option<(DVector<f64>, DVector<f64>)> {
    let (n, m) = (sqp.n(), sqp.m());
    let mut x = DVector::zeros(n);
    let mut free = Vec::with_capacity(n);
    for (i, a) in active.iter().enumerate() {
        match a {
            Activity::Free => free.push(i),
            Activity::Lower => x[i] = sqp.lower[i],
            Activity::Upper => x[i] = sqp.upper[i],
        }
    }
    let nf = free.len();
    let px = &sqp.p * &x;
    let hx = &sqp.h * &x;

    let dim = nf + m;
    let mut kkt = DMatrix::zeros(dim, dim);
    for (a, &i) in free.iter().enumerate() {
        for (c, &j) in free.iter().enumerate() {
            kkt[(c, a)] = sqp.p[(j, i)];
        }
        for r in 0..m {
            let v = sqp.h[(r, i)];
            kkt[(a, nf + r)] = v;
            kkt[(nf + r, a)] = v;
        }
    }
    let mut rhs = DVector::zeros(dim);
    for (a, &i) in free.iter().enumerate() {
        rhs[a] = -sqp.q[i] - px[i];
    }
    for r in 0..m {
        rhs[nf + r] = sqp.b[r] - hx[r];
    }

    if dim == 0 {
        return Some((x, DVector::zeros(0)));
    }
    let mut reg = kkt.clone();
    for a in 0..nf {
        reg[(a, a)] += REGULARIZATION;
    }
    for r in 0..m {
        reg[(nf + r, nf + r)] -= REGULARIZATION;
    }
    let lu = reg.lu();
    let mut sol = lu.solve(&rhs)?;
    let scale = 1.0 + rhs.amax();
    for _ in 0..REFINEMENT_PASSES {
        let r = &rhs - &kkt * &sol;
        if r.amax() <= 1e-15 * scale {
            break;
        }
        sol += lu.solve(&r)?;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }

    for (a, &i) in free.iter().enumerate() {
        x[i] = sol[a];
    }
    Some((x, sol.rows(nf, m).into_owned()))
}

/// Primal-dual active-set iterations from `active`. Stops when the active
/// set is stable, repeats, or `max_steps` is reached; the caller judges the
/// result by its residual.
pub(crate) fn refine(sqp: &ScaledQp, mut active: Vec<Activity>, max_steps: usize) -> Option<Refined> {
    for (i, a) in active.iter_mut().enumerate() {
        if sqp.lower[i] == f64::NEG_INFINITY && *a == Activity::Lower
            || sqp.upper[i] == f64::INFINITY && *a == Activity::Upper
        {
            *a = Activity::Free;
        }
    }
    let dual_tol = 1e-11 * (1.0 + sqp.q.amax());
    let mut seen = HashSet::new();
    let mut last = None;
    for step in 1..=max_steps {
        let (x, y) = solve_fixed(sqp, &active)?;
        let grad = sqp.gradient(&x, &y);
        let next: Vec<Activity> = (0..sqp.n())
            .map(|i| {
                let (lo, hi) = (sqp.lower[i], sqp.upper[i]);
                match active[i] {
                    Activity::Lower if grad[i] < -dual_tol => Activity::Free,
                    Activity::Upper if grad[i] > dual_tol => Activity::Free,
                    Activity::Free if x[i] < lo - 1e-11 * (1.0 + lo.abs()) => Activity::Lower,
                    Activity::Free if x[i] > hi + 1e-11 * (1.0 + hi.abs()) => Activity::Upper,
                    a => a,
                }
            })
            .collect();
        let stable = next == active;
        last = Some(Refined { x, y, steps: step });
        if stable || !seen.insert(active.clone()) {
            break;
        }
        active = next;
    }
    last
}

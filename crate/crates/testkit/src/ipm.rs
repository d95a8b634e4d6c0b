//! Dense primal-dual interior-point method (Mehrotra predictor-corrector)
//! for `min ½xᵀPx + qᵀx  s.t.  Hx = b, l ≤ x ≤ u`.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct IpmSolution {
    pub x: DVector<f64>,
    /// Equality multipliers.
    pub y: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub struct QpData<'a> {
    pub p: &'a DMatrix<f64>,
    pub q: &'a DVector<f64>,
    pub h: &'a DMatrix<f64>,
    pub b: &'a DVector<f64>,
    pub lower: &'a DVector<f64>,
    pub upper: &'a DVector<f64>,
}

struct Point {
    x: DVector<f64>,
    y: DVector<f64>,
    zl: DVector<f64>,
    zu: DVector<f64>,
}

pub fn solve(qp: &QpData<'_>, max_iter: usize, tol: f64) -> IpmSolution {
    let n = qp.q.len();
    let m = qp.b.len();
    let lo_idx: Vec<usize> = (0..n).filter(|&i| qp.lower[i].is_finite()).collect();
    let up_idx: Vec<usize> = (0..n).filter(|&i| qp.upper[i].is_finite()).collect();

    let x0 = DVector::from_fn(n, |i, _| {
        let (l, u) = (qp.lower[i], qp.upper[i]);
        match (l.is_finite(), u.is_finite()) {
            (true, true) => 0.5 * (l + u),
            (true, false) => l.max(0.0) + 1.0,
            (false, true) => u.min(0.0) - 1.0,
            (false, false) => 0.0,
        }
    });
    let mut pt = Point {
        x: x0,
        y: DVector::zeros(m),
        zl: DVector::from_element(lo_idx.len(), 1.0),
        zu: DVector::from_element(up_idx.len(), 1.0),
    };
    let n_comp = (lo_idx.len() + up_idx.len()).max(1) as f64;
    let qn = 1.0 + qp.q.amax();
    let bn = 1.0 + qp.b.amax();
    let scale = 1.0 + qp.p.amax() + qp.h.amax();

    let mut converged = false;
    let mut iterations = 0;
    for it in 0..max_iter {
        iterations = it + 1;
        let sl = DVector::from_fn(lo_idx.len(), |k, _| pt.x[lo_idx[k]] - qp.lower[lo_idx[k]]);
        let su = DVector::from_fn(up_idx.len(), |k, _| qp.upper[up_idx[k]] - pt.x[up_idx[k]]);

        let mut rd = qp.p * &pt.x + qp.q + qp.h.tr_mul(&pt.y);
        for (k, &i) in lo_idx.iter().enumerate() {
            rd[i] -= pt.zl[k];
        }
        for (k, &i) in up_idx.iter().enumerate() {
            rd[i] += pt.zu[k];
        }
        let rp = qp.h * &pt.x - qp.b;
        let mu = (sl.dot(&pt.zl) + su.dot(&pt.zu)) / n_comp;
        if !mu.is_finite() || !rd.amax().is_finite() {
            break;
        }
        if rd.amax() <= tol * qn && rp.amax() <= tol * bn && mu <= tol {
            converged = true;
            break;
        }

        // Reduced KKT matrix [(P + Σ) Hᵀ; H −δI].
        let mut kkt = DMatrix::zeros(n + m, n + m);
        kkt.view_mut((0, 0), (n, n)).copy_from(qp.p);
        for (k, &i) in lo_idx.iter().enumerate() {
            kkt[(i, i)] += pt.zl[k] / sl[k];
        }
        for (k, &i) in up_idx.iter().enumerate() {
            kkt[(i, i)] += pt.zu[k] / su[k];
        }
        kkt.view_mut((0, n), (n, m)).copy_from(&qp.h.transpose());
        kkt.view_mut((n, 0), (m, n)).copy_from(qp.h);
        for r in 0..m {
            kkt[(n + r, n + r)] = -1e-14 * scale;
        }
        let lu = kkt.lu();

        // target_l/target_u: desired complementarity products.
        let direction = |target_l: &DVector<f64>, target_u: &DVector<f64>| {
            let mut rhs = DVector::zeros(n + m);
            rhs.rows_mut(0, n).copy_from(&-&rd);
            rhs.rows_mut(n, m).copy_from(&-&rp);
            for (k, &i) in lo_idx.iter().enumerate() {
                rhs[i] += target_l[k] / sl[k] - pt.zl[k];
            }
            for (k, &i) in up_idx.iter().enumerate() {
                rhs[i] -= target_u[k] / su[k] - pt.zu[k];
            }
            let sol = lu.solve(&rhs).expect("nonsingular interior-point system");
            let dx = sol.rows(0, n).into_owned();
            let dy = sol.rows(n, m).into_owned();
            let dzl = DVector::from_fn(lo_idx.len(), |k, _| {
                (target_l[k] - sl[k] * pt.zl[k] - pt.zl[k] * dx[lo_idx[k]]) / sl[k]
            });
            let dzu = DVector::from_fn(up_idx.len(), |k, _| {
                (target_u[k] - su[k] * pt.zu[k] + pt.zu[k] * dx[up_idx[k]]) / su[k]
            });
            (dx, dy, dzl, dzu)
        };
        let step_limit = |dx: &DVector<f64>, dzl: &DVector<f64>, dzu: &DVector<f64>| {
            let mut alpha: f64 = 1.0;
            for (k, &i) in lo_idx.iter().enumerate() {
                if dx[i] < 0.0 {
                    alpha = alpha.min(-sl[k] / dx[i]);
                }
                if dzl[k] < 0.0 {
                    alpha = alpha.min(-pt.zl[k] / dzl[k]);
                }
            }
            for (k, &i) in up_idx.iter().enumerate() {
                if dx[i] > 0.0 {
                    alpha = alpha.min(su[k] / dx[i]);
                }
                if dzu[k] < 0.0 {
                    alpha = alpha.min(-pt.zu[k] / dzu[k]);
                }
            }
            alpha
        };

        let zeros_l = DVector::zeros(lo_idx.len());
        let zeros_u = DVector::zeros(up_idx.len());
        let (ax, _, azl, azu) = direction(&zeros_l, &zeros_u);
        let a_aff = step_limit(&ax, &azl, &azu);
        let dsl_aff = DVector::from_fn(lo_idx.len(), |k, _| ax[lo_idx[k]]);
        let dsu_aff = DVector::from_fn(up_idx.len(), |k, _| -ax[up_idx[k]]);
        let mu_aff = ((&sl + &dsl_aff * a_aff).dot(&(&pt.zl + &azl * a_aff))
            + (&su + &dsu_aff * a_aff).dot(&(&pt.zu + &azu * a_aff)))
            / n_comp;
        let centering = (mu_aff / mu).powi(3).clamp(0.0, 1.0);
        let target_l = DVector::from_fn(lo_idx.len(), |k, _| centering * mu - dsl_aff[k] * azl[k]);
        let target_u = DVector::from_fn(up_idx.len(), |k, _| centering * mu - dsu_aff[k] * azu[k]);
        let (dx, dy, dzl, dzu) = direction(&target_l, &target_u);
        let alpha = (0.995 * step_limit(&dx, &dzl, &dzu)).min(1.0);
        pt.x += dx * alpha;
        pt.y += dy * alpha;
        pt.zl += dzl * alpha;
        pt.zu += dzu * alpha;
    }
    let objective = 0.5 * pt.x.dot(&(qp.p * &pt.x)) + qp.q.dot(&pt.x);
    IpmSolution {
        x: pt.x,
        y: pt.y,
        objective,
        iterations,
        converged,
    }
}

use nalgebra::{DMatrix, DVector};

use crate::problem::CompactQp;

/// Diagonal equilibration `x = D x̄`, equality rows scaled by `E`, cost by
/// `c`.
#[derive(Debug, Clone)]
pub(crate) struct Scaling {
    pub d: DVector<f64>,
    pub e: DVector<f64>,
    pub c: f64,
}

/// The equilibrated program
/// `min ½x̄ᵀP̄x̄ + q̄ᵀx̄  s.t.  H̄x̄ = b̄, lower ≤ x̄ ≤ upper`.
#[derive(Debug, Clone)]
pub(crate) struct ScaledQp {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub scaling: Scaling,
}

const RUIZ_PASSES: usize = 25;
const SCALE_MIN: f64 = 1e-6;
const SCALE_MAX: f64 = 1e6;

fn inv_sqrt_norm(norm: f64) -> f64 {
    if norm < 1e-12 {
        1.0
    } else {
        (1.0 / norm.sqrt()).clamp(SCALE_MIN, SCALE_MAX)
    }
}

impl ScaledQp {
    /// Ruiz equilibration of the KKT matrix `[P Hᵀ; H 0]` followed by a
    /// cost normalization.
    pub fn new(qp: &CompactQp) -> Self {
        let (n, m) = (qp.n(), qp.m());
        let mut p = qp.p.clone();
        let mut h = qp.h.clone();
        let mut d = DVector::from_element(n, 1.0);
        let mut e = DVector::from_element(m, 1.0);

        for _ in 0..RUIZ_PASSES {
            let mut dd = DVector::zeros(n);
            for j in 0..n {
                let pc = p.column(j).amax();
                let hc = if m > 0 { h.column(j).amax() } else { 0.0 };
                dd[j] = inv_sqrt_norm(pc.max(hc));
            }
            let mut de = DVector::zeros(m);
            for i in 0..m {
                de[i] = inv_sqrt_norm(h.row(i).amax());
            }
            for j in 0..n {
                for i in 0..n {
                    p[(i, j)] *= dd[i] * dd[j];
                }
                for i in 0..m {
                    h[(i, j)] *= de[i] * dd[j];
                }
            }
            d.component_mul_assign(&dd);
            e.component_mul_assign(&de);
            let spread = dd.iter().chain(de.iter()).fold(0.0_f64, |a, s| a.max((1.0 - s).abs()));
            if spread < 1e-3 {
                break;
            }
        }

        let mut q = qp.q.component_mul(&d);
        let mean_col = if n > 0 {
            (0..n).map(|j| p.column(j).amax()).sum::<f64>() / n as f64
        } else {
            1.0
        };
        let c = {
            let s = mean_col.max(q.amax());
            if s < 1e-12 {
                1.0
            } else {
                (1.0 / s).clamp(SCALE_MIN, SCALE_MAX)
            }
        };
        p *= c;
        q *= c;

        let b = qp.b.component_mul(&e);
        let lower = qp.bounds.lower.component_div(&d);
        let upper = qp.bounds.upper.component_div(&d);
        Self {
            p,
            q,
            h,
            b,
            lower,
            upper,
            scaling: Scaling { d, e, c },
        }
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    pub fn scale_primal(&self, z: &DVector<f64>) -> DVector<f64> {
        z.component_div(&self.scaling.d)
    }

    pub fn scale_dual(&self, w: &DVector<f64>) -> DVector<f64> {
        w.component_div(&self.scaling.e) * self.scaling.c
    }

    pub fn unscale_primal(&self, x: &DVector<f64>) -> DVector<f64> {
        x.component_mul(&self.scaling.d)
    }

    pub fn unscale_dual(&self, y: &DVector<f64>) -> DVector<f64> {
        y.component_mul(&self.scaling.e) / self.scaling.c
    }

    /// `P̄x̄ + q̄ + H̄ᵀȳ`.
    pub fn gradient(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let mut g = &self.p * x + &self.q;
        g.gemv_tr(1.0, &self.h, y, 1.0);
        g
    }
}

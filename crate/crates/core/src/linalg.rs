//! Dense linear-algebra helpers shared by the controller and the
//! differentiation code.

use nalgebra::{DMatrix, DVector};

/// Truncated singular value decomposition `A = U diag(s) Vᵀ`, keeping only
/// the singular values above `rel_tol * s_max`.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v_t: DMatrix<f64>,
    pub rank: usize,
}

impl TruncatedSvd {
    pub fn new(a: &DMatrix<f64>, rel_tol: f64) -> Self {
        let (nr, nc) = a.shape();
        if nr == 0 || nc == 0 {
            return Self {
                u: DMatrix::zeros(nr, 0),
                s: DVector::zeros(0),
                v_t: DMatrix::zeros(0, nc),
                rank: 0,
            };
        }
        let svd = a.clone().svd(true, true);
        let u = svd.u.expect("requested U");
        let v_t = svd.v_t.expect("requested Vᵀ");
        let s = svd.singular_values;
        let s_max = s.iter().cloned().fold(0.0_f64, f64::max);
        let cutoff = rel_tol * s_max;
        // nalgebra does not guarantee an ordering, so select explicitly.
        let keep: Vec<usize> = (0..s.len()).filter(|&i| s[i] > cutoff && s[i] > 0.0).collect();
        let rank = keep.len();
        let u = DMatrix::from_fn(nr, rank, |i, j| u[(i, keep[j])]);
        let v_t = DMatrix::from_fn(rank, nc, |i, j| v_t[(keep[i], j)]);
        let s = DVector::from_fn(rank, |i, _| s[keep[i]]);
        Self { u, s, v_t, rank }
    }

    /// Minimum-norm least-squares solution of `A x ≈ rhs`.
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut coeff = self.u.tr_mul(rhs);
        for (c, s) in coeff.iter_mut().zip(self.s.iter()) {
            *c /= s;
        }
        self.v_t.tr_mul(&coeff)
    }

    /// Minimum-norm least-squares solution of `Aᵀ x ≈ rhs`.
    pub fn solve_transpose(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut coeff = &self.v_t * rhs;
        for (c, s) in coeff.iter_mut().zip(self.s.iter()) {
            *c /= s;
        }
        &self.u * coeff
    }

    /// `A† = V diag(1/s) Uᵀ`.
    pub fn pseudo_inverse(&self) -> DMatrix<f64> {
        let mut v = self.v_t.transpose();
        for (j, s) in self.s.iter().enumerate() {
            v.column_mut(j).unscale_mut(*s);
        }
        v * self.u.transpose()
    }

    pub fn largest(&self) -> f64 {
        self.s.iter().cloned().fold(0.0, f64::max)
    }
}

/// Truncated SVD of a Ruiz-equilibrated matrix `Â = D_r A D_c`.
///
/// `A = D_r⁻¹ Â D_c⁻¹`, so for nonsingular `A` the solves agree with an
/// exact inverse. Equilibrating first keeps a relative truncation threshold
/// meaningful when rows live on very different scales.
#[derive(Debug, Clone)]
pub struct EquilibratedSvd {
    pub row_scale: DVector<f64>,
    pub col_scale: DVector<f64>,
    pub svd: TruncatedSvd,
}

const EQUILIBRATION_PASSES: usize = 30;

impl EquilibratedSvd {
    pub fn new(a: &DMatrix<f64>, rel_tol: f64) -> Self {
        let (nr, nc) = a.shape();
        let mut row_scale = DVector::from_element(nr, 1.0);
        let mut col_scale = DVector::from_element(nc, 1.0);
        let mut scaled = a.clone();
        for _ in 0..EQUILIBRATION_PASSES {
            let mut done = true;
            for i in 0..nr {
                let r = scaled.row(i).amax();
                if r > 0.0 {
                    let f = 1.0 / r.sqrt();
                    done &= (f - 1.0).abs() < 1e-3;
                    scaled.row_mut(i).scale_mut(f);
                    row_scale[i] *= f;
                }
            }
            for j in 0..nc {
                let c = scaled.column(j).amax();
                if c > 0.0 {
                    let f = 1.0 / c.sqrt();
                    done &= (f - 1.0).abs() < 1e-3;
                    scaled.column_mut(j).scale_mut(f);
                    col_scale[j] *= f;
                }
            }
            if done {
                break;
            }
        }
        Self {
            row_scale,
            col_scale,
            svd: TruncatedSvd::new(&scaled, rel_tol),
        }
    }

    pub fn rank(&self) -> usize {
        self.svd.rank
    }

    /// Least-squares solution of `A x ≈ rhs` (minimum norm in the scaled
    /// coordinates).
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let x = self.svd.solve(&rhs.component_mul(&self.row_scale));
        x.component_mul(&self.col_scale)
    }

    /// Least-squares solution of `Aᵀ x ≈ rhs`.
    pub fn solve_transpose(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let x = self.svd.solve_transpose(&rhs.component_mul(&self.col_scale));
        x.component_mul(&self.row_scale)
    }
}

/// Moore–Penrose pseudo-inverse with singular values below `rel_tol * s_max`
/// treated as zero.
pub fn pseudo_inverse(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    TruncatedSvd::new(a, rel_tol).pseudo_inverse()
}

/// Largest singular value, estimated by power iteration on `AᵀA`.
///
/// Deterministic start vector; the estimate is a lower bound that converges
/// from below, so callers that need an upper bound should inflate it.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    let (nr, nc) = a.shape();
    if nr == 0 || nc == 0 {
        return 0.0;
    }
    let mut v = DVector::from_fn(nc, |i, _| 1.0 + (i % 7) as f64 * 0.1);
    v.normalize_mut();
    let mut estimate = 0.0;
    for _ in 0..200 {
        let av = a * &v;
        let mut w = a.tr_mul(&av);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        w.unscale_mut(norm);
        let next = norm.sqrt();
        v = w;
        if (next - estimate).abs() <= 1e-10 * next {
            return next;
        }
        estimate = next;
    }
    estimate
}

/// Symmetric part `(A + Aᵀ) / 2`, in place.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
}

/// Stack matrices with equal column counts vertically.
pub fn vstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let ncols = blocks.first().map_or(0, |b| b.ncols());
    let nrows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(nrows, ncols);
    let mut row = 0;
    for b in blocks {
        debug_assert_eq!(b.ncols(), ncols);
        out.view_mut((row, 0), b.shape()).copy_from(b);
        row += b.nrows();
    }
    out
}

/// Concatenate vectors.
pub fn vcat(parts: &[&DVector<f64>]) -> DVector<f64> {
    let len = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(len);
    let mut at = 0;
    for p in parts {
        out.rows_mut(at, p.len()).copy_from(p);
        at += p.len();
    }
    out
}

pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

//! The data-driven trajectory optimization and its compact quadratic
//! program `min ½zᵀPz + qᵀz  s.t.  Hz = b, z ∈ D` with `z = (u, y, g)`.

use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::hankel::HankelPair;
use crate::linalg::{symmetrize, vstack};

/// Elementwise interval bounds; infinite entries mean unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl Bounds {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        check_dim("upper bound", lower.len(), upper.len())?;
        for (i, (lo, hi)) in lower.iter().zip(upper.iter()).enumerate() {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(Error::InvalidArgument(format!("bound {i} is empty: [{lo}, {hi}]")));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn uniform(n: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(DVector::from_element(n, lower), DVector::from_element(n, upper))
    }

    /// Per-channel bounds repeated over `times` consecutive samples.
    pub fn repeated(lower: &[f64], upper: &[f64], times: usize) -> Result<Self> {
        check_dim("per-channel upper bound", lower.len(), upper.len())?;
        let n = lower.len();
        Self::new(
            DVector::from_fn(n * times, |i, _| lower[i % n]),
            DVector::from_fn(n * times, |i, _| upper[i % n]),
        )
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    /// Euclidean projection onto the box: an elementwise clamp.
    pub fn project(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut out = z.clone();
        self.project_mut(&mut out);
        out
    }

    pub fn project_mut(&self, z: &mut DVector<f64>) {
        for ((v, lo), hi) in z.iter_mut().zip(self.lower.iter()).zip(self.upper.iter()) {
            *v = v.max(*lo).min(*hi);
        }
    }

    /// Largest bound violation of `z`.
    pub fn violation(&self, z: &DVector<f64>) -> f64 {
        z.iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .map(|(v, (lo, hi))| (lo - v).max(v - hi).max(0.0))
            .fold(0.0, f64::max)
    }

    fn concat(parts: &[&Bounds]) -> Bounds {
        let lower: Vec<f64> = parts.iter().flat_map(|b| b.lower.iter().cloned()).collect();
        let upper: Vec<f64> = parts.iter().flat_map(|b| b.upper.iter().cloned()).collect();
        Bounds {
            lower: DVector::from_vec(lower),
            upper: DVector::from_vec(upper),
        }
    }
}

/// Free-function form of [`Bounds::project`].
pub fn project_box(z: &DVector<f64>, bounds: &Bounds) -> DVector<f64> {
    bounds.project(z)
}

/// `M = I − S†S` with `S = [U_p; Y_p; U_f]`: the orthogonal projector onto
/// the null space of the stacked past/future-input data.
///
/// Singular values below `1e-12 · max(rows, cols) · s_max` count as zero.
pub fn compute_regularizer(hankel: &HankelPair) -> DMatrix<f64> {
    let stack = vstack(&[&hankel.u_past(), &hankel.y_past(), &hankel.u_future()]);
    let (rows, cols) = stack.shape();
    // Left singular vectors of Sᵀ span the row space of S; skipping the
    // other factor roughly halves the cost.
    let svd = stack.transpose().svd(true, false);
    let u = svd.u.expect("requested U");
    let s = &svd.singular_values;
    let cutoff = 1e-12 * rows.max(cols) as f64 * s.max();
    let keep: Vec<usize> = (0..s.len()).filter(|&i| s[i] > cutoff && s[i] > 0.0).collect();
    let basis = DMatrix::from_fn(cols, keep.len(), |i, j| u[(i, keep[j])]);
    let mut m = -(&basis * basis.transpose());
    for i in 0..hankel.ng {
        m[(i, i)] += 1.0;
    }
    symmetrize(&mut m);
    m
}

/// Tracking and regularization weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DpcWeights {
    /// `ℓn_y × ℓn_y` output tracking weight.
    pub output: DMatrix<f64>,
    /// `ℓn_u × ℓn_u` input tracking weight.
    pub input: DMatrix<f64>,
    pub lambda_g: f64,
    pub lambda_s: f64,
}

impl DpcWeights {
    /// Block-diagonal weights from per-channel diagonals repeated over the
    /// horizon.
    pub fn diagonal(output_diag: &[f64], input_diag: &[f64], ell: usize, lambda_g: f64, lambda_s: f64) -> Self {
        let rep = |d: &[f64]| DMatrix::from_diagonal(&DVector::from_fn(d.len() * ell, |i, _| d[i % d.len()]));
        Self {
            output: rep(output_diag),
            input: rep(input_diag),
            lambda_g,
            lambda_s,
        }
    }
}

/// Offline part of the controller: data, weights, constraint sets and the
/// pieces of the compact program that do not change between solves.
#[derive(Debug, Clone)]
pub struct DpcModel {
    pub hankel: HankelPair,
    pub weights: DpcWeights,
    pub regularizer: DMatrix<f64>,
    pub u_box: Bounds,
    pub y_box: Bounds,
    hessian: DMatrix<f64>,
    constraints: DMatrix<f64>,
    q_sensitivity: DMatrix<f64>,
}

/// Index ranges of `u`, `y` and `g` inside `z`, plus the equality-row count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub u_len: usize,
    pub y_len: usize,
    pub g_len: usize,
    pub m: usize,
}

impl Layout {
    pub fn n(&self) -> usize {
        self.u_len + self.y_len + self.g_len
    }

    pub fn u(&self) -> Range<usize> {
        0..self.u_len
    }

    pub fn y(&self) -> Range<usize> {
        self.u_len..self.u_len + self.y_len
    }

    pub fn g(&self) -> Range<usize> {
        self.u_len + self.y_len..self.n()
    }
}

fn check_psd(name: &'static str, m: &DMatrix<f64>) -> Result<()> {
    let asym = (m - m.transpose()).abs().max();
    if asym > 1e-12 * (1.0 + m.abs().max()) {
        return Err(Error::InvalidArgument(format!("{name} weight is not symmetric")));
    }
    let diagonal = m
        .iter()
        .enumerate()
        .all(|(k, v)| *v == 0.0 || k % m.nrows() == k / m.nrows());
    let min_eig = if diagonal {
        m.diagonal().min()
    } else {
        m.clone().symmetric_eigenvalues().min()
    };
    if min_eig < -1e-10 {
        return Err(Error::InvalidArgument(format!(
            "{name} weight is not positive semidefinite (eigenvalue {min_eig:.3e})"
        )));
    }
    Ok(())
}

impl DpcModel {
    pub fn new(hankel: HankelPair, weights: DpcWeights, u_box: Bounds, y_box: Bounds) -> Result<Self> {
        let (sigma, ell, ng, nu, ny) = (hankel.sigma, hankel.ell, hankel.ng, hankel.nu, hankel.ny);
        check_dim("output weight rows", ell * ny, weights.output.nrows())?;
        check_dim("output weight columns", ell * ny, weights.output.ncols())?;
        check_dim("input weight rows", ell * nu, weights.input.nrows())?;
        check_dim("input weight columns", ell * nu, weights.input.ncols())?;
        check_dim("input box", ell * nu, u_box.len())?;
        check_dim("output box", ell * ny, y_box.len())?;
        check_psd("output", &weights.output)?;
        check_psd("input", &weights.input)?;
        if !(weights.lambda_g >= 0.0) || !(weights.lambda_s >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "regularization weights must be non-negative (lambda_g = {}, lambda_s = {})",
                weights.lambda_g, weights.lambda_s
            )));
        }

        let regularizer = compute_regularizer(&hankel);
        let (nuf, nyf) = (ell * nu, ell * ny);
        let n = nuf + nyf + ng;
        let m = nuf + nyf + sigma * nu;

        // 2λ_s Y_pᵀY_p is formed as a Gram matrix of √(2λ_s) Y_p so the block
        // stays positive semidefinite under rounding.
        let s = (2.0 * weights.lambda_s).sqrt();
        let yp_scaled = hankel.y_past() * s;
        let mut g_block = regularizer.tr_mul(&regularizer) * (2.0 * weights.lambda_g);
        g_block += yp_scaled.tr_mul(&yp_scaled);
        symmetrize(&mut g_block);

        let mut hessian = DMatrix::zeros(n, n);
        hessian.view_mut((0, 0), (nuf, nuf)).copy_from(&weights.input);
        hessian.view_mut((nuf, nuf), (nyf, nyf)).copy_from(&weights.output);
        hessian.view_mut((nuf + nyf, nuf + nyf), (ng, ng)).copy_from(&g_block);

        let sp = sigma * nu;
        let mut constraints = DMatrix::zeros(m, n);
        constraints
            .view_mut((0, nuf + nyf), (sp, ng))
            .copy_from(&hankel.u_past());
        constraints
            .view_mut((sp, nuf + nyf), (nuf, ng))
            .copy_from(&hankel.u_future());
        constraints
            .view_mut((sp + nuf, nuf + nyf), (nyf, ng))
            .copy_from(&hankel.y_future());
        for i in 0..nuf {
            constraints[(sp + i, i)] = -1.0;
        }
        for i in 0..nyf {
            constraints[(sp + nuf + i, nuf + i)] = -1.0;
        }

        let mut q_sensitivity = DMatrix::zeros(n, sigma * ny);
        q_sensitivity
            .view_mut((nuf + nyf, 0), (ng, sigma * ny))
            .copy_from(&(yp_scaled.transpose() * (-s)));

        Ok(Self {
            hankel,
            weights,
            regularizer,
            u_box,
            y_box,
            hessian,
            constraints,
            q_sensitivity,
        })
    }

    pub fn layout(&self) -> Layout {
        let h = &self.hankel;
        Layout {
            u_len: h.ell * h.nu,
            y_len: h.ell * h.ny,
            g_len: h.ng,
            m: h.ell * (h.nu + h.ny) + h.sigma * h.nu,
        }
    }

    /// Dimension of the perturbation `p` (and of `y_ini`).
    pub fn perturbation_dim(&self) -> usize {
        self.hankel.sigma * self.hankel.ny
    }
}

/// One controller instance: the shared model plus the online window and
/// references at the current sampling time.
#[derive(Debug, Clone)]
pub struct DpcProblem {
    pub model: Arc<DpcModel>,
    pub u_ref: DVector<f64>,
    pub y_ref: DVector<f64>,
    pub u_ini: DVector<f64>,
    pub y_ini: DVector<f64>,
}

impl DpcProblem {
    pub fn new(
        model: Arc<DpcModel>,
        u_ref: DVector<f64>,
        y_ref: DVector<f64>,
        u_ini: DVector<f64>,
        y_ini: DVector<f64>,
    ) -> Result<Self> {
        let h = &model.hankel;
        check_dim("input reference", h.ell * h.nu, u_ref.len())?;
        check_dim("output reference", h.ell * h.ny, y_ref.len())?;
        check_dim("u_ini", h.sigma * h.nu, u_ini.len())?;
        check_dim("y_ini", h.sigma * h.ny, y_ini.len())?;
        Ok(Self {
            model,
            u_ref,
            y_ref,
            u_ini,
            y_ini,
        })
    }

    pub fn layout(&self) -> Layout {
        self.model.layout()
    }
}

/// `min ½zᵀPz + qᵀz  s.t.  Hz = b, z ∈ D`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactQp {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
    pub bounds: Bounds,
    /// `∂q/∂p`, an `n × σn_y` matrix nonzero only in the `g` rows.
    pub q_sensitivity: DMatrix<f64>,
    pub layout: Layout,
}

impl CompactQp {
    /// A program without DeePC structure: every variable is treated as
    /// part of `g` and `q` does not depend on any perturbation.
    pub fn new(p: DMatrix<f64>, q: DVector<f64>, h: DMatrix<f64>, b: DVector<f64>, bounds: Bounds) -> Result<Self> {
        let n = q.len();
        check_dim("P rows", n, p.nrows())?;
        check_dim("P columns", n, p.ncols())?;
        check_dim("H columns", n, h.ncols())?;
        check_dim("b", h.nrows(), b.len())?;
        check_dim("box", n, bounds.len())?;
        let m = h.nrows();
        Ok(Self {
            p,
            q,
            h,
            b,
            bounds,
            q_sensitivity: DMatrix::zeros(n, 0),
            layout: Layout {
                u_len: 0,
                y_len: 0,
                g_len: n,
                m,
            },
        })
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.p * z)) + self.q.dot(z)
    }

    /// `L(z, w) = ½zᵀPz + qᵀz + wᵀ(Hz − b)`.
    pub fn lagrangian(&self, z: &DVector<f64>, w: &DVector<f64>) -> f64 {
        self.objective(z) + w.dot(&(&self.h * z - &self.b))
    }
}

/// Compact program of the perturbed trajectory optimization with `y_ini`
/// replaced by `y_ini + p`.
pub fn assemble_compact(prob: &DpcProblem, p: &DVector<f64>) -> Result<CompactQp> {
    check_dim("perturbation", prob.model.perturbation_dim(), p.len())?;
    Ok(assemble_with_window(prob, &(&prob.y_ini + p)))
}

/// Compact program of the unperturbed trajectory optimization.
pub fn assemble_nominal(prob: &DpcProblem) -> CompactQp {
    assemble_with_window(prob, &prob.y_ini)
}

fn assemble_with_window(prob: &DpcProblem, y_window: &DVector<f64>) -> CompactQp {
    let model = &prob.model;
    let layout = model.layout();
    let w = &model.weights;
    let mut q = DVector::zeros(layout.n());
    q.rows_mut(0, layout.u_len).copy_from(&-(&w.input * &prob.u_ref));
    q.rows_mut(layout.u_len, layout.y_len)
        .copy_from(&-(&w.output * &prob.y_ref));
    // g block: −2λ_s Y_pᵀ (y_ini + p), i.e. (∂q/∂p)(y_ini + p).
    let g = layout.g();
    q.rows_mut(g.start, layout.g_len)
        .copy_from(&(model.q_sensitivity.rows(g.start, layout.g_len) * y_window));

    let sp = model.hankel.sigma * model.hankel.nu;
    let mut b = DVector::zeros(layout.m);
    b.rows_mut(0, sp).copy_from(&prob.u_ini);

    CompactQp {
        p: model.hessian.clone(),
        q,
        h: model.constraints.clone(),
        b,
        bounds: Bounds::concat(&[&model.u_box, &model.y_box, &Bounds::unbounded(layout.g_len)]),
        q_sensitivity: model.q_sensitivity.clone(),
        layout,
    }
}

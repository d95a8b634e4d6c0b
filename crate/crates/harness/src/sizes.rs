//! Size of the adjoint least-squares system for a given problem geometry,
//! both from the closed-form count and from an assembled instance.

use std::fmt::Write;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use deepc_attack::hankel::required_length;
use deepc_attack::implicit::{projection_jacobian, solve_adjoint, SensitivityOperators, BOUNDARY_EPS};
use deepc_attack::{assemble_nominal, build_hankel, Bounds, DpcModel, DpcProblem, DpcWeights, IoLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub nu: usize,
    pub ny: usize,
    pub sigma: usize,
    pub ell: usize,
    pub ng: usize,
}

impl Geometry {
    pub const fn new(nu: usize, ny: usize, sigma: usize, ell: usize, ng: usize) -> Self {
        Self { nu, ny, sigma, ell, ng }
    }

    /// `2ℓ(n_u + n_y) + σn_u + n_g`.
    pub fn lsq_dimension(&self) -> usize {
        2 * self.ell * (self.nu + self.ny) + self.sigma * self.nu + self.ng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SizeRow {
    pub geometry: Geometry,
    pub formula: usize,
    pub measured: usize,
}

/// The two-mass system and a quadrotor-sized system at three horizons.
pub fn standard_geometries() -> Vec<Geometry> {
    let mut out = Vec::new();
    for (nu, ny) in [(2, 4), (3, 6)] {
        for ell in [25, 50, 100] {
            out.push(Geometry::new(nu, ny, 6, ell, 500));
        }
    }
    out
}

/// Assembles a controller of the given geometry on random data and reports
/// the dimension of the least-squares system its adjoint solve sets up.
pub fn measure_lsq_dimension(geometry: Geometry, seed: u64) -> deepc_attack::Result<usize> {
    let Geometry { nu, ny, sigma, ell, ng } = geometry;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = IoLog::default();
    for _ in 0..required_length(sigma, ell, ng) {
        let u = DVector::from_fn(nu, |_, _| rng.gen_range(-1.0..1.0));
        let y = DVector::from_fn(ny, |_, _| rng.gen_range(-1.0..1.0));
        log.push(u, y);
    }
    let hankel = build_hankel(&log, sigma, ell)?;
    let weights = DpcWeights::diagonal(&vec![1.0; ny], &vec![1.0; nu], ell, 1.0, 1.0);
    let model = Arc::new(DpcModel::new(
        hankel,
        weights,
        Bounds::uniform(ell * nu, -1.0, 1.0)?,
        Bounds::uniform(ell * ny, -1.0, 1.0)?,
    )?);
    let prob = DpcProblem::new(
        model,
        DVector::zeros(ell * nu),
        DVector::zeros(ell * ny),
        DVector::zeros(sigma * nu),
        DVector::zeros(sigma * ny),
    )?;
    let qp = assemble_nominal(&prob);
    let proj = projection_jacobian(&DVector::zeros(qp.n()), &qp.bounds, BOUNDARY_EPS);
    let ops = SensitivityOperators::from_parts(&qp, proj);
    Ok(solve_adjoint(&ops, &DVector::zeros(ell * nu))?.lsq_dimension)
}

pub fn report_lsq_sizes(geometries: &[Geometry]) -> deepc_attack::Result<Vec<SizeRow>> {
    geometries
        .iter()
        .map(|&g| {
            Ok(SizeRow {
                geometry: g,
                formula: g.lsq_dimension(),
                measured: measure_lsq_dimension(g, 0)?,
            })
        })
        .collect()
}

pub fn format_table(rows: &[SizeRow]) -> String {
    let mut out = String::from("n_u  n_y  sigma  ell  n_g  formula  measured\n");
    for r in rows {
        let g = r.geometry;
        let _ = writeln!(
            out,
            "{:>3}  {:>3}  {:>5}  {:>3}  {:>3}  {:>7}  {:>8}",
            g.nu, g.ny, g.sigma, g.ell, g.ng, r.formula, r.measured
        );
    }
    out
}

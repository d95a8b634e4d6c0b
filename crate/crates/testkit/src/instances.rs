//! Small random controller instances for property and finite-difference
//! tests.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use deepc_attack::hankel::required_length;
use deepc_attack::{build_hankel, collect_excitation, simulate, Bounds, DiscreteLti, DpcModel, DpcProblem, DpcWeights};

#[derive(Debug, Clone, Copy)]
pub struct SmallSpec {
    pub nx: usize,
    pub nu: usize,
    pub ny: usize,
    pub sigma: usize,
    pub ell: usize,
    pub ng: usize,
    pub lambda_g: f64,
    pub lambda_s: f64,
    pub u_bound: f64,
    pub y_bound: f64,
}

impl Default for SmallSpec {
    fn default() -> Self {
        Self {
            nx: 3,
            nu: 1,
            ny: 2,
            sigma: 3,
            ell: 4,
            ng: 25,
            lambda_g: 1.0,
            lambda_s: 100.0,
            u_bound: 0.6,
            y_bound: 1.5,
        }
    }
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Random plant with `‖A‖₂ = 0.9`, hence stable.
pub fn random_plant(rng: &mut ChaCha8Rng, nx: usize, nu: usize, ny: usize) -> DiscreteLti {
    let g = gaussian_matrix(rng, nx, nx);
    let norm = g.clone().singular_values().max();
    DiscreteLti::new(
        g * (0.9 / norm),
        gaussian_matrix(rng, nx, nu),
        gaussian_matrix(rng, ny, nx),
    )
    .expect("consistent dimensions")
}

/// A controller instance on a random plant with random references and a
/// window produced by the plant itself.
pub fn small_problem(seed: u64, spec: SmallSpec) -> (DpcProblem, DiscreteLti) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let SmallSpec {
        nx,
        nu,
        ny,
        sigma,
        ell,
        ng,
        ..
    } = spec;
    let plant = random_plant(&mut rng, nx, nu, ny);
    let log = collect_excitation(&plant, required_length(sigma, ell, ng), seed ^ 0x5eed, 1.0).unwrap();
    let hankel = build_hankel(&log, sigma, ell).unwrap();
    let weights = DpcWeights::diagonal(&vec![10.0; ny], &vec![1.0; nu], ell, spec.lambda_g, spec.lambda_s);
    let model = DpcModel::new(
        hankel,
        weights,
        Bounds::uniform(ell * nu, -spec.u_bound, spec.u_bound).unwrap(),
        Bounds::uniform(ell * ny, -spec.y_bound, spec.y_bound).unwrap(),
    )
    .unwrap();

    let x0 = gaussian_vector(&mut rng, nx);
    let inputs: Vec<DVector<f64>> = (0..sigma).map(|_| gaussian_vector(&mut rng, nu) * 0.5).collect();
    let window = simulate(&plant, &x0, &inputs).unwrap();
    let u_ini = DVector::from_iterator(sigma * nu, window.inputs.iter().flat_map(|u| u.iter().copied()));
    let y_ini = DVector::from_iterator(sigma * ny, window.outputs.iter().flat_map(|y| y.iter().copied()));
    let u_ref = gaussian_vector(&mut rng, ell * nu);
    let y_ref = gaussian_vector(&mut rng, ell * ny) * 1.5;
    let prob = DpcProblem::new(Arc::new(model), u_ref, y_ref, u_ini, y_ini).unwrap();
    (prob, plant)
}

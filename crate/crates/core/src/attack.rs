//! Poisoning perturbations of the controller's output window.
//!
//! The attacker adds `p` with `‖p‖ ≤ ρ‖y_ini‖` to `y_ini` and wants the
//! optimized input trajectory `u★(p)` to minimize an objective `ψ`. The
//! implicit attack linearizes `ψ(u★(p))` at `p = 0` through the derivative
//! of the solution map and minimizes that linear model over the ball; the
//! random baseline and the sampling oracle exist to measure how well it
//! does.

use std::fmt;

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::implicit::{assemble_sensitivity, solve_adjoint, Adjoint};
use crate::problem::{assemble_compact, assemble_nominal, DpcProblem};
use crate::solver::{solve_qp_with, SaddlePoint, SolverSettings};

/// A continuously differentiable attacker objective on the input
/// trajectory.
pub trait AttackObjective {
    /// `(ψ(u), ∇ψ(u))`.
    fn value_and_gradient(&self, u: &DVector<f64>) -> (f64, DVector<f64>);
}

/// Target input trajectory `ũ` and perturbation-to-data ratio `ρ`; as an
/// objective it is `ψ(u) = ½‖u − ũ‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec {
    pub u_target: DVector<f64>,
    pub rho: f64,
}

impl AttackSpec {
    pub fn new(u_target: DVector<f64>, rho: f64) -> Result<Self> {
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "perturbation ratio must be a non-negative number, got {rho}"
            )));
        }
        Ok(Self { u_target, rho })
    }

    /// Perturbation budget `ρ‖y_ini‖` for a given window.
    pub fn radius(&self, y_ini: &DVector<f64>) -> f64 {
        self.rho * y_ini.norm()
    }
}

impl AttackObjective for AttackSpec {
    fn value_and_gradient(&self, u: &DVector<f64>) -> (f64, DVector<f64>) {
        let diff = u - &self.u_target;
        (0.5 * diff.norm_squared(), diff)
    }
}

/// `ψ(u) = ½‖u − ũ‖²` and its gradient `u − ũ`.
pub fn psi_gradient(spec: &AttackSpec, u: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    check_dim("input trajectory", spec.u_target.len(), u.len())?;
    Ok(spec.value_and_gradient(u))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Implicit,
    Random,
    Oracle,
    Zero,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Implicit => "implicit",
            Provenance::Random => "random",
            Provenance::Oracle => "oracle",
            Provenance::Zero => "zero",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub p: DVector<f64>,
    pub radius: f64,
    pub provenance: Provenance,
    /// Decrease of `ψ` predicted by the linear model, `−⟨Kᵀη, p⟩`; only
    /// known for perturbations derived from the model.
    pub predicted_gain: Option<f64>,
}

impl Perturbation {
    pub fn zero(dim: usize) -> Self {
        Self {
            p: DVector::zeros(dim),
            radius: 0.0,
            provenance: Provenance::Zero,
            predicted_gain: None,
        }
    }

    pub fn norm(&self) -> f64 {
        self.p.norm()
    }

    pub fn is_zero(&self) -> bool {
        self.p.iter().all(|v| *v == 0.0)
    }
}

/// Minimizer of `⟨c, z⟩` over `‖z‖ ≤ r`: `−r c/‖c‖`, and `0` when `c = 0`.
pub fn ball_lmo(c: &DVector<f64>, r: f64) -> DVector<f64> {
    let norm = c.norm();
    if norm == 0.0 || r == 0.0 {
        DVector::zeros(c.len())
    } else {
        c * (-r / norm)
    }
}

/// Everything the implicit attack computed on the way to its perturbation.
#[derive(Debug, Clone)]
pub struct ImplicitAttack {
    pub perturbation: Perturbation,
    /// Saddle point of the unperturbed program.
    pub nominal: SaddlePoint,
    /// `ψ(u★(0))`.
    pub nominal_value: f64,
    /// Linear-model direction `Kᵀη`: `ψ(u★(p)) ≈ ψ(u★(0)) + ⟨Kᵀη, p⟩`.
    /// `None` when the budget is zero and the adjoint was skipped.
    pub direction: Option<DVector<f64>>,
    pub adjoint: Option<Adjoint>,
}

impl ImplicitAttack {
    /// Model-predicted decrease of `ψ` for an arbitrary perturbation.
    pub fn predicted_gain(&self, p: &DVector<f64>) -> f64 {
        self.direction.as_ref().map_or(0.0, |c| -c.dot(p))
    }
}

/// Implicit-differentiation attack with the tracking objective of `spec`.
pub fn attack_implicit(
    prob: &DpcProblem,
    spec: &AttackSpec,
    settings: &SolverSettings,
    warm: Option<&SaddlePoint>,
) -> Result<ImplicitAttack> {
    check_dim("attack target", prob.layout().u_len, spec.u_target.len())?;
    attack_implicit_with(prob, spec, spec.rho, settings, warm)
}

/// Implicit-differentiation attack for any objective:
///
/// 1. solve the unperturbed program for `ξ★`;
/// 2. form `J`, `K` at `ξ★`;
/// 3. `η = argmin ‖Jᵀx + Tᵀ∇ψ(Tξ★)‖`;
/// 4. `p = argmin_{‖z‖ ≤ ρ‖y_ini‖} ⟨Kᵀη, z⟩`.
pub fn attack_implicit_with<O: AttackObjective + ?Sized>(
    prob: &DpcProblem,
    objective: &O,
    rho: f64,
    settings: &SolverSettings,
    warm: Option<&SaddlePoint>,
) -> Result<ImplicitAttack> {
    let qp = assemble_nominal(prob);
    let nominal = solve_qp_with(&qp, settings, warm)?;
    let u = nominal.z.rows(0, qp.layout.u_len).into_owned();
    let (nominal_value, grad) = objective.value_and_gradient(&u);
    let radius = rho * prob.y_ini.norm();
    let dim = prob.model.perturbation_dim();

    if radius == 0.0 {
        return Ok(ImplicitAttack {
            perturbation: Perturbation {
                p: DVector::zeros(dim),
                radius,
                provenance: Provenance::Implicit,
                predicted_gain: Some(0.0),
            },
            nominal,
            nominal_value,
            direction: None,
            adjoint: None,
        });
    }

    let ops = assemble_sensitivity(&qp, &nominal, settings.tol)?;
    let adjoint = solve_adjoint(&ops, &grad)?;
    let direction = ops.k.tr_mul(&adjoint.eta);
    let p = ball_lmo(&direction, radius);
    let predicted_gain = -direction.dot(&p);
    Ok(ImplicitAttack {
        perturbation: Perturbation {
            p,
            radius,
            provenance: Provenance::Implicit,
            predicted_gain: Some(predicted_gain),
        },
        nominal,
        nominal_value,
        direction: Some(direction),
        adjoint: Some(adjoint),
    })
}

/// Uniformly distributed direction on the unit sphere (normalized
/// standard Gaussian), resampled in the probability-zero event `v = 0`.
pub fn sphere_direction<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 0.0 {
            return v / norm;
        }
    }
}

/// Random baseline drawn from an existing generator.
pub fn attack_random_with<R: Rng + ?Sized>(rng: &mut R, y_ini: &DVector<f64>, rho: f64) -> Result<Perturbation> {
    if !(rho >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "perturbation ratio must be non-negative, got {rho}"
        )));
    }
    let radius = rho * y_ini.norm();
    let direction = sphere_direction(rng, y_ini.len());
    Ok(Perturbation {
        p: direction * radius,
        radius,
        provenance: Provenance::Random,
        predicted_gain: None,
    })
}

/// `p = (ρ‖y_ini‖/‖v‖) v` with `v` standard Gaussian from a seeded
/// generator.
pub fn attack_random(prob: &DpcProblem, rho: f64, seed: u64) -> Result<Perturbation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    attack_random_with(&mut rng, &prob.y_ini, rho)
}

/// `ψ(u★(p))` for one perturbation, warm-started from `warm`.
pub fn evaluate_perturbation<O: AttackObjective + ?Sized>(
    prob: &DpcProblem,
    objective: &O,
    p: &DVector<f64>,
    settings: &SolverSettings,
    warm: Option<&SaddlePoint>,
) -> Result<(f64, SaddlePoint)> {
    let qp = assemble_compact(prob, p)?;
    let sol = solve_qp_with(&qp, settings, warm)?;
    let u = sol.z.rows(0, qp.layout.u_len).into_owned();
    Ok((objective.value_and_gradient(&u).0, sol))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSample {
    pub p: DVector<f64>,
    pub value: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub best: OracleSample,
    /// Every successfully evaluated candidate: the zero perturbation, the
    /// implicit attack's perturbation, then the sphere samples in draw
    /// order.
    pub samples: Vec<OracleSample>,
    /// Candidates dropped because the solver failed on them.
    pub failures: usize,
    pub implicit: ImplicitAttack,
}

impl OracleResult {
    pub fn sphere_samples(&self) -> impl Iterator<Item = &OracleSample> {
        self.samples.iter().filter(|s| s.provenance == Provenance::Oracle)
    }
}

/// Brute-force search over the budget sphere: `samples` uniform points plus
/// the implicit attack's candidate and `p = 0`, each scored by solving the
/// perturbed program in full.
pub fn attack_oracle(
    prob: &DpcProblem,
    spec: &AttackSpec,
    samples: usize,
    seed: u64,
    settings: &SolverSettings,
    warm: Option<&SaddlePoint>,
) -> Result<OracleResult> {
    if samples == 0 {
        return Err(Error::InvalidArgument("oracle needs at least one sample".into()));
    }
    let implicit = attack_implicit(prob, spec, settings, warm)?;
    let dim = prob.model.perturbation_dim();
    let radius = implicit.perturbation.radius;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut candidates = vec![
        (DVector::zeros(dim), Provenance::Zero),
        (implicit.perturbation.p.clone(), Provenance::Implicit),
    ];
    candidates.extend((0..samples).map(|_| (sphere_direction(&mut rng, dim) * radius, Provenance::Oracle)));

    let mut evaluated = Vec::with_capacity(candidates.len());
    let mut failures = 0;
    for (p, provenance) in candidates {
        let value = if provenance == Provenance::Zero {
            Ok(implicit.nominal_value)
        } else {
            evaluate_perturbation(prob, spec, &p, settings, Some(&implicit.nominal)).map(|(v, _)| v)
        };
        match value {
            Ok(value) => evaluated.push(OracleSample { p, value, provenance }),
            Err(_) => failures += 1,
        }
    }
    let best = evaluated
        .iter()
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .cloned()
        .expect("the zero perturbation is always evaluated");
    Ok(OracleResult {
        best,
        samples: evaluated,
        failures,
        implicit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn psi_at_target_is_zero() {
        let spec = AttackSpec::new(DVector::from_vec(vec![1.0, -2.0]), 0.1).unwrap();
        let (v, g) = psi_gradient(&spec, &DVector::from_vec(vec![1.0, -2.0])).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g, DVector::zeros(2));
    }

    #[test]
    fn psi_direct_evaluation() {
        let spec = AttackSpec::new(DVector::zeros(2), 0.1).unwrap();
        let (v, g) = psi_gradient(&spec, &DVector::from_vec(vec![3.0, 4.0])).unwrap();
        assert_eq!(v, 12.5);
        assert_eq!(g.as_slice(), &[3.0, 4.0]);
    }

    #[test]
    fn negative_ratio_is_rejected() {
        assert!(AttackSpec::new(DVector::zeros(1), -0.1).is_err());
    }

    #[test]
    fn lmo_closed_form_and_tie_break() {
        let p = ball_lmo(&DVector::from_vec(vec![3.0, 4.0]), 1.0);
        assert_relative_eq!(p, DVector::from_vec(vec![-0.6, -0.8]), epsilon = 1e-15);
        assert_eq!(ball_lmo(&DVector::zeros(2), 5.0), DVector::zeros(2));
    }

    #[test]
    fn random_perturbation_norm_and_determinism() {
        let y_ini = DVector::from_vec(vec![1.0, 2.0, 2.0]);
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        let pa = attack_random_with(&mut a, &y_ini, 0.5).unwrap();
        let pb = attack_random_with(&mut b, &y_ini, 0.5).unwrap();
        assert_eq!(pa, pb);
        assert_relative_eq!(pa.norm(), 1.5, max_relative = 1e-12);
    }
}

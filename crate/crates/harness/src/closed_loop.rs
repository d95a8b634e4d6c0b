//! Receding-horizon simulation of the data-driven controller against the
//! true plant, with optional poisoning of the controller's output window.

use std::sync::Arc;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use deepc_attack::attack::{
    attack_implicit, attack_oracle, attack_random_with, evaluate_perturbation, AttackObjective, AttackSpec,
    Perturbation,
};
use deepc_attack::hankel::required_length;
use deepc_attack::{
    assemble_nominal, build_hankel, collect_excitation, solve_qp_with, Bounds, DiscreteLti, DpcModel, DpcProblem,
    DpcWeights, IoLog, SaddlePoint, SolverSettings,
};

use crate::config::{AttackMode, ConfigError, ExperimentConfig, InputReference, ReferenceConfig};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("controller setup failed: {0}")]
    Setup(#[source] deepc_attack::Error),
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: deepc_attack::Error,
        /// Everything logged before the failure.
        partial: Box<RunResult>,
    },
}

/// One closed-loop step: `u_k` applied at `y_k = C x_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub u: DVector<f64>,
    pub y: DVector<f64>,
    pub y_ref: DVector<f64>,
    /// Norm of the perturbation behind the plan in effect.
    pub pnorm: f64,
    /// Solver iterations spent at this step (nonzero only when replanning).
    pub solver_iters: usize,
    /// Optimality residual of the plan in effect.
    pub residual: f64,
}

/// What happened at one replanning instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplanRecord {
    pub step: usize,
    pub perturbation: Perturbation,
    /// `ψ` of the plan the unpoisoned controller would have applied.
    pub psi_nominal: f64,
    /// `ψ` of the plan actually applied.
    pub psi_attacked: f64,
    pub solver_iters: usize,
    pub residual: f64,
}

impl ReplanRecord {
    /// Decrease of the attacker objective achieved by the perturbation.
    pub fn psi_reduction(&self) -> f64 {
        self.psi_nominal - self.psi_attacked
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub mode: AttackMode,
    pub rho: f64,
    pub nu: usize,
    pub ny: usize,
    pub sigma: usize,
    pub steps: Vec<StepRecord>,
    pub replans: Vec<ReplanRecord>,
}

/// Resolved reference generator.
#[derive(Debug, Clone)]
enum Reference {
    Constant {
        y: DVector<f64>,
    },
    Sinusoid {
        amplitude: DVector<f64>,
        frequency: f64,
        phase: DVector<f64>,
        offset: DVector<f64>,
    },
}

/// Everything fixed before the loop starts: plant, offline data, controller
/// model and reference generators.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub plant: DiscreteLti,
    pub offline: IoLog,
    pub model: Arc<DpcModel>,
    pub settings: SolverSettings,
    reference: Reference,
    u_ref: DVector<f64>,
}

/// A replanning instant reached by [`Experiment::problem_at_replan`].
#[derive(Debug, Clone)]
pub struct Instant {
    pub step: usize,
    pub problem: DpcProblem,
    pub spec: AttackSpec,
    /// Nominal saddle point of the previous replan, if any.
    pub warm: Option<SaddlePoint>,
}

enum Stop {
    Finished(RunResult),
    Reached(Instant),
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self, RunError> {
        config.validate()?;
        let plant = config.discrete_plant()?;
        let (nu, ny) = (plant.nu(), plant.ny());
        let d = &config.dpc;
        if config.run.replan_interval > d.ell {
            return Err(ConfigError::Validation {
                field: "run.replan_interval".into(),
                message: format!("cannot exceed the planning horizon {}", d.ell),
            }
            .into());
        }

        let length = required_length(d.sigma, d.ell, d.ng);
        let offline =
            collect_excitation(&plant, length, config.data.seed, config.data.amplitude).map_err(RunError::Setup)?;
        let hankel = build_hankel(&offline, d.sigma, d.ell).map_err(RunError::Setup)?;
        let weights = DpcWeights::diagonal(
            &config.output_weights(ny),
            &config.input_weights(nu),
            d.ell,
            d.lambda_g,
            d.lambda_s,
        );
        let (ulo, uhi) = config.input_box(nu);
        let (ylo, yhi) = config.output_box(ny);
        let u_box = Bounds::repeated(&ulo, &uhi, d.ell).map_err(RunError::Setup)?;
        let y_box = Bounds::repeated(&ylo, &yhi, d.ell).map_err(RunError::Setup)?;
        let model = Arc::new(DpcModel::new(hankel, weights, u_box, y_box).map_err(RunError::Setup)?);

        let (reference, u_ref) = match &config.reference {
            ReferenceConfig::Setpoint { y, u } => {
                let y = DVector::from_column_slice(y);
                let u = match u {
                    InputReference::Constant(u) => DVector::from_column_slice(u),
                    InputReference::Named(_) => {
                        plant
                            .equilibrium(&y)
                            .map_err(|e| ConfigError::Validation {
                                field: "reference.y".into(),
                                message: e.to_string(),
                            })?
                            .1
                    }
                };
                (Reference::Constant { y }, u)
            }
            ReferenceConfig::Sinusoid {
                amplitude,
                frequency,
                phase,
                offset,
                u,
            } => {
                let u = match u {
                    InputReference::Constant(u) => DVector::from_column_slice(u),
                    InputReference::Named(_) => unreachable!("rejected by validation"),
                };
                let vec_or_zero =
                    |v: &Option<Vec<f64>>| v.as_ref().map_or(DVector::zeros(ny), |v| DVector::from_column_slice(v));
                (
                    Reference::Sinusoid {
                        amplitude: DVector::from_column_slice(amplitude),
                        frequency: *frequency,
                        phase: vec_or_zero(phase),
                        offset: vec_or_zero(offset),
                    },
                    u,
                )
            }
        };
        let settings = SolverSettings {
            tol: config.run.tol,
            max_iter: config.run.max_iter,
            method: config.run.solver.into(),
            ..SolverSettings::default()
        };
        Ok(Self {
            config,
            plant,
            offline,
            model,
            settings,
            reference,
            u_ref,
        })
    }

    pub fn nu(&self) -> usize {
        self.plant.nu()
    }

    pub fn ny(&self) -> usize {
        self.plant.ny()
    }

    /// `(rank, rows)` of `[U_p; Y_p; U_f]`; the rank is the trace of the
    /// projector `I − M` onto its row space.
    pub fn data_rank(&self) -> (usize, usize) {
        let h = &self.model.hankel;
        let rows = h.sigma * (h.nu + h.ny) + h.ell * h.nu;
        let rank = h.ng as f64 - self.model.regularizer.trace();
        (rank.round() as usize, rows)
    }

    /// `ŷ_k`.
    pub fn output_reference(&self, k: usize) -> DVector<f64> {
        match &self.reference {
            Reference::Constant { y } => y.clone(),
            Reference::Sinusoid {
                amplitude,
                frequency,
                phase,
                offset,
            } => {
                let t = k as f64 * self.config.delta();
                DVector::from_fn(amplitude.len(), |i, _| {
                    offset[i] + amplitude[i] * (frequency * t + phase[i]).sin()
                })
            }
        }
    }

    /// Attacker target over the horizon starting at step `k`.
    pub fn target(&self, k: usize) -> DVector<f64> {
        let nu = self.nu();
        let amp = self.config.target_amplitude(nu);
        let phase = self.config.target_phase(nu);
        let w = self.config.attack.target.frequency;
        let delta = self.config.delta();
        DVector::from_fn(self.config.dpc.ell * nu, |i, _| {
            let (j, c) = (i / nu, i % nu);
            amp[c] * (w * (k + j) as f64 * delta + phase[c]).sin()
        })
    }

    pub fn attack_spec(&self, k: usize) -> AttackSpec {
        AttackSpec {
            u_target: self.target(k),
            rho: self.config.attack.rho,
        }
    }

    /// Controller instance at step `k` for the given (clean) window.
    pub fn problem(
        &self,
        k: usize,
        u_ini: DVector<f64>,
        y_ini: DVector<f64>,
    ) -> Result<DpcProblem, deepc_attack::Error> {
        let ell = self.config.dpc.ell;
        let nu = self.nu();
        let ny = self.ny();
        let u_ref = DVector::from_fn(ell * nu, |i, _| self.u_ref[i % nu]);
        let mut y_ref = DVector::zeros(ell * ny);
        for j in 0..ell {
            y_ref.rows_mut(j * ny, ny).copy_from(&self.output_reference(k + j));
        }
        DpcProblem::new(self.model.clone(), u_ref, y_ref, u_ini, y_ini)
    }

    pub fn run(&self) -> Result<RunResult, RunError> {
        match self.drive(None)? {
            Stop::Finished(result) => Ok(result),
            Stop::Reached(_) => unreachable!("no stop requested"),
        }
    }

    /// Runs the loop (in the configured mode) up to replanning instant
    /// `index` and returns the controller instance there instead of solving
    /// it.
    pub fn problem_at_replan(&self, index: usize) -> Result<Instant, RunError> {
        match self.drive(Some(index))? {
            Stop::Reached(instant) => Ok(instant),
            Stop::Finished(_) => Err(ConfigError::Validation {
                field: "attack.oracle_replan".into(),
                message: format!("the run has fewer than {} replanning instants", index + 1),
            }
            .into()),
        }
    }

    fn drive(&self, stop_at: Option<usize>) -> Result<Stop, RunError> {
        let cfg = &self.config;
        let (nu, ny) = (self.nu(), self.ny());
        let sigma = cfg.dpc.sigma;
        let total = cfg.run.steps;
        let interval = cfg.run.replan_interval;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.attack.seed);

        let mut result = RunResult {
            mode: cfg.attack.mode,
            rho: cfg.attack.rho,
            nu,
            ny,
            sigma,
            steps: Vec::with_capacity(total),
            replans: Vec::new(),
        };
        let mut x = cfg.initial_state(self.plant.nx());
        let apply = |result: &mut RunResult, x: &mut DVector<f64>, u: DVector<f64>, rec: (f64, usize, f64)| {
            let k = result.steps.len();
            let y = self.plant.output(x);
            *x = self.plant.step(x, &u);
            result.steps.push(StepRecord {
                k,
                u,
                y,
                y_ref: self.output_reference(k),
                pnorm: rec.0,
                solver_iters: rec.1,
                residual: rec.2,
            });
        };

        for _ in 0..sigma {
            apply(&mut result, &mut x, DVector::zeros(nu), (0.0, 0, 0.0));
        }

        let mut warm: Option<SaddlePoint> = None;
        while result.steps.len() < total {
            let k = result.steps.len();
            let mut u_ini = DVector::zeros(sigma * nu);
            let mut y_ini = DVector::zeros(sigma * ny);
            for (i, rec) in result.steps[k - sigma..].iter().enumerate() {
                u_ini.rows_mut(i * nu, nu).copy_from(&rec.u);
                y_ini.rows_mut(i * ny, ny).copy_from(&rec.y);
            }
            let problem = self.problem(k, u_ini, y_ini).map_err(RunError::Setup)?;
            let spec = self.attack_spec(k);
            if stop_at == Some(result.replans.len()) {
                return Ok(Stop::Reached(Instant {
                    step: k,
                    problem,
                    spec,
                    warm,
                }));
            }

            let index = result.replans.len();
            let outcome = match self.replan(&problem, &spec, warm.as_ref(), &mut rng, index) {
                Ok(o) => o,
                Err(source) => {
                    return Err(RunError::Step {
                        step: k,
                        source,
                        partial: Box::new(result),
                    })
                }
            };
            let u_plan = outcome.plan.z.rows(0, cfg.dpc.ell * nu).into_owned();
            let pnorm = outcome.record.perturbation.norm();
            let residual = outcome.plan.residual_norm;
            let iters = outcome.record.solver_iters;
            result.replans.push(ReplanRecord {
                step: k,
                ..outcome.record
            });
            warm = Some(outcome.nominal);

            for j in 0..interval.min(total - k) {
                let u = u_plan.rows(j * nu, nu).into_owned();
                let it = if j == 0 { iters } else { 0 };
                apply(&mut result, &mut x, u, (pnorm, it, residual));
            }
        }
        Ok(Stop::Finished(result))
    }

    fn replan(
        &self,
        problem: &DpcProblem,
        spec: &AttackSpec,
        warm: Option<&SaddlePoint>,
        rng: &mut ChaCha8Rng,
        index: usize,
    ) -> Result<Replan, deepc_attack::Error> {
        let cfg = &self.config.attack;
        let settings = &self.settings;
        let u_len = self.model.layout().u_len;
        let psi = |sol: &SaddlePoint| spec.value_and_gradient(&sol.z.rows(0, u_len).into_owned()).0;

        let (nominal, psi_nominal, perturbation) = match cfg.mode {
            AttackMode::None => {
                let nominal = solve_qp_with(&assemble_nominal(problem), settings, warm)?;
                let value = psi(&nominal);
                (nominal, value, Perturbation::zero(problem.y_ini.len()))
            }
            AttackMode::Random => {
                let nominal = solve_qp_with(&assemble_nominal(problem), settings, warm)?;
                let value = psi(&nominal);
                let p = attack_random_with(rng, &problem.y_ini, cfg.rho)?;
                (nominal, value, p)
            }
            AttackMode::Implicit => {
                let atk = attack_implicit(problem, spec, settings, warm)?;
                (atk.nominal, atk.nominal_value, atk.perturbation)
            }
            AttackMode::Oracle => {
                let seed = cfg.seed.wrapping_add(index as u64);
                let res = attack_oracle(problem, spec, cfg.oracle_samples, seed, settings, warm)?;
                let perturbation = Perturbation {
                    predicted_gain: Some(res.implicit.predicted_gain(&res.best.p)),
                    p: res.best.p.clone(),
                    radius: res.implicit.perturbation.radius,
                    provenance: res.best.provenance,
                };
                (res.implicit.nominal, res.implicit.nominal_value, perturbation)
            }
        };

        let (plan, psi_attacked) = if perturbation.is_zero() {
            (nominal.clone(), psi_nominal)
        } else {
            let (value, sol) = evaluate_perturbation(problem, spec, &perturbation.p, settings, Some(&nominal))?;
            (sol, value)
        };
        let solver_iters = nominal.iterations + if perturbation.is_zero() { 0 } else { plan.iterations };
        Ok(Replan {
            record: ReplanRecord {
                step: 0,
                psi_nominal,
                psi_attacked,
                solver_iters,
                residual: plan.residual_norm,
                perturbation,
            },
            plan,
            nominal,
        })
    }
}

struct Replan {
    record: ReplanRecord,
    plan: SaddlePoint,
    nominal: SaddlePoint,
}

/// Convenience wrapper: build the experiment and run it.
pub fn run_closed_loop(config: &ExperimentConfig) -> Result<RunResult, RunError> {
    Experiment::new(config.clone())?.run()
}

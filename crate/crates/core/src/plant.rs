//! Ground-truth linear plant: zero-order-hold discretization, rollout and
//! offline excitation data.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::linalg::TruncatedSvd;

/// Continuous-time system `ẋ = A x + B u`, `y = C x`, sampled every `delta`
/// seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousLti {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub delta: f64,
}

/// Discrete-time system `x⁺ = Ad x + Bd u`, `y = C x`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLti {
    pub ad: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

/// Paired input/output samples `(u_k, y_k)`, `k = 0..T-1`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IoLog {
    pub inputs: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
}

impl ContinuousLti {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, delta: f64) -> Result<Self> {
        let sys = Self { a, b, c, delta };
        sys.validate()?;
        Ok(sys)
    }

    fn validate(&self) -> Result<()> {
        let nx = self.a.nrows();
        check_dim("A columns", nx, self.a.ncols())?;
        check_dim("B rows", nx, self.b.nrows())?;
        check_dim("C columns", nx, self.c.ncols())?;
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sampling period must be positive, got {}",
                self.delta
            )));
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }
}

/// Two unit masses between walls, coupled by unit springs; every state is
/// measured.
pub fn oscillating_masses(delta: f64) -> ContinuousLti {
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(4, 4, &[
         0.0,  0.0, 1.0, 0.0,
         0.0,  0.0, 0.0, 1.0,
        -2.0,  1.0, 0.0, 0.0,
         1.0, -2.0, 0.0, 0.0,
    ]);
    #[rustfmt::skip]
    let b = DMatrix::from_row_slice(4, 2, &[
        0.0, 0.0,
        0.0, 0.0,
        1.0, 0.0,
        0.0, 1.0,
    ]);
    ContinuousLti {
        a,
        b,
        c: DMatrix::identity(4, 4),
        delta,
    }
}

/// Zero-order-hold discretization.
///
/// `exp(Δ [[A, B], [0, 0]])` carries `exp(ΔA)` in its top-left block and
/// `∫₀^Δ exp(sA) ds · B` in its top-right block, so `A` need not be
/// invertible.
pub fn discretize(sys: &ContinuousLti) -> Result<DiscreteLti> {
    sys.validate()?;
    let nx = sys.state_dim();
    let nu = sys.b.ncols();
    let mut aug = DMatrix::zeros(nx + nu, nx + nu);
    aug.view_mut((0, 0), (nx, nx)).copy_from(&(&sys.a * sys.delta));
    aug.view_mut((0, nx), (nx, nu)).copy_from(&(&sys.b * sys.delta));
    let e = aug.exp();
    Ok(DiscreteLti {
        ad: e.view((0, 0), (nx, nx)).into_owned(),
        bd: e.view((0, nx), (nx, nu)).into_owned(),
        c: sys.c.clone(),
    })
}

impl DiscreteLti {
    pub fn new(ad: DMatrix<f64>, bd: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let nx = ad.nrows();
        check_dim("Ad columns", nx, ad.ncols())?;
        check_dim("Bd rows", nx, bd.nrows())?;
        check_dim("C columns", nx, c.ncols())?;
        Ok(Self { ad, bd, c })
    }

    pub fn nx(&self) -> usize {
        self.ad.nrows()
    }

    pub fn nu(&self) -> usize {
        self.bd.ncols()
    }

    pub fn ny(&self) -> usize {
        self.c.nrows()
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.ad * x + &self.bd * u
    }

    pub fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.c * x
    }

    /// Steady state `(x_s, u_s)` with `x_s = Ad x_s + Bd u_s` and
    /// `C x_s = y_s`, as the minimum-norm solution of the stacked linear
    /// system. Fails when `y_s` is not an attainable equilibrium output.
    pub fn equilibrium(&self, y_s: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        check_dim("equilibrium output", self.ny(), y_s.len())?;
        let (nx, nu, ny) = (self.nx(), self.nu(), self.ny());
        let mut lhs = DMatrix::zeros(nx + ny, nx + nu);
        let mut shifted = self.ad.clone();
        for i in 0..nx {
            shifted[(i, i)] -= 1.0;
        }
        lhs.view_mut((0, 0), (nx, nx)).copy_from(&shifted);
        lhs.view_mut((0, nx), (nx, nu)).copy_from(&self.bd);
        lhs.view_mut((nx, 0), (ny, nx)).copy_from(&self.c);
        let mut rhs = DVector::zeros(nx + ny);
        rhs.rows_mut(nx, ny).copy_from(y_s);
        let sol = TruncatedSvd::new(&lhs, 1e-12).solve(&rhs);
        let residual = (&lhs * &sol - &rhs).norm();
        if residual > 1e-8 * (1.0 + y_s.norm()) {
            return Err(Error::InvalidArgument(format!(
                "output {:?} is not an equilibrium of the plant (residual {residual:.2e})",
                y_s.as_slice()
            )));
        }
        Ok((sol.rows(0, nx).into_owned(), sol.rows(nx, nu).into_owned()))
    }
}

/// Roll the plant out from `x0`: the log pairs `u_k` with `y_k = C x_k`.
pub fn simulate(sys: &DiscreteLti, x0: &DVector<f64>, inputs: &[DVector<f64>]) -> Result<IoLog> {
    check_dim("initial state", sys.nx(), x0.len())?;
    let mut x = x0.clone();
    let mut outputs = Vec::with_capacity(inputs.len());
    for u in inputs {
        check_dim("input", sys.nu(), u.len())?;
        outputs.push(sys.output(&x));
        x = sys.step(&x, u);
    }
    Ok(IoLog {
        inputs: inputs.to_vec(),
        outputs,
    })
}

/// Offline experiment: i.i.d. uniform inputs on `[-amplitude, amplitude]`
/// applied from rest.
pub fn collect_excitation(sys: &DiscreteLti, steps: usize, seed: u64, amplitude: f64) -> Result<IoLog> {
    if !(amplitude >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "excitation amplitude must be non-negative, got {amplitude}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nu = sys.nu();
    let inputs: Vec<DVector<f64>> = (0..steps)
        .map(|_| {
            DVector::from_fn(nu, |_, _| {
                if amplitude == 0.0 {
                    0.0
                } else {
                    rng.gen_range(-amplitude..=amplitude)
                }
            })
        })
        .collect();
    simulate(sys, &DVector::zeros(sys.nx()), &inputs)
}

impl IoLog {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn push(&mut self, u: DVector<f64>, y: DVector<f64>) {
        self.inputs.push(u);
        self.outputs.push(y);
    }

    /// CSV with header `k,u_1..u_nu,y_1..y_ny`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let nu = self.inputs.first().map_or(0, |u| u.len());
        let ny = self.outputs.first().map_or(0, |y| y.len());
        let mut header = vec!["k".to_string()];
        header.extend((1..=nu).map(|i| format!("u_{i}")));
        header.extend((1..=ny).map(|i| format!("y_{i}")));
        writeln!(out, "{}", header.join(","))?;
        for (k, (u, y)) in self.inputs.iter().zip(&self.outputs).enumerate() {
            let mut row = vec![k.to_string()];
            row.extend(u.iter().chain(y.iter()).map(|v| format!("{v:e}")));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

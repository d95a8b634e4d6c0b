//! Block-Hankel matrices built from offline input/output data.

use nalgebra::{DMatrix, DMatrixView};

use crate::error::{check_dim, Error, Result};
use crate::plant::IoLog;

/// Input and output Hankel matrices of depth `sigma + ell`.
///
/// Column `j` of `u` stacks `u_j, …, u_{j+σ+ℓ-1}`; the first `σ` block rows
/// form the past window and the remaining `ℓ` block rows the future window.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelPair {
    pub u: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub sigma: usize,
    pub ell: usize,
    pub ng: usize,
    pub nu: usize,
    pub ny: usize,
}

/// Builds the pair from a log; `n_g = T - (σ + ℓ) + 1`.
pub fn build_hankel(log: &IoLog, sigma: usize, ell: usize) -> Result<HankelPair> {
    check_dim("log outputs", log.inputs.len(), log.outputs.len())?;
    let depth = sigma + ell;
    if depth == 0 {
        return Err(Error::InvalidArgument("Hankel depth σ + ℓ must be positive".into()));
    }
    let t = log.len();
    if t < depth {
        return Err(Error::LogTooShort { len: t, depth });
    }
    let nu = log.inputs[0].len();
    let ny = log.outputs[0].len();
    for (u, y) in log.inputs.iter().zip(&log.outputs) {
        check_dim("logged input", nu, u.len())?;
        check_dim("logged output", ny, y.len())?;
    }
    let ng = t - depth + 1;
    let u = DMatrix::from_fn(depth * nu, ng, |r, j| log.inputs[j + r / nu][r % nu]);
    let y = DMatrix::from_fn(depth * ny, ng, |r, j| log.outputs[j + r / ny][r % ny]);
    Ok(HankelPair {
        u,
        y,
        sigma,
        ell,
        ng,
        nu,
        ny,
    })
}

/// Log length needed for `ng` Hankel columns.
pub fn required_length(sigma: usize, ell: usize, ng: usize) -> usize {
    sigma + ell + ng - 1
}

impl HankelPair {
    pub fn u_past(&self) -> DMatrix<f64> {
        self.u.rows(0, self.sigma * self.nu).into_owned()
    }

    pub fn u_future(&self) -> DMatrix<f64> {
        self.u.rows(self.sigma * self.nu, self.ell * self.nu).into_owned()
    }

    pub fn y_past(&self) -> DMatrix<f64> {
        self.y.rows(0, self.sigma * self.ny).into_owned()
    }

    pub fn y_future(&self) -> DMatrix<f64> {
        self.y.rows(self.sigma * self.ny, self.ell * self.ny).into_owned()
    }

    /// Block `(i, j)` of a block-Hankel matrix with block height `w`.
    fn block(m: &DMatrix<f64>, w: usize, i: usize, j: usize) -> DMatrixView<'_, f64> {
        m.view((i * w, j), (w, 1))
    }

    /// Exact shift structure: block `(i+1, j)` equals block `(i, j+1)`.
    pub fn is_block_hankel(&self) -> bool {
        let depth = self.sigma + self.ell;
        let check = |m: &DMatrix<f64>, w: usize| {
            (0..depth.saturating_sub(1)).all(|i| {
                (0..self.ng.saturating_sub(1)).all(|j| Self::block(m, w, i + 1, j) == Self::block(m, w, i, j + 1))
            })
        };
        self.u.shape() == ((self.sigma + self.ell) * self.nu, self.ng)
            && self.y.shape() == ((self.sigma + self.ell) * self.ny, self.ng)
            && check(&self.u, self.nu)
            && check(&self.y, self.ny)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn scalar_log(values: &[f64]) -> IoLog {
        IoLog {
            inputs: values.iter().map(|v| DVector::from_element(1, *v)).collect(),
            outputs: values.iter().map(|v| DVector::from_element(1, -*v)).collect(),
        }
    }

    #[test]
    fn depth_two_scalar_hankel() {
        let h = build_hankel(&scalar_log(&[1.0, 2.0, 3.0, 4.0]), 1, 1).unwrap();
        assert_eq!(h.u, DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 3.0, 4.0]));
        assert_eq!(h.ng, 3);
        assert_eq!(h.u_past(), DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]));
        assert_eq!(h.u_future(), DMatrix::from_row_slice(1, 3, &[2.0, 3.0, 4.0]));
        assert!(h.is_block_hankel());
    }

    #[test]
    fn constant_signal_gives_identical_columns() {
        let h = build_hankel(&scalar_log(&[2.5; 9]), 2, 3).unwrap();
        for j in 1..h.ng {
            assert_eq!(h.u.column(j), h.u.column(0));
            assert_eq!(h.y.column(j), h.y.column(0));
        }
    }

    #[test]
    fn short_log_is_rejected() {
        let err = build_hankel(&scalar_log(&[1.0, 2.0]), 2, 1).unwrap_err();
        assert_eq!(err, Error::LogTooShort { len: 2, depth: 3 });
    }

    #[test]
    fn vector_signals_interleave_by_time() {
        let log = IoLog {
            inputs: (0..4)
                .map(|k| DVector::from_vec(vec![k as f64, 10.0 + k as f64]))
                .collect(),
            outputs: (0..4).map(|k| DVector::from_element(1, k as f64)).collect(),
        };
        let h = build_hankel(&log, 1, 1).unwrap();
        assert_eq!(h.u.column(1).as_slice(), &[1.0, 11.0, 2.0, 12.0]);
        assert!(h.is_block_hankel());
    }
}

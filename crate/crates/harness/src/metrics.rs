//! Tracking-error metrics over a window of the closed-loop log.

use crate::closed_loop::RunResult;

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub window_start: usize,
    pub window_end: usize,
    /// Root-mean-square of `y_k − ŷ_k` per output channel.
    pub rms: Vec<f64>,
    /// Largest `|y_k − ŷ_k|` per output channel.
    pub peak: Vec<f64>,
    pub replans: usize,
    pub mean_psi_nominal: f64,
    pub mean_psi_attacked: f64,
    pub total_solver_iters: usize,
    pub max_residual: f64,
}

/// Per-channel RMS and peak of `errors[k][i]`.
pub fn rms_and_peak<'a, I>(errors: I, channels: usize) -> (Vec<f64>, Vec<f64>)
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut sq = vec![0.0; channels];
    let mut peak = vec![0.0_f64; channels];
    let mut count = 0usize;
    for e in errors {
        for i in 0..channels {
            sq[i] += e[i] * e[i];
            peak[i] = peak[i].max(e[i].abs());
        }
        count += 1;
    }
    let rms = sq
        .iter()
        .map(|s| if count == 0 { 0.0 } else { (s / count as f64).sqrt() })
        .collect();
    (rms, peak)
}

/// Metrics over steps `[window_start, len)`.
pub fn compute_metrics(result: &RunResult, window_start: usize) -> Summary {
    let window_end = result.steps.len();
    let start = window_start.min(window_end);
    let errors: Vec<Vec<f64>> = result.steps[start..]
        .iter()
        .map(|s| (&s.y - &s.y_ref).iter().copied().collect())
        .collect();
    let (rms, peak) = rms_and_peak(errors.iter().map(Vec::as_slice), result.ny);
    let n = result.replans.len();
    let mean = |f: &dyn Fn(usize) -> f64| {
        if n == 0 {
            0.0
        } else {
            (0..n).map(f).sum::<f64>() / n as f64
        }
    };
    Summary {
        window_start: start,
        window_end,
        rms,
        peak,
        replans: n,
        mean_psi_nominal: mean(&|i| result.replans[i].psi_nominal),
        mean_psi_attacked: mean(&|i| result.replans[i].psi_attacked),
        total_solver_iters: result.steps.iter().map(|s| s.solver_iters).sum(),
        max_residual: result.replans.iter().map(|r| r.residual).fold(0.0, f64::max),
    }
}

/// Ratio of the RMS tracking error on `channel` between two runs.
pub fn rms_ratio(attacked: &Summary, baseline: &Summary, channel: usize) -> f64 {
    attacked.rms[channel] / baseline.rms[channel]
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty set");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

impl Summary {
    /// `key = value` lines; floats use the shortest round-trip form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        line("window_start", self.window_start.to_string());
        line("window_end", self.window_end.to_string());
        for (i, v) in self.rms.iter().enumerate() {
            line(&format!("rms_y_{}", i + 1), v.to_string());
        }
        for (i, v) in self.peak.iter().enumerate() {
            line(&format!("peak_y_{}", i + 1), v.to_string());
        }
        line("replans", self.replans.to_string());
        line("mean_psi_nominal", self.mean_psi_nominal.to_string());
        line("mean_psi_attacked", self.mean_psi_attacked.to_string());
        line("total_solver_iters", self.total_solver_iters.to_string());
        line("max_residual", self.max_residual.to_string());
        out
    }
}

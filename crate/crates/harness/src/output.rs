//! CSV and text artifacts of a run.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use deepc_attack::attack::{OracleResult, Perturbation};
use deepc_attack::CompactQp;

use crate::closed_loop::RunResult;
use crate::metrics::Summary;

fn writer(path: &Path) -> io::Result<csv::Writer<File>> {
    Ok(csv::Writer::from_writer(File::create(path)?))
}

fn numbers(v: &DVector<f64>) -> impl Iterator<Item = String> + '_ {
    v.iter().map(|x| x.to_string())
}

fn gain_field(p: &Perturbation) -> String {
    p.predicted_gain.map_or(String::new(), |g| g.to_string())
}

/// `k,u_*,y_*,yref_*,pnorm,solver_iters,residual`.
pub fn write_trace(path: &Path, result: &RunResult) -> io::Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["k".to_string()];
    header.extend((1..=result.nu).map(|i| format!("u_{i}")));
    header.extend((1..=result.ny).map(|i| format!("y_{i}")));
    header.extend((1..=result.ny).map(|i| format!("yref_{i}")));
    header.extend(["pnorm", "solver_iters", "residual"].map(String::from));
    w.write_record(&header)?;
    for s in &result.steps {
        let mut row = vec![s.k.to_string()];
        row.extend(numbers(&s.u));
        row.extend(numbers(&s.y));
        row.extend(numbers(&s.y_ref));
        row.push(s.pnorm.to_string());
        row.push(s.solver_iters.to_string());
        row.push(s.residual.to_string());
        w.write_record(&row)?;
    }
    w.flush()
}

/// `step,p_1..p_{σn_y},norm,provenance,predicted_gain`, one row per replan.
pub fn write_perturbations(path: &Path, result: &RunResult) -> io::Result<()> {
    let mut w = writer(path)?;
    let dim = result.sigma * result.ny;
    let mut header = vec!["step".to_string()];
    header.extend((1..=dim).map(|i| format!("p_{i}")));
    header.extend(["norm", "provenance", "predicted_gain"].map(String::from));
    w.write_record(&header)?;
    for r in &result.replans {
        let p = &r.perturbation;
        let mut row = vec![r.step.to_string()];
        row.extend(numbers(&p.p));
        row.push(p.norm().to_string());
        row.push(p.provenance.to_string());
        row.push(gain_field(p));
        w.write_record(&row)?;
    }
    w.flush()
}

/// Attacker-objective trace: one row per replanning instant.
pub fn write_replans(path: &Path, result: &RunResult) -> io::Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "step",
        "radius",
        "pnorm",
        "provenance",
        "psi_nominal",
        "psi_attacked",
        "predicted_gain",
        "solver_iters",
        "residual",
    ])?;
    for r in &result.replans {
        let p = &r.perturbation;
        w.write_record([
            r.step.to_string(),
            p.radius.to_string(),
            p.norm().to_string(),
            p.provenance.to_string(),
            r.psi_nominal.to_string(),
            r.psi_attacked.to_string(),
            gain_field(p),
            r.solver_iters.to_string(),
            r.residual.to_string(),
        ])?;
    }
    w.flush()
}

pub fn write_summary(path: &Path, header: &[(&str, String)], summary: &Summary) -> io::Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    for (k, v) in header {
        writeln!(f, "{k} = {v}")?;
    }
    f.write_all(summary.to_text().as_bytes())?;
    f.flush()
}

/// `index,provenance,value,norm,predicted_gain,p_1..`, candidates in
/// evaluation order.
pub fn write_oracle(path: &Path, result: &OracleResult) -> io::Result<()> {
    let mut w = writer(path)?;
    let dim = result.best.p.len();
    let mut header: Vec<String> = ["index", "provenance", "value", "norm", "predicted_gain"]
        .map(String::from)
        .to_vec();
    header.extend((1..=dim).map(|i| format!("p_{i}")));
    w.write_record(&header)?;
    for (i, s) in result.samples.iter().enumerate() {
        let mut row = vec![
            i.to_string(),
            s.provenance.to_string(),
            s.value.to_string(),
            s.p.norm().to_string(),
            result.implicit.predicted_gain(&s.p).to_string(),
        ];
        row.extend(numbers(&s.p));
        w.write_record(&row)?;
    }
    w.flush()
}

fn write_matrix(path: &Path, m: &DMatrix<f64>) -> io::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|x| x.to_string()))?;
    }
    w.flush()
}

/// `P.csv`, `q.csv`, `H.csv`, `b.csv` and `box.csv` (lower, upper) in `dir`.
pub fn dump_qp(dir: &Path, qp: &CompactQp) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    write_matrix(&dir.join("P.csv"), &qp.p)?;
    write_matrix(
        &dir.join("q.csv"),
        &DMatrix::from_column_slice(qp.n(), 1, qp.q.as_slice()),
    )?;
    write_matrix(&dir.join("H.csv"), &qp.h)?;
    write_matrix(
        &dir.join("b.csv"),
        &DMatrix::from_column_slice(qp.m(), 1, qp.b.as_slice()),
    )?;
    let mut bounds = DMatrix::zeros(qp.n(), 2);
    bounds.set_column(0, &qp.bounds.lower);
    bounds.set_column(1, &qp.bounds.upper);
    write_matrix(&dir.join("box.csv"), &bounds)
}

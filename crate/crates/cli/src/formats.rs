//! JSON and CSV file formats.
//!
//! Matrices are stored row-major as arrays of arrays. Non-finite costs are
//! written as the strings `"inf"`, `"-inf"` and `"nan"` so that the JSON
//! stays valid.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use clqr_core::analysis::CostReport;
use clqr_core::benchmarks::{ExperimentReport, ExperimentRow};
use clqr_core::lti_sim::{LtiSystem, SnapshotRecord};
use clqr_core::policy::{LqrWeights, PolicyResult};
use clqr_core::precondition::{Gramian, ProjectionMatrix};
use clqr_core::{Complex64, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::app::Failure;

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, Failure> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Failure::Usage(format!(
            "{what}: rows have different lengths"
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn pairs(z: &[Complex64]) -> Vec<[f64; 2]> {
    z.iter().map(|c| [c.re, c.im]).collect()
}

/// Serializes non-finite values as strings.
mod lenient {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else if x.is_nan() {
            s.serialize_str("nan")
        } else if *x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(serde::de::Error::custom(format!("not a number: {s}"))),
            },
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let file = File::create(path).map_err(|e| Failure::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Failure::Usage(e.to_string()))?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| Failure::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

/// 17 significant digits, enough to round-trip any `f64`.
fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Plant description, optionally carrying cost weights and an initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemFile {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<f64>>,
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

impl SystemFile {
    pub fn from_system(sys: &LtiSystem) -> Self {
        Self {
            n: sys.n(),
            m: sys.m(),
            a: matrix_rows(sys.a()),
            b: matrix_rows(sys.b()),
            v: sys.semistable_eigvec().map(|v| v.iter().copied().collect()),
            q: None,
            r: None,
            x0: None,
        }
    }

    pub fn with_cost(mut self, weights: &LqrWeights, x0: &DVector<f64>) -> Self {
        self.q = Some(matrix_rows(weights.q()));
        self.r = Some(matrix_rows(weights.r()));
        self.x0 = Some(x0.iter().copied().collect());
        self
    }

    pub fn system(&self) -> Result<LtiSystem, Failure> {
        let a = matrix_from_rows(&self.a, "A")?;
        let b = matrix_from_rows(&self.b, "B")?;
        if a.shape() != (self.n, self.n)
            || b.nrows() != self.n
            || (self.m > 0 && b.ncols() != self.m)
        {
            return Err(Failure::Usage(format!(
                "system file declares n = {}, m = {} but A is {}x{} and B is {}x{}",
                self.n,
                self.m,
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        let v = self.v.as_ref().map(|v| DVector::from_column_slice(v));
        Ok(LtiSystem::new(a, b, v)?)
    }

    /// `Q` defaults to the identity on the complement of `v`, `R` to the
    /// identity.
    pub fn weights(&self) -> Result<LqrWeights, Failure> {
        let n = self.n;
        let q = match &self.q {
            Some(rows) => matrix_from_rows(rows, "Q")?,
            None => match &self.v {
                Some(v) => {
                    let v = DVector::from_column_slice(v);
                    let vn = &v / v.norm();
                    DMatrix::identity(n, n) - &vn * vn.transpose()
                }
                None => DMatrix::identity(n, n),
            },
        };
        let r = match &self.r {
            Some(rows) => matrix_from_rows(rows, "R")?,
            None => DMatrix::identity(self.m, self.m),
        };
        Ok(LqrWeights::new(q, r)?)
    }

    /// `x0` defaults to `e₁` with its `v` component removed, normalized.
    pub fn x0(&self) -> Result<DVector<f64>, Failure> {
        if let Some(x0) = &self.x0 {
            if x0.len() != self.n {
                return Err(Failure::Usage(format!(
                    "x0 has length {}, expected {}",
                    x0.len(),
                    self.n
                )));
            }
            return Ok(DVector::from_column_slice(x0));
        }
        let mut x = DVector::zeros(self.n);
        x[0] = 1.0;
        if let Some(v) = &self.v {
            let v = DVector::from_column_slice(v);
            let vn = &v / v.norm();
            x -= &vn * vn.dot(&x);
            if x.norm() < 1e-12 {
                x = DVector::zeros(self.n);
                x[1 % self.n] = 1.0;
                x -= &vn * vn.dot(&x);
            }
        }
        let norm = x.norm();
        Ok(x / norm)
    }
}

/// CSV with header `t,x1,…,xn,u1,…,um`, one row per fine-grid point.
pub fn write_trajectory_csv(path: &Path, record: &SnapshotRecord) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Failure::Usage(e.to_string()))?;
    let (n, m) = (record.states().nrows(), record.inputs().nrows());
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=m).map(|i| format!("u{i}")));
    w.write_record(&header)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    for (k, &t) in record.grid().fine_times().iter().enumerate() {
        let mut row = Vec::with_capacity(1 + n + m);
        row.push(fmt_f64(t));
        row.extend(record.states().column(k).iter().map(|&x| fmt_f64(x)));
        row.extend(record.inputs().column(k).iter().map(|&x| fmt_f64(x)));
        w.write_record(&row)
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    w.flush().map_err(|e| Failure::io(path, e))
}

/// Headerless CSV matrix.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<(), Failure> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    for r in m.row_iter() {
        w.write_record(r.iter().map(|&x| fmt_f64(x)))
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    w.flush().map_err(|e| Failure::io(path, e))
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>, Failure> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Failure::Usage(format!("{}: bad number {s:?}", path.display())))
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    matrix_from_rows(&rows, &path.display().to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionFile {
    pub n_hat: usize,
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<f64>>,
    pub singular_values: Vec<f64>,
}

impl ProjectionFile {
    pub fn from_projection(p: &ProjectionMatrix) -> Self {
        Self {
            n_hat: p.n_hat(),
            p: matrix_rows(p.matrix()),
            v: p.deflation_vec().map(|v| v.iter().copied().collect()),
            singular_values: p.singular_values().to_vec(),
        }
    }

    pub fn projection(&self) -> Result<ProjectionMatrix, Failure> {
        let p = matrix_from_rows(&self.p, "P")?;
        if p.nrows() != self.n_hat {
            return Err(Failure::Usage(format!(
                "P has {} rows, n_hat = {}",
                p.nrows(),
                self.n_hat
            )));
        }
        let v = self.v.as_ref().map(|v| DVector::from_column_slice(v));
        Ok(ProjectionMatrix::new(p, v, self.singular_values.clone())?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramianFile {
    pub n: usize,
    #[serde(rename = "Phi")]
    pub phi: Vec<Vec<f64>>,
    pub horizon: f64,
}

impl GramianFile {
    pub fn from_gramian(g: &Gramian) -> Self {
        Self {
            n: g.phi.nrows(),
            phi: matrix_rows(&g.phi),
            horizon: g.horizon,
        }
    }

    pub fn gramian(&self) -> Result<Gramian, Failure> {
        let phi = matrix_from_rows(&self.phi, "Phi")?;
        if phi.shape() != (self.n, self.n) {
            return Err(Failure::Usage("Phi is not n x n".into()));
        }
        Ok(Gramian {
            phi,
            horizon: self.horizon,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub iterations: usize,
    pub residuals: Vec<f64>,
    pub timings_ms: Vec<f64>,
    pub converged: bool,
    pub n_hat: usize,
    pub preconditioning_ms: f64,
    pub lstsq_residuals: Vec<f64>,
    pub rank: usize,
    pub rank_required: usize,
}

impl PolicyReport {
    pub fn from_result(r: &PolicyResult) -> Self {
        Self {
            iterations: r.iter_count,
            residuals: r.residuals.clone(),
            timings_ms: r.timings_ms.clone(),
            converged: r.converged,
            n_hat: r.d,
            preconditioning_ms: r.preconditioning_ms,
            lstsq_residuals: r.lstsq_residuals.clone(),
            rank: r.rank.rank,
            rank_required: r.rank.required,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReportFile {
    #[serde(rename = "J", with = "lenient")]
    pub j: f64,
    #[serde(rename = "J_opt", with = "lenient")]
    pub j_opt: f64,
    #[serde(rename = "J_hat", with = "lenient")]
    pub j_hat: f64,
    #[serde(with = "lenient")]
    pub epsilon: f64,
    pub epsilon_hat: Option<f64>,
    #[serde(with = "lenient")]
    pub small_gain_margin: f64,
    pub certified: bool,
    #[serde(with = "lenient")]
    pub gamma: f64,
    pub closed_loop_spectrum: Vec<[f64; 2]>,
    pub open_loop_spectrum: Vec<[f64; 2]>,
}

impl CostReportFile {
    pub fn from_report(r: &CostReport) -> Self {
        Self {
            j: r.j,
            j_opt: r.j_opt,
            j_hat: r.j_hat,
            epsilon: r.epsilon,
            epsilon_hat: r.epsilon_hat,
            small_gain_margin: r.small_gain_margin,
            certified: r.certified,
            gamma: r.gamma,
            closed_loop_spectrum: pairs(&r.closed_loop_spectrum),
            open_loop_spectrum: pairs(&r.open_loop_spectrum),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowFile {
    pub n_hat: usize,
    pub iterations: usize,
    pub converged: bool,
    pub learn_time_ms: f64,
    pub preconditioning_ms: f64,
    pub timings_ms: Vec<f64>,
    pub residuals: Vec<f64>,
    #[serde(rename = "J", with = "lenient")]
    pub j: f64,
    pub eps_hat: f64,
    pub eps: Option<f64>,
    pub certified: Option<bool>,
    #[serde(with = "lenient")]
    pub kernel_residual: f64,
    pub closed_loop_dominant: Vec<[f64; 2]>,
    pub rank: usize,
    pub rank_required: usize,
    pub error: Option<String>,
}

impl RowFile {
    fn from_row(r: &ExperimentRow) -> Self {
        Self {
            n_hat: r.n_hat,
            iterations: r.iterations,
            converged: r.converged,
            learn_time_ms: r.learn_time_ms,
            preconditioning_ms: r.preconditioning_ms,
            timings_ms: r.timings_ms.clone(),
            residuals: r.residuals.clone(),
            j: r.j,
            eps_hat: r.eps_hat,
            eps: r.eps,
            certified: r.certified,
            kernel_residual: r.kernel_residual,
            closed_loop_dominant: pairs(&r.closed_loop_dominant),
            rank: r.rank,
            rank_required: r.rank_required,
            error: r.error.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReportFile {
    pub rows: Vec<RowFile>,
    #[serde(rename = "J_opt")]
    pub j_opt: f64,
    pub knee_n_hat: Option<usize>,
    pub open_loop_dominant: Vec<[f64; 2]>,
    pub optimal_closed_loop_dominant: Vec<[f64; 2]>,
    pub singular_values: Vec<f64>,
    pub snapshot_norm: f64,
    pub seed: u64,
    pub noise_seed: u64,
    pub config_hash: String,
}

impl ExperimentReportFile {
    pub fn from_report(r: &ExperimentReport, config_hash: &str) -> Self {
        Self {
            rows: r.rows.iter().map(RowFile::from_row).collect(),
            j_opt: r.j_opt,
            knee_n_hat: r.knee().map(|k| k.n_hat),
            open_loop_dominant: pairs(&r.open_loop_dominant),
            optimal_closed_loop_dominant: pairs(&r.optimal_closed_loop_dominant),
            singular_values: r.singular_values.clone(),
            snapshot_norm: r.snapshot_norm,
            seed: r.seed,
            noise_seed: r.noise_seed,
            config_hash: config_hash.to_string(),
        }
    }
}

/// `n_hat,iterations,J,eps_hat,eps,certified`; absent values are left empty.
/// Wall-clock figures go to [`write_timings_csv`] so this file stays
/// reproducible.
pub fn write_report_csv(path: &Path, r: &ExperimentReport) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Failure::Usage(e.to_string()))?;
    w.write_record(["n_hat", "iterations", "J", "eps_hat", "eps", "certified"])
        .map_err(|e| Failure::Usage(e.to_string()))?;
    for row in &r.rows {
        w.write_record([
            row.n_hat.to_string(),
            row.iterations.to_string(),
            fmt_f64(row.j),
            fmt_f64(row.eps_hat),
            row.eps.map(fmt_f64).unwrap_or_default(),
            row.certified.map(|c| c.to_string()).unwrap_or_default(),
        ])
        .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    w.flush().map_err(|e| Failure::io(path, e))
}

/// `n_hat,learn_time_ms,preconditioning_ms`.
pub fn write_timings_csv(path: &Path, r: &ExperimentReport) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Failure::Usage(e.to_string()))?;
    w.write_record(["n_hat", "learn_time_ms", "preconditioning_ms"])
        .map_err(|e| Failure::Usage(e.to_string()))?;
    for row in &r.rows {
        w.write_record([
            row.n_hat.to_string(),
            fmt_f64(row.learn_time_ms),
            fmt_f64(row.preconditioning_ms),
        ])
        .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    w.flush().map_err(|e| Failure::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clqr_core::lti_sim::{simulate, SignalGenerator, TimeGrid};

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn system_round_trip() {
        let sys = LtiSystem::new(
            DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 0.0, -3.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            None,
        )
        .unwrap();
        let dir = tmp();
        let path = dir.path().join("sys.json");
        write_json(&path, &SystemFile::from_system(&sys)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"A\"") && !text.contains("\"v\""));
        let back: SystemFile = read_json(&path).unwrap();
        assert_eq!(back.system().unwrap(), sys);
        assert_eq!(back.weights().unwrap().q(), &DMatrix::identity(2, 2));
        assert_eq!(back.x0().unwrap()[0], 1.0);
    }

    #[test]
    fn default_x0_avoids_the_semistable_mode() {
        let file = SystemFile {
            n: 3,
            m: 1,
            a: vec![
                vec![-1.0, 1.0, 0.0],
                vec![1.0, -2.0, 1.0],
                vec![0.0, 1.0, -1.0],
            ],
            b: vec![vec![1.0], vec![0.0], vec![0.0]],
            v: Some(vec![1.0, 1.0, 1.0]),
            q: None,
            r: None,
            x0: None,
        };
        let x0 = file.x0().unwrap();
        assert!((x0.norm() - 1.0).abs() < 1e-14);
        assert!(x0.sum().abs() < 1e-14);
        let q = file.weights().unwrap();
        assert!((q.q() * DVector::from_element(3, 1.0)).norm() < 1e-14);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let file = SystemFile {
            n: 2,
            m: 1,
            a: vec![vec![-1.0, 0.0], vec![0.0]],
            b: vec![vec![1.0], vec![0.0]],
            v: None,
            q: None,
            r: None,
            x0: None,
        };
        assert!(matches!(file.system(), Err(Failure::Usage(_))));
    }

    #[test]
    fn matrix_csv_round_trips_exactly() {
        let m = DMatrix::from_row_slice(
            2,
            3,
            &[0.1, -1.0 / 3.0, 1e-300, 2.5e17, -0.0, std::f64::consts::PI],
        );
        let dir = tmp();
        let path = dir.path().join("g.csv");
        write_matrix_csv(&path, &m).unwrap();
        assert_eq!(read_matrix_csv(&path).unwrap(), m);
    }

    #[test]
    fn trajectory_csv_layout() {
        let sys = LtiSystem::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 1.0),
            None,
        )
        .unwrap();
        let grid = TimeGrid::uniform(0.5, 2, 2).unwrap();
        let u = SignalGenerator::constant(1, 0, 1.0, [0.0, 10.0]);
        let rec = simulate(&sys, &u, &DVector::from_element(1, 1.0), &grid).unwrap();
        let dir = tmp();
        let path = dir.path().join("traj.csv");
        write_trajectory_csv(&path, &rec).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x1,u1");
        assert_eq!(lines.len(), 1 + 5);
        let last: Vec<f64> = lines[5].split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(last[0], 1.0);
        assert_eq!(last[1], rec.states()[(0, 4)]);
        assert_eq!(last[2], 1.0);
    }

    #[test]
    fn projection_round_trip() {
        let p = ProjectionMatrix::new(
            DMatrix::from_row_slice(
                1,
                2,
                &[
                    std::f64::consts::FRAC_1_SQRT_2,
                    -std::f64::consts::FRAC_1_SQRT_2,
                ],
            ),
            Some(DVector::from_element(2, 1.0)),
            vec![2.0, 0.5],
        )
        .unwrap();
        let file = ProjectionFile::from_projection(&p);
        let text = serde_json::to_string(&file).unwrap();
        let back: ProjectionFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.projection().unwrap(), p);
    }

    #[test]
    fn non_finite_costs_survive_json() {
        let report = CostReportFile {
            j: f64::INFINITY,
            j_opt: 1.0,
            j_hat: 1.0,
            epsilon: 0.0,
            epsilon_hat: None,
            small_gain_margin: f64::INFINITY,
            certified: false,
            gamma: f64::INFINITY,
            closed_loop_spectrum: vec![[0.5, -1.0]],
            open_loop_spectrum: vec![],
        };
        let text = serde_json::to_string(&report).unwrap();
        assert!(text.contains("\"J\":\"inf\""));
        assert!(text.contains("[0.5,-1.0]"));
        let back: CostReportFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back, report);
    }
}

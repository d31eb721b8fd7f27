//! File formats shared by the command-line pipeline: model JSON, record CSV
//! with a metadata sidecar, estimate/projection/metrics sidecars and
//! plot-ready CSVs.

use std::fs;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Quadrature, QuantumRealization, StateSpace};
use crate::numerics::Mat;
use crate::projection::{GammaStep, ProjectionResult};
use crate::simulate::{InputSignal, MeasurementRecord};
use crate::subspace::ClassicalEstimate;
use crate::validation::{Autocorrelation, PredictorModel, ResidualSet};

/// Row-major nested arrays.
pub fn mat_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn mat_from_rows_checked(name: &str, rows: &[Vec<f64>]) -> Result<Mat> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch(format!("{name} has ragged rows")));
    }
    Ok(Mat::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Shared model document `{n, m, A, B, C, D, Z?, Q?, L?}`: `n` modes
/// (state dimension 2n), `m` field channels (2m input quadratures).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub d: Vec<Vec<f64>>,
    #[serde(rename = "Z", default, skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<Vec<f64>>>,
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub l: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrature: Option<Quadrature>,
}

impl ModelFile {
    pub fn from_state_space(sys: &StateSpace) -> Self {
        ModelFile {
            n: sys.a.nrows() / 2,
            m: sys.b.ncols() / 2,
            a: mat_to_rows(&sys.a),
            b: mat_to_rows(&sys.b),
            c: mat_to_rows(&sys.c),
            d: mat_to_rows(&sys.d),
            z: None,
            q: None,
            l: None,
            quadrature: sys.quadrature,
        }
    }

    pub fn from_realization(r: &QuantumRealization) -> Self {
        ModelFile {
            z: Some(mat_to_rows(&r.z)),
            q: Some(mat_to_rows(&r.q)),
            l: Some(mat_to_rows(&r.l)),
            ..Self::from_state_space(&r.sys)
        }
    }

    pub fn from_estimate(e: &ClassicalEstimate) -> Self {
        ModelFile {
            n: e.order,
            m: e.d_meas.ncols() / 2,
            a: mat_to_rows(&e.a_hat),
            b: mat_to_rows(&e.b_hat),
            c: mat_to_rows(&e.c_hat),
            d: mat_to_rows(&e.d_meas),
            z: None,
            q: None,
            l: Some(mat_to_rows(&e.l_hat)),
            quadrature: Some(e.quadrature),
        }
    }

    pub fn state_space(&self) -> Result<StateSpace> {
        let sys = StateSpace::new(
            mat_from_rows_checked("A", &self.a)?,
            mat_from_rows_checked("B", &self.b)?,
            mat_from_rows_checked("C", &self.c)?,
            mat_from_rows_checked("D", &self.d)?,
            self.quadrature,
        )?;
        if sys.a.nrows() != 2 * self.n || sys.b.ncols() != 2 * self.m {
            return Err(Error::DimensionMismatch(format!(
                "declared n = {}, m = {} but A is {}×{} and B has {} columns",
                self.n,
                self.m,
                sys.a.nrows(),
                sys.a.ncols(),
                sys.b.ncols()
            )));
        }
        Ok(sys)
    }

    pub fn realization(&self) -> Result<QuantumRealization> {
        let need = |name: &str, v: &Option<Vec<Vec<f64>>>| -> Result<Mat> {
            v.as_ref()
                .ok_or_else(|| Error::MissingArtifacts(format!("model has no {name}")))
                .and_then(|rows| mat_from_rows_checked(name, rows))
        };
        let r = QuantumRealization { sys: self.state_space()?, z: need("Z", &self.z)?, q: need("Q", &self.q)?, l: need("L", &self.l)? };
        r.check_shapes()?;
        Ok(r)
    }

    /// Predictor with the stored gain, or zero gain when `L` is absent.
    pub fn predictor(&self) -> Result<PredictorModel> {
        let sys = self.state_space()?;
        let l = match &self.l {
            Some(rows) => mat_from_rows_checked("L", rows)?,
            None => Mat::zeros(sys.a.nrows(), sys.c.nrows()),
        };
        PredictorModel::new(sys.a, sys.b, sys.c, sys.d, l)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_json()?.as_bytes()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifacts(path.display().to_string()),
        _ => Error::Io(e),
    })?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_model(path: &Path, model: &ModelFile) -> Result<()> {
    write_json(path, model)
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    read_json(path)
}

/// Record metadata sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub quadrature: Quadrature,
    #[serde(rename = "Ts")]
    pub ts: f64,
    #[serde(rename = "Omega")]
    pub omega: f64,
    pub seed: u64,
    pub model_hash: String,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Csv(e)
}

/// Write `t, a1..a{2m}, ydot1..ydot{m}` with 17 significant digits.
pub fn write_record_csv(path: &Path, rec: &MeasurementRecord) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let na = rec.inputs.channels();
    let mut header = vec!["t".to_string()];
    header.extend((1..=na).map(|i| format!("a{i}")));
    header.extend((1..=rec.outputs()).map(|i| format!("ydot{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for k in 0..rec.len() {
        let t = rec.t0 + k as f64 * rec.ts;
        let row = std::iter::once(t)
            .chain(rec.inputs.samples.row(k).iter().copied())
            .chain(rec.ydot.row(k).iter().copied())
            .map(|v| format!("{v:.16e}"))
            .collect::<Vec<_>>();
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a record CSV; sampling time, seed, amplitude and quadrature come
/// from the sidecar.
pub fn read_record_csv(path: &Path, meta: &RecordMeta) -> Result<MeasurementRecord> {
    if !path.exists() {
        return Err(Error::MissingArtifacts(path.display().to_string()));
    }
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    let na = header.iter().filter(|h| h.starts_with('a')).count();
    let ny = header.iter().filter(|h| h.starts_with("ydot")).count();
    if header.len() != 1 + na + ny || header.get(0) != Some("t") {
        return Err(Error::Config(format!("{}: unexpected header", path.display())));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let row = rec
            .iter()
            .map(|v| v.trim().parse::<f64>().map_err(|e| Error::Config(format!("{}: {e}", path.display()))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    let t0 = rows.first().map_or(0.0, |r| r[0]);
    let samples = Mat::from_fn(n, na, |i, j| rows[i][1 + j]);
    let ydot = Mat::from_fn(n, ny, |i, j| rows[i][1 + na + j]);
    let inputs = InputSignal { samples, ts: meta.ts, omega: meta.omega, seed: meta.seed };
    MeasurementRecord::new(meta.quadrature, inputs, ydot, meta.seed, t0)
}

pub fn record_meta_path(csv_path: &Path) -> std::path::PathBuf {
    csv_path.with_extension("json")
}

pub fn write_record(path: &Path, rec: &MeasurementRecord, model_hash: &str) -> Result<()> {
    write_record_csv(path, rec)?;
    let meta = RecordMeta { quadrature: rec.quadrature, ts: rec.ts, omega: rec.inputs.omega, seed: rec.seed, model_hash: model_hash.into() };
    write_json(&record_meta_path(path), &meta)
}

pub fn read_record(path: &Path) -> Result<(MeasurementRecord, RecordMeta)> {
    let meta: RecordMeta = read_json(&record_meta_path(path))?;
    Ok((read_record_csv(path, &meta)?, meta))
}

/// Sidecar of a classical estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateMeta {
    pub sing_values: Vec<f64>,
    pub innov_cov: Vec<Vec<f64>>,
    pub order: usize,
    pub relative_energy: Vec<f64>,
    pub stable: bool,
}

impl EstimateMeta {
    pub fn new(e: &ClassicalEstimate) -> Self {
        EstimateMeta {
            sing_values: e.sing_values.clone(),
            innov_cov: mat_to_rows(&e.innov_cov),
            order: e.order,
            relative_energy: crate::subspace::relative_energy(&e.sing_values),
            stable: e.is_stable(),
        }
    }
}

/// Sidecar of a projection result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionMeta {
    pub gamma_final: f64,
    pub loss: f64,
    /// Realizability residuals `[r1, r2]` of the emitted model.
    pub residuals: [f64; 2],
    pub iterations: usize,
    pub solver: String,
    pub scale: f64,
    pub det_z: f64,
    pub gamma_trace: Vec<GammaStep>,
}

impl ProjectionMeta {
    pub fn new(res: &ProjectionResult, emitted: &QuantumRealization) -> Result<Self> {
        let (r1, r2) = emitted.residuals()?;
        Ok(ProjectionMeta {
            gamma_final: res.gamma_final,
            loss: res.loss,
            residuals: [r1, r2],
            iterations: res.iterations,
            solver: res.solver.as_str().into(),
            scale: res.scale,
            det_z: emitted.z.determinant(),
            gamma_trace: res.gamma_trace.clone(),
        })
    }
}

/// One row of the results table, per (quadrature, Ω, n, seed, solver).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub fpe: f64,
    pub fit: Vec<f64>,
    pub gamma: f64,
    pub relative_energy: Vec<f64>,
    pub autocorr_inside: Vec<f64>,
    pub crosscorr_inside: Vec<f64>,
    pub max_abs_gain: f64,
}

/// `lag, rho1..rho{m}, bound`.
pub fn write_autocorr_csv(path: &Path, ac: &Autocorrelation) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let m = ac.values.len();
    let mut header = vec!["lag".to_string()];
    header.extend((1..=m).map(|i| format!("rho{i}")));
    header.push("bound".into());
    w.write_record(&header).map_err(csv_err)?;
    let lags = ac.values.first().map_or(0, Vec::len);
    for tau in 0..lags {
        let mut row = vec![tau.to_string()];
        row.extend(ac.values.iter().map(|v| format!("{:.16e}", v[tau])));
        row.push(format!("{:.16e}", ac.bound));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `t, ydot1..ydot{m}, pred1..pred{m}` over the first `limit` samples.
pub fn write_prediction_csv(path: &Path, rec: &MeasurementRecord, res: &ResidualSet, limit: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let m = rec.outputs();
    let mut header = vec!["t".to_string()];
    header.extend((1..=m).map(|i| format!("ydot{i}")));
    header.extend((1..=m).map(|i| format!("pred{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for k in 0..rec.len().min(limit) {
        let row = std::iter::once(rec.t0 + k as f64 * rec.ts)
            .chain(rec.ydot.row(k).iter().copied())
            .chain(res.predictions.row(k).iter().copied())
            .map(|v| format!("{v:.16e}"))
            .collect::<Vec<_>>();
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Minimal static line chart: one polyline per series over a shared x axis,
/// plus optional horizontal guide lines.
pub fn write_svg_chart(path: &Path, title: &str, x: &[f64], series: &[(&str, Vec<f64>)], guides: &[f64]) -> Result<()> {
    const W: f64 = 640.0;
    const H: f64 = 360.0;
    const PAD: f64 = 40.0;
    const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let (xmin, xmax) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let (ymin, ymax) = series
        .iter()
        .flat_map(|(_, v)| v.iter())
        .chain(guides)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let sx = |v: f64| PAD + (v - xmin) / (xmax - xmin).max(f64::MIN_POSITIVE) * (W - 2.0 * PAD);
    let sy = |v: f64| H - PAD - (v - ymin) / (ymax - ymin).max(f64::MIN_POSITIVE) * (H - 2.0 * PAD);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{PAD}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n\
         <rect x=\"{PAD}\" y=\"{PAD}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#999\"/>\n",
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    for g in guides {
        let y = sy(*g);
        s += &format!("<line x1=\"{PAD}\" x2=\"{}\" y1=\"{y:.2}\" y2=\"{y:.2}\" stroke=\"#4a90d9\" stroke-dasharray=\"4 3\"/>\n", W - PAD);
    }
    for (k, (name, v)) in series.iter().enumerate() {
        let pts: Vec<String> = x.iter().zip(v).map(|(a, b)| format!("{:.2},{:.2}", sx(*a), sy(*b))).collect();
        let colour = COLOURS[k % COLOURS.len()];
        s += &format!("<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.2\" points=\"{}\"><title>{name}</title></polyline>\n", pts.join(" "));
    }
    s += "</svg>\n";
    fs::write(path, s)?;
    Ok(())
}

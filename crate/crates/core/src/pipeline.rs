//! Configuration-driven experiment: simulate records, identify classical and
//! quantum models, validate them and aggregate the results into tables.
//!
//! Artifacts live under the configured output directory:
//!
//! ```text
//! system.json
//! records/{q}_omega{Ω}_seed{s}.csv + .json
//! models/{stem}_n{n}_classical.json + _classical_meta.json
//! models/{stem}_n{n}_{solver}.json + _{solver}_meta.json
//! metrics/{stem}_n{n}_{solver}.json, _autocorr.csv, _prediction.csv
//! table_{q}_{solver}.md + .csv
//! ```

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, EstimateMeta, Metrics, ModelFile, ProjectionMeta};
use crate::model::{build_cavity, CavityParams, Quadrature, StateSpace};
use crate::projection::{project, to_canonical, BisectionOptions, Conditioning, ProjectionTarget, Solver, ZInit};
use crate::simulate::{generate_prbs, simulate_homodyne, split_record, MeasurementRecord};
use crate::subspace::{n4sid_estimate, HankelConfig};
use crate::validation::{autocorr, cross_corr, fit_percent, fpe, fraction_inside, predict, FitReference, PredictOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    Cavity(CavityParams),
    /// Full (both-quadrature) model JSON.
    Path(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Durations {
    pub burn: f64,
    pub est: f64,
    pub val: f64,
}

/// Unit of the configured input amplitudes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaUnit {
    /// Amplitude is `value / √Ts`.
    #[default]
    InvSqrtTs,
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    #[default]
    Lifted,
    Reduced,
    Both,
}

impl SolverChoice {
    pub fn solvers(self) -> Vec<Solver> {
        match self {
            SolverChoice::Lifted => vec![Solver::Lifted],
            SolverChoice::Reduced => vec![Solver::Reduced],
            SolverChoice::Both => vec![Solver::Lifted, Solver::Reduced],
        }
    }
}

impl std::str::FromStr for SolverChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lifted" => Ok(SolverChoice::Lifted),
            "reduced" => Ok(SolverChoice::Reduced),
            "both" => Ok(SolverChoice::Both),
            _ => Err(Error::Config(format!("unknown solver '{s}'"))),
        }
    }
}

/// Initial loss bound for the lifted bisection.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gamma0Policy {
    /// Twice the reduced solver's loss.
    #[default]
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub model: ModelSource,
    pub quadratures: Vec<Quadrature>,
    #[serde(rename = "Ts")]
    pub ts: f64,
    /// Simulated record length in seconds.
    pub total: f64,
    pub durations: Durations,
    pub omegas: Vec<f64>,
    pub omega_unit: OmegaUnit,
    pub orders: Vec<usize>,
    pub seeds: Vec<u64>,
    pub solver: SolverChoice,
    pub gamma0: Gamma0Policy,
    pub epsilon: f64,
    pub rounds: usize,
    /// Lifted solver starting point.
    pub warm_start: ZInit,
    pub conditioning: Conditioning,
    pub block_rows: usize,
    pub max_lag: usize,
    /// Samples written to each prediction-overlay CSV.
    pub prediction_samples: usize,
    pub svg: bool,
    pub out: PathBuf,
    /// Worker threads for identification; 0 uses every available core.
    pub threads: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            model: ModelSource::Cavity(CavityParams::reference()),
            quadratures: vec![Quadrature::Q, Quadrature::P],
            ts: 0.01,
            total: 80.0,
            durations: Durations { burn: 20.0, est: 30.0, val: 30.0 },
            omegas: vec![10.0, 50.0, 100.0],
            omega_unit: OmegaUnit::InvSqrtTs,
            orders: vec![1, 2, 3],
            seeds: vec![1],
            solver: SolverChoice::Lifted,
            gamma0: Gamma0Policy::Auto,
            epsilon: 1e-3,
            rounds: 25,
            warm_start: ZInit::Reduced,
            conditioning: Conditioning::Balanced,
            block_rows: HankelConfig::default().block_rows,
            max_lag: 50,
            prediction_samples: 100,
            svg: false,
            out: PathBuf::from("out"),
            threads: 0,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return bad("Ts must be positive");
        }
        let d = self.durations;
        if ![d.burn, d.est, d.val, self.total].iter().all(|t| *t > 0.0 && t.is_finite()) {
            return bad("all durations must be positive");
        }
        if self.total + 1e-9 < d.burn + d.est + d.val {
            return bad("total duration is shorter than burn + est + val");
        }
        if self.orders.is_empty() || self.orders.contains(&0) {
            return bad("orders must be non-empty and at least 1");
        }
        if self.omegas.is_empty() || !self.omegas.iter().all(|w| *w > 0.0 && w.is_finite()) {
            return bad("omegas must be non-empty and positive");
        }
        if self.seeds.is_empty() {
            return bad("seeds must be non-empty");
        }
        if self.quadratures.is_empty() {
            return bad("quadratures must be non-empty");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if let Gamma0Policy::Fixed(g) = self.gamma0 {
            if !(g > 0.0) {
                return bad("fixed gamma0 must be positive");
            }
        }
        if self.block_rows == 0 || self.max_lag == 0 {
            return bad("block_rows and max_lag must be at least 1");
        }
        Ok(())
    }

    /// Input amplitude for a configured Ω value.
    pub fn amplitude(&self, omega: f64) -> f64 {
        match self.omega_unit {
            OmegaUnit::InvSqrtTs => omega / self.ts.sqrt(),
            OmegaUnit::Absolute => omega,
        }
    }

    pub fn omega_label(&self, omega: f64) -> String {
        match self.omega_unit {
            OmegaUnit::InvSqrtTs => format!("{omega}/√Ts"),
            OmegaUnit::Absolute => format!("{omega}"),
        }
    }

    pub fn bisection_options(&self) -> BisectionOptions {
        let mut opts = BisectionOptions { epsilon: self.epsilon, rounds: self.rounds, z_init: self.warm_start, ..Default::default() };
        opts.gamma0 = match self.gamma0 {
            Gamma0Policy::Auto => None,
            Gamma0Policy::Fixed(g) => Some(g),
        };
        opts.reduced.margin = self.epsilon / 2.0;
        opts
    }

    pub fn hankel(&self) -> HankelConfig {
        HankelConfig { block_rows: self.block_rows, ..Default::default() }
    }

    fn dir(&self, sub: &str) -> PathBuf {
        self.out.join(sub)
    }

    /// Every `(quadrature, Ω, seed)` record in configuration order.
    pub fn records(&self) -> Vec<RecordKey> {
        let mut keys = Vec::new();
        for &q in &self.quadratures {
            for &omega in &self.omegas {
                for &seed in &self.seeds {
                    keys.push(RecordKey { quadrature: q, omega, seed });
                }
            }
        }
        keys
    }

    pub fn record_path(&self, stem: &str) -> PathBuf {
        self.dir("records").join(format!("{stem}.csv"))
    }

    pub fn classical_path(&self, stem: &str, n: usize) -> PathBuf {
        self.dir("models").join(format!("{stem}_n{n}_classical.json"))
    }

    pub fn quantum_path(&self, stem: &str, n: usize, solver: Solver) -> PathBuf {
        self.dir("models").join(format!("{stem}_n{n}_{}.json", solver.as_str()))
    }

    /// Marker left when the classical estimate of an item failed.
    pub fn failure_path(&self, stem: &str, n: usize) -> PathBuf {
        self.dir("models").join(format!("{stem}_n{n}_failed.json"))
    }

    /// Whether identification of an item has run, successfully or not.
    pub fn attempted(&self, stem: &str, n: usize) -> bool {
        self.classical_path(stem, n).exists() || self.failure_path(stem, n).exists()
    }

    pub fn metrics_path(&self, stem: &str, n: usize, solver: Solver) -> PathBuf {
        self.dir("metrics").join(format!("{stem}_n{n}_{}.json", solver.as_str()))
    }

    fn thread_count(&self) -> usize {
        match self.threads {
            0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
            t => t,
        }
    }
}

/// `foo.json` → `foo_{suffix}.{ext}`.
pub fn sibling(path: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("artifact");
    path.with_file_name(format!("{stem}_{suffix}.{ext}"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordKey {
    pub quadrature: Quadrature,
    pub omega: f64,
    pub seed: u64,
}

impl RecordKey {
    pub fn stem(&self) -> String {
        format!("{}_omega{}_seed{}", self.quadrature, self.omega, self.seed)
    }

    /// Seed driving the simulation: the configured seed for `q`, an
    /// offset one for `p` so the two quadratures see independent runs.
    pub fn simulation_seed(&self) -> u64 {
        match self.quadrature {
            Quadrature::Q => self.seed,
            Quadrature::P => self.seed ^ 0x9e37_79b9_7f4a_7c15,
        }
    }
}

/// A failed item that did not stop the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub item: String,
    pub kind: String,
    pub message: String,
}

impl Failure {
    fn new(item: impl Into<String>, e: &Error) -> Self {
        Failure { item: item.into(), kind: e.kind().into(), message: e.to_string() }
    }
}

/// Files written and numerical failures collected by a command.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub written: Vec<PathBuf>,
    pub failures: Vec<Failure>,
}

impl Report {
    fn merge(&mut self, other: Report) {
        self.written.extend(other.written);
        self.failures.extend(other.failures);
    }
}

/// Apply `f` to every item on up to `threads` workers; results keep the
/// input order.
fn par_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads.max(1).min(items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("worker result")).collect()
}

/// The full two-quadrature system the records are generated from.
pub fn source_system(cfg: &PipelineConfig) -> Result<StateSpace> {
    match &cfg.model {
        ModelSource::Cavity(p) => build_cavity(p),
        ModelSource::Path(path) => {
            let sys = io::read_model(path)?.state_space()?;
            if sys.outputs() != sys.b.ncols() {
                return Err(Error::Config(format!("{}: expected a full model with D square", path.display())));
            }
            Ok(sys)
        }
    }
}

/// One record CSV and sidecar per `(quadrature, Ω, seed)`.
pub fn cmd_simulate(cfg: &PipelineConfig) -> Result<Report> {
    cfg.validate()?;
    let sys = source_system(cfg)?;
    let model = ModelFile::from_state_space(&sys);
    let hash = model.hash()?;
    let mut report = Report::default();
    let sys_path = cfg.out.join("system.json");
    io::write_model(&sys_path, &model)?;
    report.written.push(sys_path);
    for key in cfg.records() {
        let u = generate_prbs(sys.b.ncols(), cfg.ts, cfg.total, cfg.amplitude(key.omega), key.simulation_seed())?;
        let rec = simulate_homodyne(&sys, key.quadrature, &u, key.simulation_seed(), None)?;
        let path = cfg.record_path(&key.stem());
        io::write_record(&path, &rec, &hash)?;
        report.written.push(io::record_meta_path(&path));
        report.written.push(path);
    }
    Ok(report)
}

/// Estimation and validation slices of a stored record.
pub fn load_split(cfg: &PipelineConfig, path: &Path) -> Result<(MeasurementRecord, MeasurementRecord)> {
    let (rec, _) = io::read_record(path)?;
    let d = cfg.durations;
    let (est, val) = split_record(&rec, d.burn, d.est, d.val)?;
    if val.is_empty() {
        return Err(Error::InsufficientData("validation slice is empty".into()));
    }
    Ok((est, val))
}

/// Cross-check of the two solvers on one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    pub lifted_gamma: f64,
    pub reduced_loss: f64,
    /// Lifted γ is within 1.5× the reduced loss.
    pub agree: bool,
}

/// Identify one order from one record: classical estimate, then one
/// projected canonical model per solver.
/// Numerical failures are recorded in the report; anything else aborts.
pub fn identify_one(cfg: &PipelineConfig, stem: &str, n: usize, est: &MeasurementRecord, d_meas: &crate::numerics::Mat) -> Result<Report> {
    let mut report = Report::default();
    let item = format!("{stem}_n{n}");
    let run = |report: &mut Report| -> Result<()> {
        let e = n4sid_estimate(est, n, d_meas, &cfg.hankel())?;
        let path = cfg.classical_path(stem, n);
        io::write_model(&path, &ModelFile::from_estimate(&e))?;
        let meta = sibling(&path, "meta", "json");
        io::write_json(&meta, &EstimateMeta::new(&e))?;
        report.written.extend([path, meta]);
        e.require_stable()?;
        let target = ProjectionTarget::from(&e);
        let opts = cfg.bisection_options();
        let mut gammas = Vec::new();
        for solver in cfg.solver.solvers() {
            let label = format!("{item}_{}", solver.as_str());
            let res = project(&target, cfg.conditioning, solver, &opts).and_then(|res| {
                let canonical = to_canonical(&res.realization)?;
                Ok((res, canonical))
            });
            match res {
                Ok((res, canonical)) => {
                    let path = cfg.quantum_path(stem, n, solver);
                    io::write_model(&path, &ModelFile::from_realization(&canonical))?;
                    let meta = sibling(&path, "meta", "json");
                    io::write_json(&meta, &ProjectionMeta::new(&res, &canonical)?)?;
                    report.written.extend([path, meta]);
                    gammas.push((solver, res.gamma_final));
                }
                Err(e) if recoverable(&e) => report.failures.push(Failure::new(label, &e)),
                Err(e) => return Err(e),
            }
        }
        if let [(Solver::Lifted, lifted), (Solver::Reduced, reduced)] = gammas[..] {
            let path = cfg.dir("models").join(format!("{item}_crosscheck.json"));
            io::write_json(&path, &CrossCheck { lifted_gamma: lifted, reduced_loss: reduced, agree: lifted <= 1.5 * reduced })?;
            report.written.push(path);
        }
        Ok(())
    };
    let marker = cfg.failure_path(stem, n);
    if marker.exists() {
        std::fs::remove_file(&marker)?;
    }
    match run(&mut report) {
        Err(e) if recoverable(&e) => {
            let failure = Failure::new(item, &e);
            if !cfg.classical_path(stem, n).exists() {
                io::write_json(&marker, &failure)?;
                report.written.push(marker);
            }
            report.failures.push(failure);
        }
        Err(e) => return Err(e),
        Ok(()) => {}
    }
    Ok(report)
}

/// Identify every configured order from every configured record.
pub fn cmd_identify(cfg: &PipelineConfig) -> Result<Report> {
    cfg.validate()?;
    let sys = source_system(cfg)?;
    let mut jobs = Vec::new();
    for key in cfg.records() {
        let stem = key.stem();
        let (est, _) = load_split(cfg, &cfg.record_path(&stem))?;
        let d_meas = sys.measured(key.quadrature)?.d;
        for &n in &cfg.orders {
            jobs.push((stem.clone(), n, est.clone(), d_meas.clone()));
        }
    }
    identify_jobs(cfg, &jobs)
}

/// Identify every configured order from explicitly named record files;
/// outputs are named after the record file stem.
pub fn cmd_identify_records(cfg: &PipelineConfig, records: &[PathBuf]) -> Result<Report> {
    cfg.validate()?;
    let sys = source_system(cfg)?;
    let mut jobs = Vec::new();
    for path in records {
        let (_, meta) = io::read_record(path)?;
        let (est, _) = load_split(cfg, path)?;
        let d_meas = sys.measured(meta.quadrature)?.d;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("record").to_string();
        for &n in &cfg.orders {
            jobs.push((stem.clone(), n, est.clone(), d_meas.clone()));
        }
    }
    identify_jobs(cfg, &jobs)
}

fn identify_jobs(cfg: &PipelineConfig, jobs: &[(String, usize, MeasurementRecord, crate::numerics::Mat)]) -> Result<Report> {
    let reports = par_map(jobs, cfg.thread_count(), |(stem, n, est, d)| identify_one(cfg, stem, *n, est, d));
    let mut report = Report::default();
    for r in reports {
        report.merge(r?);
    }
    Ok(report)
}

/// Failures of a single item that should not stop a batch run.
fn recoverable(e: &Error) -> bool {
    e.is_numerical() || matches!(e, Error::DegenerateN { .. } | Error::ZeroVarianceChannel(_) | Error::NotSkew { .. })
}

/// Metrics of one model on one validation slice, plus the residuals.
pub fn evaluate(model: &ModelFile, val: &MeasurementRecord, max_lag: usize) -> Result<(Metrics, crate::validation::ResidualSet)> {
    let pm = model.predictor()?;
    let res = predict(&pm, val, &PredictOptions::default())?;
    let fit = fit_percent(&res, val, &pm.d, FitReference::FeedthroughRemoved)?;
    let ac = autocorr(&res, max_lag)?;
    let cc = cross_corr(&res, &val.inputs, max_lag)?;
    let metrics = Metrics {
        fpe: fpe(&res)?,
        fit,
        gamma: f64::NAN,
        relative_energy: Vec::new(),
        autocorr_inside: ac.values.iter().map(|v| fraction_inside(&v[1..], ac.bound)).collect(),
        crosscorr_inside: cc.values.iter().map(|l| fraction_inside(l.iter().flatten(), cc.bound)).collect(),
        max_abs_gain: pm.l.amax(),
    };
    Ok((metrics, res))
}

/// Validate one model file on the validation slice of one record, writing
/// metrics JSON and plot CSVs next to `metrics_path`.
pub fn validate_one(cfg: &PipelineConfig, model_path: &Path, record_path: &Path, metrics_path: &Path) -> Result<Report> {
    let model = io::read_model(model_path)?;
    let (_, val) = load_split(cfg, record_path)?;
    let (mut metrics, res) = evaluate(&model, &val, cfg.max_lag)?;
    if let Ok(meta) = io::read_json::<ProjectionMeta>(&sibling(model_path, "meta", "json")) {
        metrics.gamma = meta.gamma_final;
    }
    let n = model.n;
    let classical = model_path.with_file_name(
        model_path
            .file_name()
            .and_then(|f| f.to_str())
            .map(|f| f.rsplit_once("_n").map_or(f.to_string(), |(head, _)| format!("{head}_n{n}_classical_meta.json")))
            .unwrap_or_default(),
    );
    if let Ok(meta) = io::read_json::<EstimateMeta>(&classical) {
        metrics.relative_energy = meta.relative_energy;
    }
    let mut report = Report::default();
    io::write_json(metrics_path, &metrics)?;
    let ac = autocorr(&res, cfg.max_lag)?;
    let ac_path = sibling(metrics_path, "autocorr", "csv");
    io::write_autocorr_csv(&ac_path, &ac)?;
    let pred_path = sibling(metrics_path, "prediction", "csv");
    io::write_prediction_csv(&pred_path, &val, &res, cfg.prediction_samples)?;
    report.written.extend([metrics_path.to_path_buf(), ac_path, pred_path]);
    if cfg.svg {
        let lags: Vec<f64> = (0..=cfg.max_lag).map(|l| l as f64).collect();
        let series: Vec<(String, Vec<f64>)> = ac.values.iter().enumerate().map(|(l, v)| (format!("e{}", l + 1), v.clone())).collect();
        let refs: Vec<(&str, Vec<f64>)> = series.iter().map(|(n, v)| (n.as_str(), v.clone())).collect();
        let path = sibling(metrics_path, "autocorr", "svg");
        io::write_svg_chart(&path, "Residual autocorrelation", &lags, &refs, &[ac.bound, -ac.bound])?;
        report.written.push(path);
        let k = val.len().min(cfg.prediction_samples);
        let t: Vec<f64> = (0..k).map(|i| val.t0 + i as f64 * val.ts).collect();
        let series: Vec<(String, Vec<f64>)> = (0..val.outputs())
            .flat_map(|l| {
                [
                    (format!("ydot{}", l + 1), val.ydot.column(l).rows(0, k).iter().copied().collect()),
                    (format!("pred{}", l + 1), res.predictions.column(l).rows(0, k).iter().copied().collect()),
                ]
            })
            .collect();
        let refs: Vec<(&str, Vec<f64>)> = series.iter().map(|(n, v)| (n.as_str(), v.clone())).collect();
        let path = sibling(metrics_path, "prediction", "svg");
        io::write_svg_chart(&path, "One-step prediction", &t, &refs, &[])?;
        report.written.push(path);
    }
    Ok(report)
}

/// Validate every identified quantum model; models whose identification
/// failed are skipped.
pub fn cmd_validate(cfg: &PipelineConfig) -> Result<Report> {
    cfg.validate()?;
    let mut report = Report::default();
    for key in cfg.records() {
        let stem = key.stem();
        let rec = cfg.record_path(&stem);
        for &n in &cfg.orders {
            for solver in cfg.solver.solvers() {
                let model = cfg.quantum_path(&stem, n, solver);
                if !model.exists() {
                    if cfg.attempted(&stem, n) {
                        continue;
                    }
                    return Err(Error::MissingArtifacts(model.display().to_string()));
                }
                match validate_one(cfg, &model, &rec, &cfg.metrics_path(&stem, n, solver)) {
                    Ok(r) => report.merge(r),
                    Err(e) if recoverable(&e) => {
                        report.failures.push(Failure::new(format!("{}_n{n}_{}_validate", key.stem(), solver.as_str()), &e))
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }
    Ok(report)
}

/// Median and interquartile range (linear interpolation between order
/// statistics).
pub fn median_iqr(values: &[f64]) -> Option<(f64, f64, f64)> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = p * (v.len() - 1) as f64;
        let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
        v[lo] + (h - lo as f64) * (v[hi] - v[lo])
    };
    Some((q(0.5), q(0.25), q(0.75)))
}

/// One aggregated table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub omega: f64,
    pub n: usize,
    pub seeds: usize,
    pub relative_energy: Option<(f64, f64, f64)>,
    pub gamma: Option<(f64, f64, f64)>,
    pub fpe: Option<(f64, f64, f64)>,
    pub fit: Vec<Option<(f64, f64, f64)>>,
}

/// Rows `(Ω, n)` for one quadrature and solver, aggregated over seeds.
pub fn table_rows(cfg: &PipelineConfig, q: Quadrature, solver: Solver) -> Result<Vec<TableRow>> {
    let mut rows = Vec::new();
    let mut any = false;
    for &omega in &cfg.omegas {
        for &n in &cfg.orders {
            let mut ms = Vec::new();
            for &seed in &cfg.seeds {
                let stem = RecordKey { quadrature: q, omega, seed }.stem();
                let path = cfg.metrics_path(&stem, n, solver);
                if path.exists() {
                    ms.push(io::read_json::<Metrics>(&path)?);
                } else if !cfg.attempted(&stem, n) {
                    return Err(Error::MissingArtifacts(path.display().to_string()));
                }
                any = true;
            }
            let col = |f: &dyn Fn(&Metrics) -> f64| median_iqr(&ms.iter().map(f).collect::<Vec<_>>());
            let channels = ms.iter().map(|m| m.fit.len()).max().unwrap_or(0);
            rows.push(TableRow {
                omega,
                n,
                seeds: ms.len(),
                relative_energy: col(&|m| m.relative_energy.get(n - 1).copied().unwrap_or(f64::NAN)),
                gamma: col(&|m| m.gamma),
                fpe: col(&|m| m.fpe),
                fit: (0..channels).map(|l| col(&|m| m.fit.get(l).copied().unwrap_or(f64::NAN))).collect(),
            });
        }
    }
    if !any {
        return Err(Error::MissingArtifacts(format!("nothing identified for {q} / {}", solver.as_str())));
    }
    Ok(rows)
}

fn cell(v: Option<(f64, f64, f64)>, scale: f64, digits: usize, iqr: bool) -> String {
    match v {
        None => "failed".into(),
        Some((m, lo, hi)) if iqr => format!("{:.*} [{:.*}, {:.*}]", digits, m / scale, digits, lo / scale, digits, hi / scale),
        Some((m, _, _)) => format!("{:.*}", digits, m / scale),
    }
}

fn gamma_cell(v: Option<(f64, f64, f64)>, iqr: bool) -> String {
    match v {
        None => "failed".into(),
        Some((m, lo, hi)) if iqr => format!("{m:.3e} [{lo:.3e}, {hi:.3e}]"),
        Some((m, _, _)) => format!("{m:.3e}"),
    }
}

/// Markdown table: one row per (Ω, n), one fit column per channel.
pub fn render_markdown(cfg: &PipelineConfig, q: Quadrature, solver: Solver, rows: &[TableRow]) -> String {
    let m = rows.iter().map(|r| r.fit.len()).max().unwrap_or(0);
    let iqr = cfg.seeds.len() > 1;
    let mut s = format!("### {q} quadrature, {} solver", solver.as_str());
    if iqr {
        s += &format!(" (median [IQR] over {} seeds)", cfg.seeds.len());
    }
    s += "\n\n| Ω | n | Relative energy | γ | FPE (×10⁶) |";
    for l in 1..=m {
        s += &format!(" Fit{l} (%) |");
    }
    s += "\n|---|---|---|---|---|";
    s += &"---|".repeat(m);
    s += "\n";
    for r in rows {
        s += &format!(
            "| {} | {} | {} | {} | {} |",
            cfg.omega_label(r.omega),
            r.n,
            cell(r.relative_energy, 1.0, 2, iqr),
            gamma_cell(r.gamma, iqr),
            cell(r.fpe, 1e6, 2, iqr)
        );
        for l in 0..m {
            s += &format!(" {} |", cell(r.fit.get(l).copied().flatten(), 1.0, 1, iqr));
        }
        s += "\n";
    }
    s
}

fn render_csv(rows: &[TableRow]) -> Result<String> {
    let m = rows.iter().map(|r| r.fit.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["omega", "n", "seeds"].map(String::from).to_vec();
    for name in ["relative_energy", "gamma", "fpe"].into_iter().map(String::from).chain((1..=m).map(|l| format!("fit{l}"))) {
        header.extend([format!("{name}_median"), format!("{name}_q1"), format!("{name}_q3")]);
    }
    w.write_record(&header)?;
    for r in rows {
        let mut row = vec![r.omega.to_string(), r.n.to_string(), r.seeds.to_string()];
        let cols = [r.relative_energy, r.gamma, r.fpe].into_iter().chain((0..m).map(|l| r.fit.get(l).copied().flatten()));
        for c in cols {
            match c {
                Some((a, b, c)) => row.extend([a, b, c].map(|v| format!("{v:.10e}"))),
                None => row.extend(["".to_string(), "".to_string(), "".to_string()]),
            }
        }
        w.write_record(&row)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).map_err(|e| Error::Config(e.to_string()))
}

/// One Markdown and one CSV table per quadrature and solver.
pub fn cmd_table(cfg: &PipelineConfig) -> Result<Report> {
    cfg.validate()?;
    let mut report = Report::default();
    for &q in &cfg.quadratures {
        for solver in cfg.solver.solvers() {
            let rows = table_rows(cfg, q, solver)?;
            let md = cfg.out.join(format!("table_{q}_{}.md", solver.as_str()));
            std::fs::write(&md, render_markdown(cfg, q, solver, &rows))?;
            let csv_path = md.with_extension("csv");
            std::fs::write(&csv_path, render_csv(&rows)?)?;
            report.written.extend([md, csv_path]);
        }
    }
    Ok(report)
}

/// Simulate, identify, validate and tabulate.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Report> {
    let mut report = cmd_simulate(cfg)?;
    report.merge(cmd_identify(cfg)?);
    report.merge(cmd_validate(cfg)?);
    report.merge(cmd_table(cfg)?);
    Ok(report)
}


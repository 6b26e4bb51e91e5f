//! Run configuration, CSV tables, manifests, SVG plots and binary field
//! dumps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::asymptotics::{GridPolicy, LThresholds, SweepConfig, SweepRecord};
use crate::gpe::{ProblemSpec, SolverOptions, TrapSpec};
use crate::grid::{Grid2D, GridError, GridSpec, ScalarField};
use crate::townes::TownesOptions;
use crate::trial::{UnboundedSetup, UpperBoundOptions};

pub const MANIFEST_SCHEMA: &str = "blowup-manifest/1";
pub const FIELD_SCHEMA: &str = "blowup-field/1";
pub const SWEEP_SCHEMA: &str = "blowup-sweep/1";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Grid(#[from] GridError),
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File { path: path.to_path_buf(), source }
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(file_err(path))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(file_err(dir))?;
    }
    fs::write(path, bytes).map_err(file_err(path))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Couplings are given in units of `a*` throughout the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub a1: f64,
    pub a2: f64,
    pub beta: f64,
    pub trap1: TrapSpec,
    pub trap2: TrapSpec,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            a1: 0.99,
            a2: 0.99,
            beta: 1.0,
            trap1: TrapSpec::harmonic([-1.0, 0.0]),
            trap2: TrapSpec::harmonic([1.0, 0.0]),
        }
    }
}

impl ProblemConfig {
    pub fn resolve(&self, a_star: f64) -> ProblemSpec {
        ProblemSpec { a1: self.a1 * a_star, a2: self.a2 * a_star, beta: self.beta, trap1: self.trap1, trap2: self.trap2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    /// Explicit `(a1, a2)` pairs in units of `a*`.
    List { fractions: Vec<[f64; 2]> },
    /// Equal couplings `1 - first_gap·ratio^k`, `k = 0..count`.
    Geometric { first_gap: f64, ratio: f64, count: usize },
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self::List { fractions: [0.90, 0.95, 0.98, 0.99, 0.995].iter().map(|&f| [f, f]).collect() }
    }
}

impl ScheduleSpec {
    pub fn fractions(&self) -> Vec<[f64; 2]> {
        match self {
            Self::List { fractions } => fractions.clone(),
            Self::Geometric { first_gap, ratio, count } => {
                (0..*count).map(|k| 1.0 - first_gap * ratio.powi(k as i32)).map(|f| [f, f]).collect()
            }
        }
    }

    pub fn resolve(&self, a_star: f64) -> Vec<(f64, f64)> {
        self.fractions().iter().map(|f| (f[0] * a_star, f[1] * a_star)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Number of trailing schedule points in the power-law fit.
    pub fit_window: usize,
    pub drift_bound: f64,
    pub distance_bound: f64,
    pub peak_ratio_bound: f64,
    pub sandwich_k: f64,
    pub l_thresholds: LThresholds,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            fit_window: 4,
            drift_bound: 10.0,
            distance_bound: 0.05,
            peak_ratio_bound: 0.5,
            sandwich_k: 0.1,
            l_thresholds: LThresholds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantsConfig {
    pub p_list: Vec<f64>,
    /// Grid for the two-dimensional Gagliardo–Nirenberg check.
    pub gn_grid: GridSpec,
}

impl Default for ConstantsConfig {
    fn default() -> Self {
        Self { p_list: vec![1.0, 2.0, 3.0], gn_grid: GridSpec::new(12.0, 256) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnboundedConfig {
    /// In units of `a*`; must exceed 1.
    pub a1: f64,
    pub grid: GridSpec,
    pub setup: UnboundedSetup,
}

impl Default for UnboundedConfig {
    fn default() -> Self {
        Self { a1: 1.1, grid: GridSpec::new(3.0, 1024), setup: UnboundedSetup::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialConfig {
    /// Equal couplings in units of `a*`.
    pub fractions: Vec<f64>,
    pub p: f64,
    pub beta: f64,
    pub x0: [f64; 2],
    pub grid: GridSpec,
    pub options: UpperBoundOptions,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            fractions: vec![0.97, 0.98, 0.99, 0.995],
            p: 2.0,
            beta: 1.0,
            x0: [0.0, 0.0],
            grid: GridSpec::new(18.0, 512),
            options: UpperBoundOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LemmaAConfig {
    pub kappas: Vec<f64>,
    pub ms: Vec<f64>,
    pub ps: Vec<f64>,
    /// Couplings in units of `a*`.
    pub a_fractions: Vec<f64>,
}

impl Default for LemmaAConfig {
    fn default() -> Self {
        Self {
            kappas: vec![1e5, 1e6, 1e7],
            ms: vec![1.0, 10.0, 100.0],
            ps: vec![1.0, 2.0, 3.0],
            a_fractions: vec![0.99, 0.999],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub out: PathBuf,
    /// Profile JSON written by `townes`; defaults to `<out>/townes.json`.
    pub q_reference: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { out: PathBuf::from("out"), q_reference: None }
    }
}

impl PathsConfig {
    pub fn q_reference(&self) -> PathBuf {
        self.q_reference.clone().unwrap_or_else(|| self.out.join("townes.json"))
    }
}

/// Everything a run needs. Unspecified sections take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridPolicy,
    pub solver: SolverOptions,
    pub townes: TownesOptions,
    pub problem: ProblemConfig,
    pub schedule: ScheduleSpec,
    pub analysis: AnalysisConfig,
    pub constants: ConstantsConfig,
    pub unbounded: UnboundedConfig,
    pub trial: TrialConfig,
    pub lemma_a: LemmaAConfig,
    pub paths: PathsConfig,
    /// Worker threads for independent points; `0` uses every core.
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid: GridPolicy::default(),
            solver: SolverOptions::default(),
            townes: TownesOptions::default(),
            problem: ProblemConfig::default(),
            schedule: ScheduleSpec::default(),
            analysis: AnalysisConfig::default(),
            constants: ConstantsConfig::default(),
            unbounded: UnboundedConfig::default(),
            trial: TrialConfig::default(),
            lemma_a: LemmaAConfig::default(),
            paths: PathsConfig::default(),
            jobs: 0,
        }
    }
}

fn invalid(msg: impl Into<String>) -> IoError {
    IoError::Config(msg.into())
}

fn check_fraction(name: &str, f: f64) -> Result<(), IoError> {
    if !(f.is_finite() && (0.0..1.0).contains(&f)) {
        return Err(invalid(format!("{name} = {f} must lie in [0, 1) (units of a*)")));
    }
    Ok(())
}

fn check_positive(name: &str, values: &[f64]) -> Result<(), IoError> {
    if values.is_empty() {
        return Err(invalid(format!("{name} must not be empty")));
    }
    if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(invalid(format!("{name} contains non-positive value {v}")));
    }
    Ok(())
}

impl RunConfig {
    /// Parses a configuration document. A manifest is accepted as well, in
    /// which case its embedded configuration is used.
    pub fn from_json(text: &str) -> Result<Self, IoError> {
        let value: Value = serde_json::from_str(text)?;
        Self::from_value(value)
    }

    pub fn from_value(mut value: Value) -> Result<Self, IoError> {
        if value.get("schema").and_then(Value::as_str) == Some(MANIFEST_SCHEMA) {
            value = value.get_mut("config").map(Value::take).ok_or_else(|| invalid("manifest has no config"))?;
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        Self::from_json(&read_text(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    /// Sweep description with couplings resolved against `a_star`.
    pub fn sweep_config(&self, a_star: f64) -> SweepConfig {
        SweepConfig {
            schedule: self.schedule.resolve(a_star),
            template: self.problem.resolve(a_star),
            grid: self.grid,
            solver: self.solver.clone(),
            jobs: self.jobs,
        }
    }

    pub fn validate(&self) -> Result<(), IoError> {
        self.grid.base.validate()?;
        if self.grid.max_points < self.grid.base.points_per_side {
            return Err(invalid("grid.max_points is below the base resolution"));
        }
        self.solver.validate().map_err(|e| invalid(e.to_string()))?;
        let t = &self.townes;
        if !(t.tolerance > 0.0 && t.r_max > 10.0 && t.mesh_step > 0.0 && t.mesh_step < 1.0) {
            return Err(invalid("townes options: need tolerance > 0, r_max > 10, 0 < mesh_step < 1"));
        }
        let pr = &self.problem;
        check_fraction("problem.a1", pr.a1)?;
        check_fraction("problem.a2", pr.a2)?;
        pr.resolve(1.0).validate().map_err(|e| invalid(e.to_string()))?;
        let fr = self.schedule.fractions();
        if fr.is_empty() {
            return Err(invalid("schedule is empty"));
        }
        if let ScheduleSpec::Geometric { first_gap, ratio, .. } = self.schedule {
            if !(first_gap > 0.0 && ratio > 0.0 && ratio < 1.0) {
                return Err(invalid("geometric schedule needs first_gap > 0 and 0 < ratio < 1"));
            }
        }
        for f in &fr {
            check_fraction("schedule entry", f[0])?;
            check_fraction("schedule entry", f[1])?;
        }
        if fr.windows(2).any(|w| w[1][0] < w[0][0] || w[1][1] < w[0][1] || w[1] == w[0]) {
            return Err(invalid("schedule must increase toward a*"));
        }
        let an = &self.analysis;
        if an.fit_window < 3 {
            return Err(invalid("analysis.fit_window must be at least 3"));
        }
        check_positive("analysis bounds", &[an.drift_bound, an.distance_bound, an.peak_ratio_bound, an.sandwich_k])?;
        check_positive("constants.p_list", &self.constants.p_list)?;
        self.constants.gn_grid.validate()?;
        let ub = &self.unbounded;
        if !(ub.a1.is_finite() && ub.a1 > 1.0) {
            return Err(invalid(format!("unbounded.a1 = {} must exceed 1 (units of a*)", ub.a1)));
        }
        ub.grid.validate()?;
        check_positive("unbounded.setup.taus", &ub.setup.taus)?;
        let tr = &self.trial;
        if tr.fractions.is_empty() {
            return Err(invalid("trial.fractions must not be empty"));
        }
        for &f in &tr.fractions {
            check_fraction("trial fraction", f)?;
        }
        check_positive("trial.p", &[tr.p])?;
        if !(tr.beta >= 0.0) {
            return Err(invalid("trial.beta must be non-negative"));
        }
        tr.grid.validate()?;
        let la = &self.lemma_a;
        check_positive("lemma_a.kappas", &la.kappas)?;
        check_positive("lemma_a.ms", &la.ms)?;
        check_positive("lemma_a.ps", &la.ps)?;
        check_positive("lemma_a.a_fractions", &la.a_fractions)?;
        for &f in &la.a_fractions {
            check_fraction("lemma_a fraction", f)?;
        }
        Ok(())
    }
}

/// Sets `path` (dot separated) in a JSON document to `raw`, parsed as JSON
/// when possible and as a string otherwise.
pub fn apply_override(doc: &mut Value, path: &str, raw: &str) -> Result<(), IoError> {
    let new: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        if key.is_empty() {
            return Err(invalid(format!("empty key in override path {path:?}")));
        }
        if !cur.is_object() {
            return Err(invalid(format!("override path {path:?} crosses a non-object")));
        }
        let map = cur.as_object_mut().expect("checked");
        if i + 1 == keys.len() {
            map.insert((*key).to_string(), new);
            return Ok(());
        }
        cur = map.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one key")
}

/// Fixed-width scientific notation with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// A CSV file whose first line is `# schema: <name>`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub schema: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(schema: &str, header: &[&str]) -> Self {
        Self { schema: schema.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn push_floats(&mut self, row: &[f64]) {
        self.push(row.iter().map(|&x| fmt_f64(x)).collect());
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, IoError> {
        let mut out = format!("# schema: {}\n", self.schema).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(&self.header)?;
            for r in &self.rows {
                w.write_record(r)?;
            }
            w.flush().map_err(|e| IoError::Format { what: "csv", detail: e.to_string() })?;
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        write_bytes(path, &self.to_bytes()?)
    }

    pub fn parse(text: &str) -> Result<Self, IoError> {
        let first = text.lines().next().unwrap_or_default();
        let schema = first
            .strip_prefix("# schema: ")
            .ok_or_else(|| IoError::Format { what: "csv", detail: "missing schema line".into() })?
            .trim()
            .to_string();
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r.records().map(|rec| rec.map(|x| x.iter().map(str::to_string).collect())).collect::<Result<_, _>>()?;
        Ok(Self { schema, header, rows })
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        Self::parse(&read_text(path)?)
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

pub fn sweep_table(records: &[SweepRecord]) -> CsvTable {
    let mut t = CsvTable::new(SWEEP_SCHEMA, &SweepRecord::csv_header());
    for r in records {
        t.push(r.csv_fields(fmt_f64));
    }
    t
}

pub fn parse_sweep_table(table: &CsvTable) -> Result<Vec<SweepRecord>, IoError> {
    if table.schema != SWEEP_SCHEMA {
        return Err(IoError::Format { what: "sweep table", detail: format!("schema {:?}", table.schema) });
    }
    table
        .rows
        .iter()
        .map(|row| {
            SweepRecord::from_csv_fields(&row.iter().map(String::as_str).collect::<Vec<_>>())
                .map_err(|e| IoError::Format { what: "sweep table", detail: e.to_string() })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    pub config_sha256: String,
    pub q_reference_sha256: Option<String>,
    /// Output file name to SHA-256 of its contents.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            schema: MANIFEST_SCHEMA.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: config.clone(),
            config_sha256: config.hash(),
            q_reference_sha256: None,
            outputs: BTreeMap::new(),
        }
    }

    pub fn record_output(&mut self, name: &str, bytes: &[u8]) {
        self.outputs.insert(name.into(), sha256_hex(bytes));
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, IoError> {
        let m: Self = serde_json::from_str(text)?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(IoError::Format { what: "manifest", detail: format!("schema {:?}", m.schema) });
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub schema: String,
    pub half_width: f64,
    pub points_per_side: usize,
    pub components: Vec<String>,
    pub dtype: String,
    pub order: String,
}

/// JSON header line followed by the fields as little-endian `f64`,
/// row-major, one component after another.
pub fn field_dump_bytes(fields: &[(&str, &ScalarField)]) -> Result<Vec<u8>, IoError> {
    let grid = fields
        .first()
        .ok_or_else(|| IoError::Format { what: "field dump", detail: "no fields".into() })?
        .1
        .grid();
    for (_, f) in fields {
        f.check_same_grid(fields[0].1)?;
    }
    let header = FieldHeader {
        schema: FIELD_SCHEMA.into(),
        half_width: grid.half_width(),
        points_per_side: grid.points_per_side(),
        components: fields.iter().map(|(n, _)| n.to_string()).collect(),
        dtype: "f64le".into(),
        order: "row-major".into(),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    for (_, f) in fields {
        for v in f.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn parse_field_dump(bytes: &[u8]) -> Result<(FieldHeader, Vec<ScalarField>), IoError> {
    let bad = |d: &str| IoError::Format { what: "field dump", detail: d.into() };
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("no header line"))?;
    let header: FieldHeader = serde_json::from_slice(&bytes[..nl])?;
    if header.schema != FIELD_SCHEMA || header.dtype != "f64le" {
        return Err(bad("unsupported schema or dtype"));
    }
    let grid: Arc<Grid2D> = Grid2D::new(header.half_width, header.points_per_side)?;
    let body = &bytes[nl + 1..];
    let per = grid.len() * 8;
    if body.len() != per * header.components.len() {
        return Err(bad(&format!("expected {} data bytes, found {}", per * header.components.len(), body.len())));
    }
    let fields = body
        .chunks_exact(per)
        .map(|c| {
            let v = c.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
            ScalarField::new(grid.clone(), v)
        })
        .collect::<Result<_, _>>()?;
    Ok((header, fields))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: &str, points: Vec<(f64, f64)>) -> Self {
        Self { label: label.into(), points }
    }
}

/// Minimal self-contained SVG line plot.
#[derive(Debug, Clone, PartialEq)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl LinePlot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            log_x: false,
            log_y: false,
            series: Vec::new(),
        }
    }

    pub fn log_log(mut self) -> Self {
        self.log_x = true;
        self.log_y = true;
        self
    }

    pub fn with(mut self, s: Series) -> Self {
        self.series.push(s);
        self
    }

    pub fn render(&self) -> String {
        let (w, h, ml, mr, mt, mb) = (640.0, 420.0, 80.0, 150.0, 40.0, 56.0);
        let tx = |x: f64| if self.log_x { x.log10() } else { x };
        let ty = |y: f64| if self.log_y { y.log10() } else { y };
        let plotted: Vec<Vec<(f64, f64)>> = self
            .series
            .iter()
            .map(|s| {
                s.points.iter().map(|&(x, y)| (tx(x), ty(y))).filter(|(x, y)| x.is_finite() && y.is_finite()).collect()
            })
            .collect();
        let all = plotted.iter().flatten();
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in all {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 < 1e-12 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 - y0 < 1e-12 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let pad = 0.05 * (y1 - y0);
        let (y0, y1) = (y0 - pad, y1 + pad);
        let (pw, ph) = (w - ml - mr, h - mt - mb);
        let sx = |x: f64| ml + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| mt + (y1 - y) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, ml + pw / 2.0, escape(&self.title));
        let _ = writeln!(s, r##"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##);
        let label = |v: f64, log: bool| if log { format!("1e{v:.2}") } else { format!("{v:.4}") };
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
            let (px, py) = (sx(xv), sy(yv));
            let _ = writeln!(s, r##"<line x1="{px:.2}" y1="{}" x2="{px:.2}" y2="{}" stroke="#444"/>"##, mt + ph, mt + ph + 5.0);
            let _ = writeln!(s, r#"<text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#, mt + ph + 18.0, label(xv, self.log_x));
            let _ = writeln!(s, r##"<line x1="{}" y1="{py:.2}" x2="{ml}" y2="{py:.2}" stroke="#444"/>"##, ml - 5.0);
            let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, ml - 8.0, py + 4.0, label(yv, self.log_y));
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, ml + pw / 2.0, h - 12.0, escape(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
            mt + ph / 2.0,
            escape(&self.y_label)
        );
        for (k, (series, pts)) in self.series.iter().zip(&plotted).enumerate() {
            let color = COLORS[k % COLORS.len()];
            let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            if path.len() > 1 {
                let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
            }
            for &(x, y) in pts {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, sx(x), sy(y));
            }
            let ly = mt + 14.0 + 18.0 * k as f64;
            let _ = writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, w - mr + 10.0, w - mr + 30.0);
            let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, w - mr + 36.0, ly + 4.0, escape(&series.label));
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let back = RunConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let partial = RunConfig::from_json(r#"{"grid": {"base": {"half_width": 6.0, "points_per_side": 128}}}"#).unwrap();
        assert_eq!(partial.grid.base.points_per_side, 128);
        assert_eq!(partial.solver.tolerance, SolverOptions::default().tolerance);
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut c = RunConfig::default();
        c.grid.base.points_per_side = 255;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.problem.a1 = 1.2;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.problem.beta = -1.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.problem.trap2.exponent = 0.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.unbounded.a1 = 0.9;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.schedule = ScheduleSpec::List { fractions: vec![[0.99, 0.99], [0.9, 0.9]] };
        assert!(c.validate().is_err());
        assert!(RunConfig::from_json(r#"{"nonsense": 1}"#).is_err());
    }

    #[test]
    fn manifest_is_accepted_as_config() {
        let mut c = RunConfig::default();
        c.jobs = 3;
        let m = Manifest::new("sweep", &c);
        assert_eq!(RunConfig::from_json(&m.to_json()).unwrap(), c);
        assert_eq!(Manifest::from_json(&m.to_json()).unwrap(), m);
    }

    #[test]
    fn overrides() {
        let mut doc = serde_json::to_value(RunConfig::default()).unwrap();
        apply_override(&mut doc, "solver.tolerance", "1e-8").unwrap();
        apply_override(&mut doc, "paths.out", "elsewhere").unwrap();
        let c = RunConfig::from_value(doc.clone()).unwrap();
        assert_eq!(c.solver.tolerance, 1e-8);
        assert_eq!(c.paths.out, PathBuf::from("elsewhere"));
        assert!(apply_override(&mut doc, "jobs.x", "1").is_err());
    }

    #[test]
    fn geometric_schedule() {
        let s = ScheduleSpec::Geometric { first_gap: 0.1, ratio: 0.5, count: 3 };
        let f = s.fractions();
        assert_eq!(f.len(), 3);
        assert!((f[2][0] - 0.975).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trip_preserves_bits() {
        let mut t = CsvTable::new("blowup-test/1", &["x", "note"]);
        let x = std::f64::consts::PI / 7.0;
        t.push(vec![fmt_f64(x), "a, b".into()]);
        t.push(vec![fmt_f64(f64::NAN), "plain".into()]);
        let bytes = t.to_bytes().unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.starts_with("# schema: blowup-test/1\n"));
        let back = CsvTable::parse(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.rows[0][0].parse::<f64>().unwrap().to_bits(), x.to_bits());
        assert!(back.rows[1][0].parse::<f64>().unwrap().is_nan());
    }

    #[test]
    fn field_dump_round_trip() {
        let g = Grid2D::new(2.0, 32).unwrap();
        let u = ScalarField::from_fn(g.clone(), |x, y| (x * 1.3 - y).sin());
        let v = ScalarField::from_fn(g, |x, y| x * y);
        let bytes = field_dump_bytes(&[("u1", &u), ("u2", &v)]).unwrap();
        let (h, f) = parse_field_dump(&bytes).unwrap();
        assert_eq!(h.components, vec!["u1", "u2"]);
        assert_eq!(f[0].values(), u.values());
        assert_eq!(f[1].values(), v.values());
        assert!(parse_field_dump(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn svg_is_well_formed() {
        let p = LinePlot::new("energy <scaled>", "gap", "e")
            .log_log()
            .with(Series::new("e", vec![(0.1, 0.2), (0.01, 0.05), (0.0, 1.0)]));
        let s = p.render();
        assert!(s.starts_with("<svg") && s.ends_with("</svg>\n"));
        assert!(s.contains("&lt;scaled&gt;"));
        assert_eq!(s.matches("<circle").count(), 2);
    }
}

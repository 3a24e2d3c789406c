//! File formats and run configuration.
//!
//! Every matrix goes to disk in long form (`day,instant,kw` and friends) with
//! floats written through `Display`, which prints the shortest decimal that
//! parses back to the same bits. Reading a file that this module wrote
//! therefore reproduces the matrix exactly. Units are not converted; they are
//! declared once in `metadata.json`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::disagg::{DisaggResult, HybridConfig, IterationDiagnostics};
use crate::error::{Error, Result};
use crate::model::{self, ComparisonRow, FitConfig, FitResult, UtilityParams};
use crate::nmf::NmfFactors;
use crate::synth::{GroundTruth, ScenarioSpec};
use crate::types::{CostVector, LoadMatrix, LoadRole, TemperatureMatrix, TimeGrid};

pub const LOADS_FILE: &str = "loads.csv";
pub const TEMPERATURES_FILE: &str = "temperatures.csv";
pub const PRICES_FILE: &str = "prices.csv";
pub const METADATA_FILE: &str = "metadata.json";
pub const TRUTH_SHIFTABLE_FILE: &str = "truth_shiftable.csv";
pub const TRUTH_FIXED_FILE: &str = "truth_fixed.csv";
pub const TRUE_PARAMS_FILE: &str = "params_true.json";
pub const SPIKES_FILE: &str = "spikes.csv";
pub const SHIFTABLE_FILE: &str = "disagg_shiftable.csv";
pub const FIXED_FILE: &str = "disagg_fixed.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const MIXTURE_FILE: &str = "mixture.json";
pub const NMF_BASIS_FILE: &str = "nmf_basis.csv";
pub const NMF_COEFFS_FILE: &str = "nmf_coeffs.csv";
pub const FIT_FILE: &str = "fit.json";
pub const FIT_REAL_FILE: &str = "fit_real.json";
pub const TABLE1_FILE: &str = "table1.csv";
pub const PROFILES_FILE: &str = "profiles.csv";
pub const REPORT_FILE: &str = "report.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Units {
    pub load: String,
    pub period_sum: String,
    pub temperature: String,
    pub price: String,
}

impl Default for Units {
    fn default() -> Self {
        Self {
            load: "kW".into(),
            period_sum: "kW*min".into(),
            temperature: "degC".into(),
            price: "$/kWh".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub source: String,
    pub grid: TimeGrid,
    pub n_days: usize,
    #[serde(default)]
    pub units: Units,
    /// Appliance power levels of a synthetic household, kW.
    #[serde(default)]
    pub appliance_levels_kw: Vec<f64>,
    /// Load removed when the noisy synthetic total was clamped at zero.
    #[serde(default)]
    pub clamp_mass: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub load: LoadMatrix,
    pub theta: TemperatureMatrix,
    pub cost: CostVector,
    pub grid: TimeGrid,
    pub metadata: Metadata,
}

impl DatasetBundle {
    pub fn new(
        load: LoadMatrix,
        theta: TemperatureMatrix,
        cost: CostVector,
        grid: TimeGrid,
        source: &str,
    ) -> Result<Self> {
        check_dims(&grid, &load, &theta, &cost)?;
        let metadata = Metadata {
            source: source.to_string(),
            grid,
            n_days: load.n_days(),
            units: Units::default(),
            appliance_levels_kw: Vec::new(),
            clamp_mass: 0.0,
        };
        Ok(Self { load, theta, cost, grid, metadata })
    }
}

fn check_dims(grid: &TimeGrid, load: &LoadMatrix, theta: &TemperatureMatrix, cost: &CostVector) -> Result<()> {
    let pairs = [
        ("load instants", grid.instants_per_day(), load.n_instants()),
        ("temperature periods", grid.periods_per_day(), theta.n_periods()),
        ("temperature days", load.n_days(), theta.n_days()),
        ("price periods", grid.periods_per_day(), cost.len()),
    ];
    for (what, expected, got) in pairs {
        if expected != got {
            return Err(Error::Dimension(format!("{what}: expected {expected}, got {got}")));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Long-form CSV

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    parse_err(path, line, e.to_string())
}

/// Data rows with their 1-based line numbers, after checking the header.
fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<(usize, Vec<String>)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let got = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if got.is_empty() || (got.len() == 1 && got[0].is_empty()) {
        return Err(parse_err(path, 1, "no rows"));
    }
    if got.iter().ne(header.iter().copied()) {
        return Err(parse_err(
            path,
            1,
            format!("expected header `{}`, found `{}`", header.join(","), got.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(parse_err(path, line, format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    if rows.is_empty() {
        return Err(parse_err(path, 1, "no rows"));
    }
    Ok(rows)
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, name: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| parse_err(path, line, format!("cannot parse {name} `{raw}`")))
}

fn finite(path: &Path, line: usize, name: &str, raw: &str) -> Result<f64> {
    let v: f64 = field(path, line, name, raw)?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("{name} must be finite, got `{raw}`")));
    }
    Ok(v)
}

fn describe_missing(missing: &[(usize, usize)]) -> String {
    let shown: Vec<String> = missing.iter().take(10).map(|(r, c)| format!("({c},{r})")).collect();
    let more = if missing.len() > 10 {
        format!(" and {} more", missing.len() - 10)
    } else {
        String::new()
    };
    format!("{}{more}", shown.join(" "))
}

/// Reads `day,<inner>,<value>` into an `inner × day` matrix. The number of
/// days is one past the largest day index seen.
fn read_long(
    path: &Path,
    inner: &str,
    value: &str,
    n_inner: usize,
    check: impl Fn(f64) -> std::result::Result<(), String>,
) -> Result<Array2<f64>> {
    let rows = read_rows(path, &["day", inner, value])?;
    let mut parsed = Vec::with_capacity(rows.len());
    let mut n_days = 0;
    for (line, rec) in &rows {
        let day: usize = field(path, *line, "day", &rec[0])?;
        let i: usize = field(path, *line, inner, &rec[1])?;
        let v = finite(path, *line, value, &rec[2])?;
        if i >= n_inner {
            return Err(parse_err(path, *line, format!("{inner} {i} out of range (grid has {n_inner})")));
        }
        check(v).map_err(|m| parse_err(path, *line, m))?;
        n_days = n_days.max(day + 1);
        parsed.push((*line, day, i, v));
    }
    let mut out = Array2::from_elem((n_inner, n_days), f64::NAN);
    for (line, day, i, v) in parsed {
        if !out[[i, day]].is_nan() {
            return Err(parse_err(path, line, format!("duplicate cell day {day}, {inner} {i}")));
        }
        out[[i, day]] = v;
    }
    let missing: Vec<(usize, usize)> = out
        .indexed_iter()
        .filter(|(_, v)| v.is_nan())
        .map(|(ix, _)| ix)
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "{}: {} missing (day,{inner}) cells: {}",
            path.display(),
            missing.len(),
            describe_missing(&missing)
        )));
    }
    Ok(out)
}

fn write_long(path: &Path, inner: &str, value: &str, m: &Array2<f64>) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "day,{inner},{value}")?;
    for (n, col) in m.columns().into_iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            writeln!(w, "{n},{i},{v}")?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn ingest_loads(path: &Path, grid: &TimeGrid) -> Result<LoadMatrix> {
    ingest_loads_as(path, grid, LoadRole::Total)
}

pub fn ingest_loads_as(path: &Path, grid: &TimeGrid, role: LoadRole) -> Result<LoadMatrix> {
    let values = read_long(path, "instant", "kw", grid.instants_per_day(), |v| {
        if v < 0.0 {
            Err(format!("negative load {v} kW"))
        } else {
            Ok(())
        }
    })?;
    LoadMatrix::new(values, role)
}

pub fn write_loads(path: &Path, load: &LoadMatrix) -> Result<()> {
    write_long(path, "instant", "kw", load.values())
}

pub fn ingest_temperatures(path: &Path, grid: &TimeGrid) -> Result<TemperatureMatrix> {
    let values = read_long(path, "period", "temp", grid.periods_per_day(), |_| Ok(()))?;
    TemperatureMatrix::new(values)
}

pub fn write_temperatures(path: &Path, theta: &TemperatureMatrix) -> Result<()> {
    write_long(path, "period", "temp", theta.values())
}

pub fn ingest_prices(path: &Path, grid: &TimeGrid) -> Result<CostVector> {
    let k = grid.periods_per_day();
    let mut prices = vec![None; k];
    for (line, rec) in read_rows(path, &["period", "price"])? {
        let period: usize = field(path, line, "period", &rec[0])?;
        let price = finite(path, line, "price", &rec[1])?;
        if period >= k {
            return Err(parse_err(path, line, format!("period {period} out of range (grid has {k})")));
        }
        if price <= 0.0 {
            return Err(parse_err(path, line, format!("price must be positive, got {price}")));
        }
        if prices[period].replace(price).is_some() {
            return Err(parse_err(path, line, format!("duplicate period {period}")));
        }
    }
    let missing: Vec<String> = prices
        .iter()
        .enumerate()
        .filter(|(_, p)| p.is_none())
        .map(|(k, _)| k.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "{}: missing periods {}",
            path.display(),
            missing.join(", ")
        )));
    }
    CostVector::new(prices.into_iter().flatten().collect())
}

pub fn write_prices(path: &Path, cost: &CostVector) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "period,price")?;
    for (k, c) in cost.values().iter().enumerate() {
        writeln!(w, "{k},{c}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_spikes(path: &Path, spikes: &[(usize, usize)]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "day,instant")?;
    for (t, n) in spikes {
        writeln!(w, "{n},{t}")?;
    }
    w.flush()?;
    Ok(())
}

/// `(instant, day)` pairs, in file order. An empty file body is allowed.
pub fn read_spikes(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = fs::read_to_string(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    if text.trim() == "day,instant" {
        return Ok(Vec::new());
    }
    read_rows(path, &["day", "instant"])?
        .into_iter()
        .map(|(line, rec)| Ok((field(path, line, "instant", &rec[1])?, field(path, line, "day", &rec[0])?)))
        .collect()
}

// ---------------------------------------------------------------------------
// JSON

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e.line(), e.to_string()))
}

// ---------------------------------------------------------------------------
// Bundles

pub fn write_dataset(dir: &Path, bundle: &DatasetBundle) -> Result<()> {
    ensure_dir(dir)?;
    write_loads(&dir.join(LOADS_FILE), &bundle.load)?;
    write_temperatures(&dir.join(TEMPERATURES_FILE), &bundle.theta)?;
    write_prices(&dir.join(PRICES_FILE), &bundle.cost)?;
    write_json(&dir.join(METADATA_FILE), &bundle.metadata)
}

/// Reads loads, temperatures and prices from `dir`. The grid comes from
/// `metadata.json` when present and is the minute/hour default otherwise.
pub fn read_dataset(dir: &Path) -> Result<DatasetBundle> {
    let meta_path = dir.join(METADATA_FILE);
    let metadata: Option<Metadata> = if meta_path.exists() {
        Some(read_json(&meta_path)?)
    } else {
        None
    };
    let grid = metadata.as_ref().map_or_else(TimeGrid::default, |m| m.grid);
    let load = ingest_loads(&dir.join(LOADS_FILE), &grid)?;
    let theta = ingest_temperatures(&dir.join(TEMPERATURES_FILE), &grid)?;
    let cost = ingest_prices(&dir.join(PRICES_FILE), &grid)?;
    let mut bundle = DatasetBundle::new(load, theta, cost, grid, &dir.display().to_string())?;
    if let Some(m) = metadata {
        if m.n_days != bundle.load.n_days() {
            return Err(Error::Dimension(format!(
                "metadata declares {} days, loads have {}",
                m.n_days,
                bundle.load.n_days()
            )));
        }
        bundle.metadata = m;
    }
    Ok(bundle)
}

/// The dataset files plus the metered components and generating parameters.
pub fn write_ground_truth(dir: &Path, truth: &GroundTruth, source: &str) -> Result<()> {
    let mut bundle = DatasetBundle::new(
        truth.total.clone(),
        truth.theta.clone(),
        truth.cost.clone(),
        truth.grid,
        source,
    )?;
    bundle.metadata.appliance_levels_kw = truth.appliance_levels.clone();
    bundle.metadata.clamp_mass = truth.clamp_mass;
    write_dataset(dir, &bundle)?;
    write_loads(&dir.join(TRUTH_SHIFTABLE_FILE), &truth.shiftable)?;
    write_loads(&dir.join(TRUTH_FIXED_FILE), &truth.fixed)?;
    write_spikes(&dir.join(SPIKES_FILE), &truth.spikes)?;
    if let Some(p) = &truth.params_used {
        write_json(&dir.join(TRUE_PARAMS_FILE), p)?;
    }
    Ok(())
}

pub fn read_ground_truth(dir: &Path) -> Result<GroundTruth> {
    let bundle = read_dataset(dir)?;
    let grid = bundle.grid;
    let shiftable = ingest_loads_as(&dir.join(TRUTH_SHIFTABLE_FILE), &grid, LoadRole::Shiftable)?;
    let fixed = ingest_loads_as(&dir.join(TRUTH_FIXED_FILE), &grid, LoadRole::Fixed)?;
    for (name, m) in [("shiftable", &shiftable), ("fixed", &fixed)] {
        if m.n_days() != bundle.load.n_days() {
            return Err(Error::Dimension(format!(
                "{name} truth has {} days, loads have {}",
                m.n_days(),
                bundle.load.n_days()
            )));
        }
    }
    let params_path = dir.join(TRUE_PARAMS_FILE);
    let params_used: Option<UtilityParams> = if params_path.exists() {
        Some(read_json(&params_path)?)
    } else {
        None
    };
    let spikes_path = dir.join(SPIKES_FILE);
    let spikes = if spikes_path.exists() {
        read_spikes(&spikes_path)?
    } else {
        Vec::new()
    };
    let noise = bundle.load.values() - shiftable.values() - fixed.values();
    Ok(GroundTruth {
        grid,
        total: bundle.load,
        shiftable,
        fixed,
        noise,
        theta: bundle.theta,
        cost: bundle.cost,
        params_used,
        appliance_levels: bundle.metadata.appliance_levels_kw,
        spikes,
        clamp_mass: bundle.metadata.clamp_mass,
    })
}

// ---------------------------------------------------------------------------
// Result artifacts

pub fn write_diagnostics(path: &Path, rows: &[IterationDiagnostics]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "iteration,phi,loglik,drift,rel_change,renormalized")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.iteration, r.phi, r.loglik, r.drift, r.rel_change, r.renormalized
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_diagnostics(path: &Path) -> Result<Vec<IterationDiagnostics>> {
    let header = ["iteration", "phi", "loglik", "drift", "rel_change", "renormalized"];
    read_rows(path, &header)?
        .into_iter()
        .map(|(line, rec)| {
            Ok(IterationDiagnostics {
                iteration: field(path, line, "iteration", &rec[0])?,
                phi: field(path, line, "phi", &rec[1])?,
                loglik: field(path, line, "loglik", &rec[2])?,
                drift: field(path, line, "drift", &rec[3])?,
                rel_change: field(path, line, "rel_change", &rec[4])?,
                renormalized: field(path, line, "renormalized", &rec[5])?,
            })
        })
        .collect()
}

fn write_grid(path: &Path, header: &str, m: &Array2<f64>) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{header}")?;
    for ((i, j), v) in m.indexed_iter() {
        writeln!(w, "{i},{j},{v}")?;
    }
    w.flush()?;
    Ok(())
}

fn read_grid(path: &Path, header: [&str; 3]) -> Result<Array2<f64>> {
    let mut cells = Vec::new();
    let (mut rows, mut cols) = (0, 0);
    for (line, rec) in read_rows(path, &header)? {
        let i: usize = field(path, line, header[0], &rec[0])?;
        let j: usize = field(path, line, header[1], &rec[1])?;
        cells.push((i, j, finite(path, line, header[2], &rec[2])?));
        rows = rows.max(i + 1);
        cols = cols.max(j + 1);
    }
    if cells.len() != rows * cols {
        return Err(Error::Data(format!(
            "{}: {} cells for a {rows}x{cols} grid",
            path.display(),
            cells.len()
        )));
    }
    let mut out = Array2::zeros((rows, cols));
    for (i, j, v) in cells {
        out[[i, j]] = v;
    }
    Ok(out)
}

/// Basis (instants × bases) and coefficients (bases × days) in long form.
pub fn write_factors(dir: &Path, f: &NmfFactors) -> Result<()> {
    write_grid(&dir.join(NMF_BASIS_FILE), "instant,basis,value", &f.basis)?;
    write_grid(&dir.join(NMF_COEFFS_FILE), "basis,day,value", &f.coeffs)
}

pub fn read_factors(dir: &Path) -> Result<NmfFactors> {
    Ok(NmfFactors {
        basis: read_grid(&dir.join(NMF_BASIS_FILE), ["instant", "basis", "value"])?,
        coeffs: read_grid(&dir.join(NMF_COEFFS_FILE), ["basis", "day", "value"])?,
    })
}

/// Shiftable and fixed estimates, the iteration trace, the final mixture and
/// the fixed-load factors.
pub fn write_disaggregation(dir: &Path, r: &DisaggResult) -> Result<()> {
    ensure_dir(dir)?;
    write_loads(&dir.join(SHIFTABLE_FILE), &r.shiftable)?;
    write_loads(&dir.join(FIXED_FILE), &r.fixed)?;
    write_diagnostics(&dir.join(DIAGNOSTICS_FILE), &r.diagnostics)?;
    write_factors(dir, &r.nmf)?;
    write_json(&dir.join(MIXTURE_FILE), &r.gmm)
}

/// Shiftable and fixed estimates as written by [`write_disaggregation`].
pub fn read_disaggregation(dir: &Path, grid: &TimeGrid) -> Result<(LoadMatrix, LoadMatrix)> {
    Ok((
        ingest_loads_as(&dir.join(SHIFTABLE_FILE), grid, LoadRole::ShiftableEstimate)?,
        ingest_loads_as(&dir.join(FIXED_FILE), grid, LoadRole::FixedEstimate)?,
    ))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |c| c.to_string())
}

/// One row per parameter vector; an undefined correlation is written as `-`.
pub fn write_table1(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "parameter,median_real,median_disagg,corr")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.parameter, r.median_real, r.median_disagg, opt(r.corr))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_table1(path: &Path) -> Result<Vec<ComparisonRow>> {
    read_rows(path, &["parameter", "median_real", "median_disagg", "corr"])?
        .into_iter()
        .map(|(line, rec)| {
            Ok(ComparisonRow {
                parameter: rec[0].clone(),
                median_real: field(path, line, "median_real", &rec[1])?,
                median_disagg: field(path, line, "median_disagg", &rec[2])?,
                corr: match rec[3].as_str() {
                    "-" => None,
                    raw => Some(field(path, line, "corr", raw)?),
                },
            })
        })
        .collect()
}

/// Observed and modelled period sums for one day and period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub day: usize,
    pub period: usize,
    pub temp: f64,
    pub price: f64,
    pub fixed_observed: f64,
    pub fixed_model: f64,
    pub shiftable_observed: f64,
    pub shiftable_model: f64,
}

pub fn profile_rows(
    grid: &TimeGrid,
    shiftable: &LoadMatrix,
    fixed: &LoadMatrix,
    theta: &TemperatureMatrix,
    cost: &CostVector,
    params: &UtilityParams,
) -> Result<Vec<ProfileRow>> {
    let xs = grid.period_sums(shiftable)?;
    let xf = grid.period_sums(fixed)?;
    let mut rows = Vec::with_capacity(xs.len());
    for n in 0..xs.ncols() {
        let th = theta.day(n);
        let f_model = model::predict_fixed(params, &th)?;
        let s_model = model::predict_shiftable(params, &th, cost)?;
        for k in 0..grid.periods_per_day() {
            rows.push(ProfileRow {
                day: n,
                period: k,
                temp: th[k],
                price: cost.values()[k],
                fixed_observed: xf[[k, n]],
                fixed_model: f_model[k],
                shiftable_observed: xs[[k, n]],
                shiftable_model: s_model[k],
            });
        }
    }
    Ok(rows)
}

pub fn write_profiles(path: &Path, rows: &[ProfileRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_profiles(path: &Path) -> Result<Vec<ProfileRow>> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    rdr.deserialize().map(|r| r.map_err(|e| csv_err(path, e))).collect()
}

/// A fit together with the split it was fitted to, for `profiles.csv`.
pub struct FitArtifacts<'a> {
    pub result: &'a FitResult,
    pub shiftable: &'a LoadMatrix,
    pub fixed: &'a LoadMatrix,
    pub theta: &'a TemperatureMatrix,
    pub cost: &'a CostVector,
    pub grid: &'a TimeGrid,
}

/// Everything a run produced. Absent parts are skipped; `table1.csv` needs
/// both fits.
#[derive(Default)]
pub struct Report<'a> {
    pub disagg: Option<&'a DisaggResult>,
    pub fit: Option<FitArtifacts<'a>>,
    pub fit_real: Option<&'a FitResult>,
    pub summary: Option<&'a serde_json::Value>,
}

pub fn write_report(dir: &Path, report: &Report<'_>) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut written = Vec::new();
    if let Some(r) = report.disagg {
        write_disaggregation(dir, r)?;
        written.extend(
            [SHIFTABLE_FILE, FIXED_FILE, DIAGNOSTICS_FILE, NMF_BASIS_FILE, NMF_COEFFS_FILE, MIXTURE_FILE]
                .map(|f| dir.join(f)),
        );
    }
    if let Some(f) = &report.fit {
        write_json(&dir.join(FIT_FILE), f.result)?;
        let rows = profile_rows(f.grid, f.shiftable, f.fixed, f.theta, f.cost, &f.result.params)?;
        write_profiles(&dir.join(PROFILES_FILE), &rows)?;
        written.extend([FIT_FILE, PROFILES_FILE].map(|p| dir.join(p)));
    }
    if let Some(real) = report.fit_real {
        write_json(&dir.join(FIT_REAL_FILE), real)?;
        written.push(dir.join(FIT_REAL_FILE));
        if let Some(f) = &report.fit {
            write_table1(&dir.join(TABLE1_FILE), &model::compare_fits(&real.params, &f.result.params))?;
            written.push(dir.join(TABLE1_FILE));
        }
    }
    if let Some(s) = report.summary {
        write_json(&dir.join(REPORT_FILE), s)?;
        written.push(dir.join(REPORT_FILE));
    }
    Ok(written)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::File {
        path: dir.to_path_buf(),
        source,
    })
}

// ---------------------------------------------------------------------------
// Run configuration

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    #[default]
    Standard,
    SimilarLevels,
}

/// The flat key-value document accepted by `--config`. Every key is
/// optional; unknown keys are rejected by name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub gaussians: Option<usize>,
    pub bases: Option<usize>,
    pub max_iters: Option<usize>,
    pub rel_tol: Option<f64>,
    pub em_inner_iters: Option<usize>,
    pub nmf_inner_iters: Option<usize>,
    pub drift_bound: Option<f64>,
    pub variance_floor: Option<f64>,
    pub level_floor: Option<f64>,
    pub eps_f: Option<f64>,
    pub eps_s: Option<f64>,
    pub w_f: Option<f64>,
    pub w_s: Option<f64>,
    pub gamma_p: Option<f64>,
    pub gamma_q: Option<f64>,
    pub gamma_a: Option<f64>,
    pub gamma_b: Option<f64>,
    pub gamma_d: Option<f64>,
    pub pin_q: Option<bool>,
    pub qp_tol: Option<f64>,
    pub seed: Option<u64>,
    pub scenario: Option<ScenarioKind>,
    pub days: Option<usize>,
    pub noise_std: Option<f64>,
    pub out_dir: Option<PathBuf>,
}

impl ConfigFile {
    /// TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|e| with_path(e, path))
    }
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub hybrid: HybridConfig,
    pub fit: FitConfig,
    /// Present when the document set any scenario key.
    pub scenario: Option<ScenarioSpec>,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::from_file_contents(ConfigFile::default()).expect("defaults are valid")
    }
}

impl RunConfig {
    pub fn from_file_contents(c: ConfigFile) -> Result<Self> {
        let seed = c.seed.unwrap_or(0);
        let d = HybridConfig::default();
        let hybrid = HybridConfig {
            max_iters: c.max_iters.unwrap_or(d.max_iters),
            rel_tol: c.rel_tol.unwrap_or(d.rel_tol),
            n_gaussians: c.gaussians.unwrap_or(d.n_gaussians),
            n_bases: c.bases.unwrap_or(d.n_bases),
            seed,
            variance_floor: c.variance_floor.unwrap_or(d.variance_floor),
            em_inner_iters: c.em_inner_iters.unwrap_or(d.em_inner_iters),
            nmf_inner_iters: c.nmf_inner_iters.unwrap_or(d.nmf_inner_iters),
            drift_bound: c.drift_bound.unwrap_or(d.drift_bound),
            level_floor: c.level_floor.or(d.level_floor),
        };
        let f = FitConfig::default();
        let fit = FitConfig {
            eps_f: c.eps_f.or(f.eps_f),
            eps_s: c.eps_s.or(f.eps_s),
            w_f: c.w_f.unwrap_or(f.w_f),
            w_s: c.w_s.unwrap_or(f.w_s),
            gamma_p: c.gamma_p.unwrap_or(f.gamma_p),
            gamma_q: c.gamma_q.unwrap_or(f.gamma_q),
            gamma_a: c.gamma_a.unwrap_or(f.gamma_a),
            gamma_b: c.gamma_b.unwrap_or(f.gamma_b),
            gamma_d: c.gamma_d.unwrap_or(f.gamma_d),
            bounds: f.bounds,
            pin_q_to_zero: c.pin_q.unwrap_or(f.pin_q_to_zero),
            tol: c.qp_tol.unwrap_or(f.tol),
        };
        let scenario = if c.scenario.is_some() || c.days.is_some() || c.noise_std.is_some() {
            let mut spec = match c.scenario.unwrap_or_default() {
                ScenarioKind::Standard => ScenarioSpec::standard(seed),
                ScenarioKind::SimilarLevels => ScenarioSpec::similar_levels(seed),
            };
            if let Some(days) = c.days {
                spec.n_days = days;
            }
            if let Some(s) = c.noise_std {
                spec.noise_std = s;
            }
            spec.validate()?;
            Some(spec)
        } else {
            None
        };
        hybrid.validate()?;
        fit.validate()?;
        Ok(Self {
            hybrid,
            fit,
            scenario,
            seed,
            out_dir: c.out_dir,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_file_contents(ConfigFile::parse(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file_contents(ConfigFile::read(path)?).map_err(|e| with_path(e, path))
    }

    /// The configured scenario, or the standard one under this seed.
    pub fn scenario_spec(&self) -> ScenarioSpec {
        self.scenario
            .clone()
            .unwrap_or_else(|| ScenarioSpec::standard(self.seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{self, ScenarioSpec};
    use ndarray::array;
    use tempfile::TempDir;

    fn write(dir: &TempDir, name: &str, body: &str) -> PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    fn toy_grid() -> TimeGrid {
        TimeGrid::new(4, 2).unwrap()
    }

    #[test]
    fn toy_loads_land_column_per_day() {
        let dir = TempDir::new().unwrap();
        let mut body = String::from("day,instant,kw\n");
        for v in 0..8 {
            body += &format!("{},{},{}\n", v / 4, v % 4, v);
        }
        let p = write(&dir, "l.csv", &body);
        let m = ingest_loads(&p, &toy_grid()).unwrap();
        assert_eq!(m.values(), &array![[0.0, 4.0], [1.0, 5.0], [2.0, 6.0], [3.0, 7.0]]);
    }

    #[test]
    fn row_order_does_not_matter() {
        let dir = TempDir::new().unwrap();
        let p = write(&dir, "l.csv", "day,instant,kw\n1,1,5\n0,3,3\n0,0,0\n1,0,4\n0,2,2\n1,3,7\n0,1,1\n1,2,6\n");
        let m = ingest_loads(&p, &toy_grid()).unwrap();
        assert_eq!(m.values()[[2, 1]], 6.0);
    }

    #[test]
    fn empty_file_has_no_rows() {
        let dir = TempDir::new().unwrap();
        for body in ["", "day,instant,kw\n"] {
            let p = write(&dir, "e.csv", body);
            let err = ingest_loads(&p, &toy_grid()).unwrap_err().to_string();
            assert!(err.contains("no rows"), "{err}");
        }
    }

    #[test]
    fn negative_load_names_its_line() {
        let dir = TempDir::new().unwrap();
        let p = write(&dir, "n.csv", "day,instant,kw\n0,0,1\n0,1,-0.5\n0,2,1\n0,3,1\n");
        let err = ingest_loads(&p, &toy_grid()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert!(err.to_string().contains("negative"));
    }

    #[test]
    fn missing_and_duplicate_cells_are_rejected() {
        let dir = TempDir::new().unwrap();
        let p = write(&dir, "m.csv", "day,instant,kw\n0,0,1\n0,1,1\n0,3,1\n");
        let err = ingest_loads(&p, &toy_grid()).unwrap_err().to_string();
        assert!(err.contains("(0,2)"), "{err}");
        let p = write(&dir, "d.csv", "day,instant,kw\n0,0,1\n0,0,2\n0,1,1\n0,2,1\n0,3,1\n");
        assert!(matches!(ingest_loads(&p, &toy_grid()), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn bad_header_and_range() {
        let dir = TempDir::new().unwrap();
        let p = write(&dir, "h.csv", "day,minute,kw\n0,0,1\n");
        assert!(matches!(ingest_loads(&p, &toy_grid()), Err(Error::Parse { line: 1, .. })));
        let p = write(&dir, "r.csv", "day,instant,kw\n0,4,1\n");
        assert!(matches!(ingest_loads(&p, &toy_grid()), Err(Error::Parse { line: 2, .. })));
        let p = write(&dir, "x.csv", "day,instant,kw\n0,0,abc\n");
        assert!(matches!(ingest_loads(&p, &toy_grid()), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(
            ingest_loads(&dir.path().join("absent.csv"), &toy_grid()),
            Err(Error::File { .. })
        ));
    }

    #[test]
    fn constant_prices() {
        let dir = TempDir::new().unwrap();
        let body: String = std::iter::once("period,price\n".to_string())
            .chain((0..24).map(|k| format!("{k},0.15\n")))
            .collect();
        let p = write(&dir, "p.csv", &body);
        let c = ingest_prices(&p, &TimeGrid::default()).unwrap();
        assert_eq!(c.values(), &[0.15; 24]);
    }

    #[test]
    fn toy_prices_and_errors() {
        let dir = TempDir::new().unwrap();
        let p = write(&dir, "p.csv", "period,price\n1,0.3\n0,0.1\n");
        assert_eq!(ingest_prices(&p, &toy_grid()).unwrap().values(), &[0.1, 0.3]);

        let p = write(&dir, "m.csv", "period,price\n0,0.1\n");
        let grid = TimeGrid::new(8, 4).unwrap();
        let err = ingest_prices(&p, &grid).unwrap_err().to_string();
        assert!(err.contains("missing periods 1, 2, 3"), "{err}");

        let p = write(&dir, "z.csv", "period,price\n0,0.1\n1,0\n");
        assert!(matches!(ingest_prices(&p, &toy_grid()), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn toy_temperatures() {
        let dir = TempDir::new().unwrap();
        let p = write(&dir, "t.csv", "day,period,temp\n0,0,20.5\n0,1,-3\n");
        let t = ingest_temperatures(&p, &toy_grid()).unwrap();
        assert_eq!(t.values(), &array![[20.5], [-3.0]]);
    }

    fn small_truth() -> GroundTruth {
        let mut spec = ScenarioSpec::similar_levels(3);
        spec.n_days = 3;
        synth::generate(&spec).unwrap()
    }

    #[test]
    fn ground_truth_round_trips_exactly() {
        let dir = TempDir::new().unwrap();
        let g = small_truth();
        write_ground_truth(dir.path(), &g, "test").unwrap();
        let back = read_ground_truth(dir.path()).unwrap();
        assert_eq!(back.total, g.total);
        assert_eq!(back.shiftable.values(), g.shiftable.values());
        assert_eq!(back.fixed.values(), g.fixed.values());
        assert_eq!(back.theta, g.theta);
        assert_eq!(back.cost, g.cost);
        assert_eq!(back.params_used, g.params_used);
        assert_eq!(back.spikes, g.spikes);
        assert_eq!(back.appliance_levels, g.appliance_levels);
        assert_eq!(back.clamp_mass, g.clamp_mass);
    }

    #[test]
    fn report_artifacts_round_trip() {
        use crate::disagg;
        let dir = TempDir::new().unwrap();
        let g = small_truth();
        let r = disagg::run_hybrid(&g.total, &HybridConfig::default()).unwrap();
        let cfg = FitConfig::default();
        let fd = model::fit(&r.shiftable, &r.fixed, &g.theta, &g.cost, &cfg, &g.grid).unwrap();
        let fr = model::fit(&g.shiftable, &g.fixed, &g.theta, &g.cost, &cfg, &g.grid).unwrap();
        let summary = serde_json::json!({"ok": true});
        let written = write_report(
            dir.path(),
            &Report {
                disagg: Some(&r),
                fit: Some(FitArtifacts {
                    result: &fd,
                    shiftable: &r.shiftable,
                    fixed: &r.fixed,
                    theta: &g.theta,
                    cost: &g.cost,
                    grid: &g.grid,
                }),
                fit_real: Some(&fr),
                summary: Some(&summary),
            },
        )
        .unwrap();
        assert_eq!(written.len(), 11);
        assert_eq!(read_factors(dir.path()).unwrap(), r.nmf);

        let (s, f) = read_disaggregation(dir.path(), &g.grid).unwrap();
        assert_eq!(s, r.shiftable);
        assert_eq!(f, r.fixed);
        assert_eq!(read_diagnostics(&dir.path().join(DIAGNOSTICS_FILE)).unwrap(), r.diagnostics);
        let fit_back: FitResult = read_json(&dir.path().join(FIT_FILE)).unwrap();
        assert_eq!(fit_back, fd);

        let table = read_table1(&dir.path().join(TABLE1_FILE)).unwrap();
        assert_eq!(table, model::compare_fits(&fr.params, &fd.params));
        let names: Vec<_> = table.iter().map(|r| r.parameter.as_str()).collect();
        assert_eq!(names, ["a", "b", "d", "p", "q"]);

        let profiles = read_profiles(&dir.path().join(PROFILES_FILE)).unwrap();
        assert_eq!(profiles.len(), 3 * 24);
        assert_eq!(
            profiles,
            profile_rows(&g.grid, &r.shiftable, &r.fixed, &g.theta, &g.cost, &fd.params).unwrap()
        );
    }

    #[test]
    fn undefined_correlation_is_a_dash() {
        let dir = TempDir::new().unwrap();
        let rows = vec![ComparisonRow {
            parameter: "q".into(),
            median_real: 0.0,
            median_disagg: 0.0,
            corr: None,
        }];
        let p = dir.path().join("t.csv");
        write_table1(&p, &rows).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "parameter,median_real,median_disagg,corr\nq,0,0,-\n");
        assert_eq!(read_table1(&p).unwrap(), rows);
    }

    #[test]
    fn awkward_floats_survive() {
        let dir = TempDir::new().unwrap();
        let v = array![[0.1 + 0.2, 1e-300], [f64::MIN_POSITIVE, 123_456_789.123_456_79]];
        let m = LoadMatrix::new(v, LoadRole::Total).unwrap();
        let p = dir.path().join("f.csv");
        write_loads(&p, &m).unwrap();
        assert_eq!(ingest_loads(&p, &TimeGrid::new(2, 1).unwrap()).unwrap(), m);
    }

    #[test]
    fn config_keys_map_onto_modules() {
        let cfg = RunConfig::parse(
            "gaussians = 3\nbases = 2\nmax_iters = 9\nrel_tol = 1e-3\neps_f = 1.5\nw_s = 2.0\n\
             gamma_d = 0.5\npin_q = true\nseed = 7\nscenario = \"similar-levels\"\ndays = 4\n",
        )
        .unwrap();
        assert_eq!(cfg.hybrid.n_gaussians, 3);
        assert_eq!(cfg.hybrid.n_bases, 2);
        assert_eq!(cfg.hybrid.max_iters, 9);
        assert_eq!(cfg.hybrid.seed, 7);
        assert_eq!(cfg.fit.eps_f, Some(1.5));
        assert_eq!(cfg.fit.w_s, 2.0);
        assert_eq!(cfg.fit.gamma_d, 0.5);
        assert!(cfg.fit.pin_q_to_zero);
        let spec = cfg.scenario.unwrap();
        assert_eq!(spec.n_days, 4);
        assert_eq!(spec.seed, 7);
        assert_eq!(spec.appliances.len(), ScenarioSpec::similar_levels(7).appliances.len());

        let json = RunConfig::parse(r#"{"bases": 2, "seed": 7}"#).unwrap();
        assert_eq!(json.hybrid.n_bases, 2);
        assert_eq!(json.scenario, None);
        assert_eq!(json.scenario_spec(), ScenarioSpec::standard(7));
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn config_errors_name_the_problem() {
        let err = RunConfig::parse("gausians = 3\n").unwrap_err().to_string();
        assert!(err.contains("gausians"), "{err}");
        let err = RunConfig::parse(r#"{"nope": 1}"#).unwrap_err().to_string();
        assert!(err.contains("nope"), "{err}");
        assert!(matches!(RunConfig::parse("gamma_p = -1.0\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("max_iters = 0\n"), Err(Error::Config(_))));
        assert!(RunConfig::parse("days = 0\n").is_err());
    }
}

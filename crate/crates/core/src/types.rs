//! Domain types shared by every stage: the time grid, load matrices,
//! temperatures and unit prices.

use std::ops::Range;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};

/// Split of a day into `instants_per_day` samples grouped into
/// `periods_per_day` equal, non-overlapping periods.
///
/// The period summing operator (a block pattern of ones) is applied
/// structurally through [`TimeGrid::sum_to_periods`] and never materialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid", into = "RawGrid")]
pub struct TimeGrid {
    instants_per_day: usize,
    periods_per_day: usize,
}

#[derive(Serialize, Deserialize)]
struct RawGrid {
    instants_per_day: usize,
    periods_per_day: usize,
}

impl TryFrom<RawGrid> for TimeGrid {
    type Error = Error;

    fn try_from(raw: RawGrid) -> Result<Self> {
        TimeGrid::new(raw.instants_per_day, raw.periods_per_day)
    }
}

impl From<TimeGrid> for RawGrid {
    fn from(g: TimeGrid) -> Self {
        RawGrid {
            instants_per_day: g.instants_per_day,
            periods_per_day: g.periods_per_day,
        }
    }
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self::minutes_by_hour()
    }
}

impl TimeGrid {
    pub fn new(instants_per_day: usize, periods_per_day: usize) -> Result<Self> {
        if instants_per_day == 0 || periods_per_day == 0 {
            return Err(Error::Config(
                "time grid counts must be at least 1".to_string(),
            ));
        }
        if !instants_per_day.is_multiple_of(periods_per_day) {
            return Err(Error::Config(format!(
                "{instants_per_day} instants cannot be split into {periods_per_day} equal periods"
            )));
        }
        Ok(Self {
            instants_per_day,
            periods_per_day,
        })
    }

    /// One-minute samples grouped into hours (1440 × 24).
    pub fn minutes_by_hour() -> Self {
        Self {
            instants_per_day: 1440,
            periods_per_day: 24,
        }
    }

    pub fn instants_per_day(&self) -> usize {
        self.instants_per_day
    }

    pub fn periods_per_day(&self) -> usize {
        self.periods_per_day
    }

    pub fn instants_per_period(&self) -> usize {
        self.instants_per_day / self.periods_per_day
    }

    /// Period containing instant `t`.
    pub fn period_of(&self, t: usize) -> Result<usize> {
        if t >= self.instants_per_day {
            return Err(Error::Index {
                index: t,
                len: self.instants_per_day,
            });
        }
        Ok(t / self.instants_per_period())
    }

    /// Instants belonging to period `k`.
    pub fn instants_of(&self, k: usize) -> Range<usize> {
        let l = self.instants_per_period();
        k * l..(k + 1) * l
    }

    /// Sums a per-instant vector into per-period totals.
    pub fn sum_to_periods(&self, x: &[f64]) -> Result<Vec<f64>> {
        dim_check("per-instant vector length", self.instants_per_day, x.len())?;
        Ok(x.chunks_exact(self.instants_per_period())
            .map(|c| c.iter().sum())
            .collect())
    }

    fn sum_view(&self, x: ArrayView1<'_, f64>) -> Vec<f64> {
        let l = self.instants_per_period();
        (0..self.periods_per_day)
            .map(|k| x.slice(ndarray::s![k * l..(k + 1) * l]).iter().sum())
            .collect()
    }

    /// Period totals of every day of a load matrix, as a periods × days grid.
    pub fn period_sums(&self, load: &LoadMatrix) -> Result<Array2<f64>> {
        dim_check("load matrix rows", self.instants_per_day, load.n_instants())?;
        let mut out = Array2::zeros((self.periods_per_day, load.n_days()));
        for (n, col) in load.values().columns().into_iter().enumerate() {
            for (k, s) in self.sum_view(col).into_iter().enumerate() {
                out[[k, n]] = s;
            }
        }
        Ok(out)
    }
}

/// What a load matrix holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoadRole {
    Total,
    Fixed,
    Shiftable,
    FixedEstimate,
    ShiftableEstimate,
}

impl LoadRole {
    pub fn is_estimate(self) -> bool {
        matches!(self, LoadRole::FixedEstimate | LoadRole::ShiftableEstimate)
    }
}

/// Instants × days grid of non-negative power samples (kW per instant).
///
/// Period totals are plain sums of the samples, so they carry
/// kW·instant units.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadMatrix {
    values: Array2<f64>,
    role: LoadRole,
}

impl LoadMatrix {
    /// Wraps `values`, rejecting non-finite or negative entries.
    pub fn new(values: Array2<f64>, role: LoadRole) -> Result<Self> {
        if let Some(((t, n), v)) = values
            .indexed_iter()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::Data(format!(
                "{role:?} load at instant {t}, day {n} is {v}; loads must be finite and non-negative"
            )));
        }
        Ok(Self { values, role })
    }

    /// Builds an estimate-role matrix, clamping negatives to zero.
    ///
    /// Returns the matrix and the clamped mass (sum of removed negative parts).
    pub fn clamped(mut values: Array2<f64>, role: LoadRole) -> Result<(Self, f64)> {
        let mut mass = 0.0;
        for v in values.iter_mut() {
            if !v.is_finite() {
                return Err(Error::Data(format!("non-finite {role:?} estimate")));
            }
            if *v < 0.0 {
                mass -= *v;
                *v = 0.0;
            }
        }
        Ok((Self { values, role }, mass))
    }

    pub fn zeros(n_instants: usize, n_days: usize, role: LoadRole) -> Self {
        Self {
            values: Array2::zeros((n_instants, n_days)),
            role,
        }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn role(&self) -> LoadRole {
        self.role
    }

    pub fn with_role(mut self, role: LoadRole) -> Self {
        self.role = role;
        self
    }

    pub fn n_instants(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_days(&self) -> usize {
        self.values.ncols()
    }

    pub fn day(&self, n: usize) -> ArrayView1<'_, f64> {
        self.values.column(n)
    }

    pub fn total(&self) -> f64 {
        self.values.sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius(&self.values)
    }
}

pub(crate) fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Periods × days grid of period-average ambient temperatures.
#[derive(Clone, Debug, PartialEq)]
pub struct TemperatureMatrix {
    values: Array2<f64>,
}

impl TemperatureMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("temperatures must be finite".to_string()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn n_periods(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_days(&self) -> usize {
        self.values.ncols()
    }

    pub fn day(&self, n: usize) -> Vec<f64> {
        self.values.column(n).to_vec()
    }

    /// Per-period mean over days; the "typical day" used for profiles.
    pub fn period_means(&self) -> Vec<f64> {
        self.values
            .rows()
            .into_iter()
            .map(|r| if r.is_empty() { 0.0 } else { r.mean().unwrap_or(0.0) })
            .collect()
    }
}

/// Strictly positive unit price per period, constant across days.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CostVector {
    values: Vec<f64>,
}

impl TryFrom<Vec<f64>> for CostVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        CostVector::new(v)
    }
}

impl From<CostVector> for Vec<f64> {
    fn from(c: CostVector) -> Self {
        c.values
    }
}

impl CostVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((k, c)) = values
            .iter()
            .enumerate()
            .find(|(_, c)| !c.is_finite() || **c <= 0.0)
        {
            return Err(Error::Domain(format!(
                "unit price for period {k} is {c}; prices must be positive"
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same tariff with every price multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.values.iter().map(|c| c * factor).collect())
    }
}

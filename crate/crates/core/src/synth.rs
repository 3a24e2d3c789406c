//! Synthetic households with appliance-level ground truth.
//!
//! Loads are in kW per instant (one instant is one minute in the default
//! grid), so period sums come out in kW·min. Every day draws from its own
//! ChaCha stream, which keeps a day's realization independent of how many
//! random numbers earlier days consumed.
//!
//! Shiftable consumption has two drivers. With `true_params`, each period
//! receives one appliance run whose expected energy equals the modelled
//! response `a/c + b + d·θ`. Without it, appliances switch on with a duty
//! probability modulated by price and temperature.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::disagg::DisaggResult;
use crate::error::{dim_check, Error, Result};
use crate::model::{self, FitResult, UtilityParams};
use crate::stats;
use crate::types::{frobenius, CostVector, LoadMatrix, LoadRole, TemperatureMatrix, TimeGrid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApplianceSpec {
    pub name: String,
    pub power_kw: f64,
    /// Per-period preference weights (empty means uniform).
    pub weights: Vec<f64>,
    /// ON-probability per period in duty mode, before modulation.
    pub duty: f64,
    /// Exponent on `mean price / price` in duty mode.
    pub price_sensitivity: f64,
    /// Relative probability change per degree above 25 in duty mode.
    pub temp_sensitivity: f64,
    pub min_run: usize,
    pub max_run: usize,
}

impl ApplianceSpec {
    fn new(name: &str, power_kw: f64, duty: f64, runs: (usize, usize)) -> Self {
        Self {
            name: name.to_string(),
            power_kw,
            weights: Vec::new(),
            duty,
            price_sensitivity: 1.0,
            temp_sensitivity: 0.0,
            min_run: runs.0,
            max_run: runs.1,
        }
    }

    fn weight(&self, k: usize) -> f64 {
        self.weights.get(k).copied().unwrap_or(1.0)
    }
}

/// Short high-power bursts inside the fixed load that look like appliance
/// activity to the mixture model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikeSpec {
    pub per_day: usize,
    pub min_kw: f64,
    pub max_kw: f64,
    pub max_len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedProfile {
    /// Mean fixed load per period, kW. Interpolated linearly between period
    /// centers to give a smooth curve.
    pub levels_kw: Vec<f64>,
    /// Per-period temperature coupling, kW per degree (empty means none).
    pub temp_coeff_kw: Vec<f64>,
    /// Relative standard deviation of the per-day scale factor.
    pub day_jitter: f64,
    pub ceiling_kw: Option<f64>,
    pub spikes: Option<SpikeSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSpec {
    /// Range of the per-day mean temperature.
    pub day_mean_range: (f64, f64),
    /// Amplitude of the daily cycle, peaking mid-afternoon.
    pub daily_amplitude: f64,
    pub noise_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub grid: TimeGrid,
    pub n_days: usize,
    pub appliances: Vec<ApplianceSpec>,
    pub fixed: FixedProfile,
    pub temperature: TemperatureSpec,
    pub prices: CostVector,
    pub noise_std: f64,
    pub true_params: Option<UtilityParams>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub grid: TimeGrid,
    pub total: LoadMatrix,
    pub shiftable: LoadMatrix,
    pub fixed: LoadMatrix,
    /// `total − shiftable − fixed`, after the total was clamped at zero.
    pub noise: Array2<f64>,
    pub theta: TemperatureMatrix,
    pub cost: CostVector,
    pub params_used: Option<UtilityParams>,
    pub appliance_levels: Vec<f64>,
    /// `(instant, day)` positions of injected fixed-load spikes.
    pub spikes: Vec<(usize, usize)>,
    pub clamp_mass: f64,
}

/// Three-level tariff: off-peak overnight, shoulder, peak late afternoon.
pub fn tou_prices(periods_per_day: usize) -> CostVector {
    let values = (0..periods_per_day)
        .map(|k| {
            let hour = k as f64 * 24.0 / periods_per_day as f64;
            if (14.0..20.0).contains(&hour) {
                0.35
            } else if (7.0..22.0).contains(&hour) {
                0.20
            } else {
                0.12
            }
        })
        .collect();
    CostVector::new(values).expect("tariff values are positive")
}

fn default_fixed_levels(periods_per_day: usize) -> Vec<f64> {
    (0..periods_per_day)
        .map(|k| {
            let hour = (k as f64 + 0.5) * 24.0 / periods_per_day as f64;
            let morning = (-((hour - 7.5) / 1.5).powi(2)).exp();
            let evening = (-((hour - 19.5) / 2.5).powi(2)).exp();
            0.15 + 0.12 * morning + 0.22 * evening
        })
        .collect()
}

/// Draws a parameter set whose modelled shiftable energy per period stays
/// below `e_max` for temperatures up to `theta_max`. The split `b = a·c` is
/// the one the equal-weight regularized fit recovers.
pub fn sample_true_params(
    grid: &TimeGrid,
    cost: &CostVector,
    theta_max: f64,
    e_max: f64,
    fixed_levels_kw: &[f64],
    seed: u64,
) -> Result<UtilityParams> {
    let k = grid.periods_per_day();
    dim_check("tariff periods", k, cost.len())?;
    dim_check("fixed levels", k, fixed_levels_kw.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = grid.instants_per_period() as f64;
    let c = cost.values();
    let mut a = Vec::with_capacity(k);
    let mut b = Vec::with_capacity(k);
    let mut d = Vec::with_capacity(k);
    for (i, &ci) in c.iter().enumerate() {
        let hour = (i as f64 + 0.5) * 24.0 / k as f64;
        // Cooling demand concentrates in the afternoon.
        let warm = 0.3 + 0.7 * (-((hour - 15.0) / 4.0).powi(2)).exp();
        let di = rng.random_range(0.2..1.0) * warm * (0.5 * e_max / theta_max);
        let room = (e_max - di * theta_max).max(3.0);
        let intercept = rng.random_range(2.0..room);
        let ai = intercept * ci / (1.0 + ci * ci);
        a.push(ai);
        b.push(ai * ci);
        d.push(di);
    }
    let p = fixed_levels_kw.iter().map(|lv| lv * l).collect();
    UtilityParams::new(a, b, d, p, vec![0.0; k])
}

impl ScenarioSpec {
    /// Four appliances at distinct levels of at least 1 kW, fixed load capped
    /// at 0.5 kW, one-minute samples over 61 days.
    pub fn standard(seed: u64) -> Self {
        let appliances = vec![
            ApplianceSpec::new("dishwasher", 1.2, 0.08, (20, 60)),
            ApplianceSpec::new("washer-dryer", 2.0, 0.06, (30, 60)),
            ApplianceSpec::new("air-conditioner", 2.8, 0.10, (15, 45)),
            ApplianceSpec::new("electric-vehicle", 3.6, 0.04, (30, 60)),
        ];
        Self::with_appliances(appliances, None, seed)
    }

    /// Three appliances with close power levels plus short fixed-load spikes
    /// in the same range.
    pub fn similar_levels(seed: u64) -> Self {
        let appliances = vec![
            ApplianceSpec::new("kettle-like", 1.1, 0.08, (10, 40)),
            ApplianceSpec::new("dryer-like", 1.5, 0.06, (20, 60)),
            ApplianceSpec::new("heater-like", 2.0, 0.06, (20, 60)),
        ];
        let spikes = SpikeSpec {
            per_day: 6,
            min_kw: 0.9,
            max_kw: 1.6,
            max_len: 2,
        };
        Self::with_appliances(appliances, Some(spikes), seed)
    }

    fn with_appliances(appliances: Vec<ApplianceSpec>, spikes: Option<SpikeSpec>, seed: u64) -> Self {
        let grid = TimeGrid::minutes_by_hour();
        let prices = tou_prices(grid.periods_per_day());
        let temperature = TemperatureSpec {
            day_mean_range: (18.0, 32.0),
            daily_amplitude: 5.0,
            noise_std: 0.5,
        };
        let fixed = FixedProfile {
            levels_kw: default_fixed_levels(grid.periods_per_day()),
            temp_coeff_kw: Vec::new(),
            day_jitter: 0.05,
            ceiling_kw: Some(0.5),
            spikes,
        };
        let theta_max = temperature.day_mean_range.1 + temperature.daily_amplitude;
        // Roughly a quarter of each period at the mean appliance power.
        let p_mean = stats::mean(&appliances.iter().map(|a| a.power_kw).collect::<Vec<_>>());
        let e_max = 0.25 * grid.instants_per_period() as f64 * p_mean;
        let params = sample_true_params(&grid, &prices, theta_max, e_max, &fixed.levels_kw, seed ^ 0x5eed)
            .expect("preset dimensions are consistent");
        Self {
            grid,
            n_days: 61,
            appliances,
            fixed,
            temperature,
            prices,
            noise_std: 0.02,
            true_params: Some(params),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.grid.periods_per_day();
        let cfg = |msg: String| Err(Error::Config(msg));
        if self.n_days == 0 {
            return cfg("scenario needs at least one day".into());
        }
        if !(self.noise_std >= 0.0) {
            return cfg(format!("noise_std must be ≥ 0, got {}", self.noise_std));
        }
        if self.prices.len() != k {
            return cfg(format!("tariff has {} periods, grid has {k}", self.prices.len()));
        }
        if self.fixed.levels_kw.len() != k || self.fixed.levels_kw.iter().any(|v| !(*v >= 0.0)) {
            return cfg("fixed levels need one non-negative value per period".into());
        }
        if !self.fixed.temp_coeff_kw.is_empty() && self.fixed.temp_coeff_kw.len() != k {
            return cfg("fixed temperature coupling needs one value per period".into());
        }
        for a in &self.appliances {
            if !(a.power_kw > 0.0) {
                return cfg(format!("appliance {} needs a positive power level", a.name));
            }
            if !(0.0..=1.0).contains(&a.duty) {
                return cfg(format!("appliance {} duty must be a probability", a.name));
            }
            if a.min_run == 0 || a.min_run > a.max_run {
                return cfg(format!("appliance {} has an invalid run-length range", a.name));
            }
            if !a.weights.is_empty() && (a.weights.len() != k || a.weights.iter().any(|w| !(*w >= 0.0))) {
                return cfg(format!("appliance {} weights need one non-negative value per period", a.name));
            }
        }
        if let Some(p) = &self.true_params {
            p.validate()?;
            dim_check("true parameter periods", k, p.n_periods())?;
            if self.appliances.is_empty() {
                return cfg("true parameters need at least one appliance".into());
            }
        }
        if let Some(s) = &self.fixed.spikes {
            if s.max_len == 0 || !(s.min_kw > 0.0) || s.min_kw > s.max_kw {
                return cfg("spike specification is inconsistent".into());
            }
        }
        Ok(())
    }
}

fn day_rng(seed: u64, day: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(day as u64 + 1);
    rng
}

/// Smooth per-instant curve through period-center values.
fn interpolate_levels(levels: &[f64], grid: &TimeGrid) -> Vec<f64> {
    let k = levels.len();
    let l = grid.instants_per_period() as f64;
    (0..grid.instants_per_day())
        .map(|t| {
            let pos = (t as f64 + 0.5) / l - 0.5;
            if pos <= 0.0 {
                levels[0]
            } else if pos >= (k - 1) as f64 {
                levels[k - 1]
            } else {
                let lo = pos.floor() as usize;
                let frac = pos - lo as f64;
                levels[lo] * (1.0 - frac) + levels[lo + 1] * frac
            }
        })
        .collect()
}

struct DayDraw {
    theta: Vec<f64>,
    shiftable: Vec<f64>,
    fixed: Vec<f64>,
    noise: Vec<f64>,
    spikes: Vec<usize>,
}

fn draw_day(spec: &ScenarioSpec, day: usize, base_curve: &[f64]) -> DayDraw {
    let grid = &spec.grid;
    let (nt, k, l) = (grid.instants_per_day(), grid.periods_per_day(), grid.instants_per_period());
    let mut rng = day_rng(spec.seed, day);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let ts = &spec.temperature;
    let day_mean = rng.random_range(ts.day_mean_range.0..=ts.day_mean_range.1);
    let theta: Vec<f64> = (0..k)
        .map(|i| {
            let hour = (i as f64 + 0.5) * 24.0 / k as f64;
            let cycle = ts.daily_amplitude * (std::f64::consts::TAU * (hour - 15.0) / 24.0).cos();
            day_mean + cycle + ts.noise_std * std_normal.sample(&mut rng)
        })
        .collect();

    let scale = (1.0 + spec.fixed.day_jitter * std_normal.sample(&mut rng)).max(0.0);
    let mut fixed: Vec<f64> = base_curve
        .iter()
        .enumerate()
        .map(|(t, v)| {
            let coupling = spec
                .fixed
                .temp_coeff_kw
                .get(t / l)
                .map_or(0.0, |q| q * theta[t / l]);
            let mut v = (v * scale + coupling).max(0.0);
            if let Some(cap) = spec.fixed.ceiling_kw {
                v = v.min(cap);
            }
            v
        })
        .collect();

    let mut spikes = Vec::new();
    if let Some(s) = &spec.fixed.spikes {
        for _ in 0..s.per_day {
            let len = rng.random_range(1..=s.max_len);
            let start = rng.random_range(0..nt - len.min(nt - 1));
            let kw = rng.random_range(s.min_kw..=s.max_kw);
            let end = (start + len).min(nt);
            for (t, v) in fixed.iter_mut().enumerate().take(end).skip(start) {
                *v += kw;
                spikes.push(t);
            }
        }
    }

    let mut shiftable = vec![0.0; nt];
    let prices = spec.prices.values();
    if let Some(params) = &spec.true_params {
        let targets = model::predict_shiftable(params, &theta, &spec.prices)
            .expect("validated dimensions");
        for (i, &target) in targets.iter().enumerate() {
            let energy = target.max(0.0);
            // Appliances able to deliver the target inside one period.
            let able: Vec<usize> = (0..spec.appliances.len())
                .filter(|&j| spec.appliances[j].power_kw * l as f64 >= energy)
                .collect();
            let pool: Vec<usize> = if able.is_empty() {
                let strongest = (0..spec.appliances.len())
                    .max_by(|&x, &y| spec.appliances[x].power_kw.total_cmp(&spec.appliances[y].power_kw))
                    .expect("at least one appliance");
                vec![strongest]
            } else {
                able
            };
            let weights: Vec<f64> = pool.iter().map(|&j| spec.appliances[j].weight(i)).collect();
            let total_w: f64 = weights.iter().sum();
            let mut pick = pool[0];
            if total_w > 0.0 {
                let mut u = rng.random::<f64>() * total_w;
                for (&j, w) in pool.iter().zip(&weights) {
                    pick = j;
                    if u < *w {
                        break;
                    }
                    u -= w;
                }
            }
            let power = spec.appliances[pick].power_kw;
            // Stochastic rounding keeps the expected energy equal to the target.
            let exact = energy / power;
            let mut minutes = exact.floor();
            if rng.random::<f64>() < exact - minutes {
                minutes += 1.0;
            }
            let minutes = (minutes as usize).min(l);
            let offset = rng.random_range(0..=l - minutes);
            let start = i * l + offset;
            for v in &mut shiftable[start..start + minutes] {
                *v += power;
            }
        }
    } else {
        let mean_price = stats::mean(prices);
        for i in 0..k {
            for a in &spec.appliances {
                let prob = a.duty
                    * a.weight(i)
                    * (mean_price / prices[i]).powf(a.price_sensitivity)
                    * (1.0 + a.temp_sensitivity * (theta[i] - 25.0)).max(0.0);
                if rng.random::<f64>() < prob.clamp(0.0, 1.0) {
                    let len = rng.random_range(a.min_run..=a.max_run);
                    let start = i * l + rng.random_range(0..l);
                    for v in &mut shiftable[start..(start + len).min(nt)] {
                        *v += a.power_kw;
                    }
                }
            }
        }
    }

    let noise: Vec<f64> = (0..nt)
        .map(|_| {
            if spec.noise_std > 0.0 {
                spec.noise_std * std_normal.sample(&mut rng)
            } else {
                0.0
            }
        })
        .collect();

    DayDraw {
        theta,
        shiftable,
        fixed,
        noise,
        spikes,
    }
}

/// Generates a household. Deterministic in `spec.seed`.
pub fn generate(spec: &ScenarioSpec) -> Result<GroundTruth> {
    spec.validate()?;
    let grid = spec.grid;
    let (nt, k, nn) = (grid.instants_per_day(), grid.periods_per_day(), spec.n_days);
    let base_curve = interpolate_levels(&spec.fixed.levels_kw, &grid);

    let mut total = Array2::zeros((nt, nn));
    let mut shift = Array2::zeros((nt, nn));
    let mut fixed = Array2::zeros((nt, nn));
    let mut noise = Array2::zeros((nt, nn));
    let mut theta = Array2::zeros((k, nn));
    let mut spikes = Vec::new();
    let mut clamp_mass = 0.0;
    for day in 0..nn {
        let d = draw_day(spec, day, &base_curve);
        for t in 0..nt {
            let raw = d.shiftable[t] + d.fixed[t] + d.noise[t];
            let x = raw.max(0.0);
            clamp_mass += x - raw;
            total[[t, day]] = x;
            shift[[t, day]] = d.shiftable[t];
            fixed[[t, day]] = d.fixed[t];
            noise[[t, day]] = x - d.shiftable[t] - d.fixed[t];
        }
        for i in 0..k {
            theta[[i, day]] = d.theta[i];
        }
        spikes.extend(d.spikes.into_iter().map(|t| (t, day)));
    }
    let mut levels: Vec<f64> = spec.appliances.iter().map(|a| a.power_kw).collect();
    levels.sort_by(f64::total_cmp);
    Ok(GroundTruth {
        grid,
        total: LoadMatrix::new(total, LoadRole::Total)?,
        shiftable: LoadMatrix::new(shift, LoadRole::Shiftable)?,
        fixed: LoadMatrix::new(fixed, LoadRole::Fixed)?,
        noise,
        theta: TemperatureMatrix::new(theta)?,
        cost: spec.prices.clone(),
        params_used: spec.true_params.clone(),
        appliance_levels: levels,
        spikes,
        clamp_mass,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisaggMetrics {
    pub threshold_kw: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `|ΣX̃ˢ − ΣXˢ| / ΣXˢ`.
    pub shiftable_energy_error: f64,
    /// `‖X̃ˢ − Xˢ‖_F / ‖Xˢ‖_F`.
    pub shiftable_frobenius_error: f64,
    /// `‖X̃ᶠ − Xᶠ‖_F / ‖Xᶠ‖_F`.
    pub fixed_frobenius_error: f64,
    /// `‖X̃ − X‖_F / ‖X‖_F` for the total.
    pub total_error: f64,
    pub spike_instants: usize,
    /// Fixed-load spike instants that were labelled ON.
    pub spikes_flagged: usize,
}

fn relative(err: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        err / scale
    } else if err == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// ON/OFF F1 with the threshold at half the smallest appliance level, plus
/// normalized energy errors.
pub fn score_disaggregation(truth: &GroundTruth, result: &DisaggResult) -> Result<DisaggMetrics> {
    score_components(
        truth,
        result.shiftable.values(),
        result.fixed.values(),
        result.total_estimate.values(),
    )
}

pub fn score_components(
    truth: &GroundTruth,
    shiftable: &Array2<f64>,
    fixed: &Array2<f64>,
    total_estimate: &Array2<f64>,
) -> Result<DisaggMetrics> {
    let dim = truth.total.values().dim();
    for (name, m) in [("shiftable", shiftable), ("fixed", fixed), ("total", total_estimate)] {
        if m.dim() != dim {
            return Err(Error::Dimension(format!(
                "{name} estimate is {:?}, truth is {:?}",
                m.dim(),
                dim
            )));
        }
    }
    let threshold = 0.5 * truth.appliance_levels.first().copied().unwrap_or(0.0);
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&t, &p) in truth.shiftable.values().iter().zip(shiftable.iter()) {
        match (t > threshold, p > threshold) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fneg += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fneg == 0 { 1.0 } else { tp as f64 / (tp + fneg) as f64 };
    let f1 = if tp + fp + fneg == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
    };

    let spikes_flagged = truth
        .spikes
        .iter()
        .filter(|&&(t, n)| shiftable[[t, n]] > threshold)
        .count();
    if spikes_flagged > 0 {
        log::info!(
            "{spikes_flagged} of {} fixed-load spike instants were labelled shiftable",
            truth.spikes.len()
        );
    }

    let s_true = truth.shiftable.values();
    Ok(DisaggMetrics {
        threshold_kw: threshold,
        precision,
        recall,
        f1,
        shiftable_energy_error: relative((shiftable.sum() - s_true.sum()).abs(), s_true.sum()),
        shiftable_frobenius_error: relative(frobenius(&(shiftable - s_true)), frobenius(s_true)),
        fixed_frobenius_error: relative(
            frobenius(&(fixed - truth.fixed.values())),
            frobenius(truth.fixed.values()),
        ),
        total_error: relative(
            frobenius(&(total_estimate - truth.total.values())),
            frobenius(truth.total.values()),
        ),
        spike_instants: truth.spikes.len(),
        spikes_flagged,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub parameter: String,
    pub median_true: f64,
    pub median_real: f64,
    pub median_disagg: f64,
    /// Between the fit on metered components and the fit on estimates.
    pub corr_real_disagg: Option<f64>,
    pub corr_true_real: Option<f64>,
    pub corr_true_disagg: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub rows: Vec<RecoveryRow>,
}

impl RecoveryReport {
    pub fn row(&self, parameter: &str) -> Option<&RecoveryRow> {
        self.rows.iter().find(|r| r.parameter == parameter)
    }
}

pub fn score_parameter_recovery(
    true_params: &UtilityParams,
    fit_real: &FitResult,
    fit_disagg: &FitResult,
) -> Result<RecoveryReport> {
    let k = true_params.n_periods();
    dim_check("real fit periods", k, fit_real.params.n_periods())?;
    dim_check("disaggregated fit periods", k, fit_disagg.params.n_periods())?;
    let rows = true_params
        .named()
        .into_iter()
        .zip(fit_real.params.named())
        .zip(fit_disagg.params.named())
        .map(|(((name, t), (_, r)), (_, d))| RecoveryRow {
            parameter: name.to_string(),
            median_true: stats::median(t),
            median_real: stats::median(r),
            median_disagg: stats::median(d),
            corr_real_disagg: stats::pearson(r, d),
            corr_true_real: stats::pearson(t, r),
            corr_true_disagg: stats::pearson(t, d),
        })
        .collect();
    Ok(RecoveryReport { rows })
}

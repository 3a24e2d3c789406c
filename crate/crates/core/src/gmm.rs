//! One-dimensional Gaussian mixture over instantaneous shiftable load levels.
//!
//! Component 0 is pinned at mean zero and represents "no shiftable appliance
//! running"; its variance soaks up noise and small fixed-load leakage. The
//! remaining components learn the discrete power levels of the shiftable
//! appliances. Training is plain EM with the full normal density.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::stats;
use crate::types::{LoadMatrix, LoadRole};

/// Smallest admissible component variance (squared load units).
pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-6;

/// A component whose total responsibility falls below this fraction of the
/// sample count is retired: its prior is zeroed and it stops taking part in
/// extraction.
pub const COLLAPSE_FRACTION: f64 = 1e-8;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Priors, means and variances of the zero component plus the nonzero
/// Gaussians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmState {
    pub priors: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    /// `false` for components retired by collapse handling.
    pub active: Vec<bool>,
    pub variance_floor: f64,
    /// Components whose mean sits below this level keep modelling the
    /// residual but are not treated as appliance levels during extraction.
    #[serde(default)]
    pub min_level: f64,
}

/// Posterior component probabilities for every sample.
///
/// Stored as components × samples with the sample index `t * n_days + n`.
#[derive(Clone, Debug, PartialEq)]
pub struct Responsibilities {
    z: Array2<f64>,
    n_instants: usize,
    n_days: usize,
}

impl Responsibilities {
    /// Wraps a components × samples grid after checking each column is a
    /// probability vector.
    pub fn new(z: Array2<f64>, n_instants: usize, n_days: usize) -> Result<Self> {
        dim_check("responsibility columns", n_instants * n_days, z.ncols())?;
        for col in z.columns() {
            let s: f64 = col.sum();
            if col.iter().any(|v| !(0.0..=1.0).contains(v)) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidState(
                    "responsibilities must be probability vectors".to_string(),
                ));
            }
        }
        Ok(Self {
            z,
            n_instants,
            n_days,
        })
    }

    pub fn get(&self, j: usize, t: usize, n: usize) -> f64 {
        self.z[[j, t * self.n_days + n]]
    }

    pub fn n_components(&self) -> usize {
        self.z.nrows()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.z
    }

    /// Largest deviation of any per-sample posterior sum from one.
    pub fn max_normalization_error(&self) -> f64 {
        self.z
            .columns()
            .into_iter()
            .map(|c| (c.sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

impl GmmState {
    /// Builds a state after checking every invariant.
    pub fn new(
        priors: Vec<f64>,
        means: Vec<f64>,
        variances: Vec<f64>,
        variance_floor: f64,
    ) -> Result<Self> {
        let active = priors.iter().map(|&p| p > 0.0).collect();
        let state = Self {
            priors,
            means,
            variances,
            active,
            variance_floor,
            min_level: 0.0,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn n_components(&self) -> usize {
        self.priors.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.priors.len();
        if m == 0 {
            return Err(Error::InvalidState("mixture has no components".into()));
        }
        dim_check("mixture means", m, self.means.len())?;
        dim_check("mixture variances", m, self.variances.len())?;
        dim_check("mixture activity flags", m, self.active.len())?;
        if !(self.variance_floor > 0.0) {
            return Err(Error::InvalidState("variance floor must be positive".into()));
        }
        if self.priors.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::InvalidState("negative prior".into()));
        }
        let total: f64 = self.priors.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidState(format!("priors sum to {total}")));
        }
        if self.means[0] != 0.0 {
            return Err(Error::InvalidState("zero component mean must be 0".into()));
        }
        if self.means.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
            return Err(Error::InvalidState("means must be finite and non-negative".into()));
        }
        if let Some(j) = self
            .variances
            .iter()
            .position(|v| !(*v >= self.variance_floor) || !v.is_finite())
        {
            return Err(Error::InvalidState(format!(
                "variance of component {j} ({}) is below the floor {}",
                self.variances[j], self.variance_floor
            )));
        }
        Ok(())
    }

    /// Deterministic seed from a residual (shiftable-looking) load.
    ///
    /// Nonzero means sit at evenly spaced quantiles of the entries above the
    /// median entry; priors are uniform and every variance starts at the
    /// sample variance divided by the component count.
    pub fn initialize(residual: &LoadMatrix, n_gaussians: usize, variance_floor: f64) -> Result<Self> {
        Self::initialize_above(residual, n_gaussians, variance_floor, None)
    }

    /// Like [`GmmState::initialize`], but when `level` is given the means are
    /// seeded from the entries above it and it becomes the state's
    /// `min_level`. Falls back to the above-median entries when fewer than
    /// `n_gaussians` entries clear the level.
    pub fn initialize_above(
        residual: &LoadMatrix,
        n_gaussians: usize,
        variance_floor: f64,
        level: Option<f64>,
    ) -> Result<Self> {
        if n_gaussians == 0 {
            return Err(Error::Config("at least one nonzero Gaussian is required".into()));
        }
        if !(variance_floor > 0.0) {
            return Err(Error::Config("variance floor must be positive".into()));
        }
        let m = n_gaussians + 1;
        let mut entries: Vec<f64> = residual.values().iter().copied().collect();
        entries.sort_by(f64::total_cmp);
        let med = stats::quantile_sorted(&entries, 0.5);
        let cut = match level {
            Some(l) if entries.iter().filter(|&&v| v > l).count() >= n_gaussians => l,
            _ => med,
        };
        let upper: Vec<f64> = entries.iter().copied().filter(|&v| v > cut).collect();

        let mut means = vec![0.0; m];
        for j in 0..n_gaussians {
            let q = (j as f64 + 0.5) / n_gaussians as f64;
            means[j + 1] = if upper.is_empty() {
                (j + 1) as f64 * variance_floor.sqrt()
            } else {
                stats::quantile_sorted(&upper, q)
            };
        }

        let mean = stats::mean(&entries);
        let var = if entries.len() > 1 {
            entries.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (entries.len() - 1) as f64
        } else {
            0.0
        };
        let v0 = (var / m as f64).max(variance_floor);
        let mut state = Self::new(vec![1.0 / m as f64; m], means, vec![v0; m], variance_floor)?;
        state.min_level = level.unwrap_or(0.0).max(0.0);
        Ok(state)
    }

    fn check_variances(&self) -> Result<()> {
        if let Some(j) = self
            .variances
            .iter()
            .position(|v| !(*v >= self.variance_floor))
        {
            return Err(Error::InvalidState(format!(
                "variance of component {j} ({}) is below the floor {}",
                self.variances[j], self.variance_floor
            )));
        }
        Ok(())
    }

    /// Log of `π_j N(x; μ_j, σ_j²)` for every component; `-inf` for retired or
    /// zero-prior components.
    fn log_weighted_densities(&self, x: f64, out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            let p = self.priors[j];
            *o = if self.active[j] && p > 0.0 {
                let v = self.variances[j];
                let d = x - self.means[j];
                p.ln() - 0.5 * (LN_2PI + v.ln()) - 0.5 * d * d / v
            } else {
                f64::NEG_INFINITY
            };
        }
    }

    /// E-step: posterior probability of each component for every sample.
    pub fn e_step(&self, x: &LoadMatrix) -> Result<Responsibilities> {
        self.check_variances()?;
        let m = self.n_components();
        let (nt, nn) = x.values().dim();
        let mut z = Array2::zeros((m, nt * nn));
        let mut lw = vec![0.0; m];
        for (s, &xv) in x.values().iter().enumerate() {
            self.log_weighted_densities(xv, &mut lw);
            let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for l in lw.iter_mut() {
                *l = (*l - max).exp();
                total += *l;
            }
            for j in 0..m {
                z[[j, s]] = lw[j] / total;
            }
        }
        Ok(Responsibilities {
            z,
            n_instants: nt,
            n_days: nn,
        })
    }

    /// M-step: responsibility-weighted priors, means and variances.
    ///
    /// Means and variances are normalized by each component's total
    /// responsibility; the zero component's mean stays pinned at 0 and all
    /// variances are floored.
    pub fn m_step(&self, z: &Responsibilities, x: &LoadMatrix) -> Result<Self> {
        let m = self.n_components();
        dim_check("responsibility components", m, z.n_components())?;
        let (nt, nn) = x.values().dim();
        dim_check("responsibility samples", nt * nn, z.z.ncols())?;
        let count = (nt * nn) as f64;
        let xs: Vec<f64> = x.values().iter().copied().collect();

        let mut next = self.clone();
        for j in 0..m {
            let row = z.z.row(j);
            let weight: f64 = row.sum();
            if !self.active[j] || weight < COLLAPSE_FRACTION * count {
                if self.active[j] {
                    log::debug!("mixture component {j} collapsed (responsibility {weight:.3e})");
                }
                next.active[j] = false;
                next.priors[j] = 0.0;
                continue;
            }
            next.priors[j] = weight / count;
            let mean = if j == 0 {
                0.0
            } else {
                row.iter().zip(&xs).map(|(zj, xv)| zj * xv).sum::<f64>() / weight
            };
            let var = row
                .iter()
                .zip(&xs)
                .map(|(zj, xv)| zj * (xv - mean) * (xv - mean))
                .sum::<f64>()
                / weight;
            next.means[j] = mean.max(0.0);
            next.variances[j] = var.max(self.variance_floor);
        }
        let total: f64 = next.priors.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidState("every mixture component collapsed".into()));
        }
        for p in &mut next.priors {
            *p /= total;
        }
        Ok(next)
    }

    /// Total log-likelihood of the samples under the mixture.
    pub fn log_likelihood(&self, x: &LoadMatrix) -> Result<f64> {
        self.check_variances()?;
        let mut lw = vec![0.0; self.n_components()];
        let mut ll = 0.0;
        for &xv in x.values().iter() {
            self.log_weighted_densities(xv, &mut lw);
            let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = lw.iter().map(|l| (l - max).exp()).sum();
            ll += max + s.ln();
        }
        Ok(ll)
    }

    /// Nonzero means of the components still taking part in extraction,
    /// ascending.
    pub fn level_means(&self) -> Vec<f64> {
        let mut levels: Vec<f64> = (1..self.n_components())
            .filter(|&j| self.active[j] && self.means[j] >= self.min_level)
            .map(|j| self.means[j])
            .collect();
        levels.sort_by(f64::total_cmp);
        levels
    }

    /// Shiftable estimate: the largest nonzero mean not exceeding the total
    /// load at each sample (0 if none). Returns the shiftable estimate and the
    /// companion fixed estimate `x − shiftable`.
    pub fn extract_shiftable(&self, x: &LoadMatrix) -> Result<(LoadMatrix, LoadMatrix)> {
        let levels = self.level_means();
        let shift = x.values().mapv(|v| {
            let idx = levels.partition_point(|&mu| mu <= v);
            if idx == 0 {
                0.0
            } else {
                levels[idx - 1]
            }
        });
        let fixed = x.values() - &shift;
        let (fixed, _) = LoadMatrix::clamped(fixed, LoadRole::FixedEstimate)?;
        let shift = LoadMatrix::new(shift, LoadRole::ShiftableEstimate)?;
        Ok((shift, fixed))
    }
}

/// Runs `cycles` E+M iterations, returning the state and the log-likelihood
/// after each cycle.
pub fn run_em(state: &GmmState, x: &LoadMatrix, cycles: usize) -> Result<(GmmState, Vec<f64>)> {
    let mut s = state.clone();
    let mut trace = Vec::with_capacity(cycles);
    for _ in 0..cycles {
        let z = s.e_step(x)?;
        s = s.m_step(&z, x)?;
        trace.push(s.log_likelihood(x)?);
    }
    Ok((s, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lm(v: Array2<f64>) -> LoadMatrix {
        LoadMatrix::new(v, LoadRole::ShiftableEstimate).unwrap()
    }

    fn normal_pdf(x: f64, mu: f64, var: f64) -> f64 {
        (-(x - mu) * (x - mu) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
    }

    #[test]
    fn degenerate_prior_puts_all_mass_on_zero() {
        let s = GmmState::new(vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 2.0], vec![0.1; 3], 1e-6).unwrap();
        let x = lm(array![[0.0, 3.0], [1.5, 0.2]]);
        let z = s.e_step(&x).unwrap();
        for t in 0..2 {
            for n in 0..2 {
                assert_eq!(z.get(0, t, n), 1.0);
            }
        }
    }

    #[test]
    fn symmetric_midpoint_splits_evenly() {
        let s = GmmState::new(vec![0.5, 0.5], vec![0.0, 2.0], vec![0.7, 0.7], 1e-6).unwrap();
        let z = s.e_step(&lm(array![[1.0]])).unwrap();
        assert!((z.get(0, 0, 0) - 0.5).abs() < 1e-15);
        assert!((z.get(1, 0, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn posterior_matches_direct_density_evaluation() {
        let var = 0.7;
        let s = GmmState::new(vec![0.5, 0.5], vec![0.0, 2.0], vec![var, var], 1e-6).unwrap();
        let z = s.e_step(&lm(array![[2.0]])).unwrap();
        let phi0 = normal_pdf(2.0, 2.0, var);
        let phi2 = normal_pdf(2.0, 0.0, var);
        let expected = phi0 / (phi0 + phi2);
        assert!((z.get(1, 0, 0) - expected).abs() < 1e-14);
    }

    #[test]
    fn e_step_rejects_variance_below_floor() {
        let mut s = GmmState::new(vec![0.5, 0.5], vec![0.0, 2.0], vec![1.0, 1.0], 1e-6).unwrap();
        s.variances[1] = 1e-9;
        assert!(matches!(s.e_step(&lm(array![[1.0]])), Err(Error::InvalidState(_))));
    }

    #[test]
    fn point_mass_m_step() {
        let s = GmmState::new(vec![0.5, 0.5], vec![0.0, 1.0], vec![1.0, 1.0], 1e-6).unwrap();
        let x = lm(Array2::from_elem((3, 2), 5.0));
        let mut z = Array2::zeros((2, 6));
        z.row_mut(1).fill(1.0);
        let z = Responsibilities::new(z, 3, 2).unwrap();
        let next = s.m_step(&z, &x).unwrap();
        assert_eq!(next.means[1], 5.0);
        assert_eq!(next.variances[1], 1e-6);
        assert_eq!(next.means[0], 0.0);
        assert!((next.priors.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_responsibilities_give_global_mean() {
        let s = GmmState::new(vec![0.2, 0.4, 0.4], vec![0.0, 1.0, 3.0], vec![1.0; 3], 1e-6).unwrap();
        let x = lm(array![[1.0, 2.0], [4.0, 7.0]]);
        let mut z = Array2::zeros((3, 4));
        z.row_mut(1).fill(0.5);
        z.row_mut(2).fill(0.5);
        let z = Responsibilities::new(z, 2, 2).unwrap();
        let next = s.m_step(&z, &x).unwrap();
        let global = (1.0 + 2.0 + 4.0 + 7.0) / 4.0;
        assert!((next.means[1] - global).abs() < 1e-14);
        assert!((next.means[2] - global).abs() < 1e-14);
        // component 0 received nothing and is retired
        assert!(!next.active[0]);
    }

    #[test]
    fn single_component_log_likelihood_closed_form() {
        let var = 0.25;
        let s = GmmState::new(vec![1.0], vec![0.0], vec![var], 1e-6).unwrap();
        let x = lm(Array2::zeros((4, 3)));
        let ll = s.log_likelihood(&x).unwrap();
        let expected = 12.0 * normal_pdf(0.0, 0.0, var).ln();
        assert!((ll - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_prior_component_leaves_likelihood_unchanged() {
        let a = GmmState::new(vec![0.6, 0.4], vec![0.0, 2.0], vec![0.3, 0.2], 1e-6).unwrap();
        let b = GmmState::new(vec![0.6, 0.4, 0.0], vec![0.0, 2.0, 5.0], vec![0.3, 0.2, 1.0], 1e-6)
            .unwrap();
        let x = lm(array![[0.1, 2.2], [1.9, 0.0]]);
        assert_eq!(a.log_likelihood(&x).unwrap(), b.log_likelihood(&x).unwrap());
    }

    #[test]
    fn em_cycle_does_not_decrease_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = lm(Array2::from_shape_fn((40, 5), |_| {
            let level = [0.0, 1.5, 3.0][rng.random_range(0..3)];
            level + rng.random::<f64>() * 0.2
        }));
        let mut s = GmmState::initialize(&x, 2, 1e-6).unwrap();
        let mut prev = s.log_likelihood(&x).unwrap();
        for _ in 0..20 {
            let z = s.e_step(&x).unwrap();
            s = s.m_step(&z, &x).unwrap();
            let ll = s.log_likelihood(&x).unwrap();
            assert!(ll - prev >= -1e-7, "{prev} -> {ll}");
            prev = ll;
        }
    }

    #[test]
    fn extraction_examples() {
        let s = GmmState::new(vec![0.4, 0.3, 0.3], vec![0.0, 1.0, 2.5], vec![0.1; 3], 1e-6).unwrap();
        let x = lm(array![[0.5, 2.7, 2.5]]).with_role(LoadRole::Total);
        let (shift, fixed) = s.extract_shiftable(&x).unwrap();
        assert_eq!(shift.values(), &array![[0.0, 2.5, 2.5]]);
        assert_eq!(fixed.values()[[0, 0]], 0.5);
        assert!((fixed.values()[[0, 1]] - 0.2).abs() < 1e-15);
        assert_eq!(fixed.values()[[0, 2]], 0.0);
    }

    #[test]
    fn initialization_is_valid_and_pinned() {
        let x = lm(array![[0.0, 0.0, 1.0], [2.0, 0.0, 3.0]]);
        let s = GmmState::initialize(&x, 3, 1e-6).unwrap();
        s.validate().unwrap();
        assert_eq!(s.means[0], 0.0);
        assert!(s.means[1] <= s.means[2] && s.means[2] <= s.means[3]);
        // all-zero input still initializes
        let s = GmmState::initialize(&lm(Array2::zeros((3, 3))), 2, 1e-6).unwrap();
        s.validate().unwrap();
    }
}

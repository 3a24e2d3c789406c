//! Orthonormal non-negative matrix factorization of the fixed-load estimate.
//!
//! `X ≈ W H` with `W` (instants × bases) kept close to the Stiefel manifold
//! (`WᵀW = I`). Coefficients use the standard multiplicative rule; the basis
//! uses the natural-gradient multiplicative rule whose denominator
//! `W H Xᵀ W` replaces the Euclidean `W H Hᵀ`.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_check, Error, Result};
use crate::types::{frobenius, LoadMatrix};

/// Added to every multiplicative-update denominator.
pub const DENOMINATOR_GUARD: f64 = 1e-12;

/// Orthonormality drift above which columns are renormalized.
pub const DEFAULT_DRIFT_BOUND: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct NmfFactors {
    /// Instants × bases; columns are the basis vectors.
    pub basis: Array2<f64>,
    /// Bases × days.
    pub coeffs: Array2<f64>,
}

fn multiplicative(base: &Array2<f64>, numer: &Array2<f64>, denom: &Array2<f64>) -> Array2<f64> {
    let mut out = base.clone();
    ndarray::Zip::from(&mut out)
        .and(numer)
        .and(denom)
        .for_each(|o, &n, &d| *o *= n / (d + DENOMINATOR_GUARD));
    out
}

/// Seeds factors for `xf` with `n_bases` columns.
///
/// Each basis column is supported on its own contiguous block of instants and
/// filled with normalized positive random values, so `WᵀW = I` holds exactly
/// at the start. Coefficients are the clamped projection `WᵀX`.
pub fn init_factors(xf: &LoadMatrix, n_bases: usize, seed: u64) -> Result<NmfFactors> {
    let t = xf.n_instants();
    if n_bases == 0 || n_bases >= t {
        return Err(Error::Config(format!(
            "number of bases must be in 1..{t} (got {n_bases})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis = Array2::zeros((t, n_bases));
    for b in 0..n_bases {
        let lo = b * t / n_bases;
        let hi = (b + 1) * t / n_bases;
        let mut col = basis.column_mut(b);
        for i in lo..hi {
            col[i] = 0.5 + rng.random::<f64>();
        }
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        col.mapv_inplace(|v| v / norm);
    }
    let coeffs = basis.t().dot(xf.values()).mapv(|v: f64| v.max(0.0));
    Ok(NmfFactors { basis, coeffs })
}

impl NmfFactors {
    pub fn n_bases(&self) -> usize {
        self.basis.ncols()
    }

    fn check(&self, x: &LoadMatrix) -> Result<()> {
        dim_check("basis rows vs instants", x.n_instants(), self.basis.nrows())?;
        dim_check("coefficient columns vs days", x.n_days(), self.coeffs.ncols())?;
        dim_check("coefficient rows vs bases", self.basis.ncols(), self.coeffs.nrows())
    }

    /// `W H`.
    pub fn reconstruction(&self) -> Array2<f64> {
        self.basis.dot(&self.coeffs)
    }

    /// `H ← H ∘ (WᵀX) ⊘ (WᵀW H)`.
    pub fn update_coeffs(&self, x: &LoadMatrix) -> Result<Self> {
        self.check(x)?;
        let numer = self.basis.t().dot(x.values());
        let denom = self.basis.t().dot(&self.basis).dot(&self.coeffs);
        Ok(Self {
            basis: self.basis.clone(),
            coeffs: multiplicative(&self.coeffs, &numer, &denom),
        })
    }

    /// `W ← W ∘ (X Hᵀ) ⊘ (W H Xᵀ W)`.
    pub fn update_basis(&self, x: &LoadMatrix) -> Result<Self> {
        self.check(x)?;
        let numer = x.values().dot(&self.coeffs.t());
        let xt_w = x.values().t().dot(&self.basis);
        let denom = self.basis.dot(&self.coeffs.dot(&xt_w));
        Ok(Self {
            basis: multiplicative(&self.basis, &numer, &denom),
            coeffs: self.coeffs.clone(),
        })
    }

    /// `‖X − W H‖_F²`.
    pub fn reconstruction_error(&self, x: &LoadMatrix) -> Result<f64> {
        self.check(x)?;
        let r = x.values() - &self.reconstruction();
        Ok(r.iter().map(|v| v * v).sum())
    }

    /// `‖WᵀW − I‖_F`.
    pub fn orthonormality_drift(&self) -> f64 {
        let mut g = self.basis.t().dot(&self.basis);
        for i in 0..g.nrows() {
            g[[i, i]] -= 1.0;
        }
        frobenius(&g)
    }

    /// Scales every basis column to unit norm, moving the scale into the
    /// matching coefficient row so `W H` is unchanged.
    pub fn renormalize_columns(&mut self) {
        for b in 0..self.n_bases() {
            let norm = self
                .basis
                .column(b)
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if norm > 0.0 {
                self.basis.column_mut(b).mapv_inplace(|v| v / norm);
                self.coeffs.row_mut(b).mapv_inplace(|v| v * norm);
            }
        }
    }

    /// Renormalizes when drift exceeds `bound`; returns whether it did.
    pub fn enforce_drift_bound(&mut self, bound: f64) -> bool {
        if self.orthonormality_drift() > bound {
            self.renormalize_columns();
            true
        } else {
            false
        }
    }

    /// One factorization sweep: coefficients, then basis, then unit column
    /// norms. The flag reports whether drift had passed `drift_bound` before
    /// rescaling.
    pub fn step(&self, x: &LoadMatrix, drift_bound: f64) -> Result<(Self, bool)> {
        let mut next = self.update_coeffs(x)?.update_basis(x)?;
        let renormalized = next.orthonormality_drift() > drift_bound;
        // The basis rule leaves column scale free: with coefficients updated
        // first, a column norm of c and then 1/c repeats forever and `WH`
        // stays off by that factor. Unit columns remove the cycle.
        next.renormalize_columns();
        Ok((next, renormalized))
    }

    pub fn is_nonnegative(&self) -> bool {
        self.basis.iter().chain(self.coeffs.iter()).all(|v| *v >= 0.0)
    }
}

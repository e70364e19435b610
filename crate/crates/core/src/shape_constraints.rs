//! Window weights, the Gaussian prior precision on spline coefficients and
//! the polyhedral cones that encode monotonicity and a unique inflection.
//!
//! Coefficients are 1-indexed (`γ_1 … γ_M`) in public APIs. Coefficients
//! whose window weight is zero are pinned to zero and removed, so all
//! matrices here act on the *free* coefficients only.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Relative prior variances `α_M(m)` of the spline coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowWeights {
    weights: Vec<f64>,
}

/// Planck-taper window on `M` coefficients with `M' = M - 4` and the
/// interior index `m' = m - 2`.
pub fn planck_taper_window(n_basis: usize) -> Result<WindowWeights> {
    if n_basis < 8 {
        return Err(Error::InvalidArgument(format!(
            "Planck-taper window needs M >= 8, got {n_basis}"
        )));
    }
    let inner = (n_basis - 4) as f64;
    let rise = |mp: f64| -> f64 {
        if mp <= 0.0 {
            0.0
        } else if mp < 0.1 * inner {
            1.0 / (1.0 + (0.1 * inner / mp - 0.1 * inner / (inner - mp)).exp())
        } else {
            1.0
        }
    };
    let weights = (1..=n_basis)
        .map(|m| {
            let mp = m as f64 - 2.0;
            if mp <= inner / 2.0 {
                rise(mp)
            } else {
                rise(inner + 1.0 - mp)
            }
        })
        .collect();
    Ok(WindowWeights { weights })
}

impl WindowWeights {
    /// All weights equal to one: no pinned coefficients, uniform magnitude penalty.
    pub fn flat(n_basis: usize) -> Self {
        WindowWeights {
            weights: vec![1.0; n_basis],
        }
    }

    pub fn n_basis(&self) -> usize {
        self.weights.len()
    }

    /// Weight of the 1-based coefficient `m`.
    pub fn weight(&self, m: usize) -> f64 {
        self.weights[m - 1]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// 1-based indices of coefficients with positive weight.
    pub fn free_indices(&self) -> Vec<usize> {
        (1..=self.weights.len())
            .filter(|&m| self.weights[m - 1] > 0.0)
            .collect()
    }
}

/// Precision `Q(σ²_s, σ²_v)` on the free coefficients, with
/// `γᵀQγ = σ_s⁻² Σ_{m=2}^{M} (γ_m − γ_{m−1})² + σ_v⁻² Σ_free γ_m² / α_M(m)`
/// (pinned coefficients entering the differences as zeros).
#[derive(Clone, Debug)]
pub struct PriorPrecision {
    matrix: DMatrix<f64>,
    free: Vec<usize>,
    sigma2_s: f64,
    sigma2_v: f64,
    log_det: f64,
}

pub fn build_prior_precision(sigma2_s: f64, sigma2_v: f64, window: &WindowWeights) -> Result<PriorPrecision> {
    if !(sigma2_s > 0.0 && sigma2_v > 0.0) || !sigma2_s.is_finite() || !sigma2_v.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "prior variances must be positive and finite (σ²_s={sigma2_s}, σ²_v={sigma2_v})"
        )));
    }
    let n_basis = window.n_basis();
    let free = window.free_indices();
    let d = free.len();
    // position of each 1-based coefficient among the free ones
    let mut slot = vec![None; n_basis + 1];
    for (j, &m) in free.iter().enumerate() {
        slot[m] = Some(j);
    }
    let mut q = DMatrix::zeros(d, d);
    let inv_s = 1.0 / sigma2_s;
    for m in 2..=n_basis {
        let (a, b) = (slot[m - 1], slot[m]);
        if let Some(a) = a {
            q[(a, a)] += inv_s;
        }
        if let Some(b) = b {
            q[(b, b)] += inv_s;
        }
        if let (Some(a), Some(b)) = (a, b) {
            q[(a, b)] -= inv_s;
            q[(b, a)] -= inv_s;
        }
    }
    for (j, &m) in free.iter().enumerate() {
        q[(j, j)] += 1.0 / (sigma2_v * window.weight(m));
    }
    let chol = q.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v: &f64| v.ln()).sum::<f64>();
    Ok(PriorPrecision {
        matrix: q,
        free,
        sigma2_s,
        sigma2_v,
        log_det,
    })
}

impl PriorPrecision {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn free_indices(&self) -> &[usize] {
        &self.free
    }

    pub fn dim(&self) -> usize {
        self.free.len()
    }

    pub fn sigma2_s(&self) -> f64 {
        self.sigma2_s
    }

    pub fn sigma2_v(&self) -> f64 {
        self.sigma2_v
    }

    /// `log det Q`.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn quadratic_form(&self, free_coeffs: &[f64]) -> f64 {
        let v = DVector::from_column_slice(free_coeffs);
        (v.transpose() * &self.matrix * &v)[(0, 0)]
    }

    /// `Q⁻¹`, the covariance of the untruncated prior.
    pub fn covariance(&self) -> DMatrix<f64> {
        self.matrix
            .clone()
            .cholesky()
            .expect("prior precision is positive definite")
            .inverse()
    }
}

/// Nonnegativity plus the up-then-down ordering around the 1-based `peak`,
/// checked non-strictly on a full `M`-vector.
pub fn region_membership(gamma: &[f64], peak: usize) -> Result<bool> {
    let n = gamma.len();
    if peak < 1 || peak > n {
        return Err(Error::InvalidArgument(format!(
            "inflection index {peak} outside 1..={n}"
        )));
    }
    if gamma.iter().any(|g| !(*g >= 0.0)) {
        return Ok(false);
    }
    let up = gamma[..peak].windows(2).all(|w| w[0] <= w[1]);
    let down = gamma[peak - 1..].windows(2).all(|w| w[0] >= w[1]);
    Ok(up && down)
}

/// Shape of a coefficient cone.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cone {
    /// Nonnegative, nondecreasing up to `peak` (1-based), nonincreasing after.
    Unimodal { peak: usize },
    /// Componentwise nonnegative only.
    Nonnegative,
}

/// Difference matrix `D` on the free coefficients `γ_3 … γ_{M-2}` with
/// `Dγ_free ≥ 0 ⇔ γ ∈ Γ_peak` (boundary coefficients pinned to zero).
///
/// Rows are `γ_3 ≥ 0`, the upward differences up to the peak, the downward
/// differences after it, and `γ_{M-2} ≥ 0`. For a peak at either end one of
/// the nonnegativity rows is implied by the others and is dropped, making
/// `D` square; an interior peak needs both, so `D` has `M - 3` rows and full
/// column rank `M - 4`.
pub fn cone_to_orthant(peak: usize, n_basis: usize) -> Result<DMatrix<f64>> {
    if n_basis < 6 || peak < 3 || peak > n_basis - 2 {
        return Err(Error::InvalidArgument(format!(
            "inflection index {peak} outside 3..={} for M = {n_basis}",
            n_basis.saturating_sub(2)
        )));
    }
    let d = n_basis - 4;
    let col = |m: usize| m - 3;
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(d + 1);
    if peak > 3 {
        rows.push(vec![(col(3), 1.0)]);
    }
    for m in 4..=peak {
        rows.push(vec![(col(m), 1.0), (col(m - 1), -1.0)]);
    }
    for m in peak..=n_basis - 3 {
        rows.push(vec![(col(m), 1.0), (col(m + 1), -1.0)]);
    }
    if peak < n_basis - 2 {
        rows.push(vec![(col(n_basis - 2), 1.0)]);
    }
    let mut out = DMatrix::zeros(rows.len(), d);
    for (r, entries) in rows.iter().enumerate() {
        for &(c, v) in entries {
            out[(r, c)] = v;
        }
    }
    Ok(out)
}

/// A coefficient cone expressed on the free coefficients.
#[derive(Clone, Debug)]
pub struct ConstraintRegion {
    n_basis: usize,
    free: Vec<usize>,
    cone: Cone,
    matrix: DMatrix<f64>,
}

impl ConstraintRegion {
    /// S-shaped region: pinned `γ_1 = γ_2 = γ_{M-1} = γ_M = 0`, unimodal around `peak ∈ 3..=M-2`.
    pub fn unimodal(peak: usize, n_basis: usize) -> Result<Self> {
        let matrix = cone_to_orthant(peak, n_basis)?;
        Ok(ConstraintRegion {
            n_basis,
            free: (3..=n_basis - 2).collect(),
            cone: Cone::Unimodal { peak },
            matrix,
        })
    }

    /// Monotone-only region: every coefficient free and nonnegative.
    pub fn nonnegative(n_basis: usize) -> Self {
        ConstraintRegion {
            n_basis,
            free: (1..=n_basis).collect(),
            cone: Cone::Nonnegative,
            matrix: DMatrix::identity(n_basis, n_basis),
        }
    }

    pub fn cone(&self) -> Cone {
        self.cone
    }

    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn free_indices(&self) -> &[usize] {
        &self.free
    }

    pub fn dim(&self) -> usize {
        self.free.len()
    }

    /// `D`, mapping free coefficients to quantities that must be nonnegative.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn contains_free(&self, free: &[f64]) -> bool {
        let v = DVector::from_column_slice(free);
        (&self.matrix * v).iter().all(|x| *x >= 0.0)
    }

    /// Membership of a full `M`-vector, including exact pinned zeros.
    pub fn contains(&self, gamma: &[f64]) -> bool {
        if gamma.len() != self.n_basis {
            return false;
        }
        let pinned_ok = (1..=self.n_basis)
            .filter(|m| !self.free.contains(m))
            .all(|m| gamma[m - 1] == 0.0);
        pinned_ok && self.contains_free(&self.restrict(gamma))
    }

    /// Full `M`-vector with pinned entries set to exactly zero.
    pub fn embed(&self, free: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.n_basis];
        for (v, &m) in free.iter().zip(&self.free) {
            full[m - 1] = *v;
        }
        full
    }

    pub fn restrict(&self, gamma: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&m| gamma[m - 1]).collect()
    }

    /// Rounding-level repair onto the closed cone: clamps at zero and takes
    /// running maxima towards the peak. Exact in floating point, so the
    /// result always passes [`ConstraintRegion::contains_free`].
    pub fn project_onto(&self, free: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = free.iter().map(|v| v.max(0.0)).collect();
        if let Cone::Unimodal { peak } = self.cone {
            let p = peak - 3;
            let d = out.len();
            for j in 1..=p {
                out[j] = out[j].max(out[j - 1]);
            }
            for j in (p..d - 1).rev() {
                out[j] = out[j].max(out[j + 1]);
            }
        }
        out
    }

    /// A strictly interior point of the cone close to `free` (free
    /// coordinates): [`ConstraintRegion::project_onto`] plus a small tent
    /// that is strictly unimodal around the peak.
    pub fn interior_point_near(&self, free: &[f64]) -> Vec<f64> {
        let scale = free.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let eps = 1e-6 * scale.max(1e-3);
        let mut out = self.project_onto(free);
        let d = out.len();
        match self.cone {
            Cone::Nonnegative => out.iter_mut().for_each(|v| *v += eps),
            Cone::Unimodal { peak } => {
                let p = peak - 3;
                for (j, v) in out.iter_mut().enumerate() {
                    *v += eps * (d + 1 - j.abs_diff(p)) as f64;
                }
            }
        }
        out
    }

    /// Smallest entry of `D·free`.
    pub fn min_slack(&self, free: &[f64]) -> f64 {
        let v = DVector::from_column_slice(free);
        (&self.matrix * v).min()
    }
}

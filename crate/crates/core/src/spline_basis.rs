//! Quadratic B-spline and integrated-spline (I-spline) bases on `[L, U]`,
//! plus knot placement from a beta-kernel smoothed age distribution.
//!
//! A basis with `M` functions uses the knots `L = ζ_1 < … < ζ_{M-1} = U`.
//! Internally the knot vector is clamped (boundary knots repeated three
//! times), so that for `3 ≤ m ≤ M-2` the function `B_m` is supported on
//! `[ζ_{m-2}, ζ_{m+1}]` while the two boundary functions at each end keep a
//! nonzero slope at the boundary.

use crate::error::{Error, Result};
use statrs::function::gamma::ln_gamma;

/// Upper end of the age domain on which the smoothed density lives.
pub const AGE_DOMAIN_MAX: f64 = 120.0;

const CDF_CELLS: usize = 4096;
const QUANTILE_TOL_YEARS: f64 = 1e-8;

// Two-point Gauss-Legendre rule; exact for the quadratic pieces of B_m.
const GL2_NODE: f64 = 0.211_324_865_405_187_13;

/// Knot vector and basis dimension for quadratic B-splines / I-splines.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisSpec {
    knots: Vec<f64>,
    clamped: Vec<f64>,
    // cumulative[i][m] = ∫_L^{ζ_{i+1}} B_m(s) ds
    cumulative: Vec<Vec<f64>>,
}

impl BasisSpec {
    /// Builds a basis from the public knots `ζ_1 < … < ζ_{M-1}`; `M = knots.len() + 1`.
    pub fn new(knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 5 {
            return Err(Error::InvalidArgument(format!(
                "a basis needs at least 5 knots (M >= 6), got {}",
                knots.len()
            )));
        }
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::InvalidArgument("knots must be finite".into()));
        }
        for w in knots.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidArgument(format!(
                    "knots must be strictly increasing ({} followed by {})",
                    w[0], w[1]
                )));
            }
        }
        let lower = knots[0];
        let upper = *knots.last().unwrap();
        let mut clamped = Vec::with_capacity(knots.len() + 4);
        clamped.extend([lower, lower]);
        clamped.extend_from_slice(&knots);
        clamped.extend([upper, upper]);

        let mut spec = BasisSpec {
            knots,
            clamped,
            cumulative: Vec::new(),
        };
        spec.cumulative = spec.tabulate_integrals();
        Ok(spec)
    }

    /// Equally spaced knots on `[lower, upper]` with `n_basis` functions.
    pub fn uniform(lower: f64, upper: f64, n_basis: usize) -> Result<Self> {
        if n_basis < 6 || !(lower < upper) {
            return Err(Error::InvalidArgument(format!(
                "uniform basis needs M >= 6 and lower < upper (M={n_basis}, [{lower}, {upper}])"
            )));
        }
        let n_int = n_basis - 2;
        let knots = (0..=n_int)
            .map(|i| {
                if i == n_int {
                    upper
                } else {
                    lower + (upper - lower) * i as f64 / n_int as f64
                }
            })
            .collect();
        Self::new(knots)
    }

    pub fn n_basis(&self) -> usize {
        self.knots.len() + 1
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Knot `ζ_i` with the 1-based index used throughout the model.
    pub fn knot(&self, i: usize) -> f64 {
        self.knots[i - 1]
    }

    pub fn lower(&self) -> f64 {
        self.knots[0]
    }

    pub fn upper(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    /// Support of the 1-based basis function `B_m`.
    pub fn support(&self, m: usize) -> (f64, f64) {
        (self.clamped[m - 1], self.clamped[m + 2])
    }

    // index into `knots` of the interval containing t, clamped to the last interval at U
    fn interval(&self, t: f64) -> usize {
        let n = self.knots.len();
        if t >= self.knots[n - 2] {
            return n - 2;
        }
        match self
            .knots
            .binary_search_by(|k| k.partial_cmp(&t).expect("finite knots"))
        {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        }
    }

    // Nonzero quadratic B-splines at t: returns the 0-based index of the first
    // nonzero function and the three values (NURBS book A2.2).
    fn local_values(&self, t: f64) -> (usize, [f64; 3]) {
        let span = self.interval(t) + 2;
        let u = &self.clamped;
        let mut n = [1.0, 0.0, 0.0];
        let mut left = [0.0; 3];
        let mut right = [0.0; 3];
        for j in 1..=2 {
            left[j] = t - u[span + 1 - j];
            right[j] = u[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        (span - 2, n)
    }

    fn check_range(&self, t: f64) -> Result<()> {
        if !(t >= self.lower() && t <= self.upper()) {
            return Err(Error::OutOfRange {
                t,
                lower: self.lower(),
                upper: self.upper(),
            });
        }
        Ok(())
    }

    /// Values `B_1(t), …, B_M(t)`; errors outside `[L, U]`.
    pub fn bspline(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_basis()];
        self.bspline_into(t, &mut out)?;
        Ok(out)
    }

    pub fn bspline_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        self.check_range(t)?;
        if out.len() != self.n_basis() {
            return Err(Error::DimensionMismatch {
                expected: self.n_basis(),
                found: out.len(),
            });
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        let (first, vals) = self.local_values(t);
        out[first..first + 3].copy_from_slice(&vals);
        Ok(())
    }

    /// Values `I_m(t) = ∫_L^t B_m(s) ds`. Outside `[L, U]` the integrals are
    /// extended as constants (0 below `L`, `I_m(U)` above `U`).
    pub fn ispline(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n_basis()];
        self.ispline_into(t, &mut out);
        out
    }

    pub fn ispline_into(&self, t: f64, out: &mut [f64]) {
        assert_eq!(out.len(), self.n_basis(), "output length must equal M");
        if !(t > self.lower()) {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        if t >= self.upper() {
            out.copy_from_slice(self.cumulative.last().unwrap());
            return;
        }
        let i = self.interval(t);
        out.copy_from_slice(&self.cumulative[i]);
        let a = self.knots[i];
        let width = t - a;
        if width > 0.0 {
            for node in [GL2_NODE, 1.0 - GL2_NODE] {
                let (first, vals) = self.local_values(a + node * width);
                for (r, v) in vals.iter().enumerate() {
                    out[first + r] += 0.5 * width * v;
                }
            }
        }
    }

    fn tabulate_integrals(&self) -> Vec<Vec<f64>> {
        let m = self.n_basis();
        let mut rows = Vec::with_capacity(self.knots.len());
        let mut acc = vec![0.0; m];
        rows.push(acc.clone());
        for w in self.knots.windows(2) {
            let width = w[1] - w[0];
            for node in [GL2_NODE, 1.0 - GL2_NODE] {
                let (first, vals) = self.local_values(w[0] + node * width);
                for (r, v) in vals.iter().enumerate() {
                    acc[first + r] += 0.5 * width * v;
                }
            }
            rows.push(acc.clone());
        }
        rows
    }

    /// Curve value `γ·I(t)` and derivative `γ·B(t)`. The derivative is 0
    /// outside `[L, U]`, matching the constant extension of the value.
    pub fn curve(&self, gamma: &[f64], t: f64) -> Result<(f64, f64)> {
        if gamma.len() != self.n_basis() {
            return Err(Error::DimensionMismatch {
                expected: self.n_basis(),
                found: gamma.len(),
            });
        }
        let value = dot(gamma, &self.ispline(t));
        let derivative = if t >= self.lower() && t <= self.upper() {
            let (first, vals) = self.local_values(t);
            vals.iter().enumerate().map(|(r, v)| gamma[first + r] * v).sum()
        } else {
            0.0
        };
        Ok((value, derivative))
    }

    /// Derivative `γ·B(t)` without allocation; `t` must lie in `[L, U]`.
    pub fn derivative(&self, gamma: &[f64], t: f64) -> f64 {
        let (first, vals) = self.local_values(t.clamp(self.lower(), self.upper()));
        vals.iter().enumerate().map(|(r, v)| gamma[first + r] * v).sum()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Beta shape parameters `(α, β) = (ν s + 1, ν (1 - s) + 1)` of the kernel
/// centred at normalised location `s ∈ [0, 1]`; the kernel mode is `s`.
pub fn beta_kernel_shapes(nu: f64, s: f64) -> (f64, f64) {
    (nu * s + 1.0, nu * (1.0 - s) + 1.0)
}

#[derive(Clone, Debug)]
struct BetaKernel {
    a1: f64,
    b1: f64,
    log_norm: f64,
    weight: f64,
}

/// Smoothed age density on `[0, 120]`: an equal-weight mixture of beta
/// kernels, one per observed age, each with its mode at that age.
#[derive(Clone, Debug)]
pub struct SmoothedAgeDensity {
    nu: f64,
    kernels: Vec<BetaKernel>,
    grid_cdf: Vec<f64>,
    grid_density: Vec<f64>,
    mid_density: Vec<f64>,
}

/// Builds the smoothed density of `time_points` (years) with kernel
/// concentration `nu`.
pub fn smoothed_age_density(time_points: &[f64], nu: f64) -> Result<SmoothedAgeDensity> {
    if time_points.is_empty() {
        return Err(Error::InvalidArgument(
            "smoothed age density needs at least one time point".into(),
        ));
    }
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "kernel concentration must be positive, got {nu}"
        )));
    }
    if let Some(t) = time_points.iter().find(|t| !(**t >= 0.0 && **t <= AGE_DOMAIN_MAX)) {
        return Err(Error::InvalidArgument(format!(
            "time point {t} outside [0, {AGE_DOMAIN_MAX}]"
        )));
    }

    let mut sorted = time_points.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let total = sorted.len() as f64;
    let mut kernels: Vec<BetaKernel> = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let (a, b) = beta_kernel_shapes(nu, sorted[i] / AGE_DOMAIN_MAX);
        kernels.push(BetaKernel {
            a1: a - 1.0,
            b1: b - 1.0,
            log_norm: ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b),
            weight: (j - i) as f64 / total,
        });
        i = j;
    }

    let mut density = SmoothedAgeDensity {
        nu,
        kernels,
        grid_cdf: Vec::new(),
        grid_density: Vec::new(),
        mid_density: Vec::new(),
    };
    density.tabulate();
    Ok(density)
}

impl SmoothedAgeDensity {
    /// The uniform density on `[0, 120]` (a single Beta(1, 1) kernel).
    pub fn uniform() -> Self {
        let mut density = SmoothedAgeDensity {
            nu: 0.0,
            kernels: vec![BetaKernel {
                a1: 0.0,
                b1: 0.0,
                log_norm: 0.0,
                weight: 1.0,
            }],
            grid_cdf: Vec::new(),
            grid_density: Vec::new(),
            mid_density: Vec::new(),
        };
        density.tabulate();
        density
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// Density `ρ̂(t)` in units of 1/year; zero outside `[0, 120]`.
    pub fn density(&self, t: f64) -> f64 {
        if !(t >= 0.0 && t <= AGE_DOMAIN_MAX) {
            return 0.0;
        }
        let x = t / AGE_DOMAIN_MAX;
        let (lx, l1x) = (x.ln(), (1.0 - x).ln());
        self.kernels
            .iter()
            .map(|k| k.weight * kernel_at(k, lx, l1x))
            .sum::<f64>()
            / AGE_DOMAIN_MAX
    }

    fn tabulate(&mut self) {
        let h = AGE_DOMAIN_MAX / CDF_CELLS as f64;
        self.grid_density = (0..=CDF_CELLS).map(|i| self.density(i as f64 * h)).collect();
        self.mid_density = (0..CDF_CELLS).map(|i| self.density((i as f64 + 0.5) * h)).collect();
        let mut cdf = Vec::with_capacity(CDF_CELLS + 1);
        let mut acc = 0.0;
        cdf.push(0.0);
        for i in 0..CDF_CELLS {
            acc += h / 6.0 * (self.grid_density[i] + 4.0 * self.mid_density[i] + self.grid_density[i + 1]);
            cdf.push(acc);
        }
        // Simpson's rule is accurate to ~1e-12 here; renormalise so CDF(120) = 1 exactly.
        for v in cdf.iter_mut() {
            *v /= acc;
        }
        self.grid_cdf = cdf;
    }

    // ∫ over the first fraction u of cell i, using the quadratic interpolant
    fn cell_partial(&self, i: usize, u: f64) -> f64 {
        let h = AGE_DOMAIN_MAX / CDF_CELLS as f64;
        let (f0, fm, f1) = (self.grid_density[i], self.mid_density[i], self.grid_density[i + 1]);
        let (u2, u3) = (u * u, u * u * u);
        let raw = h
            * (f0 * (u - 1.5 * u2 + 2.0 * u3 / 3.0)
                + fm * (2.0 * u2 - 4.0 * u3 / 3.0)
                + f1 * (2.0 * u3 / 3.0 - 0.5 * u2));
        let full = self.grid_cdf[i + 1] - self.grid_cdf[i];
        let raw_full = h / 6.0 * (f0 + 4.0 * fm + f1);
        if raw_full > 0.0 {
            raw * full / raw_full
        } else {
            0.0
        }
    }

    /// Smoothed CDF at `t`.
    pub fn cdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        if t >= AGE_DOMAIN_MAX {
            return 1.0;
        }
        let h = AGE_DOMAIN_MAX / CDF_CELLS as f64;
        let i = ((t / h).floor() as usize).min(CDF_CELLS - 1);
        let u = (t - i as f64 * h) / h;
        self.grid_cdf[i] + self.cell_partial(i, u)
    }

    /// Smallest `t` with `cdf(t) ≥ p`, to within 1e-8 years.
    pub fn quantile(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return 0.0;
        }
        if p >= 1.0 {
            return AGE_DOMAIN_MAX;
        }
        let i = self.grid_cdf.partition_point(|&c| c < p).clamp(1, CDF_CELLS) - 1;
        let h = AGE_DOMAIN_MAX / CDF_CELLS as f64;
        let (mut lo, mut hi) = (i as f64 * h, (i + 1) as f64 * h);
        while hi - lo > QUANTILE_TOL_YEARS {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

#[inline]
fn kernel_at(k: &BetaKernel, lx: f64, l1x: f64) -> f64 {
    let mut log = k.log_norm;
    if k.a1 != 0.0 {
        log += k.a1 * lx;
    }
    if k.b1 != 0.0 {
        log += k.b1 * l1x;
    }
    log.exp()
}

/// Places `M - 1` knots on `[lower, upper]`: the boundaries plus `M - 3`
/// interior knots at equally spaced quantile levels `k / (M - 2)` of the
/// smoothed distribution restricted to `[lower, upper]`.
pub fn build_knots(density: &SmoothedAgeDensity, n_basis: usize, lower: f64, upper: f64) -> Result<BasisSpec> {
    if n_basis < 6 {
        return Err(Error::InvalidArgument(format!(
            "basis count must be at least 6, got {n_basis}"
        )));
    }
    if !(lower < upper) || lower < 0.0 || upper > AGE_DOMAIN_MAX {
        return Err(Error::InvalidArgument(format!(
            "knot range [{lower}, {upper}] must satisfy 0 <= lower < upper <= {AGE_DOMAIN_MAX}"
        )));
    }
    let (c_lo, c_hi) = (density.cdf(lower), density.cdf(upper));
    let n_int = n_basis - 2;
    let mut knots = Vec::with_capacity(n_basis - 1);
    knots.push(lower);
    for k in 1..n_int {
        let level = k as f64 / n_int as f64;
        let knot = density.quantile(c_lo + level * (c_hi - c_lo));
        let prev = *knots.last().unwrap();
        if !(knot > prev) || !(knot < upper) {
            return Err(Error::KnotCollision { level, knot: prev });
        }
        knots.push(knot);
    }
    knots.push(upper);
    BasisSpec::new(knots)
}

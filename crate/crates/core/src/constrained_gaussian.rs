//! Gaussian mass of polyhedral regions and exact sampling from Gaussians
//! truncated to them.
//!
//! Regions are written as `{x : Fx ≥ g}`. Probabilities use sequential
//! conditioning on a lower-trapezoidal factor of `F·L` (`LLᵀ = Σ`), with
//! plain Monte Carlo over the conditioning uniforms. Sampling follows
//! Hamiltonian trajectories that are exact for a Gaussian potential and
//! reflect off the constraint walls.

use crate::error::{Error, Result};
use crate::normal;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::{FRAC_PI_2, TAU};

/// Monte Carlo sample count used when none is configured.
pub const DEFAULT_N_MC: usize = 4096;

/// Mean and covariance of a multivariate Gaussian, with a cached square root.
#[derive(Clone, Debug)]
pub struct GaussianParams {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl GaussianParams {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != cov.ncols() || cov.nrows() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                found: cov.nrows(),
            });
        }
        let sym = (&cov + cov.transpose()) * 0.5;
        let chol = sym.clone().cholesky().ok_or(Error::NotPositiveDefinite)?.unpack();
        Ok(GaussianParams { mean, cov: sym, chol })
    }

    /// Gaussian with density `∝ exp(−½xᵀPx + hᵀx)`.
    pub fn from_canonical(precision: &DMatrix<f64>, h: &DVector<f64>) -> Result<Self> {
        let sym = (precision + precision.transpose()) * 0.5;
        let chol = sym.cholesky().ok_or(Error::NotPositiveDefinite)?;
        let mean = chol.solve(h);
        let cov = chol.inverse();
        Self::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Lower Cholesky factor `L` with `LLᵀ = Σ`.
    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// Marginal over the coordinates `start..start + len`.
    pub fn marginal(&self, start: usize, len: usize) -> Result<GaussianParams> {
        if start + len > self.dim() || len == 0 {
            return Err(Error::InvalidArgument(format!(
                "marginal block {start}..{} outside dimension {}",
                start + len,
                self.dim()
            )));
        }
        GaussianParams::new(
            self.mean.rows(start, len).into_owned(),
            self.cov.view((start, start), (len, len)).into_owned(),
        )
    }

    fn whiten(&self, x: &DVector<f64>) -> DVector<f64> {
        self.chol
            .solve_lower_triangular(&(x - &self.mean))
            .expect("Cholesky factor has a positive diagonal")
    }

    fn unwhiten(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.mean + &self.chol * w
    }
}

/// The region `{x : Fx ≥ g}` together with a point known to lie in it.
#[derive(Clone, Debug)]
pub struct LinearConstraints {
    f: DMatrix<f64>,
    g: DVector<f64>,
    witness: DVector<f64>,
}

impl LinearConstraints {
    pub fn new(f: DMatrix<f64>, g: DVector<f64>, witness: DVector<f64>) -> Result<Self> {
        if f.nrows() == 0 {
            return Err(Error::InvalidArgument("constraint matrix has no rows".into()));
        }
        if g.len() != f.nrows() {
            return Err(Error::DimensionMismatch {
                expected: f.nrows(),
                found: g.len(),
            });
        }
        if witness.len() != f.ncols() {
            return Err(Error::DimensionMismatch {
                expected: f.ncols(),
                found: witness.len(),
            });
        }
        let out = LinearConstraints { f, g, witness };
        if out.min_slack(&out.witness) < -1e-12 {
            return Err(Error::Infeasible("witness point violates the constraints".into()));
        }
        Ok(out)
    }

    /// The cone `{x : Fx ≥ 0}`, witnessed by the origin.
    pub fn cone(f: DMatrix<f64>) -> Result<Self> {
        let (r, d) = f.shape();
        Self::new(f, DVector::zeros(r), DVector::zeros(d))
    }

    /// The same region with `lead` unconstrained coordinates prepended.
    pub fn with_free_prefix(&self, lead: usize) -> LinearConstraints {
        let (r, d) = self.f.shape();
        let mut f = DMatrix::zeros(r, lead + d);
        f.view_mut((0, lead), (r, d)).copy_from(&self.f);
        let mut witness = DVector::zeros(lead + d);
        witness.rows_mut(lead, d).copy_from(&self.witness);
        LinearConstraints {
            f,
            g: self.g.clone(),
            witness,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn bounds(&self) -> &DVector<f64> {
        &self.g
    }

    pub fn witness(&self) -> &DVector<f64> {
        &self.witness
    }

    pub fn n_rows(&self) -> usize {
        self.f.nrows()
    }

    pub fn dim(&self) -> usize {
        self.f.ncols()
    }

    /// `min_i (Fx − g)_i`.
    pub fn min_slack(&self, x: &DVector<f64>) -> f64 {
        (&self.f * x - &self.g).min()
    }
}

/// A probability kept on the log scale with its relative standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogProbability {
    pub log_value: f64,
    pub rel_se: f64,
}

impl LogProbability {
    pub fn value(&self) -> f64 {
        self.log_value.exp()
    }

    pub fn std_error(&self) -> f64 {
        self.value() * self.rel_se
    }
}

/// Sequential-conditioning integrator for `P(Cw ≥ b)`, `w ~ N(0, I)`.
///
/// `C = TQᵀ` with `T` lower-trapezoidal; since `Qᵀw` is again standard
/// normal, each row of `T` bounds one coordinate given the earlier ones.
#[derive(Clone, Debug)]
pub struct GenzPlan {
    rows: Vec<Vec<f64>>,
    by_col: Vec<Vec<usize>>,
    // rows with no usable coefficient: `0 ≥ b_i`
    degenerate: Vec<usize>,
    // original index of each plan row
    order: Vec<usize>,
    // exponential tilt per column, empty for plain conditioning
    tilt: Vec<f64>,
}

impl GenzPlan {
    pub fn new(c: &DMatrix<f64>) -> Self {
        let (r, d) = c.shape();
        let qr = c.transpose().qr();
        let t = qr.r().transpose();
        Self::from_factor(&t, r.min(d), (0..r).collect())
    }

    /// Plan with the conditioning order chosen greedily for the bounds `b`:
    /// each step takes the remaining constraint with the smallest
    /// conditional probability, given the expected values of the earlier
    /// coordinates. This is a pivoted Cholesky factorization of `CCᵀ`.
    ///
    /// Exact ties (common when `b = 0`) are broken both ways and the plan
    /// whose tilt gives the smaller upper bound on the probability is kept.
    pub fn prioritized(c: &DMatrix<f64>, b: &[f64]) -> Self {
        let first = Self::ordered(c, b, false);
        let last = Self::ordered(c, b, true);
        if first.order == last.order {
            return first.tilted(b).0;
        }
        let (first, bound_first) = first.tilted(b);
        let (last, bound_last) = last.tilted(b);
        match (bound_first, bound_last) {
            (Some(a), Some(z)) if z < a => last,
            (None, Some(_)) => last,
            _ => first,
        }
    }

    fn ordered(c: &DMatrix<f64>, b: &[f64], prefer_last: bool) -> Self {
        let (r, d) = c.shape();
        assert_eq!(b.len(), r);
        let s = c * c.transpose();
        let mut l = DMatrix::<f64>::zeros(r, d);
        let mut resid: Vec<f64> = (0..r).map(|i| s[(i, i)]).collect();
        let mut remaining: Vec<usize> = (0..r).collect();
        let mut order = Vec::with_capacity(r);
        let mut y = Vec::with_capacity(d);
        for j in 0..d {
            let mut best: Option<(usize, f64)> = None;
            for (pos, &i) in remaining.iter().enumerate() {
                if !(resid[i] > 1e-12 * s[(i, i)]) {
                    continue;
                }
                let mut shift = b[i];
                for (lv, yv) in l.row(i).iter().zip(&y) {
                    shift -= lv * yv;
                }
                // the largest standardized bound has the smallest tail
                let lo = shift / resid[i].sqrt();
                if best.is_none_or(|(_, b)| lo > b || (prefer_last && lo == b)) {
                    best = Some((pos, lo));
                }
            }
            let Some((pos, lo)) = best else { break };
            let tail = normal::cdf(-lo);
            let p = remaining.remove(pos);
            let piv = resid[p].sqrt();
            l[(p, j)] = piv;
            for &i in &remaining {
                let mut v = s[(i, p)];
                for m in 0..j {
                    v -= l[(i, m)] * l[(p, m)];
                }
                let v = v / piv;
                l[(i, j)] = v;
                resid[i] -= v * v;
            }
            order.push(p);
            // mean of the standard normal truncated to (lo, ∞)
            y.push(if tail > 0.0 {
                (normal::log_pdf(lo) - tail.ln()).exp()
            } else {
                lo
            });
        }
        let k = order.len();
        order.extend(remaining);
        let t = DMatrix::from_fn(r, k, |i, j| l[(order[i], j)]);
        Self::from_factor(&t, k, order)
    }

    /// Adds the minimax tilt for bounds `b` (original row order) and
    /// returns the bound `ψ*` it attains.
    fn tilted(mut self, b: &[f64]) -> (Self, Option<f64>) {
        let plan = &mut self;
        let permuted: Vec<f64> = plan.order.iter().map(|&i| b[i]).collect();
        let full = plan.interior_point(&permuted).and_then(|x| {
            let m = x.len() - 1;
            let start = DVector::from_iterator(2 * m, x.rows(0, m).iter().chain(x.rows(0, m).iter()).copied());
            plan.minimax_tilt(&permuted, false, Some(&start))
        });
        let mut bound = None;
        if let Some((mu, _, psi)) = full.or_else(|| plan.minimax_tilt(&permuted, true, None)) {
            plan.tilt = mu;
            bound = Some(psi);
        }
        (self, bound)
    }

    /// A point with `t_i·x ≥ b_i + ‖t_i‖` for every row, from Gauss–Newton
    /// on the squared violations with backtracking.
    fn interior_point(&self, b: &[f64]) -> Option<DVector<f64>> {
        let n = (0..self.by_col.len()).rev().find(|&j| !self.by_col[j].is_empty())? + 1;
        let rows: Vec<(&[f64], f64)> = self
            .rows
            .iter()
            .zip(b)
            .filter(|(r, _)| !r.is_empty())
            .map(|(r, &bi)| (r.as_slice(), bi + r.iter().map(|v| v * v).sum::<f64>().sqrt()))
            .collect();
        let violation = |x: &DVector<f64>| -> f64 {
            rows.iter()
                .map(|(r, bi)| {
                    let v = bi - r.iter().zip(x.iter()).map(|(a, c)| a * c).sum::<f64>();
                    if v > 0.0 {
                        v * v
                    } else {
                        0.0
                    }
                })
                .sum()
        };
        let mut x = DVector::zeros(n);
        let mut f = violation(&x);
        for _ in 0..200 {
            if f == 0.0 {
                return Some(x);
            }
            let mut h = DMatrix::identity(n, n) * 1e-10;
            let mut g = DVector::zeros(n);
            for (r, bi) in &rows {
                let v = bi - r.iter().zip(x.iter()).map(|(a, c)| a * c).sum::<f64>();
                if v > 0.0 {
                    for (a, ra) in r.iter().enumerate() {
                        g[a] += ra * v;
                        for (c, rc) in r.iter().enumerate() {
                            h[(a, c)] += ra * rc;
                        }
                    }
                }
            }
            let step = h.cholesky()?.solve(&g);
            let mut t = 1.0;
            loop {
                let trial = &x + &step * t;
                let ft = violation(&trial);
                if ft < f {
                    x = trial;
                    f = ft;
                    break;
                }
                t *= 0.5;
                if t < 1e-10 {
                    return None;
                }
            }
        }
        None
    }

    /// Tilt parameters solving the minimax saddle-point equations of the
    /// exponentially tilted estimator. Each column's interval comes from all
    /// rows of its group; `None` when Levenberg–Marquardt iterations do not
    /// reach a stationary point.
    fn minimax_tilt(
        &self,
        b: &[f64],
        pivots_only: bool,
        start: Option<&DVector<f64>>,
    ) -> Option<(Vec<f64>, DVector<f64>, f64)> {
        let n = (0..self.by_col.len()).rev().find(|&j| !self.by_col[j].is_empty())? + 1;
        if n < 2 {
            return None;
        }
        // rows normalized by their coefficient on their own column
        let groups: Vec<Vec<(Vec<f64>, f64, bool)>> = (0..n)
            .map(|j| {
                let rows = if pivots_only {
                    &self.by_col[j][..self.by_col[j].len().min(1)]
                } else {
                    &self.by_col[j][..]
                };
                rows.iter()
                    .map(|&i| {
                        let row = &self.rows[i];
                        let a: Vec<f64> = row[..j].iter().map(|v| v / row[j]).collect();
                        (a, b[i] / row[j], row[j] > 0.0)
                    })
                    .collect()
            })
            .collect();
        let m = n - 1;
        let eval = |z: &DVector<f64>| -> Option<(DVector<f64>, DMatrix<f64>)> {
            let (x, mu) = (z.rows(0, m), z.rows(m, m));
            let mut g = DVector::zeros(2 * m);
            let mut jac = DMatrix::zeros(2 * m, 2 * m);
            for (j, group) in groups.iter().enumerate() {
                let muj = if j < m { mu[j] } else { 0.0 };
                let (mut lt, mut ut) = (f64::NEG_INFINITY, f64::INFINITY);
                let (mut ra, mut rc): (Option<&[f64]>, Option<&[f64]>) = (None, None);
                for (a, bound, lower) in group {
                    let mut v = *bound;
                    for (ai, xi) in a.iter().zip(x.iter()) {
                        v -= ai * xi;
                    }
                    let v = v - muj;
                    if *lower && v > lt {
                        lt = v;
                        ra = Some(a);
                    } else if !*lower && v < ut {
                        ut = v;
                        rc = Some(a);
                    }
                }
                if !(lt < ut) {
                    return None;
                }
                let (pl, pu) = if ut == f64::INFINITY {
                    (
                        if lt == f64::NEG_INFINITY {
                            0.0
                        } else {
                            normal::inverse_mills(lt)
                        },
                        0.0,
                    )
                } else if lt == f64::NEG_INFINITY {
                    (0.0, normal::inverse_mills(-ut))
                } else {
                    let mass = normal::interval_mass(lt, ut);
                    let lz = if mass > 0.0 {
                        mass.ln()
                    } else {
                        normal::log_interval_draw(lt, ut, 0.5).0
                    };
                    if !lz.is_finite() {
                        return None;
                    }
                    ((normal::log_pdf(lt) - lz).exp(), (normal::log_pdf(ut) - lz).exp())
                };
                let lt_pl = if pl == 0.0 { 0.0 } else { lt * pl };
                let ut_pu = if pu == 0.0 { 0.0 } else { ut * pu };
                // second derivatives of log(Φ(ut) − Φ(lt))
                let dpl_dl = pl * pl - lt_pl;
                let dpl_du = -pl * pu;
                let dpu_dl = pu * pl;
                let dpu_du = -ut_pu - pu * pu;
                // derivatives of P = pl − pu with respect to lt and ut
                let dp_dl = dpl_dl - dpu_dl;
                let dp_du = dpl_du - dpu_du;
                let coef = |r: Option<&[f64]>, i: usize| r.map_or(0.0, |a| a.get(i).copied().unwrap_or(0.0));
                if j < m {
                    g[m + j] = mu[j] - x[j] + pl - pu;
                    jac[(m + j, m + j)] = 1.0 - dp_dl - dp_du;
                    jac[(m + j, j)] -= 1.0;
                }
                for i in 0..j.min(m) {
                    let (ai, ci) = (coef(ra, i), coef(rc, i));
                    g[i] += pl * ai - pu * ci;
                    // with respect to x_k through lt and ut
                    for k in 0..j.min(m) {
                        let (ak, ck) = (coef(ra, k), coef(rc, k));
                        jac[(i, k)] += ai * (-dpl_dl * ak - dpl_du * ck) - ci * (-dpu_dl * ak - dpu_du * ck);
                    }
                    if j < m {
                        jac[(i, m + j)] += ai * (-dpl_dl - dpl_du) - ci * (-dpu_dl - dpu_du);
                        jac[(m + j, i)] += -dp_dl * ai - dp_du * ci;
                    }
                }
            }
            for i in 0..m {
                g[i] -= mu[i];
                jac[(i, m + i)] -= 1.0;
            }
            Some((g, jac))
        };
        // start from sequential truncated means with no tilt
        let mut z = DVector::zeros(2 * m);
        if let Some(start) = start {
            z.copy_from(start);
        }
        for j in 0..if start.is_some() { 0 } else { m } {
            let (mut lt, mut ut) = (f64::NEG_INFINITY, f64::INFINITY);
            for (a, bound, lower) in &groups[j] {
                let mut v = *bound;
                for (ai, xi) in a.iter().zip(z.iter()) {
                    v -= ai * xi;
                }
                if *lower {
                    lt = lt.max(v);
                } else {
                    ut = ut.min(v);
                }
            }
            z[j] = match (lt.is_finite(), ut.is_finite()) {
                (false, false) => 0.0,
                (true, false) => normal::inverse_mills(lt),
                (false, true) => -normal::inverse_mills(-ut),
                (true, true) => 0.5 * (lt + ut),
            };
        }
        let (mut g, mut jac) = eval(&z)?;
        let mut f = g.norm_squared();
        let mut lambda = 1e-6;
        for _ in 0..300 {
            if g.amax() < 1e-10 {
                break;
            }
            let jt = jac.transpose();
            let mut a = &jt * &jac;
            for i in 0..2 * m {
                a[(i, i)] += lambda * (1.0 + a[(i, i)]);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 8.0;
                continue;
            };
            let trial = &z + chol.solve(&(-(&jt * &g)));
            match eval(&trial) {
                Some((g2, j2)) if g2.norm_squared() < f => {
                    f = g2.norm_squared();
                    z = trial;
                    g = g2;
                    jac = j2;
                    lambda = (lambda / 4.0).max(1e-12);
                }
                _ => {
                    lambda *= 8.0;
                    if lambda > 1e12 {
                        break;
                    }
                }
            }
        }
        if !(g.amax() < 1e-6) {
            log::debug!("tilt search stopped at gradient {:.3e}", g.amax());
            return None;
        }
        // ψ at the saddle point, an upper bound on log P for the tilted weights
        let mut psi = 0.0;
        for (j, group) in groups.iter().enumerate() {
            let muj = if j < m { z[m + j] } else { 0.0 };
            let (mut lt, mut ut) = (f64::NEG_INFINITY, f64::INFINITY);
            for (a, bound, lower) in group {
                let v = bound - a.iter().zip(z.iter()).map(|(ai, xi)| ai * xi).sum::<f64>() - muj;
                if *lower {
                    lt = lt.max(v);
                } else {
                    ut = ut.min(v);
                }
            }
            psi += normal::log_interval_draw(lt, ut, 0.5).0;
            if j < m {
                psi += 0.5 * muj * muj - z[j] * muj;
            }
        }
        let mut mu: Vec<f64> = z.rows(m, m).iter().copied().collect();
        mu.resize(self.by_col.len(), 0.0);
        Some((mu, z, psi))
    }

    fn from_factor(t: &DMatrix<f64>, k: usize, order: Vec<usize>) -> Self {
        let r = t.nrows();
        let mut rows = Vec::with_capacity(r);
        let mut by_col = vec![Vec::new(); k];
        let mut degenerate = Vec::new();
        for i in 0..r {
            let row: Vec<f64> = (0..k).map(|j| t[(i, j)]).collect();
            let scale = row.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            let last = (0..k).rev().find(|&j| row[j].abs() > 1e-12 * scale && row[j] != 0.0);
            match last {
                Some(j) => {
                    by_col[j].push(i);
                    rows.push(row[..=j].to_vec());
                }
                None => {
                    degenerate.push(i);
                    rows.push(Vec::new());
                }
            }
        }
        GenzPlan {
            rows,
            by_col,
            degenerate,
            order,
            tilt: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Whether paths are drawn under an exponential tilt.
    pub fn is_tilted(&self) -> bool {
        !self.tilt.is_empty()
    }

    /// Estimate `log P(Cw ≥ b)` from `n_mc` conditioning paths.
    pub fn log_probability<R: Rng + ?Sized>(&self, b: &[f64], n_mc: usize, rng: &mut R) -> LogProbability {
        assert_eq!(b.len(), self.rows.len());
        let zero = LogProbability {
            log_value: f64::NEG_INFINITY,
            rel_se: 0.0,
        };
        let b: Vec<f64> = self.order.iter().map(|&i| b[i]).collect();
        if self.degenerate.iter().any(|&i| b[i] > 1e-12) {
            return zero;
        }
        let k = self.by_col.len();
        let last_used = match (0..k).rev().find(|&j| !self.by_col[j].is_empty()) {
            Some(j) => j,
            None => {
                return LogProbability {
                    log_value: 0.0,
                    rel_se: 0.0,
                }
            }
        };
        let mut w = vec![0.0; k];
        let mut logs = Vec::with_capacity(n_mc.max(1));
        let tilted = !self.tilt.is_empty();
        for _ in 0..n_mc.max(1) {
            let mut log_acc = 0.0;
            let mut prod = 1.0;
            let mut shift = 0.0;
            for j in 0..=last_used {
                let group = &self.by_col[j];
                let u: f64 = rng.random();
                if group.is_empty() {
                    w[j] = normal::quantile(u.max(f64::MIN_POSITIVE));
                    continue;
                }
                let mut lo = f64::NEG_INFINITY;
                let mut hi = f64::INFINITY;
                for &i in group {
                    let row = &self.rows[i];
                    let mut rhs = b[i];
                    for l in 0..j {
                        rhs -= row[l] * w[l];
                    }
                    let tij = row[j];
                    if tij > 0.0 {
                        lo = lo.max(rhs / tij);
                    } else {
                        hi = hi.min(rhs / tij);
                    }
                }
                if lo >= hi {
                    prod = 0.0;
                    break;
                }
                let mu = if tilted { self.tilt[j] } else { 0.0 };
                let mass = if j == last_used {
                    normal::interval_mass(lo, hi)
                } else {
                    let (mass, z) = normal::interval_draw(lo - mu, hi - mu, u);
                    w[j] = mu + z;
                    mass
                };
                let mass = if mass > 0.0 {
                    mass
                } else {
                    // underflow: redo on the log scale
                    let (lm, z) = normal::log_interval_draw(lo - mu, hi - mu, u);
                    if j != last_used {
                        w[j] = mu + z;
                    }
                    if lm == f64::NEG_INFINITY {
                        prod = 0.0;
                        break;
                    }
                    log_acc += lm;
                    1.0
                };
                if j != last_used {
                    shift -= mu * (0.5 * mu + (w[j] - mu));
                }
                if mass < 1e-100 {
                    log_acc += mass.ln();
                } else {
                    prod *= mass;
                }
                if prod < 1e-100 {
                    log_acc += prod.ln();
                    prod = 1.0;
                }
            }
            logs.push(log_acc + prod.ln() + shift);
        }
        summarize_log_weights(&logs)
    }
}

/// Log of the sample mean of `exp(logs)` with the relative standard error of that mean.
pub fn summarize_log_weights(logs: &[f64]) -> LogProbability {
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY || logs.is_empty() {
        return LogProbability {
            log_value: f64::NEG_INFINITY,
            rel_se: 0.0,
        };
    }
    let n = logs.len() as f64;
    let (mut s1, mut s2) = (0.0, 0.0);
    for l in logs {
        let e = (l - top).exp();
        s1 += e;
        s2 += e * e;
    }
    let mean = s1 / n;
    let var = if logs.len() > 1 {
        ((s2 / n - mean * mean) * n / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    LogProbability {
        log_value: top + mean.ln(),
        rel_se: (var / n).sqrt() / mean,
    }
}

/// `P(Fx ≥ g)` for `x ~ N(μ, Σ)` as `(estimate, standard error)`.
pub fn region_probability(p: &GaussianParams, c: &LinearConstraints, n_mc: usize, seed: u64) -> Result<(f64, f64)> {
    if c.dim() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            found: c.dim(),
        });
    }
    let b = c.bounds() - c.matrix() * p.mean();
    let plan = GenzPlan::prioritized(&(c.matrix() * p.cholesky_factor()), b.as_slice());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let est = plan.log_probability(b.as_slice(), n_mc, &mut rng);
    Ok((est.value(), est.std_error()))
}

/// Settings for the exact Hamiltonian sampler.
#[derive(Clone, Copy, Debug)]
pub struct HmcSettings {
    /// Integration time of one trajectory.
    pub travel_time: f64,
    /// Wall reflections allowed per trajectory before giving up.
    pub max_bounces: usize,
}

impl Default for HmcSettings {
    fn default() -> Self {
        HmcSettings {
            travel_time: FRAC_PI_2,
            max_bounces: 100_000,
        }
    }
}

/// A truncated Gaussian in whitened coordinates, ready for trajectories.
#[derive(Clone, Debug)]
pub struct ExactHmc<'a> {
    params: &'a GaussianParams,
    // whitened walls: f·w ≥ g
    walls: DMatrix<f64>,
    bounds: DVector<f64>,
    norms2: Vec<f64>,
    settings: HmcSettings,
}

impl<'a> ExactHmc<'a> {
    pub fn new(params: &'a GaussianParams, constraints: &LinearConstraints, settings: HmcSettings) -> Result<Self> {
        if constraints.dim() != params.dim() {
            return Err(Error::DimensionMismatch {
                expected: params.dim(),
                found: constraints.dim(),
            });
        }
        let walls = constraints.matrix() * params.cholesky_factor();
        let bounds = constraints.bounds() - constraints.matrix() * params.mean();
        let norms2 = walls.row_iter().map(|r| r.norm_squared()).collect();
        Ok(ExactHmc {
            params,
            walls,
            bounds,
            norms2,
            settings,
        })
    }

    fn slack(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.walls * w - &self.bounds
    }

    /// Move `x` strictly inside, nudging along the summed normals of the
    /// active walls when it starts on the boundary.
    fn interior_start(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut w = self.params.whiten(x);
        let mut step = 1e-8;
        for _ in 0..60 {
            let slack = self.slack(&w);
            if slack.iter().all(|s| *s > 0.0) {
                return Ok(w);
            }
            if slack.iter().any(|s| *s < -1e-9 * (1.0 + self.bounds.amax())) && step == 1e-8 {
                return Err(Error::Infeasible(format!(
                    "initial point violates a constraint by {:.3e}",
                    -slack.min()
                )));
            }
            let mut dir = DVector::zeros(w.len());
            for (i, s) in slack.iter().enumerate() {
                if *s <= 0.0 && self.norms2[i] > 0.0 {
                    dir += self.walls.row(i).transpose() / self.norms2[i].sqrt();
                }
            }
            let n = dir.norm();
            if n == 0.0 {
                break;
            }
            w += dir * (step / n);
            step *= 2.0;
        }
        Err(Error::Infeasible(
            "could not move the initial point strictly inside the region".into(),
        ))
    }

    /// Run `n_traj` trajectories from `x` and return the end point.
    pub fn advance<R: Rng + ?Sized>(&self, x: &DVector<f64>, n_traj: usize, rng: &mut R) -> Result<DVector<f64>> {
        let mut w = self.interior_start(x)?;
        for _ in 0..n_traj {
            w = self.trajectory(w, rng)?;
        }
        Ok(self.params.unwhiten(&w))
    }

    fn trajectory<R: Rng + ?Sized>(&self, mut w: DVector<f64>, rng: &mut R) -> Result<DVector<f64>> {
        let d = w.len();
        let mut v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut remaining = self.settings.travel_time;
        let mut last_wall: Option<usize> = None;
        let mut bounces = 0usize;
        loop {
            let fa = &self.walls * &v;
            let fb = &self.walls * &w;
            let mut hit_t = f64::INFINITY;
            let mut hit_i = usize::MAX;
            for i in 0..self.walls.nrows() {
                let (a, b, g) = (fa[i], fb[i], self.bounds[i]);
                let r = a.hypot(b);
                if r == 0.0 || g < -r {
                    continue;
                }
                let t = if b - g <= 1e-14 * (1.0 + g.abs()) && a < 0.0 && last_wall != Some(i) {
                    0.0
                } else {
                    let phi = a.atan2(b);
                    let t = (phi + (g / r).clamp(-1.0, 1.0).acos()).rem_euclid(TAU);
                    if last_wall == Some(i) && (t < 1e-10 || t > TAU - 1e-10) {
                        continue;
                    }
                    t
                };
                if t < hit_t {
                    hit_t = t;
                    hit_i = i;
                }
            }
            if hit_t >= remaining {
                let (s, c) = remaining.sin_cos();
                return Ok(&w * c + &v * s);
            }
            let (s, c) = hit_t.sin_cos();
            let w_new = &w * c + &v * s;
            let v_new = &v * c - &w * s;
            w = w_new;
            let f = self.walls.row(hit_i).transpose();
            let proj = f.dot(&v_new) / self.norms2[hit_i];
            v = v_new - f * (2.0 * proj);
            remaining -= hit_t;
            last_wall = Some(hit_i);
            bounces += 1;
            if bounces > self.settings.max_bounces {
                return Err(Error::Sampler(format!(
                    "trajectory exceeded {} wall reflections",
                    self.settings.max_bounces
                )));
            }
        }
    }
}

/// `n` successive draws of a Markov chain targeting `N(μ, Σ)` restricted to
/// `{Fx ≥ g}`, one trajectory per draw, returned as rows of an `n×d` matrix.
pub fn sample_constrained(
    p: &GaussianParams,
    c: &LinearConstraints,
    n: usize,
    seed: u64,
    init: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    if init.len() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            found: init.len(),
        });
    }
    let hmc = ExactHmc::new(p, c, HmcSettings::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(n, p.dim());
    let mut w = hmc.interior_start(init)?;
    for i in 0..n {
        w = hmc.trajectory(w, &mut rng)?;
        out.row_mut(i).copy_from(&p.unwhiten(&w).transpose());
    }
    Ok(out)
}

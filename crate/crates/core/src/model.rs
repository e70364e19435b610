//! The hierarchical random-intercept model: configuration, parameter state,
//! likelihood, priors and the Gaussian full conditional of `(β_k, γ_k)`.
//!
//! `y_ijk = f_k(t_ij) + x_iᵀβ_k + ω_ik + ε_ijk`, `ε ~ N(0, σ²_obs)`,
//! `ω_ik ~ N(0, σ²_rnd)`, with `f_k` an I-spline curve (or a logistic curve
//! for the parametric comparator).

use crate::config::{parse_range, KeyValueConfig};
use crate::constrained_gaussian::GaussianParams;
use crate::data::LongitudinalDataset;
use crate::error::{Error, Result};
use crate::normal::LN_SQRT_2PI;
use crate::shape_constraints::{
    build_prior_precision, planck_taper_window, ConstraintRegion, PriorPrecision, WindowWeights,
};
use crate::spline_basis::{build_knots, smoothed_age_density, BasisSpec, AGE_DOMAIN_MAX};
use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConstraintMode {
    /// Monotone, unique inflection, vanishing boundary derivatives.
    SShaped,
    /// Nonnegative coefficients only, flat magnitude penalty.
    MonotoneOnly,
    /// `h / (1 + exp(−(t − c)/s))`.
    LogisticParametric,
}

impl ConstraintMode {
    pub const ALL: [ConstraintMode; 3] = [
        ConstraintMode::SShaped,
        ConstraintMode::MonotoneOnly,
        ConstraintMode::LogisticParametric,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ConstraintMode::SShaped => "S_SHAPED",
            ConstraintMode::MonotoneOnly => "MONOTONE_ONLY",
            ConstraintMode::LogisticParametric => "LOGISTIC_PARAMETRIC",
        }
    }

    pub fn uses_splines(&self) -> bool {
        *self != ConstraintMode::LogisticParametric
    }
}

impl fmt::Display for ConstraintMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConstraintMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        ConstraintMode::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown model variant `{s}` (expected S_SHAPED, MONOTONE_ONLY or LOGISTIC_PARAMETRIC)"
                ))
            })
    }
}

/// Truncated-normal priors `N⁺(mean, sd²)` of the logistic comparator.
pub const LOGISTIC_PRIOR_C: (f64, f64) = (70.0, 30.0);
pub const LOGISTIC_PRIOR_S: (f64, f64) = (5.0, 1.0);
pub const LOGISTIC_PRIOR_H: (f64, f64) = (2.0, 1.0);

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub mode: ConstraintMode,
    pub n_basis: usize,
    /// Prior variance of each `β` coordinate (mean 0).
    pub beta_prior_var: f64,
    /// Inverse-gamma shape and scale shared by `σ²_obs` and `σ²_rnd`.
    pub ig_shape: f64,
    pub ig_scale: f64,
    /// `c` in the hyperprior `p(σ²) ∝ exp(−σ²/(2c²))` on `σ²_s` and `σ²_v`.
    pub hyper_scale: f64,
    pub knot_range: (f64, f64),
    /// Beta-kernel concentration for knot placement.
    pub kernel_nu: f64,
    /// Use shape `3 + KN` instead of `3 + KN/2` for `σ²_rnd`.
    pub rnd_shape_compat: bool,
}

const MODEL_KEYS: &[&str] = &[
    "variant",
    "n_basis",
    "beta_prior_var",
    "ig_shape",
    "ig_scale",
    "hyper_scale",
    "knot_range",
    "kernel_nu",
    "rnd_shape_compat",
];

impl ModelConfig {
    pub fn new(mode: ConstraintMode) -> Self {
        ModelConfig {
            mode,
            n_basis: 24,
            beta_prior_var: 100.0 * 100.0,
            ig_shape: 3.0,
            ig_scale: 0.5,
            hyper_scale: if mode == ConstraintMode::MonotoneOnly {
                0.01
            } else {
                1.0 / 20.0
            },
            knot_range: (0.0, AGE_DOMAIN_MAX),
            kernel_nu: 10.0,
            rnd_shape_compat: false,
        }
    }

    /// Keys: `variant`, `n_basis`, `beta_prior_var`, `ig_shape`, `ig_scale`,
    /// `hyper_scale`, `knot_range`, `kernel_nu`, `rnd_shape_compat`.
    /// The variant's defaults apply to unset keys.
    pub fn from_config(cfg: &KeyValueConfig) -> Result<Self> {
        cfg.reject_unknown(MODEL_KEYS, &[])?;
        let mode = match cfg.get("variant") {
            Some(v) => v.parse()?,
            None => ConstraintMode::SShaped,
        };
        let mut out = ModelConfig::new(mode);
        if let Some(v) = cfg.parsed("n_basis")? {
            out.n_basis = v;
        }
        if let Some(v) = cfg.parsed("beta_prior_var")? {
            out.beta_prior_var = v;
        }
        if let Some(v) = cfg.parsed("ig_shape")? {
            out.ig_shape = v;
        }
        if let Some(v) = cfg.parsed("ig_scale")? {
            out.ig_scale = v;
        }
        if let Some(v) = cfg.parsed("hyper_scale")? {
            out.hyper_scale = v;
        }
        if let Some(v) = cfg.get("knot_range") {
            out.knot_range = parse_range(v)?;
        }
        if let Some(v) = cfg.parsed("kernel_nu")? {
            out.kernel_nu = v;
        }
        if let Some(v) = cfg.parsed("rnd_shape_compat")? {
            out.rnd_shape_compat = v;
        }
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("beta_prior_var", self.beta_prior_var),
            ("ig_shape", self.ig_shape),
            ("ig_scale", self.ig_scale),
            ("hyper_scale", self.hyper_scale),
            ("kernel_nu", self.kernel_nu),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if self.mode == ConstraintMode::SShaped && self.n_basis < 8 {
            return Err(Error::InvalidArgument(format!(
                "the S-shaped model needs n_basis >= 8, got {}",
                self.n_basis
            )));
        }
        if self.mode.uses_splines() && self.n_basis < 6 {
            return Err(Error::InvalidArgument(format!(
                "n_basis must be at least 6, got {}",
                self.n_basis
            )));
        }
        let (lo, hi) = self.knot_range;
        if !(lo < hi) || lo < 0.0 || hi > AGE_DOMAIN_MAX {
            return Err(Error::InvalidArgument(format!("knot range [{lo}, {hi}] is invalid")));
        }
        Ok(())
    }

    /// `(key, value)` pairs in the config-file grammar.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("variant".into(), self.mode.to_string()),
            ("n_basis".into(), self.n_basis.to_string()),
            ("beta_prior_var".into(), self.beta_prior_var.to_string()),
            ("ig_shape".into(), self.ig_shape.to_string()),
            ("ig_scale".into(), self.ig_scale.to_string()),
            ("hyper_scale".into(), self.hyper_scale.to_string()),
            (
                "knot_range".into(),
                format!("{},{}", self.knot_range.0, self.knot_range.1),
            ),
            ("kernel_nu".into(), self.kernel_nu.to_string()),
            ("rnd_shape_compat".into(), self.rnd_shape_compat.to_string()),
        ]
    }
}

/// Logistic progression curve `h / (1 + exp(−(t − c)/s))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogisticCurve {
    pub c: f64,
    pub s: f64,
    pub h: f64,
}

impl LogisticCurve {
    pub fn value(&self, t: f64) -> f64 {
        self.h / (1.0 + (-(t - self.c) / self.s).exp())
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let e = (-(t - self.c) / self.s).exp();
        self.h * e / (self.s * (1.0 + e) * (1.0 + e))
    }
}

/// One full parameter configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    /// `β_k`, one `q`-vector per biomarker.
    pub beta: Vec<Vec<f64>>,
    /// `γ_k`, full `M`-vectors (pinned entries exactly 0); empty for the logistic model.
    pub gamma: Vec<Vec<f64>>,
    /// Logistic curve per biomarker; empty for spline models.
    pub logistic: Vec<LogisticCurve>,
    /// `ω[i][k]`.
    pub omega: Vec<Vec<f64>>,
    pub sigma2_obs: f64,
    pub sigma2_rnd: f64,
    pub sigma2_s: f64,
    pub sigma2_v: f64,
    /// Inflection index `m*_g` (1-based) per group; S-shaped model only.
    pub peaks: Vec<usize>,
}

/// One observed entry `y_ijk` with its cached basis row.
#[derive(Clone, Debug)]
pub struct Observation {
    pub subject: usize,
    pub t: f64,
    pub y: f64,
    /// `I_m(t)` at the free coefficient indices.
    pub ispline: Vec<f64>,
}

/// Observed data rearranged for the sampler.
#[derive(Clone, Debug)]
pub struct Design {
    pub x: Vec<Vec<f64>>,
    /// Observed entries per biomarker.
    pub obs: Vec<Vec<Observation>>,
    /// `J_ik`: observed count per subject and biomarker.
    pub counts: Vec<Vec<usize>>,
    /// `Σ z zᵀ` per biomarker, `z = (x_i, I_free(t_ij))`.
    pub gram: Vec<DMatrix<f64>>,
}

impl Design {
    fn new(ds: &LongitudinalDataset, basis: Option<&BasisSpec>, free: &[usize]) -> Self {
        let kk = ds.n_biomarkers();
        let q = ds.q();
        let d = free.len();
        let x: Vec<Vec<f64>> = ds.subjects.iter().map(|s| s.covariates.clone()).collect();
        let mut obs = vec![Vec::new(); kk];
        let mut counts = vec![vec![0usize; kk]; ds.n_subjects()];
        let mut full = vec![0.0; basis.map_or(0, BasisSpec::n_basis)];
        for (i, s) in ds.subjects.iter().enumerate() {
            for j in 0..s.n_visits() {
                let t = s.ages[j];
                if let Some(b) = basis {
                    b.ispline_into(t, &mut full);
                }
                let row: Vec<f64> = free.iter().map(|&m| full[m - 1]).collect();
                for k in 0..kk {
                    if s.observed[j][k] {
                        obs[k].push(Observation {
                            subject: i,
                            t,
                            y: s.outcomes[j][k],
                            ispline: row.clone(),
                        });
                        counts[i][k] += 1;
                    }
                }
            }
        }
        let gram = obs
            .iter()
            .map(|list: &Vec<Observation>| {
                let mut g = DMatrix::zeros(q + d, q + d);
                let mut z = DVector::zeros(q + d);
                for o in list {
                    for (a, v) in x[o.subject].iter().chain(&o.ispline).enumerate() {
                        z[a] = *v;
                    }
                    g.syger(1.0, &z, &z, 1.0);
                }
                g.fill_upper_triangle_with_lower_triangle();
                g
            })
            .collect();
        Design { x, obs, counts, gram }
    }

    pub fn total_observed(&self) -> usize {
        self.obs.iter().map(Vec::len).sum()
    }
}

/// Everything fixed during a fit: configuration, basis, penalty window,
/// candidate regions, group structure and the design.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub basis: Option<BasisSpec>,
    pub window: Option<WindowWeights>,
    /// Candidate cones; for the S-shaped model entry `r` has peak `r + 3`.
    pub regions: Vec<ConstraintRegion>,
    pub design: Design,
    pub biomarker_names: Vec<String>,
    pub covariate_names: Vec<String>,
    pub group_names: Vec<String>,
    pub group_of: Vec<usize>,
    pub groups: Vec<Vec<usize>>,
    pub n_subjects: usize,
}

impl Model {
    /// Places knots from the dataset's ages and assembles the model.
    pub fn build(config: &ModelConfig, ds: &LongitudinalDataset) -> Result<Self> {
        config.validate()?;
        let basis = if config.mode.uses_splines() {
            let density = smoothed_age_density(&ds.all_ages(), config.kernel_nu)?;
            Some(build_knots(
                &density,
                config.n_basis,
                config.knot_range.0,
                config.knot_range.1,
            )?)
        } else {
            None
        };
        Self::with_basis(config, ds, basis)
    }

    /// Assembles the model on a given basis (`None` for the logistic model).
    pub fn with_basis(config: &ModelConfig, ds: &LongitudinalDataset, basis: Option<BasisSpec>) -> Result<Self> {
        config.validate()?;
        if config.mode.uses_splines() != basis.is_some() {
            return Err(Error::InvalidArgument(format!(
                "variant {} {} a spline basis",
                config.mode,
                if basis.is_some() { "does not take" } else { "needs" }
            )));
        }
        let mut config = config.clone();
        if let Some(b) = &basis {
            config.n_basis = b.n_basis();
        }
        let n = config.n_basis;
        let (window, regions) = match config.mode {
            ConstraintMode::SShaped => (
                Some(planck_taper_window(n)?),
                (3..=n - 2)
                    .map(|p| ConstraintRegion::unimodal(p, n))
                    .collect::<Result<Vec<_>>>()?,
            ),
            ConstraintMode::MonotoneOnly => (Some(WindowWeights::flat(n)), vec![ConstraintRegion::nonnegative(n)]),
            ConstraintMode::LogisticParametric => (None, Vec::new()),
        };
        let free: Vec<usize> = regions.first().map(|r| r.free_indices().to_vec()).unwrap_or_default();
        let design = Design::new(ds, basis.as_ref(), &free);
        let group_names = ds.schema.group_labels();
        let group_of: Vec<usize> = ds
            .schema
            .biomarkers
            .iter()
            .map(|b| group_names.iter().position(|g| *g == b.group).unwrap())
            .collect();
        let groups = (0..group_names.len())
            .map(|g| (0..group_of.len()).filter(|&k| group_of[k] == g).collect())
            .collect();
        Ok(Model {
            config,
            basis,
            window,
            regions,
            design,
            biomarker_names: ds.schema.biomarkers.iter().map(|b| b.name.clone()).collect(),
            covariate_names: ds.schema.design_names(),
            group_names,
            group_of,
            groups,
            n_subjects: ds.n_subjects(),
        })
    }

    pub fn mode(&self) -> ConstraintMode {
        self.config.mode
    }

    pub fn n_biomarkers(&self) -> usize {
        self.biomarker_names.len()
    }

    pub fn q(&self) -> usize {
        self.covariate_names.len()
    }

    /// 1-based indices of the free spline coefficients.
    pub fn free_indices(&self) -> &[usize] {
        self.regions.first().map_or(&[], |r| r.free_indices())
    }

    pub fn n_free(&self) -> usize {
        self.free_indices().len()
    }

    /// Index into `regions` of the cone with the given 1-based peak.
    pub fn region_for_peak(&self, peak: usize) -> &ConstraintRegion {
        &self.regions[peak - 3]
    }

    /// The cone that `γ_k` must lie in under `state`.
    pub fn region_of(&self, state: &ModelState, k: usize) -> Option<&ConstraintRegion> {
        match self.mode() {
            ConstraintMode::SShaped => Some(self.region_for_peak(state.peaks[self.group_of[k]])),
            ConstraintMode::MonotoneOnly => Some(&self.regions[0]),
            ConstraintMode::LogisticParametric => None,
        }
    }

    pub fn prior_precision(&self, sigma2_s: f64, sigma2_v: f64) -> Result<PriorPrecision> {
        let window = self
            .window
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("the logistic model has no spline prior".into()))?;
        build_prior_precision(sigma2_s, sigma2_v, window)
    }

    /// Deterministic strictly feasible start: a tent of height 0.1 peaking at
    /// `⌈M/2⌉`, zero `β` and `ω`, variances at their prior means.
    pub fn initial_state(&self) -> ModelState {
        let kk = self.n_biomarkers();
        let n = self.config.n_basis;
        let peak = n.div_ceil(2);
        let free = self.free_indices();
        let width = free.len() as f64 + 1.0;
        let tent: Vec<f64> = free
            .iter()
            .map(|&m| 0.1 * (width - m.abs_diff(peak) as f64) / width)
            .collect();
        let gamma = if self.mode().uses_splines() {
            vec![self.regions[0].embed(&tent); kk]
        } else {
            Vec::new()
        };
        let logistic = if self.mode().uses_splines() {
            Vec::new()
        } else {
            vec![
                LogisticCurve {
                    c: LOGISTIC_PRIOR_C.0,
                    s: LOGISTIC_PRIOR_S.0,
                    h: LOGISTIC_PRIOR_H.0,
                };
                kk
            ]
        };
        let ig_mean = self.config.ig_scale / (self.config.ig_shape - 1.0);
        let hyper_mean = 2.0 * self.config.hyper_scale * self.config.hyper_scale;
        ModelState {
            beta: vec![vec![0.0; self.q()]; kk],
            gamma,
            logistic,
            omega: vec![vec![0.0; kk]; self.n_subjects],
            sigma2_obs: ig_mean,
            sigma2_rnd: ig_mean,
            sigma2_s: hyper_mean,
            sigma2_v: hyper_mean,
            peaks: if self.mode() == ConstraintMode::SShaped {
                vec![peak; self.group_names.len()]
            } else {
                Vec::new()
            },
        }
    }

    /// `f_k` at an observation, using the cached basis row.
    #[inline]
    pub fn curve_at(&self, state: &ModelState, k: usize, o: &Observation) -> f64 {
        if self.mode().uses_splines() {
            let g = &state.gamma[k];
            self.free_indices()
                .iter()
                .zip(&o.ispline)
                .map(|(&m, v)| g[m - 1] * v)
                .sum()
        } else {
            state.logistic[k].value(o.t)
        }
    }

    /// `f_k(t)` at any age.
    pub fn curve_value(&self, state: &ModelState, k: usize, t: f64) -> f64 {
        match &self.basis {
            Some(b) => {
                let i = b.ispline(t);
                state.gamma[k].iter().zip(&i).map(|(g, v)| g * v).sum()
            }
            None => state.logistic[k].value(t),
        }
    }

    /// `y − x_iᵀβ_k − f_k(t) − ω_ik`.
    #[inline]
    pub fn residual(&self, state: &ModelState, k: usize, o: &Observation) -> f64 {
        let xb: f64 = self.design.x[o.subject]
            .iter()
            .zip(&state.beta[k])
            .map(|(a, b)| a * b)
            .sum();
        o.y - xb - self.curve_at(state, k, o) - state.omega[o.subject][k]
    }

    /// Residual sum of squares over all observed entries.
    pub fn rss(&self, state: &ModelState) -> f64 {
        (0..self.n_biomarkers())
            .map(|k| {
                self.design.obs[k]
                    .iter()
                    .map(|o| self.residual(state, k, o).powi(2))
                    .sum::<f64>()
            })
            .sum()
    }

    /// Gaussian log-likelihood of all observed entries.
    pub fn log_likelihood(&self, state: &ModelState) -> f64 {
        let n = self.design.total_observed() as f64;
        -n * (LN_SQRT_2PI + 0.5 * state.sigma2_obs.ln()) - 0.5 * self.rss(state) / state.sigma2_obs
    }

    /// The individual log-prior terms, each a normalized log density.
    pub fn log_prior_terms(&self, state: &ModelState) -> Result<PriorTerms> {
        let cfg = &self.config;
        let ig = |x: f64| -> f64 {
            cfg.ig_shape * cfg.ig_scale.ln() - ln_gamma(cfg.ig_shape) - (cfg.ig_shape + 1.0) * x.ln() - cfg.ig_scale / x
        };
        let c2 = 2.0 * cfg.hyper_scale * cfg.hyper_scale;
        let expo = |x: f64| -> f64 { -c2.ln() - x / c2 };
        let normal = |x: f64, var: f64| -> f64 { -LN_SQRT_2PI - 0.5 * var.ln() - 0.5 * x * x / var };
        let beta = state
            .beta
            .iter()
            .flatten()
            .map(|b| normal(*b, cfg.beta_prior_var))
            .sum();
        let omega = state.omega.iter().flatten().map(|w| normal(*w, state.sigma2_rnd)).sum();
        let mut terms = PriorTerms {
            hyper: 0.0,
            sigma2_obs: ig(state.sigma2_obs),
            sigma2_rnd: ig(state.sigma2_rnd),
            beta,
            omega,
            gamma: 0.0,
            logistic: 0.0,
            feasible: true,
        };
        if self.mode().uses_splines() {
            terms.hyper = expo(state.sigma2_s) + expo(state.sigma2_v);
            let prec = self.prior_precision(state.sigma2_s, state.sigma2_v)?;
            let d = prec.dim() as f64;
            for k in 0..self.n_biomarkers() {
                let region = self.region_of(state, k).expect("spline model");
                terms.feasible &= region.contains(&state.gamma[k]);
                let free = region.restrict(&state.gamma[k]);
                terms.gamma += -0.5 * prec.quadratic_form(&free) + 0.5 * prec.log_det() - d * LN_SQRT_2PI;
            }
        } else {
            for curve in &state.logistic {
                terms.feasible &= curve.c > 0.0 && curve.s > 0.0 && curve.h > 0.0;
                terms.logistic += log_half_normal(curve.c, LOGISTIC_PRIOR_C)
                    + log_half_normal(curve.s, LOGISTIC_PRIOR_S)
                    + log_half_normal(curve.h, LOGISTIC_PRIOR_H);
            }
        }
        Ok(terms)
    }

    /// Sum of the prior terms (excluding the truncation constant of the
    /// coefficient prior); `−∞` when a constraint is violated.
    pub fn log_prior(&self, state: &ModelState) -> Result<f64> {
        let t = self.log_prior_terms(state)?;
        Ok(if t.feasible { t.total() } else { f64::NEG_INFINITY })
    }

    /// Untruncated Gaussian full conditional of `(β_k, γ_k,free)`.
    pub fn conditional_coeff_gaussian(
        &self,
        k: usize,
        state: &ModelState,
        prior: &PriorPrecision,
    ) -> Result<GaussianParams> {
        let q = self.q();
        let d = prior.dim();
        let inv_obs = 1.0 / state.sigma2_obs;
        let mut precision = &self.design.gram[k] * inv_obs;
        for a in 0..q {
            precision[(a, a)] += 1.0 / self.config.beta_prior_var;
        }
        precision
            .view_mut((q, q), (d, d))
            .zip_apply(prior.matrix(), |p, v| *p += v);
        let mut h = DVector::zeros(q + d);
        for o in &self.design.obs[k] {
            let r = (o.y - state.omega[o.subject][k]) * inv_obs;
            for (a, v) in self.design.x[o.subject].iter().chain(&o.ispline).enumerate() {
                h[a] += v * r;
            }
        }
        GaussianParams::from_canonical(&precision, &h)
            .map_err(|_| Error::Sampler(format!("coefficient conditional of biomarker {k} is singular")))
    }

    /// Gaussian full conditional of `β_k` with the curve held fixed.
    pub fn conditional_beta_gaussian(&self, k: usize, state: &ModelState) -> Result<GaussianParams> {
        let q = self.q();
        let inv_obs = 1.0 / state.sigma2_obs;
        let mut precision = self.design.gram[k].view((0, 0), (q, q)) * inv_obs;
        for a in 0..q {
            precision[(a, a)] += 1.0 / self.config.beta_prior_var;
        }
        let mut h = DVector::zeros(q);
        for o in &self.design.obs[k] {
            let r = (o.y - state.omega[o.subject][k] - self.curve_at(state, k, o)) * inv_obs;
            for (a, v) in self.design.x[o.subject].iter().enumerate() {
                h[a] += v * r;
            }
        }
        GaussianParams::from_canonical(&precision, &h)
    }
}

/// `log` of the `N⁺(mean, sd²)` density at `x > 0`.
pub fn log_half_normal(x: f64, (mean, sd): (f64, f64)) -> f64 {
    if !(x > 0.0) {
        return f64::NEG_INFINITY;
    }
    let z = (x - mean) / sd;
    -LN_SQRT_2PI - sd.ln() - 0.5 * z * z - crate::normal::cdf(mean / sd).ln()
}

/// Log prior broken into its factors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriorTerms {
    pub hyper: f64,
    pub sigma2_obs: f64,
    pub sigma2_rnd: f64,
    pub beta: f64,
    pub omega: f64,
    /// Untruncated Gaussian coefficient densities.
    pub gamma: f64,
    pub logistic: f64,
    pub feasible: bool,
}

impl PriorTerms {
    pub fn total(&self) -> f64 {
        self.hyper + self.sigma2_obs + self.sigma2_rnd + self.beta + self.omega + self.gamma + self.logistic
    }
}

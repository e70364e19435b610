//! The Gibbs sampler.
//!
//! One iteration runs, in order: inflection indices and coefficients
//! `(β_k, γ_k)` (or the logistic curve and `β_k`), `σ²_obs`, `σ²_rnd`,
//! the random intercepts `ω_ik`, then `(σ²_s, σ²_v)` by adaptive
//! random-walk Metropolis on the log scale.
//!
//! Every step draws from its own ChaCha stream derived from the chain seed,
//! the iteration and the step, so results do not depend on how many
//! numbers other steps consumed.

use crate::constrained_gaussian::{
    summarize_log_weights, ExactHmc, GaussianParams, GenzPlan, HmcSettings, LinearConstraints, DEFAULT_N_MC,
};
use crate::error::{Error, Result};
use crate::model::{
    log_half_normal, ConstraintMode, LogisticCurve, Model, ModelState, LOGISTIC_PRIOR_C, LOGISTIC_PRIOR_H,
    LOGISTIC_PRIOR_S,
};
use crate::shape_constraints::PriorPrecision;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use std::io::{Read, Write};

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Initial standard deviation of the log-scale hyperparameter proposal.
    pub proposal_log_step: f64,
    /// Acceptance rate the proposal scale is tuned towards during burn-in.
    pub target_accept: f64,
    /// Monte Carlo paths per Gaussian orthant probability.
    pub n_mc: usize,
    /// Hamiltonian trajectories per coefficient update.
    pub hmc_trajectories: usize,
    /// Trajectories used when the inflection index changed or the current
    /// coefficients had to be moved into the new cone.
    pub reinit_trajectories: usize,
    /// Initial proposal scale for the logistic curve parameters (log scale).
    pub logistic_log_step: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_iter: 10_000,
            burn_in: 5_000,
            thin: 1,
            seed: 1,
            proposal_log_step: 0.5,
            target_accept: 0.35,
            n_mc: DEFAULT_N_MC,
            hmc_trajectories: 1,
            reinit_trajectories: 10,
            logistic_log_step: 0.05,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_iter {
            return Err(Error::InvalidArgument(format!(
                "burn-in ({}) must be smaller than the number of iterations ({})",
                self.burn_in, self.n_iter
            )));
        }
        if self.thin == 0 || self.n_mc == 0 || self.hmc_trajectories == 0 || self.reinit_trajectories == 0 {
            return Err(Error::InvalidArgument(
                "thinning, n_mc and trajectory counts must be positive".into(),
            ));
        }
        if !(self.proposal_log_step > 0.0) || !(self.logistic_log_step > 0.0) {
            return Err(Error::InvalidArgument("proposal steps must be positive".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::InvalidArgument("target acceptance must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

const TAG_INDEX: u64 = 1;
const TAG_COEF: u64 = 2;
const TAG_OBS: u64 = 3;
const TAG_RND: u64 = 4;
const TAG_OMEGA: u64 = 5;
const TAG_HYPER: u64 = 6;
const TAG_Z: u64 = 7;
const TAG_LOGISTIC: u64 = 8;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent stream keyed by `seed` and a path of integers.
pub fn substream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    for p in path {
        h = splitmix(h ^ splitmix(*p));
    }
    let mut bytes = [0u8; 32];
    let mut x = h;
    for chunk in bytes.chunks_mut(8) {
        x = splitmix(x);
        chunk.copy_from_slice(&x.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

fn draw_inverse_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    let g: f64 = Gamma::new(shape, 1.0).expect("positive shape").sample(rng);
    scale / g
}

/// One draw from `N(μ, Σ)`.
fn draw_gaussian<R: Rng + ?Sized>(p: &GaussianParams, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_fn(p.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
    p.mean() + p.cholesky_factor() * z
}

/// `σ²_obs ~ IG(a + J_tot/2, b + RSS/2)`.
pub fn step_sigma2_obs<R: Rng + ?Sized>(model: &Model, state: &mut ModelState, rng: &mut R) {
    let cfg = &model.config;
    let shape = cfg.ig_shape + 0.5 * model.design.total_observed() as f64;
    let scale = cfg.ig_scale + 0.5 * model.rss(state);
    state.sigma2_obs = draw_inverse_gamma(shape, scale, rng);
}

/// `σ²_rnd ~ IG(a + KN/2, b + Σω²/2)` (shape `a + KN` in compatibility mode).
pub fn step_sigma2_rnd<R: Rng + ?Sized>(model: &Model, state: &mut ModelState, rng: &mut R) {
    let cfg = &model.config;
    let kn = (model.n_biomarkers() * model.n_subjects) as f64;
    let shape = cfg.ig_shape + if cfg.rnd_shape_compat { kn } else { 0.5 * kn };
    let ss: f64 = state.omega.iter().flatten().map(|w| w * w).sum();
    state.sigma2_rnd = draw_inverse_gamma(shape, cfg.ig_scale + 0.5 * ss, rng);
}

/// `ω_ik` from its Gaussian conditional using the observed count `J_ik`.
pub fn step_random_effects<R: Rng + ?Sized>(model: &Model, state: &mut ModelState, rng: &mut R) {
    let n = model.n_subjects;
    for k in 0..model.n_biomarkers() {
        let mut sums = vec![0.0; n];
        for o in &model.design.obs[k] {
            // residual without the random intercept
            sums[o.subject] += model.residual(state, k, o) + state.omega[o.subject][k];
        }
        for i in 0..n {
            let prec = 1.0 / state.sigma2_rnd + model.design.counts[i][k] as f64 / state.sigma2_obs;
            let mean = sums[i] / state.sigma2_obs / prec;
            let z: f64 = rng.sample(StandardNormal);
            state.omega[i][k] = mean + z / prec.sqrt();
        }
    }
}

/// Draws a category from unnormalized log weights; `None` when every
/// weight is zero or any is NaN.
pub fn sample_categorical<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> Option<usize> {
    let top = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() || log_weights.iter().any(|l| l.is_nan()) {
        return None;
    }
    let w: Vec<f64> = log_weights.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, wi) in w.iter().enumerate() {
        if u < *wi {
            return Some(i);
        }
        u -= wi;
    }
    w.iter().rposition(|v| *v > 0.0)
}

/// `log P(γ ∈ Γ_r)` for each candidate region `r` under the `γ` block of `cond`.
pub fn region_log_probabilities(
    model: &Model,
    cond_gamma: &GaussianParams,
    n_mc: usize,
    seed: u64,
    path: &[u64],
) -> Vec<f64> {
    let l = cond_gamma.cholesky_factor();
    let mu = cond_gamma.mean();
    model
        .regions
        .iter()
        .map(|region| {
            let d = region.matrix();
            let b = -(d * mu);
            let plan = GenzPlan::prioritized(&(d * l), b.as_slice());
            let mut rng = substream(seed, path);
            plan.log_probability(b.as_slice(), n_mc, &mut rng).log_value
        })
        .collect()
}

/// Samples every group's inflection index from its categorical full
/// conditional and returns the Gaussian conditionals it used.
pub fn step_inflection_indices(
    model: &Model,
    state: &mut ModelState,
    prior: &PriorPrecision,
    cfg: &SamplerConfig,
    iteration: usize,
) -> Result<Vec<GaussianParams>> {
    let q = model.q();
    let d = prior.dim();
    let conds = (0..model.n_biomarkers())
        .map(|k| model.conditional_coeff_gaussian(k, state, prior))
        .collect::<Result<Vec<_>>>()?;
    if model.mode() != ConstraintMode::SShaped {
        return Ok(conds);
    }
    for (g, members) in model.groups.iter().enumerate() {
        let mut logw = vec![0.0; model.regions.len()];
        for &k in members {
            let marg = conds[k].marginal(q, d)?;
            let lp = region_log_probabilities(
                model,
                &marg,
                cfg.n_mc,
                cfg.seed,
                &[iteration as u64, TAG_INDEX, k as u64],
            );
            for (w, l) in logw.iter_mut().zip(lp) {
                *w += l;
            }
        }
        let mut rng = substream(cfg.seed, &[iteration as u64, TAG_INDEX, u64::MAX, g as u64]);
        let r = sample_categorical(&logw, &mut rng).ok_or_else(|| {
            Error::Sampler(format!(
                "all inflection-index weights vanished for group `{}` (log weights {logw:?})",
                model.group_names[g]
            ))
        })?;
        state.peaks[g] = r + 3;
    }
    Ok(conds)
}

/// Draws `(β_k, γ_k)` from the conditional Gaussian truncated to
/// `ℝ^q × Γ_{m*}` by exact Hamiltonian trajectories.
pub fn step_coefficients(
    model: &Model,
    state: &mut ModelState,
    conds: &[GaussianParams],
    previous_peaks: &[usize],
    cfg: &SamplerConfig,
    iteration: usize,
) -> Result<()> {
    let q = model.q();
    for k in 0..model.n_biomarkers() {
        let region = model.region_of(state, k).expect("spline model");
        let constraints = LinearConstraints::cone(region.matrix().clone())?.with_free_prefix(q);
        let mut free = region.restrict(&state.gamma[k]);
        let moved = model.mode() == ConstraintMode::SShaped
            && previous_peaks[model.group_of[k]] != state.peaks[model.group_of[k]];
        let inside = region.min_slack(&free) > 0.0;
        if !inside {
            free = region.interior_point_near(&free);
        }
        let n_traj = if moved || !inside {
            cfg.reinit_trajectories
        } else {
            cfg.hmc_trajectories
        };
        let x0 = DVector::from_iterator(q + free.len(), state.beta[k].iter().chain(&free).copied());
        let hmc = ExactHmc::new(&conds[k], &constraints, HmcSettings::default())?;
        let mut rng = substream(cfg.seed, &[iteration as u64, TAG_COEF, k as u64]);
        let x = hmc.advance(&x0, n_traj, &mut rng)?;
        state.beta[k] = x.rows(0, q).iter().copied().collect();
        let drawn: Vec<f64> = x.rows(q, free.len()).iter().copied().collect();
        let repaired = if region.min_slack(&drawn) >= 0.0 && drawn.iter().all(|v| v.is_finite()) {
            drawn
        } else {
            region.project_onto(&drawn)
        };
        state.gamma[k] = region.embed(&repaired);
    }
    Ok(())
}

/// Random-walk Metropolis on a small log-scale vector with a single
/// proposal scale adapted towards a target acceptance rate.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveMetropolis {
    pub log_step: f64,
    pub target: f64,
    pub n_adapt: usize,
}

impl AdaptiveMetropolis {
    pub fn new(step: f64, target: f64) -> Self {
        AdaptiveMetropolis {
            log_step: step.ln(),
            target,
            n_adapt: 0,
        }
    }

    pub fn step_size(&self) -> f64 {
        self.log_step.exp()
    }

    pub fn propose<R: Rng + ?Sized>(&self, current: &[f64], rng: &mut R) -> Vec<f64> {
        let s = self.step_size();
        current
            .iter()
            .map(|c| c + s * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// Accept/reject given the log target difference; returns the decision.
    pub fn decide<R: Rng + ?Sized>(&mut self, log_ratio: f64, adapt: bool, rng: &mut R) -> bool {
        let accept_prob = if log_ratio.is_nan() {
            0.0
        } else {
            log_ratio.min(0.0).exp()
        };
        let u: f64 = rng.random();
        if adapt {
            self.n_adapt += 1;
            self.log_step += (accept_prob - self.target) / (self.n_adapt as f64).powf(0.6);
        }
        u < accept_prob
    }
}

/// Cached prior-mass term for the hyperparameter update.
#[derive(Clone, Debug, PartialEq)]
struct ZCache {
    sigma2_s: f64,
    sigma2_v: f64,
    log_z_grp: f64,
}

/// `log Z(σ²_s, σ²_v, Γ_grp) = Σ_g log Σ_r Z_r^{|g|}` with fixed per-region
/// random streams, so the same point always gets the same estimate.
pub fn log_z_grp(model: &Model, prior: &PriorPrecision, n_mc: usize, seed: u64) -> Result<f64> {
    let zero = DVector::zeros(prior.dim());
    let gauss = GaussianParams::from_canonical(prior.matrix(), &zero)?;
    let l = gauss.cholesky_factor();
    let mut log_z = Vec::with_capacity(model.regions.len());
    for (r, region) in model.regions.iter().enumerate() {
        let b = vec![0.0; region.matrix().nrows()];
        let plan = GenzPlan::prioritized(&(region.matrix() * l), &b);
        let mut est = f64::NEG_INFINITY;
        for factor in [1, 4] {
            let mut rng = substream(seed, &[TAG_Z, r as u64, factor]);
            est = plan.log_probability(&b, n_mc * factor as usize, &mut rng).log_value;
            if est.is_finite() {
                break;
            }
        }
        log_z.push(est);
    }
    let mut total = 0.0;
    for members in &model.groups {
        let size = members.len() as f64;
        let terms: Vec<f64> = log_z.iter().map(|l| size * l).collect();
        let lse = summarize_log_weights(&terms).log_value + (terms.len() as f64).ln();
        total += lse;
    }
    Ok(total)
}

/// Log full conditional of `(log σ²_s, log σ²_v)` up to a constant, given the
/// group mass term.
pub fn hyper_log_target(model: &Model, state: &ModelState, prior: &PriorPrecision, log_z: f64) -> f64 {
    let c2 = 2.0 * model.config.hyper_scale * model.config.hyper_scale;
    let (s, v) = (prior.sigma2_s(), prior.sigma2_v());
    let mut out = -s / c2 - v / c2 + s.ln() + v.ln() - log_z;
    for k in 0..model.n_biomarkers() {
        let region = model.region_of(state, k).expect("spline model");
        let free = region.restrict(&state.gamma[k]);
        out += -0.5 * prior.quadratic_form(&free) + 0.5 * prior.log_det();
    }
    out
}

fn step_hyperparams(
    model: &Model,
    state: &mut ModelState,
    adapt: &mut AdaptiveMetropolis,
    cache: &mut Option<ZCache>,
    cfg: &SamplerConfig,
    iteration: usize,
) -> Result<bool> {
    let mut rng = substream(cfg.seed, &[iteration as u64, TAG_HYPER]);
    let current = [state.sigma2_s.ln(), state.sigma2_v.ln()];
    let prop = adapt.propose(&current, &mut rng);
    let (ps, pv) = (prop[0].exp(), prop[1].exp());
    let cur_prior = model.prior_precision(state.sigma2_s, state.sigma2_v)?;
    let cur_z = match cache {
        Some(c) if c.sigma2_s == state.sigma2_s && c.sigma2_v == state.sigma2_v => c.log_z_grp,
        _ => log_z_grp(model, &cur_prior, cfg.n_mc, cfg.seed)?,
    };
    let prop_prior = match model.prior_precision(ps, pv) {
        Ok(p) => p,
        Err(_) => {
            adapt.decide(f64::NEG_INFINITY, iteration < cfg.burn_in, &mut rng);
            return Ok(false);
        }
    };
    let prop_z = log_z_grp(model, &prop_prior, cfg.n_mc, cfg.seed)?;
    let log_ratio = if prop_z.is_finite() && cur_z.is_finite() {
        hyper_log_target(model, state, &prop_prior, prop_z) - hyper_log_target(model, state, &cur_prior, cur_z)
    } else {
        log::warn!("iteration {iteration}: prior mass estimate vanished; proposal rejected");
        f64::NEG_INFINITY
    };
    let accepted = adapt.decide(log_ratio, iteration < cfg.burn_in, &mut rng);
    if accepted {
        state.sigma2_s = ps;
        state.sigma2_v = pv;
        *cache = Some(ZCache {
            sigma2_s: ps,
            sigma2_v: pv,
            log_z_grp: prop_z,
        });
    } else {
        *cache = Some(ZCache {
            sigma2_s: state.sigma2_s,
            sigma2_v: state.sigma2_v,
            log_z_grp: cur_z,
        });
    }
    Ok(accepted)
}

fn logistic_log_target(model: &Model, state: &ModelState, k: usize, partial: &[f64], curve: &LogisticCurve) -> f64 {
    let prior = log_half_normal(curve.c, LOGISTIC_PRIOR_C)
        + log_half_normal(curve.s, LOGISTIC_PRIOR_S)
        + log_half_normal(curve.h, LOGISTIC_PRIOR_H);
    if !prior.is_finite() {
        return f64::NEG_INFINITY;
    }
    let ss: f64 = model.design.obs[k]
        .iter()
        .zip(partial)
        .map(|(o, p)| (p - curve.value(o.t)).powi(2))
        .sum();
    prior + curve.c.ln() + curve.s.ln() + curve.h.ln() - 0.5 * ss / state.sigma2_obs
}

fn step_logistic(
    model: &Model,
    state: &mut ModelState,
    adapt: &mut [AdaptiveMetropolis],
    cfg: &SamplerConfig,
    iteration: usize,
) -> Result<usize> {
    let mut accepted = 0;
    for k in 0..model.n_biomarkers() {
        let mut rng = substream(cfg.seed, &[iteration as u64, TAG_LOGISTIC, k as u64]);
        let partial: Vec<f64> = model.design.obs[k]
            .iter()
            .map(|o| model.residual(state, k, o) + model.curve_at(state, k, o))
            .collect();
        let cur = state.logistic[k];
        let x = [cur.c.ln(), cur.s.ln(), cur.h.ln()];
        let p = adapt[k].propose(&x, &mut rng);
        let prop = LogisticCurve {
            c: p[0].exp(),
            s: p[1].exp(),
            h: p[2].exp(),
        };
        let ratio = logistic_log_target(model, state, k, &partial, &prop)
            - logistic_log_target(model, state, k, &partial, &cur);
        if adapt[k].decide(ratio, iteration < cfg.burn_in, &mut rng) {
            state.logistic[k] = prop;
            accepted += 1;
        }
        step_beta(model, state, k, &mut rng)?;
    }
    Ok(accepted)
}

/// `β_k` from its Gaussian conditional with the curve held fixed.
pub fn step_beta<R: Rng + ?Sized>(model: &Model, state: &mut ModelState, k: usize, rng: &mut R) -> Result<()> {
    let cond = model.conditional_beta_gaussian(k, state)?;
    state.beta[k] = draw_gaussian(&cond, rng).iter().copied().collect();
    Ok(())
}

/// Per-iteration diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub log_likelihood: f64,
    /// Accepted Metropolis proposals this iteration (hyperparameters, or
    /// logistic curves summed over biomarkers).
    pub accepted: usize,
    pub proposal_step: f64,
    pub sigma2_obs: f64,
    pub sigma2_rnd: f64,
    pub sigma2_s: f64,
    pub sigma2_v: f64,
    pub peaks: Vec<usize>,
}

/// Stored post-burn-in states plus per-iteration traces.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSamples {
    pub mode: ConstraintMode,
    pub n_basis: usize,
    pub biomarker_names: Vec<String>,
    pub covariate_names: Vec<String>,
    pub group_names: Vec<String>,
    pub iterations: Vec<usize>,
    pub states: Vec<ModelState>,
    pub trace: Vec<TraceRow>,
    pub burn_in: usize,
}

impl PosteriorSamples {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Acceptance rate of Metropolis proposals after burn-in.
    pub fn acceptance_rate(&self) -> f64 {
        let per_iter = match self.mode {
            ConstraintMode::LogisticParametric => self.biomarker_names.len(),
            _ => 1,
        } as f64;
        let post: Vec<&TraceRow> = self.trace.iter().filter(|t| t.iteration >= self.burn_in).collect();
        if post.is_empty() {
            return f64::NAN;
        }
        post.iter().map(|t| t.accepted as f64).sum::<f64>() / (post.len() as f64 * per_iter)
    }
}

/// Runs the sampler from the model's deterministic initial state.
pub fn run_chain(cfg: &SamplerConfig, model: &Model) -> Result<PosteriorSamples> {
    run_chain_from(cfg, model, model.initial_state())
}

pub fn run_chain_from(cfg: &SamplerConfig, model: &Model, mut state: ModelState) -> Result<PosteriorSamples> {
    cfg.validate()?;
    let mode = model.mode();
    let mut hyper_adapt = AdaptiveMetropolis::new(cfg.proposal_log_step, cfg.target_accept);
    let mut logistic_adapt =
        vec![AdaptiveMetropolis::new(cfg.logistic_log_step, cfg.target_accept); model.n_biomarkers()];
    let mut z_cache = None;
    let mut out = PosteriorSamples {
        mode,
        n_basis: model.config.n_basis,
        biomarker_names: model.biomarker_names.clone(),
        covariate_names: model.covariate_names.clone(),
        group_names: model.group_names.clone(),
        iterations: Vec::new(),
        states: Vec::new(),
        trace: Vec::with_capacity(cfg.n_iter),
        burn_in: cfg.burn_in,
    };
    for it in 0..cfg.n_iter {
        let mut logistic_accepted = 0;
        if mode.uses_splines() {
            let prior = model
                .prior_precision(state.sigma2_s, state.sigma2_v)
                .map_err(|e| e.at_step("prior precision", it))?;
            let previous = state.peaks.clone();
            let conds = step_inflection_indices(model, &mut state, &prior, cfg, it)
                .map_err(|e| e.at_step("inflection indices", it))?;
            step_coefficients(model, &mut state, &conds, &previous, cfg, it)
                .map_err(|e| e.at_step("coefficients", it))?;
        } else {
            logistic_accepted = step_logistic(model, &mut state, &mut logistic_adapt, cfg, it)
                .map_err(|e| e.at_step("logistic curves", it))?;
        }
        step_sigma2_obs(model, &mut state, &mut substream(cfg.seed, &[it as u64, TAG_OBS]));
        step_sigma2_rnd(model, &mut state, &mut substream(cfg.seed, &[it as u64, TAG_RND]));
        step_random_effects(model, &mut state, &mut substream(cfg.seed, &[it as u64, TAG_OMEGA]));
        let (n_acc, step) = if mode.uses_splines() {
            let a = step_hyperparams(model, &mut state, &mut hyper_adapt, &mut z_cache, cfg, it)
                .map_err(|e| e.at_step("hyperparameters", it))?;
            (a as usize, hyper_adapt.step_size())
        } else {
            (logistic_accepted, logistic_adapt.first().map_or(0.0, |a| a.step_size()))
        };
        out.trace.push(TraceRow {
            iteration: it,
            log_likelihood: model.log_likelihood(&state),
            accepted: n_acc,
            proposal_step: step,
            sigma2_obs: state.sigma2_obs,
            sigma2_rnd: state.sigma2_rnd,
            sigma2_s: state.sigma2_s,
            sigma2_v: state.sigma2_v,
            peaks: state.peaks.clone(),
        });
        if it >= cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0 {
            out.iterations.push(it);
            out.states.push(state.clone());
        }
        if (it + 1) % 500 == 0 {
            log::info!("iteration {}/{}", it + 1, cfg.n_iter);
        }
    }
    Ok(out)
}

fn fmt_values<'a, I: IntoIterator<Item = &'a f64>>(v: I) -> String {
    v.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

impl PosteriorSamples {
    /// Concatenates independent chains of the same model.
    pub fn concat(chains: Vec<PosteriorSamples>) -> Result<PosteriorSamples> {
        let mut it = chains.into_iter();
        let mut out = it
            .next()
            .ok_or_else(|| Error::InvalidArgument("no chains to merge".into()))?;
        for c in it {
            if c.mode != out.mode || c.biomarker_names != out.biomarker_names || c.n_basis != out.n_basis {
                return Err(Error::InvalidArgument("chains come from different models".into()));
            }
            out.iterations.extend(c.iterations);
            out.states.extend(c.states);
            out.trace.extend(c.trace);
        }
        Ok(out)
    }

    /// Long-format CSV with columns `iteration,block,biomarker,values`.
    /// Blocks per stored iteration: `variances` (σ²_obs σ²_rnd σ²_s σ²_v),
    /// `peaks` (S-shaped model only, one index per group), then per
    /// biomarker `beta`, `gamma` or `logistic` (c s h), and `omega`.
    /// Values are space separated.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(["iteration", "block", "biomarker", "values"])?;
        for (it, s) in self.iterations.iter().zip(&self.states) {
            let it = it.to_string();
            w.write_record([
                it.as_str(),
                "variances",
                "",
                &fmt_values(&[s.sigma2_obs, s.sigma2_rnd, s.sigma2_s, s.sigma2_v]),
            ])?;
            if !s.peaks.is_empty() {
                let p = s.peaks.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(" ");
                w.write_record([it.as_str(), "peaks", "", &p])?;
            }
            for (k, name) in self.biomarker_names.iter().enumerate() {
                w.write_record([it.as_str(), "beta", name, &fmt_values(&s.beta[k])])?;
                if let Some(g) = s.gamma.get(k) {
                    w.write_record([it.as_str(), "gamma", name, &fmt_values(g)])?;
                }
                if let Some(l) = s.logistic.get(k) {
                    w.write_record([it.as_str(), "logistic", name, &fmt_values(&[l.c, l.s, l.h])])?;
                }
                let om: Vec<f64> = s.omega.iter().map(|row| row[k]).collect();
                w.write_record([it.as_str(), "omega", name, &fmt_values(&om)])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Columns `iteration,log_likelihood,accepted,proposal_step,sigma2_obs,
    /// sigma2_rnd,sigma2_s,sigma2_v,peaks`.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record([
            "iteration",
            "log_likelihood",
            "accepted",
            "proposal_step",
            "sigma2_obs",
            "sigma2_rnd",
            "sigma2_s",
            "sigma2_v",
            "peaks",
        ])?;
        for t in &self.trace {
            w.write_record([
                t.iteration.to_string(),
                t.log_likelihood.to_string(),
                t.accepted.to_string(),
                t.proposal_step.to_string(),
                t.sigma2_obs.to_string(),
                t.sigma2_rnd.to_string(),
                t.sigma2_s.to_string(),
                t.sigma2_v.to_string(),
                t.peaks.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(" "),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Compact little-endian binary form of the stored states (traces are
    /// not included). Layout: magic `SSHP`, `u32` version, `u8` mode,
    /// `u32` counts (M, K, q, N, groups, states), `u64` burn-in, the name
    /// lists as `u32`-length-prefixed UTF-8, then per state the iteration
    /// (`u64`), the four variances, peaks (`u32`), β, γ or logistic, and ω
    /// (subject-major), all `f64`.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        let n_subjects = self.states.first().map_or(0, |s| s.omega.len());
        out.write_all(BINARY_MAGIC)?;
        out.write_all(&BINARY_VERSION.to_le_bytes())?;
        let mode = ConstraintMode::ALL.iter().position(|m| *m == self.mode).unwrap() as u8;
        out.write_all(&[mode])?;
        for n in [
            self.n_basis,
            self.biomarker_names.len(),
            self.covariate_names.len(),
            n_subjects,
            self.group_names.len(),
            self.states.len(),
        ] {
            out.write_all(&(n as u32).to_le_bytes())?;
        }
        out.write_all(&(self.burn_in as u64).to_le_bytes())?;
        for list in [&self.biomarker_names, &self.covariate_names, &self.group_names] {
            for name in list {
                out.write_all(&(name.len() as u32).to_le_bytes())?;
                out.write_all(name.as_bytes())?;
            }
        }
        let put = |x: f64, out: &mut W| out.write_all(&x.to_le_bytes());
        for (it, s) in self.iterations.iter().zip(&self.states) {
            out.write_all(&(*it as u64).to_le_bytes())?;
            for v in [s.sigma2_obs, s.sigma2_rnd, s.sigma2_s, s.sigma2_v] {
                put(v, &mut out)?;
            }
            for p in &s.peaks {
                out.write_all(&(*p as u32).to_le_bytes())?;
            }
            for b in s.beta.iter().flatten() {
                put(*b, &mut out)?;
            }
            for g in s.gamma.iter().flatten() {
                put(*g, &mut out)?;
            }
            for l in &s.logistic {
                for v in [l.c, l.s, l.h] {
                    put(v, &mut out)?;
                }
            }
            for w in s.omega.iter().flatten() {
                put(*w, &mut out)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<PosteriorSamples> {
        let bad = |m: &str| Error::Parse {
            location: "samples.bin".into(),
            message: m.to_string(),
        };
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(bad("not a samples file"));
        }
        let mut u32b = [0u8; 4];
        let mut u64b = [0u8; 8];
        let mut r32 = |input: &mut R| -> Result<usize> {
            input.read_exact(&mut u32b)?;
            Ok(u32::from_le_bytes(u32b) as usize)
        };
        if r32(&mut input)? != BINARY_VERSION as usize {
            return Err(bad("unsupported version"));
        }
        let mut mb = [0u8; 1];
        input.read_exact(&mut mb)?;
        let mode = *ConstraintMode::ALL.get(mb[0] as usize).ok_or_else(|| bad("bad mode"))?;
        let n_basis = r32(&mut input)?;
        let kk = r32(&mut input)?;
        let q = r32(&mut input)?;
        let n = r32(&mut input)?;
        let n_groups = r32(&mut input)?;
        let n_states = r32(&mut input)?;
        input.read_exact(&mut u64b)?;
        let burn_in = u64::from_le_bytes(u64b) as usize;
        let mut names = |count: usize, input: &mut R| -> Result<Vec<String>> {
            (0..count)
                .map(|_| {
                    let len = r32(input)?;
                    let mut buf = vec![0u8; len];
                    input.read_exact(&mut buf)?;
                    String::from_utf8(buf).map_err(|_| bad("name is not UTF-8"))
                })
                .collect()
        };
        let biomarker_names = names(kk, &mut input)?;
        let covariate_names = names(q, &mut input)?;
        let group_names = names(n_groups, &mut input)?;
        let rf = |input: &mut R| -> Result<f64> {
            let mut b = [0u8; 8];
            input.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        let vecf = |len: usize, input: &mut R| -> Result<Vec<f64>> { (0..len).map(|_| rf(input)).collect() };
        let mut iterations = Vec::with_capacity(n_states);
        let mut states = Vec::with_capacity(n_states);
        for _ in 0..n_states {
            let mut b = [0u8; 8];
            input.read_exact(&mut b)?;
            iterations.push(u64::from_le_bytes(b) as usize);
            let v = vecf(4, &mut input)?;
            let peaks = if mode == ConstraintMode::SShaped {
                (0..n_groups)
                    .map(|_| {
                        let mut b = [0u8; 4];
                        input.read_exact(&mut b)?;
                        Ok(u32::from_le_bytes(b) as usize)
                    })
                    .collect::<Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            let beta = (0..kk).map(|_| vecf(q, &mut input)).collect::<Result<Vec<_>>>()?;
            let (gamma, logistic) = if mode.uses_splines() {
                (
                    (0..kk).map(|_| vecf(n_basis, &mut input)).collect::<Result<Vec<_>>>()?,
                    Vec::new(),
                )
            } else {
                let l = (0..kk)
                    .map(|_| {
                        let v = vecf(3, &mut input)?;
                        Ok(LogisticCurve {
                            c: v[0],
                            s: v[1],
                            h: v[2],
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                (Vec::new(), l)
            };
            let omega = (0..n).map(|_| vecf(kk, &mut input)).collect::<Result<Vec<_>>>()?;
            states.push(ModelState {
                beta,
                gamma,
                logistic,
                omega,
                sigma2_obs: v[0],
                sigma2_rnd: v[1],
                sigma2_s: v[2],
                sigma2_v: v[3],
                peaks,
            });
        }
        Ok(PosteriorSamples {
            mode,
            n_basis,
            biomarker_names,
            covariate_names,
            group_names,
            iterations,
            states,
            trace: Vec::new(),
            burn_in,
        })
    }
}

const BINARY_MAGIC: &[u8; 4] = b"SSHP";
const BINARY_VERSION: u32 = 1;

//! Synthetic single-biomarker datasets with known progression curves, and
//! the fit-quality metrics used to compare model variants on them.

use crate::data::{BiomarkerSpec, CovariateKind, CovariateSpec, LongitudinalDataset, Schema, Subject};
use crate::error::{Error, Result};
use crate::model::{ConstraintMode, Model, ModelConfig};
use crate::sampler::{run_chain, substream, PosteriorSamples, SamplerConfig};
use crate::spline_basis::AGE_DOMAIN_MAX;
use crate::summary::{curve_on_grid, draw_milestones, make_grid, Interval};
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Exp, Normal, Poisson, Uniform};
use std::io::{Read, Write};
use std::str::FromStr;
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SimTruth {
    Logistic,
    Asymmetric,
}

impl SimTruth {
    pub const ALL: [SimTruth; 2] = [SimTruth::Logistic, SimTruth::Asymmetric];

    pub fn as_str(&self) -> &'static str {
        match self {
            SimTruth::Logistic => "LOGISTIC",
            SimTruth::Asymmetric => "ASYMMETRIC",
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            SimTruth::Logistic => 2.0 / (1.0 + (-(t - 70.0) / 5.0).exp()),
            SimTruth::Asymmetric => {
                if t < 30.0 {
                    0.0
                } else if t < 75.0 {
                    2.0 * (t - 30.0).powi(3) / (45.0 * 45.0 * 60.0)
                } else if t < 90.0 {
                    2.0 * (1.0 - (90.0 - t).powi(3) / (15.0 * 15.0 * 60.0))
                } else {
                    2.0
                }
            }
        }
    }

    pub fn height(&self) -> f64 {
        2.0
    }

    pub fn inflection(&self) -> f64 {
        match self {
            SimTruth::Logistic => 70.0,
            SimTruth::Asymmetric => 75.0,
        }
    }

    /// Age at half the total rise.
    pub fn half_progression(&self) -> f64 {
        match self {
            SimTruth::Logistic => 70.0,
            SimTruth::Asymmetric => 30.0 + (45.0f64 * 45.0 * 60.0 / 2.0).cbrt(),
        }
    }
}

impl std::fmt::Display for SimTruth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SimTruth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "LOGISTIC" | "LOGIT" => Ok(SimTruth::Logistic),
            "ASYMMETRIC" | "ASYM" => Ok(SimTruth::Asymmetric),
            _ => Err(Error::InvalidArgument(format!(
                "unknown truth `{s}` (expected LOGISTIC or ASYMMETRIC)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimSettings {
    pub n_subjects: usize,
    /// Intercept, binary-covariate and continuous-covariate coefficients.
    pub beta: [f64; 3],
    pub first_age: (f64, f64),
    pub mean_visits: f64,
    /// Mean of the exponential perturbation added to each one-year gap.
    pub gap_jitter_mean: f64,
    pub random_effect_sd: f64,
    pub noise: f64,
    /// Read `noise` as a standard deviation instead of a variance.
    pub noise_is_sd: bool,
    pub mask_prob: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            n_subjects: 250,
            beta: [0.4, -0.5, 0.1],
            first_age: (50.0, 90.0),
            mean_visits: 10.0,
            gap_jitter_mean: 1.0 / 20.0,
            random_effect_sd: 1.0,
            noise: 0.5,
            noise_is_sd: false,
            mask_prob: 0.3,
        }
    }
}

impl SimSettings {
    pub fn noise_sd(&self) -> f64 {
        if self.noise_is_sd {
            self.noise
        } else {
            self.noise.sqrt()
        }
    }
}

pub fn simulation_schema() -> Schema {
    Schema {
        covariates: vec![
            CovariateSpec {
                name: "x_binary".into(),
                kind: CovariateKind::Binary,
            },
            CovariateSpec {
                name: "x_continuous".into(),
                kind: CovariateKind::Continuous,
            },
        ],
        biomarkers: vec![BiomarkerSpec {
            name: "y".into(),
            group: "y".into(),
            sign: 1.0,
            cognitive: false,
        }],
        age_range: (0.0, AGE_DOMAIN_MAX),
        passthrough: Vec::new(),
    }
}

pub fn simulate_dataset(truth: SimTruth, seed: u64) -> Result<LongitudinalDataset> {
    simulate_with(truth, &SimSettings::default(), seed)
}

/// Visits that would fall past age 120 are dropped.
pub fn simulate_with(truth: SimTruth, s: &SimSettings, seed: u64) -> Result<LongitudinalDataset> {
    let mut rng = substream(seed, &[0x5111]);
    let bern = Bernoulli::new(0.5).expect("valid p");
    let mask = Bernoulli::new(s.mask_prob).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let first = Uniform::new(s.first_age.0, s.first_age.1).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let visits = Poisson::new(s.mean_visits).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let jitter = Exp::new(1.0 / s.gap_jitter_mean).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let re = Normal::new(0.0, s.random_effect_sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let noise = Normal::new(0.0, s.noise_sd()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let width = s.n_subjects.max(1).to_string().len();
    let mut subjects = Vec::with_capacity(s.n_subjects);
    for i in 0..s.n_subjects {
        let x1 = if bern.sample(&mut rng) { 1.0 } else { 0.0 };
        let x2: f64 = rng.sample(rand_distr::StandardNormal);
        let n_visits = (visits.sample(&mut rng) as usize).max(1);
        let omega = re.sample(&mut rng);
        let xb = s.beta[0] + s.beta[1] * x1 + s.beta[2] * x2;
        let mut ages = Vec::with_capacity(n_visits);
        let mut t = first.sample(&mut rng);
        for j in 0..n_visits {
            if j > 0 {
                t += 1.0 + jitter.sample(&mut rng);
            }
            ages.push(t);
        }
        let mut outcomes = Vec::with_capacity(n_visits);
        let mut observed = Vec::with_capacity(n_visits);
        for &t in &ages {
            let y = truth.eval(t) + xb + omega + noise.sample(&mut rng);
            let hidden = mask.sample(&mut rng);
            outcomes.push(vec![if hidden { f64::NAN } else { y }]);
            observed.push(vec![!hidden]);
        }
        let keep = ages.iter().take_while(|a| **a <= AGE_DOMAIN_MAX).count().max(1);
        ages.truncate(keep);
        outcomes.truncate(keep);
        observed.truncate(keep);
        subjects.push(Subject {
            id: format!("S{:0width$}", i + 1),
            covariates: vec![1.0, x1, x2],
            ages,
            outcomes,
            observed,
            passthrough: Vec::new(),
        });
    }
    LongitudinalDataset::new(simulation_schema(), subjects)
}

/// Accuracy of one fit against the truth.
#[derive(Clone, Debug, PartialEq)]
pub struct FitMetrics {
    pub curve_rmse: f64,
    pub curve_coverage: f64,
    pub inflection_error: Option<f64>,
    pub inflection_covered: Option<bool>,
    pub half_progression_error: f64,
    pub half_progression_covered: bool,
}

/// Pointwise RMSE of the posterior-mean curve and the share of grid points
/// whose 95% band contains the truth, plus milestone errors.
pub fn evaluate_fit(model: &Model, samples: &PosteriorSamples, truth: SimTruth, grid: &[f64]) -> Result<FitMetrics> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no posterior samples".into()));
    }
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty metric grid".into()));
    }
    let draws: Vec<Vec<f64>> = samples
        .states
        .iter()
        .map(|s| curve_on_grid(model, s, 0, grid))
        .collect();
    let mut se = 0.0;
    let mut covered = 0usize;
    for (i, &t) in grid.iter().enumerate() {
        let col: Vec<f64> = draws.iter().map(|d| d[i]).collect();
        let band = Interval::from_draws(&col).expect("nonempty");
        let f = truth.eval(t);
        se += (band.mean - f).powi(2);
        covered += band.contains(f) as usize;
    }
    let mut infl = Vec::new();
    let mut half = Vec::new();
    for s in &samples.states {
        match draw_milestones(model, s, 0) {
            Ok((i, h)) => {
                infl.extend(i);
                half.push(h);
            }
            Err(Error::Undefined(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let half = Interval::from_draws(&half).ok_or_else(|| Error::Undefined("every draw is flat".into()))?;
    let infl = if model.mode() == ConstraintMode::MonotoneOnly {
        None
    } else {
        Interval::from_draws(&infl)
    };
    Ok(FitMetrics {
        curve_rmse: (se / grid.len() as f64).sqrt(),
        curve_coverage: covered as f64 / grid.len() as f64,
        inflection_error: infl.map(|i| (i.mean - truth.inflection()).abs()),
        inflection_covered: infl.map(|i| i.contains(truth.inflection())),
        half_progression_error: (half.mean - truth.half_progression()).abs(),
        half_progression_covered: half.contains(truth.half_progression()),
    })
}

/// One aggregated cell of the comparison table.
#[derive(Clone, Debug, PartialEq)]
pub struct SimReportRow {
    pub truth: SimTruth,
    pub model: ConstraintMode,
    pub knot_range: (f64, f64),
    pub n_replicates: usize,
    pub curve_rmse: f64,
    pub curve_coverage: f64,
    pub inflection_rmse: Option<f64>,
    pub inflection_coverage: Option<f64>,
    pub t50_rmse: f64,
    pub t50_coverage: f64,
    pub n_failed: usize,
}

impl SimReportRow {
    pub fn key(&self) -> (SimTruth, ConstraintMode, String) {
        (self.truth, self.model, format_range(self.knot_range))
    }

    /// Aggregates replicate metrics; the curve RMSE is the root of the mean
    /// of per-replicate mean squared errors.
    pub fn aggregate(
        truth: SimTruth,
        model: ConstraintMode,
        knot_range: (f64, f64),
        metrics: &[FitMetrics],
        n_failed: usize,
    ) -> SimReportRow {
        let n = metrics.len() as f64;
        let mean = |f: &dyn Fn(&FitMetrics) -> f64| metrics.iter().map(f).sum::<f64>() / n;
        let (inflection_rmse, inflection_coverage) = if model != ConstraintMode::MonotoneOnly
            && metrics.iter().all(|m| m.inflection_error.is_some())
            && !metrics.is_empty()
        {
            (
                Some(mean(&|m| m.inflection_error.unwrap().powi(2)).sqrt()),
                Some(mean(&|m| m.inflection_covered.unwrap() as u8 as f64)),
            )
        } else {
            (None, None)
        };
        SimReportRow {
            truth,
            model,
            knot_range,
            n_replicates: metrics.len(),
            curve_rmse: mean(&|m| m.curve_rmse.powi(2)).sqrt(),
            curve_coverage: mean(&|m| m.curve_coverage),
            inflection_rmse,
            inflection_coverage,
            t50_rmse: mean(&|m| m.half_progression_error.powi(2)).sqrt(),
            t50_coverage: mean(&|m| m.half_progression_covered as u8 as f64),
            n_failed,
        }
    }
}

pub fn format_range((lo, hi): (f64, f64)) -> String {
    format!("{lo}-{hi}")
}

fn parse_range_cell(s: &str) -> Result<(f64, f64)> {
    let bad = || Error::Parse {
        location: "report".into(),
        message: format!("bad knot range `{s}`"),
    };
    let (a, b) = s.split_once('-').ok_or_else(bad)?;
    Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
}

pub const REPORT_COLUMNS: [&str; 11] = [
    "truth",
    "model",
    "knot_range",
    "n_replicates",
    "curve_rmse",
    "curve_coverage",
    "inflection_rmse",
    "inflection_coverage",
    "t50_rmse",
    "t50_coverage",
    "n_failed",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimReport {
    pub rows: Vec<SimReportRow>,
}

impl SimReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(REPORT_COLUMNS)?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let num = |x: f64| if x.is_nan() { String::new() } else { x.to_string() };
        for r in &self.rows {
            w.write_record([
                r.truth.to_string(),
                r.model.to_string(),
                format_range(r.knot_range),
                r.n_replicates.to_string(),
                num(r.curve_rmse),
                num(r.curve_coverage),
                opt(r.inflection_rmse),
                opt(r.inflection_coverage),
                num(r.t50_rmse),
                num(r.t50_coverage),
                r.n_failed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, origin: &str) -> Result<SimReport> {
        let mut rdr = csv::ReaderBuilder::new().from_reader(input);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header != REPORT_COLUMNS {
            return Err(Error::Schema(format!(
                "{origin}: report columns {header:?} do not match {REPORT_COLUMNS:?}"
            )));
        }
        let mut rows = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let loc = format!("{origin}:{}", line + 2);
            let perr = |m: String| Error::Parse {
                location: loc.clone(),
                message: m,
            };
            let f = |i: usize| -> Result<f64> {
                let c = &rec[i];
                if c.is_empty() {
                    return Ok(f64::NAN);
                }
                c.parse()
                    .map_err(|_| perr(format!("bad number `{c}` in `{}`", REPORT_COLUMNS[i])))
            };
            let o = |i: usize| -> Result<Option<f64>> { f(i).map(|v| if v.is_nan() { None } else { Some(v) }) };
            let u =
                |i: usize| -> Result<usize> { rec[i].parse().map_err(|_| perr(format!("bad count `{}`", &rec[i]))) };
            rows.push(SimReportRow {
                truth: rec[0].parse()?,
                model: rec[1].parse()?,
                knot_range: parse_range_cell(&rec[2])?,
                n_replicates: u(3)?,
                curve_rmse: f(4)?,
                curve_coverage: f(5)?,
                inflection_rmse: o(6)?,
                inflection_coverage: o(7)?,
                t50_rmse: f(8)?,
                t50_coverage: f(9)?,
                n_failed: u(10)?,
            });
        }
        Ok(SimReport { rows })
    }

    /// Merges reports in order; a later row replaces an earlier one with the
    /// same (truth, model, knot range). Output is sorted by that key.
    pub fn merge(reports: &[SimReport]) -> SimReport {
        let mut map = std::collections::BTreeMap::new();
        for r in reports {
            for row in &r.rows {
                let key = row.key();
                if map.insert(key.clone(), row.clone()).is_some() {
                    log::warn!("duplicate report cell {key:?}: later run wins");
                }
            }
        }
        SimReport {
            rows: map.into_values().collect(),
        }
    }
}

/// Settings of a simulation sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonPlan {
    pub truths: Vec<SimTruth>,
    pub variants: Vec<ConstraintMode>,
    pub knot_ranges: Vec<(f64, f64)>,
    pub n_replicates: usize,
    pub seed: u64,
    pub sampler: SamplerConfig,
    /// Range and spacing of the metric grid.
    pub metric_range: (f64, f64),
    pub grid_step: f64,
    pub settings: SimSettings,
    pub model_overrides: Option<ModelConfig>,
}

impl ComparisonPlan {
    pub fn new(truths: Vec<SimTruth>, variants: Vec<ConstraintMode>, n_replicates: usize, seed: u64) -> Self {
        ComparisonPlan {
            truths,
            variants,
            knot_ranges: vec![(0.0, AGE_DOMAIN_MAX)],
            n_replicates,
            seed,
            sampler: SamplerConfig::default(),
            metric_range: (30.0, 90.0),
            grid_step: 0.2,
            settings: SimSettings::default(),
            model_overrides: None,
        }
    }

    pub fn dataset_seed(&self, truth: SimTruth, replicate: usize) -> u64 {
        let t = SimTruth::ALL.iter().position(|x| *x == truth).unwrap() as u64;
        let mut r = substream(self.seed, &[0xDA7A, t, replicate as u64]);
        r.random()
    }

    /// Model configuration for one cell; the logistic model ignores the range.
    pub fn model_config(&self, variant: ConstraintMode, range: (f64, f64)) -> ModelConfig {
        let mut cfg = match &self.model_overrides {
            Some(c) => {
                let mut c = c.clone();
                let defaults = ModelConfig::new(variant);
                if c.mode != variant {
                    c.hyper_scale = defaults.hyper_scale;
                }
                c.mode = variant;
                c
            }
            None => ModelConfig::new(variant),
        };
        cfg.knot_range = range;
        cfg
    }
}

/// Result of fitting one variant to one replicate.
#[derive(Debug)]
pub struct ReplicateOutcome {
    pub truth: SimTruth,
    pub variant: ConstraintMode,
    pub knot_range: (f64, f64),
    pub replicate: usize,
    pub metrics: Result<FitMetrics>,
    pub seconds: f64,
}

/// Fits one cell of the sweep. Every variant sees the same simulated dataset
/// for a given truth and replicate.
pub fn run_replicate(
    plan: &ComparisonPlan,
    truth: SimTruth,
    variant: ConstraintMode,
    range: (f64, f64),
    replicate: usize,
) -> ReplicateOutcome {
    let start = Instant::now();
    let metrics = (|| {
        let ds = simulate_with(truth, &plan.settings, plan.dataset_seed(truth, replicate))?;
        let model = Model::build(&plan.model_config(variant, range), &ds)?;
        let mut sampler = plan.sampler.clone();
        sampler.seed = substream(plan.dataset_seed(truth, replicate), &[variant as u64]).random();
        let samples = run_chain(&sampler, &model)?;
        let grid = make_grid(plan.metric_range.0, plan.metric_range.1, plan.grid_step)?;
        evaluate_fit(&model, &samples, truth, &grid)
    })();
    ReplicateOutcome {
        truth,
        variant,
        knot_range: range,
        replicate,
        metrics,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// All cells of the sweep, in a fixed order: truth, variant, knot range,
/// replicate. The logistic model is fitted once per truth.
pub fn sweep_cells(plan: &ComparisonPlan) -> Vec<(SimTruth, ConstraintMode, (f64, f64), usize)> {
    let mut cells = Vec::new();
    for &truth in &plan.truths {
        for &variant in &plan.variants {
            let ranges = if variant.uses_splines() {
                plan.knot_ranges.clone()
            } else {
                vec![(0.0, AGE_DOMAIN_MAX)]
            };
            for range in ranges {
                for rep in 0..plan.n_replicates {
                    cells.push((truth, variant, range, rep));
                }
            }
        }
    }
    cells
}

/// Collapses replicate outcomes into report rows; failures are counted,
/// not fatal.
pub fn aggregate_outcomes(plan: &ComparisonPlan, outcomes: &[ReplicateOutcome]) -> SimReport {
    let mut rows = Vec::new();
    if plan.n_replicates == 0 {
        return SimReport { rows };
    }
    let mut keys: Vec<(SimTruth, ConstraintMode, (f64, f64))> = Vec::new();
    for (t, v, r, _) in sweep_cells(plan) {
        if !keys.contains(&(t, v, r)) {
            keys.push((t, v, r));
        }
    }
    for (t, v, r) in keys {
        let mut ok = Vec::new();
        let mut failed = 0;
        for o in outcomes
            .iter()
            .filter(|o| o.truth == t && o.variant == v && o.knot_range == r)
        {
            match &o.metrics {
                Ok(m) => ok.push(m.clone()),
                Err(e) => {
                    log::warn!("{t} {v} {} replicate {}: {e}", format_range(r), o.replicate);
                    failed += 1;
                }
            }
        }
        rows.push(SimReportRow::aggregate(t, v, r, &ok, failed));
    }
    SimReport { rows }
}

/// Runs the whole sweep sequentially.
pub fn run_comparison(plan: &ComparisonPlan) -> SimReport {
    let outcomes: Vec<ReplicateOutcome> = sweep_cells(plan)
        .into_iter()
        .map(|(t, v, r, rep)| run_replicate(plan, t, v, r, rep))
        .collect();
    aggregate_outcomes(plan, &outcomes)
}

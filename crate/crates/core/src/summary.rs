//! Posterior functionals of fitted curves: pointwise bands, standardized
//! curves, inflection points, half-progression ages and effect tables.

use crate::error::{Error, Result};
use crate::model::{ConstraintMode, Model, ModelState};
use crate::sampler::PosteriorSamples;
use crate::spline_basis::{BasisSpec, AGE_DOMAIN_MAX};
use std::io::Write;

/// Points in the coarse scan preceding the inflection-point refinement.
pub const INFLECTION_SCAN_POINTS: usize = 2000;

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean with the 2.5% and 97.5% quantiles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn from_draws(draws: &[f64]) -> Option<Interval> {
        if draws.is_empty() {
            return None;
        }
        let mut sorted = draws.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        Some(Interval {
            // keep the ordering exact when all draws coincide
            mean: mean.clamp(sorted[0], sorted[sorted.len() - 1]),
            lower: quantile_sorted(&sorted, 0.025),
            upper: quantile_sorted(&sorted, 0.975),
        })
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

/// Evenly spaced grid from `lo` to `hi` inclusive.
pub fn make_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(hi >= lo) {
        return Err(Error::InvalidArgument(format!(
            "bad grid [{lo}, {hi}] with step {step}"
        )));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    let mut g: Vec<f64> = (0..=n).map(|i| lo + i as f64 * step).collect();
    if hi - g[n] > 1e-9 * step.max(1.0) {
        g.push(hi);
    }
    Ok(g)
}

/// Default summary grid: 601 points on `[0, 120]`.
pub fn default_grid() -> Vec<f64> {
    make_grid(0.0, AGE_DOMAIN_MAX, 0.2).expect("valid grid")
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveBand {
    pub biomarker: String,
    pub raw: Vec<Interval>,
    pub standardized: Vec<Interval>,
    /// Draws with `f(120) = f(0)`, left out of the standardized band.
    pub n_degenerate: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveSummary {
    pub grid: Vec<f64>,
    pub bands: Vec<CurveBand>,
}

/// `f(t)` for every grid point of one draw.
pub fn curve_on_grid(model: &Model, state: &ModelState, k: usize, grid: &[f64]) -> Vec<f64> {
    grid.iter().map(|&t| model.curve_value(state, k, t)).collect()
}

/// `(f(t) − f(0)) / (f(120) − f(0))`, or `None` when the denominator vanishes.
pub fn standardize_curve(model: &Model, state: &ModelState, k: usize, values: &[f64]) -> Option<Vec<f64>> {
    let f0 = model.curve_value(state, k, 0.0);
    let f1 = model.curve_value(state, k, AGE_DOMAIN_MAX);
    let den = f1 - f0;
    if !(den > 0.0) {
        return None;
    }
    Some(values.iter().map(|v| ((v - f0) / den).clamp(0.0, 1.0)).collect())
}

fn transpose_intervals(rows: &[Vec<f64>], n: usize) -> Vec<Interval> {
    (0..n)
        .map(|i| {
            let col: Vec<f64> = rows.iter().map(|r| r[i]).collect();
            Interval::from_draws(&col).unwrap_or(Interval {
                mean: f64::NAN,
                lower: f64::NAN,
                upper: f64::NAN,
            })
        })
        .collect()
}

pub fn curve_summary(model: &Model, samples: &PosteriorSamples, grid: &[f64]) -> Result<CurveSummary> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no posterior samples".into()));
    }
    let mut bands = Vec::with_capacity(model.n_biomarkers());
    for k in 0..model.n_biomarkers() {
        let mut raw = Vec::with_capacity(samples.len());
        let mut std = Vec::with_capacity(samples.len());
        let mut n_degenerate = 0;
        for s in &samples.states {
            let v = curve_on_grid(model, s, k, grid);
            match standardize_curve(model, s, k, &v) {
                Some(z) => std.push(z),
                None => n_degenerate += 1,
            }
            raw.push(v);
        }
        if n_degenerate > 0 {
            log::warn!(
                "{}: {n_degenerate} draws with a flat curve left out of the standardized band",
                model.biomarker_names[k]
            );
        }
        bands.push(CurveBand {
            biomarker: model.biomarker_names[k].clone(),
            raw: transpose_intervals(&raw, grid.len()),
            standardized: transpose_intervals(&std, grid.len()),
            n_degenerate,
        });
    }
    Ok(CurveSummary {
        grid: grid.to_vec(),
        bands,
    })
}

impl CurveSummary {
    /// Columns: `biomarker,age,mean,lower,upper,std_mean,std_lower,std_upper`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record([
            "biomarker",
            "age",
            "mean",
            "lower",
            "upper",
            "std_mean",
            "std_lower",
            "std_upper",
        ])?;
        for b in &self.bands {
            for (i, t) in self.grid.iter().enumerate() {
                let (r, s) = (b.raw[i], b.standardized[i]);
                w.write_record([
                    b.biomarker.clone(),
                    t.to_string(),
                    r.mean.to_string(),
                    r.lower.to_string(),
                    r.upper.to_string(),
                    s.mean.to_string(),
                    s.lower.to_string(),
                    s.upper.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Age of fastest increase of `f(·; γ)` on `[L, U]`.
///
/// A scan over [`INFLECTION_SCAN_POINTS`] points locates the maximum of
/// `f′` (smallest age on ties), then golden-section search refines it
/// between the neighbouring scan points.
pub fn inflection_point(basis: &BasisSpec, gamma: &[f64]) -> Result<f64> {
    if gamma.len() != basis.n_basis() {
        return Err(Error::DimensionMismatch {
            expected: basis.n_basis(),
            found: gamma.len(),
        });
    }
    if gamma.iter().all(|g| *g == 0.0) {
        return Err(Error::Undefined("flat curve has no inflection point".into()));
    }
    let (lo, hi) = (basis.lower(), basis.upper());
    let n = INFLECTION_SCAN_POINTS;
    let h = (hi - lo) / (n - 1) as f64;
    let mut best = (0, f64::NEG_INFINITY);
    for i in 0..n {
        let d = basis.derivative(gamma, lo + i as f64 * h);
        if d > best.1 {
            best = (i, d);
        }
    }
    let a = lo + best.0.saturating_sub(1) as f64 * h;
    let b = (lo + (best.0 + 1) as f64 * h).min(hi);
    let t = golden_max(|t| basis.derivative(gamma, t), a, b, 1e-9);
    // the refinement must not lose to the scan point
    if basis.derivative(gamma, t) >= best.1 {
        Ok(t)
    } else {
        Ok(lo + best.0 as f64 * h)
    }
}

fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Smallest age with `f(t) ≥ f(U)/2`, by bisection to 1e−6 years.
pub fn half_progression_time(basis: &BasisSpec, gamma: &[f64]) -> Result<f64> {
    let (lo, hi) = (basis.lower(), basis.upper());
    let f = |t: f64| basis.curve(gamma, t).map(|(v, _)| v);
    let top = f(hi)?;
    if !(top > 0.0) {
        return Err(Error::Undefined("curve does not rise on [L, U]".into()));
    }
    let half = 0.5 * top;
    let (mut a, mut b) = (lo, hi);
    while b - a > 1e-6 {
        let m = 0.5 * (a + b);
        if f(m)? >= half {
            b = m;
        } else {
            a = m;
        }
    }
    Ok(0.5 * (a + b))
}

/// Inflection point and half-progression age of one draw. The logistic
/// curve has both at its midpoint `c`; the monotone model reports no
/// inflection point.
pub fn draw_milestones(model: &Model, state: &ModelState, k: usize) -> Result<(Option<f64>, f64)> {
    match (model.mode(), &model.basis) {
        (ConstraintMode::LogisticParametric, _) => {
            let c = state.logistic[k].c;
            Ok((Some(c), c))
        }
        (mode, Some(basis)) => {
            let g = &state.gamma[k];
            let t50 = half_progression_time(basis, g)?;
            let inflection = if mode == ConstraintMode::SShaped {
                Some(inflection_point(basis, g)?)
            } else {
                None
            };
            Ok((inflection, t50))
        }
        (_, None) => unreachable!("spline models carry a basis"),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MilestoneSummary {
    pub biomarker: String,
    pub inflection: Option<Interval>,
    pub half_progression: Interval,
    /// Draws for which a milestone was undefined.
    pub n_undefined: usize,
}

pub fn milestones(model: &Model, samples: &PosteriorSamples) -> Result<Vec<MilestoneSummary>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no posterior samples".into()));
    }
    let mut out = Vec::new();
    for k in 0..model.n_biomarkers() {
        let mut infl = Vec::new();
        let mut half = Vec::new();
        let mut n_undefined = 0;
        for s in &samples.states {
            match draw_milestones(model, s, k) {
                Ok((i, h)) => {
                    infl.extend(i);
                    half.push(h);
                }
                Err(Error::Undefined(_)) => n_undefined += 1,
                Err(e) => return Err(e),
            }
        }
        let half_progression = Interval::from_draws(&half)
            .ok_or_else(|| Error::Undefined(format!("{}: every draw is flat", model.biomarker_names[k])))?;
        out.push(MilestoneSummary {
            biomarker: model.biomarker_names[k].clone(),
            inflection: Interval::from_draws(&infl),
            half_progression,
            n_undefined,
        });
    }
    Ok(out)
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Columns: `biomarker,inflection_mean,inflection_lower,inflection_upper,
/// t50_mean,t50_lower,t50_upper,n_undefined`; inflection cells are empty
/// for the monotone model.
pub fn write_milestones<W: Write>(rows: &[MilestoneSummary], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record([
        "biomarker",
        "inflection_mean",
        "inflection_lower",
        "inflection_upper",
        "t50_mean",
        "t50_lower",
        "t50_upper",
        "n_undefined",
    ])?;
    for r in rows {
        let i = r.inflection;
        w.write_record([
            r.biomarker.clone(),
            opt(i.map(|x| x.mean)),
            opt(i.map(|x| x.lower)),
            opt(i.map(|x| x.upper)),
            r.half_progression.mean.to_string(),
            r.half_progression.lower.to_string(),
            r.half_progression.upper.to_string(),
            r.n_undefined.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub enum Contrast {
    /// Effect of a unit change in one named covariate.
    Covariate(String),
    /// `Δᵀβ` for an explicit vector over the design columns.
    Vector { label: String, weights: Vec<f64> },
    /// `f(t₂) − f(t₁)`.
    Age { from: f64, to: f64 },
}

impl Contrast {
    pub fn label(&self) -> String {
        match self {
            Contrast::Covariate(n) => n.clone(),
            Contrast::Vector { label, .. } => label.clone(),
            Contrast::Age { from, to } => format!("age {from} to {to}"),
        }
    }

    /// Covariate names, or `age:from-to`.
    pub fn parse(text: &str) -> Result<Contrast> {
        let t = text.trim();
        if let Some(rest) = t.strip_prefix("age:") {
            let (a, b) = rest.split_once('-').ok_or_else(|| Error::Parse {
                location: "contrast".into(),
                message: format!("expected `age:FROM-TO`, found `{t}`"),
            })?;
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|_| Error::Parse {
                    location: "contrast".into(),
                    message: format!("bad age `{s}` in `{t}`"),
                })
            };
            return Ok(Contrast::Age {
                from: parse(a)?,
                to: parse(b)?,
            });
        }
        Ok(Contrast::Covariate(t.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EffectRow {
    pub biomarker: String,
    pub contrast: String,
    pub effect: Interval,
}

impl EffectRow {
    pub fn contains_zero(&self) -> bool {
        self.effect.contains(0.0)
    }
}

pub fn effect_table(model: &Model, samples: &PosteriorSamples, contrasts: &[Contrast]) -> Result<Vec<EffectRow>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no posterior samples".into()));
    }
    let q = model.q();
    let resolved: Vec<(String, Option<Vec<f64>>, Option<(f64, f64)>)> = contrasts
        .iter()
        .map(|c| match c {
            Contrast::Covariate(name) => {
                let j = model
                    .covariate_names
                    .iter()
                    .position(|n| n == name)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown covariate `{name}` in contrast")))?;
                let mut w = vec![0.0; q];
                w[j] = 1.0;
                Ok((c.label(), Some(w), None))
            }
            Contrast::Vector { weights, .. } => {
                if weights.len() != q {
                    return Err(Error::DimensionMismatch {
                        expected: q,
                        found: weights.len(),
                    });
                }
                Ok((c.label(), Some(weights.clone()), None))
            }
            Contrast::Age { from, to } => Ok((c.label(), None, Some((*from, *to)))),
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for k in 0..model.n_biomarkers() {
        for (label, w, ages) in &resolved {
            let draws: Vec<f64> = samples
                .states
                .iter()
                .map(|s| match (w, ages) {
                    (Some(w), _) => w.iter().zip(&s.beta[k]).map(|(a, b)| a * b).sum(),
                    (None, Some((a, b))) => {
                        if a == b {
                            0.0
                        } else {
                            model.curve_value(s, k, *b) - model.curve_value(s, k, *a)
                        }
                    }
                    _ => unreachable!(),
                })
                .collect();
            out.push(EffectRow {
                biomarker: model.biomarker_names[k].clone(),
                contrast: label.clone(),
                effect: Interval::from_draws(&draws).expect("nonempty"),
            });
        }
    }
    Ok(out)
}

/// Columns: `biomarker,contrast,mean,lower,upper,contains_zero`.
pub fn write_effects<W: Write>(rows: &[EffectRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(["biomarker", "contrast", "mean", "lower", "upper", "contains_zero"])?;
    for r in rows {
        w.write_record([
            r.biomarker.clone(),
            r.contrast.clone(),
            r.effect.mean.to_string(),
            r.effect.lower.to_string(),
            r.effect.upper.to_string(),
            r.contains_zero().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

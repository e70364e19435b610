//! Long-format longitudinal data: schema, CSV ingestion and preprocessing.
//!
//! Preprocessing runs in a fixed order: sign orientation, learning-effect
//! adjustment of cognitive biomarkers, then standardization. Each step
//! orients signs first if that has not happened yet, and the dataset
//! remembers it, so the pipeline can be rerun safely.

use crate::config::{parse_range, KeyValueConfig};
use crate::error::{Error, Result};
use crate::spline_basis::AGE_DOMAIN_MAX;
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

/// Years after the first visit over which learning effects accumulate.
pub const LEARNING_WINDOW_YEARS: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CovariateKind {
    Binary,
    Continuous,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CovariateSpec {
    pub name: String,
    pub kind: CovariateKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiomarkerSpec {
    pub name: String,
    pub group: String,
    /// +1 or −1; applied so that larger values mean greater abnormality.
    pub sign: f64,
    pub cognitive: bool,
}

/// Column layout and per-biomarker metadata of an input file.
#[derive(Clone, Debug, PartialEq)]
pub struct Schema {
    pub covariates: Vec<CovariateSpec>,
    pub biomarkers: Vec<BiomarkerSpec>,
    pub age_range: (f64, f64),
    /// Extra per-visit columns carried through to outputs untouched.
    pub passthrough: Vec<String>,
}

const SCHEMA_KEYS: &[&str] = &["covariates", "biomarkers", "age_range", "passthrough"];
const SCHEMA_PREFIXES: &[&str] = &["group", "sign", "cognitive"];

impl Schema {
    /// Schema from a key-value config:
    ///
    /// ```text
    /// covariates = sex:binary, education:continuous
    /// biomarkers = abeta, hippo, memory
    /// group.abeta = CSF
    /// sign.hippo = -1
    /// cognitive.memory = true
    /// age_range = 0, 120
    /// passthrough = diagnosis
    /// ```
    ///
    /// A biomarker without a `group.` entry forms its own group.
    pub fn from_config(cfg: &KeyValueConfig) -> Result<Self> {
        cfg.reject_unknown(SCHEMA_KEYS, SCHEMA_PREFIXES)?;
        let mut covariates = Vec::new();
        for item in cfg.list("covariates") {
            let (name, kind) = match item.split_once(':') {
                Some((n, k)) => (n.trim(), k.trim()),
                None => (item.as_str(), "continuous"),
            };
            let kind = match kind {
                "binary" => CovariateKind::Binary,
                "continuous" => CovariateKind::Continuous,
                other => return Err(Error::Schema(format!("covariate `{name}` has unknown type `{other}`"))),
            };
            covariates.push(CovariateSpec {
                name: name.to_string(),
                kind,
            });
        }
        let names = cfg.list("biomarkers");
        if names.is_empty() {
            return Err(Error::Schema("no biomarkers declared".into()));
        }
        let mut biomarkers: Vec<BiomarkerSpec> = names
            .iter()
            .map(|n| BiomarkerSpec {
                name: n.clone(),
                group: n.clone(),
                sign: 1.0,
                cognitive: false,
            })
            .collect();
        let find = |name: &str, what: &str| -> Result<usize> {
            names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Schema(format!("{what}.{name} refers to an undeclared biomarker")))
        };
        for (name, v) in cfg.with_prefix("group") {
            biomarkers[find(name, "group")?].group = v.to_string();
        }
        for (name, v) in cfg.with_prefix("sign") {
            let sign = match v {
                "1" | "+1" => 1.0,
                "-1" => -1.0,
                _ => return Err(Error::Schema(format!("sign.{name} must be +1 or -1, got `{v}`"))),
            };
            biomarkers[find(name, "sign")?].sign = sign;
        }
        for (name, v) in cfg.with_prefix("cognitive") {
            let flag = match v {
                "true" | "yes" | "1" => true,
                "false" | "no" | "0" => false,
                _ => return Err(Error::Schema(format!("cognitive.{name} must be true or false"))),
            };
            biomarkers[find(name, "cognitive")?].cognitive = flag;
        }
        let age_range = match cfg.get("age_range") {
            Some(v) => parse_range(v)?,
            None => (0.0, AGE_DOMAIN_MAX),
        };
        let schema = Schema {
            covariates,
            biomarkers,
            age_range,
            passthrough: cfg.list("passthrough"),
        };
        schema.check_names()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_config(&KeyValueConfig::load(path)?)
    }

    fn check_names(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        let all = ["subject_id", "age"]
            .into_iter()
            .chain(self.covariates.iter().map(|c| c.name.as_str()))
            .chain(self.biomarkers.iter().map(|b| b.name.as_str()))
            .chain(self.passthrough.iter().map(String::as_str));
        for name in all {
            if !seen.insert(name) {
                return Err(Error::Schema(format!("column `{name}` declared twice")));
            }
        }
        let (lo, hi) = self.age_range;
        if lo < 0.0 || hi > AGE_DOMAIN_MAX {
            return Err(Error::Schema(format!(
                "age range [{lo}, {hi}] must lie within [0, {AGE_DOMAIN_MAX}]"
            )));
        }
        Ok(())
    }

    /// Covariate names as they appear in `x_i`, starting with the intercept.
    pub fn design_names(&self) -> Vec<String> {
        std::iter::once("intercept".to_string())
            .chain(self.covariates.iter().map(|c| c.name.clone()))
            .collect()
    }

    /// Group labels in order of first appearance.
    pub fn group_labels(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for b in &self.biomarkers {
            if !out.contains(&b.group) {
                out.push(b.group.clone());
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Subject {
    pub id: String,
    /// `x_i`, with the leading intercept entry 1.
    pub covariates: Vec<f64>,
    pub ages: Vec<f64>,
    /// `outcomes[j][k]`; meaningful only where `observed[j][k]`.
    pub outcomes: Vec<Vec<f64>>,
    pub observed: Vec<Vec<bool>>,
    pub passthrough: Vec<Vec<String>>,
}

impl Subject {
    pub fn n_visits(&self) -> usize {
        self.ages.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LongitudinalDataset {
    pub schema: Schema,
    pub subjects: Vec<Subject>,
    /// Subjects excluded at load time for missing covariates.
    pub dropped_subjects: usize,
    signs_applied: bool,
}

impl LongitudinalDataset {
    /// Validated dataset from in-memory subjects (signs not yet applied).
    pub fn new(schema: Schema, subjects: Vec<Subject>) -> Result<Self> {
        schema.check_names()?;
        let ds = LongitudinalDataset {
            schema,
            subjects,
            dropped_subjects: 0,
            signs_applied: false,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let q = self.q();
        let k = self.n_biomarkers();
        if self.subjects.is_empty() {
            return Err(Error::Validation("dataset has no subjects".into()));
        }
        for s in &self.subjects {
            if s.covariates.len() != q || s.covariates[0] != 1.0 {
                return Err(Error::Validation(format!(
                    "subject {}: covariate vector must have {q} entries starting with 1",
                    s.id
                )));
            }
            if s.covariates.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("subject {}: non-finite covariate", s.id)));
            }
            for (c, spec) in s.covariates[1..].iter().zip(&self.schema.covariates) {
                if spec.kind == CovariateKind::Binary && *c != 0.0 && *c != 1.0 {
                    return Err(Error::Validation(format!(
                        "subject {}: binary covariate `{}` has value {c}",
                        s.id, spec.name
                    )));
                }
            }
            let j = s.n_visits();
            if j == 0 || s.outcomes.len() != j || s.observed.len() != j {
                return Err(Error::Validation(format!(
                    "subject {}: inconsistent visit arrays",
                    s.id
                )));
            }
            if s.outcomes.iter().any(|r| r.len() != k) || s.observed.iter().any(|r| r.len() != k) {
                return Err(Error::Validation(format!(
                    "subject {}: each visit needs {k} biomarker entries",
                    s.id
                )));
            }
            if !s.passthrough.is_empty() && s.passthrough.len() != j {
                return Err(Error::Validation(format!("subject {}: passthrough rows", s.id)));
            }
            for w in s.ages.windows(2) {
                if !(w[1] > w[0]) {
                    return Err(Error::Validation(format!(
                        "subject {}: ages must be strictly increasing ({} then {})",
                        s.id, w[0], w[1]
                    )));
                }
            }
            if let Some(a) = s.ages.iter().find(|a| !(**a >= 0.0 && **a <= AGE_DOMAIN_MAX)) {
                return Err(Error::Validation(format!(
                    "subject {}: age {a} outside [0, {AGE_DOMAIN_MAX}]",
                    s.id
                )));
            }
            for (row, obs) in s.outcomes.iter().zip(&s.observed) {
                if row.iter().zip(obs).any(|(v, o)| *o && !v.is_finite()) {
                    return Err(Error::Validation(format!("subject {}: non-finite outcome", s.id)));
                }
            }
        }
        for (kk, b) in self.schema.biomarkers.iter().enumerate() {
            if self.n_observed(kk) == 0 {
                return Err(Error::Validation(format!("biomarker `{}` is never observed", b.name)));
            }
        }
        Ok(())
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_biomarkers(&self) -> usize {
        self.schema.biomarkers.len()
    }

    /// Dimension of `x_i` including the intercept.
    pub fn q(&self) -> usize {
        self.schema.covariates.len() + 1
    }

    pub fn n_observed(&self, k: usize) -> usize {
        self.subjects
            .iter()
            .flat_map(|s| s.observed.iter())
            .filter(|o| o[k])
            .count()
    }

    pub fn n_missing(&self, k: usize) -> usize {
        self.total_visits() - self.n_observed(k)
    }

    pub fn total_visits(&self) -> usize {
        self.subjects.iter().map(Subject::n_visits).sum()
    }

    /// `J_tot`, observed entries across all biomarkers.
    pub fn total_observed(&self) -> usize {
        (0..self.n_biomarkers()).map(|k| self.n_observed(k)).sum()
    }

    pub fn signs_applied(&self) -> bool {
        self.signs_applied
    }

    pub fn all_ages(&self) -> Vec<f64> {
        self.subjects.iter().flat_map(|s| s.ages.iter().copied()).collect()
    }

    /// Same dataset restricted to the subjects at `idx` (in that order).
    pub fn select_subjects(&self, idx: &[usize]) -> Result<Self> {
        let mut out = self.clone();
        out.subjects = idx.iter().map(|&i| self.subjects[i].clone()).collect();
        out.validate()?;
        Ok(out)
    }
}

fn parse_err(origin: &str, line: u64, message: String) -> Error {
    Error::Parse {
        location: format!("{origin}:{line}"),
        message,
    }
}

/// Reads a CSV file described by `schema`.
pub fn load_dataset(path: &Path, schema: &Schema) -> Result<LongitudinalDataset> {
    let file = std::fs::File::open(path)?;
    read_dataset(file, schema, &path.display().to_string())
}

/// Reads long-format CSV from any reader; `origin` labels error locations.
///
/// Blank outcome cells are masked. A subject with any blank covariate cell
/// is excluded and counted in `dropped_subjects`.
pub fn read_dataset<R: Read>(reader: R, schema: &Schema, origin: &str) -> Result<LongitudinalDataset> {
    schema.check_names()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| parse_err(origin, 1, e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| col(name).ok_or_else(|| Error::Schema(format!("{origin}: missing column `{name}`")));
    let id_col = need("subject_id")?;
    let age_col = need("age")?;
    let cov_cols = schema
        .covariates
        .iter()
        .map(|c| need(&c.name))
        .collect::<Result<Vec<_>>>()?;
    let bio_cols = schema
        .biomarkers
        .iter()
        .map(|b| need(&b.name))
        .collect::<Result<Vec<_>>>()?;
    let pass_cols = schema.passthrough.iter().map(|p| need(p)).collect::<Result<Vec<_>>>()?;
    let known = 2 + cov_cols.len() + bio_cols.len() + pass_cols.len();
    if headers.len() != known {
        let unknown: Vec<&str> = headers
            .iter()
            .filter(|h| {
                *h != "subject_id"
                    && *h != "age"
                    && !schema.covariates.iter().any(|c| c.name == *h)
                    && !schema.biomarkers.iter().any(|b| b.name == *h)
                    && !schema.passthrough.iter().any(|p| p == *h)
            })
            .collect();
        return Err(Error::Schema(format!(
            "{origin}: unknown or duplicated columns {unknown:?}"
        )));
    }

    struct Draft {
        id: String,
        covariates: Vec<Option<f64>>,
        missing_cov: bool,
        ages: Vec<f64>,
        outcomes: Vec<Vec<f64>>,
        observed: Vec<Vec<bool>>,
        passthrough: Vec<Vec<String>>,
    }
    let mut order: Vec<Draft> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (row_idx, rec) in rdr.records().enumerate() {
        let line = row_idx as u64 + 2;
        let rec = rec.map_err(|e| parse_err(origin, line, e.to_string()))?;
        if rec.len() != headers.len() {
            return Err(parse_err(
                origin,
                line,
                format!("expected {} fields, found {}", headers.len(), rec.len()),
            ));
        }
        let id = rec[id_col].to_string();
        if id.is_empty() {
            return Err(parse_err(origin, line, "blank subject_id".into()));
        }
        let age: f64 = rec[age_col]
            .parse()
            .map_err(|_| parse_err(origin, line, format!("bad age `{}`", &rec[age_col])))?;
        let num = |c: usize, what: &str| -> Result<Option<f64>> {
            let cell = &rec[c];
            if cell.is_empty() {
                Ok(None)
            } else {
                cell.parse::<f64>().map(Some).map_err(|_| {
                    parse_err(
                        origin,
                        line,
                        format!("bad {what} value `{cell}` in column `{}`", &headers[c]),
                    )
                })
            }
        };
        let covs = cov_cols
            .iter()
            .map(|&c| num(c, "covariate"))
            .collect::<Result<Vec<_>>>()?;
        let outs = bio_cols
            .iter()
            .map(|&c| num(c, "biomarker"))
            .collect::<Result<Vec<_>>>()?;
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            order.push(Draft {
                id: id.clone(),
                covariates: covs.clone(),
                missing_cov: false,
                ages: Vec::new(),
                outcomes: Vec::new(),
                observed: Vec::new(),
                passthrough: Vec::new(),
            });
            order.len() - 1
        });
        let d = &mut order[slot];
        if let Some(&last) = d.ages.last() {
            if !(age > last) {
                return Err(Error::Validation(format!(
                    "{origin}:{line}: subject {id} has non-increasing ages ({last} then {age})"
                )));
            }
        }
        for (c, v) in covs.iter().enumerate() {
            match (d.covariates[c], v) {
                (_, None) | (None, _) => d.missing_cov = true,
                (Some(a), Some(b)) if a != *b => {
                    return Err(Error::Validation(format!(
                        "{origin}:{line}: subject {id} has conflicting values for covariate `{}`",
                        schema.covariates[c].name
                    )))
                }
                _ => {}
            }
        }
        d.ages.push(age);
        d.observed.push(outs.iter().map(Option::is_some).collect());
        d.outcomes.push(outs.iter().map(|v| v.unwrap_or(f64::NAN)).collect());
        d.passthrough
            .push(pass_cols.iter().map(|&c| rec[c].to_string()).collect());
    }
    let mut subjects = Vec::new();
    let mut dropped = 0;
    let mut dropped_rows = 0;
    for d in order {
        if d.missing_cov {
            dropped += 1;
            dropped_rows += d.ages.len();
            continue;
        }
        let mut covariates = vec![1.0];
        covariates.extend(d.covariates.iter().map(|v| v.expect("checked above")));
        subjects.push(Subject {
            id: d.id,
            covariates,
            ages: d.ages,
            outcomes: d.outcomes,
            observed: d.observed,
            passthrough: if schema.passthrough.is_empty() {
                Vec::new()
            } else {
                d.passthrough
            },
        });
    }
    if dropped > 0 {
        log::warn!("{origin}: dropped {dropped} subjects ({dropped_rows} rows) with missing covariates");
    }
    let mut ds = LongitudinalDataset::new(schema.clone(), subjects)?;
    ds.dropped_subjects = dropped;
    Ok(ds)
}

/// Writes the dataset back in the input layout (binary covariates as 0/1,
/// masked outcomes blank, floats in shortest round-trip form).
pub fn write_dataset<W: Write>(ds: &LongitudinalDataset, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let mut header = vec!["subject_id".to_string(), "age".to_string()];
    header.extend(ds.schema.covariates.iter().map(|c| c.name.clone()));
    header.extend(ds.schema.biomarkers.iter().map(|b| b.name.clone()));
    header.extend(ds.schema.passthrough.iter().cloned());
    w.write_record(&header)?;
    for s in &ds.subjects {
        for j in 0..s.n_visits() {
            let mut row = vec![s.id.clone(), s.ages[j].to_string()];
            row.extend(s.covariates[1..].iter().map(|v| v.to_string()));
            for (v, o) in s.outcomes[j].iter().zip(&s.observed[j]) {
                row.push(if *o { v.to_string() } else { String::new() });
            }
            if let Some(p) = s.passthrough.get(j) {
                row.extend(p.iter().cloned());
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VariableKind {
    Biomarker,
    Covariate,
}

impl VariableKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            VariableKind::Biomarker => "biomarker",
            VariableKind::Covariate => "covariate",
        }
    }
}

/// How one variable was transformed: `new = (sign·old − learning − mean) / scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessEntry {
    pub variable: String,
    pub kind: VariableKind,
    pub mean: f64,
    pub scale: f64,
    pub sign: f64,
    /// Estimated learning slope, in sign-oriented units per year.
    pub learning_slope: Option<f64>,
    pub n_observed: usize,
    pub n_missing: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessReport {
    pub entries: Vec<PreprocessEntry>,
}

impl PreprocessReport {
    fn identity(ds: &LongitudinalDataset) -> Self {
        let mut entries: Vec<PreprocessEntry> = ds
            .schema
            .biomarkers
            .iter()
            .enumerate()
            .map(|(k, b)| PreprocessEntry {
                variable: b.name.clone(),
                kind: VariableKind::Biomarker,
                mean: 0.0,
                scale: 1.0,
                sign: b.sign,
                learning_slope: None,
                n_observed: ds.n_observed(k),
                n_missing: ds.n_missing(k),
            })
            .collect();
        entries.extend(ds.schema.covariates.iter().map(|c| PreprocessEntry {
            variable: c.name.clone(),
            kind: VariableKind::Covariate,
            mean: 0.0,
            scale: 1.0,
            sign: 1.0,
            learning_slope: None,
            n_observed: ds.n_subjects(),
            n_missing: 0,
        }));
        PreprocessReport { entries }
    }

    pub fn entry(&self, name: &str) -> Option<&PreprocessEntry> {
        self.entries.iter().find(|e| e.variable == name)
    }

    /// CSV columns: `variable,kind,sign,learning_slope,mean,scale,n_observed,n_missing`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record([
            "variable",
            "kind",
            "sign",
            "learning_slope",
            "mean",
            "scale",
            "n_observed",
            "n_missing",
        ])?;
        for e in &self.entries {
            w.write_record([
                e.variable.clone(),
                e.kind.as_str().to_string(),
                e.sign.to_string(),
                e.learning_slope.map(|v| v.to_string()).unwrap_or_default(),
                e.mean.to_string(),
                e.scale.to_string(),
                e.n_observed.to_string(),
                e.n_missing.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Multiplies every biomarker by its sign (once per dataset).
pub fn orient_signs(ds: &LongitudinalDataset) -> LongitudinalDataset {
    let mut out = ds.clone();
    if out.signs_applied {
        return out;
    }
    let signs: Vec<f64> = out.schema.biomarkers.iter().map(|b| b.sign).collect();
    for s in &mut out.subjects {
        for (row, obs) in s.outcomes.iter_mut().zip(&s.observed) {
            for ((v, o), sign) in row.iter_mut().zip(obs).zip(&signs) {
                if *o {
                    *v *= sign;
                }
            }
        }
    }
    out.signs_applied = true;
    out
}

/// Removes `α̂_k·min(elapsed, 3)` from each cognitive biomarker, where
/// `α̂_k` is the pooled no-intercept least-squares slope of score changes
/// from baseline on elapsed time, over visits at most 3 years after the
/// first visit. Subjects whose baseline value is masked contribute no pairs.
pub fn adjust_learning_effect(ds: &LongitudinalDataset) -> Result<(LongitudinalDataset, PreprocessReport)> {
    let mut out = orient_signs(ds);
    let mut report = PreprocessReport::identity(&out);
    for k in 0..out.n_biomarkers() {
        if !out.schema.biomarkers[k].cognitive {
            continue;
        }
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for s in &out.subjects {
            if !s.observed[0][k] {
                continue;
            }
            let base = s.outcomes[0][k];
            for j in 1..s.n_visits() {
                let e = s.ages[j] - s.ages[0];
                if e <= LEARNING_WINDOW_YEARS && s.observed[j][k] {
                    sxy += e * (s.outcomes[j][k] - base);
                    sxx += e * e;
                }
            }
        }
        if !(sxx > 0.0) {
            return Err(Error::Validation(format!(
                "cognitive biomarker `{}` has no visit pairs within {LEARNING_WINDOW_YEARS} years of an observed baseline",
                out.schema.biomarkers[k].name
            )));
        }
        let slope = sxy / sxx;
        for s in &mut out.subjects {
            let t0 = s.ages[0];
            for j in 0..s.ages.len() {
                if s.observed[j][k] {
                    s.outcomes[j][k] -= slope * (s.ages[j] - t0).min(LEARNING_WINDOW_YEARS);
                }
            }
        }
        report.entries[k].learning_slope = Some(slope);
    }
    Ok((out, report))
}

fn mean_and_sd(values: impl Iterator<Item = f64>) -> (f64, f64, usize) {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt(), v.len())
}

/// Centres and scales every biomarker (observed entries only) and every
/// continuous covariate to mean 0 and variance 1 (denominator n).
pub fn standardize(ds: &LongitudinalDataset) -> Result<(LongitudinalDataset, PreprocessReport)> {
    let mut out = orient_signs(ds);
    let mut report = PreprocessReport::identity(&out);
    for k in 0..out.n_biomarkers() {
        let name = out.schema.biomarkers[k].name.clone();
        let (mean, sd, n) = mean_and_sd(out.subjects.iter().flat_map(|s| {
            s.outcomes
                .iter()
                .zip(&s.observed)
                .filter(|(_, o)| o[k])
                .map(|(r, _)| r[k])
        }));
        if n < 2 {
            return Err(Error::Validation(format!(
                "biomarker `{name}` needs at least 2 observed values to standardize"
            )));
        }
        if !(sd > 0.0) {
            return Err(Error::Validation(format!("biomarker `{name}` has zero variance")));
        }
        for s in &mut out.subjects {
            for (row, obs) in s.outcomes.iter_mut().zip(&s.observed) {
                if obs[k] {
                    row[k] = (row[k] - mean) / sd;
                }
            }
        }
        report.entries[k].mean = mean;
        report.entries[k].scale = sd;
    }
    let kb = out.n_biomarkers();
    for c in 0..out.schema.covariates.len() {
        if out.schema.covariates[c].kind != CovariateKind::Continuous {
            continue;
        }
        let (mean, sd, _) = mean_and_sd(out.subjects.iter().map(|s| s.covariates[c + 1]));
        if !(sd > 0.0) {
            return Err(Error::Validation(format!(
                "covariate `{}` has zero variance",
                out.schema.covariates[c].name
            )));
        }
        for s in &mut out.subjects {
            s.covariates[c + 1] = (s.covariates[c + 1] - mean) / sd;
        }
        report.entries[kb + c].mean = mean;
        report.entries[kb + c].scale = sd;
    }
    Ok((out, report))
}

/// Sign orientation, learning-effect adjustment, then standardization.
pub fn preprocess(ds: &LongitudinalDataset) -> Result<(LongitudinalDataset, PreprocessReport)> {
    let (adjusted, learning) = adjust_learning_effect(ds)?;
    let (out, mut report) = standardize(&adjusted)?;
    for (e, l) in report.entries.iter_mut().zip(&learning.entries) {
        e.learning_slope = l.learning_slope;
    }
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(cognitive: bool, sign: f64) -> Schema {
        Schema {
            covariates: vec![
                CovariateSpec {
                    name: "sex".into(),
                    kind: CovariateKind::Binary,
                },
                CovariateSpec {
                    name: "edu".into(),
                    kind: CovariateKind::Continuous,
                },
            ],
            biomarkers: vec![BiomarkerSpec {
                name: "score".into(),
                group: "COG".into(),
                sign,
                cognitive,
            }],
            age_range: (0.0, 120.0),
            passthrough: vec![],
        }
    }

    const TOY: &str = "subject_id,age,sex,edu,score\n\
        a,60,1,12,1.5\n\
        a,61,1,12,\n\
        a,62.5,1,12,2\n\
        b,70,0,16,0.5\n\
        b,71,0,16,0.7\n\
        b,72,0,16,0.9\n";

    #[test]
    fn toy_file_reads_back() {
        let ds = read_dataset(TOY.as_bytes(), &schema(false, 1.0), "toy").unwrap();
        assert_eq!(ds.n_subjects(), 2);
        assert_eq!(
            ds.subjects.iter().map(Subject::n_visits).collect::<Vec<_>>(),
            vec![3, 3]
        );
        assert_eq!(ds.subjects[0].observed, vec![vec![true], vec![false], vec![true]]);
        assert!(ds.subjects[1].observed.iter().all(|o| o[0]));
        assert_eq!(ds.subjects[0].covariates, vec![1.0, 1.0, 12.0]);
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), TOY);
    }

    #[test]
    fn duplicate_age_names_subject() {
        let bad = "subject_id,age,sex,edu,score\nq7,60,1,12,1\nq7,60,1,12,2\n";
        let err = read_dataset(bad.as_bytes(), &schema(false, 1.0), "f").unwrap_err();
        assert!(err.to_string().contains("q7"), "{err}");
    }

    #[test]
    fn malformed_and_unknown_columns() {
        let bad = "subject_id,age,sex,edu,score\nq,sixty,1,12,1\n";
        assert!(matches!(
            read_dataset(bad.as_bytes(), &schema(false, 1.0), "f"),
            Err(Error::Parse { .. })
        ));
        let extra = "subject_id,age,sex,edu,score,zzz\nq,60,1,12,1,2\n";
        assert!(matches!(
            read_dataset(extra.as_bytes(), &schema(false, 1.0), "f"),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn missing_covariate_drops_subject() {
        let text = "subject_id,age,sex,edu,score\na,60,1,,1\na,61,1,12,2\nb,70,0,16,0.5\nb,71,0,16,0.6\n";
        let ds = read_dataset(text.as_bytes(), &schema(false, 1.0), "f").unwrap();
        assert_eq!(ds.n_subjects(), 1);
        assert_eq!(ds.dropped_subjects, 1);
    }

    #[test]
    fn z_scores_with_negative_sign() {
        let text = "subject_id,age,sex,edu,score\na,60,1,10,1\nb,61,0,12,2\nc,62,1,14,3\n";
        let ds = read_dataset(text.as_bytes(), &schema(false, -1.0), "f").unwrap();
        let (out, rep) = standardize(&ds).unwrap();
        let z: Vec<f64> = out.subjects.iter().map(|s| s.outcomes[0][0]).collect();
        let e = 1.5_f64.sqrt();
        for (got, want) in z.iter().zip([e, 0.0, -e]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((1.2247 - e).abs() < 1e-4);
        assert!(rep.entries.iter().all(|e| e.scale > 0.0));
        // binary covariate untouched, continuous standardized
        assert_eq!(out.subjects[1].covariates[1], 0.0);
        assert!((out.subjects[2].covariates[2] - e).abs() < 1e-12);
    }

    #[test]
    fn schema_config_roundtrip() {
        let cfg = KeyValueConfig::parse(
            "covariates = sex:binary, edu\nbiomarkers = ab, mem\ngroup.ab = CSF\nsign.mem = -1\ncognitive.mem = true\nage_range = 30,90\n",
            "s",
        )
        .unwrap();
        let s = Schema::from_config(&cfg).unwrap();
        assert_eq!(s.covariates[1].kind, CovariateKind::Continuous);
        assert_eq!(s.biomarkers[0].group, "CSF");
        assert_eq!(s.biomarkers[1].group, "mem");
        assert_eq!(s.biomarkers[1].sign, -1.0);
        assert!(s.biomarkers[1].cognitive);
        assert_eq!(s.age_range, (30.0, 90.0));
        assert_eq!(s.design_names(), vec!["intercept", "sex", "edu"]);
        let bad = KeyValueConfig::parse("biomarkers = a\ngroup.b = X\n", "s").unwrap();
        assert!(Schema::from_config(&bad).is_err());
    }
}

use crate::args::{Cli, Command, GlobalArgs};
use crate::error::{CliError, CliResult, ErrorClass};
use crate::manifest::{digest_inputs, digest_outputs, RunManifest, Timing};
use clap::Parser;
use rand::RngCore;
use rayon::prelude::*;
use scurve_core::config::{parse_range, KeyValueConfig};
use scurve_core::data::{load_dataset, preprocess, write_dataset, Schema};
use scurve_core::model::{ConstraintMode, Model, ModelConfig};
use scurve_core::sampler::{run_chain, substream, PosteriorSamples, SamplerConfig};
use scurve_core::simulation::{
    aggregate_outcomes, format_range, run_replicate, simulate_with, sweep_cells, ComparisonPlan, ReplicateOutcome,
    SimReport, SimTruth,
};
use scurve_core::spline_basis::AGE_DOMAIN_MAX;
use scurve_core::summary::{
    curve_summary, effect_table, make_grid, milestones, write_effects, write_milestones, Contrast,
};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_GRID_STEP: f64 = 0.2;
/// Orthant-probability paths used by `simulate` unless `--n-mc` says otherwise.
pub const SIMULATION_N_MC: usize = 1024;

const SAMPLER_KEYS: &[&str] = &[
    "n_iter",
    "burn_in",
    "thin",
    "n_mc",
    "hmc_trajectories",
    "reinit_trajectories",
    "target_accept",
    "proposal_log_step",
    "logistic_log_step",
];

const CHAIN_TAG: u64 = 0xC4A1;

/// Runs a parsed command. `argv` (without the program name) is recorded in
/// the manifest.
pub fn run(cli: &Cli, argv: &[String]) -> CliResult<()> {
    let cwd = std::env::current_dir()?;
    execute(cli, argv, &cwd)
}

fn execute(cli: &Cli, argv: &[String], cwd: &Path) -> CliResult<()> {
    let g = &cli.global;
    if g.jobs == 0 {
        return Err(CliError::usage("--jobs must be at least 1"));
    }
    if g.chains == 0 {
        return Err(CliError::usage("--chains must be at least 1"));
    }
    let rec = Recorder {
        command: cli.command.name(),
        argv: argv.to_vec(),
        cwd: cwd.display().to_string(),
        seed: g.seed.unwrap_or(DEFAULT_SEED),
        timings: Vec::new(),
    };
    match &cli.command {
        Command::Preprocess { data, schema, out } => cmd_preprocess(rec, data, schema, out),
        Command::Fit {
            data,
            schema,
            model,
            out,
            contrasts,
            no_preprocess,
        } => cmd_fit(rec, g, data, schema, model.as_deref(), out, contrasts, *no_preprocess),
        Command::Simulate {
            truth,
            replicates,
            model,
            metric_range,
            subjects,
            noise_is_sd,
            out,
        } => {
            let opts = SimulateOptions {
                truth,
                replicates: *replicates,
                model: model.as_deref(),
                metric_range,
                subjects: *subjects,
                noise_is_sd: *noise_is_sd,
            };
            cmd_simulate(rec, g, &opts, out)
        }
        Command::Report { inputs, out } => cmd_report(rec, inputs, out),
        Command::Replay { manifest, out } => cmd_replay(manifest, out),
        Command::Verify { dir } => cmd_verify(dir),
    }
}

struct Recorder {
    command: &'static str,
    argv: Vec<String>,
    cwd: String,
    seed: u64,
    timings: Vec<Timing>,
}

impl Recorder {
    fn time<T>(&mut self, label: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.push(Timing {
            label: label.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }

    fn finish(self, out: &Path, config: BTreeMap<String, String>, inputs: &[&Path]) -> CliResult<()> {
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command.to_string(),
            argv: self.argv,
            cwd: self.cwd,
            seed: self.seed,
            config,
            inputs: digest_inputs(inputs)?,
            outputs: digest_outputs(out)?,
            timings: self.timings,
        };
        manifest.write(out)?;
        log::info!("wrote {} outputs to {}", manifest.outputs.len(), out.display());
        Ok(())
    }
}

fn prepare_out(out: &Path) -> CliResult<()> {
    if out.is_file() {
        return Err(CliError::usage(format!("output path {} is a file", out.display())));
    }
    if out.is_dir() && std::fs::read_dir(out)?.next().is_some() {
        log::warn!(
            "{} is not empty; existing files are overwritten or listed in the manifest",
            out.display()
        );
    }
    std::fs::create_dir_all(out)?;
    Ok(())
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::new(ErrorClass::Io, format!("{}: {e}", path.display())))
}

/// Model and sampler halves of an optional settings file.
fn load_settings(path: Option<&Path>) -> CliResult<(Option<KeyValueConfig>, KeyValueConfig)> {
    match path {
        None => Ok((None, KeyValueConfig::default())),
        Some(p) => {
            let cfg = KeyValueConfig::load(p)?;
            let (sampler, model) = cfg.partition(SAMPLER_KEYS);
            Ok((Some(model), sampler))
        }
    }
}

fn resolve_model(file: Option<&KeyValueConfig>, variant: Option<ConstraintMode>) -> CliResult<ModelConfig> {
    let mut cfg = match file {
        Some(c) => ModelConfig::from_config(c)?,
        None => ModelConfig::new(ConstraintMode::SShaped),
    };
    if let Some(mode) = variant {
        if mode != cfg.mode && !file.is_some_and(|c| c.contains("hyper_scale")) {
            cfg.hyper_scale = ModelConfig::new(mode).hyper_scale;
        }
        cfg.mode = mode;
    }
    Ok(cfg)
}

fn resolve_sampler(file: &KeyValueConfig, g: &GlobalArgs, default_n_mc: usize) -> CliResult<SamplerConfig> {
    let mut s = SamplerConfig {
        n_mc: default_n_mc,
        ..SamplerConfig::default()
    };
    if let Some(v) = file.parsed("n_iter")? {
        s.n_iter = v;
    }
    if let Some(v) = file.parsed("thin")? {
        s.thin = v;
    }
    if let Some(v) = file.parsed("n_mc")? {
        s.n_mc = v;
    }
    if let Some(v) = file.parsed("hmc_trajectories")? {
        s.hmc_trajectories = v;
    }
    if let Some(v) = file.parsed("reinit_trajectories")? {
        s.reinit_trajectories = v;
    }
    if let Some(v) = file.parsed("target_accept")? {
        s.target_accept = v;
    }
    if let Some(v) = file.parsed("proposal_log_step")? {
        s.proposal_log_step = v;
    }
    if let Some(v) = file.parsed("logistic_log_step")? {
        s.logistic_log_step = v;
    }
    s.n_iter = g.iters.unwrap_or(s.n_iter);
    // half the run unless stated
    s.burn_in = match (g.burnin, file.parsed("burn_in")?) {
        (Some(b), _) | (None, Some(b)) => b,
        (None, None) => s.n_iter / 2,
    };
    s.thin = g.thin.unwrap_or(s.thin);
    s.n_mc = g.n_mc.unwrap_or(s.n_mc);
    s.seed = g.seed.unwrap_or(DEFAULT_SEED);
    s.validate()?;
    Ok(s)
}

fn sampler_pairs(s: &SamplerConfig) -> Vec<(String, String)> {
    vec![
        ("n_iter".into(), s.n_iter.to_string()),
        ("burn_in".into(), s.burn_in.to_string()),
        ("thin".into(), s.thin.to_string()),
        ("n_mc".into(), s.n_mc.to_string()),
        ("hmc_trajectories".into(), s.hmc_trajectories.to_string()),
        ("reinit_trajectories".into(), s.reinit_trajectories.to_string()),
        ("target_accept".into(), s.target_accept.to_string()),
        ("proposal_log_step".into(), s.proposal_log_step.to_string()),
        ("logistic_log_step".into(), s.logistic_log_step.to_string()),
    ]
}

fn thread_pool(jobs: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::new(ErrorClass::Internal, e.to_string()))
}

pub fn chain_seed(seed: u64, chain: usize) -> u64 {
    substream(seed, &[CHAIN_TAG, chain as u64]).next_u64()
}

fn load_inputs(data: &Path, schema: &Path) -> CliResult<(Schema, scurve_core::data::LongitudinalDataset)> {
    let schema = Schema::load(schema)?;
    let ds = load_dataset(data, &schema)?;
    Ok((schema, ds))
}

fn cmd_preprocess(mut rec: Recorder, data: &Path, schema_path: &Path, out: &Path) -> CliResult<()> {
    let (_, raw) = load_inputs(data, schema_path)?;
    prepare_out(out)?;
    let (ds, report) = rec.time("preprocess", || preprocess(&raw))?;
    write_dataset(&ds, create(&out.join("preprocessed.csv"))?)?;
    report.write_csv(create(&out.join("preprocess_report.csv"))?)?;
    rec.finish(out, BTreeMap::new(), &[data, schema_path])
}

#[allow(clippy::too_many_arguments)]
fn cmd_fit(
    mut rec: Recorder,
    g: &GlobalArgs,
    data: &Path,
    schema_path: &Path,
    model_path: Option<&Path>,
    out: &Path,
    contrast_args: &[String],
    no_preprocess: bool,
) -> CliResult<()> {
    let (schema, raw) = load_inputs(data, schema_path)?;
    let (file_model, file_sampler) = load_settings(model_path)?;
    let variant = g.variant.as_deref().map(str::parse::<ConstraintMode>).transpose()?;
    let mut mcfg = resolve_model(file_model.as_ref(), variant)?;
    match g.knot_range.as_slice() {
        [] => {}
        [one] => mcfg.knot_range = parse_range(one)?,
        _ => return Err(CliError::usage("fit takes a single --knot-range")),
    }
    mcfg.validate()?;
    let scfg = resolve_sampler(&file_sampler, g, scurve_core::constrained_gaussian::DEFAULT_N_MC)?;
    let contrasts: Vec<Contrast> = if contrast_args.is_empty() {
        schema
            .covariates
            .iter()
            .map(|c| Contrast::Covariate(c.name.clone()))
            .collect()
    } else {
        contrast_args
            .iter()
            .map(|c| Contrast::parse(c))
            .collect::<Result<_, _>>()?
    };
    let grid = make_grid(0.0, AGE_DOMAIN_MAX, g.grid_step.unwrap_or(DEFAULT_GRID_STEP))?;
    prepare_out(out)?;

    let ds = if no_preprocess {
        raw
    } else {
        let (ds, report) = rec.time("preprocess", || preprocess(&raw))?;
        report.write_csv(create(&out.join("preprocess_report.csv"))?)?;
        ds
    };
    let model = rec.time("knots", || Model::build(&mcfg, &ds))?;
    let pool = thread_pool(g.jobs)?;
    let chains = rec.time("sampler", || {
        pool.install(|| {
            (0..g.chains)
                .into_par_iter()
                .map(|c| {
                    let cfg = SamplerConfig {
                        seed: chain_seed(scfg.seed, c),
                        ..scfg.clone()
                    };
                    run_chain(&cfg, &model)
                })
                .collect::<Result<Vec<_>, _>>()
        })
    })?;
    write_merged_trace(&chains, &out.join("trace.csv"))?;
    let samples = PosteriorSamples::concat(chains)?;
    let start = Instant::now();
    samples.write_csv(create(&out.join("samples.csv"))?)?;
    samples.write_binary(create(&out.join("samples.bin"))?)?;
    curve_summary(&model, &samples, &grid)?.write_csv(create(&out.join("curve_summary.csv"))?)?;
    write_milestones(&milestones(&model, &samples)?, create(&out.join("milestones.csv"))?)?;
    write_effects(
        &effect_table(&model, &samples, &contrasts)?,
        create(&out.join("effects.csv"))?,
    )?;
    rec.timings.push(Timing {
        label: "summaries".into(),
        seconds: start.elapsed().as_secs_f64(),
    });

    let mut config: BTreeMap<String, String> = mcfg.to_pairs().into_iter().chain(sampler_pairs(&scfg)).collect();
    config.insert("chains".into(), g.chains.to_string());
    config.insert("grid_step".into(), g.grid_step.unwrap_or(DEFAULT_GRID_STEP).to_string());
    config.insert("preprocess".into(), (!no_preprocess).to_string());
    config.insert(
        "contrasts".into(),
        contrasts.iter().map(Contrast::label).collect::<Vec<_>>().join(";"),
    );
    let mut inputs = vec![data, schema_path];
    inputs.extend(model_path);
    rec.finish(out, config, &inputs)
}

/// One trace CSV for all chains, with a leading `chain` column.
fn write_merged_trace(chains: &[PosteriorSamples], path: &Path) -> CliResult<()> {
    let mut text = String::new();
    for (c, chain) in chains.iter().enumerate() {
        let mut buf = Vec::new();
        chain.write_trace_csv(&mut buf)?;
        let body = String::from_utf8(buf).map_err(|e| CliError::new(ErrorClass::Internal, e.to_string()))?;
        let mut lines = body.lines();
        let header = lines.next().unwrap_or_default();
        if c == 0 {
            text.push_str("chain,");
            text.push_str(header);
            text.push('\n');
        }
        for line in lines {
            text.push_str(&format!("{c},{line}\n"));
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

struct SimulateOptions<'a> {
    truth: &'a str,
    replicates: usize,
    model: Option<&'a Path>,
    metric_range: &'a str,
    subjects: Option<usize>,
    noise_is_sd: bool,
}

fn parse_list<T: std::str::FromStr<Err = scurve_core::Error> + Copy>(text: &str, all: &[T]) -> CliResult<Vec<T>> {
    if text.trim().eq_ignore_ascii_case("all") {
        return Ok(all.to_vec());
    }
    let mut out: Vec<T> = Vec::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        out.push(item.parse()?);
    }
    if out.is_empty() {
        return Err(CliError::usage(format!("empty list `{text}`")));
    }
    Ok(out)
}

fn dataset_file(truth: SimTruth, replicate: usize) -> String {
    format!("{}_rep{replicate:03}.csv", truth.as_str().to_ascii_lowercase())
}

fn cmd_simulate(mut rec: Recorder, g: &GlobalArgs, o: &SimulateOptions, out: &Path) -> CliResult<()> {
    if o.replicates == 0 {
        return Err(CliError::usage("--replicates must be at least 1"));
    }
    let truths = parse_list(o.truth, &SimTruth::ALL)?;
    let variants = parse_list(g.variant.as_deref().unwrap_or("all"), &ConstraintMode::ALL)?;
    let (file_model, file_sampler) = load_settings(o.model)?;
    let mut plan = ComparisonPlan::new(truths.clone(), variants.clone(), o.replicates, rec.seed);
    if !g.knot_range.is_empty() {
        plan.knot_ranges = g.knot_range.iter().map(|r| parse_range(r)).collect::<Result<_, _>>()?;
    }
    plan.sampler = resolve_sampler(&file_sampler, g, SIMULATION_N_MC)?;
    plan.metric_range = parse_range(o.metric_range)?;
    plan.grid_step = g.grid_step.unwrap_or(DEFAULT_GRID_STEP);
    make_grid(plan.metric_range.0, plan.metric_range.1, plan.grid_step)?;
    if let Some(n) = o.subjects {
        if n == 0 {
            return Err(CliError::usage("--subjects must be at least 1"));
        }
        plan.settings.n_subjects = n;
    }
    plan.settings.noise_is_sd = o.noise_is_sd;
    if let Some(f) = &file_model {
        plan.model_overrides = Some(resolve_model(Some(f), None)?);
    }
    for &v in &variants {
        for &r in &plan.knot_ranges {
            plan.model_config(v, r).validate()?;
        }
    }
    prepare_out(out)?;

    let data_dir = out.join("datasets");
    std::fs::create_dir_all(&data_dir)?;
    rec.time("datasets", || -> CliResult<()> {
        for &t in &truths {
            for rep in 0..o.replicates {
                let ds = simulate_with(t, &plan.settings, plan.dataset_seed(t, rep))?;
                write_dataset(&ds, create(&data_dir.join(dataset_file(t, rep)))?)?;
            }
        }
        Ok(())
    })?;

    let cells = sweep_cells(&plan);
    let pool = thread_pool(g.jobs)?;
    let outcomes: Vec<ReplicateOutcome> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(t, v, r, rep)| {
                let o = run_replicate(&plan, t, v, r, rep);
                log::info!("{t} {v} {} replicate {rep}: {:.1}s", format_range(r), o.seconds);
                o
            })
            .collect()
    });
    for o in &outcomes {
        rec.timings.push(Timing {
            label: format!(
                "{} {} {} rep{}",
                o.truth,
                o.variant,
                format_range(o.knot_range),
                o.replicate
            ),
            seconds: o.seconds,
        });
    }
    let report = aggregate_outcomes(&plan, &outcomes);
    report.write_csv(create(&out.join("sim_report.csv"))?)?;
    write_replicates(&plan, &outcomes, &out.join("replicates.csv"))?;

    let mut config: BTreeMap<String, String> = sampler_pairs(&plan.sampler).into_iter().collect();
    if let Some(m) = &plan.model_overrides {
        config.extend(m.to_pairs().into_iter().map(|(k, v)| (format!("model.{k}"), v)));
    }
    config.remove("model.variant");
    config.remove("model.knot_range");
    config.insert(
        "truths".into(),
        truths.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(","),
    );
    config.insert(
        "variants".into(),
        variants.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
    );
    config.insert(
        "knot_ranges".into(),
        plan.knot_ranges
            .iter()
            .map(|r| format_range(*r))
            .collect::<Vec<_>>()
            .join(","),
    );
    config.insert("replicates".into(), o.replicates.to_string());
    config.insert("metric_range".into(), format_range(plan.metric_range));
    config.insert("grid_step".into(), plan.grid_step.to_string());
    config.insert("n_subjects".into(), plan.settings.n_subjects.to_string());
    config.insert("noise_is_sd".into(), plan.settings.noise_is_sd.to_string());
    let inputs: Vec<&Path> = o.model.into_iter().collect();
    rec.finish(out, config, &inputs)
}

/// Per-replicate metrics; failed fits keep their row with the error message.
fn write_replicates(plan: &ComparisonPlan, outcomes: &[ReplicateOutcome], path: &Path) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(create(path)?);
    let csv_err = |e: csv::Error| CliError::new(ErrorClass::Io, e.to_string());
    w.write_record([
        "truth",
        "model",
        "knot_range",
        "replicate",
        "dataset_seed",
        "status",
        "curve_rmse",
        "curve_coverage",
        "inflection_error",
        "inflection_covered",
        "t50_error",
        "t50_covered",
    ])
    .map_err(csv_err)?;
    for o in outcomes {
        let mut row = vec![
            o.truth.to_string(),
            o.variant.to_string(),
            format_range(o.knot_range),
            o.replicate.to_string(),
            plan.dataset_seed(o.truth, o.replicate).to_string(),
        ];
        match &o.metrics {
            Ok(m) => {
                row.push("ok".into());
                row.push(m.curve_rmse.to_string());
                row.push(m.curve_coverage.to_string());
                row.push(m.inflection_error.map(|x| x.to_string()).unwrap_or_default());
                row.push(m.inflection_covered.map(|x| x.to_string()).unwrap_or_default());
                row.push(m.half_progression_error.to_string());
                row.push(m.half_progression_covered.to_string());
            }
            Err(e) => {
                row.push(format!("failed: {e}"));
                row.extend(std::iter::repeat_n(String::new(), 6));
            }
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_report(rec: Recorder, inputs: &[PathBuf], out: &Path) -> CliResult<()> {
    if inputs.is_empty() {
        return Err(CliError::usage("report needs at least one input"));
    }
    let files: Vec<PathBuf> = inputs
        .iter()
        .map(|p| {
            if p.is_dir() {
                p.join("sim_report.csv")
            } else {
                p.clone()
            }
        })
        .collect();
    let mut reports = Vec::with_capacity(files.len());
    for f in &files {
        let file = File::open(f).map_err(|e| CliError::new(ErrorClass::Io, format!("{}: {e}", f.display())))?;
        reports.push(SimReport::read_csv(file, &f.display().to_string())?);
    }
    prepare_out(out)?;
    SimReport::merge(&reports).write_csv(create(&out.join("sim_report.csv"))?)?;
    let refs: Vec<&Path> = files.iter().map(PathBuf::as_path).collect();
    rec.finish(out, BTreeMap::new(), &refs)
}

/// `argv` with the value of `--out` replaced.
fn replace_out(argv: &[String], out: &Path) -> CliResult<Vec<String>> {
    let new = out.display().to_string();
    let mut res = argv.to_vec();
    if let Some(i) = res.iter().position(|a| a == "--out") {
        if i + 1 < res.len() {
            res[i + 1] = new;
            return Ok(res);
        }
    }
    if let Some(a) = res.iter_mut().find(|a| a.starts_with("--out=")) {
        *a = format!("--out={new}");
        return Ok(res);
    }
    Err(CliError::new(ErrorClass::Parse, "recorded arguments have no --out"))
}

fn cmd_replay(manifest: &Path, out: &Path) -> CliResult<()> {
    let m = RunManifest::load(manifest)?;
    if m.command == "replay" || m.command == "verify" {
        return Err(CliError::usage(format!("cannot replay a `{}` manifest", m.command)));
    }
    m.check_inputs()?;
    let out = std::path::absolute(out)?;
    let argv = replace_out(&m.argv, &out)?;
    let mut cli =
        Cli::try_parse_from(std::iter::once("scurve".to_string()).chain(argv.iter().cloned())).map_err(|e| {
            CliError::new(
                ErrorClass::Parse,
                format!("recorded arguments: {}", first_line(&e.to_string())),
            )
        })?;
    let cwd = PathBuf::from(&m.cwd);
    cli.command.rebase_paths(&cwd);
    cli.command.set_out(out);
    execute(&cli, &argv, &cwd)
}

fn cmd_verify(dir: &Path) -> CliResult<()> {
    let m = RunManifest::load(dir)?;
    m.check_outputs(dir)?;
    println!("{}: {} outputs match the manifest", dir.display(), m.outputs.len());
    Ok(())
}

pub(crate) fn first_line(text: &str) -> String {
    let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("").trim();
    line.strip_prefix("error: ").unwrap_or(line).to_string()
}

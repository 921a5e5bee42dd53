//! Command-line front end. `run` parses arguments, dispatches, and maps
//! errors to exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::covmodel::{simulate, ModelSpec, SpikeSubspace};
use crate::design::{DesignKind, DesignSpec};
use crate::error::{Error, Result};
use crate::estimator::{estimates_to_csv, locus_to_csv, Estimator, Sigma2Source, SweepConfig};
use crate::harness::io::{matrix_to_csv, read_data, write_data};
use crate::harness::{reproduce_table_with, ReproduceConfig, RunManifest};
use crate::mp_law::{MPContext, SupportInfo};
use crate::numerics::{Matrix, Seed};
use crate::spike_theory::{population_locus, predicted_outliers, taylor_biases_oneway, OutlierPrediction, TaylorBiases};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED_REPRODUCTION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

const PREDICT_DELTA_INNER: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "varspike", version, about = "Spectral analysis of MANOVA variance-component estimators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate data from a design and model.
    Simulate(CommonArgs),
    /// Bulk support, predicted outliers, alignments and fluctuation variances.
    Predict(CommonArgs),
    /// Run the sphere sweep and report spike estimates.
    Estimate(CommonArgs),
    /// Observed and population loci for plotting.
    Locus(CommonArgs),
    /// Rerun a registered simulation table.
    Reproduce(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Design JSON, inline or a file path.
    #[arg(long)]
    design: Option<String>,
    /// Model JSON, inline or a file path.
    #[arg(long)]
    model: Option<String>,
    /// Target component (1-based).
    #[arg(long, default_value_t = 1)]
    component: usize,
    #[arg(long, default_value_t = 0.5)]
    delta: f64,
    #[arg(long, default_value_t = 200)]
    grid: usize,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Data file written by `simulate` (estimate, locus).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Registered table id, optionally with a `-mu<X>` column suffix (reproduce).
    #[arg(long)]
    table: Option<String>,
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NumericalFailure(_) | Error::Pole { .. } | Error::InSupport { .. } => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    let (name, args) = match &cmd {
        Command::Simulate(a) => ("simulate", a),
        Command::Predict(a) => ("predict", a),
        Command::Estimate(a) => ("estimate", a),
        Command::Locus(a) => ("locus", a),
        Command::Reproduce(a) => ("reproduce", a),
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = args.threads {
        if t == 0 {
            return Err(Error::Usage("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool.build().map_err(|e| Error::Usage(format!("thread pool: {e}")))?;
    pool.install(|| match name {
        "simulate" => cmd_simulate(args),
        "predict" => cmd_predict(args),
        "estimate" => cmd_estimate(args),
        "locus" => cmd_locus(args),
        _ => cmd_reproduce(args),
    })
}

fn inline_or_file(arg: &str) -> Result<String> {
    if arg.trim_start().starts_with('{') {
        Ok(arg.to_string())
    } else {
        fs::read_to_string(arg).map_err(|e| Error::Usage(format!("cannot read {arg:?}: {e}")))
    }
}

fn usage_on_parse<T>(r: Result<T>, what: &str) -> Result<T> {
    r.map_err(|e| match e {
        Error::Json(j) => Error::Usage(format!("malformed {what} JSON: {j}")),
        Error::InvalidInput(m) | Error::InvalidDesign(m) | Error::Shape(m) => Error::Usage(format!("{what}: {m}")),
        other => other,
    })
}

fn load_design(args: &CommonArgs) -> Result<(DesignSpec, Value)> {
    let raw = args.design.as_deref().ok_or_else(|| Error::Usage("--design is required".into()))?;
    let text = inline_or_file(raw)?;
    let kind: DesignKind = usage_on_parse(serde_json::from_str(&text).map_err(Error::from), "design")?;
    let design = usage_on_parse(DesignSpec::build(kind), "design")?;
    Ok((design, serde_json::to_value(kind)?))
}

fn load_model(args: &CommonArgs, design: &DesignSpec) -> Result<Option<(ModelSpec, Value)>> {
    let Some(raw) = args.model.as_deref() else { return Ok(None) };
    let text = inline_or_file(raw)?;
    let model = usage_on_parse(ModelSpec::from_json(&text), "model")?;
    usage_on_parse(model.check_design(design), "model")?;
    let value: Value = serde_json::from_str(&model.to_json())?;
    Ok(Some((model, value)))
}

fn require_model(args: &CommonArgs, design: &DesignSpec) -> Result<(ModelSpec, Value)> {
    load_model(args, design)?.ok_or_else(|| Error::Usage("--model is required".into()))
}

fn out_dir(args: &CommonArgs) -> Result<Option<PathBuf>> {
    match &args.out {
        Some(d) => {
            fs::create_dir_all(d).map_err(|e| Error::Usage(format!("cannot create {}: {e}", d.display())))?;
            Ok(Some(d.clone()))
        }
        None => Ok(None),
    }
}

/// Writes `contents` to `dir/name`, or to stdout without `--out`.
fn emit(dir: &Option<PathBuf>, name: &str, contents: &str, outputs: &mut Vec<String>) -> Result<()> {
    match dir {
        Some(d) => {
            let path = d.join(name);
            fs::write(&path, contents)?;
            outputs.push(path.display().to_string());
        }
        None => println!("{contents}"),
    }
    Ok(())
}

fn finish(dir: &Option<PathBuf>, mut manifest: RunManifest, start: Instant) -> Result<()> {
    manifest.wall_clock_secs = start.elapsed().as_secs_f64();
    if let Some(d) = dir {
        manifest.write(&d.join("manifest.json"))?;
    }
    Ok(())
}

fn check_component(args: &CommonArgs, design: &DesignSpec) -> Result<()> {
    if args.component == 0 || args.component > design.k {
        return Err(Error::Usage(format!("--component {} outside 1..={}", args.component, design.k)));
    }
    Ok(())
}

/// Data for `estimate`/`locus`: a data file, or a fresh simulation.
fn obtain_data(args: &CommonArgs, design: &DesignSpec, model: Option<&ModelSpec>, manifest: &mut RunManifest) -> Result<Matrix> {
    if let Some(path) = &args.data {
        let (y, header) = read_data(path).map_err(|e| match e {
            Error::Io(io) => Error::Usage(format!("cannot read {}: {io}", path.display())),
            other => other,
        })?;
        let expected = design.kind.hash_hex();
        if header.design_hash != expected {
            return Err(Error::Usage(format!("data file was simulated for a different design (hash {})", header.design_hash)));
        }
        if y.rows() != design.n {
            return Err(Error::Usage(format!("data has {} rows but the design has n = {}", y.rows(), design.n)));
        }
        return Ok(y);
    }
    let model = model.ok_or_else(|| Error::Usage("either --data or --model is required".into()))?;
    let seed = args.seed.unwrap_or(0);
    manifest.seed = Some(seed);
    simulate(design, model, Seed(seed))
}

fn sweep_config(args: &CommonArgs, model: Option<&ModelSpec>) -> SweepConfig {
    let source = match model {
        Some(m) => Sigma2Source::Known(m.sigma2()),
        None => Sigma2Source::Estimated { trim: 1 },
    };
    SweepConfig { delta: args.delta, grid: args.grid, ..SweepConfig::new(args.component) }.with_sigma2(source)
}

fn cmd_simulate(args: &CommonArgs) -> Result<i32> {
    let start = Instant::now();
    let (design, dv) = load_design(args)?;
    let (model, mv) = require_model(args, &design)?;
    let dir = out_dir(args)?.ok_or_else(|| Error::Usage("simulate requires --out".into()))?;
    let seed = args.seed.unwrap_or(0);
    let y = simulate(&design, &model, Seed(seed))?;
    let t_sim = start.elapsed().as_secs_f64();
    let mut m = RunManifest::new("simulate");
    let path = dir.join("data.bin");
    write_data(&path, &y, &design.kind.hash_hex())?;
    m.outputs.push(path.display().to_string());
    if args.format == Format::Csv {
        emit(&Some(dir.clone()), "data.csv", &matrix_to_csv(&y), &mut m.outputs)?;
    }
    m.design = Some(dv);
    m.model = Some(mv);
    m.seed = Some(seed);
    m.timings.insert("simulate".into(), t_sim);
    eprintln!("wrote {} ({} x {})", path.display(), y.rows(), y.cols());
    finish(&Some(dir), m, start)?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct PredictOutput {
    component: usize,
    coefficients: Vec<f64>,
    support: SupportInfo,
    outliers: Vec<OutlierPrediction>,
    taylor: Option<TaylorBiases>,
}

fn cmd_predict(args: &CommonArgs) -> Result<i32> {
    let start = Instant::now();
    let (design, dv) = load_design(args)?;
    let (model, mv) = require_model(args, &design)?;
    check_component(args, &design)?;
    let a = design.manova_coefficients(args.component)?;
    let sub = SpikeSubspace::from_model(&model);
    // The spike count is known here, so N = p - L.
    let n_eff = (model.p - sub.dim()) as f64;
    let law = MPContext::new(&design, &model.sigma2(), &a, n_eff)?;
    let outliers = predicted_outliers(&law, &sub, PREDICT_DELTA_INNER)?;
    let taylor = match (&design.kind, args.component) {
        (DesignKind::Oneway { .. }, 1) => {
            let top = |r: usize| model.components[r].spikes.iter().max_by(|x, y| x.theta.total_cmp(&y.theta));
            match top(0) {
                Some(s1) => {
                    let (theta2, rho) = top(1).map_or((0.0, 0.0), |s2| (s2.theta, crate::numerics::dot(&s1.v, &s2.v).abs()));
                    Some(taylor_biases_oneway(&design, &model.sigma2(), s1.theta, theta2, rho, n_eff)?)
                }
                None => None,
            }
        }
        _ => None,
    };
    let out = PredictOutput { component: args.component, coefficients: a.0.clone(), support: law.support()?, outliers, taylor };
    let dir = out_dir(args)?;
    let mut m = RunManifest::new("predict");
    match args.format {
        Format::Json => emit(&dir, "predict.json", &serde_json::to_string_pretty(&out)?, &mut m.outputs)?,
        Format::Csv => {
            let mut csv = String::from("lambda,multiplicity,alignment,nu,side\n");
            for o in &out.outliers {
                let opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v}"));
                csv.push_str(&format!("{},{},{},{},{:?}\n", o.lambda, o.multiplicity, opt(o.alignment), opt(o.nu), o.side));
            }
            emit(&dir, "predict.csv", &csv, &mut m.outputs)?;
        }
    }
    m.design = Some(dv);
    m.model = Some(mv);
    m.config = json!({ "component": args.component, "delta_inner": PREDICT_DELTA_INNER });
    finish(&dir, m, start)?;
    Ok(EXIT_OK)
}

fn cmd_estimate(args: &CommonArgs) -> Result<i32> {
    let start = Instant::now();
    let (design, dv) = load_design(args)?;
    let model = load_model(args, &design)?;
    check_component(args, &design)?;
    let mut m = RunManifest::new("estimate");
    let y = obtain_data(args, &design, model.as_ref().map(|x| &x.0), &mut m)?;
    let t0 = start.elapsed().as_secs_f64();
    let ms = design.mean_squares(&y)?;
    let cfg = sweep_config(args, model.as_ref().map(|x| &x.0));
    let report = Estimator::new(&ms, &design, cfg.clone())?.estimate()?;
    let dir = out_dir(args)?;
    match args.format {
        Format::Json => emit(&dir, "estimates.json", &serde_json::to_string_pretty(&report)?, &mut m.outputs)?,
        Format::Csv => emit(&dir, "estimates.csv", &estimates_to_csv(&report.estimates, design.k), &mut m.outputs)?,
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    m.timings.insert("data".into(), t0);
    m.timings.insert("estimate".into(), start.elapsed().as_secs_f64() - t0);
    m.design = Some(dv);
    m.model = model.map(|x| x.1);
    m.config = serde_json::to_value(&cfg)?;
    finish(&dir, m, start)?;
    Ok(EXIT_OK)
}

fn cmd_locus(args: &CommonArgs) -> Result<i32> {
    let start = Instant::now();
    let (design, dv) = load_design(args)?;
    let model = load_model(args, &design)?;
    check_component(args, &design)?;
    let mut m = RunManifest::new("locus");
    let y = obtain_data(args, &design, model.as_ref().map(|x| &x.0), &mut m)?;
    let ms = design.mean_squares(&y)?;
    let cfg = sweep_config(args, model.as_ref().map(|x| &x.0));
    let observed = Estimator::new(&ms, &design, cfg.clone())?.observed_locus()?;
    let population = match &model {
        Some((mm, _)) => Some(population_locus(&SpikeSubspace::from_model(mm), args.grid)?),
        None => None,
    };
    let dir = out_dir(args)?;
    match args.format {
        Format::Csv => {
            emit(&dir, "observed_locus.csv", &locus_to_csv(&observed, design.k), &mut m.outputs)?;
            if let Some(pop) = &population {
                let head: Vec<String> = (1..=design.k).map(|i| format!("s_{i}")).collect();
                let mut csv = head.join(",") + "\n";
                for pt in pop {
                    csv.push_str(&pt.s.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(","));
                    csv.push('\n');
                }
                emit(&dir, "population_locus.csv", &csv, &mut m.outputs)?;
            }
        }
        Format::Json => {
            let value = json!({ "observed": observed, "population": population });
            emit(&dir, "locus.json", &serde_json::to_string_pretty(&value)?, &mut m.outputs)?;
        }
    }
    m.design = Some(dv);
    m.model = model.map(|x| x.1);
    m.config = serde_json::to_value(&cfg)?;
    finish(&dir, m, start)?;
    Ok(EXIT_OK)
}

fn cmd_reproduce(args: &CommonArgs) -> Result<i32> {
    let start = Instant::now();
    let table = args.table.as_deref().ok_or_else(|| Error::Usage("reproduce requires --table".into()))?;
    let cfg = ReproduceConfig { reps: args.reps.unwrap_or(100), seed: args.seed.unwrap_or(1), delta: args.delta, grid: args.grid };
    let report = reproduce_table_with(table, &cfg)?;
    let dir = out_dir(args)?;
    let mut m = RunManifest::new("reproduce");
    let body = match args.format {
        Format::Json => serde_json::to_string_pretty(&report)?,
        Format::Csv => {
            let mut csv = String::from("row,column,mean,sd,n,reference_mean,reference_sd,tolerance,pass\n");
            let opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v}"));
            for c in &report.cells {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    c.row,
                    c.column,
                    opt(c.mean),
                    opt(c.sd),
                    c.n,
                    opt(c.reference_mean),
                    opt(c.reference_sd),
                    opt(c.tolerance),
                    c.pass.map_or(String::new(), |p| p.to_string())
                ));
            }
            csv
        }
    };
    let name = if args.format == Format::Json { "report.json" } else { "report.csv" };
    if dir.is_some() {
        emit(&dir, name, &body, &mut m.outputs)?;
    }
    eprint!("{}", report.summary());
    m.seed = Some(cfg.seed);
    m.reps = Some(cfg.reps);
    m.config = json!({ "table": table, "delta": cfg.delta, "grid": cfg.grid });
    m.timings.insert("reproduce".into(), report.elapsed_secs);
    finish(&dir, m, start)?;
    Ok(if report.pass || report.informational { EXIT_OK } else { EXIT_FAILED_REPRODUCTION })
}

/// Replays the manifest of a `simulate` run into `dir` and reports whether
/// the regenerated data file is byte-identical to the recorded one.
pub fn replay_simulation(manifest_path: &Path, dir: &Path) -> Result<bool> {
    let m = RunManifest::read(manifest_path)?;
    let design_json = m.design.ok_or_else(|| Error::invalid("manifest has no design"))?;
    let model_json = m.model.ok_or_else(|| Error::invalid("manifest has no model"))?;
    let design = DesignSpec::build(serde_json::from_value(design_json)?)?;
    let model = ModelSpec::from_json(&model_json.to_string())?;
    let y = simulate(&design, &model, Seed(m.seed.unwrap_or(0)))?;
    fs::create_dir_all(dir)?;
    let fresh = dir.join("data.bin");
    write_data(&fresh, &y, &design.kind.hash_hex())?;
    let original = m.outputs.first().ok_or_else(|| Error::invalid("manifest lists no outputs"))?;
    Ok(fs::read(original)? == fs::read(fresh)?)
}

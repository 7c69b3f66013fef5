//! Argument parsing and subcommand dispatch.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use invdim_core::boxdim::{FitResult, ScaleValue};
use invdim_core::systems::{registry, AmbientSpace};
use invdim_core::{PointCloud, SystemDescriptor};
use serde::Serialize;

use crate::config::{OutputFormat, OutputSpec, Overrides, RunConfig};
use crate::report::{build_report, evaluate_bounds, evaluate_empirical, Failures};
use crate::sweep::{run_sweep, write_csv, SweepRange};

/// Exit status when a run completes but a verdict fails or a stage errors.
pub const EXIT_FAILED: i32 = 1;
/// Exit status for usage, configuration and I/O errors.
pub const EXIT_ERROR: i32 = 2;

pub const THREADS_ENV: &str = "INVDIM_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "invdim",
    version,
    about = "Box-dimension estimates and dimension bounds for invariant sets of smooth maps"
)]
pub struct Cli {
    /// INI file with [system], [sample], [boxdim], [bounds] and [output] sections.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List built-in systems.
    ListSystems {
        #[arg(long, value_enum, default_value_t = ListFormat::Table)]
        format: ListFormat,
    },
    /// Sample the invariant set and write the point cloud.
    Sample(RunArgs),
    /// Box-counting and neighbourhood-volume dimension estimates.
    Boxdim(BoxdimArgs),
    /// Jacobian extrema, growth rates and every bound.
    Bounds(RunArgs),
    /// Full report with dominance verdicts; exits non-zero unless every applicable bound dominates.
    Report(RunArgs),
    /// One report row per value of a system parameter.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ListFormat {
    Table,
    Csv,
    Json,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Built-in system name (see list-systems).
    #[arg(long)]
    pub system: Option<String>,
    /// System parameter override, repeatable.
    #[arg(long = "param", value_name = "KEY=VALUE")]
    pub params: Vec<String>,
    /// Number of sample points.
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Largest iterate for growth rates (doubling schedule up to this value).
    #[arg(long)]
    pub m_max: Option<usize>,
    /// Largest box side / radius; defaults to a quarter of the sample extent.
    #[arg(long)]
    pub delta_max: Option<f64>,
    /// Ratio between consecutive scales.
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Number of scales.
    #[arg(long)]
    pub scales: Option<usize>,
    /// Output file; format follows --format or the file extension.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    /// Omit the timestamp so identical inputs give byte-identical output.
    #[arg(long)]
    pub deterministic: bool,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            system: self.system.clone(),
            params: self.params.clone(),
            budget: self.budget,
            seed: self.seed,
            m_max: self.m_max,
            delta_max: self.delta_max,
            ratio: self.ratio,
            scales: self.scales,
            out: self.out.clone(),
            format: self.format,
            deterministic: self.deterministic,
        }
    }
}

#[derive(Debug, Args)]
pub struct BoxdimArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Read the cloud from a file (.csv, otherwise binary) instead of sampling.
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,
    /// Ambient space of --input, e.g. `euclidean:2` or `torus:1`; defaults to the system's.
    #[arg(long)]
    pub ambient: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Parameter values: `name=v1,v2,...` or `name=start:stop:count`.
    #[arg(long, value_name = "RANGE")]
    pub range: String,
}

/// Parses `argv`, runs the command and returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return EXIT_ERROR;
    }
    match dispatch(&cli) {
        Ok(true) => 0,
        Ok(false) => EXIT_FAILED,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}

/// Sizes the global rayon pool from `INVDIM_THREADS` when set.
fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| anyhow!("{THREADS_ENV} must be a positive integer, got {raw:?}"))?;
    // a pool may already exist when called twice in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn resolve(cli: &Cli, args: &RunArgs) -> Result<RunConfig> {
    Ok(RunConfig::resolve(cli.config.as_deref(), &args.overrides())?)
}

fn dispatch(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::ListSystems { format } => list_systems(*format).map(|_| true),
        Command::Sample(args) => cmd_sample(&resolve(cli, args)?).map(|_| true),
        Command::Boxdim(args) => cmd_boxdim(cli, args),
        Command::Bounds(args) => cmd_bounds(&resolve(cli, args)?),
        Command::Report(args) => cmd_report(&resolve(cli, args)?),
        Command::Sweep(args) => {
            let range: SweepRange = args.range.parse()?;
            cmd_sweep(&resolve(cli, &args.run)?, &range)
        }
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_text(spec: &OutputSpec, text: &str) -> Result<()> {
    let mut w = open_output(spec.path.as_deref())?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialisable");
    s.push('\n');
    s
}

fn unsupported(cmd: &str, f: OutputFormat) -> anyhow::Error {
    anyhow!("{cmd} does not support --format {}", f.as_str())
}

#[derive(Serialize)]
struct SystemRow {
    name: &'static str,
    summary: &'static str,
    ambient: String,
    params: Vec<invdim_core::systems::ParamSpec>,
    invariance: invdim_core::Invariance,
    has_inverse: bool,
    degree: Option<u32>,
    sampler: invdim_core::systems::SamplerMethod,
    reference_dimension: Option<invdim_core::systems::ReferenceDimension>,
}

fn system_rows() -> Result<Vec<SystemRow>> {
    registry()
        .into_iter()
        .map(|spec| {
            let sys = invdim_core::systems::default_system(spec.name)?;
            Ok(SystemRow {
                name: spec.name,
                summary: spec.summary,
                ambient: sys.ambient.to_string(),
                params: spec.params,
                invariance: sys.invariance,
                has_inverse: sys.has_inverse,
                degree: sys.degree,
                sampler: sys.sampler,
                reference_dimension: sys.reference_dimension,
            })
        })
        .collect()
}

fn list_systems(format: ListFormat) -> Result<()> {
    let rows = system_rows()?;
    let params =
        |r: &SystemRow| r.params.iter().map(|p| format!("{}={}", p.name, p.default)).collect::<Vec<_>>().join(" ");
    let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
    let spec = OutputSpec { format: OutputFormat::Json, path: None };
    match format {
        ListFormat::Json => write_text(&spec, &to_json(&rows)),
        ListFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record([
                "name",
                "ambient",
                "parameters",
                "invariance",
                "inverse",
                "degree",
                "reference_dimension",
            ])?;
            for r in &rows {
                w.write_record([
                    r.name.to_string(),
                    r.ambient.clone(),
                    params(r),
                    format!("{:?}", r.invariance).to_lowercase(),
                    r.has_inverse.to_string(),
                    r.degree.map(|d| d.to_string()).unwrap_or_default(),
                    r.reference_dimension.as_ref().map(|d| d.value.to_string()).unwrap_or_default(),
                ])?;
            }
            write_text(&spec, &String::from_utf8(w.into_inner()?)?)
        }
        ListFormat::Table => {
            let mut out = format!(
                "{:<20} {:<8} {:<48} {:<10} {:<8} {:<7} {}\n",
                "NAME", "AMBIENT", "PARAMETERS", "INVARIANCE", "INVERSE", "DEGREE", "REFERENCE DIM"
            );
            for r in &rows {
                out.push_str(&format!(
                    "{:<20} {:<8} {:<48} {:<10} {:<8} {:<7} {}\n",
                    r.name,
                    r.ambient,
                    params(r),
                    format!("{:?}", r.invariance).to_lowercase(),
                    if r.has_inverse { "yes" } else { "no" },
                    opt(r.degree.map(|d| d.to_string())),
                    opt(r.reference_dimension.as_ref().map(|d| format!("{:.4}", d.value))),
                ));
            }
            write_text(&spec, &out)
        }
    }
}

fn sample(cfg: &RunConfig) -> Result<(SystemDescriptor, PointCloud)> {
    let sys = cfg.build_system()?;
    let cloud = sys.sample_invariant_set(cfg.budget, cfg.seed).context("systems: sampling")?;
    Ok((sys, cloud))
}

fn cmd_sample(cfg: &RunConfig) -> Result<()> {
    let (_, cloud) = sample(cfg)?;
    for spec in cfg.outputs_or(OutputFormat::Csv) {
        let mut w = open_output(spec.path.as_deref())?;
        match spec.format {
            OutputFormat::Csv => cloud.write_csv(&mut w)?,
            OutputFormat::Binary => cloud.write_binary(&mut w)?,
            OutputFormat::Json => {
                #[derive(Serialize)]
                struct Dump<'a> {
                    ambient: String,
                    meta: &'a invdim_core::CloudMeta,
                    points: Vec<&'a [f64]>,
                }
                let dump =
                    Dump { ambient: cloud.ambient().to_string(), meta: cloud.meta(), points: cloud.points().collect() };
                w.write_all(to_json(&dump).as_bytes())?;
            }
        }
        w.flush()?;
    }
    Ok(())
}

fn parse_ambient(s: &str) -> Result<AmbientSpace> {
    let (kind, dim) = s.split_once(':').ok_or_else(|| anyhow!("--ambient expects kind:dim, got {s:?}"))?;
    let dim: usize = dim.parse().with_context(|| format!("--ambient dimension {dim:?}"))?;
    match kind {
        "euclidean" | "R" => Ok(AmbientSpace::euclidean(dim)),
        "torus" | "T" => Ok(AmbientSpace::torus(dim)),
        _ => bail!("--ambient kind must be euclidean or torus, got {kind:?}"),
    }
}

fn fit_rows(w: &mut csv::Writer<Vec<u8>>, name: &str, fit: &Option<FitResult>) -> Result<()> {
    let Some(fit) = fit else { return Ok(()) };
    for s in &fit.scales {
        let value = match s.count {
            Some(ScaleValue::Count(c)) => c.to_string(),
            Some(ScaleValue::Volume(v)) => v.to_string(),
            None => String::new(),
        };
        w.write_record([name, &s.delta.to_string(), &value, &s.box_count.to_string(), &s.used.to_string()])?;
    }
    Ok(())
}

fn cmd_boxdim(cli: &Cli, args: &BoxdimArgs) -> Result<bool> {
    let (cloud, cfg) = match &args.input {
        Some(path) => {
            let mut over = args.run.overrides();
            let ambient = match (&args.ambient, &over.system) {
                (Some(a), _) => parse_ambient(a)?,
                (None, Some(_)) => RunConfig::resolve(cli.config.as_deref(), &over)?.build_system()?.ambient,
                (None, None) => bail!("--input needs --ambient or --system to fix the ambient space"),
            };
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
            let cloud =
                if is_csv { PointCloud::read_csv(file, ambient)? } else { PointCloud::read_binary(file, ambient)? };
            over.system.get_or_insert_with(|| "cat_map".into());
            // the system only supplies defaults here; the cloud comes from the file
            over.params.clear();
            (cloud, RunConfig::resolve(None, &over)?)
        }
        None => {
            let cfg = resolve(cli, &args.run)?;
            (sample(&cfg)?.1, cfg)
        }
    };
    let schedule = cfg.schedule.resolve(&cloud)?;
    let mut failures = Failures::default();
    let empirical = evaluate_empirical(&cloud, &schedule, &mut failures);
    for spec in cfg.outputs_or(OutputFormat::Json) {
        match spec.format {
            OutputFormat::Json => {
                #[derive(Serialize)]
                struct Out<'a> {
                    points: usize,
                    deltas: &'a [f64],
                    empirical: &'a crate::report::Empirical,
                    failures: &'a [crate::report::Failure],
                }
                let out = Out {
                    points: cloud.len(),
                    deltas: schedule.deltas(),
                    empirical: &empirical,
                    failures: &failures.0,
                };
                write_text(&spec, &to_json(&out))?;
            }
            OutputFormat::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(["estimator", "delta", "value", "box_count", "used"])?;
                fit_rows(&mut w, "box_counting", &empirical.box_counting)?;
                fit_rows(&mut w, "lemma21", &empirical.lemma21)?;
                write_text(&spec, &String::from_utf8(w.into_inner()?)?)?;
            }
            f => return Err(unsupported("boxdim", f)),
        }
    }
    for f in &failures.0 {
        eprintln!("failure [{}] {}", f.stage, f.message);
    }
    Ok(failures.0.is_empty())
}

fn cmd_bounds(cfg: &RunConfig) -> Result<bool> {
    let (sys, cloud) = sample(cfg)?;
    let mut failures = Failures::default();
    let (bounds, rates, degree) = evaluate_bounds(&sys, &cloud, cfg.m_max, &mut failures);
    for spec in cfg.outputs_or(OutputFormat::Json) {
        match spec.format {
            OutputFormat::Json => {
                #[derive(Serialize)]
                struct Out<'a> {
                    system: crate::report::SystemIdentity,
                    points: usize,
                    m_max: usize,
                    bounds: &'a [invdim_core::bounds::BoundResult],
                    growth_rates: &'a crate::report::GrowthSection,
                    degree_check: &'a Option<crate::report::DegreeCheck>,
                    failures: &'a [crate::report::Failure],
                }
                let out = Out {
                    system: (&sys).into(),
                    points: cloud.len(),
                    m_max: cfg.m_max,
                    bounds: &bounds,
                    growth_rates: &rates,
                    degree_check: &degree,
                    failures: &failures.0,
                };
                write_text(&spec, &to_json(&out))?;
            }
            OutputFormat::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(["theorem", "applicable", "value", "reason"])?;
                for b in &bounds {
                    let value = b.value.map(|v| v.to_string()).unwrap_or_default();
                    w.write_record([
                        b.theorem.label(),
                        &b.applicable.to_string(),
                        &value,
                        b.reason.as_deref().unwrap_or(""),
                    ])?;
                }
                write_text(&spec, &String::from_utf8(w.into_inner()?)?)?;
            }
            f => return Err(unsupported("bounds", f)),
        }
    }
    for f in &failures.0 {
        eprintln!("failure [{}] {}", f.stage, f.message);
    }
    Ok(failures.0.is_empty())
}

fn cmd_report(cfg: &RunConfig) -> Result<bool> {
    let report = build_report(cfg)?;
    let to_stdout = cfg.outputs.iter().any(|o| o.path.is_none()) || cfg.outputs.is_empty();
    for spec in cfg.outputs_or(OutputFormat::Json) {
        let text = match spec.format {
            OutputFormat::Json => report.to_json(),
            OutputFormat::Csv => report.to_csv(),
            f => return Err(unsupported("report", f)),
        };
        write_text(&spec, &text)?;
    }
    // keep stdout parseable when the report itself goes there
    if to_stdout {
        eprint!("{}", report.summary());
    } else {
        print!("{}", report.summary());
    }
    Ok(report.passed())
}

fn cmd_sweep(cfg: &RunConfig, range: &SweepRange) -> Result<bool> {
    let rows = run_sweep(cfg, range);
    for spec in cfg.outputs_or(OutputFormat::Csv) {
        match spec.format {
            OutputFormat::Csv => {
                let mut buf = Vec::new();
                write_csv(&rows, &mut buf)?;
                write_text(&spec, &String::from_utf8(buf)?)?;
            }
            OutputFormat::Json => write_text(&spec, &to_json(&rows))?,
            f => return Err(unsupported("sweep", f)),
        }
    }
    for r in rows.iter().filter_map(|r| r.error.as_ref().map(|e| (r.parameter, e))) {
        eprintln!("{}={}: {}", range.param, r.0, r.1);
    }
    Ok(rows.iter().all(|r| r.passed()))
}

//! The `ringfl` command-line front end.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aco::{optimize_ring, write_trace_csv, AcoParams};
use crate::aggregation::{run_round, FailureSchedule, ParameterSet, RoundReport};
use crate::error::{Error, Result};
use crate::experiments::{
    derive_seed, fit_line, fit_loglog_slope, run_sweep, sample_placement, write_raw_csv,
    write_summary_csv, PlacementModel, PlacementSize, Scheme, SweepSpec, SweepVariable,
};
use crate::radio::{Placement, Point, ScenarioConfig};
use crate::timing::{analytic_sweep, write_analytic_csv};
use crate::topology::{brute_force_ring, RingTopology, BRUTE_FORCE_MAX_DEVICES};

/// Largest verification error accepted by `verify`.
pub const VERIFY_TOLERANCE: f64 = 1e-9;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_INTEGRITY: i32 = 4;

/// Everything a run needs; every section may be omitted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    #[serde(default)]
    pub config: ScenarioConfig,
    #[serde(default)]
    pub aco: AcoParams,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub failures: Option<FailureSchedule>,
}

impl ScenarioDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ScenarioDocument = serde_json::from_str(text)?;
        doc.config.validate()?;
        doc.aco.validate()?;
        if let Some(sweep) = &doc.sweep {
            sweep.validate()?;
        }
        Ok(doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::invalid(format!("{}: {j}", path.display())),
            other => other,
        })
    }
}

/// Device positions for `optimize --placement`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementFile {
    pub devices: Vec<Point>,
}

#[derive(Debug, Parser)]
#[command(name = "ringfl", version, about = "Ring all-reduce aggregation over a shared wireless band")]
pub struct Cli {
    /// Scenario JSON document (defaults apply when omitted)
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,
    /// Base seed for random placements and parameters
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Directory for output files; standard output when omitted
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads: a positive count or `auto`
    #[arg(long, global = true, default_value = "auto", value_parser = parse_threads)]
    pub threads: Threads,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Threads {
    Auto,
    Fixed(usize),
}

fn parse_threads(s: &str) -> std::result::Result<Threads, String> {
    if s == "auto" {
        return Ok(Threads::Auto);
    }
    match s.parse::<usize>() {
        Ok(n) if n > 0 => Ok(Threads::Fixed(n)),
        _ => Err(format!("expected a positive integer or `auto`, got `{s}`")),
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Search for a fast ring with ant colony optimization
    Optimize(OptimizeArgs),
    /// Run one aggregation round and compare against the centralized sum
    Verify(VerifyArgs),
    /// Run the Monte Carlo sweep described in the scenario
    Sweep,
    /// Evaluate the analytic expectations and bounds
    Bounds(BoundsArgs),
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    /// JSON file with `{"devices": [[x, y], ...]}`
    #[arg(long, conflicts_with = "random", required_unless_present = "random")]
    pub placement: Option<PathBuf>,
    /// Place this many devices uniformly at random
    #[arg(long, value_name = "K")]
    pub random: Option<usize>,
    /// Also run exhaustive search and report whether ACO found the optimum
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Number of devices
    #[arg(long, value_name = "K")]
    pub devices: usize,
    /// Parameter vector length
    #[arg(long, value_name = "L")]
    pub length: usize,
    /// Failed transmission as `step:transmitter`; repeatable
    #[arg(long = "fail", value_name = "STEP:TX", value_parser = parse_event)]
    pub fail: Vec<(usize, usize)>,
    /// Independent failure probability per transmission
    #[arg(long, conflicts_with = "fail")]
    pub bernoulli: Option<f64>,
    /// Seed for Bernoulli failures (derived from --seed when omitted)
    #[arg(long)]
    pub failure_seed: Option<u64>,
    /// Discard recovery chunks before upload
    #[arg(long)]
    pub drop_recovery: bool,
}

fn parse_event(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected STEP:TX, got `{s}`"))?;
    let step = a.trim().parse().map_err(|_| format!("bad step in `{s}`"))?;
    let tx = b.trim().parse().map_err(|_| format!("bad transmitter in `{s}`"))?;
    Ok((step, tx))
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    /// Device intensities in devices per m², comma separated
    #[arg(long, value_delimiter = ',', required = true)]
    pub lambda: Vec<f64>,
    /// Disc radius in meters
    #[arg(long, default_value_t = 200.0)]
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub ring: RingTopology,
    pub t_sr_seconds: f64,
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizeReport {
    pub device_count: usize,
    pub ring: RingTopology,
    pub t_sr_seconds: f64,
    pub greedy_ring: RingTopology,
    pub greedy_t_sr_seconds: f64,
    pub improvement_percent: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleReport>,
}

/// Maps an error to the process exit status.
pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::InvalidArgument(_) | Error::IndexOutOfRange { .. } | Error::Json(_) | Error::Csv(_) => {
            EXIT_INVALID
        }
        Error::Infeasible { .. } => EXIT_INFEASIBLE,
        Error::IncompleteAggregation { .. } | Error::ToleranceExceeded { .. } => EXIT_INTEGRITY,
        Error::Io(_) | Error::Scenario { .. } => EXIT_IO,
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Sends named outputs either to files under `--out` or to standard output.
struct Sink<'a, W: Write> {
    dir: Option<&'a Path>,
    stdout: &'a mut W,
}

impl<W: Write> Sink<'_, W> {
    fn emit(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        match self.dir {
            Some(dir) => {
                let path = dir.join(name);
                write_atomic(&path, bytes)?;
                writeln!(self.stdout, "wrote {}", path.display())?;
            }
            None => self.stdout.write_all(bytes)?,
        }
        Ok(())
    }

    fn note(&mut self, line: &str) -> Result<()> {
        writeln!(self.stdout, "{line}")?;
        Ok(())
    }
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

fn load_document(cli: &Cli) -> Result<ScenarioDocument> {
    match &cli.scenario {
        Some(path) => ScenarioDocument::load(path),
        None => Ok(ScenarioDocument::default()),
    }
}

fn optimize<W: Write>(cli: &Cli, args: &OptimizeArgs, doc: &ScenarioDocument, sink: &mut Sink<W>) -> Result<()> {
    let config = &doc.config;
    let placement = match (&args.placement, args.random) {
        (Some(path), _) => {
            let text = fs::read_to_string(path)?;
            let file: PlacementFile = serde_json::from_str(&text)
                .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
            Placement::with_config(config, file.devices)?
        }
        (None, Some(k)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
            sample_placement(PlacementModel::UniformSquare, config, PlacementSize::Count(k), &mut rng)?.placement
        }
        (None, None) => return Err(Error::invalid("either --placement or --random is required")),
    };
    let params = AcoParams { rng_seed: derive_seed(doc.aco.rng_seed, &[cli.seed]), ..doc.aco.clone() };
    let outcome = optimize_ring(&placement, config, &params)?;
    let oracle = if args.oracle {
        let k = placement.device_count();
        if k > BRUTE_FORCE_MAX_DEVICES {
            return Err(Error::invalid(format!(
                "--oracle supports at most {BRUTE_FORCE_MAX_DEVICES} devices, got {k}"
            )));
        }
        let (ring, t) = brute_force_ring(&placement, config)?;
        let matched = outcome.t_sr <= t * (1.0 + 1e-9);
        Some(OracleReport { ring, t_sr_seconds: t, matched })
    } else {
        None
    };
    let report = OptimizeReport {
        device_count: placement.device_count(),
        ring: outcome.ring.clone(),
        t_sr_seconds: outcome.t_sr,
        greedy_ring: outcome.greedy_ring.clone(),
        greedy_t_sr_seconds: outcome.greedy_t_sr,
        improvement_percent: outcome.improvement_percent(),
        oracle,
    };
    sink.emit("ring.json", &json_bytes(&report)?)?;
    let mut trace = Vec::new();
    write_trace_csv(&outcome.trace, &mut trace)?;
    sink.emit("trace.csv", &trace)
}

/// Runs one verification round on random parameters and a random placement.
pub fn verify_round(args: &VerifyArgs, doc: &ScenarioDocument, seed: u64) -> Result<RoundReport> {
    let config = &doc.config;
    let k = args.devices;
    if k < 2 {
        return Err(Error::invalid(format!("verify needs at least 2 devices, got {k}")));
    }
    let failures = if !args.fail.is_empty() {
        FailureSchedule::Events(args.fail.clone())
    } else if let Some(p) = args.bernoulli {
        FailureSchedule::Bernoulli { p, seed: args.failure_seed.unwrap_or_else(|| derive_seed(seed, &[1])) }
    } else if let Some(f) = &doc.failures {
        f.clone()
    } else if config.failure_prob > 0.0 {
        FailureSchedule::Bernoulli {
            p: config.failure_prob,
            seed: args.failure_seed.unwrap_or_else(|| derive_seed(seed, &[1])),
        }
    } else {
        FailureSchedule::none()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0]));
    let params = ParameterSet::random(k, args.length, &mut rng)?;
    let placement =
        sample_placement(PlacementModel::UniformSquare, config, PlacementSize::Count(k), &mut rng)?.placement;
    let ring = crate::topology::greedy_ring(&placement, config)?;
    if args.drop_recovery {
        let mut scatter = crate::aggregation::run_scatter_reduce(&params, &ring, &failures)?;
        scatter.recovery_queue.clear();
        crate::aggregation::run_all_gather(&scatter, &ring, &params)?;
    }
    run_round(&params, &ring, &failures, Some((&placement, config)))
}

fn verify<W: Write>(cli: &Cli, args: &VerifyArgs, doc: &ScenarioDocument, sink: &mut Sink<W>) -> Result<()> {
    let report = verify_round(args, doc, cli.seed)?;
    sink.emit("report.json", &json_bytes(&report)?)?;
    if !(report.max_relative_error <= VERIFY_TOLERANCE) {
        return Err(Error::ToleranceExceeded { error: report.max_relative_error, tolerance: VERIFY_TOLERANCE });
    }
    Ok(())
}

fn sweep<W: Write>(cli: &Cli, doc: &ScenarioDocument, sink: &mut Sink<W>) -> Result<()> {
    let spec = doc.sweep.as_ref().ok_or_else(|| Error::invalid("the scenario has no `sweep` section"))?;
    let spec = SweepSpec { base_seed: derive_seed(spec.base_seed, &[cli.seed]), ..spec.clone() };
    let result = run_sweep(&spec, &doc.config, &doc.aco)?;
    let mut raw = Vec::new();
    write_raw_csv(&result, &mut raw)?;
    let mut summary = Vec::new();
    write_summary_csv(&result, &mut summary)?;
    let dir = sink.dir.unwrap_or(Path::new("."));
    for (name, bytes) in [("sweep_raw.csv", &raw), ("sweep_summary.csv", &summary)] {
        let path = dir.join(name);
        write_atomic(&path, bytes)?;
        sink.note(&format!("wrote {}", path.display()))?;
    }
    if result.ppp_rejections > 0 {
        sink.note(&format!("resampled {} placements with fewer than 2 devices", result.ppp_rejections))?;
    }
    for scheme in result.schemes() {
        let means = result.means(scheme);
        match spec.variable {
            SweepVariable::DeviceCount | SweepVariable::Lambda if means.len() >= 3 => {
                let slope = fit_loglog_slope(&result.values, &means)?;
                sink.note(&format!("{scheme}: log-log slope {slope:.4}"))?;
            }
            SweepVariable::FailureProb if means.len() >= 2 => {
                let fit = fit_line(&result.values, &means)?;
                sink.note(&format!(
                    "{scheme}: slope {:.6e} s per unit probability, r^2 {:.4}",
                    fit.slope, fit.r_squared
                ))?;
            }
            _ => {}
        }
    }
    if spec.schemes.contains(&Scheme::Star) {
        let star = result.means(Scheme::Star);
        for scheme in result.schemes().into_iter().filter(|&s| s != Scheme::Star) {
            let below = result.means(scheme).iter().zip(&star).all(|(m, s)| m < s);
            sink.note(&format!("{scheme} below star at every point: {below}"))?;
        }
    }
    Ok(())
}

fn bounds<W: Write>(args: &BoundsArgs, doc: &ScenarioDocument, sink: &mut Sink<W>) -> Result<()> {
    let rows = analytic_sweep(&doc.config, &args.lambda, args.radius)?;
    let mut csv = Vec::new();
    write_analytic_csv(&rows, &mut csv)?;
    sink.emit("bounds.csv", &csv)
}

/// Runs a parsed command, writing human output to `stdout`.
pub fn run<W: Write>(cli: &Cli, stdout: &mut W) -> Result<()> {
    let doc = load_document(cli)?;
    let work = || {
        let mut buffer = Vec::new();
        let mut sink = Sink { dir: cli.out.as_deref(), stdout: &mut buffer };
        let outcome = match &cli.command {
            Command::Optimize(a) => optimize(cli, a, &doc, &mut sink),
            Command::Verify(a) => verify(cli, a, &doc, &mut sink),
            Command::Sweep => sweep(cli, &doc, &mut sink),
            Command::Bounds(a) => bounds(a, &doc, &mut sink),
        };
        (buffer, outcome)
    };
    let (buffer, outcome) = match cli.threads {
        Threads::Auto => work(),
        Threads::Fixed(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?
            .install(work),
    };
    stdout.write_all(&buffer)?;
    stdout.flush()?;
    outcome
}

/// Parses `args`, runs the command and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(&cli, &mut lock) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn document_defaults_and_unknown_keys() {
        let doc = ScenarioDocument::from_json("{}").unwrap();
        assert_eq!(doc, ScenarioDocument::default());
        let err = ScenarioDocument::from_json(r#"{"config": {"alpha": 3}}"#).unwrap_err();
        assert!(err.to_string().contains("alpha"));
        let err = ScenarioDocument::from_json(r#"{"confg": {}}"#).unwrap_err();
        assert!(err.to_string().contains("confg"));
    }

    #[test]
    fn malformed_json_reports_position() {
        let err = ScenarioDocument::from_json("{\n  \"config\": {,}\n}").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert_eq!(exit_code(&err), EXIT_INVALID);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Infeasible { transmitter: 1, receiver: 0 }), EXIT_INFEASIBLE);
        let lost = Error::IncompleteAggregation { chunk: 1, missing: vec![1] };
        assert_eq!(exit_code(&lost), EXIT_INTEGRITY);
        let wrapped = Error::Scenario { value_index: 0, replication: 3, source: Box::new(lost) };
        assert_eq!(exit_code(&wrapped), EXIT_INTEGRITY);
    }

    #[test]
    fn thread_flag() {
        assert_eq!(parse_threads("auto"), Ok(Threads::Auto));
        assert_eq!(parse_threads("3"), Ok(Threads::Fixed(3)));
        assert!(parse_threads("0").is_err());
        assert!(parse_threads("x").is_err());
    }

    #[test]
    fn event_flag() {
        assert_eq!(parse_event("1:2"), Ok((1, 2)));
        assert!(parse_event("12").is_err());
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}

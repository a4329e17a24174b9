//! Command-line front end.
//!
//! [`run`] parses arguments, reads the input file and writes the artifact;
//! [`execute`] does the work on an in-memory input and is what the selftest
//! drives. Exit codes: `0` all checks pass, `1` a check failed, `2` invalid
//! input or configuration.

use std::f64::consts::FRAC_PI_2;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use crate::acceptance::{self, AcceptanceConfig};
use crate::error::Error;
use crate::matcore::{default_psd_tol, SymMatrix};
use crate::model::{validate_channel, BroadcastChannel, ConditionalLaw, MarkovHierarchy, MixtureSource};
use crate::region::{boundary_csv, trace_boundary, OptimizerConfig};
use crate::report::VerificationReport;
use crate::verifier::f_epsilon::default_grid;
use crate::verifier::{
    check_cramer_rao, check_debruijn, check_dembo, check_entropy_path, check_f_epsilon, check_fisher_convolution,
    check_fisher_dpi, check_fisher_shift, converse_walkthrough,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

/// Environment variable capping the worker count (`0` = automatic).
pub const THREADS_ENV: &str = "MIMO_BC_THREADS";

/// Finite-difference step of the de Bruijn check.
const DEBRUIJN_STEP: f64 = 1e-4;

/// Discretized checks (finite differences, path quadrature) run at this multiple of `--tol`.
const DISCRETIZATION_FACTOR: f64 = 100.0;

#[derive(Debug, Parser)]
#[command(name = "mimo-bc", version, about = "Degraded Gaussian MIMO broadcast channel toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Trace the capacity region boundary of a channel and write CSV
    Region(InputArgs),
    /// Run the inequality suite on a source and write JSON reports
    Verify(InputArgs),
    /// Replay the converse recursion on a channel and source
    Walkthrough(InputArgs),
    /// Run the built-in acceptance suite
    Selftest(Flags),
}

#[derive(Debug, Args)]
struct InputArgs {
    /// JSON input file
    input: PathBuf,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Debug, Args)]
struct Flags {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Monte Carlo sample count
    #[arg(long, default_value_t = 100_000, value_parser = positive_usize)]
    samples: usize,
    /// Tolerance for equality and inequality checks
    #[arg(long, default_value_t = 1e-8, value_parser = positive_f64)]
    tol: f64,
    /// Number of weight vectors in the region sweep
    #[arg(long, default_value_t = 101, value_parser = positive_usize)]
    grid: usize,
    /// Write the artifact here instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
    /// Report rates in bits instead of nats
    #[arg(long)]
    bits: bool,
}

fn positive_usize(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        Ok(_) => Err("must be positive".into()),
        Err(e) => Err(e.to_string()),
    }
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(_) => Err("must be positive and finite".into()),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Region,
    Verify,
    Walkthrough,
    Selftest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: CommandKind,
    pub input_path: Option<PathBuf>,
    pub seed: u64,
    pub samples: usize,
    pub tol: f64,
    pub grid: usize,
    /// `None` writes to stdout.
    pub output_path: Option<PathBuf>,
    pub bits: bool,
}

impl RunConfig {
    pub fn new(command: CommandKind) -> Self {
        Self {
            command,
            input_path: None,
            seed: 42,
            samples: 100_000,
            tol: 1e-8,
            grid: 101,
            output_path: None,
            bits: false,
        }
    }
}

impl From<Cli> for RunConfig {
    fn from(cli: Cli) -> Self {
        let (command, input, flags) = match cli.command {
            Command::Region(a) => (CommandKind::Region, Some(a.input), a.flags),
            Command::Verify(a) => (CommandKind::Verify, Some(a.input), a.flags),
            Command::Walkthrough(a) => (CommandKind::Walkthrough, Some(a.input), a.flags),
            Command::Selftest(f) => (CommandKind::Selftest, None, f),
        };
        RunConfig {
            command,
            input_path: input,
            seed: flags.seed,
            samples: flags.samples,
            tol: flags.tol,
            grid: flags.grid,
            output_path: flags.output,
            bits: flags.bits,
        }
    }
}

/// Result of one invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Outcome {
    fn invalid(message: impl Into<String>) -> Self {
        Outcome {
            code: EXIT_INVALID,
            stdout: String::new(),
            stderr: message.into(),
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let text = e.render().to_string();
            return if code == EXIT_OK {
                Outcome {
                    code,
                    stdout: text,
                    stderr: String::new(),
                }
            } else {
                Outcome::invalid(text)
            };
        }
    };
    let cfg = RunConfig::from(cli);
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) => n,
            Err(_) => return Outcome::invalid(format!("error: {THREADS_ENV} must be a nonnegative integer, got {v:?}\n")),
        },
        Err(_) => 0,
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => return Outcome::invalid(format!("error: cannot start worker pool: {e}\n")),
    };
    pool.install(|| run_config(&cfg))
}

/// Runs a parsed configuration: reads the input, executes, writes the artifact.
pub fn run_config(cfg: &RunConfig) -> Outcome {
    let input = match &cfg.input_path {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(text) => Some(text),
            Err(e) => return Outcome::invalid(format!("error: cannot read {}: {e}\n", path.display())),
        },
        None => None,
    };
    let mut outcome = execute(cfg, input.as_deref());
    if let Some(path) = &cfg.output_path {
        if outcome.code != EXIT_INVALID {
            if let Err(e) = std::fs::write(path, &outcome.stdout) {
                return Outcome::invalid(format!("error: cannot write {}: {e}\n", path.display()));
            }
            outcome.stdout.clear();
        }
    }
    outcome
}

/// Runs `cfg.command` on the input text; the artifact is returned as `stdout`.
pub fn execute(cfg: &RunConfig, input: Option<&str>) -> Outcome {
    let result = match cfg.command {
        CommandKind::Selftest => return cmd_selftest(cfg),
        _ => match input {
            None => return Outcome::invalid("error: an input file is required\n"),
            Some(text) => parse_input(text).and_then(|doc| match cfg.command {
                CommandKind::Region => cmd_region(cfg, doc),
                CommandKind::Verify => cmd_verify(cfg, doc),
                _ => cmd_walkthrough(cfg, doc),
            }),
        },
    };
    match result {
        Ok((code, stdout)) => Outcome {
            code,
            stdout,
            stderr: String::new(),
        },
        Err(e) => {
            let code = match e {
                Error::Numerical(_) | Error::Bracketing { .. } => EXIT_FAILED,
                _ => EXIT_INVALID,
            };
            Outcome {
                code,
                stdout: String::new(),
                stderr: format!("error: {e}\n"),
            }
        }
    }
}

/// A source given either as a plain mixture or with auxiliary transitions.
#[derive(Debug, Clone)]
pub enum SourceInput {
    Mixture(MixtureSource),
    Hierarchy(MarkovHierarchy),
}

impl SourceInput {
    pub fn base(&self) -> &MixtureSource {
        match self {
            SourceInput::Mixture(m) => m,
            SourceInput::Hierarchy(h) => h.base(),
        }
    }
}

/// Parsed input: a bare channel, a bare source, or `{"channel", "source"}`.
#[derive(Debug, Clone, Default)]
pub struct InputDoc {
    pub channel: Option<BroadcastChannel>,
    pub source: Option<SourceInput>,
}

fn parse_source(v: Value) -> crate::error::Result<SourceInput> {
    let has_transitions = v.get("transitions").is_some();
    let parsed = if has_transitions {
        serde_json::from_value(v).map(SourceInput::Hierarchy)
    } else {
        serde_json::from_value(v).map(SourceInput::Mixture)
    };
    parsed.map_err(|e| Error::InvalidInput(format!("source: {e}")))
}

fn parse_channel(v: Value) -> crate::error::Result<BroadcastChannel> {
    serde_json::from_value(v).map_err(|e| Error::InvalidInput(format!("channel: {e}")))
}

pub fn parse_input(text: &str) -> crate::error::Result<InputDoc> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("malformed JSON: {e}")))?;
    let Value::Object(mut map) = value else {
        return Err(Error::InvalidInput("input must be a JSON object".into()));
    };
    if map.contains_key("channel") || map.contains_key("source") {
        if let Some(key) = map.keys().find(|k| *k != "channel" && *k != "source") {
            return Err(Error::InvalidInput(format!("unknown field {key:?}")));
        }
        return Ok(InputDoc {
            channel: map.remove("channel").map(parse_channel).transpose()?,
            source: map.remove("source").map(parse_source).transpose()?,
        });
    }
    if map.contains_key("noise_covs") {
        return Ok(InputDoc {
            channel: Some(parse_channel(Value::Object(map))?),
            source: None,
        });
    }
    if map.contains_key("weights") {
        return Ok(InputDoc {
            channel: None,
            source: Some(parse_source(Value::Object(map))?),
        });
    }
    Err(Error::InvalidInput(
        "input must be a channel, a source, or an object with \"channel\" and \"source\"".into(),
    ))
}

/// Weight vectors of the default sweep.
///
/// Two users get `(cos θ, sin θ)` over `count` angles in `[0, π/2]`. More users
/// get the Dirichlet lattice `{m / d : Σ m = d}` with the largest `d` whose
/// lattice has at most `count` points.
pub fn default_weights(users: usize, count: usize) -> Vec<Vec<f64>> {
    if users == 2 {
        return (0..count)
            .map(|i| {
                let theta = if count == 1 { 0.0 } else { FRAC_PI_2 * i as f64 / (count - 1) as f64 };
                let snap = |v: f64| if v.abs() < 1e-15 { 0.0 } else { v };
                vec![snap(theta.cos()), snap(theta.sin())]
            })
            .collect();
    }
    let lattice_size = |d: usize| binomial(d + users - 1, users - 1);
    let mut depth = 1;
    while lattice_size(depth + 1) <= count {
        depth += 1;
    }
    let mut out = Vec::new();
    let mut current = vec![0usize; users];
    compositions(depth, 0, &mut current, &mut out);
    out.into_iter()
        .map(|c| c.iter().map(|m| *m as f64 / depth as f64).collect())
        .collect()
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1usize, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

fn compositions(left: usize, idx: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if idx + 1 == current.len() {
        current[idx] = left;
        out.push(current.clone());
        return;
    }
    for m in (0..=left).rev() {
        current[idx] = m;
        compositions(left - m, idx + 1, current, out);
    }
}

type CmdResult = crate::error::Result<(i32, String)>;

fn require_channel(doc: &InputDoc) -> crate::error::Result<&BroadcastChannel> {
    doc.channel
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("input has no channel".into()))
}

fn require_source(doc: &InputDoc) -> crate::error::Result<&SourceInput> {
    doc.source
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("input has no source".into()))
}

fn to_json<T: serde::Serialize>(value: &T) -> crate::error::Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Numerical(format!("serialization: {e}")))?;
    s.push('\n');
    Ok(s)
}

fn cmd_region(cfg: &RunConfig, doc: InputDoc) -> CmdResult {
    let ch = require_channel(&doc)?;
    ch.ensure_valid(default_psd_tol(ch.input_cap()))?;
    let weights = default_weights(ch.num_users(), cfg.grid);
    let opt = OptimizerConfig {
        seed: cfg.seed,
        ..OptimizerConfig::default()
    };
    let points = trace_boundary(ch, &weights, &opt)?;
    let rows: Vec<_> = points.into_iter().map(|p| (p.weights, p.rates)).collect();
    Ok((EXIT_OK, boundary_csv(&rows, cfg.bits)?))
}

/// Noise pair for the suite: `(Σ_1, Σ_K)` from the channel, else `(I, 2I)`.
fn noise_pair(doc: &InputDoc, dim: usize) -> crate::error::Result<(SymMatrix, SymMatrix)> {
    match &doc.channel {
        Some(ch) => {
            if ch.dim() != dim {
                return Err(Error::InvalidInput(format!(
                    "source dimension {dim} does not match channel dimension {}",
                    ch.dim()
                )));
            }
            Ok((ch.noise(0).clone(), ch.noise(ch.num_users() - 1).clone()))
        }
        None => Ok((SymMatrix::identity(dim), SymMatrix::identity(dim).scale(2.0))),
    }
}

fn or_errored(name: &str, tol: f64, r: crate::error::Result<VerificationReport>) -> VerificationReport {
    r.unwrap_or_else(|e| VerificationReport::errored(name, tol, e.to_string()))
}

/// The full inequality suite as a list of reports.
pub fn verify_suite(doc: &InputDoc, tol: f64) -> crate::error::Result<Vec<VerificationReport>> {
    let source = require_source(doc)?;
    let src = source.base();
    let (sigma_a, sigma_b) = noise_pair(doc, src.dim())?;
    let fine_tol = DISCRETIZATION_FACTOR * tol;
    let mut reports = Vec::new();
    if let Some(ch) = &doc.channel {
        reports.push(validate_channel(ch, tol));
        let adm = src.admissibility_residual(ch.input_cap());
        reports.push(or_errored(
            "admissibility",
            tol,
            adm.map(|r| {
                VerificationReport::builder("admissibility", tol)
                    .at_least("S - Cov(X) (min eig, normalized)", r)
                    .finish()
            }),
        ));
    }
    reports.push(or_errored("cramer_rao", tol, check_cramer_rao(src, &sigma_a, tol)));
    reports.push(or_errored("fisher_shift", tol, check_fisher_shift(src, &sigma_a, &sigma_b, tol)));
    reports.push(or_errored(
        "debruijn",
        fine_tol,
        check_debruijn(src, &sigma_a, DEBRUIJN_STEP, fine_tol),
    ));
    reports.push(or_errored("dembo", tol, check_dembo(src, &sigma_a, tol)));

    let hierarchy = match source {
        SourceInput::Hierarchy(h) if h.num_users() > 2 => Some(h.clone()),
        _ => {
            // all components merged into one symbol
            let m = src.num_components();
            MarkovHierarchy::new(src.clone(), vec![nalgebra::DMatrix::from_element(1, m, 1.0)]).ok()
        }
    };
    match hierarchy {
        Some(h) => {
            for level in 2..h.num_users() {
                reports.push(or_errored(
                    "fisher_dpi",
                    tol,
                    check_fisher_dpi(&h, level, level + 1, &sigma_a, tol),
                ));
            }
        }
        None => reports.push(VerificationReport::errored("fisher_dpi", tol, "could not build a coarsening")),
    }

    let increment = &sigma_b - &sigma_a;
    let sigma_y = if increment.min_eigenvalue() > 0.0 { increment } else { sigma_a.clone() };
    reports.push(or_errored(
        "fisher_convolution",
        tol,
        check_fisher_convolution(src, &sigma_a, &sigma_y, tol),
    ));
    reports.push(or_errored(
        "entropy_path",
        fine_tol,
        check_entropy_path(&ConditionalLaw::given_components(src), &sigma_a, &sigma_b, fine_tol),
    ));
    reports.push(or_errored("f_epsilon", tol, check_f_epsilon(src, &sigma_a, &default_grid(), tol)));
    Ok(reports)
}

fn cmd_verify(cfg: &RunConfig, doc: InputDoc) -> CmdResult {
    let reports = verify_suite(&doc, cfg.tol)?;
    let code = if reports.iter().all(|r| r.passed) { EXIT_OK } else { EXIT_FAILED };
    Ok((code, to_json(&reports)?))
}

fn cmd_walkthrough(cfg: &RunConfig, doc: InputDoc) -> CmdResult {
    let ch = require_channel(&doc)?;
    let hierarchy = match require_source(&doc)? {
        SourceInput::Hierarchy(h) => h.clone(),
        SourceInput::Mixture(m) => MarkovHierarchy::single(m.clone()),
    };
    let report = converse_walkthrough(&hierarchy, ch, cfg.samples, cfg.seed, cfg.tol)?;
    let code = if report.passed { EXIT_OK } else { EXIT_FAILED };
    Ok((code, to_json(&report)?))
}

fn cmd_selftest(cfg: &RunConfig) -> Outcome {
    let acfg = AcceptanceConfig {
        samples: cfg.samples,
        tol: cfg.tol,
        seed: cfg.seed,
    };
    let outcomes = acceptance::run_all(&acfg);
    let passed = outcomes.iter().all(|o| o.passed);
    Outcome {
        code: if passed { EXIT_OK } else { EXIT_FAILED },
        stdout: acceptance::summary_table(&outcomes),
        stderr: String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarter_circle_weights() {
        let w = default_weights(2, 5);
        assert_eq!(w.len(), 5);
        assert_eq!(w[0], vec![1.0, 0.0]);
        assert_eq!(w[4], vec![0.0, 1.0]);
        assert!(w.iter().all(|v| (v[0].hypot(v[1]) - 1.0).abs() < 1e-15));
    }

    #[test]
    fn dirichlet_lattice_weights() {
        let w = default_weights(3, 101);
        // d = 12 gives 91 points, d = 13 would give 105
        assert_eq!(w.len(), 91);
        assert!(w.iter().all(|v| (v.iter().sum::<f64>() - 1.0).abs() < 1e-12));
        assert_eq!(w[0], vec![1.0, 0.0, 0.0]);
        assert_eq!(default_weights(3, 3).len(), 3);
    }

    #[test]
    fn input_shapes() {
        let ch = r#"{"dim":1,"noise_covs":[[[1.0]],[[2.0]]],"input_cap":[[1.0]]}"#;
        let doc = parse_input(ch).unwrap();
        assert!(doc.channel.is_some() && doc.source.is_none());
        let src = r#"{"dim":1,"weights":[1.0],"means":[[0.0]],"comp_covs":[[[1.0]]]}"#;
        let doc = parse_input(src).unwrap();
        assert!(matches!(doc.source, Some(SourceInput::Mixture(_))));
        let wrapped = format!(r#"{{"channel":{ch},"source":{src}}}"#);
        let doc = parse_input(&wrapped).unwrap();
        assert!(doc.channel.is_some() && doc.source.is_some());
        assert!(parse_input(&format!(r#"{{"channel":{ch},"extra":1}}"#)).is_err());
        assert!(parse_input("[1, 2]").is_err());
        assert!(parse_input("{").is_err());
        let bad = r#"{"dim":1,"weights":[1.0],"means":[[0.0]],"comp_covs":[[[-1.0]]]}"#;
        assert!(parse_input(bad).is_err());
    }

    #[test]
    fn flag_validation() {
        for args in [
            vec!["mimo-bc", "verify", "x.json", "--samples", "0"],
            vec!["mimo-bc", "verify", "x.json", "--tol", "-1"],
            vec!["mimo-bc", "verify", "x.json", "--grid", "0"],
            vec!["mimo-bc", "verify", "x.json", "--bogus"],
            vec!["mimo-bc", "region"],
            vec!["mimo-bc"],
        ] {
            assert_eq!(run(args.clone()).code, EXIT_INVALID, "{args:?}");
        }
        assert_eq!(run(["mimo-bc", "--help"]).code, EXIT_OK);
    }

    #[test]
    fn missing_file_is_invalid() {
        let out = run(["mimo-bc", "verify", "/nonexistent/input.json"]);
        assert_eq!(out.code, EXIT_INVALID);
        assert!(out.stderr.contains("cannot read"));
    }
}

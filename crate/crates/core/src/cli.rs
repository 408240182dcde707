//! Command-line front end.
//!
//! Exit codes: 0 success, 1 a verification verdict failed, 2 invalid input.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::bounds::{
    chernoff_bound, eta_upper_bound, fgl_pi_star, freedman_pi, BoundInputs, BoundReport,
    BoundsError, EtaProvenance, SubsetSize, TailSide,
};
use crate::io::{load_order, load_subset, load_weights, parse_fraction, InputError};
use crate::model::{eta_exact, scale_weights, subset_alpha, Procedure, SubsetSpec, WeightVector};
use crate::sampler::{PairPolicy, RandomSource, Sampler, SamplerError};
use crate::verifier::{mc_estimate, verify_exact, McConfig, VerificationReport, VerifyError};

#[derive(Debug, Parser)]
#[command(name = "pivotal", version, about = "Pivotal sampling without replacement and its tail bounds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProcedureArg {
    X,
    XStar,
    XStarStar,
}

impl From<ProcedureArg> for Procedure {
    fn from(p: ProcedureArg) -> Self {
        match p {
            ProcedureArg::X => Procedure::X,
            ProcedureArg::XStar => Procedure::XStar,
            ProcedureArg::XStarStar => Procedure::XStarStar,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    InOrder,
    RandomPair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SideArg {
    Upper,
    Lower,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Pretty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VerifyMode {
    Exact,
    Mc,
}

#[derive(Debug, clap::Args)]
pub struct SamplerArgs {
    /// Sampling procedure.
    #[arg(long, value_enum, default_value_t = ProcedureArg::X)]
    pub procedure: ProcedureArg,
    /// Pair policy for procedure X.
    #[arg(long, value_enum, default_value_t = PolicyArg::InOrder)]
    pub policy: PolicyArg,
    /// JSON array of ids or indices giving the processing order.
    #[arg(long)]
    pub order_file: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw samples from a weight file, one JSON line per sample.
    Sample {
        weights_file: PathBuf,
        #[arg(long)]
        k: usize,
        #[command(flatten)]
        sampler: SamplerArgs,
        /// Base seed; generated and reported on stderr when omitted.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        count: u64,
        /// Include the step trace of each run.
        #[arg(long)]
        trace: bool,
        /// Subset whose conditional variances the trace records.
        #[arg(long)]
        subset_file: Option<PathBuf>,
        /// Divide weights by their sum before validating.
        #[arg(long)]
        normalize: bool,
    },
    /// Evaluate every tail bound for one subset.
    Bounds {
        #[arg(long)]
        alpha: Option<String>,
        #[arg(long)]
        delta: String,
        #[arg(long)]
        k: usize,
        /// Maximum subset size (`inf` for none).
        #[arg(long)]
        m: Option<SubsetSize>,
        #[arg(long, requires = "subset_file")]
        weights_file: Option<PathBuf>,
        #[arg(long, requires = "weights_file")]
        subset_file: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SideArg::Both)]
        side: SideArg,
        /// Evaluate at the smaller of the subset's and its complement's eta.
        #[arg(long)]
        best_of_complement: bool,
        #[arg(long)]
        normalize: bool,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        /// Significant digits for csv/pretty output.
        #[arg(long, default_value_t = 6)]
        precision: usize,
    },
    /// Tabulate the with-replacement, X and X* bounds over several subset sizes.
    Table {
        #[arg(long, default_value_t = 100)]
        k: usize,
        #[arg(long, default_value = "1/5")]
        alpha: String,
        #[arg(long, default_value = "1/3-1/5")]
        delta: String,
        #[arg(long, value_delimiter = ',', default_value = "inf,1000,100,50")]
        m_list: Vec<SubsetSize>,
        #[arg(long, value_enum, default_value_t = Format::Pretty)]
        format: Format,
        #[arg(long, default_value_t = 6)]
        precision: usize,
    },
    /// Check inclusion probabilities and tail bounds exactly or by Monte Carlo.
    Verify {
        weights_file: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        subset_file: PathBuf,
        #[arg(long, value_enum, default_value_t = VerifyMode::Exact)]
        mode: VerifyMode,
        #[arg(long)]
        delta: String,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        sampler: SamplerArgs,
        /// Monte Carlo worker threads.
        #[arg(long, env = "PIVOTAL_JOBS")]
        jobs: Option<usize>,
        #[arg(long)]
        normalize: bool,
    },
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub name: &'static str,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError { code: 2, name: "UsageError", message: message.into() }
    }
}

impl From<InputError> for CliError {
    fn from(e: InputError) -> Self {
        CliError { code: 2, name: e.name(), message: e.to_string() }
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        let name = match &e {
            SamplerError::Domain(_) => "DomainError",
            SamplerError::InvalidPermutation { .. } => "InvalidPermutation",
            SamplerError::RandomPolicyNotAllowed { .. } => "RandomPolicyNotAllowed",
            SamplerError::Model(m) => m.name(),
        };
        CliError { code: 2, name, message: e.to_string() }
    }
}

impl From<BoundsError> for CliError {
    fn from(e: BoundsError) -> Self {
        let name = match &e {
            BoundsError::Domain(_) => "DomainError",
            BoundsError::Model(m) => m.name(),
        };
        CliError { code: 2, name, message: e.to_string() }
    }
}

impl From<VerifyError> for CliError {
    fn from(e: VerifyError) -> Self {
        match e {
            VerifyError::Sampler(s) => s.into(),
            VerifyError::Bounds(b) => b.into(),
            VerifyError::Model(m) => InputError::from(m).into(),
            other => {
                let name = match &other {
                    VerifyError::TooLarge { .. } => "TooLarge",
                    VerifyError::PolicyNotDeterministic => "PolicyNotDeterministic",
                    _ => "TooFewTrials",
                };
                CliError { code: 2, name, message: other.to_string() }
            }
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError { code: 2, name: "IoError", message: e.to_string() }
    }
}

/// Formats `v` with `digits` significant digits.
pub fn format_sig(v: f64, digits: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let digits = digits.max(1);
    let magnitude = v.abs().log10().floor() as i64;
    let decimals = digits as i64 - 1 - magnitude;
    if (0..=17).contains(&decimals) {
        format!("{v:.*}", decimals as usize)
    } else {
        format!("{v:.*e}", digits - 1)
    }
}

fn parse_delta(text: &str) -> Result<f64, CliError> {
    let delta = parse_fraction(text).map_err(|e| CliError::usage(format!("--delta: {e}")))?;
    if delta < 0.0 {
        return Err(CliError::usage("--delta must be nonnegative"));
    }
    Ok(delta)
}

fn resolve_seed(seed: Option<u64>, err: &mut dyn Write) -> Result<u64, CliError> {
    Ok(match seed {
        Some(s) => s,
        None => {
            let s = rand::random::<u64>();
            writeln!(err, "seed: {s}")?;
            s
        }
    })
}

fn build_sampler(args: &SamplerArgs, wv: &WeightVector) -> Result<Sampler, CliError> {
    let order = args.order_file.as_deref().map(|p| load_order(p, wv)).transpose()?;
    let procedure: Procedure = args.procedure.into();
    let policy = match (args.policy, order) {
        (PolicyArg::RandomPair, Some(_)) => {
            return Err(CliError::usage("--order-file cannot be combined with --policy random-pair"))
        }
        (PolicyArg::RandomPair, None) => PairPolicy::RandomPair,
        (PolicyArg::InOrder, Some(order)) => PairPolicy::CustomOrder(order),
        (PolicyArg::InOrder, None) => PairPolicy::InOrder,
    };
    Ok(Sampler::new(procedure, policy)?)
}

fn label_value(wv: &WeightVector, i: usize) -> Value {
    match wv.ids() {
        Some(ids) => Value::String(ids[i].clone()),
        None => json!(i),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_sample(
    weights_file: &Path,
    k: usize,
    sampler_args: &SamplerArgs,
    seed: Option<u64>,
    count: u64,
    trace: bool,
    subset_file: Option<&PathBuf>,
    normalize: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<u8, CliError> {
    let wv = load_weights(weights_file, k, normalize)?;
    let sampler = build_sampler(sampler_args, &wv)?;
    let tracked = match subset_file {
        Some(p) => Some(load_subset(p, &wv)?),
        None => trace.then(SubsetSpec::empty),
    };
    let seed = resolve_seed(seed, err)?;
    let x0 = scale_weights(&wv);
    for stream in 0..count {
        let mut rng = RandomSource::new(seed, stream);
        let result = sampler.sample(&x0, &mut rng, if trace { tracked.as_ref() } else { None })?;
        let mut line = json!({
            "seed": result.seed,
            "stream": result.stream,
            "sample": result.sample.iter().map(|&i| label_value(&wv, i)).collect::<Vec<_>>(),
            "steps": result.steps,
        });
        if let Some(rounds) = result.rounds {
            line["rounds"] = json!(rounds);
        }
        if let Some(t) = &result.trace {
            line["trace"] = serde_json::to_value(t).expect("trace serializes");
        }
        writeln!(out, "{line}")?;
    }
    Ok(0)
}

#[derive(Debug, Serialize)]
struct BoundsOutput {
    inputs: BoundInputs,
    best_of_complement: bool,
    reports: Vec<BoundReport>,
}

const BOUND_COLUMNS: [&str; 7] = [
    "side",
    "chernoff",
    "hoeffding_simple",
    "azuma",
    "freedman",
    "freedman_simplified",
    "fgl",
];

fn report_values(r: &BoundReport) -> [f64; 6] {
    [r.chernoff, r.hoeffding_simple, r.azuma, r.freedman, r.freedman_simplified, r.fgl]
}

fn side_name(side: TailSide) -> &'static str {
    match side {
        TailSide::Upper => "upper",
        TailSide::Lower => "lower",
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_bounds(
    alpha: Option<&str>,
    delta: &str,
    k: usize,
    m: Option<SubsetSize>,
    weights_file: Option<&PathBuf>,
    subset_file: Option<&PathBuf>,
    side: SideArg,
    best: bool,
    normalize: bool,
    format: Format,
    precision: usize,
    out: &mut dyn Write,
) -> Result<u8, CliError> {
    let delta = parse_delta(delta)?;
    let kk = k as u64;
    let inputs = match (weights_file, subset_file) {
        (Some(wf), Some(sf)) => {
            if alpha.is_some() || m.is_some() {
                return Err(CliError::usage(
                    "--alpha/--m cannot be combined with --weights-file/--subset-file",
                ));
            }
            let wv = load_weights(wf, k, normalize)?;
            let a = load_subset(sf, &wv)?;
            let alpha = subset_alpha(&wv, &a).map_err(InputError::from)?;
            let eta = if best {
                let eta_a = eta_exact(&wv, &a).map_err(InputError::from)?;
                let eta_b = eta_exact(&wv, &a.complement(wv.n())).map_err(InputError::from)?;
                eta_a.min(eta_b)
            } else {
                eta_exact(&wv, &a).map_err(InputError::from)?
            };
            BoundInputs::new(alpha, delta, kk, eta, EtaProvenance::Exact)?
        }
        (None, None) => {
            let alpha = alpha.ok_or_else(|| CliError::usage("either --alpha or --weights-file/--subset-file is required"))?;
            let alpha = parse_fraction(alpha).map_err(|e| CliError::usage(format!("--alpha: {e}")))?;
            let (mut eta, mut provenance) = match m {
                Some(m) => (eta_upper_bound(alpha, m, kk)?, EtaProvenance::EtaBar { m }),
                None => {
                    eta_upper_bound(alpha, SubsetSize::Unbounded, kk)?;
                    (alpha, EtaProvenance::WorstCaseAlpha)
                }
            };
            if best && eta > 0.5 {
                eta = 0.5;
                provenance = EtaProvenance::Half;
            }
            BoundInputs::new(alpha, delta, kk, eta, provenance)?
        }
        _ => return Err(CliError::usage("--weights-file and --subset-file must be given together")),
    };
    let sides: &[TailSide] = match side {
        SideArg::Upper => &[TailSide::Upper],
        SideArg::Lower => &[TailSide::Lower],
        SideArg::Both => &[TailSide::Upper, TailSide::Lower],
    };
    let reports = sides
        .iter()
        .map(|&s| inputs.report(s))
        .collect::<Result<Vec<_>, _>>()?;

    match format {
        Format::Json => {
            let output = BoundsOutput { inputs, best_of_complement: best, reports };
            writeln!(out, "{}", serde_json::to_string_pretty(&output).expect("serializes"))?;
        }
        Format::Csv => {
            writeln!(out, "{}", BOUND_COLUMNS.join(","))?;
            for r in &reports {
                let values: Vec<String> = report_values(r).iter().map(|v| format_sig(*v, precision)).collect();
                writeln!(out, "{},{}", side_name(r.side), values.join(","))?;
            }
        }
        Format::Pretty => {
            writeln!(
                out,
                "alpha = {}, delta = {}, k = {}, eta = {} ({:?})",
                format_sig(inputs.alpha, precision),
                format_sig(inputs.delta, precision),
                inputs.k,
                format_sig(inputs.eta, precision),
                inputs.provenance
            )?;
            for r in &reports {
                writeln!(out, "[{} tail]", side_name(r.side))?;
                for (name, v) in BOUND_COLUMNS[1..].iter().zip(report_values(r)) {
                    writeln!(out, "  {name:<20} {}", format_sig(v, precision))?;
                }
            }
        }
    }
    Ok(0)
}

/// One row of the bounds table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub label: &'static str,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsTable {
    pub k: u64,
    pub alpha: f64,
    pub delta: f64,
    pub m: Vec<SubsetSize>,
    pub eta: Vec<f64>,
    pub rows: Vec<TableRow>,
}

/// With-replacement, Procedure X and Procedure X* bounds at `η̄_{α,m}` for each `m`.
pub fn bounds_table(k: u64, alpha: f64, delta: f64, m_list: &[SubsetSize]) -> Result<BoundsTable, BoundsError> {
    let eta = m_list
        .iter()
        .map(|&m| eta_upper_bound(alpha, m, k))
        .collect::<Result<Vec<_>, _>>()?;
    let chernoff = chernoff_bound(alpha, delta, k)?;
    let rows = vec![
        TableRow { label: "With replacement", values: vec![chernoff; m_list.len()] },
        TableRow {
            label: "Procedure X (pi)",
            values: eta.iter().map(|&e| freedman_pi(e, delta, k)).collect::<Result<_, _>>()?,
        },
        TableRow {
            label: "Procedure X* (pi*)",
            values: eta.iter().map(|&e| fgl_pi_star(e, delta, k)).collect::<Result<_, _>>()?,
        },
    ];
    Ok(BoundsTable { k, alpha, delta, m: m_list.to_vec(), eta, rows })
}

fn cmd_table(
    k: usize,
    alpha: &str,
    delta: &str,
    m_list: &[SubsetSize],
    format: Format,
    precision: usize,
    out: &mut dyn Write,
) -> Result<u8, CliError> {
    let alpha = parse_fraction(alpha).map_err(|e| CliError::usage(format!("--alpha: {e}")))?;
    let delta = parse_delta(delta)?;
    if m_list.is_empty() {
        return Err(CliError::usage("--m-list must not be empty"));
    }
    let table = bounds_table(k as u64, alpha, delta, m_list)?;
    match format {
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&table).expect("serializes"))?,
        Format::Csv => {
            let header: Vec<String> = table.m.iter().map(|m| format!("m={m}")).collect();
            writeln!(out, "row,{}", header.join(","))?;
            for row in &table.rows {
                let cells: Vec<String> = row.values.iter().map(|v| format_sig(*v, precision)).collect();
                writeln!(out, "{},{}", row.label, cells.join(","))?;
            }
        }
        Format::Pretty => {
            let width = precision + 6;
            write!(out, "{:<20}", "")?;
            for m in &table.m {
                write!(out, " | {:>width$}", format!("m={m}"))?;
            }
            writeln!(out)?;
            for row in &table.rows {
                write!(out, "{:<20}", row.label)?;
                for v in &row.values {
                    write!(out, " | {:>width$}", format_sig(*v, precision))?;
                }
                writeln!(out)?;
            }
        }
    }
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_verify(
    weights_file: &Path,
    k: usize,
    subset_file: &Path,
    mode: VerifyMode,
    delta: &str,
    trials: u64,
    seed: Option<u64>,
    sampler_args: &SamplerArgs,
    jobs: Option<usize>,
    normalize: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<u8, CliError> {
    let delta = parse_delta(delta)?;
    let wv = load_weights(weights_file, k, normalize)?;
    let a = load_subset(subset_file, &wv)?;
    let sampler = build_sampler(sampler_args, &wv)?;
    let report: VerificationReport = match mode {
        VerifyMode::Exact => verify_exact(&wv, &sampler, &a, delta)?,
        VerifyMode::Mc => {
            let seed = resolve_seed(seed, err)?;
            mc_estimate(&sampler, &wv, &a, delta, McConfig { trials, seed, jobs })?
                .into_report(sampler.policy().clone())
        }
    };
    writeln!(out, "{}", serde_json::to_string_pretty(&report).expect("serializes"))?;
    Ok(if report.pass { 0 } else { 1 })
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Sample {
            weights_file,
            k,
            sampler,
            seed,
            count,
            trace,
            subset_file,
            normalize,
        } => cmd_sample(
            weights_file,
            *k,
            sampler,
            *seed,
            *count,
            *trace,
            subset_file.as_ref(),
            *normalize,
            out,
            err,
        ),
        Command::Bounds {
            alpha,
            delta,
            k,
            m,
            weights_file,
            subset_file,
            side,
            best_of_complement,
            normalize,
            format,
            precision,
        } => cmd_bounds(
            alpha.as_deref(),
            delta,
            *k,
            *m,
            weights_file.as_ref(),
            subset_file.as_ref(),
            *side,
            *best_of_complement,
            *normalize,
            *format,
            *precision,
            out,
        ),
        Command::Table { k, alpha, delta, m_list, format, precision } => {
            cmd_table(*k, alpha, delta, m_list, *format, *precision, out)
        }
        Command::Verify {
            weights_file,
            k,
            subset_file,
            mode,
            delta,
            trials,
            seed,
            sampler,
            jobs,
            normalize,
        } => cmd_verify(
            weights_file,
            *k,
            subset_file,
            *mode,
            delta,
            *trials,
            *seed,
            sampler,
            *jobs,
            *normalize,
            out,
            err,
        ),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {}: {}", e.name, e.message);
            e.code
        }
    }
}

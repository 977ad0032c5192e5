//! `xvine`: simulate from, fit and inspect X-vine tail copula models.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use xvine::estimation::{
    empirical_chi, fit_pipeline, rank_transform, AicConvention, EstimationError, FitOptions, InputKind, PseudoSample,
    Truncation,
};
use xvine::families::{PairKind, TailKind};
use xvine::model::XVineSpec;
use xvine::simulation::{model_chi, sample_conditional, sample_inverted_pareto, sample_pareto};
use xvine::vine::{StructureMatrix, VineSequence};

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{0}")]
    PartialFit(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Io { .. } => 3,
            CliError::PartialFit(_) => 4,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn input<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

#[derive(Parser, Debug)]
#[command(name = "xvine", version, about = "X-vine tail copula models for multivariate extremes")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "XVINE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a sample from a model and write it as CSV.
    Simulate(SimulateArgs),
    /// Fit an X-vine to a data CSV and write the fit report as JSON.
    Fit(FitArgs),
    /// Tail dependence coefficients of all pairs (or triples), empirical or model based.
    Chi(ChiArgs),
    /// Re-encode or validate a structure matrix.
    Structure(StructureArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Model JSON.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Sample from the conditional law given that component j exceeds its threshold.
    #[arg(long, value_name = "J", conflicts_with = "pareto")]
    conditional: Option<usize>,
    /// Write multivariate Pareto draws Y = 1/Z instead of inverted Pareto draws.
    #[arg(long)]
    pareto: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum InputKindArg {
    Raw,
    InvertedPareto,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AicArg {
    Paper,
    Standard,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Data CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Number of upper order statistics per margin (raw input only).
    #[arg(long)]
    k: Option<usize>,
    /// Structure matrix or model JSON; skips tree learning.
    #[arg(long)]
    structure: Option<PathBuf>,
    /// Truncation: a tree level, `mbic`, or `auto` (forcing rules only).
    #[arg(long, default_value = "auto", value_parser = parse_truncation)]
    trunc: Truncation,
    #[arg(long, default_value_t = 0.9)]
    psi0: f64,
    #[arg(long, value_enum, default_value_t = InputKindArg::Raw)]
    input_kind: InputKindArg,
    #[arg(long, value_enum, default_value_t = AicArg::Paper)]
    aic_convention: AicArg,
    /// Comma-separated tail families for the first tree.
    #[arg(long, value_delimiter = ',')]
    tail_families: Option<Vec<String>>,
    /// Comma-separated pair copula families for deeper trees.
    #[arg(long, value_delimiter = ',')]
    pair_families: Option<Vec<String>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ChiArgs {
    /// Data CSV for empirical coefficients.
    #[arg(long, required_unless_present = "spec", conflicts_with = "spec")]
    data: Option<PathBuf>,
    /// Model JSON for Monte Carlo coefficients.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Threshold count for raw data.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum, default_value_t = InputKindArg::Raw)]
    input_kind: InputKindArg,
    /// Triples instead of pairs.
    #[arg(long)]
    triples: bool,
    /// Monte Carlo draws per tuple.
    #[arg(long, default_value_t = 100_000)]
    mc: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct StructureArgs {
    /// Structure matrix (or model) JSON to re-encode.
    #[arg(long, value_name = "IN", required_unless_present = "validate", conflicts_with = "validate", requires = "diag")]
    convert: Option<PathBuf>,
    /// First diagonal entry of the re-encoded matrix.
    #[arg(long, value_name = "J")]
    diag: Option<usize>,
    /// Structure matrix (or model) JSON to validate; prints its edge table.
    #[arg(long, value_name = "IN")]
    validate: Option<PathBuf>,
    /// Output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_truncation(s: &str) -> std::result::Result<Truncation, String> {
    match s {
        "mbic" => Ok(Truncation::Mbic),
        "auto" => Ok(Truncation::Auto),
        _ => match s.parse::<usize>() {
            Ok(q) if q >= 1 => Ok(Truncation::Fixed(q)),
            _ => Err(format!("expected a positive tree level, `mbic` or `auto`, got `{s}`")),
        },
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn read_spec(path: &Path) -> Result<XVineSpec> {
    XVineSpec::from_json(&read_text(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// A structure matrix, either bare or as the `structure` field of a model.
fn read_structure(path: &Path) -> Result<StructureMatrix> {
    let text = read_text(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let inner = value.get("structure").cloned().unwrap_or(value);
    serde_json::from_value(inner).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn read_vine(path: &Path) -> Result<VineSequence> {
    read_structure(path)?.to_vine().map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn read_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => CliError::Io { path: path.display().to_string(), source },
        other => CliError::Input(format!("{}: {other:?}", path.display())),
    })?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| CliError::Input(format!("{}: data row {}: {e}", path.display(), i + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let wrap = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(source) => CliError::Io { path: path.display().to_string(), source },
        other => CliError::Input(format!("{other:?}")),
    };
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    w.write_record(header).map_err(wrap)?;
    for r in rows {
        w.write_record(r).map_err(wrap)?;
    }
    w.flush().map_err(io_err(path))
}

/// 17 significant digits, enough to round-trip any double.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn pseudo_sample(data: &[Vec<f64>], k: Option<usize>, kind: InputKindArg) -> Result<PseudoSample> {
    match kind {
        InputKindArg::Raw => {
            let k = k.ok_or_else(|| CliError::Input("--k is required for raw input".into()))?;
            rank_transform(data, k).map_err(input)
        }
        InputKindArg::InvertedPareto => PseudoSample::from_inverted_pareto(data).map_err(input),
    }
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let spec = read_spec(&a.spec)?;
    let d = spec.dim();
    let (rows, rate, prefix) = if let Some(j) = a.conditional {
        if !spec.vine().nodes().contains(&j) {
            return Err(CliError::Input(format!("--conditional {j}: no such variable")));
        }
        (sample_conditional(&spec, j, a.n, a.seed).map_err(input)?, None, "Z")
    } else if a.pareto {
        let draws = sample_pareto(&spec, a.n, a.seed).map_err(input)?;
        let rate = draws.acceptance_rate();
        (draws.rows, Some(rate), "Y")
    } else {
        let draws = sample_inverted_pareto(&spec, a.n, a.seed).map_err(input)?;
        let rate = draws.acceptance_rate();
        (draws.rows, Some(rate), "Z")
    };
    let header: Vec<String> = (1..=d).map(|j| format!("{prefix}{j}")).collect();
    let body: Vec<Vec<String>> = rows.iter().map(|r| r.iter().map(|&v| num(v)).collect()).collect();
    write_csv(&a.out, &header, &body)?;
    if let Some(rate) = rate {
        if a.n > 0 {
            eprintln!("acceptance rate {rate:.6}");
        }
    }
    Ok(())
}

fn catalogue<K: std::str::FromStr>(names: &Option<Vec<String>>, all: &[K]) -> Result<Vec<K>>
where
    K: Copy,
    K::Err: std::fmt::Display,
{
    match names {
        None => Ok(all.to_vec()),
        Some(list) => list.iter().map(|s| s.trim().parse::<K>().map_err(input)).collect(),
    }
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    let data = read_csv(&a.data)?;
    let kind = match a.input_kind {
        InputKindArg::Raw => InputKind::Raw,
        InputKindArg::InvertedPareto => InputKind::InvertedPareto,
    };
    let k = match (a.input_kind, a.k) {
        (InputKindArg::Raw, None) => return Err(CliError::Input("--k is required for raw input".into())),
        (InputKindArg::Raw, Some(k)) => k,
        (InputKindArg::InvertedPareto, _) => data.len(),
    };
    let opts = FitOptions {
        structure: a.structure.as_deref().map(read_vine).transpose()?,
        tail_catalogue: catalogue(&a.tail_families, &TailKind::ALL)?,
        pair_catalogue: catalogue(&a.pair_families, &PairKind::ALL)?,
        truncation: a.trunc,
        psi0: a.psi0,
        aic: match a.aic_convention {
            AicArg::Paper => AicConvention::Paper,
            AicArg::Standard => AicConvention::Standard,
        },
        input: kind,
        ..FitOptions::default()
    };
    let report = match fit_pipeline(&data, k, &opts) {
        Ok(r) => r,
        Err(e @ EstimationError::Edge { .. }) => return Err(CliError::PartialFit(e.to_string())),
        Err(e) => return Err(input(e)),
    };
    write_text(&a.out, &report.to_json().map_err(input)?)?;
    eprintln!("q* = {}", report.q_star);
    let failed = report.failures();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::PartialFit(format!("{} edge(s) not fitted:\n  {}", failed.len(), failed.join("\n  "))))
    }
}

fn tuples(d: usize, size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for i in 1..=d {
        for j in i + 1..=d {
            if size == 2 {
                out.push(vec![i, j]);
            } else {
                out.extend((j + 1..=d).map(|l| vec![i, j, l]));
            }
        }
    }
    out
}

fn cmd_chi(a: &ChiArgs) -> Result<()> {
    let size = if a.triples { 3 } else { 2 };
    let mut header: Vec<String> = ["i", "j", "l"][..size].iter().map(|s| s.to_string()).collect();
    header.extend(["chi".to_string(), "se".to_string()]);
    let mut body = Vec::new();
    if let Some(path) = &a.data {
        let ps = pseudo_sample(&read_csv(path)?, a.k, a.input_kind)?;
        for t in tuples(ps.d, size) {
            let mut row: Vec<String> = t.iter().map(|v| v.to_string()).collect();
            row.push(num(empirical_chi(&ps, &t)));
            row.push(String::new());
            body.push(row);
        }
    } else if let Some(path) = &a.spec {
        let spec = read_spec(path)?;
        if a.mc == 0 {
            return Err(CliError::Input("--mc must be positive".into()));
        }
        for (i, t) in tuples(spec.dim(), size).into_iter().enumerate() {
            let est = model_chi(&spec, &t, a.mc, a.seed.wrapping_add(i as u64)).map_err(input)?;
            let mut row: Vec<String> = t.iter().map(|v| v.to_string()).collect();
            row.push(num(est.value));
            row.push(num(est.se));
            body.push(row);
        }
    }
    write_csv(&a.out, &header, &body)
}

fn cmd_structure(a: &StructureArgs) -> Result<()> {
    let text = if let Some(path) = &a.convert {
        let vine = read_vine(path)?;
        let m = vine.to_structure_matrix(a.diag).map_err(input)?;
        serde_json::to_string(&m).map_err(input)? + "\n"
    } else {
        let path = a.validate.as_ref().expect("clap enforces one of --convert/--validate");
        let vine = read_vine(path)?;
        let mut s = format!("valid vine: d = {}, truncation level {}\nlevel\tedge\n", vine.dim(), vine.trunc_level());
        for (li, level) in vine.levels().iter().enumerate() {
            for e in level {
                s.push_str(&format!("{}\t{}\n", li + 1, e.key));
            }
        }
        s
    };
    match &a.out {
        Some(p) => write_text(p, &text),
        None => io::stdout().write_all(text.as_bytes()).map_err(io_err(Path::new("<stdout>"))),
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Input("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().map_err(input)?;
    }
    match &cli.cmd {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Chi(a) => cmd_chi(a),
        Command::Structure(a) => cmd_structure(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

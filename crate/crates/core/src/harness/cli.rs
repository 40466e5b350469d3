//! Command-line front end with `simulate`, `estimate` and `diagnose`.
//!
//! Dimensions are 1-based on the command line. Every flag can also be given
//! in a JSON file passed with `--config`, whose keys are the long flag names;
//! flags on the command line take precedence over the file.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::dgp::{Design, DgpConfig, PermutationScope};
use crate::harness::mc::{monte_carlo, write_summary_csv, McConfig, McRunOptions, McSummary};
use crate::harness::panel::{load_panel_csv, PanelFrame};
use crate::harness::pipeline::{EstimatorSpec, Panel, PipelineSettings};
use crate::inference::{EstimateReport, VarianceModel};
use crate::kwfe::KernelFamily;
use crate::linalg::sym_eigen_desc;
use crate::regression::{pooled_ols, residualize};
use crate::tensor::mode_gram;

#[derive(Parser, Debug)]
#[command(
    name = "mdife",
    version,
    about = "Slope estimation on multidimensional panels with interactive fixed effects"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Monte Carlo study on a simulated design.
    #[command(args_override_self = true)]
    Simulate(SimulateArgs),
    /// Estimate slopes on a long-format CSV panel.
    #[command(args_override_self = true)]
    Estimate(EstimateArgs),
    /// Singular spectra of the pooled OLS residual in every dimension.
    #[command(args_override_self = true)]
    Diagnose(DiagnoseArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DesignArg {
    Growing,
    Fixed,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PermuteArg {
    Panel,
    Errors,
    Off,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KernelArg {
    Gaussian,
    Indicator,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VcovArg {
    Homo,
    Hetero,
    Hac,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Ols,
    Within,
    Factor,
    Ker,
    Keropt,
    Ik,
    Ic,
}

/// Options shared by `simulate` and `estimate`.
#[derive(Args, Debug)]
struct ModelArgs {
    /// Factor count of the flattened factor estimator.
    #[arg(long, default_value_t = 2)]
    factors: usize,
    /// Ranks of the Γ̂_X truncation (one value or one per dimension).
    #[arg(long, value_delimiter = ',', action = ArgAction::Set)]
    gamma_ranks: Option<Vec<usize>>,
    /// Ranks of the 𝒜̂ truncation (one value or one per dimension).
    #[arg(long, value_delimiter = ',', action = ArgAction::Set)]
    a_ranks: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value = "gaussian")]
    kernel: KernelArg,
    #[arg(long, value_enum, default_value = "hac")]
    vcov: VcovArg,
    /// HAC truncation lags (one value or one per dimension).
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, default_value = "1")]
    lags: Vec<usize>,
    /// Cross-fit the inference correction.
    #[arg(long, value_enum, default_value = "off")]
    split: Switch,
    /// Dimension halved for cross-fitting (1-based).
    #[arg(long, default_value_t = 1)]
    split_dim: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "growing")]
    design: DesignArg,
    /// Dimension sizes, e.g. 30,30,30.
    #[arg(long, value_delimiter = ',', action = ArgAction::Set)]
    dims: Option<Vec<usize>>,
    /// Run one experiment per size with every dimension set to it.
    #[arg(long, value_delimiter = ',', action = ArgAction::Set)]
    sweep: Option<Vec<usize>>,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    rho: f64,
    #[arg(long, default_value_t = 1000)]
    rounds: usize,
    /// Estimators: ols, within, factor[:dim], ker|keropt|ik|ic[:h]. Bare
    /// names expand over every dimension or every bandwidth.
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, default_value = "ols,within,factor,ker,ic")]
    estimators: Vec<String>,
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, default_value = "0.1")]
    bandwidths: Vec<f64>,
    /// Factor counts of the per-dimension proxy fits.
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, default_value = "2")]
    ranks: Vec<usize>,
    /// Cross-section relabelling of the simulated panel.
    #[arg(long, value_enum, default_value = "panel")]
    permute: PermuteArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    threads: Option<usize>,
    /// Rounds between partial summaries; 0 disables them.
    #[arg(long, default_value_t = 100)]
    report_every: usize,
    /// Summary CSV; rewritten with partial results while running.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    /// JSON file of flag values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InputArgs {
    /// Long-format CSV with a header row.
    #[arg(long)]
    input: PathBuf,
    /// Index columns, one per dimension.
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, required = true)]
    index_cols: Vec<String>,
    #[arg(long)]
    y: String,
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, required = true)]
    x: Vec<String>,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_enum, default_value = "ic")]
    method: MethodArg,
    /// Dimension forming the rows of the factor estimator (1-based).
    #[arg(long, default_value_t = 1)]
    flatten_dim: usize,
    /// Factor counts of the per-dimension proxy fits.
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, default_value = "2")]
    proxy_rank: Vec<usize>,
    /// One bandwidth, or one per dimension.
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, default_value = "0.1")]
    bandwidth: Vec<f64>,
    /// Seed of the cross-fitting split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report JSON; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    /// JSON file of flag values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DiagnoseArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Singular values reported per dimension.
    #[arg(long, default_value_t = 10)]
    top: usize,
    /// Report JSON; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON file of flag values.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Converts a JSON object of flag values into command-line tokens.
fn config_tokens(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let obj = value.as_object().ok_or_else(|| {
        Error::InvalidArgument("configuration file must hold a JSON object".into())
    })?;
    let scalar = |v: &serde_json::Value| -> Result<String> {
        match v {
            serde_json::Value::String(s) => Ok(s.clone()),
            serde_json::Value::Number(n) => Ok(n.to_string()),
            serde_json::Value::Bool(b) => Ok(if *b { "on" } else { "off" }.into()),
            other => Err(Error::InvalidArgument(format!(
                "unsupported configuration value {other}"
            ))),
        }
    };
    let mut tokens = Vec::new();
    for (key, v) in obj {
        let flag = format!("--{}", key.replace('_', "-"));
        let text = match v {
            serde_json::Value::Array(items) => items
                .iter()
                .map(scalar)
                .collect::<Result<Vec<_>>>()?
                .join(","),
            other => scalar(other)?,
        };
        tokens.push(flag);
        tokens.push(text);
    }
    Ok(tokens)
}

/// Moves `--config FILE` to the front of the subcommand's arguments,
/// expanded into flags, so explicit flags override it.
fn expand_config(args: Vec<String>) -> Result<Vec<String>> {
    let pos = args
        .iter()
        .position(|a| a == "--config" || a.starts_with("--config="));
    let Some(pos) = pos else { return Ok(args) };
    let mut rest = args;
    let path = if let Some(p) = rest[pos].strip_prefix("--config=") {
        let p = p.to_string();
        rest.remove(pos);
        p
    } else {
        if pos + 1 >= rest.len() {
            return Err(Error::InvalidArgument("--config needs a file".into()));
        }
        let p = rest.remove(pos + 1);
        rest.remove(pos);
        p
    };
    let sub = rest
        .iter()
        .skip(1)
        .position(|a| !a.starts_with('-'))
        .map(|i| i + 2)
        .unwrap_or(rest.len());
    let tokens = config_tokens(Path::new(&path))?;
    let mut out: Vec<String> = rest[..sub].to_vec();
    out.extend(tokens);
    out.extend_from_slice(&rest[sub..]);
    Ok(out)
}

fn one_based(dim: usize, what: &str) -> Result<usize> {
    dim.checked_sub(1)
        .ok_or_else(|| Error::InvalidArgument(format!("{what} is 1-based; got 0")))
}

impl ModelArgs {
    fn settings(&self, proxy_rank: Vec<usize>, seed: u64) -> Result<PipelineSettings> {
        let variance = match self.vcov {
            VcovArg::Homo => VarianceModel::Homoskedastic,
            VcovArg::Hetero => VarianceModel::Heteroskedastic,
            VcovArg::Hac => VarianceModel::Hac {
                lags: self.lags.clone(),
            },
        };
        Ok(PipelineSettings {
            factor_rank: self.factors,
            proxy_rank,
            kernel: match self.kernel {
                KernelArg::Gaussian => KernelFamily::Gaussian,
                KernelArg::Indicator => KernelFamily::Indicator,
            },
            gamma_ranks: self.gamma_ranks.clone(),
            a_ranks: self.a_ranks.clone(),
            variance,
            level: self.level,
            split: self.split == Switch::On,
            split_mode: one_based(self.split_dim, "--split-dim")?,
            split_seed: seed,
            ..PipelineSettings::default()
        })
    }
}

/// Expands estimator names over dimensions and bandwidths.
fn expand_estimators(
    names: &[String],
    order: usize,
    bandwidths: &[f64],
) -> Result<Vec<EstimatorSpec>> {
    let mut specs = Vec::new();
    for name in names {
        let name = name.trim();
        match name {
            "factor" => specs.extend((0..order).map(|mode| EstimatorSpec::Factor { mode })),
            "ker" | "keropt" | "ik" | "ic" => {
                for h in bandwidths {
                    specs.push(format!("{name}:{h}").parse()?);
                }
            }
            other => specs.push(other.parse()?),
        }
    }
    if specs.is_empty() {
        return Err(Error::InvalidArgument("no estimators requested".into()));
    }
    Ok(specs)
}

fn write_csv_file(path: &Path, summaries: &[McSummary]) -> Result<()> {
    write_summary_csv(BufWriter::new(File::create(path)?), summaries)
}

fn print_summary(out: &mut impl Write, s: &McSummary) -> io::Result<()> {
    let dims: Vec<String> = s.dims.iter().map(|d| d.to_string()).collect();
    writeln!(
        out,
        "dims {}: {}/{} rounds, {:.1}s",
        dims.join("x"),
        s.rounds_completed,
        s.rounds_requested,
        s.wall_seconds
    )?;
    writeln!(
        out,
        "  {:<26} {:>9} {:>8} {:>8} {:>8} {:>6}",
        "estimator", "bias", "st_dev", "rmse", "coverage", "fail"
    )?;
    for r in &s.rows {
        writeln!(
            out,
            "  {:<26} {:>+9.4} {:>8.4} {:>8.4} {:>8.3} {:>6}",
            r.label, r.bias, r.st_dev, r.rmse, r.coverage, r.failures
        )?;
    }
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let grid: Vec<Vec<usize>> = match (&args.sweep, &args.dims) {
        (Some(sizes), dims) => {
            let order = dims.as_ref().map_or(3, Vec::len);
            sizes.iter().map(|&n| vec![n; order]).collect()
        }
        (None, Some(dims)) => vec![dims.clone()],
        (None, None) => return Err(Error::InvalidArgument("give --dims or --sweep".into())),
    };
    let mut done: Vec<McSummary> = Vec::new();
    let stderr = io::stderr();
    for dims in grid {
        let mut dgp = DgpConfig::fixed(dims.clone());
        dgp.design = match args.design {
            DesignArg::Growing => Design::Growing,
            DesignArg::Fixed => Design::Fixed,
        };
        dgp.rho = args.rho;
        match args.permute {
            PermuteArg::Off => dgp.permute_cross_sections = false,
            PermuteArg::Panel => dgp.permutation_scope = PermutationScope::Panel,
            PermuteArg::Errors => dgp.permutation_scope = PermutationScope::Errors,
        }
        let config = McConfig {
            estimators: expand_estimators(&args.estimators, dims.len(), &args.bandwidths)?,
            settings: args.model.settings(args.ranks.clone(), args.seed)?,
            dgp,
            rounds: args.rounds,
            master_seed: args.seed,
        };
        let opts = McRunOptions {
            threads: args.threads,
            report_every: args.report_every,
        };
        let result = monte_carlo(&config, opts, |partial| {
            let _ = print_summary(&mut stderr.lock(), partial);
            if let Some(path) = &args.out {
                let mut all = done.clone();
                all.push(partial.clone());
                if let Err(e) = write_csv_file(path, &all) {
                    eprintln!("warning: could not write {}: {e}", path.display());
                }
            }
            ControlFlow::Continue(())
        })?;
        done.push(result.summary);
    }
    match &args.out {
        Some(path) => write_csv_file(path, &done)?,
        None => {
            let stdout = io::stdout();
            write_summary_csv(stdout.lock(), &done)?;
        }
    }
    Ok(())
}

fn load(input: &InputArgs) -> Result<PanelFrame> {
    let idx: Vec<&str> = input.index_cols.iter().map(String::as_str).collect();
    let xs: Vec<&str> = input.x.iter().map(String::as_str).collect();
    load_panel_csv(&input.input, &idx, &input.y, &xs)
}

#[derive(Serialize)]
struct DimInfo {
    name: String,
    size: usize,
}

fn dim_info(frame: &PanelFrame) -> Vec<DimInfo> {
    frame
        .dim_names
        .iter()
        .zip(frame.sizes())
        .map(|(name, size)| DimInfo {
            name: name.clone(),
            size,
        })
        .collect()
}

#[derive(Serialize)]
struct EstimateOutput {
    input: String,
    dims: Vec<DimInfo>,
    y: String,
    x: Vec<String>,
    #[serde(flatten)]
    report: EstimateReport,
}

fn emit_json(out: &Option<PathBuf>, value: &impl Serialize) -> Result<()> {
    match out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            serde_json::to_writer_pretty(&mut w, value)?;
            writeln!(w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            serde_json::to_writer_pretty(&mut w, value)?;
            writeln!(w)?;
        }
    }
    Ok(())
}

fn estimate(args: EstimateArgs) -> Result<()> {
    let frame = load(&args.input)?;
    let mut settings = args.model.settings(args.proxy_rank.clone(), args.seed)?;
    let h = args.bandwidth[0];
    if args.bandwidth.len() > 1 {
        settings.mode_bandwidths = Some(args.bandwidth.clone());
    }
    let spec = match args.method {
        MethodArg::Ols => EstimatorSpec::Ols,
        MethodArg::Within => EstimatorSpec::Within,
        MethodArg::Factor => EstimatorSpec::Factor {
            mode: one_based(args.flatten_dim, "--flatten-dim")?,
        },
        MethodArg::Ker => EstimatorSpec::Ker { h },
        MethodArg::Keropt => EstimatorSpec::KerOpt { h },
        MethodArg::Ik => EstimatorSpec::Ik { h },
        MethodArg::Ic => EstimatorSpec::Ic { h },
    };
    let mut panel = Panel::new(&frame.y, &frame.xs, &settings)?;
    let report = panel.estimate(&spec)?;
    let output = EstimateOutput {
        input: args.input.input.display().to_string(),
        dims: dim_info(&frame),
        y: frame.y_name.clone(),
        x: frame.x_names.clone(),
        report,
    };
    emit_json(&args.out, &output)
}

#[derive(Serialize)]
struct Spectrum {
    name: String,
    size: usize,
    singular_values: Vec<f64>,
    /// Cumulative share of the squared Frobenius norm.
    cumulative_share: Vec<f64>,
}

#[derive(Serialize)]
struct DiagnoseOutput {
    input: String,
    beta_ols: Vec<f64>,
    spectra: Vec<Spectrum>,
}

fn diagnose(args: DiagnoseArgs) -> Result<()> {
    let frame = load(&args.input)?;
    let fit = pooled_ols(&frame.y, &frame.xs)?;
    let resid = residualize(&frame.y, &frame.xs, &fit.beta);
    let total = resid.dot(&resid);
    let mut spectra = Vec::new();
    for (n, name) in frame.dim_names.iter().enumerate() {
        let (eig, _) = sym_eigen_desc(&mode_gram(&resid, n)?);
        let keep = args.top.min(eig.len());
        let mut acc = 0.0;
        let mut shares = Vec::with_capacity(keep);
        let mut values = Vec::with_capacity(keep);
        for &l in &eig[..keep] {
            let l = l.max(0.0);
            acc += l;
            values.push(l.sqrt());
            shares.push(if total > 0.0 { acc / total } else { 0.0 });
        }
        spectra.push(Spectrum {
            name: name.clone(),
            size: eig.len(),
            singular_values: values,
            cumulative_share: shares,
        });
    }
    let output = DiagnoseOutput {
        input: args.input.input.display().to_string(),
        beta_ols: fit.beta,
        spectra,
    };
    emit_json(&args.out, &output)
}

/// Runs the command line `args` (program name first) and returns the process
/// exit code.
pub fn run_cli<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args: Vec<String> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let res = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
        Command::Diagnose(a) => diagnose(a),
    };
    match res {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

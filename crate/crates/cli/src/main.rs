//! Command-line front end for the Fay-Herriot interval toolkit.
//!
//! Exit codes: 0 success, 2 input/validation failure, 3 numeric
//! non-convergence. `FHMP_THREADS` caps simulation parallelism.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fhmp::dataset::FhDataset;
use fhmp::error::FhError;
use fhmp::estimators::{estimate_variance, Method};
use fhmp::intervals::{
    interval_cox, interval_direct, interval_n, interval_yl, CoxVariant, EbInterval,
    IntervalMethod,
};
use fhmp::io::{baseball_dataset, bundled_baseball, read_dataset, BaseballModel, DatasetFile};
use fhmp::model::{area_quantities, blup};
use fhmp::normal::z_crit;
use fhmp::posterior::{build_posterior_grid, posterior_coverage, DEFAULT_PANELS};
use fhmp::priors::PriorSpec;
use fhmp::sim::{run_bias_length_study, run_coverage, SimSetting};

#[derive(Parser)]
#[command(name = "fhmp", version, about = "Fay-Herriot interval estimation toolkit")]
struct Cli {
    /// Master random seed for simulation commands.
    #[arg(long, global = true, default_value_t = 2023)]
    seed: u64,
    /// Write output to this file instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Output format for report-emitting commands.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Reml,
    Anova,
    AnovaCorrected,
    N,
    Yl,
}

#[derive(Clone, Copy, ValueEnum)]
enum IntervalArg {
    Direct,
    Cox,
    N,
    Yl,
}

impl From<IntervalArg> for IntervalMethod {
    fn from(v: IntervalArg) -> Self {
        match v {
            IntervalArg::Direct => IntervalMethod::Direct,
            IntervalArg::Cox => IntervalMethod::Cox,
            IntervalArg::N => IntervalMethod::N,
            IntervalArg::Yl => IntervalMethod::Yl,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PriorArg {
    Matching,
    Drs,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    M3,
    M4,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the variance component and emit per-area EB intervals.
    Fit(FitArgs),
    /// Emit per-area intervals for one or more constructions.
    Intervals(IntervalsArgs),
    /// Exact posterior coverage of an interval under a prior on A.
    PosteriorCoverage(PosteriorArgs),
    /// Monte Carlo coverage tables (EBC, lengths, optional PC).
    Simulate(SimulateArgs),
    /// Bias/length decay study across a ladder of m values.
    BiasStudy(BiasArgs),
    /// Analyze the bundled baseball data.
    Baseball(BaseballArgs),
}

#[derive(Args)]
struct FitArgs {
    dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::Reml)]
    method: MethodArg,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

#[derive(Args)]
struct IntervalsArgs {
    dataset: PathBuf,
    /// Comma-separated list of constructions.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [IntervalArg::Direct, IntervalArg::N, IntervalArg::Yl])]
    methods: Vec<IntervalArg>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

#[derive(Args)]
struct PosteriorArgs {
    dataset: PathBuf,
    /// Target area index (0-based); defaults to all areas.
    #[arg(long)]
    area: Option<usize>,
    #[arg(long, value_enum, default_value_t = PriorArg::Matching)]
    prior: PriorArg,
    #[arg(long, value_enum, default_value_t = IntervalArg::N)]
    interval: IntervalArg,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = DEFAULT_PANELS)]
    panels: usize,
}

#[derive(Args)]
struct SimulateArgs {
    /// Setting name (S11, S12, S21, S22, S31, S32, S33, S4, S5) or a
    /// path to a setting JSON file.
    #[arg(long)]
    setting: String,
    #[arg(long, default_value_t = 15)]
    m: usize,
    #[arg(long, default_value_t = 200)]
    replicates: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [IntervalArg::N, IntervalArg::Yl])]
    methods: Vec<IntervalArg>,
    /// Also compute quadrature posterior coverage per replicate.
    #[arg(long)]
    pc: bool,
}

#[derive(Args)]
struct BiasArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [30usize, 60, 120, 240])]
    m_list: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    replicates: usize,
    #[arg(long, default_value_t = 0)]
    area: usize,
}

#[derive(Args)]
struct BaseballArgs {
    #[arg(long, value_enum, default_value_t = ModelArg::M4)]
    model: ModelArg,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [IntervalArg::N, IntervalArg::Yl])]
    methods: Vec<IntervalArg>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Re-simulate per-player posterior coverage under this setting
    /// (S4 or S5).
    #[arg(long)]
    pc: Option<String>,
    #[arg(long, default_value_t = 200)]
    replicates: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(threads) = std::env::var("FHMP_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                FhError::NonConvergence { .. }
                | FhError::TruncatedAtZero(_)
                | FhError::Integration { .. }
                | FhError::Grid(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), FhError> {
    let mut sink = output(&cli.out)?;
    match &cli.command {
        Command::Fit(args) => {
            let file = read_dataset(&args.dataset)?;
            cmd_fit(&mut sink, &file, args.method, args.alpha)
        }
        Command::Intervals(args) => {
            let file = read_dataset(&args.dataset)?;
            cmd_intervals(&mut sink, &file, &args.methods, args.alpha)
        }
        Command::PosteriorCoverage(args) => cmd_posterior(&mut sink, args),
        Command::Simulate(args) => cmd_simulate(&mut sink, args, cli.seed, cli.format),
        Command::BiasStudy(args) => cmd_bias(&mut sink, args, cli.seed, cli.format),
        Command::Baseball(args) => cmd_baseball(&mut sink, args, cli.seed),
    }
}

fn output(out: &Option<PathBuf>) -> Result<Box<dyn Write>, FhError> {
    Ok(match out {
        Some(path) => Box::new(std::fs::File::create(path)?),
        None => Box::new(std::io::stdout()),
    })
}

fn interval_row(
    wtr: &mut csv::Writer<&mut Box<dyn Write>>,
    id: &str,
    iv: &EbInterval,
    truth: Option<f64>,
) -> Result<(), FhError> {
    let mut rec = vec![
        id.to_string(),
        iv.method.label().to_string(),
        format!("{:.6}", iv.a_used),
        format!("{:.6}", iv.center),
        format!("{:.6}", iv.lower),
        format!("{:.6}", iv.upper),
    ];
    match truth {
        Some(t) => {
            rec.push(format!("{t:.6}"));
            rec.push(iv.contains(t).to_string());
        }
        None => {
            rec.push(String::new());
            rec.push(String::new());
        }
    }
    wtr.write_record(&rec)?;
    Ok(())
}

fn cmd_fit(
    sink: &mut Box<dyn Write>,
    file: &DatasetFile,
    method: MethodArg,
    alpha: f64,
) -> Result<(), FhError> {
    let data = &file.data;
    let z = z_crit(alpha);
    let mut wtr = csv::Writer::from_writer(sink);
    wtr.write_record([
        "area_id", "method", "a_hat", "center", "lower", "upper", "theta_true", "contains",
    ])?;
    match method {
        MethodArg::Reml | MethodArg::Anova | MethodArg::AnovaCorrected => {
            let m = match method {
                MethodArg::Reml => Method::Reml,
                MethodArg::Anova => Method::AnovaLiteral,
                _ => Method::AnovaCorrected,
            };
            let fit = estimate_variance(data, m, alpha)?;
            let b = blup(data, fit.a_hat)?;
            for i in 0..data.m() {
                let q = area_quantities(data, fit.a_hat, i)?;
                let iv = EbInterval {
                    area: i,
                    method: IntervalMethod::N,
                    center: b.theta_blup[i],
                    half_width: z * q.delta,
                    lower: b.theta_blup[i] - z * q.delta,
                    upper: b.theta_blup[i] + z * q.delta,
                    level: 1.0 - alpha,
                    a_used: fit.a_hat,
                    beta_used: Vec::new(),
                };
                let truth = file.theta_true.as_ref().map(|t| t[i]);
                interval_row(&mut wtr, &file.area_ids[i], &iv, truth)?;
            }
        }
        MethodArg::N | MethodArg::Yl => {
            for i in 0..data.m() {
                let iv = match method {
                    MethodArg::N => interval_n(data, i, alpha)?,
                    _ => interval_yl(data, i, alpha)?,
                };
                let truth = file.theta_true.as_ref().map(|t| t[i]);
                interval_row(&mut wtr, &file.area_ids[i], &iv, truth)?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

fn cmd_intervals(
    sink: &mut Box<dyn Write>,
    file: &DatasetFile,
    methods: &[IntervalArg],
    alpha: f64,
) -> Result<(), FhError> {
    let data = &file.data;
    let mut wtr = csv::Writer::from_writer(sink);
    wtr.write_record([
        "area_id", "method", "a_used", "center", "lower", "upper", "theta_true", "contains",
    ])?;
    for &marg in methods {
        for i in 0..data.m() {
            let iv = build(data, i, alpha, marg.into())?;
            let truth = file.theta_true.as_ref().map(|t| t[i]);
            interval_row(&mut wtr, &file.area_ids[i], &iv, truth)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

fn build(
    data: &FhDataset,
    i: usize,
    alpha: f64,
    method: IntervalMethod,
) -> Result<EbInterval, FhError> {
    match method {
        IntervalMethod::Direct => interval_direct(data, i, alpha),
        IntervalMethod::Cox => interval_cox(data, i, alpha, CoxVariant::Literal),
        IntervalMethod::N => interval_n(data, i, alpha),
        IntervalMethod::Yl => interval_yl(data, i, alpha),
    }
}

fn cmd_posterior(sink: &mut Box<dyn Write>, args: &PosteriorArgs) -> Result<(), FhError> {
    let file = read_dataset(&args.dataset)?;
    let data = &file.data;
    let areas: Vec<usize> = match args.area {
        Some(i) => vec![i],
        None => (0..data.m()).collect(),
    };
    let mut wtr = csv::Writer::from_writer(sink);
    wtr.write_record(["area_id", "interval", "coverage", "quadrature_error", "nodes"])?;
    for i in areas {
        let prior = match args.prior {
            PriorArg::Matching => PriorSpec::matching(data, i),
            PriorArg::Drs => PriorSpec::drs(i),
        };
        let grid = build_posterior_grid(data, i, &prior, args.panels)?;
        let iv = build(data, i, args.alpha, args.interval.into())?;
        let cov = posterior_coverage(&grid, &iv)?;
        wtr.write_record([
            file.area_ids[i].clone(),
            iv.method.label().to_string(),
            format!("{:.8}", cov.posterior_coverage),
            format!("{:.2e}", cov.quadrature_error),
            cov.nodes.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

fn cmd_simulate(
    sink: &mut Box<dyn Write>,
    args: &SimulateArgs,
    seed: u64,
    format: Format,
) -> Result<(), FhError> {
    let setting = if args.setting.ends_with(".json") {
        let text = std::fs::read_to_string(&args.setting)?;
        let s: SimSetting = serde_json::from_str(&text)?;
        s.validate()?;
        s
    } else {
        SimSetting::named(&args.setting, args.m, args.replicates, seed)?
    };
    let methods: Vec<IntervalMethod> = args.methods.iter().map(|&m| m.into()).collect();
    let report = run_coverage(&setting, &methods, args.pc)?;
    match format {
        Format::Csv => report.to_csv(sink)?,
        Format::Json => {
            serde_json::to_writer_pretty(&mut *sink, &report)?;
            writeln!(sink)?;
        }
    }
    Ok(())
}

fn cmd_bias(
    sink: &mut Box<dyn Write>,
    args: &BiasArgs,
    seed: u64,
    format: Format,
) -> Result<(), FhError> {
    let report = run_bias_length_study(&args.m_list, args.replicates, seed, args.area)?;
    match format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut *sink, &report)?;
            writeln!(sink)?;
        }
        Format::Csv => {
            let mut wtr = csv::Writer::from_writer(sink);
            wtr.write_record([
                "m",
                "mean_a_gap",
                "se_a_gap",
                "mean_r",
                "mean_abs_length_diff",
                "se_abs_length_diff",
                "frac_n_longer",
                "length_slope",
            ])?;
            for row in &report.rows {
                wtr.write_record([
                    row.m.to_string(),
                    format!("{:.8}", row.mean_a_gap),
                    format!("{:.8}", row.se_a_gap),
                    format!("{:.8}", row.mean_r),
                    format!("{:.8}", row.mean_abs_length_diff),
                    format!("{:.8}", row.se_abs_length_diff),
                    format!("{:.4}", row.frac_n_longer),
                    format!("{:.4}", report.length_slope),
                ])?;
            }
            wtr.flush()?;
        }
    }
    Ok(())
}

fn cmd_baseball(
    sink: &mut Box<dyn Write>,
    args: &BaseballArgs,
    seed: u64,
) -> Result<(), FhError> {
    let records = bundled_baseball();
    let model = match args.model {
        ModelArg::M3 => BaseballModel::M3,
        ModelArg::M4 => BaseballModel::M4,
    };
    let (data, theta) = baseball_dataset(&records, model)?;
    if let Some(setting_name) = &args.pc {
        // per-player posterior coverage via resimulation
        let setting = SimSetting::named(setting_name, 18, args.replicates, seed)?;
        let methods: Vec<IntervalMethod> = args.methods.iter().map(|&m| m.into()).collect();
        let report = run_coverage(&setting, &methods, true)?;
        report.to_csv(sink)?;
        return Ok(());
    }
    let mut wtr = csv::Writer::from_writer(sink);
    wtr.write_record([
        "player", "method", "a_used", "center", "lower", "upper", "theta_true", "contains",
    ])?;
    for &marg in &args.methods {
        for i in 0..data.m() {
            let iv = build(&data, i, args.alpha, marg.into())?;
            interval_row(&mut wtr, &records[i].player, &iv, Some(theta[i]))?;
        }
    }
    wtr.flush()?;
    Ok(())
}

//! `bgcf`: fit, simulate, predict, identify and cross-validate Gaussian copula
//! factor models from the command line.
//!
//! Exit codes: 0 success, 1 input error, 2 numerical failure.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bgcf_core::eval::{cross_validate, run_simulation_suite, CvConfig, Estimator};
use bgcf_core::gibbs::{run_chain, ChainConfig, PriorSpec};
use bgcf_core::identify::{decomposition_residual, recover_from_s};
use bgcf_core::io::{self, StructureSpec};
use bgcf_core::model::{
    validate_structure, FactorModelParams, IdentificationReport, MeasurementStructure, Severity,
};
use bgcf_core::predict::{TrainedPredictor, DEFAULT_M_DRAWS};
use bgcf_core::rng::{derive_seed, rng_from_seed};
use bgcf_core::{BgcfError, DEFAULT_INDEPENDENCE_THRESHOLD};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(
    name = "bgcf",
    version,
    about = "Bayesian Gaussian copula factor analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Log progress information to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Args, Debug, Clone)]
struct ChainArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    #[arg(long = "burn-in", default_value_t = 100)]
    burn_in: usize,
    #[arg(long, default_value_t = 1)]
    thin: usize,
}

impl ChainArgs {
    fn config(&self) -> ChainConfig {
        ChainConfig {
            iterations: self.iterations,
            burn_in: self.burn_in,
            thinning: self.thin,
            seed: self.seed,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Directory for output files (created if needed).
    #[arg(long = "out-dir", default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads for parallel work; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the model; writes params.json and draws.csv.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        structure: PathBuf,
        #[command(flatten)]
        chain: ChainArgs,
        /// Treat identification warnings about underdetermined factors as errors.
        #[arg(long)]
        strict: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Run a simulation suite; writes results.csv, raw.csv and failures.csv.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `seed` in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `iterations` in the config.
        #[arg(long)]
        iterations: Option<usize>,
        /// Overrides `burn_in` in the config.
        #[arg(long = "burn-in")]
        burn_in: Option<usize>,
        /// Overrides `thin` in the config.
        #[arg(long)]
        thin: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Predict one column of new rows; writes predictions.csv.
    Predict {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        structure: PathBuf,
        #[arg(long = "new")]
        new_rows: PathBuf,
        /// Name of the column to predict.
        #[arg(long)]
        target: String,
        #[arg(long = "m-draws", default_value_t = DEFAULT_M_DRAWS)]
        m_draws: usize,
        #[command(flatten)]
        chain: ChainArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Recover parameters from an exact correlation matrix; writes params.json.
    Identify {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        structure: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Repeated k-fold cross-validation of BGCF and ML regression; writes
    /// cv_records.csv and cv_summary.csv.
    Cv {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        structure: PathBuf,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        /// Comma-separated target columns (default: all).
        #[arg(long, value_delimiter = ',')]
        targets: Option<Vec<String>>,
        #[arg(long = "m-draws", default_value_t = DEFAULT_M_DRAWS)]
        m_draws: usize,
        #[command(flatten)]
        chain: ChainArgs,
        #[command(flatten)]
        common: Common,
    },
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<BgcfError> for Failure {
    fn from(e: BgcfError) -> Self {
        Failure {
            code: if e.is_numerical() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

fn input_error(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .format_timestamp(None)
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Fit {
            data,
            structure,
            chain,
            strict,
            common,
        } => cmd_fit(&data, &structure, &chain, strict, &common),
        Command::Simulate {
            config,
            seed,
            iterations,
            burn_in,
            thin,
            common,
        } => cmd_simulate(&config, seed, iterations, burn_in, thin, &common),
        Command::Predict {
            train,
            structure,
            new_rows,
            target,
            m_draws,
            chain,
            common,
        } => cmd_predict(
            &train, &structure, &new_rows, &target, m_draws, &chain, &common,
        ),
        Command::Identify {
            matrix,
            structure,
            common,
        } => cmd_identify(&matrix, &structure, &common),
        Command::Cv {
            data,
            structure,
            folds,
            repeats,
            targets,
            m_draws,
            chain,
            common,
        } => cmd_cv(
            &data, &structure, folds, repeats, targets, m_draws, &chain, &common,
        ),
    }
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| input_error(format!("cannot open {}: {e}", path.display())))
}

fn read_structure(path: &Path) -> CliResult<StructureSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| input_error(format!("cannot read {}: {e}", path.display())))?;
    Ok(StructureSpec::parse(&text)?)
}

fn thread_pool(jobs: usize) -> CliResult<rayon::ThreadPool> {
    if jobs == 0 {
        return Err(input_error("--jobs must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| input_error(format!("cannot start worker pool: {e}")))
}

/// Writes every `(name, contents)` pair into the output directory. Nothing
/// is written before all contents exist.
fn write_outputs(dir: &Path, files: &[(&str, String)]) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| input_error(format!("cannot create {}: {e}", dir.display())))?;
    for (name, contents) in files {
        io::write_atomic(&dir.join(name), contents)?;
    }
    Ok(())
}

fn matrix_json(m: &nalgebra::DMatrix<f64>) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| json!((0..m.ncols()).map(|j| m[(i, j)]).collect::<Vec<_>>()))
            .collect(),
    )
}

fn params_json(params: &FactorModelParams, structure: &MeasurementStructure) -> Value {
    json!({
        "factors": structure.factor_names(),
        "indicators": structure.indicator_names(),
        "C": matrix_json(params.c()),
        "Lambda": matrix_json(params.lambda()),
        "D": params.d().iter().copied().collect::<Vec<_>>(),
    })
}

fn report_json(report: &IdentificationReport) -> Value {
    Value::Array(
        report
            .flags
            .iter()
            .map(|f| {
                json!({
                    "factor": f.factor_name,
                    "severity": match f.severity { Severity::Soft => "soft", Severity::Hard => "hard" },
                    "message": f.message,
                })
            })
            .collect(),
    )
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s
}

fn cmd_fit(
    data: &Path,
    structure: &Path,
    chain: &ChainArgs,
    strict: bool,
    common: &Common,
) -> CliResult<()> {
    let spec = read_structure(structure)?;
    let (dataset, structure) = io::load_dataset(open(data)?, &spec)?;
    let config = chain.config();
    config.validate()?;
    let pool = thread_pool(common.jobs)?;
    for flag in &validate_structure(&structure, None, DEFAULT_INDEPENDENCE_THRESHOLD).flags {
        log::warn!("{}", flag.message);
    }
    let posterior = pool.install(|| {
        run_chain(
            &dataset,
            &structure,
            &PriorSpec::default_for(&structure),
            &config,
        )
    })?;
    let report = validate_structure(
        &structure,
        Some(posterior.params_hat.c()),
        DEFAULT_INDEPENDENCE_THRESHOLD,
    );
    for flag in report.flags.iter().filter(|f| f.severity == Severity::Hard) {
        if strict {
            return Err(input_error(flag.message.clone()));
        }
        log::warn!("{}", flag.message);
    }
    let mut out = params_json(&posterior.params_hat, &structure);
    out["chain"] = json!({
        "seed": config.seed,
        "iterations": config.iterations,
        "burn_in": config.burn_in,
        "thinning": config.thinning,
        "retained": posterior.draws.len(),
        "rows": dataset.n(),
        "missing_cells": dataset.missing_count(),
    });
    out["identification"] = report_json(&report);
    write_outputs(
        &common.out_dir,
        &[
            ("params.json", pretty(&out)),
            ("draws.csv", io::draws_csv(&posterior.draws, &structure)),
        ],
    )
}

fn cmd_simulate(
    config: &Path,
    seed: Option<u64>,
    iterations: Option<usize>,
    burn_in: Option<usize>,
    thin: Option<usize>,
    common: &Common,
) -> CliResult<()> {
    let text = std::fs::read_to_string(config)
        .map_err(|e| input_error(format!("cannot read {}: {e}", config.display())))?;
    let mut suite = io::parse_suite_config(&text)?;
    if let Some(s) = seed {
        suite.seed = s;
    }
    if let Some(v) = iterations {
        suite.chain.iterations = v;
    }
    if let Some(v) = burn_in {
        suite.chain.burn_in = v;
    }
    if let Some(v) = thin {
        suite.chain.thinning = v;
    }
    suite.validate()?;
    let pool = thread_pool(common.jobs)?;
    let results = pool.install(|| run_simulation_suite(&suite))?;
    if !results.failures.is_empty() {
        log::warn!(
            "{} replicate fits failed; see failures.csv",
            results.failures.len()
        );
    }
    write_outputs(
        &common.out_dir,
        &[
            ("results.csv", io::suite_summary_csv(&results)),
            ("raw.csv", io::suite_raw_csv(&results)),
            ("failures.csv", io::suite_failures_csv(&results)),
        ],
    )
}

#[allow(clippy::too_many_arguments)]
fn cmd_predict(
    train: &Path,
    structure: &Path,
    new_rows: &Path,
    target: &str,
    m_draws: usize,
    chain: &ChainArgs,
    common: &Common,
) -> CliResult<()> {
    let spec = read_structure(structure)?;
    let (dataset, structure) = io::load_dataset(open(train)?, &spec)?;
    let j = structure
        .indicator_names()
        .iter()
        .position(|n| n == target)
        .ok_or_else(|| {
            input_error(format!(
                "target `{target}` is not an indicator of the structure"
            ))
        })?;
    if m_draws == 0 {
        return Err(input_error("--m-draws must be at least 1"));
    }
    let (table, rows) = io::load_prediction_rows(open(new_rows)?, &spec, target)?;
    for (i, row) in rows.iter().enumerate() {
        if let Some(k) = (0..row.len()).find(|&k| k != j && row[k].is_none()) {
            return Err(input_error(format!(
                "row {} of {}: predictor `{}` is missing",
                i + 2,
                new_rows.display(),
                structure.indicator_names()[k]
            )));
        }
    }
    let config = chain.config();
    config.validate()?;
    let pool = thread_pool(common.jobs)?;
    let posterior = pool.install(|| {
        run_chain(
            &dataset,
            &structure,
            &PriorSpec::default_for(&structure),
            &config,
        )
    })?;
    let model = TrainedPredictor::from_posterior(&posterior, &dataset)?;
    let cond = model.conditional(j)?;
    let mut predictions = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let mut rng = rng_from_seed(derive_seed(chain.seed, &[0x7072_6564, i as u64]));
        let pred = model.predict_with(&cond, row, m_draws, &mut rng)?;
        for &k in &pred.clamped {
            log::warn!(
                "row {}: `{}` outside the training range; clamped",
                i + 2,
                structure.indicator_names()[k]
            );
        }
        predictions.push(pred.value);
    }

    let target_col = table.column_index(target);
    let mut out = String::new();
    let mut header: Vec<String> = table.header.clone();
    if target_col.is_none() {
        header.push(target.to_string());
    }
    out.push_str(&csv_line(&header));
    for (row, value) in table.rows.iter().zip(&predictions) {
        let mut cells = row.clone();
        match target_col {
            Some(c) => cells[c] = format!("{value}"),
            None => cells.push(format!("{value}")),
        }
        out.push_str(&csv_line(&cells));
    }
    write_outputs(&common.out_dir, &[("predictions.csv", out)])
}

fn csv_line(cells: &[String]) -> String {
    let mut line = cells
        .iter()
        .map(|c| {
            if c.contains([',', '"', '\n']) {
                format!("\"{}\"", c.replace('"', "\"\""))
            } else {
                c.clone()
            }
        })
        .collect::<Vec<_>>()
        .join(",");
    line.push('\n');
    line
}

fn cmd_identify(matrix: &Path, structure: &Path, common: &Common) -> CliResult<()> {
    let spec = read_structure(structure)?;
    let structure = spec.structure()?;
    let s = io::load_matrix(open(matrix)?, &structure)?;
    let params = recover_from_s(&s, &structure)?;
    let mut out = params_json(&params, &structure);
    out["max_residual"] = json!(decomposition_residual(&s, &params));
    out["identification"] = report_json(&validate_structure(
        &structure,
        Some(params.c()),
        DEFAULT_INDEPENDENCE_THRESHOLD,
    ));
    write_outputs(&common.out_dir, &[("params.json", pretty(&out))])
}

#[allow(clippy::too_many_arguments)]
fn cmd_cv(
    data: &Path,
    structure: &Path,
    folds: usize,
    repeats: usize,
    targets: Option<Vec<String>>,
    m_draws: usize,
    chain: &ChainArgs,
    common: &Common,
) -> CliResult<()> {
    let spec = read_structure(structure)?;
    let (dataset, structure) = io::load_dataset(open(data)?, &spec)?;
    let names = structure.indicator_names().to_vec();
    let targets = targets
        .map(|list| {
            list.iter()
                .map(|t| {
                    names.iter().position(|n| n == t).ok_or_else(|| {
                        input_error(format!("target `{t}` is not an indicator of the structure"))
                    })
                })
                .collect::<CliResult<Vec<_>>>()
        })
        .transpose()?;
    let config = CvConfig {
        folds,
        repeats,
        targets,
        seed: chain.seed,
        chain: chain.config(),
        m_draws,
        methods: vec![Estimator::Bgcf, Estimator::Ml],
    };
    let pool = thread_pool(common.jobs)?;
    let results = pool.install(|| cross_validate(&dataset, &structure, &config))?;
    write_outputs(
        &common.out_dir,
        &[
            ("cv_records.csv", io::cv_records_csv(&results, &names)),
            ("cv_summary.csv", io::cv_summary_csv(&results, &names)),
        ],
    )
}

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use glm_po2pls::binary::GridCenter;
use glm_po2pls::em::{FitConfig, InitStrategy};
use glm_po2pls::inference::{all_tests, louis_information};
use glm_po2pls::io::{self as gio, ModelFile};
use glm_po2pls::simbench::{predict_outcome, run_study, SimSetting, StudyConfig};
use glm_po2pls::{DataSet, Error, Family, ModelDims};
use nalgebra::DVector;

const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_USAGE: u8 = 64;
const EXIT_NO_INPUT: u8 = 66;
const EXIT_SOFTWARE: u8 = 70;

#[derive(Parser)]
#[command(name = "glm-po2pls", version, about = "Fit, apply and test joint latent-variable models of two data blocks and an outcome")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "GLM_PO2PLS_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write it as JSON.
    Fit(FitArgs),
    /// Predict the outcome for new samples.
    Predict(PredictArgs),
    /// Chi-square tests of outcome association with the joint components.
    Test(TestArgs),
    /// Run a simulation study described by a JSON config.
    Simulate(SimulateArgs),
    /// Print leading spectra of XᵀY, XᵀX and YᵀY as CSV.
    Scree(ScreeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Gaussian,
    Bernoulli,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Gaussian => Family::Gaussian,
            FamilyArg::Bernoulli => Family::Bernoulli,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CenterArg {
    Conditional,
    Prior,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    #[arg(long)]
    z: PathBuf,
    #[arg(long, value_enum)]
    family: FamilyArg,
    /// Joint components.
    #[arg(long)]
    r: usize,
    /// Components specific to x.
    #[arg(long)]
    rx: usize,
    /// Components specific to y.
    #[arg(long)]
    ry: usize,
    /// Gauss–Hermite nodes per joint dimension (bernoulli only).
    #[arg(long, default_value_t = 16)]
    quad_nodes: usize,
    /// Quadrature grid placement (bernoulli only).
    #[arg(long, value_enum, default_value = "conditional")]
    grid_center: CenterArg,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    /// Relative log-likelihood change that stops the iterations.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Start from random loadings drawn with this seed instead of the SVD start.
    #[arg(long, env = "GLM_PO2PLS_SEED")]
    seed: Option<u64>,
    /// Skip column centring (inputs are already centred).
    #[arg(long)]
    no_center: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TestArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    #[arg(long)]
    z: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// A study config, a list of settings or a single setting.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Replaces the seed of every setting.
    #[arg(long, env = "GLM_PO2PLS_SEED")]
    seed: Option<u64>,
    /// Replaces the replication count of every setting.
    #[arg(long)]
    replications: Option<usize>,
}

#[derive(Args)]
struct ScreeArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    /// Number of leading values.
    #[arg(long, default_value_t = 10)]
    k: usize,
}

enum Failure {
    Core(Error),
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Core(e) if e.is_numerical() => EXIT_SOFTWARE,
            Failure::Core(Error::InvalidArgument(_) | Error::InvalidDims(_)) => EXIT_USAGE,
            Failure::Core(_) => EXIT_NO_INPUT,
        }
    }

    fn kind(&self) -> &'static str {
        match self.code() {
            EXIT_USAGE => "usage",
            EXIT_SOFTWARE => "numerical",
            _ => "input",
        }
    }

    fn message(&self) -> String {
        let text = match self {
            Failure::Usage(m) => m.clone(),
            Failure::Core(e) => e.to_string(),
        };
        text.split_whitespace().collect::<Vec<_>>().join(" ")
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| {
        Failure::Core(Error::File {
            path: path.display().to_string(),
            source: e,
        })
    })
}

fn flush(mut w: BufWriter<File>, path: &Path) -> Result<(), Failure> {
    w.flush().map_err(|e| {
        Failure::Core(Error::File {
            path: path.display().to_string(),
            source: e,
        })
    })
}

fn fit(args: FitArgs) -> Result<u8, Failure> {
    let family = Family::from(args.family);
    let input = gio::ingest(&args.x, &args.y, &args.z, family, !args.no_center)?;
    let data = &input.data;
    let dims = ModelDims::new(data.p(), data.q(), args.r, args.rx, args.ry, data.n())?;
    let config = FitConfig {
        max_iter: args.max_iter,
        rel_tol: args.tol,
        init: match args.seed {
            Some(seed) => InitStrategy::Random { seed },
            None => InitStrategy::Svd,
        },
        quad_nodes: args.quad_nodes,
        grid_center: match args.grid_center {
            CenterArg::Conditional => GridCenter::Conditional,
            CenterArg::Prior => GridCenter::Prior,
        },
        ..FitConfig::default()
    };
    let result = glm_po2pls::fit(data, &dims, &config)?;
    ModelFile::new(&result, dims, input.centering, &config).save(&args.out)?;
    println!(
        "converged={} iterations={} loglik={}",
        result.converged, result.iterations, result.final_loglik
    );
    if result.converged {
        Ok(0)
    } else {
        eprintln!(
            "glm-po2pls: warning[convergence]: no convergence after {} iterations; model written with converged=false",
            result.iterations
        );
        Ok(EXIT_NOT_CONVERGED)
    }
}

fn predict(args: PredictArgs) -> Result<u8, Failure> {
    let model = ModelFile::load(&args.model)?;
    let theta = model.theta()?;
    let data = gio::ingest_with_centering(&args.x, &args.y, None, model.family, &model.centering)?;
    let eta = predict_outcome(&theta, &data.x, &data.y)?;
    let mut w = create(&args.out)?;
    gio::write_predictions(&mut w, &eta, model.family, model.centering.z_mean)?;
    flush(w, &args.out)?;
    Ok(0)
}

fn test(args: TestArgs) -> Result<u8, Failure> {
    let model = ModelFile::load(&args.model)?;
    let theta = model.theta()?;
    let data = gio::ingest_with_centering(&args.x, &args.y, Some(&args.z), model.family, &model.centering)?;
    let mut quad = model.fit.config.quadrature();
    if let Some(m) = model.fit.quad_nodes {
        quad.nodes = m;
    }
    let info = louis_information(&theta, &data, &quad)?;
    let results = all_tests(&theta, &info)?;
    let mut w = create(&args.out)?;
    gio::write_tests(&mut w, &results)?;
    flush(w, &args.out)?;
    if model.family == Family::Bernoulli {
        eprintln!("glm-po2pls: notice[asymptotics]: chi-square reference for bernoulli outcomes is unverified");
    }
    Ok(0)
}

fn read_study(path: &Path) -> Result<StudyConfig, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Failure::Core(Error::File {
            path: path.display().to_string(),
            source: e,
        })
    })?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(Error::from)?;
    let config = match &value {
        serde_json::Value::Array(_) => StudyConfig {
            settings: serde_json::from_value::<Vec<SimSetting>>(value).map_err(Error::from)?,
            ..StudyConfig::default()
        },
        serde_json::Value::Object(map) if map.contains_key("settings") => {
            serde_json::from_value::<StudyConfig>(value).map_err(Error::from)?
        }
        _ => StudyConfig {
            settings: vec![serde_json::from_value::<SimSetting>(value).map_err(Error::from)?],
            ..StudyConfig::default()
        },
    };
    Ok(config)
}

fn simulate(args: SimulateArgs) -> Result<u8, Failure> {
    let mut config = read_study(&args.config)?;
    for s in config.settings.iter_mut() {
        if let Some(seed) = args.seed {
            s.seed = seed;
        }
        if let Some(reps) = args.replications {
            s.replications = reps;
        }
    }
    let report = run_study(&config, Some(&args.out))?;
    let failed = report.failures().count();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let _ = writeln!(out, "setting_id,method,metric,count,q1,median,q3");
    for s in report.summaries() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.setting_id, s.method, s.metric, s.count, s.q1, s.median, s.q3
        );
    }
    if failed > 0 {
        eprintln!("glm-po2pls: notice[study]: {failed} replications failed and were skipped");
    }
    Ok(0)
}

fn scree(args: ScreeArgs) -> Result<u8, Failure> {
    let x = gio::read_matrix(&args.x)?.values;
    let y = gio::read_matrix(&args.y)?.values;
    let n = x.nrows();
    let mut data = DataSet::new(x, y, DVector::zeros(n), Family::Gaussian)?;
    data.center();
    let table = gio::scree(&data, args.k)?;
    if let Some(notice) = &table.notice {
        eprintln!("glm-po2pls: notice[scree]: {notice}");
    }
    table.write_csv(io::stdout().lock())?;
    Ok(0)
}

fn run(cli: Cli) -> Result<u8, Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Fit(a) => fit(a),
        Command::Predict(a) => predict(a),
        Command::Test(a) => test(a),
        Command::Simulate(a) => simulate(a),
        Command::Scree(a) => scree(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("glm-po2pls: error[usage]: {first}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("glm-po2pls: error[{}]: {}", f.kind(), f.message());
            ExitCode::from(f.code())
        }
    }
}

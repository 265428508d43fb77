use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use stlbnn::bnn::{init_params, to_logspace, from_logspace, BnnParams};
use stlbnn::experiments::{
    build_experiment, gen_markov_trajectories, target_r, Condition, ControlMode, ExperimentConfig, Problem, Split,
    Task,
};
use stlbnn::grad::gradcheck;
use stlbnn::robustness::{robustness, robustness_grad};
use stlbnn::signal::{interp_samples, Trace};
use stlbnn::trainer::{eval_satisfaction, loss_gradient, to_logspace_gradient, train_with, TrainReport};
use stlbnn::{stl, Error, ErrorClass, Result};

#[derive(Parser)]
#[command(name = "stlbnn", version, about = "Train biomolecular neural networks against STL specifications")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Robustness of a formula over a trace CSV.
    Monitor {
        /// Formula text, or a file holding it.
        #[arg(long)]
        formula: String,
        #[arg(long)]
        trace: PathBuf,
        /// Also write dρ/d(sample) per channel to this CSV.
        #[arg(long)]
        gradient: Option<PathBuf>,
    },
    /// Integrate one condition and write its trace CSV.
    Simulate {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long)]
        params: Option<PathBuf>,
        /// Initialization seed used when no parameters are given.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "train")]
        split: Split,
        /// Index of the condition within the split.
        #[arg(long, default_value_t = 0)]
        condition: usize,
        #[arg(long, value_enum, default_value_t = Mode::Closed)]
        mode: Mode,
        /// Constant action for `--mode constant`.
        #[arg(long, default_value_t = 1.0)]
        action: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the condition sets of an experiment as CSV.
    GenData {
        #[command(flatten)]
        source: ConfigSource,
        /// Overrides the generation seed of the selected split.
        #[arg(long)]
        seed: Option<u64>,
        /// Only this split; both when omitted.
        #[arg(long)]
        split: Option<Split>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network and write its report, parameters and loss curve.
    Train {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long)]
        seed: Option<u64>,
        /// Replaces the configured specification.
        #[arg(long)]
        formula: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Satisfaction of trained parameters on a split.
    Eval {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        formula: Option<String>,
        #[arg(long, value_enum, default_value_t = Mode::Closed)]
        mode: Mode,
        #[arg(long, default_value_t = 1.0)]
        action: f64,
        /// Directory for per-condition results.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a built-in experiment config as TOML.
    Config {
        #[arg(long)]
        experiment: String,
    },
    /// Compare the loss gradient against central finite differences.
    Gradcheck {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
        /// Relative error threshold for the verdict.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct ConfigSource {
    /// Experiment config file (TOML, or JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in experiment: static, dynamic or control.
    #[arg(long)]
    experiment: Option<String>,
}

impl ConfigSource {
    fn load(&self) -> Result<ExperimentConfig> {
        match (&self.config, &self.experiment) {
            (Some(path), _) => ExperimentConfig::load(path),
            (None, Some(id)) => build_experiment(id),
            (None, None) => unreachable!("clap requires one source"),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Closed,
    Untreated,
    Unaware,
    Constant,
}

impl Mode {
    fn control(self, action: f64) -> ControlMode {
        match self {
            Mode::Closed => ControlMode::Closed,
            Mode::Untreated => ControlMode::Untreated,
            Mode::Unaware => ControlMode::Unaware,
            Mode::Constant => ControlMode::Constant(action),
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    tool_version: &'a str,
    seed: u64,
    wall_clock_s: f64,
    files: Vec<String>,
    config: &'a ExperimentConfig,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Input => 1,
                ErrorClass::Numerical => 2,
                ErrorClass::Io => 3,
            })
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Monitor { formula, trace, gradient } => monitor(&formula, &trace, gradient.as_deref()),
        Command::Simulate {
            source,
            params,
            seed,
            split,
            condition,
            mode,
            action,
            out,
        } => {
            let cfg = source.load()?;
            let params = load_or_init(&cfg, params.as_deref(), seed)?;
            let problem = Problem::new(cfg, split)?;
            let trace = problem.trace(condition, &params.network(), mode.control(action))?;
            let file = create(&out)?;
            trace.write_csv(file)
        }
        Command::GenData { source, seed, split, out } => gen_data(source.load()?, seed, split, &out),
        Command::Train {
            source,
            seed,
            formula,
            out,
        } => train(with_formula(source.load()?, formula)?, seed, &out),
        Command::Eval {
            source,
            params,
            split,
            formula,
            mode,
            action,
            out,
        } => eval(
            with_formula(source.load()?, formula)?,
            &params,
            split,
            mode.control(action),
            out.as_deref(),
        ),
        Command::Config { experiment } => {
            print!("{}", build_experiment(&experiment)?.to_toml());
            Ok(())
        }
        Command::Gradcheck {
            source,
            params,
            seed,
            eps,
            tol,
        } => {
            let cfg = source.load()?;
            let params = load_or_init(&cfg, params.as_deref(), seed)?;
            grad_audit(cfg, &params, eps, tol)
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<fs::File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::File::create(path).map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    create(path)?.write_all(text.as_bytes()).map_err(|e| io_err(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn csv_row<I, T>(w: &mut csv::Writer<fs::File>, path: &Path, row: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[u8]>,
{
    w.write_record(row).map_err(|e| io_err(path, e))
}

fn write_manifest(dir: &Path, command: &str, cfg: &ExperimentConfig, seed: u64, started: Instant, files: &[&str]) -> Result<()> {
    let manifest = Manifest {
        command,
        tool_version: env!("CARGO_PKG_VERSION"),
        seed,
        wall_clock_s: started.elapsed().as_secs_f64(),
        files: files.iter().map(|f| f.to_string()).collect(),
        config: cfg,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

fn with_formula(mut cfg: ExperimentConfig, formula: Option<String>) -> Result<ExperimentConfig> {
    if let Some(f) = formula {
        cfg.formula = read_formula(&f)?;
        cfg.validate()?;
    }
    Ok(cfg)
}

/// A path to an existing file is read; anything else is formula text.
fn read_formula(arg: &str) -> Result<String> {
    let path = Path::new(arg);
    if path.is_file() {
        fs::read_to_string(path).map_err(|e| io_err(path, e))
    } else {
        Ok(arg.to_string())
    }
}

fn load_params(path: &Path) -> Result<BnnParams> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn load_or_init(cfg: &ExperimentConfig, path: Option<&Path>, seed: Option<u64>) -> Result<BnnParams> {
    let params = match path {
        Some(p) => load_params(p)?,
        None => {
            let mut p = init_params(&cfg.network.shape()?, seed.unwrap_or(cfg.seed))?;
            p.globals = cfg.network.globals;
            p
        }
    };
    if params.shape() != &cfg.network.shape()? {
        return Err(Error::Config("parameter shape does not match the configured network".into()));
    }
    Ok(params)
}

fn monitor(formula: &str, trace_path: &Path, gradient: Option<&Path>) -> Result<()> {
    let formula = stl::parse(&read_formula(formula)?)?;
    let file = fs::File::open(trace_path).map_err(|e| io_err(trace_path, e))?;
    let trace = Trace::read_csv(file)?;
    let rho = robustness(&formula, &trace)?.value;
    println!("rho={rho} satisfied={}", rho > 0.0);
    if let Some(path) = gradient {
        let (_, tg) = robustness_grad(&formula, &trace)?;
        let mut w = csv_writer(path)?;
        csv_row(&mut w, path, std::iter::once("t".to_string()).chain(tg.names.iter().cloned()))?;
        for (k, t) in trace.grid().points().iter().enumerate() {
            let row = std::iter::once(t.to_string()).chain(tg.partials.iter().map(|p| p[k].to_string()));
            csv_row(&mut w, path, row)?;
        }
        w.flush().map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

fn gen_data(mut cfg: ExperimentConfig, seed: Option<u64>, split: Option<Split>, out: &Path) -> Result<()> {
    let started = Instant::now();
    if let (Some(s), Task::Dynamic { train_seed, test_seed, .. }) = (seed, &mut cfg.task) {
        match split.unwrap_or(Split::Train) {
            Split::Train => *train_seed = s,
            Split::Test => *test_seed = s,
        }
    }
    cfg.validate()?;
    let splits = match split {
        Some(s) => vec![s],
        None => vec![Split::Train, Split::Test],
    };
    let mut files = Vec::new();
    for split in splits {
        let problem = Problem::new(cfg.clone(), split)?;
        let name = split_name(split);
        match &cfg.task {
            Task::Static { .. } => {
                let file = format!("{name}.csv");
                let path = out.join(&file);
                let mut w = csv_writer(&path)?;
                csv_row(&mut w, &path, ["condition", "x_P", "x_M", "r"])?;
                for (i, c) in problem.conditions.iter().enumerate() {
                    if let Condition::Static { x_p, x_m } = c {
                        let row = [i.to_string(), x_p.to_string(), x_m.to_string(), target_r(*x_m, *x_p).to_string()];
                        csv_row(&mut w, &path, row)?;
                    }
                }
                w.flush().map_err(|e| io_err(&path, e))?;
                files.push(file);
            }
            Task::Control { .. } => {
                let file = format!("{name}.csv");
                let path = out.join(&file);
                let mut w = csv_writer(&path)?;
                csv_row(&mut w, &path, ["condition", "p", "x_B0"])?;
                for (i, c) in problem.conditions.iter().enumerate() {
                    if let Condition::Control { p, x_b0 } = c {
                        csv_row(&mut w, &path, [i.to_string(), p.to_string(), x_b0.to_string()])?;
                    }
                }
                w.flush().map_err(|e| io_err(&path, e))?;
                files.push(file);
            }
            Task::Dynamic { markov, train_seed, test_seed, .. } => {
                let seed = if split == Split::Train { *train_seed } else { *test_seed };
                let pairs = gen_markov_trajectories(markov, seed)?;
                let index_file = format!("{name}_index.csv");
                let index_path = out.join(&index_file);
                let mut index = csv_writer(&index_path)?;
                csv_row(&mut index, &index_path, ["condition", "file", "seed"])?;
                let times = problem.input_times();
                for (i, pair) in pairs.iter().enumerate() {
                    let file = format!("{name}/trajectory_{i:03}.csv");
                    let path = out.join(&file);
                    let mut w = csv_writer(&path)?;
                    csv_row(&mut w, &path, ["t", "x_P", "x_M", "r"])?;
                    for &t in problem.grid.points() {
                        let x_p = interp_samples(times, &pair.x_p.values, t);
                        let x_m = interp_samples(times, &pair.x_m.values, t);
                        let row = [t, x_p, x_m, target_r(x_m, x_p)].map(|v| v.to_string());
                        csv_row(&mut w, &path, row)?;
                    }
                    w.flush().map_err(|e| io_err(&path, e))?;
                    csv_row(&mut index, &index_path, [i.to_string(), file, seed.to_string()])?;
                }
                index.flush().map_err(|e| io_err(&index_path, e))?;
                files.push(index_file);
            }
        }
    }
    let refs: Vec<&str> = files.iter().map(String::as_str).collect();
    write_manifest(out, "gen-data", &cfg, seed.unwrap_or(cfg.seed), started, &refs)
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Test => "test",
    }
}

fn train(cfg: ExperimentConfig, seed: Option<u64>, out: &Path) -> Result<()> {
    let started = Instant::now();
    let seed = seed.unwrap_or(cfg.seed);
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let report: TrainReport = train_with(&cfg, seed, |r| {
        eprintln!(
            "iter {:>5}  loss {:.6}  satisfaction {:.3}  violated {}",
            r.iteration, r.loss, r.satisfaction, r.violated
        );
    })?;
    write_json(&out.join("report.json"), &report)?;
    write_json(&out.join("params.json"), &report.params)?;
    let path = out.join("loss.csv");
    let mut w = csv_writer(&path)?;
    csv_row(&mut w, &path, ["iteration", "loss", "satisfaction"])?;
    for r in &report.history {
        csv_row(&mut w, &path, [r.iteration.to_string(), r.loss.to_string(), r.satisfaction.to_string()])?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    write_manifest(out, "train", &cfg, seed, started, &["report.json", "params.json", "loss.csv"])
}

fn eval(cfg: ExperimentConfig, params_path: &Path, split: Split, mode: ControlMode, out: Option<&Path>) -> Result<()> {
    let started = Instant::now();
    let params = load_or_init(&cfg, Some(params_path), None)?;
    let problem = Problem::new(cfg.clone(), split)?;
    let ev = eval_satisfaction(&params, &problem, mode)?;
    println!("satisfaction={}", ev.satisfaction);
    if let Some(dir) = out {
        let path = dir.join("conditions.csv");
        let mut w = csv_writer(&path)?;
        let header: &[&str] = match &cfg.task {
            Task::Static { .. } => &["condition", "x_P", "x_M", "rho", "satisfied"],
            Task::Control { .. } => &["condition", "p", "x_B0", "rho", "satisfied"],
            Task::Dynamic { .. } => &["condition", "rho", "satisfied"],
        };
        csv_row(&mut w, &path, header)?;
        for (i, (c, rho)) in problem.conditions.iter().zip(&ev.rhos).enumerate() {
            let mut row = vec![i.to_string()];
            match c {
                Condition::Static { x_p: a, x_m: b } | Condition::Control { p: a, x_b0: b } => {
                    row.push(a.to_string());
                    row.push(b.to_string());
                }
                Condition::Dynamic { .. } => {}
            }
            row.push(rho.to_string());
            row.push((*rho > 0.0).to_string());
            csv_row(&mut w, &path, row)?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
        write_json(
            &dir.join("evaluation.json"),
            &json!({ "split": split_name(split), "satisfaction": ev.satisfaction, "loss": ev.loss(), "mean_rho": ev.mean_rho() }),
        )?;
        write_manifest(dir, "eval", &cfg, cfg.seed, started, &["conditions.csv", "evaluation.json"])?;
    }
    Ok(())
}

fn grad_audit(cfg: ExperimentConfig, params: &BnnParams, eps: f64, tol: f64) -> Result<()> {
    let problem = Problem::new(cfg, Split::Train)?;
    let train_globals = problem.config.network.train_globals;
    let theta = params.trainable(train_globals);
    let lg = loss_gradient(&problem, params, train_globals)?;
    let analytic = to_logspace_gradient(&lg.grad, &theta);
    let point = to_logspace(&theta)?;
    let loss_at = |x: &[f64]| -> Result<f64> {
        let mut p = params.clone();
        p.set_trainable(&from_logspace(x)?, train_globals)?;
        Ok(eval_satisfaction(&p, &problem, ControlMode::Closed)?.loss())
    };
    let report = gradcheck(loss_at, &point, &analytic, eps, 1e-3)?;
    println!("index,analytic,numeric,rel_error,smooth");
    for c in &report.coords {
        println!("{},{},{},{},{}", c.index, c.analytic, c.numeric, c.rel_error, c.smooth);
    }
    println!(
        "loss={} max_rel_error={} non_smooth={} passed={}",
        lg.eval.loss(),
        report.max_rel_error,
        report.non_smooth,
        report.passes(tol)
    );
    Ok(())
}

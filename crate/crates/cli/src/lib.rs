//! Configuration, execution and report emission for the `rmlab` binary.
//!
//! Values are resolved in three layers: command-line flags, then the
//! `key = value` config file given by `--config`, then the preset (default
//! `paper`). The config file accepts the long flag names as keys:
//!
//! ```text
//! # comments and blank lines are ignored
//! preset = table3
//! seed = 7
//! alpha = 0.05
//! reps = 2000
//! m = 9, 12
//! n = 15, 30
//! sphericity = both
//! methods = MLM_UN_RES, MLM_UN_KR
//! workers = auto
//! out = results.csv
//! dump-sample = sample.csv
//! ```

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, ValueEnum};
use rmlab::datagen::{draw_sample, make_spec, Sphericity};
use rmlab::harness::{run_grid, Condition, GridReport, MethodSpec, DEFAULT_ALPHA, GRID_M, GRID_N, DEFAULT_REPLICATIONS, TABLE3_N};
use rmlab::numerics::derive_stream;

pub const DEFAULT_SEED: u64 = 20180101;
pub const DEFAULT_OUT: &str = "rmlab_results.csv";

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    /// Invalid flags, file contents or values.
    Config(String),
    /// `--help` / `--version` output; not an error for the caller.
    Info(String),
    /// I/O or simulation failure after validation.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Info(_) => EXIT_OK,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Info(m) => f.write_str(m),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Paper,
    Table3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SphericityChoice {
    Holds,
    Violated,
    Both,
}

impl SphericityChoice {
    fn expand(self) -> Vec<Sphericity> {
        match self {
            SphericityChoice::Holds => vec![Sphericity::Holds],
            SphericityChoice::Violated => vec![Sphericity::Violated],
            SphericityChoice::Both => vec![Sphericity::Holds, Sphericity::Violated],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Workers {
    Auto,
    Fixed(usize),
}

impl Workers {
    pub fn resolve(self) -> usize {
        match self {
            Workers::Auto => std::thread::available_parallelism().map_or(1, usize::from),
            Workers::Fixed(k) => k,
        }
    }
}

impl FromStr for Workers {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Workers::Auto);
        }
        match s.parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("expected a positive integer or 'auto', got '{s}'")),
            Ok(k) => Ok(Workers::Fixed(k)),
        }
    }
}

impl fmt::Display for Workers {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Workers::Auto => f.write_str("auto"),
            Workers::Fixed(k) => write!(f, "{k}"),
        }
    }
}

/// One (m, n, sphericity) cell of the simulation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridCell {
    pub m: usize,
    pub n: usize,
    pub sphericity: Sphericity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub master_seed: u64,
    pub alpha: f64,
    pub replications: usize,
    pub grid: Vec<GridCell>,
    pub methods: Vec<MethodSpec>,
    pub workers: Workers,
    pub out: PathBuf,
    /// When set, write the rep-0 sample of the first grid cell here and stop.
    pub dump_sample: Option<PathBuf>,
}

impl RunConfig {
    pub fn conditions(&self) -> Vec<Condition> {
        self.grid
            .iter()
            .map(|c| Condition {
                m: c.m,
                n: c.n,
                sphericity: c.sphericity,
                replications: self.replications,
                alpha: self.alpha,
            })
            .collect()
    }

    /// Sibling of the CSV that receives the text summary.
    pub fn summary_path(&self) -> PathBuf {
        self.out.with_extension("summary.txt")
    }

    pub fn describe(&self) -> String {
        let list = |v: Vec<String>| v.join(",");
        format!(
            "preset = {}\nseed = {}\nalpha = {}\nreps = {}\nmethods = {}\nworkers = {}\nout = {}\ngrid = {}\n",
            self.preset.to_possible_value().expect("no skipped variants").get_name(),
            self.master_seed,
            self.alpha,
            self.replications,
            list(self.methods.iter().map(|m| m.tag().to_string()).collect()),
            self.workers,
            self.out.display(),
            list(
                self.grid
                    .iter()
                    .map(|c| format!("(m={} n={} {})", c.m, c.n, c.sphericity))
                    .collect()
            ),
        )
    }
}

#[derive(Debug, Default, Parser)]
#[command(name = "rmlab", version, about = "Type I error simulations for repeated-measures ANOVA and mixed models")]
struct Flags {
    /// Base grid and method set.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Master seed for every random stream.
    #[arg(long)]
    seed: Option<u64>,
    /// Significance level.
    #[arg(long)]
    alpha: Option<f64>,
    /// Replications per condition.
    #[arg(long)]
    reps: Option<usize>,
    /// Measurement occasions (repeatable, or comma separated).
    #[arg(long, value_delimiter = ',')]
    m: Vec<usize>,
    /// Sample sizes (repeatable, or comma separated).
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    #[arg(long, value_enum)]
    sphericity: Option<SphericityChoice>,
    /// Method tags, e.g. RANOVA,MLM_UN_KR.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    /// Worker threads, or "auto".
    #[arg(long)]
    workers: Option<Workers>,
    /// Result CSV path; the summary goes next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write one generated sample as a comma-delimited table and exit.
    #[arg(long)]
    dump_sample: Option<PathBuf>,
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn bad(key: &str, value: &str, why: impl fmt::Display) -> CliError {
    CliError::Config(format!("{key}: invalid value '{value}': {why}"))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError>
where
    T::Err: fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| bad(key, s, e)))
        .collect()
}

fn parse_enum<T: ValueEnum>(key: &str, value: &str) -> Result<T, CliError> {
    T::from_str(value.trim(), true).map_err(|e| bad(key, value, e))
}

/// Fills every field of `flags` that is still unset from the config file.
fn merge_file(flags: &mut Flags, path: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config file {}: {e}", path.display())))?;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Config(format!("{}:{}: expected 'key = value'", path.display(), lineno + 1))
        })?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        let one = |s: &str| s.parse::<u64>().map_err(|e| bad(&key, s, e));
        match key.as_str() {
            "preset" => flags.preset = flags.preset.or(Some(parse_enum(&key, value)?)),
            "seed" => flags.seed = flags.seed.or(Some(one(value)?)),
            "alpha" => {
                let a = value.parse::<f64>().map_err(|e| bad(&key, value, e))?;
                flags.alpha = flags.alpha.or(Some(a));
            }
            "reps" => {
                let r = value.parse::<usize>().map_err(|e| bad(&key, value, e))?;
                flags.reps = flags.reps.or(Some(r));
            }
            "m" if flags.m.is_empty() => flags.m = parse_list(&key, value)?,
            "n" if flags.n.is_empty() => flags.n = parse_list(&key, value)?,
            "m" | "n" => {}
            "sphericity" => flags.sphericity = flags.sphericity.or(Some(parse_enum(&key, value)?)),
            "methods" if flags.methods.is_empty() => flags.methods = parse_list(&key, value)?,
            "methods" => {}
            "workers" => {
                let w = value.parse::<Workers>().map_err(|e| bad(&key, value, e))?;
                flags.workers = flags.workers.or(Some(w));
            }
            "out" => flags.out = flags.out.take().or_else(|| Some(PathBuf::from(value))),
            "dump-sample" => flags.dump_sample = flags.dump_sample.take().or_else(|| Some(PathBuf::from(value))),
            _ => {
                return Err(CliError::Config(format!(
                    "{}:{}: unknown key '{key}'",
                    path.display(),
                    lineno + 1
                )))
            }
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) into a validated config.
pub fn parse_config<I, T>(args: I) -> Result<RunConfig, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut flags = Flags::try_parse_from(args).map_err(|e| {
        let text = e.render().to_string();
        if e.use_stderr() {
            CliError::Config(text.trim_end().to_string())
        } else {
            CliError::Info(text)
        }
    })?;
    if let Some(path) = flags.config.clone() {
        merge_file(&mut flags, &path)?;
    }

    let preset = flags.preset.unwrap_or(Preset::Paper);
    let (preset_m, preset_n, preset_sph, preset_methods): (Vec<usize>, Vec<usize>, _, Vec<MethodSpec>) = match preset {
        Preset::Paper => (GRID_M.to_vec(), GRID_N.to_vec(), SphericityChoice::Both, MethodSpec::ALL.to_vec()),
        Preset::Table3 => (vec![12], TABLE3_N.to_vec(), SphericityChoice::Holds, MethodSpec::UNSTRUCTURED.to_vec()),
    };

    let alpha = flags.alpha.unwrap_or(DEFAULT_ALPHA);
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(bad("alpha", &alpha.to_string(), "must lie strictly between 0 and 1"));
    }
    let replications = flags.reps.unwrap_or(DEFAULT_REPLICATIONS);
    if replications == 0 {
        return Err(bad("reps", "0", "must be at least 1"));
    }
    let ms = if flags.m.is_empty() { preset_m } else { flags.m };
    let ns = if flags.n.is_empty() { preset_n } else { flags.n };
    if let Some(&m) = ms.iter().find(|&&m| m < 3) {
        return Err(bad("m", &m.to_string(), "at least 3 occasions are required"));
    }
    if let Some(&n) = ns.iter().find(|&&n| n < 2) {
        return Err(bad("n", &n.to_string(), "at least 2 subjects are required"));
    }
    let methods: Vec<MethodSpec> = if flags.methods.is_empty() {
        preset_methods
    } else {
        flags
            .methods
            .iter()
            .map(|s| s.parse::<MethodSpec>().map_err(|e| bad("methods", s, e)))
            .collect::<Result<_, _>>()?
    };
    for (i, m) in methods.iter().enumerate() {
        if methods[..i].contains(m) {
            return Err(bad("methods", m.tag(), "listed twice"));
        }
    }

    let mut grid = Vec::new();
    for sphericity in flags.sphericity.unwrap_or(preset_sph).expand() {
        for &m in &ms {
            for &n in &ns {
                grid.push(GridCell { m, n, sphericity });
            }
        }
    }

    Ok(RunConfig {
        preset,
        master_seed: flags.seed.unwrap_or(DEFAULT_SEED),
        alpha,
        replications,
        grid,
        methods,
        workers: flags.workers.unwrap_or(Workers::Auto),
        out: flags.out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
        dump_sample: flags.dump_sample,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// Writes the rep-0 sample of the first grid cell.
pub fn dump_sample(config: &RunConfig, path: &Path) -> Result<(), CliError> {
    let cond = config.conditions()[0];
    let spec = make_spec(cond.m, cond.sphericity).map_err(|e| CliError::Config(e.to_string()))?;
    let mut rng = derive_stream(config.master_seed, cond.id(), 0);
    let sample = draw_sample(&spec, cond.n, &mut rng).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut buf = Vec::new();
    sample.write_delimited(&mut buf).expect("writing to memory cannot fail");
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// Runs the grid, writes the CSV and summary, and returns the report.
pub fn execute(config: &RunConfig) -> Result<GridReport, CliError> {
    let report = run_grid(&config.conditions(), &config.methods, config.master_seed, config.workers.resolve())
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    write_file(&config.out, &report.to_csv())?;
    write_file(&config.summary_path(), &render_summary(config, &report))?;
    Ok(report)
}

pub fn render_summary(config: &RunConfig, report: &GridReport) -> String {
    format!("# effective configuration\n{}\n{}", config.describe(), report.summary())
}

/// Full program: parse, run, report. Returns the process exit status.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let outcome = parse_config(args).and_then(|config| {
        if let Some(path) = &config.dump_sample {
            dump_sample(&config, path)?;
            println!("wrote sample to {}", path.display());
            return Ok(());
        }
        let report = execute(&config)?;
        print!("{}", render_summary(&config, &report));
        println!("\nwrote {} and {}", config.out.display(), config.summary_path().display());
        Ok(())
    });
    match outcome {
        Ok(()) => EXIT_OK,
        Err(CliError::Info(text)) => {
            print!("{text}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

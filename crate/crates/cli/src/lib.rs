//! Data ingestion, run orchestration and output writing for the `gsbps`
//! command-line tool.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use gsbps::diagnostics::{self, geweke_pass_rate, linspace, ParamSummary, DEFAULT_CURVE_POINTS};
use gsbps::{BinomialData, Chain, CountSeriesData, FittedCurve, GsbpsConfig, HistogramData, Link, ModelSpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Model(#[from] gsbps::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Model(e) if e.is_numeric() => 4,
            CliError::Model(gsbps::Error::InvalidData(_) | gsbps::Error::DimensionMismatch { .. }) => 3,
            CliError::Model(gsbps::Error::InvalidDomain { .. } | gsbps::Error::OutOfSupport { .. }) => 3,
            CliError::Model(_) => 2,
            CliError::Io { .. } => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "usage",
            3 => "data",
            4 => "numeric",
            _ => "io",
        }
    }

    /// One-line JSON rendering for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string() }).to_string()
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Ingestion

struct Table {
    headers: Vec<String>,
    /// `(line, cells)` per data row.
    rows: Vec<(u64, Vec<String>)>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((line, rec.iter().map(str::to_string).collect()));
        }
        if rows.is_empty() {
            return Err(CliError::Data(format!("{}: no data rows", path.display())));
        }
        Ok(Self { headers, rows })
    }

    fn expect_columns(&self, path: &Path, allowed: &[&str]) -> Result<()> {
        if let Some(h) = self.headers.iter().find(|h| !allowed.contains(&h.as_str())) {
            return Err(CliError::Data(format!(
                "{}: unexpected column `{h}` (expected {})",
                path.display(),
                allowed.join(", ")
            )));
        }
        Ok(())
    }

    fn index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn require(&self, path: &Path, name: &str) -> Result<usize> {
        self.index(name)
            .ok_or_else(|| CliError::Data(format!("{}: missing column `{name}`", path.display())))
    }

    fn column<T>(&self, col: usize, parse: impl Fn(&str) -> Option<T>, what: &str) -> Result<Vec<T>> {
        self.rows
            .iter()
            .map(|(line, cells)| {
                parse(&cells[col]).ok_or_else(|| {
                    CliError::Data(format!(
                        "line {line}: column `{}`: expected {what}, got `{}`",
                        self.headers[col], cells[col]
                    ))
                })
            })
            .collect()
    }
}

fn parse_real(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_count(s: &str) -> Option<u64> {
    s.parse::<u64>().ok()
}

/// Histogram settings for raw-sample input.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    pub binwidth: Option<f64>,
    pub bins: Option<usize>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

/// Reads either raw samples (column `x`) or a pre-binned histogram
/// (columns `midpoint,count`).
pub fn ingest_density(path: &Path, binning: &Binning) -> Result<HistogramData> {
    let table = Table::read(path)?;
    if table.index("x").is_some() {
        table.expect_columns(path, &["x"])?;
        let xs = table.column(0, parse_real, "a finite number")?;
        let lo = binning
            .lower
            .unwrap_or_else(|| xs.iter().cloned().fold(f64::INFINITY, f64::min));
        let hi = binning
            .upper
            .unwrap_or_else(|| xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        let hist = match (binning.binwidth, binning.bins) {
            (Some(w), None) => HistogramData::from_samples(&xs, w, lo, hi),
            (None, Some(n)) => HistogramData::from_samples_with_bins(&xs, n, lo, hi),
            _ => {
                return Err(CliError::Usage(
                    "raw samples need exactly one of --binwidth and --bins".into(),
                ))
            }
        };
        return hist.map_err(|e| CliError::Data(format!("{}: {e}", path.display())));
    }
    table.expect_columns(path, &["midpoint", "count"])?;
    if binning != &Binning::default() {
        return Err(CliError::Usage(
            "pre-binned input does not take --binwidth, --bins, --lower or --upper".into(),
        ));
    }
    let mids = table.column(table.require(path, "midpoint")?, parse_real, "a finite number")?;
    let counts = table.column(table.require(path, "count")?, parse_count, "a nonnegative integer")?;
    let width = if mids.len() > 1 { mids[1] - mids[0] } else { 1.0 };
    HistogramData::new(mids, counts, width).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Reads `x,y,m` triplets.
pub fn ingest_binom(path: &Path) -> Result<BinomialData> {
    let table = Table::read(path)?;
    table.expect_columns(path, &["x", "y", "m"])?;
    let x = table.column(table.require(path, "x")?, parse_real, "a finite number")?;
    let y = table.column(table.require(path, "y")?, parse_count, "a nonnegative integer")?;
    let m = table.column(table.require(path, "m")?, parse_count, "a nonnegative integer")?;
    for (i, (line, _)) in table.rows.iter().enumerate() {
        if y[i] > m[i] {
            return Err(CliError::Data(format!(
                "line {line}: successes y = {} exceed trials m = {}",
                y[i], m[i]
            )));
        }
        if m[i] == 0 {
            return Err(CliError::Data(format!("line {line}: trials m must be positive")));
        }
    }
    BinomialData::new(x, y, m).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Reads a count series `y` with optional covariate `x` (default `1..n`).
pub fn ingest_counts(path: &Path) -> Result<CountSeriesData> {
    let table = Table::read(path)?;
    table.expect_columns(path, &["x", "y"])?;
    let y = table.column(table.require(path, "y")?, parse_count, "a nonnegative integer")?;
    let data = match table.index("x") {
        Some(c) => CountSeriesData::new(table.column(c, parse_real, "a finite number")?, y),
        None => CountSeriesData::from_counts(y),
    };
    data.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Runs

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Density,
    Binom,
    Negbin,
}

impl Command {
    fn link(self) -> Link {
        match self {
            Command::Binom => Link::Logit,
            _ => Link::Log,
        }
    }

    /// Default sampler settings for the command.
    pub fn default_config(self) -> GsbpsConfig {
        match self {
            Command::Negbin => GsbpsConfig::negbin_default(),
            _ => GsbpsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRequest {
    pub command: Command,
    pub input: PathBuf,
    pub binning: Binning,
    pub config: GsbpsConfig,
    pub chains: usize,
    pub dump_chain: bool,
    pub curve_points: usize,
    pub out: PathBuf,
}

impl RunRequest {
    pub fn new(command: Command, input: PathBuf, out: PathBuf) -> Self {
        Self {
            command,
            input,
            binning: Binning::default(),
            config: command.default_config(),
            chains: 1,
            dump_chain: false,
            curve_points: DEFAULT_CURVE_POINTS,
            out,
        }
    }

    fn validate(&self) -> Result<()> {
        self.config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        let retained = self.config.iterations - self.config.burnin;
        if retained < diagnostics::MIN_RETAINED_DRAWS {
            return Err(CliError::Usage(format!(
                "only {retained} draws remain after burn-in; at least {} are needed",
                diagnostics::MIN_RETAINED_DRAWS
            )));
        }
        if self.chains == 0 {
            return Err(CliError::Usage("--chains must be at least 1".into()));
        }
        if self.curve_points < 2 {
            return Err(CliError::Usage("--curve-points must be at least 2".into()));
        }
        if self.command != Command::Density && self.binning != Binning::default() {
            return Err(CliError::Usage(
                "binning flags apply only to the density command".into(),
            ));
        }
        Ok(())
    }

    pub fn load_model(&self) -> Result<ModelSpec> {
        Ok(match self.command {
            Command::Density => ModelSpec::Poisson(ingest_density(&self.input, &self.binning)?),
            Command::Binom => ModelSpec::Binomial(ingest_binom(&self.input)?),
            Command::Negbin => ModelSpec::NegBin(ingest_counts(&self.input)?),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Versions {
    pub gsbps: String,
    pub gsbps_cli: String,
}

/// Everything needed to repeat a run, written next to its outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Command,
    pub input_path: PathBuf,
    pub binning: Binning,
    pub config: GsbpsConfig,
    pub chains: usize,
    pub dump_chain: bool,
    pub curve_points: usize,
    pub output_dir: PathBuf,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub versions: Versions,
}

impl RunManifest {
    pub fn request(&self) -> RunRequest {
        RunRequest {
            command: self.command,
            input: self.input_path.clone(),
            binning: self.binning.clone(),
            config: self.config.clone(),
            chains: self.chains,
            dump_chain: self.dump_chain,
            curve_points: self.curve_points,
            out: self.output_dir.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub command: Command,
    pub seed: u64,
    pub chains: usize,
    pub retained_draws: usize,
    pub runtime_seconds: f64,
    /// Summaries of the smoothing and overdispersion parameters.
    pub parameters: Vec<ParamSummary>,
    /// Geweke z-score per parameter and chain; `None` when the chain is too
    /// short for the batch-means variance.
    pub geweke: Vec<Option<Vec<(String, f64)>>>,
    pub geweke_pass_rate: Option<f64>,
    pub ars_evals_per_draw: f64,
    pub config: GsbpsConfig,
}

/// Outputs of a completed run, kept in memory for callers and tests.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub chains: Vec<Chain>,
    pub curve: FittedCurve,
    pub summary: RunSummary,
    pub manifest: RunManifest,
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

fn curve_for(command: Command, chain: &Chain, model: &ModelSpec, points: usize) -> Result<FittedCurve> {
    let kv = chain
        .knots
        .as_ref()
        .ok_or_else(|| CliError::Usage("chain has no knot vector".into()))?;
    let grid = linspace(kv.lower(), kv.upper(), points);
    let curve = diagnostics::fitted_curve_on(chain, kv, command.link(), &grid)?;
    Ok(match command {
        Command::Density => diagnostics::density_estimate(&curve, model.support())?,
        _ => curve,
    })
}

fn summarize_run(command: Command, chains: &[Chain], pooled: &Chain, runtime: f64) -> Result<RunSummary> {
    let k = pooled.dim();
    let parameters = diagnostics::posterior_summary(pooled)?.split_off(k);
    let geweke: Vec<Option<Vec<(String, f64)>>> = chains
        .iter()
        .map(|c| {
            diagnostics::geweke(c, 0.1, 0.5)
                .ok()
                .map(|z| c.columns.iter().cloned().zip(z).collect())
        })
        .collect();
    let all: Vec<f64> = geweke.iter().flatten().flat_map(|v| v.iter().map(|p| p.1)).collect();
    let evals: usize = chains.iter().map(|c| c.ars_eval_counts.iter().sum::<usize>()).sum();
    let draws: usize = chains.iter().map(|c| c.len() * c.dim()).sum();
    Ok(RunSummary {
        command,
        seed: chains[0].config.seed,
        chains: chains.len(),
        retained_draws: pooled.len(),
        runtime_seconds: runtime,
        parameters,
        geweke,
        geweke_pass_rate: (!all.is_empty()).then(|| geweke_pass_rate(&all)),
        ars_evals_per_draw: evals as f64 / draws as f64,
        config: chains[0].config.clone(),
    })
}

/// Runs the sampler and writes every output file under `req.out`.
pub fn execute(req: &RunRequest) -> Result<RunReport> {
    req.validate()?;
    let started = unix_now();
    let model = req.load_model()?;
    let chains = if req.chains == 1 {
        vec![gsbps::run_gsbps(&model, &req.config)?]
    } else {
        gsbps::run_chains(&model, &req.config, req.chains)?
    };
    let pooled = Chain::pool(&chains)?;
    let curve = curve_for(req.command, &pooled, &model, req.curve_points)?;
    let runtime = chains.iter().map(|c| c.wall_time.as_secs_f64()).fold(0.0, f64::max);
    let summary = summarize_run(req.command, &chains, &pooled, runtime)?;

    fs::create_dir_all(&req.out).map_err(io_err(&req.out))?;
    if chains.len() > 1 {
        for (i, c) in chains.iter().enumerate() {
            let dir = req.out.join(format!("chain_{}", i + 1));
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let single = Chain::pool(std::slice::from_ref(c))?;
            let curve = curve_for(req.command, &single, &model, req.curve_points)?;
            write_fit(&dir.join("fit.csv"), &curve)?;
            let s = summarize_run(req.command, std::slice::from_ref(c), &single, c.wall_time.as_secs_f64())?;
            write_json(&dir.join("summary.json"), &s)?;
            if req.dump_chain {
                write_chain(&dir.join("chain.csv"), c)?;
            }
        }
    } else if req.dump_chain {
        write_chain(&req.out.join("chain.csv"), &chains[0])?;
    }
    write_fit(&req.out.join("fit.csv"), &curve)?;
    write_json(&req.out.join("summary.json"), &summary)?;
    let manifest = RunManifest {
        command: req.command,
        input_path: req.input.clone(),
        binning: req.binning.clone(),
        config: req.config.clone(),
        chains: req.chains,
        dump_chain: req.dump_chain,
        curve_points: req.curve_points,
        output_dir: req.out.clone(),
        started_unix: started,
        finished_unix: unix_now(),
        versions: Versions {
            gsbps: gsbps::VERSION.into(),
            gsbps_cli: env!("CARGO_PKG_VERSION").into(),
        },
    };
    write_json(&req.out.join("manifest.json"), &manifest)?;
    Ok(RunReport {
        chains,
        curve,
        summary,
        manifest,
    })
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    Ok(std::io::BufWriter::new(fs::File::create(path).map_err(io_err(path))?))
}

pub fn write_fit(path: &Path, curve: &FittedCurve) -> Result<()> {
    let mut w = create(path)?;
    let mut body = String::from("x,estimate,lo95,hi95\n");
    for i in 0..curve.grid.len() {
        body.push_str(&format!(
            "{},{},{},{}\n",
            curve.grid[i], curve.estimate[i], curve.lo95[i], curve.hi95[i]
        ));
    }
    w.write_all(body.as_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// Full chain dump: one row per iteration with the log posterior appended.
pub fn write_chain(path: &Path, chain: &Chain) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "iteration,{},logpost", chain.columns.join(",")).map_err(io_err(path))?;
    for (i, row) in chain.draws.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{},{},{}", i + 1, cells.join(","), chain.logpost_trace[i]).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("summary types serialize");
    fs::write(path, text + "\n").map_err(io_err(path))
}

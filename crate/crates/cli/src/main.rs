use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gsbps_cli::{execute, Binning, CliError, Command, RunManifest, RunRequest};

#[derive(Parser)]
#[command(name = "gsbps", version, about = "Gibbs sampling for Bayesian P-spline smoothing")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Density estimation by Poisson smoothing of a histogram.
    Density {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        binning: BinningArgs,
    },
    /// Smooth binomial proportions from `x,y,m` triplets.
    Binom {
        #[command(flatten)]
        common: Common,
    },
    /// Smooth a count series under a negative binomial likelihood.
    Negbin {
        #[command(flatten)]
        common: Common,
    },
    /// Repeat a run from its manifest.json.
    Replay {
        manifest: PathBuf,
        /// Write to this directory instead of the recorded one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct BinningArgs {
    /// Bin width for raw samples.
    #[arg(long)]
    binwidth: Option<f64>,
    /// Number of bins for raw samples.
    #[arg(long)]
    bins: Option<usize>,
    /// Left end of the binning range (default: smallest sample).
    #[arg(long, allow_negative_numbers = true)]
    lower: Option<f64>,
    /// Right end of the binning range (default: largest sample).
    #[arg(long, allow_negative_numbers = true)]
    upper: Option<f64>,
}

#[derive(Args)]
struct Common {
    /// Input CSV file.
    input: PathBuf,
    /// Number of cubic B-spline basis functions.
    #[arg(long = "K")]
    k: Option<usize>,
    /// Penalty order (2 or 3).
    #[arg(long)]
    r: Option<usize>,
    /// Chain length, burn-in included.
    #[arg(long = "M")]
    m: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    adelta: Option<f64>,
    #[arg(long)]
    bdelta: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    arho: Option<f64>,
    #[arg(long)]
    brho: Option<f64>,
    #[arg(long)]
    lambda0: Option<f64>,
    /// Griddy-Gibbs grid size.
    #[arg(long = "grid-size")]
    grid_size: Option<usize>,
    /// Grid growth threshold on the log scale.
    #[arg(long, allow_negative_numbers = true)]
    cf: Option<f64>,
    /// Initial hull half-width in conditional standard deviations.
    #[arg(long = "ars-c")]
    ars_c: Option<f64>,
    /// Number of initial hull abscissae.
    #[arg(long = "ars-L")]
    ars_l: Option<usize>,
    /// Ridge added to the difference penalty.
    #[arg(long)]
    eps: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "gsbps-out")]
    out: PathBuf,
    /// Independent chains run in parallel with consecutive seeds.
    #[arg(long, default_value_t = 1)]
    chains: usize,
    /// Also write every draw to chain.csv.
    #[arg(long = "dump-chain")]
    dump_chain: bool,
    /// Points in the fitted-curve grid.
    #[arg(long = "curve-points", default_value_t = 200)]
    curve_points: usize,
}

impl Common {
    fn into_request(self, command: Command, binning: Binning) -> RunRequest {
        let mut req = RunRequest::new(command, self.input, self.out);
        let c = &mut req.config;
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => { $(if let Some(v) = self.$flag { c.$field = v; })* };
        }
        set!(k => dim, r => order, m => iterations, burnin => burnin, seed => seed, adelta => a_delta,
             bdelta => b_delta, nu => nu, arho => a_rho, brho => b_rho, lambda0 => lambda0,
             grid_size => grid_points, cf => c_f, ars_c => ars_c, ars_l => ars_points, eps => eps);
        req.binning = binning;
        req.chains = self.chains;
        req.dump_chain = self.dump_chain;
        req.curve_points = self.curve_points;
        req
    }
}

fn request(cmd: Cmd) -> Result<RunRequest, CliError> {
    Ok(match cmd {
        Cmd::Density { common, binning } => common.into_request(
            Command::Density,
            Binning {
                binwidth: binning.binwidth,
                bins: binning.bins,
                lower: binning.lower,
                upper: binning.upper,
            },
        ),
        Cmd::Binom { common } => common.into_request(Command::Binom, Binning::default()),
        Cmd::Negbin { common } => common.into_request(Command::Negbin, Binning::default()),
        Cmd::Replay { manifest, out } => {
            let mut req = RunManifest::load(&manifest)?.request();
            if let Some(out) = out {
                req.out = out;
            }
            req
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Usage(e.render().to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(2);
        }
    };
    match request(cli.command).and_then(|req| execute(&req)) {
        Ok(report) => {
            println!("{}", report.manifest.output_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

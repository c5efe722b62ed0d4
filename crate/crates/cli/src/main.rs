//! `wnkdv`: one experiment per invocation, with a manifest and results under a run directory.

mod config;
mod experiments;

use clap::{Args, CommandFactory, Parser, Subcommand};
use config::{CliError, Resolver};
use serde::Serialize;
use serde_json::json;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

pub const OUTPUT_ROOT_ENV: &str = "WNKDV_OUTPUT_ROOT";

#[derive(Parser, Debug)]
#[command(name = "wnkdv", version, about = "Experiments on KdV-type flows, Schrödinger resolvents and white noise")]
#[command(after_help = "Run without arguments for the experiment catalog.")]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Serialize, Debug, Clone)]
#[serde(rename_all = "kebab-case")]
pub struct Common {
    /// TOML file with a [common] section and one section per subcommand
    #[arg(long, value_name = "PATH")]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Run directory [default: $WNKDV_OUTPUT_ROOT/<subcommand>, root defaults to ./wnkdv-runs]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on this
    #[arg(long)]
    pub workers: Option<usize>,
    /// Master seed for all random draws
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Serialize, Debug, Clone)]
#[serde(rename_all = "kebab-case")]
pub struct GridArgs {
    /// Number of grid nodes N (even)
    #[arg(long)]
    pub modes: Option<usize>,
    /// Half period L0, in length units; the torus is [-L0, L0)
    #[arg(long)]
    pub half_period: Option<f64>,
}

#[derive(Args, Serialize, Debug, Clone)]
#[serde(rename_all = "kebab-case")]
pub struct PointArgs {
    /// Modulus |k| of the spectral parameter (inverse length)
    #[arg(long)]
    pub k_mod: Option<f64>,
    /// Argument of k, in radians
    #[arg(long)]
    pub k_arg: Option<f64>,
    /// Real part of k; with --k-im overrides the polar form
    #[arg(long, allow_hyphen_values = true)]
    pub k_re: Option<f64>,
    /// Imaginary part of k
    #[arg(long, allow_hyphen_values = true)]
    pub k_im: Option<f64>,
}

#[derive(Args, Serialize, Debug, Clone)]
#[serde(rename_all = "kebab-case")]
pub struct SecondPointArgs {
    /// Modulus of the second spectral parameter ϰ (inverse length)
    #[arg(long)]
    pub vk_mod: Option<f64>,
    /// Argument of ϰ, in radians
    #[arg(long)]
    pub vk_arg: Option<f64>,
}

#[derive(Args, Serialize, Debug, Clone)]
#[serde(rename_all = "kebab-case")]
pub struct FlowArgs {
    /// Horizon T, in time units; negative integrates backwards
    #[arg(long, allow_hyphen_values = true)]
    pub time: Option<f64>,
    /// Time step, in time units
    #[arg(long)]
    pub dt: Option<f64>,
    /// Record every this many steps
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Args, Serialize, Debug, Clone)]
#[serde(rename_all = "kebab-case")]
pub struct DataArgs {
    /// Initial data or potential: zero, const:C, bump[:A], soliton, noise, band:CUTOFF or file:PATH
    #[arg(long)]
    pub q: Option<String>,
    /// Green's function route: resolvent or riccati
    #[arg(long)]
    pub method: Option<String>,
}

#[derive(Args, Serialize, Debug, Clone)]
#[serde(rename_all = "kebab-case")]
pub struct McArgs {
    /// Monte Carlo sample count M
    #[arg(long)]
    pub samples: Option<usize>,
}

macro_rules! experiment_args {
    ($name:ident { $($field:ident : $group:ty),* $(,)? } $(extra { $($(#[$m:meta])* $x:ident : $t:ty),* $(,)? })?) => {
        #[derive(Args, Serialize, Debug, Clone)]
        #[serde(rename_all = "kebab-case")]
        pub struct $name {
            #[command(flatten)]
            #[serde(flatten)]
            pub common: Common,
            $(
                #[command(flatten)]
                #[serde(flatten)]
                pub $field: $group,
            )*
            $($(
                $(#[$m])*
                #[arg(long)]
                pub $x: $t,
            )*)?
        }
    };
}

experiment_args!(SampleArgs { grid: GridArgs, mc: McArgs } extra {
    /// Highest retained mode |n| (band-limited noise)
    cutoff: Option<usize>,
});
experiment_args!(CfArgs { grid: GridArgs, mc: McArgs });
experiment_args!(GreenArgs { grid: GridArgs, point: PointArgs, data: DataArgs });
experiment_args!(RhoArgs { grid: GridArgs, point: PointArgs, data: DataArgs });
experiment_args!(RecoverArgs { grid: GridArgs, point: PointArgs, data: DataArgs });
experiment_args!(EvolveHkArgs { grid: GridArgs, point: PointArgs, flow: FlowArgs, data: DataArgs });
experiment_args!(EvolveKdvArgs { grid: GridArgs, flow: FlowArgs, data: DataArgs });
experiment_args!(ConvergenceArgs { grid: GridArgs, flow: FlowArgs, data: DataArgs } extra {
    /// Moduli |k| of the H_k flows, comma separated (inverse length)
    #[arg(value_delimiter = ',')]
    k_moduli: Option<Vec<f64>>,
    /// Common argument of k, in radians
    k_arg: Option<f64>,
});
experiment_args!(DtgArgs { grid: GridArgs, point: PointArgs, second: SecondPointArgs, flow: FlowArgs, data: DataArgs } extra {
    /// Time at which the identity is checked, in time units
    at: Option<f64>,
    /// Finite-difference step in time; the check also runs at half this step
    dt_fd: Option<f64>,
});
experiment_args!(GreenSolutionArgs { grid: GridArgs, second: SecondPointArgs, flow: FlowArgs, data: DataArgs });
experiment_args!(InvarianceArgs { grid: GridArgs, point: PointArgs, flow: FlowArgs, mc: McArgs } extra {
    /// Also measure the truncation bias with N/2 modes (true or false)
    refine: Option<bool>,
});
experiment_args!(IbpArgs { grid: GridArgs, point: PointArgs, mc: McArgs } extra {
    /// Powers n of the pairing, comma separated
    #[arg(value_delimiter = ',')]
    powers: Option<Vec<u32>>,
});
experiment_args!(WickArgs { grid: GridArgs, mc: McArgs });
experiment_args!(TailArgs { grid: GridArgs, mc: McArgs } extra {
    /// Rank of the spectral projection
    rank: Option<usize>,
    /// Exponents θ in [0, 0.45], comma separated
    #[arg(value_delimiter = ',')]
    thetas: Option<Vec<f64>>,
});
experiment_args!(NullSplitArgs { grid: GridArgs, mc: McArgs } extra {
    /// Number of independent split repetitions
    reps: Option<usize>,
});
experiment_args!(MultiscaleArgs { grid: GridArgs, point: PointArgs, data: DataArgs } extra {
    /// Dyadic window half-widths, comma separated, in length units [default: 0.5, 1, ... up to L0]
    #[arg(value_delimiter = ',')]
    scales: Option<Vec<f64>>,
});
experiment_args!(DecayArgs { grid: GridArgs, point: PointArgs, data: DataArgs } extra {
    /// Node index of the base point x0 [default: N/2, i.e. x = 0]
    x0: Option<usize>,
    /// Smallest fitted distance, in length units
    d_min: Option<f64>,
    /// Largest fitted distance, in length units [default: L0/2]
    d_max: Option<f64>,
    /// Also write decay.svg (true or false)
    plot: Option<bool>,
});
experiment_args!(CtSweepArgs { grid: GridArgs, point: PointArgs, data: DataArgs } extra {
    /// Weight-class parameters λ, comma separated; 1e300 or more gives the flat weight
    #[arg(value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    /// Sobolev parameter κ of the H^{-1}_κ → H^1_κ norm (inverse length)
    kappa: Option<f64>,
});

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw truncated white-noise samples and dump them as Field JSON
    Sample(SampleArgs),
    /// Characteristic functional of truncated white noise
    Cf(CfArgs),
    /// Diagonal Green's function g(x; q, k)
    Green(GreenArgs),
    /// Density rho(x; q, k) and its integral alpha
    Rho(RhoArgs),
    /// Recover q from g and report the round-trip error
    Recover(RecoverArgs),
    /// Evolve under the H_k flow
    EvolveHk(EvolveHkArgs),
    /// Evolve under KdV
    EvolveKdv(EvolveKdvArgs),
    /// Distance between H_k and KdV trajectories as |k| grows
    Convergence(ConvergenceArgs),
    /// Time-derivative identity for 1/g along an H_k trajectory
    Dtg(DtgArgs),
    /// Time-integrated Green's function identity along a KdV trajectory
    GreenSolution(GreenSolutionArgs),
    /// Law of q(T) under the discrete H_k flow from white noise
    Invariance(InvarianceArgs),
    /// Translation integration by parts for white noise
    Ibp(IbpArgs),
    /// Gaussian integration by parts for polynomial functionals
    Wick(WickArgs),
    /// Exponential moments of Gaussian quadratic forms
    Tail(TailArgs),
    /// Self-test: characteristic functional on two halves of one ensemble
    NullSplit(NullSplitArgs),
    /// Telescoping multiscale resolvent identity
    Multiscale(MultiscaleArgs),
    /// Off-diagonal decay rate of the resolvent kernel
    Decay(DecayArgs),
    /// Weighted resolvent norms over slowly varying exponential weights
    CtSweep(CtSweepArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Sample(_) => "sample",
            Command::Cf(_) => "cf",
            Command::Green(_) => "green",
            Command::Rho(_) => "rho",
            Command::Recover(_) => "recover",
            Command::EvolveHk(_) => "evolve-hk",
            Command::EvolveKdv(_) => "evolve-kdv",
            Command::Convergence(_) => "convergence",
            Command::Dtg(_) => "dtg",
            Command::GreenSolution(_) => "green-solution",
            Command::Invariance(_) => "invariance",
            Command::Ibp(_) => "ibp",
            Command::Wick(_) => "wick",
            Command::Tail(_) => "tail",
            Command::NullSplit(_) => "null-split",
            Command::Multiscale(_) => "multiscale",
            Command::Decay(_) => "decay",
            Command::CtSweep(_) => "ct-sweep",
        }
    }

    fn parts(&self) -> (&Common, serde_json::Value) {
        macro_rules! split {
            ($($v:ident),*) => {
                match self {
                    $(Command::$v(a) => (&a.common, serde_json::to_value(a).expect("flags serialize")),)*
                }
            };
        }
        split!(
            Sample, Cf, Green, Rho, Recover, EvolveHk, EvolveKdv, Convergence, Dtg, GreenSolution, Invariance, Ibp, Wick,
            Tail, NullSplit, Multiscale, Decay, CtSweep
        )
    }
}

fn catalog() -> String {
    use std::fmt::Write;
    let cmd = Cli::command();
    let mut s = String::from("wnkdv experiments (run `wnkdv <experiment> --help` for flag documentation)\n\n");
    for e in experiments::CATALOG {
        let _ = writeln!(s, "{}: {}", e.name, e.summary);
        let _ = writeln!(s, "    exercises: {}", e.exercises);
        if let Some(sub) = cmd.find_subcommand(e.name) {
            let flags: Vec<String> = sub
                .get_arguments()
                .filter_map(|a| a.get_long())
                .filter(|l| *l != "help")
                .map(|l| format!("--{l}"))
                .collect();
            let _ = writeln!(s, "    flags: {}", flags.join(" "));
        }
        let defaults: Vec<String> = e.defaults.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(s, "    defaults: {}\n", defaults.join(" "));
    }
    let _ = writeln!(s, "Exit codes: 0 pass, 2 configuration error, 3 compute error, 4 a pass flag is false.");
    let _ = writeln!(s, "Default output root: ${OUTPUT_ROOT_ENV} or ./wnkdv-runs.");
    s
}

fn git_revision() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "--short", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

fn execute(command: &Command) -> Result<bool, CliError> {
    let name = command.name();
    let entry = experiments::entry(name);
    let (common, flags) = command.parts();
    let mut cfg = Resolver::new(name, &flags, common.config.as_deref(), entry.defaults)?;
    let out: PathBuf = match cfg.opt::<PathBuf>("out")? {
        Some(p) => p,
        None => std::env::var_os(OUTPUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("wnkdv-runs"))
            .join(name),
    };
    let workers: usize = match cfg.opt::<usize>("workers")? {
        Some(0) => return config::config_err("workers must be at least 1"),
        Some(w) => w,
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Compute(e.to_string()))?;
    std::fs::create_dir_all(&out)?;
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let clock = Instant::now();
    let outcome = pool.install(|| experiments::run(name, &mut cfg, &out));
    let wall = clock.elapsed().as_secs_f64();
    let (pass, code) = match &outcome {
        Ok(p) => (Some(*p), if *p { 0 } else { 4 }),
        Err(e) => (None, e.exit_code()),
    };
    let manifest = json!({
        "tool": "wnkdv",
        "version": env!("CARGO_PKG_VERSION"),
        "core_version": wnkdv::VERSION,
        "subcommand": name,
        "exercises": entry.exercises,
        "config": cfg.resolved(),
        "seed": cfg.resolved().get("seed"),
        "workers": workers,
        "git_revision": git_revision(),
        "started_unix": started,
        "wall_time_s": wall,
        "pass": pass,
        "exit_code": code,
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Compute(e.to_string()))?;
    std::fs::write(out.join("manifest.json"), text + "\n")?;
    outcome
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
    let Some(command) = cli.command else {
        // A closed pipe (e.g. `wnkdv | head`) is not an error.
        let _ = std::io::Write::write_all(&mut std::io::stdout(), catalog().as_bytes());
        return ExitCode::SUCCESS;
    };
    match execute(&command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("{}: a pass flag is false", command.name());
            ExitCode::from(4)
        }
        Err(e) => {
            eprintln!("{}: {e}", command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

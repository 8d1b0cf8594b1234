use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ddelim::initfn::InitialKind;
use ddelim::runner::{
    emit, round9, run_sweep, run_table, RowOutcome, RunConfig, SweepAxis, SweepResult,
};
use ddelim::Error;

const DEFAULT_OUT: &str = "ddelim-out";

#[derive(Parser)]
#[command(
    name = "ddelim",
    version,
    about = "Local integrity measure of time-delayed systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the LIM once.
    Estimate(RunArgs),
    /// Estimate the LIM over a 1-D or 2-D parameter grid.
    Sweep(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Start from a saved config or result.json; other flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// duffing | turning1 | turning2 | pendulum
    #[arg(long)]
    system: Option<String>,
    /// Parameter override, name=value.
    #[arg(long = "param", value_name = "NAME=VALUE")]
    params: Vec<String>,
    /// Sweep axis, name:min:max:count.
    #[arg(long = "sweep", value_name = "NAME:MIN:MAX:COUNT")]
    sweeps: Vec<String>,
    /// Grid bounds, lo:hi for every coordinate or a comma list of lo:hi.
    #[arg(long)]
    bounds: Option<String>,
    #[arg(long)]
    ndisc: Option<u32>,
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    tmax: Option<f64>,
    /// constant | linear | jump | freevib
    #[arg(long)]
    init: Option<String>,
    /// Comma-separated weights, or "default" for modal weights.
    #[arg(long)]
    weights: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, env = "DDELIM_OUT")]
    out: Option<PathBuf>,
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>, Error> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad {what} entry '{x}'")))
        })
        .collect()
}

fn parse_bounds(s: &str, dim: usize) -> Result<(Vec<f64>, Vec<f64>), Error> {
    let pairs: Vec<(f64, f64)> = s
        .split(',')
        .map(|pair| {
            let (lo, hi) = pair
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("bounds entry '{pair}' is not lo:hi")))?;
            let lo = lo
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad bound '{lo}'")))?;
            let hi = hi
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad bound '{hi}'")))?;
            Ok((lo, hi))
        })
        .collect::<Result<_, Error>>()?;
    let pairs = if pairs.len() == 1 {
        vec![pairs[0]; dim]
    } else {
        pairs
    };
    Ok(pairs.into_iter().unzip())
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig, Error> {
        let mut config = match (&self.config, &self.system) {
            (Some(path), _) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
                RunConfig::from_json(&text)?
            }
            (None, Some(system)) => RunConfig::preset(system)?,
            (None, None) => {
                return Err(Error::Config(
                    "either --system or --config is required".into(),
                ))
            }
        };
        if let (Some(system), Some(_)) = (&self.system, &self.config) {
            if *system != config.system {
                return Err(Error::Config(format!(
                    "--system {system} conflicts with the loaded config ({})",
                    config.system
                )));
            }
        }
        for p in &self.params {
            let (name, value) = p
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--param '{p}' is not name=value")))?;
            let value = value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("--param '{p}' has a non-numeric value")))?;
            config.params.insert(name.trim().to_string(), value);
        }
        if !self.sweeps.is_empty() {
            config.sweep = self
                .sweeps
                .iter()
                .map(|s| s.parse::<SweepAxis>())
                .collect::<Result<_, _>>()?;
        }
        if let Some(b) = &self.bounds {
            let (lower, upper) = parse_bounds(b, config.lower.len())?;
            config.lower = lower;
            config.upper = upper;
        }
        if let Some(n) = self.ndisc {
            config.n_disc = n;
        }
        if let Some(r) = self.r {
            config.r = r;
        }
        if let Some(n) = self.iters {
            config.n_iter = n;
        }
        if let Some(t) = self.tmax {
            config.classifier.t_max = t;
        }
        if let Some(k) = &self.init {
            config.init = k.parse::<InitialKind>()?;
        }
        if let Some(w) = &self.weights {
            config.weights = if w == "default" {
                None
            } else {
                Some(parse_list(w, "weight")?)
            };
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(j) = self.jobs {
            config.jobs = j;
        }
        config.out = Some(self.out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)));
        Ok(config)
    }
}

fn report(result: &SweepResult) {
    let names: Vec<&str> = result
        .config
        .sweep
        .iter()
        .map(|a| a.name.as_str())
        .collect();
    for row in &result.rows {
        let point: Vec<String> = names
            .iter()
            .zip(&row.values)
            .map(|(n, v)| format!("{n}={}", round9(*v)))
            .collect();
        let prefix = if point.is_empty() {
            String::new()
        } else {
            format!("{} ", point.join(" "))
        };
        match row.result() {
            Some(r) => println!(
                "{prefix}lim={:.6} status={} trajectories={} steps={}",
                r.lim, r.status, r.n_traj, r.n_steps
            ),
            None => println!("{prefix}status=error"),
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let (args, sweep) = match cli.command {
        Command::Estimate(a) => (a, false),
        Command::Sweep(a) => (a, true),
    };
    let config = args.into_config()?;
    let result = if sweep {
        run_sweep(&config)?
    } else {
        if !config.sweep.is_empty() {
            return Err(Error::Config(
                "estimate takes no sweep axes; use the sweep subcommand".into(),
            ));
        }
        run_table(&config)?
    };
    if let Some(msg) = result.rows.iter().find_map(|r| match &r.outcome {
        RowOutcome::Failed(m) if !sweep => Some(m.clone()),
        _ => None,
    }) {
        return Err(Error::Config(msg));
    }
    let out = config
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let files = emit(&result, &out)?;
    report(&result);
    eprintln!("wrote {}", files.result.display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

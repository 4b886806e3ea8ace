use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use optomech::scenario::config::bundled_names;
use optomech::scenario::run::rates_table;
use optomech::scenario::{run, sweep, ConfigError, Pipeline, RunError, RunOptions, ScenarioConfig};

#[derive(Parser)]
#[command(name = "optomech", version, about = "Autonomous optomechanical heat engine: scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print drift, diffusion and per-channel rates.
    Rates(Common),
    /// Run the configured pipeline and write CSV artifacts.
    Run(Common),
    /// Run oracle and analytic pipelines side by side.
    Compare(Common),
    /// Repeat a run over values of one scalar key.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Config key to vary, e.g. `state.amplitude`.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        values: Vec<f64>,
    },
}

#[derive(Args)]
struct Common {
    /// Bundled config name or path to a config file.
    #[arg(long, default_value = "default_engine")]
    config: String,
    /// Output directory (default: `run.out`, else `out/<name>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Treat weak-coupling regime warnings as errors.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dim_o: Option<usize>,
    #[arg(long)]
    dim_m: Option<usize>,
    /// Override any config key, e.g. `--set engine.g=0.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn load(&self, pipeline: Option<Pipeline>) -> Result<ScenarioConfig, RunError> {
        let mut ov = Vec::new();
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| ConfigError::Invalid {
                key: "--set".into(),
                msg: format!("expected KEY=VALUE, got {kv:?}"),
            })?;
            ov.push((k.trim().to_string(), v.trim().to_string()));
        }
        if let Some(s) = self.seed {
            ov.push(("run.seed".into(), s.to_string()));
        }
        if let Some(d) = self.dim_o {
            ov.push(("run.dim_o".into(), d.to_string()));
        }
        if let Some(d) = self.dim_m {
            ov.push(("run.dim_m".into(), d.to_string()));
        }
        if let Some(p) = pipeline {
            ov.push(("run.pipeline".into(), p.to_string()));
        }
        ScenarioConfig::load(&self.config, &ov).map_err(|e| match e {
            ConfigError::Invalid { key, msg } if key == "--config" => ConfigError::Invalid {
                key,
                msg: format!("{msg}; bundled configs: {}", bundled_names().join(", ")),
            },
            e => e,
        })
        .map_err(RunError::from)
    }

    fn out_dir(&self, cfg: &ScenarioConfig) -> PathBuf {
        self.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out").join(&cfg.name))
    }
}

fn execute(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Rates(c) => {
            let cfg = c.load(None)?;
            let table = rates_table(&cfg)?;
            print!("{table}");
            if let Some(dir) = &c.out {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("rates.txt"), table)?;
            }
        }
        Command::Run(c) => run_one(&c, None)?,
        Command::Compare(c) => run_one(&c, Some(Pipeline::Compare))?,
        Command::Sweep { common, axis, values } => {
            let cfg = common.load(None)?;
            let dir = common.out_dir(&cfg);
            let s = sweep(&cfg, &axis, &values, Some(&dir))?;
            print!("{}", s.summary());
            print!("{}", s.to_csv());
            eprintln!("wrote {}", dir.join("sweep.csv").display());
        }
    }
    Ok(())
}

fn run_one(c: &Common, pipeline: Option<Pipeline>) -> Result<(), RunError> {
    let cfg = c.load(pipeline)?;
    let outcome = run(&cfg, RunOptions { strict: c.strict })?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    let dir = c.out_dir(&cfg);
    let files = outcome.write_artifacts(&dir)?;
    print!("{}", outcome.summary());
    for f in files {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

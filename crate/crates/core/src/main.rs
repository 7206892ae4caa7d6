use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use flowrl::agent_dqn::Mlp;
use flowrl::agent_q::QTable;
use flowrl::harness::{
    load_config, run_experiment_with, write_report, ExperimentConfig, HarnessError, Mode, Policy, RunOptions,
    CONFIG_KEYS,
};

#[derive(Debug, Parser)]
#[command(
    name = "flowrl",
    version,
    about = "Train rule-placement agents on a simulated SDN switch and report the results",
    after_help = format!("Config file keys (key=value, one per line, `#` comments) and defaults:\n{CONFIG_KEYS}")
)]
struct Cli {
    /// ql | dqn | mbf | oracle | significance (overrides the config file)
    #[arg(long)]
    mode: Option<Mode>,
    /// key=value experiment file
    #[arg(long)]
    config: Option<PathBuf>,
    /// agent seed
    #[arg(long)]
    seed: Option<u64>,
    /// episode cap of the measured run
    #[arg(long)]
    episodes: Option<usize>,
    /// target overhead reduction in (0, 1)
    #[arg(long)]
    goal: Option<f64>,
    /// flow-table capacity in bits
    #[arg(long)]
    table_bits: Option<u64>,
    /// per-episode CSV path; the summary goes to <out>.summary
    #[arg(long)]
    out: Option<PathBuf>,
    /// write the learned Q-table or network here
    #[arg(long)]
    save_policy: Option<PathBuf>,
    /// start from a saved Q-table (ql) or network (dqn)
    #[arg(long)]
    load_policy: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(m) = cli.mode {
        cfg.mode = m;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(e) = cli.episodes {
        cfg.episodes_cap = e;
    }
    if let Some(g) = cli.goal {
        cfg.goal_mu = g;
    }
    if let Some(b) = cli.table_bits {
        cfg.table_capacity_bits = b;
    }
    if let Some(o) = cli.out {
        cfg.output_path = Some(o);
    }
    cfg.validate()?;

    let io = |path: &PathBuf| {
        let path = path.clone();
        move |source| HarnessError::Io { path, source }
    };
    let policy = match &cli.load_policy {
        None => None,
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io(path))?;
            Some(match cfg.mode {
                Mode::Ql => Policy::Table(QTable::from_text(&text)?),
                Mode::Dqn => Policy::Net(Mlp::from_text(&text)?),
                _ => {
                    return Err(HarnessError::Validation {
                        field: "mode",
                        msg: "--load-policy needs mode ql or dqn".into(),
                    })
                }
            })
        }
    };

    let report = run_experiment_with(&cfg, RunOptions { policy })?;
    if let Some(path) = &cfg.output_path {
        write_report(&report, path)?;
    }
    if let Some(path) = &cli.save_policy {
        match &report.policy {
            Some(p) => fs::write(path, p.to_text()).map_err(io(path))?,
            None => eprintln!("mode {} learns no policy; nothing saved", cfg.mode),
        }
    }
    print!("{}", report.summary_text());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

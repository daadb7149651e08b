use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use log::error;
use stabmix::{run, write_outputs, ExperimentConfig, ExperimentKind};

/// Runs one experiment family and writes its CSV tables and manifest.
#[derive(Debug, Parser)]
#[command(name = "stabmix", version, about)]
struct Cli {
    kind: ExperimentKind,
    #[arg(long, default_value = "problem1")]
    problem: String,
    /// Comma-separated scheme ids (rkc1, naive-rkc1, op-rkc1, rkc2, naive-rkc2,
    /// op-rkc2, hyb-rkc2, mrkc, mp-mrkc-fd, mp-mrkc-chain).
    #[arg(long, value_delimiter = ',')]
    scheme: Vec<String>,
    /// s1, s2-fd, analytic or exact-diff.
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long, default_value = "bfloat16")]
    low_prec: String,
    #[arg(long, value_delimiter = ',')]
    dt_list: Vec<f64>,
    /// Stage counts; a fixed s for convergence runs.
    #[arg(long = "s", value_delimiter = ',')]
    s: Vec<usize>,
    /// Mesh sizes.
    #[arg(long = "N", value_delimiter = ',')]
    n: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    q_list: Vec<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    /// Spacing of error samples (default: the coarsest Δt).
    #[arg(long)]
    sample_every: Option<f64>,
    #[arg(long, default_value_t = 8.0)]
    grading: f64,
    #[arg(long, env = "STABMIX_OUT", default_value = "stabmix-out")]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl Cli {
    fn into_config(self) -> ExperimentConfig {
        ExperimentConfig {
            kind: self.kind,
            problem: self.problem,
            schemes: self.scheme,
            strategy: self.strategy,
            low_prec: self.low_prec,
            dt_list: self.dt_list,
            s_list: self.s,
            n_list: self.n,
            q_list: self.q_list,
            eps: self.eps,
            t_end: self.t_end,
            sample_every: self.sample_every,
            grading: self.grading,
            jobs: self.jobs,
            seed: self.seed,
            out: self.out,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cfg = Cli::parse().into_config();
    let result = run(&cfg).and_then(|out| write_outputs(&cfg, &out));
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}

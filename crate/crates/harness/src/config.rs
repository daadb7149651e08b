use std::fmt;
use std::path::PathBuf;

use serde::Serialize;

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Convergence,
    Stability,
    Stages,
    Spacetime,
    Qorder,
}

impl ExperimentKind {
    pub fn id(self) -> &'static str {
        match self {
            Self::Convergence => "convergence",
            Self::Stability => "stability",
            Self::Stages => "stages",
            Self::Spacetime => "spacetime",
            Self::Qorder => "qorder",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Everything one experiment run needs. Unset options fall back to
/// per-problem and per-experiment defaults when the run starts.
#[derive(Clone, Debug, Serialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub problem: String,
    /// Scheme ids; empty means the experiment's default set.
    pub schemes: Vec<String>,
    /// Δ̂f strategy id; `None` picks `s1` for problems with a linear part and
    /// `exact-diff` otherwise.
    pub strategy: Option<String>,
    pub low_prec: String,
    pub dt_list: Vec<f64>,
    pub s_list: Vec<usize>,
    pub n_list: Vec<usize>,
    pub q_list: Vec<usize>,
    pub eps: Option<f64>,
    pub t_end: Option<f64>,
    /// Spacing of the error samples; defaults to the coarsest Δt.
    pub sample_every: Option<f64>,
    pub grading: f64,
    pub jobs: usize,
    pub seed: u64,
    pub out: PathBuf,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind, problem: &str) -> Self {
        Self {
            kind,
            problem: problem.to_string(),
            schemes: Vec::new(),
            strategy: None,
            low_prec: "bfloat16".into(),
            dt_list: Vec::new(),
            s_list: Vec::new(),
            n_list: Vec::new(),
            q_list: Vec::new(),
            eps: None,
            t_end: None,
            sample_every: None,
            grading: 8.0,
            jobs: 1,
            seed: 0,
            out: PathBuf::from("stabmix-out"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.dt_list.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return bad(format!("every Δt must be positive and finite: {:?}", self.dt_list));
        }
        match self.kind {
            ExperimentKind::Convergence | ExperimentKind::Qorder => {
                if self.dt_list.is_empty() {
                    return bad("empty Δt list".into());
                }
                if self.dt_list.windows(2).any(|w| w[1] >= w[0]) {
                    return bad(format!("Δt list must be strictly decreasing: {:?}", self.dt_list));
                }
            }
            ExperimentKind::Stability | ExperimentKind::Stages => {
                if self.s_list.is_empty() {
                    return bad("empty stage list".into());
                }
            }
            ExperimentKind::Spacetime => {
                if self.n_list.is_empty() {
                    return bad("empty mesh list".into());
                }
            }
        }
        if self.kind == ExperimentKind::Stability && self.n_list.len() > 1 && self.n_list.len() != self.s_list.len() {
            return bad("stability needs one N or one N per s".into());
        }
        if let Some(t) = self.t_end {
            if !(t >= 0.0 && t.is_finite()) {
                return bad(format!("T = {t}"));
            }
        }
        if let Some(tau) = self.sample_every {
            if !(tau > 0.0 && tau.is_finite()) {
                return bad(format!("sample interval {tau}"));
            }
        }
        if self.jobs == 0 {
            return bad("jobs must be at least 1".into());
        }
        Ok(())
    }
}

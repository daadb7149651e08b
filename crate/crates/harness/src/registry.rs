//! Named problems and schemes addressable from the command line.

use stabmix_core::chebyshev::default_damping;
use stabmix_core::mp_rkc::{DeltaFStrategy, MixedVariant, MpRkcStepper, StrategyFamily};
use stabmix_core::mrkc::{MrkcStepper, OuterStrategy};
use stabmix_core::problems::{
    build_heat, build_multirate_surrogate, build_problem_1, build_problem_3, build_problem_4, build_stability_heat,
    estimate_spectral_radius, plaplace_steady_state, MultirateProblem, OdeProblem, PowerOptions,
};
use stabmix_core::rkc::{RkcStepper, StageRule, Stepper};

use crate::error::{HarnessError, Result};

pub const PROBLEMS: [&str; 8] =
    ["problem1", "problem1-1d", "heat3d", "heat2d", "stability-heat", "brusselator", "problem4", "surrogate"];

pub fn default_mesh(name: &str) -> Option<usize> {
    Some(match name {
        "problem1" | "problem1-1d" | "heat2d" | "surrogate" => 32,
        "heat3d" => 8,
        "stability-heat" => 16,
        "brusselator" | "problem4" => 64,
        _ => return None,
    })
}

/// A built problem, with its fast/slow split when it has one.
#[derive(Clone, Debug)]
pub struct Setup {
    pub problem: OdeProblem,
    pub split: Option<MultirateProblem>,
}

impl Setup {
    pub fn with_t_end(mut self, t_end: Option<f64>) -> Self {
        if let Some(t) = t_end {
            self.problem.t_end = t;
            if let Some(s) = self.split.take() {
                self.split = Some(s.with_t_end(t));
            }
        }
        self
    }
}

pub fn build_named(name: &str, n_mesh: Option<usize>, grading: f64) -> Result<Setup> {
    let n = n_mesh.or_else(|| default_mesh(name)).ok_or_else(|| HarnessError::UnknownProblem(name.into()))?;
    let problem = match name {
        "problem1" => build_problem_1(2, n, 100.0)?,
        "problem1-1d" => build_problem_1(1, n, 100.0)?,
        "heat3d" => build_heat(3, n, 100.0)?,
        "heat2d" => build_heat(2, n, 100.0)?,
        "stability-heat" => build_stability_heat(n, 50.0)?,
        "brusselator" => build_problem_3(n)?,
        "problem4" => build_problem_4(n)?,
        "surrogate" => {
            let mr = build_multirate_surrogate(n, grading)?;
            return Ok(Setup { problem: mr.problem.clone(), split: Some(mr) });
        }
        _ => return Err(HarnessError::UnknownProblem(name.into())),
    };
    Ok(Setup { problem, split: None })
}

/// State at which the step-size-defining spectral radius is estimated: the
/// discrete steady state for the 4-Laplace problem (whose Jacobian vanishes at
/// the flat initial value), the initial value otherwise.
pub fn rho_state(problem: &OdeProblem) -> Vec<f64> {
    if problem.name == "plap4" {
        plaplace_steady_state(problem.mesh)
    } else {
        problem.y0.clone()
    }
}

pub fn spectral_radius(problem: &OdeProblem, power: &PowerOptions) -> f64 {
    estimate_spectral_radius(&problem.rhs, &rho_state(problem), power).rho
}

pub fn default_strategy(problem: &OdeProblem) -> StrategyFamily {
    if problem.rhs.has_linear() {
        StrategyFamily::Scenario1
    } else {
        StrategyFamily::ExactDifference
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RkcKind {
    Exact,
    Naive,
    /// First-order increments throughout.
    Op,
    Hybrid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Rkc { p: u8, kind: RkcKind },
    Mrkc,
    MpMrkc(OuterStrategy),
}

impl Scheme {
    pub fn parse(id: &str) -> Result<Self> {
        use RkcKind::*;
        Ok(match id {
            "rkc1" => Self::Rkc { p: 1, kind: Exact },
            "rkc2" => Self::Rkc { p: 2, kind: Exact },
            "naive-rkc1" => Self::Rkc { p: 1, kind: Naive },
            "naive-rkc2" => Self::Rkc { p: 2, kind: Naive },
            "op-rkc1" => Self::Rkc { p: 1, kind: Op },
            "op-rkc2" => Self::Rkc { p: 2, kind: Op },
            "hyb-rkc2" => Self::Rkc { p: 2, kind: Hybrid },
            "mrkc" => Self::Mrkc,
            "mp-mrkc-fd" => Self::MpMrkc(OuterStrategy::FiniteDifference),
            "mp-mrkc-chain" => Self::MpMrkc(OuterStrategy::LinearChain),
            _ => return Err(HarnessError::UnknownScheme(id.into())),
        })
    }

    pub fn id(self) -> String {
        match self {
            Self::Rkc { p, kind } => match kind {
                RkcKind::Exact => format!("rkc{p}"),
                RkcKind::Naive => format!("naive-rkc{p}"),
                RkcKind::Op => format!("op-rkc{p}"),
                RkcKind::Hybrid => "hyb-rkc2".into(),
            },
            Self::Mrkc => "mrkc".into(),
            Self::MpMrkc(o) => format!("mp-mrkc-{}", o.id()),
        }
    }

    pub fn order(self) -> u8 {
        match self {
            Self::Rkc { p, .. } => p,
            _ => 1,
        }
    }

    pub fn is_multirate(self) -> bool {
        matches!(self, Self::Mrkc | Self::MpMrkc(_))
    }

    pub fn is_exact(self) -> bool {
        matches!(self, Self::Rkc { kind: RkcKind::Exact, .. } | Self::Mrkc)
    }

    /// The full-precision scheme this one approximates.
    pub fn exact_counterpart(self) -> Self {
        match self {
            Self::Rkc { p, .. } => Self::Rkc { p, kind: RkcKind::Exact },
            _ => Self::Mrkc,
        }
    }

    pub fn default_eps(self) -> f64 {
        default_damping(self.order())
    }
}

/// Options shared by every stepper of one run.
#[derive(Clone, Copy, Debug)]
pub struct StepperOptions {
    pub rule: StageRule,
    /// Damping; `None` uses the scheme's default.
    pub eps: Option<f64>,
    pub strategy: DeltaFStrategy,
    pub power: PowerOptions,
}

pub fn make_stepper(scheme: Scheme, setup: &Setup, opts: &StepperOptions) -> Result<Box<dyn Stepper>> {
    let rhs = &setup.problem.rhs;
    let eps = opts.eps.unwrap_or_else(|| scheme.default_eps());
    let split = || {
        setup
            .split
            .as_ref()
            .ok_or_else(|| HarnessError::Config(format!("{} needs a problem with a fast/slow split", scheme.id())))
    };
    Ok(match scheme {
        Scheme::Rkc { p, kind } => match kind {
            RkcKind::Exact => Box::new(RkcStepper::exact(rhs, p, eps, opts.rule)?),
            RkcKind::Naive => Box::new(RkcStepper::naive_mixed(rhs, p, eps, opts.rule, opts.strategy.format)?),
            RkcKind::Op => {
                Box::new(MpRkcStepper::new(rhs, p, eps, opts.rule, opts.strategy, MixedVariant::FirstOrder)?)
            }
            RkcKind::Hybrid => {
                Box::new(MpRkcStepper::new(rhs, p, eps, opts.rule, opts.strategy, MixedVariant::Hybrid)?)
            }
        },
        Scheme::Mrkc => Box::new(MrkcStepper::exact(split()?, eps, opts.power)),
        Scheme::MpMrkc(outer) => Box::new(MrkcStepper::mixed(split()?, eps, opts.power, opts.strategy, outer)?),
    })
}

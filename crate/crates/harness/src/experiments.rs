//! Drivers for the five experiment families.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use log::{info, warn};
use stabmix_core::chebyshev::stability_boundary;
use stabmix_core::mp_rkc::{rk4_linear_weights, DeltaFStrategy, QOrderRkStepper, StrategyFamily};
use stabmix_core::problems::{plaplace_steady_state, ErrorKind, PowerOptions};
use stabmix_core::rkc::{integrate, rk4_reference, IntegrationTrace, Sampling, StageRule, Stepper};
use stabmix_core::vecops::dist_inf;
use stabmix_core::FloatFormat;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{HarnessError, Result};
use crate::output::{sort_records, write_manifest, write_records, write_trace, ExperimentRecord, TraceRow};
use crate::registry::{build_named, default_strategy, make_stepper, spectral_radius, Scheme, Setup, StepperOptions};
use crate::slope::asymptotic_slope;

/// Fine mesh of the 4-Laplace space-time reference.
pub const PLAPLACE_REFERENCE_MESH: usize = 1 << 10;

/// Records of a run plus, for stability studies, the per-step norm traces.
#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    pub records: Vec<ExperimentRecord>,
    pub traces: Vec<TraceRow>,
}

/// Max over the common sample times of the nodal max-norm distance; only the
/// final samples for steady-state problems. Two-field states are stacked, so
/// the max over both species is the max over the whole vector.
pub fn error_measure(history: &[(f64, Vec<f64>)], reference: &[(f64, Vec<f64>)], kind: ErrorKind) -> Result<f64> {
    if history.is_empty() || history.len() != reference.len() {
        return Err(HarnessError::MismatchedSampling(format!("{} samples against {}", history.len(), reference.len())));
    }
    let pairs: Vec<_> = match kind {
        ErrorKind::SteadyState => vec![(history.last().unwrap(), reference.last().unwrap())],
        ErrorKind::Nodal | ErrorKind::TwoField => history.iter().zip(reference).collect(),
    };
    let mut err: f64 = 0.0;
    for ((t, y), (tr, yr)) in pairs {
        if (t - tr).abs() > 1e-9 * t.abs().max(1.0) || y.len() != yr.len() {
            return Err(HarnessError::MismatchedSampling(format!("t = {t} against t = {tr}")));
        }
        err = err.max(dist_inf(y, yr));
    }
    Ok(err)
}

/// Maps `f` over `items` on up to `jobs` threads; results keep the input order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|sc| {
        for _ in 0..jobs.min(items.len()) {
            sc.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().unwrap().expect("every slot filled")).collect()
}

struct Context {
    fmt: FloatFormat,
    strategy: DeltaFStrategy,
    power: PowerOptions,
}

impl Context {
    fn new(cfg: &ExperimentConfig, setup: &Setup) -> Result<Self> {
        let fmt = FloatFormat::by_name(&cfg.low_prec)?;
        let family = match &cfg.strategy {
            Some(id) => StrategyFamily::from_id(id)?,
            None => default_strategy(&setup.problem),
        };
        Ok(Self {
            fmt,
            strategy: DeltaFStrategy::new(family, fmt),
            power: PowerOptions { seed: cfg.seed, ..Default::default() },
        })
    }

    fn options(&self, rule: StageRule, eps: Option<f64>) -> StepperOptions {
        StepperOptions { rule, eps, strategy: self.strategy, power: self.power }
    }

    fn auto_rule(&self) -> StageRule {
        StageRule::Auto { power: self.power, freeze: false }
    }
}

fn parse_schemes(cfg: &ExperimentConfig, defaults: &[&str]) -> Result<Vec<Scheme>> {
    let ids: Vec<String> =
        if cfg.schemes.is_empty() { defaults.iter().map(|s| s.to_string()).collect() } else { cfg.schemes.clone() };
    ids.iter().map(|id| Scheme::parse(id)).collect()
}

const SINGLE_RATE: [&str; 6] = ["rkc1", "naive-rkc1", "op-rkc1", "rkc2", "naive-rkc2", "hyb-rkc2"];
const MIXED_ONLY: [&str; 4] = ["naive-rkc1", "op-rkc1", "naive-rkc2", "hyb-rkc2"];

/// A record with the run-independent columns filled in.
fn base_record(scheme: &str, setup: &Setup, dt: f64, eps: f64, fmt: &FloatFormat) -> ExperimentRecord {
    ExperimentRecord {
        scheme: scheme.to_string(),
        problem: setup.problem.name.clone(),
        n: setup.problem.mesh,
        dt,
        s: 0,
        m: 0,
        eta: 0.0,
        eps,
        low_prec: fmt.name().to_string(),
        error_abs: None,
        error_rel_u: None,
        slope: None,
        norm_ratio_final: f64::NAN,
        n_high_evals: 0,
        n_low_evals: 0,
        wall_ms: 0.0,
    }
}

fn fill_from_trace(rec: &mut ExperimentRecord, trace: &IntegrationTrace) {
    rec.s = trace.records.iter().map(|r| r.s).max().unwrap_or(0);
    if let Some(last) = trace.records.last() {
        rec.m = last.m;
        rec.eta = last.eta;
    }
    rec.norm_ratio_final = trace.final_norm_ratio();
    rec.n_high_evals = trace.counters.high;
    rec.n_low_evals = trace.counters.low;
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t0 = Instant::now();
    let r = f();
    (r, t0.elapsed().as_secs_f64() * 1e3)
}

fn run_sampled(stepper: &mut dyn Stepper, setup: &Setup, dt: f64, every: f64) -> Result<IntegrationTrace> {
    Ok(integrate(stepper, &setup.problem.y0, setup.problem.t_end, dt, Some(Sampling { every, keep: true }))?)
}

/// Fills the slope column per scheme from the asymptotic-range rule.
fn assign_slopes(rows: &mut [ExperimentRecord]) {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        groups.entry(r.scheme.clone()).or_default().push(i);
    }
    for idx in groups.values() {
        let dts: Vec<f64> = idx.iter().map(|&i| rows[i].dt).collect();
        let errs: Vec<f64> = idx.iter().map(|&i| rows[i].error_abs.unwrap_or(f64::NAN)).collect();
        let slope = asymptotic_slope(&dts, &errs).map(|f| f.slope);
        for &i in idx {
            rows[i].slope = slope;
        }
    }
}

/// Error against an RK4 reference at multiples of the sampling interval, for
/// every (scheme, Δt).
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let setup = build_named(&cfg.problem, cfg.n_list.first().copied(), cfg.grading)?.with_t_end(cfg.t_end);
    let ctx = Context::new(cfg, &setup)?;
    let defaults: &[&str] = if setup.split.is_some() { &["mrkc", "mp-mrkc-chain"] } else { &SINGLE_RATE };
    let schemes = parse_schemes(cfg, defaults)?;
    let every = cfg.sample_every.unwrap_or(cfg.dt_list[0]);
    let dt_min = *cfg.dt_list.last().unwrap();
    let rho = spectral_radius(&setup.problem, &ctx.power);
    let (reference, ref_ms) =
        timed(|| rk4_reference(&setup.problem.rhs, &setup.problem.y0, setup.problem.t_end, every, dt_min, rho));
    let reference = reference?;
    info!("reference for {} ready in {ref_ms:.0} ms (ρ = {rho:e})", setup.problem.name);
    let rule = match cfg.s_list.first() {
        Some(&s) => StageRule::Fixed(s),
        None => ctx.auto_rule(),
    };
    let points: Vec<(Scheme, f64)> =
        schemes.iter().flat_map(|&sc| cfg.dt_list.iter().map(move |&dt| (sc, dt))).collect();
    let rows = parallel_map(&points, cfg.jobs, |&(scheme, dt)| -> Result<ExperimentRecord> {
        let eps = cfg.eps.unwrap_or_else(|| scheme.default_eps());
        let mut rec = base_record(&scheme.id(), &setup, dt, eps, &ctx.fmt);
        let mut stepper = make_stepper(scheme, &setup, &ctx.options(rule, cfg.eps))?;
        let (trace, ms) = timed(|| run_sampled(stepper.as_mut(), &setup, dt, every));
        rec.wall_ms = ms;
        match trace {
            Ok(trace) => {
                fill_from_trace(&mut rec, &trace);
                rec.set_error(error_measure(&trace.samples, &reference, setup.problem.error_kind)?, &ctx.fmt);
            }
            Err(HarnessError::Core(e)) => {
                warn!("{} at Δt = {dt:e}: {e}", scheme.id());
                rec.set_error(f64::INFINITY, &ctx.fmt);
            }
            Err(e) => return Err(e),
        }
        Ok(rec)
    });
    let mut records = rows.into_iter().collect::<Result<Vec<_>>>()?;
    assign_slopes(&mut records);
    sort_records(&mut records);
    Ok(RunOutput { records, traces: Vec::new() })
}

/// Δt with Δtρ = s² (p = 1) or Δtρ = ½β^{(2)}(s, ε) (p = 2).
pub fn stages_step(p: u8, s: usize, eps: f64, rho: f64) -> Result<f64> {
    Ok(if p == 1 { (s * s) as f64 / rho } else { 0.5 * stability_boundary(2, s, eps)? / rho })
}

/// Norm ratios ‖ŷⁿ‖₂/‖y⁰‖₂ along each run, for (s, N) pairs.
pub fn run_stability(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let schemes = parse_schemes(cfg, &SINGLE_RATE)?;
    if let Some(sc) = schemes.iter().find(|s| s.is_multirate()) {
        return Err(HarnessError::Config(format!("{} is not a single-rate scheme", sc.id())));
    }
    let pairs: Vec<(usize, Option<usize>)> =
        cfg.s_list.iter().enumerate().map(|(i, &s)| (s, cfg.n_list.get(i).or(cfg.n_list.first()).copied())).collect();
    let mut points = Vec::new();
    for &(s, n) in &pairs {
        let setup = build_named(&cfg.problem, n, cfg.grading)?.with_t_end(cfg.t_end);
        let ctx = Context::new(cfg, &setup)?;
        let rho = spectral_radius(&setup.problem, &ctx.power);
        for &scheme in &schemes {
            points.push((scheme, s, rho, setup.clone()));
        }
    }
    let results =
        parallel_map(&points, cfg.jobs, |(scheme, s, rho, setup)| -> Result<(ExperimentRecord, Vec<TraceRow>)> {
            let ctx = Context::new(cfg, setup)?;
            let eps = cfg.eps.unwrap_or_else(|| scheme.default_eps());
            let dt = stages_step(scheme.order(), *s, eps, *rho)?;
            let mut rec = base_record(&scheme.id(), setup, dt, eps, &ctx.fmt);
            let mut stepper = make_stepper(*scheme, setup, &ctx.options(StageRule::Fixed(*s), cfg.eps))?;
            let (trace, ms) = timed(|| integrate(stepper.as_mut(), &setup.problem.y0, setup.problem.t_end, dt, None));
            rec.wall_ms = ms;
            rec.s = *s;
            let mut rows = Vec::new();
            match trace {
                Ok(trace) => {
                    fill_from_trace(&mut rec, &trace);
                    let n0 = trace.records.first().map_or(1.0, |r| r.norm2);
                    for (k, r) in trace.records.iter().enumerate() {
                        rows.push(TraceRow {
                            scheme: rec.scheme.clone(),
                            n: rec.n,
                            s: *s,
                            step: k,
                            t: r.t,
                            norm_ratio: if n0 > 0.0 { r.norm2 / n0 } else { 1.0 },
                        });
                    }
                }
                Err(e) => {
                    warn!("{} with s = {s}: {e}", scheme.id());
                    rec.norm_ratio_final = f64::INFINITY;
                }
            }
            Ok((rec, rows))
        });
    let mut out = RunOutput::default();
    for r in results {
        let (rec, rows) = r?;
        out.records.push(rec);
        out.traces.extend(rows);
    }
    sort_records(&mut out.records);
    out.traces
        .sort_by(|a, b| a.scheme.cmp(&b.scheme).then(a.n.cmp(&b.n)).then(a.s.cmp(&b.s)).then(a.step.cmp(&b.step)));
    Ok(out)
}

/// max_n‖ŷⁿ − yⁿ‖∞ / max_n‖yⁿ − ȳⁿ‖∞: rounding error of a mixed run against
/// the same scheme in exact arithmetic, relative to that scheme's time
/// discretization error against the RK4 reference. The ratio goes into
/// `norm_ratio_final`, the rounding error into `error_abs`.
pub fn run_stages(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let setup = build_named(&cfg.problem, cfg.n_list.first().copied(), cfg.grading)?.with_t_end(cfg.t_end);
    let ctx = Context::new(cfg, &setup)?;
    let schemes = parse_schemes(cfg, &MIXED_ONLY)?;
    if let Some(sc) = schemes.iter().find(|s| s.is_multirate() || s.is_exact()) {
        return Err(HarnessError::Config(format!("{} has no rounding error to study", sc.id())));
    }
    let rho = spectral_radius(&setup.problem, &ctx.power);
    let mut cells: Vec<(u8, usize)> =
        schemes.iter().flat_map(|sc| cfg.s_list.iter().map(move |&s| (sc.order(), s))).collect();
    cells.sort();
    cells.dedup();
    let exact_runs = parallel_map(&cells, cfg.jobs, |&(p, s)| -> Result<(f64, Vec<(f64, Vec<f64>)>, f64)> {
        let eps = cfg.eps.unwrap_or_else(|| stabmix_core::chebyshev::default_damping(p));
        let dt = stages_step(p, s, eps, rho)?;
        let reference = rk4_reference(&setup.problem.rhs, &setup.problem.y0, setup.problem.t_end, dt, dt, rho)?;
        let exact = Scheme::Rkc { p, kind: crate::registry::RkcKind::Exact };
        let mut st = make_stepper(exact, &setup, &ctx.options(StageRule::Fixed(s), cfg.eps))?;
        let trace = run_sampled(st.as_mut(), &setup, dt, dt)?;
        let disc = error_measure(&trace.samples, &reference, ErrorKind::Nodal)?;
        Ok((dt, trace.samples, disc))
    });
    let exact_runs: BTreeMap<(u8, usize), (f64, Vec<(f64, Vec<f64>)>, f64)> =
        cells.iter().copied().zip(exact_runs.into_iter().collect::<Result<Vec<_>>>()?).collect();
    let points: Vec<(Scheme, usize)> =
        schemes.iter().flat_map(|&sc| cfg.s_list.iter().map(move |&s| (sc, s))).collect();
    let rows = parallel_map(&points, cfg.jobs, |&(scheme, s)| -> Result<ExperimentRecord> {
        let (dt, exact, disc) = &exact_runs[&(scheme.order(), s)];
        let eps = cfg.eps.unwrap_or_else(|| scheme.default_eps());
        let mut rec = base_record(&scheme.id(), &setup, *dt, eps, &ctx.fmt);
        rec.s = s;
        let mut st = make_stepper(scheme, &setup, &ctx.options(StageRule::Fixed(s), cfg.eps))?;
        let (trace, ms) = timed(|| run_sampled(st.as_mut(), &setup, *dt, *dt));
        rec.wall_ms = ms;
        let rounding = match trace {
            Ok(trace) => {
                fill_from_trace(&mut rec, &trace);
                error_measure(&trace.samples, exact, ErrorKind::Nodal)?
            }
            Err(HarnessError::Core(e)) => {
                warn!("{} with s = {s}: {e}", scheme.id());
                f64::INFINITY
            }
            Err(e) => return Err(e),
        };
        rec.set_error(rounding, &ctx.fmt);
        rec.norm_ratio_final = rounding / disc;
        Ok(rec)
    });
    let mut records = rows.into_iter().collect::<Result<Vec<_>>>()?;
    sort_records(&mut records);
    Ok(RunOutput { records, traces: Vec::new() })
}

/// Final-time error against the problem's steady state along coupled
/// (N, s, Δt) schedules: fixed s with Δtρ = s² for p = 1, s = ⌈8√N⌉ with
/// Δtρ = ½β^{(2)}(s, ε) for p = 2.
pub fn run_spacetime(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let schemes = parse_schemes(cfg, &SINGLE_RATE)?;
    if let Some(sc) = schemes.iter().find(|s| s.is_multirate()) {
        return Err(HarnessError::Config(format!("{} is not a single-rate scheme", sc.id())));
    }
    let fine = (cfg.problem == "problem4").then(|| plaplace_steady_state(PLAPLACE_REFERENCE_MESH));
    let mut points = Vec::new();
    for &n in &cfg.n_list {
        let setup = build_named(&cfg.problem, Some(n), cfg.grading)?.with_t_end(cfg.t_end);
        let target = match (&setup.problem.steady_state, &fine) {
            (_, Some(f)) => {
                if PLAPLACE_REFERENCE_MESH % n != 0 {
                    return Err(HarnessError::Config(format!("N = {n} does not divide {PLAPLACE_REFERENCE_MESH}")));
                }
                let r = PLAPLACE_REFERENCE_MESH / n;
                (1..n).map(|i| f[i * r - 1]).collect::<Vec<f64>>()
            }
            (Some(st), None) => st.clone(),
            (None, None) => return Err(HarnessError::Config(format!("{} has no steady-state reference", cfg.problem))),
        };
        let ctx = Context::new(cfg, &setup)?;
        let rho = spectral_radius(&setup.problem, &ctx.power);
        for &scheme in &schemes {
            points.push((scheme, setup.clone(), target.clone(), rho));
        }
    }
    let rows = parallel_map(&points, cfg.jobs, |(scheme, setup, target, rho)| -> Result<ExperimentRecord> {
        let ctx = Context::new(cfg, setup)?;
        let eps = cfg.eps.unwrap_or_else(|| scheme.default_eps());
        let n = setup.problem.mesh;
        let s = if scheme.order() == 1 {
            cfg.s_list.first().copied().unwrap_or(16)
        } else {
            (8.0 * (n as f64).sqrt()).ceil() as usize
        };
        let dt = stages_step(scheme.order(), s, eps, *rho)?;
        let mut rec = base_record(&scheme.id(), setup, dt, eps, &ctx.fmt);
        let mut st = make_stepper(*scheme, setup, &ctx.options(StageRule::Fixed(s), cfg.eps))?;
        let (trace, ms) = timed(|| integrate(st.as_mut(), &setup.problem.y0, setup.problem.t_end, dt, None));
        rec.wall_ms = ms;
        rec.s = s;
        match trace {
            Ok(trace) => {
                fill_from_trace(&mut rec, &trace);
                rec.set_error(dist_inf(&trace.final_state, target), &ctx.fmt);
            }
            Err(e) => {
                warn!("{} with N = {n}: {e}", scheme.id());
                rec.set_error(f64::INFINITY, &ctx.fmt);
            }
        }
        Ok(rec)
    });
    let mut records = rows.into_iter().collect::<Result<Vec<_>>>()?;
    assign_slopes(&mut records);
    sort_records(&mut records);
    Ok(RunOutput { records, traces: Vec::new() })
}

/// q-order-preserving RK4 on a linear problem for each q.
pub fn run_qorder(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let setup = build_named(&cfg.problem, cfg.n_list.first().copied(), cfg.grading)?.with_t_end(cfg.t_end);
    let ctx = Context::new(cfg, &setup)?;
    let weights = rk4_linear_weights();
    let qs: Vec<usize> = if cfg.q_list.is_empty() { vec![0, 1, 2, 3] } else { cfg.q_list.clone() };
    if let Some(q) = qs.iter().find(|&&q| q > weights.len() - 1) {
        return Err(HarnessError::Config(format!("q = {q} exceeds the {} stages of RK4", weights.len() - 1)));
    }
    let every = cfg.sample_every.unwrap_or(cfg.dt_list[0]);
    let rho = spectral_radius(&setup.problem, &ctx.power);
    let reference = rk4_reference(
        &setup.problem.rhs,
        &setup.problem.y0,
        setup.problem.t_end,
        every,
        *cfg.dt_list.last().unwrap(),
        rho,
    )?;
    let points: Vec<(usize, f64)> = qs.iter().flat_map(|&q| cfg.dt_list.iter().map(move |&dt| (q, dt))).collect();
    let rows = parallel_map(&points, cfg.jobs, |&(q, dt)| -> Result<ExperimentRecord> {
        let mut rec = base_record(&format!("rk4-q{q}"), &setup, dt, 0.0, &ctx.fmt);
        let mut st = QOrderRkStepper::new(&setup.problem.rhs, ctx.fmt, q, weights.clone())?;
        let (trace, ms) = timed(|| run_sampled(&mut st, &setup, dt, every));
        rec.wall_ms = ms;
        match trace {
            Ok(trace) => {
                fill_from_trace(&mut rec, &trace);
                rec.set_error(error_measure(&trace.samples, &reference, setup.problem.error_kind)?, &ctx.fmt);
            }
            Err(HarnessError::Core(e)) => {
                warn!("q = {q} at Δt = {dt:e}: {e}");
                rec.set_error(f64::INFINITY, &ctx.fmt);
            }
            Err(e) => return Err(e),
        }
        Ok(rec)
    });
    let mut records = rows.into_iter().collect::<Result<Vec<_>>>()?;
    assign_slopes(&mut records);
    sort_records(&mut records);
    Ok(RunOutput { records, traces: Vec::new() })
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    match cfg.kind {
        ExperimentKind::Convergence => run_convergence(cfg),
        ExperimentKind::Stability => run_stability(cfg),
        ExperimentKind::Stages => run_stages(cfg),
        ExperimentKind::Spacetime => run_spacetime(cfg),
        ExperimentKind::Qorder => run_qorder(cfg),
    }
}

/// Writes one CSV per scheme (plus trace files for stability runs) and the
/// run manifest into `cfg.out`; returns every path written.
pub fn write_outputs(cfg: &ExperimentConfig, out: &RunOutput) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(&cfg.out)?;
    let mut by_scheme: BTreeMap<&str, Vec<ExperimentRecord>> = BTreeMap::new();
    for r in &out.records {
        by_scheme.entry(r.scheme.as_str()).or_default().push(r.clone());
    }
    let mut files = Vec::new();
    for (scheme, rows) in &by_scheme {
        let path = cfg.out.join(format!("{}_{}_{scheme}.csv", cfg.kind.id(), cfg.problem));
        write_records(fs::File::create(&path)?, rows)?;
        files.push(path);
        let trace: Vec<TraceRow> = out.traces.iter().filter(|t| t.scheme == *scheme).cloned().collect();
        if !trace.is_empty() {
            let path = cfg.out.join(format!("{}_{}_{scheme}_trace.csv", cfg.kind.id(), cfg.problem));
            write_trace(fs::File::create(&path)?, &trace)?;
            files.push(path);
        }
    }
    let manifest = write_manifest(cfg, &files)?;
    files.push(manifest);
    Ok(files)
}

//! CSV result tables and JSON run manifests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use stabmix_core::FloatFormat;

use crate::config::ExperimentConfig;
use crate::error::Result;

pub const CSV_HEADER_COMMENT: &str = "# stabmix-csv v1";

pub const CSV_COLUMNS: [&str; 16] = [
    "scheme",
    "problem",
    "N",
    "dt",
    "s",
    "m",
    "eta",
    "eps",
    "low_prec",
    "error_abs",
    "error_rel_u",
    "slope",
    "norm_ratio_final",
    "n_high_evals",
    "n_low_evals",
    "wall_ms",
];

/// One row of a result table.
///
/// `s` is the largest stage count used over the run. In stages studies
/// `error_abs` is the rounding error against the exact-arithmetic run and
/// `norm_ratio_final` holds the rounding/discretization error ratio.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentRecord {
    pub scheme: String,
    pub problem: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub dt: f64,
    pub s: usize,
    pub m: usize,
    pub eta: f64,
    pub eps: f64,
    pub low_prec: String,
    pub error_abs: Option<f64>,
    pub error_rel_u: Option<f64>,
    pub slope: Option<f64>,
    pub norm_ratio_final: f64,
    pub n_high_evals: u64,
    pub n_low_evals: u64,
    pub wall_ms: f64,
}

impl ExperimentRecord {
    /// Sets both error columns from the absolute error and the low format.
    pub fn set_error(&mut self, err: f64, fmt: &FloatFormat) {
        self.error_abs = Some(err);
        self.error_rel_u = Some(err / fmt.u());
    }
}

/// Rows sorted by scheme, N, decreasing Δt and s.
pub fn sort_records(rows: &mut [ExperimentRecord]) {
    rows.sort_by(|a, b| a.scheme.cmp(&b.scheme).then(a.n.cmp(&b.n)).then(b.dt.total_cmp(&a.dt)).then(a.s.cmp(&b.s)));
}

pub fn write_records<W: Write>(mut w: W, rows: &[ExperimentRecord]) -> Result<()> {
    writeln!(w, "{CSV_HEADER_COMMENT}")?;
    let mut csv = csv::Writer::from_writer(w);
    if rows.is_empty() {
        csv.write_record(CSV_COLUMNS)?;
    }
    for r in rows {
        csv.serialize(r)?;
    }
    csv.flush()?;
    Ok(())
}

/// Reads a table written by [`write_records`].
pub fn read_records(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let text = fs::read_to_string(path)?;
    let body = text.strip_prefix(CSV_HEADER_COMMENT).map(|b| b.trim_start_matches('\n')).unwrap_or(&text);
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let f = |i: usize| row.get(i).unwrap_or("");
        let num = |i: usize| f(i).parse::<f64>().unwrap_or(f64::NAN);
        let opt = |i: usize| if f(i).is_empty() { None } else { f(i).parse::<f64>().ok() };
        out.push(ExperimentRecord {
            scheme: f(0).into(),
            problem: f(1).into(),
            n: f(2).parse().unwrap_or(0),
            dt: num(3),
            s: f(4).parse().unwrap_or(0),
            m: f(5).parse().unwrap_or(0),
            eta: num(6),
            eps: num(7),
            low_prec: f(8).into(),
            error_abs: opt(9),
            error_rel_u: opt(10),
            slope: opt(11),
            norm_ratio_final: num(12),
            n_high_evals: f(13).parse().unwrap_or(0),
            n_low_evals: f(14).parse().unwrap_or(0),
            wall_ms: num(15),
        });
    }
    Ok(out)
}

/// Per-step norm ratios of a stability run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub scheme: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub s: usize,
    pub step: usize,
    pub t: f64,
    pub norm_ratio: f64,
}

pub fn write_trace<W: Write>(mut w: W, rows: &[TraceRow]) -> Result<()> {
    writeln!(w, "{CSV_HEADER_COMMENT}")?;
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        csv.serialize(r)?;
    }
    csv.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct FormatInfo {
    name: &'static str,
    t: u32,
    e_bits: u32,
    u: f64,
    xmin: f64,
    xmax: f64,
    subnormals: bool,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    schema: &'static str,
    version: String,
    experiment: &'static str,
    formats: Vec<FormatInfo>,
    config: &'a ExperimentConfig,
    files: Vec<String>,
}

/// Package version plus the source revision when it can be determined.
pub fn version_string() -> String {
    let rev = std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty());
    match rev {
        Some(r) => format!("{}+g{r}", env!("CARGO_PKG_VERSION")),
        None => env!("CARGO_PKG_VERSION").to_string(),
    }
}

pub fn write_manifest(cfg: &ExperimentConfig, files: &[PathBuf]) -> Result<PathBuf> {
    let formats = ["bfloat16", "fp16", "fp32", "fp64"]
        .iter()
        .map(|n| {
            let f = FloatFormat::by_name(n).expect("registered format");
            FormatInfo {
                name: f.name(),
                t: f.t(),
                e_bits: f.e_bits(),
                u: f.u(),
                xmin: f.xmin(),
                xmax: f.xmax(),
                subnormals: f.subnormals(),
            }
        })
        .collect();
    let manifest = Manifest {
        schema: "stabmix-csv v1",
        version: version_string(),
        experiment: cfg.kind.id(),
        formats,
        config: cfg,
        files: files.iter().filter_map(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()).collect(),
    };
    let path = cfg.out.join(format!("manifest_{}_{}.json", cfg.kind.id(), cfg.problem));
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(path)
}

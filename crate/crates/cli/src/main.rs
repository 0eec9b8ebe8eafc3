//! `poasim` command line: single runs and parameter sweeps.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use poasim_core::sweep::{self, Axis, MetricsRow, SweepPoint};
use poasim_core::{RunOutcome, Scenario};

const EXIT_CLEAN: u8 = 0;
const EXIT_INVALID: u8 = 1;
const EXIT_VIOLATION: u8 = 2;

#[derive(Parser)]
#[command(name = "poasim", version, about = "Deterministic PoA consensus simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write trace.ndjson, verdict.json and metrics.csv.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the seed stored in the scenario.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "POASIM_OUT_DIR")]
        out: PathBuf,
        /// Exit 0 only if some property is violated.
        #[arg(long)]
        expect_violation: bool,
    },
    /// One run per axis value, aggregated into a single metrics.csv.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// N, seed or adversaries
        #[arg(long)]
        axis: Axis,
        /// Comma separated; `lo..=hi` expands to an inclusive range.
        #[arg(long)]
        values: String,
        #[arg(long, env = "POASIM_OUT_DIR")]
        out: PathBuf,
    },
}

/// Parses `1,2,5..=8`.
fn parse_values(text: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((lo, hi)) = part.split_once("..=") {
            let lo: u64 = lo.trim().parse().with_context(|| format!("bad range start in {part:?}"))?;
            let hi: u64 = hi.trim().parse().with_context(|| format!("bad range end in {part:?}"))?;
            if lo > hi {
                bail!("empty range {part:?}");
            }
            out.extend(lo..=hi);
        } else {
            out.push(part.parse().with_context(|| format!("bad value {part:?}"))?);
        }
    }
    if out.is_empty() {
        bail!("--values must list at least one value");
    }
    Ok(out)
}

fn write_outcome(dir: &Path, o: &RunOutcome) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let trace = fs::File::create(dir.join("trace.ndjson"))?;
    o.trace.write_ndjson(std::io::BufWriter::new(trace))?;
    fs::write(dir.join("verdict.json"), serde_json::to_string_pretty(&o.verdict)?)?;
    Ok(())
}

fn summary(o: &RunOutcome) -> String {
    let v = &o.verdict;
    let violations = v.violated_properties();
    format!(
        "{} seed={} protocol={} N={} tps={:.2} latency_mean_ms={:.1} rounds_mean={:.2} cap={} consistency={} violations=[{}] digest={}",
        v.scenario,
        v.seed,
        v.protocol,
        v.n,
        o.metrics.throughput_tps,
        o.metrics.latency_mean_ms,
        o.metrics.rounds_mean,
        v.cap_label,
        v.consistency_class,
        violations.join(","),
        v.trace_digest,
    )
}

fn load(path: &Path) -> Result<Scenario, u8> {
    Scenario::load(path).map_err(|e| {
        eprintln!("{}: {e}", path.display());
        EXIT_INVALID
    })
}

fn cmd_run(scenario: &Path, seed: Option<u64>, out: &Path, expect_violation: bool) -> Result<u8> {
    let mut s = match load(scenario) {
        Ok(s) => s,
        Err(code) => return Ok(code),
    };
    if let Some(seed) = seed {
        s = s.with_seed(seed);
    }
    let o = poasim_core::run(&s);
    write_outcome(out, &o)?;
    let mut w = csv::Writer::from_path(out.join("metrics.csv"))?;
    w.serialize(MetricsRow::from_outcome(&o))?;
    w.flush()?;
    println!("{}", summary(&o));
    let violated = o.verdict.has_violation();
    Ok(match (expect_violation, violated) {
        (false, false) | (true, true) => EXIT_CLEAN,
        (false, true) | (true, false) => EXIT_VIOLATION,
    })
}

/// Sweep CSV line. Failed points leave the metric columns empty.
#[derive(serde::Serialize)]
struct SweepCsvRow {
    axis: String,
    value: u64,
    status: &'static str,
    error: String,
    scenario: Option<String>,
    seed: Option<u64>,
    protocol: Option<String>,
    #[serde(rename = "N")]
    n: Option<usize>,
    throughput_tps: Option<f64>,
    latency_mean_ms: Option<f64>,
    latency_p99_ms: Option<f64>,
    rounds_mean: Option<f64>,
    cap_label: Option<String>,
    consistency_class: Option<String>,
    violations: Option<String>,
}

impl SweepCsvRow {
    fn new(p: &SweepPoint) -> Self {
        let m = p.outcome.as_ref().ok().map(MetricsRow::from_outcome);
        let (status, error) = match &p.outcome {
            Ok(_) => ("ok", String::new()),
            Err(e) => ("failed", e.to_string()),
        };
        Self {
            axis: p.axis.to_string(),
            value: p.value,
            status,
            error,
            scenario: m.as_ref().map(|m| m.scenario.clone()),
            seed: m.as_ref().map(|m| m.seed),
            protocol: m.as_ref().map(|m| m.protocol.clone()),
            n: m.as_ref().map(|m| m.n),
            throughput_tps: m.as_ref().map(|m| m.throughput_tps),
            latency_mean_ms: m.as_ref().map(|m| m.latency_mean_ms),
            latency_p99_ms: m.as_ref().map(|m| m.latency_p99_ms),
            rounds_mean: m.as_ref().map(|m| m.rounds_mean),
            cap_label: m.as_ref().map(|m| m.cap_label.clone()),
            consistency_class: m.as_ref().map(|m| m.consistency_class.clone()),
            violations: m.map(|m| m.violations),
        }
    }
}

fn cmd_sweep(scenario: &Path, axis: Axis, values: &str, out: &Path) -> Result<u8> {
    let base = match load(scenario) {
        Ok(s) => s,
        Err(code) => return Ok(code),
    };
    let values = match parse_values(values) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("{e:#}");
            return Ok(EXIT_INVALID);
        }
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let points = sweep::sweep(&base, axis, &values);
    let mut w = csv::Writer::from_path(out.join("metrics.csv"))?;
    let (mut failed, mut violated) = (0usize, 0usize);
    for p in &points {
        w.serialize(SweepCsvRow::new(p))?;
        match &p.outcome {
            Ok(o) => {
                write_outcome(&out.join(format!("{}-{}", p.axis, p.value)), o)?;
                violated += o.verdict.has_violation() as usize;
                println!("{}={} {}", p.axis, p.value, summary(o));
            }
            Err(e) => {
                failed += 1;
                eprintln!("{}={} failed: {e}", p.axis, p.value);
            }
        }
    }
    w.flush()?;
    println!("{} points, {failed} failed, {violated} with violations", points.len());
    Ok(if failed > 0 {
        EXIT_INVALID
    } else if violated > 0 {
        EXIT_VIOLATION
    } else {
        EXIT_CLEAN
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { scenario, seed, out, expect_violation } => cmd_run(scenario, *seed, out, *expect_violation),
        Command::Sweep { scenario, axis, values, out } => cmd_sweep(scenario, *axis, values, out),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_lists() {
        assert_eq!(parse_values("4,6, 8").unwrap(), vec![4, 6, 8]);
        assert_eq!(parse_values("0..=3,7").unwrap(), vec![0, 1, 2, 3, 7]);
        assert!(parse_values("").is_err());
        assert!(parse_values("3..=1").is_err());
        assert!(parse_values("x").is_err());
    }
}

//! Report files. Every file carries the tool version, the config hash, the
//! master seed and the canonical config text needed to rerun it.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use poisson_chaos::mc::{ExperimentReport, Quantity};
use serde::Serialize;

use crate::settings::{Format, Settings};
use crate::suites::{CriterionRun, Outcome, Suite};
use crate::CliError;

pub const TOOL: &str = "pchaos";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    config_hash: String,
    master_seed: u64,
    config: String,
    #[serde(flatten)]
    body: &'a T,
}

#[derive(Serialize)]
struct ExperimentBody<'a> {
    size: f64,
    report: &'a ExperimentReport,
    reference: &'a BTreeMap<String, f64>,
}

/// Writes the outcome under `settings.out` and returns the paths written.
pub fn write(settings: &Settings, outcome: &Outcome) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(&settings.out)?;
    let mut written = Vec::new();
    match outcome {
        Outcome::Experiment(suite) => {
            let stem = &suite.report.name;
            match settings.format {
                Format::Json => {
                    let body = ExperimentBody {
                        size: suite.size,
                        report: &suite.report,
                        reference: &suite.reference,
                    };
                    written.push(write_json(settings, &format!("{stem}.json"), &body)?);
                }
                Format::Csv => {
                    written.push(write_summary_csv(settings, suite)?);
                    written.push(write_verdicts_csv(settings, suite)?);
                    let path = settings.out.join(format!("{stem}.values.csv"));
                    let mut buf = header_lines(settings);
                    suite.report.write_values_csv(&mut buf)?;
                    fs::write(&path, buf)?;
                    written.push(path);
                }
            }
        }
        Outcome::Criterion(run) => {
            written.push(write_json(settings, "criterion.json", run)?);
            if settings.format == Format::Csv {
                written.push(write_criterion_csv(settings, run)?);
            }
        }
        Outcome::Pattern(p) => {
            let path = settings.out.join("pattern.csv");
            let mut buf = header_lines(settings);
            p.write_csv(&mut buf)?;
            fs::write(&path, buf)?;
            written.push(path);
        }
    }
    Ok(written)
}

fn write_json<T: Serialize>(settings: &Settings, name: &str, body: &T) -> Result<PathBuf, CliError> {
    let env = Envelope {
        tool: TOOL,
        version: VERSION,
        config_hash: settings.config_hash(),
        master_seed: settings.seed,
        config: settings.canonical_text(),
        body,
    };
    let path = settings.out.join(name);
    let mut text = serde_json::to_string_pretty(&env)?;
    text.push('\n');
    fs::write(&path, text)?;
    Ok(path)
}

/// `# key = value` metadata lines followed by the canonical config as `#! ` lines.
fn header_lines(settings: &Settings) -> Vec<u8> {
    let mut out = Vec::new();
    let _ = writeln!(out, "# tool = {TOOL}");
    let _ = writeln!(out, "# version = {VERSION}");
    let _ = writeln!(out, "# config_hash = {}", settings.config_hash());
    let _ = writeln!(out, "# master_seed = {}", settings.seed);
    for line in settings.canonical_text().lines().filter(|l| !l.is_empty()) {
        let _ = writeln!(out, "#! {line}");
    }
    out
}

/// Canonical config text recovered from the `#!` lines of a CSV output or
/// the `config` field of a JSON output.
pub fn embedded_config(text: &str) -> Option<String> {
    if let Ok(v) = serde_json::from_str::<serde_json::Value>(text) {
        return v.get("config")?.as_str().map(str::to_string);
    }
    let lines: Vec<&str> = text.lines().filter_map(|l| l.strip_prefix("#! ")).collect();
    (!lines.is_empty()).then(|| {
        let mut s = String::new();
        for l in lines {
            if l.starts_with('[') && !s.is_empty() {
                s.push('\n');
            }
            s.push_str(l);
            s.push('\n');
        }
        s
    })
}

fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v:e}")
    } else {
        String::new()
    }
}

fn write_summary_csv(settings: &Settings, suite: &Suite) -> Result<PathBuf, CliError> {
    let path = settings.out.join(format!("{}.csv", suite.report.name));
    let mut buf = header_lines(settings);
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["series", "T", "mean", "var", "var_se", "m3", "m4", "ks", "target", "verdict"])?;
        for s in &suite.report.series {
            // the series row carries its variance target; every verdict goes to the verdicts file
            let v = suite
                .targets
                .iter()
                .zip(&suite.report.verdicts)
                .find(|(t, _)| matches!(&t.quantity, Quantity::Variance { series } if *series == s.name))
                .map(|(_, v)| v);
            let m = &s.summary;
            w.write_record([
                s.name.clone(),
                fmt(suite.size),
                fmt(m.mean),
                fmt(m.variance),
                fmt(m.variance_se),
                fmt(m.skewness * m.variance.powf(1.5)),
                fmt(m.fourth_moment),
                fmt(m.ks),
                v.map(|v| fmt(v.target)).unwrap_or_default(),
                v.map(|v| if v.pass { "PASS" } else { "FAIL" }.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
    }
    fs::write(&path, buf)?;
    Ok(path)
}

fn write_verdicts_csv(settings: &Settings, suite: &Suite) -> Result<PathBuf, CliError> {
    let path = settings.out.join(format!("{}.verdicts.csv", suite.report.name));
    let mut buf = header_lines(settings);
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["label", "estimate", "se", "target", "within_tolerance", "within_3se", "verdict"])?;
        for v in &suite.report.verdicts {
            w.write_record([
                v.label.clone(),
                fmt(v.estimate),
                fmt(v.se),
                fmt(v.target),
                v.within_tolerance.to_string(),
                v.within_3se.to_string(),
                if v.pass { "PASS" } else { "FAIL" }.to_string(),
            ])?;
        }
        w.flush()?;
    }
    fs::write(&path, buf)?;
    Ok(path)
}

fn write_criterion_csv(settings: &Settings, run: &CriterionRun) -> Result<PathBuf, CliError> {
    let path = settings.out.join("criterion.csv");
    let mut buf = header_lines(settings);
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["index", "norm2_doubled", "l4", "n11", "n21", "n10", "fourth_moment_chaos", "fourth_moment_exact", "e_f4", "flagged"])?;
        for r in &run.reports {
            w.write_record([
                fmt(r.index),
                fmt(r.norm2_doubled),
                fmt(r.l4),
                fmt(r.n11),
                fmt(r.n21),
                fmt(r.n10),
                fmt(r.fourth_moment_chaos),
                fmt(r.fourth_moment_exact),
                fmt(r.e_f4),
                r.flagged.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
    }
    fs::write(&path, buf)?;
    Ok(path)
}

/// One line per verdict for the terminal.
pub fn summary_lines(outcome: &Outcome) -> Vec<String> {
    let mark = |p: bool| if p { "PASS" } else { "FAIL" };
    match outcome {
        Outcome::Experiment(s) => {
            let mut lines = vec![format!("{} (R = {}, seed = {})", s.report.name, s.report.reps, s.report.master_seed)];
            for v in &s.report.verdicts {
                lines.push(format!("  {} {}: estimate {:.6} ± {:.6}, target {:.6}", mark(v.pass), v.label, v.estimate, v.se, v.target));
            }
            for (k, v) in &s.reference {
                lines.push(format!("  reference {k} = {v:.6}"));
            }
            lines
        }
        Outcome::Criterion(c) => {
            let mut lines = vec![format!("criterion family {} (λ = {})", c.family, c.lambda)];
            let checks: Vec<_> = match (&c.sequence, &c.single) {
                (Some(s), _) => vec![&s.normalization, &s.fourth_power, &s.contraction_11, &s.contraction_21],
                (None, Some(s)) => vec![&s.norm, &s.cube],
                _ => vec![],
            };
            for ch in checks {
                let slope = ch.slope.map(|s| format!("{:.3}", s.slope)).unwrap_or_else(|| "n/a".into());
                lines.push(format!("  {} {} → {}: first {:.4e}, last {:.4e}, slope {slope}", mark(ch.pass), ch.quantity, ch.limit, ch.initial, ch.last));
            }
            lines.push(format!("  {}", mark(c.pass)));
            lines
        }
        Outcome::Pattern(p) => vec![format!("pattern: {} atoms", p.len())],
    }
}

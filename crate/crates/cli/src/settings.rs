//! Command-line flags, config-file values and their merge.
//!
//! Flags override config-file values, which override built-in defaults. The
//! resolved settings are rendered back into canonical config text; its
//! SHA-256 is the config hash embedded in every output, and feeding that text
//! back through `--config` reproduces the run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use poisson_chaos::config::{parse_number, Config};
use poisson_chaos::point_process::{control_from_config, ControlMeasure};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const DEFAULT_SEED: u64 = 20_240_917;
pub const DEFAULT_REPS: usize = 5000;

#[derive(Debug, Parser)]
#[command(name = "pchaos", version, about = "Poisson chaos CLT experiments")]
pub struct Cli {
    /// flat `key = value` config file with `[section]` headers
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// master seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// number of replications
    #[arg(long, global = true, visible_alias = "R")]
    pub reps: Option<usize>,
    /// output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub format: Option<Format>,
    /// worker threads (does not change any output)
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Option<Cmd>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

impl Format {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "json" => Some(Self::Json),
            "csv" => Some(Self::Csv),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Json => "json",
            Self::Csv => "csv",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// contraction-norm audit of a kernel sequence
    Criterion {
        #[arg(long)]
        family: Option<String>,
        /// comma-separated sequence indices
        #[arg(long)]
        indices: Option<String>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// second-order chaos of the block kernel
    Block {
        #[arg(long)]
        n: Option<usize>,
    },
    /// Ornstein–Uhlenbeck time averages
    Ou {
        #[arg(long)]
        theorem: Option<u8>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long = "T")]
        horizon: Option<f64>,
    },
    /// random hazard rates
    Hazard {
        #[arg(long)]
        theorem: Option<u8>,
        #[arg(long)]
        case: Option<u8>,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long = "T")]
        horizon: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// raw point-pattern dump
    Sample {
        #[arg(long)]
        x_lo: Option<f64>,
        #[arg(long)]
        x_hi: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Job {
    Criterion { family: String, indices: Vec<f64>, lambda: f64 },
    Block { n: usize },
    Ou { theorem: u8, lambda: f64, horizon: f64 },
    Hazard(HazardJob),
    Sample { x_lo: f64, x_hi: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum HazardJob {
    Thm7 { case: u8, tau: f64, horizon: f64, epsilon: Option<f64> },
    Thm8 { raw: bool, tau: f64, horizon: f64 },
}

impl Job {
    pub fn name(&self) -> &'static str {
        match self {
            Job::Criterion { .. } => "criterion",
            Job::Block { .. } => "block",
            Job::Ou { .. } => "ou",
            Job::Hazard(_) => "hazard",
            Job::Sample { .. } => "sample",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub job: Job,
    pub seed: u64,
    pub reps: usize,
    pub format: Format,
    pub out: PathBuf,
    pub workers: usize,
    /// `[control]` entries as given, in file order
    pub control_entries: Vec<(String, String)>,
    pub control: Option<ControlMeasure>,
}

/// Lookup over flags first, then the config file.
struct Merged {
    file: Config,
    flags: BTreeMap<(&'static str, &'static str), String>,
}

impl Merged {
    fn raw(&self, section: &'static str, key: &'static str) -> Option<(String, usize)> {
        if let Some(v) = self.flags.get(&(section, key)) {
            return Some((v.clone(), 0));
        }
        self.file.entry(section, key).map(|e| (e.value.clone(), e.line))
    }

    fn f64(&self, section: &'static str, key: &'static str, default: f64) -> Result<f64, CliError> {
        match self.raw(section, key) {
            None => Ok(default),
            Some((v, line)) => parse_number(&v)
                .filter(|x| x.is_finite())
                .ok_or_else(|| CliError::Usage(format!("{}`{section}.{key}` = `{v}` is not a number", at(line)))),
        }
    }

    fn u64(&self, section: &'static str, key: &'static str, default: u64) -> Result<u64, CliError> {
        match self.raw(section, key) {
            None => Ok(default),
            Some((v, line)) => v
                .parse()
                .map_err(|_| CliError::Usage(format!("{}`{section}.{key}` = `{v}` is not a non-negative integer", at(line)))),
        }
    }

    fn string(&self, section: &'static str, key: &'static str, default: &str) -> String {
        self.raw(section, key).map(|(v, _)| v).unwrap_or_else(|| default.to_string())
    }
}

fn at(line: usize) -> String {
    if line == 0 {
        String::new()
    } else {
        format!("config line {line}: ")
    }
}

impl Settings {
    pub fn resolve(cli: Cli) -> Result<Self, CliError> {
        let file = match &cli.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
                Config::parse(&text).map_err(|e| CliError::Usage(e.to_string()))?
            }
            None => Config::default(),
        };
        let mut flags = BTreeMap::new();
        let mut put = |s: &'static str, k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                flags.insert((s, k), v);
            }
        };
        put("run", "seed", cli.seed.map(|v| v.to_string()));
        put("run", "reps", cli.reps.map(|v| v.to_string()));
        put("run", "format", cli.format.map(|f| f.as_str().to_string()));
        put("run", "workers", cli.workers.map(|v| v.to_string()));
        put("run", "out", cli.out.as_ref().map(|p| p.display().to_string()));
        let command = match &cli.command {
            Some(c) => c.name().to_string(),
            None => file
                .get("run", "command")
                .ok_or_else(|| CliError::Usage("no subcommand given and no `[run] command` in the config".into()))?
                .to_string(),
        };
        if let (Some(c), Some(fc)) = (&cli.command, file.get("run", "command")) {
            if c.name() != fc {
                return Err(CliError::Usage(format!("subcommand `{}` conflicts with config command `{fc}`", c.name())));
            }
        }
        if let Some(c) = cli.command {
            c.into_flags(&mut put);
        }
        let m = Merged { file, flags };

        let job = match command.as_str() {
            "criterion" => {
                let family = m.string("criterion", "family", "block");
                let indices = match m.raw("criterion", "indices") {
                    Some((v, line)) => parse_list(&v).ok_or_else(|| CliError::Usage(format!("{}bad index list `{v}`", at(line))))?,
                    None => default_indices(&family),
                };
                Job::Criterion {
                    family,
                    indices,
                    lambda: m.f64("criterion", "lambda", 1.0)?,
                }
            }
            "block" => Job::Block {
                n: m.u64("block", "n", 50)? as usize,
            },
            "ou" => Job::Ou {
                theorem: m.u64("ou", "theorem", 4)? as u8,
                lambda: m.f64("ou", "lambda", 1.0)?,
                horizon: m.f64("ou", "T", 100.0)?,
            },
            "hazard" => {
                let tau = m.f64("hazard", "tau", 1.0)?;
                let theorem = m.u64("hazard", "theorem", 7)?;
                match theorem {
                    7 => Job::Hazard(HazardJob::Thm7 {
                        case: m.u64("hazard", "case", 1)? as u8,
                        tau,
                        horizon: m.f64("hazard", "T", 200.0)?,
                        epsilon: m.raw("hazard", "epsilon").map(|_| m.f64("hazard", "epsilon", 0.0)).transpose()?,
                    }),
                    8 => {
                        let variant = m.string("hazard", "variant", "raw");
                        let raw = match variant.as_str() {
                            "raw" => true,
                            "centered" => false,
                            other => return Err(CliError::Usage(format!("unknown variant `{other}` (raw | centered)"))),
                        };
                        Job::Hazard(HazardJob::Thm8 {
                            raw,
                            tau,
                            horizon: m.f64("hazard", "T", 400.0)?,
                        })
                    }
                    other => return Err(CliError::Usage(format!("hazard theorem {other} (expected 7 or 8)"))),
                }
            }
            "sample" => Job::Sample {
                x_lo: m.f64("sample", "x_lo", 0.0)?,
                x_hi: m.f64("sample", "x_hi", 10.0)?,
            },
            other => return Err(CliError::Usage(format!("unknown command `{other}`"))),
        };

        let format_s = m.string("run", "format", "json");
        let format = Format::parse(&format_s).ok_or_else(|| CliError::Usage(format!("unknown format `{format_s}`")))?;
        let workers = match m.u64("run", "workers", 0)? {
            0 => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            w => w as usize,
        };
        let control_entries: Vec<(String, String)> = m
            .file
            .section("control")
            .map(|s| s.entries.iter().map(|e| (e.key.clone(), e.value.clone())).collect())
            .unwrap_or_default();
        let control = if control_entries.is_empty() {
            None
        } else {
            Some(control_from_config(&m.file, "control").map_err(|e| CliError::Usage(e.to_string()))?)
        };
        Ok(Self {
            job,
            seed: m.u64("run", "seed", DEFAULT_SEED)?,
            reps: m.u64("run", "reps", DEFAULT_REPS as u64)? as usize,
            format,
            out: PathBuf::from(m.string("run", "out", ".")),
            workers,
            control_entries,
            control,
        })
    }

    /// Config text that reproduces this run; output location, format and
    /// worker count are excluded because they never change results.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[run]");
        let _ = writeln!(s, "command = {}", self.job.name());
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "reps = {}", self.reps);
        let _ = writeln!(s, "\n[{}]", self.job.name());
        match &self.job {
            Job::Criterion { family, indices, lambda } => {
                let list: Vec<String> = indices.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(s, "family = {family}\nindices = {}\nlambda = {lambda}", list.join(", "));
            }
            Job::Block { n } => {
                let _ = writeln!(s, "n = {n}");
            }
            Job::Ou { theorem, lambda, horizon } => {
                let _ = writeln!(s, "theorem = {theorem}\nlambda = {lambda}\nT = {horizon}");
            }
            Job::Hazard(HazardJob::Thm7 { case, tau, horizon, epsilon }) => {
                let _ = writeln!(s, "theorem = 7\ncase = {case}\ntau = {tau}\nT = {horizon}");
                if let Some(e) = epsilon {
                    let _ = writeln!(s, "epsilon = {e}");
                }
            }
            Job::Hazard(HazardJob::Thm8 { raw, tau, horizon }) => {
                let v = if *raw { "raw" } else { "centered" };
                let _ = writeln!(s, "theorem = 8\nvariant = {v}\ntau = {tau}\nT = {horizon}");
            }
            Job::Sample { x_lo, x_hi } => {
                let _ = writeln!(s, "x_lo = {x_lo}\nx_hi = {x_hi}");
            }
        }
        if !self.control_entries.is_empty() {
            let _ = writeln!(s, "\n[control]");
            for (k, v) in &self.control_entries {
                let _ = writeln!(s, "{k} = {v}");
            }
        }
        s
    }

    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut acc, b| {
            let _ = write!(acc, "{b:02x}");
            acc
        })
    }
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::Criterion { .. } => "criterion",
            Cmd::Block { .. } => "block",
            Cmd::Ou { .. } => "ou",
            Cmd::Hazard { .. } => "hazard",
            Cmd::Sample { .. } => "sample",
        }
    }

    fn into_flags(self, put: &mut impl FnMut(&'static str, &'static str, Option<String>)) {
        let s = |v: Option<f64>| v.map(|x| x.to_string());
        match self {
            Cmd::Criterion { family, indices, lambda } => {
                put("criterion", "family", family);
                put("criterion", "indices", indices);
                put("criterion", "lambda", s(lambda));
            }
            Cmd::Block { n } => put("block", "n", n.map(|v| v.to_string())),
            Cmd::Ou { theorem, lambda, horizon } => {
                put("ou", "theorem", theorem.map(|v| v.to_string()));
                put("ou", "lambda", s(lambda));
                put("ou", "T", s(horizon));
            }
            Cmd::Hazard {
                theorem,
                case,
                variant,
                tau,
                horizon,
                epsilon,
            } => {
                put("hazard", "theorem", theorem.map(|v| v.to_string()));
                put("hazard", "case", case.map(|v| v.to_string()));
                put("hazard", "variant", variant);
                put("hazard", "tau", s(tau));
                put("hazard", "T", s(horizon));
                put("hazard", "epsilon", s(epsilon));
            }
            Cmd::Sample { x_lo, x_hi } => {
                put("sample", "x_lo", s(x_lo));
                put("sample", "x_hi", s(x_hi));
            }
        }
    }
}

fn parse_list(s: &str) -> Option<Vec<f64>> {
    let v: Option<Vec<f64>> = s.split(',').map(|t| parse_number(t.trim()).filter(|x| x.is_finite())).collect();
    v.filter(|v| !v.is_empty())
}

pub fn default_indices(family: &str) -> Vec<f64> {
    match family {
        "block" => vec![10.0, 30.0, 100.0, 300.0, 1000.0],
        "fixed" => vec![1.0, 2.0, 3.0, 4.0, 5.0],
        "block-single" => vec![4.0, 16.0, 64.0, 256.0, 1024.0],
        _ => vec![25.0, 50.0, 100.0, 200.0, 400.0, 800.0],
    }
}

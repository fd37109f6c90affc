//! Command-line front end. `run` is what the binary calls; it writes to the
//! given sinks and returns the process exit code.
//!
//! Exit codes: 0 success (for `gate`, ratio below threshold), 2 when `gate`
//! finds the application profile-worthy, 1 on any error or usage problem.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::accuracy_sim::{check_rare_detectability, simulate, SimSpec};
use crate::config::{ConfigFile, Settings, Thresholds};
use crate::error::{Error, Result};
use crate::metrics::{SampleScope, DEFAULT_Z};
use crate::package_mapper::RootConfig;
use crate::report::{analyze, diff, ingest, render_diff, render_json, render_text, IngestOptions, Ingested};

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_PROFILE_WORTHY: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "coldprof", version, about = "Cold-start library usage analyzer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Debug, Args)]
struct Common {
    /// Directory of `.trace` files.
    #[arg(long, env = "COLDPROF_OUT")]
    traces: PathBuf,
    /// TOML file with source roots and optional thresholds.
    #[arg(long, env = "COLDPROF_ROOTS")]
    roots: Option<PathBuf>,
    /// Skip unreadable or invalid trace files with a warning.
    #[arg(long)]
    lenient: bool,
    /// Gate threshold on mean library init time over mean execution time.
    #[arg(long, env = "COLDPROF_THRESHOLD_RATIO")]
    threshold_ratio: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Decide whether library initialization is large enough to profile.
    Gate {
        #[command(flatten)]
        common: Common,
    },
    /// Per-library utilization, overheads, findings and call paths.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        /// Minimum share of library init time, in percent, to report.
        #[arg(long, env = "COLDPROF_OVERHEAD_PCT")]
        overhead_pct: Option<f64>,
        /// Utilization below which a library is rarely used, in percent.
        #[arg(long, env = "COLDPROF_RARE_UTIL_PCT")]
        rare_util_pct: Option<f64>,
        /// Minimum number of EXEC samples required.
        #[arg(long, env = "COLDPROF_MIN_SAMPLES")]
        min_samples: Option<u64>,
        /// Call paths shown per finding.
        #[arg(long, env = "COLDPROF_TOP_K")]
        top_k: Option<usize>,
        /// Normal quantile for utilization intervals.
        #[arg(long)]
        z: Option<f64>,
        /// Count initialization-phase samples toward utilization.
        #[arg(long)]
        all_samples: bool,
        /// Also write collapsed stacks for flame graph tools.
        #[arg(long)]
        collapsed: Option<PathBuf>,
        /// Also write the canonical calling context tree dump.
        #[arg(long)]
        cct_dump: Option<PathBuf>,
    },
    /// Compare latencies before and after an optimization.
    Diff {
        before: PathBuf,
        after: PathBuf,
        #[arg(long, env = "COLDPROF_ROOTS")]
        roots: Option<PathBuf>,
        #[arg(long)]
        lenient: bool,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Monte-Carlo check of utilization interval coverage.
    Simulate {
        /// True usage frequencies.
        #[arg(long = "p", value_delimiter = ',', required = true)]
        p: Vec<f64>,
        #[arg(long, default_value_t = 10_000)]
        n: u64,
        #[arg(long, default_value_t = 2_000)]
        trials: u64,
        #[arg(long, default_value_t = DEFAULT_Z)]
        z: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also estimate how often a library of this frequency is sampled at least once.
        #[arg(long)]
        rare: Option<f64>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
}

/// Parses `args` (including the program name) and executes the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = out.write_all(text.as_bytes());
                    EXIT_OK
                }
                _ => {
                    let _ = err.write_all(text.as_bytes());
                    EXIT_ERROR
                }
            };
        }
    };
    match execute(cli.command, err) {
        Ok((code, text)) => {
            let _ = out.write_all(text.as_bytes());
            code
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_ERROR
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    path.map_or_else(|| Ok(ConfigFile::default()), ConfigFile::load)
}

fn load_bundle(
    dir: &Path,
    roots: &RootConfig,
    opts: &IngestOptions,
    err: &mut dyn Write,
) -> Result<Ingested> {
    let ingested = ingest(dir, roots, opts)?;
    for (path, reason) in &ingested.skipped {
        let _ = writeln!(err, "warning: skipped {}: {reason}", path.display());
    }
    Ok(ingested)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn execute(command: Command, err: &mut dyn Write) -> Result<(u8, String)> {
    match command {
        Command::Gate { common } => {
            let config = load_config(common.roots.as_deref())?;
            let settings = config.resolve(&Thresholds {
                threshold_ratio: common.threshold_ratio,
                ..Default::default()
            });
            let opts = IngestOptions {
                lenient: common.lenient,
                threshold: settings.threshold_ratio,
                ..Default::default()
            };
            let bundle = load_bundle(&common.traces, &config.root_config(), &opts, err)?.bundle;
            let g = &bundle.gate;
            let (verdict, code) = if g.profile_worthy {
                ("profile-worthy", EXIT_PROFILE_WORTHY)
            } else {
                ("insignificant cold-start impact", EXIT_OK)
            };
            let text = format!(
                "ratio {:.4} {} threshold {:.4}: {verdict} (mean library init {:.2} ms, mean exec {:.2} ms, {} invocations)\n",
                g.ratio,
                if g.profile_worthy { ">=" } else { "<" },
                g.threshold,
                g.mean_init_us / 1000.0,
                g.mean_exec_us / 1000.0,
                bundle.invocation_count
            );
            Ok((code, text))
        }
        Command::Report {
            common,
            format,
            overhead_pct,
            rare_util_pct,
            min_samples,
            top_k,
            z,
            all_samples,
            collapsed,
            cct_dump,
        } => {
            let config = load_config(common.roots.as_deref())?;
            let Settings {
                threshold_ratio,
                mut detector,
            } = config.resolve(&Thresholds {
                threshold_ratio: common.threshold_ratio,
                overhead_pct,
                rare_util_pct,
                min_samples,
                top_k,
                z,
            });
            if all_samples {
                detector.scope = SampleScope::AllSamples;
            }
            detector.validate()?;
            let opts = IngestOptions {
                lenient: common.lenient,
                threshold: threshold_ratio,
                z: detector.z,
                scope: detector.scope,
            };
            let roots = config.root_config();
            let mut bundle = load_bundle(&common.traces, &roots, &opts, err)?.bundle;
            analyze(&mut bundle, &detector)?;
            let text = match format {
                Format::Text => render_text(&bundle, detector.top_k_paths),
                Format::Json => render_json(&bundle)? + "\n",
            };
            if let Some(path) = collapsed {
                write_file(&path, &bundle.cct.collapsed_stacks(&roots))?;
            }
            if let Some(path) = cct_dump {
                write_file(&path, &bundle.cct.canonical_dump())?;
            }
            Ok((EXIT_OK, text))
        }
        Command::Diff {
            before,
            after,
            roots,
            lenient,
            format,
        } => {
            let config = load_config(roots.as_deref())?;
            let roots = config.root_config();
            let opts = IngestOptions {
                lenient,
                threshold: config.resolve(&Thresholds::default()).threshold_ratio,
                ..Default::default()
            };
            let before = load_bundle(&before, &roots, &opts, err)?.bundle;
            let after = load_bundle(&after, &roots, &opts, err)?.bundle;
            let report = diff(&before, &after);
            let text = match format {
                Format::Text => render_diff(&report),
                Format::Json => json(&report)? + "\n",
            };
            Ok((EXIT_OK, text))
        }
        Command::Simulate {
            p,
            n,
            trials,
            z,
            seed,
            rare,
            format,
        } => {
            let report = simulate(&SimSpec {
                p_true: p,
                n_samples: n,
                trials,
                z,
                seed,
            })?;
            let detect = rare
                .map(|p| check_rare_detectability(p, n, trials, seed))
                .transpose()?;
            let text = match format {
                Format::Json => {
                    json(&serde_json::json!({ "simulation": report, "detectability": detect }))? + "\n"
                }
                Format::Text => {
                    let mut s = format!("N = {n}, trials = {trials}, z = {z}, seed = {seed}\n");
                    let _ = writeln!(
                        s,
                        "{:>8}  {:>8}  {:>10}  {:>10}  {:>10}",
                        "p", "coverage", "mean width", "min width", "mean |err|"
                    );
                    for lib in &report.libraries {
                        let _ = writeln!(
                            s,
                            "{:>8}  {:>8.4}  {:>10.6}  {:>10.6}  {:>10.6}",
                            lib.p_true, lib.coverage, lib.mean_width, lib.min_width, lib.mean_abs_error
                        );
                    }
                    if let Some(d) = detect {
                        let _ = writeln!(
                            s,
                            "p = {} sampled at least once in {:.4} of trials (analytic {:.4})",
                            d.p_rare, d.detected_fraction, d.analytic
                        );
                    }
                    s
                }
            };
            Ok((EXIT_OK, text))
        }
    }
}

fn json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::InvalidArgument(e.to_string()))
}

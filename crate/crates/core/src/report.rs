//! Post-mortem pipeline over a trace directory and the report renderers.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cct::CallingContextTree;
use crate::detector::{detect, DetectorConfig, Finding};
use crate::error::{Error, Result};
use crate::metrics::{
    init_ratio, library_stats, scope_total, subject_samples, GateResult, LibraryStats, SampleScope,
    DEFAULT_GATE_THRESHOLD, DEFAULT_Z,
};
use crate::package_mapper::{build_module_tree, ModuleTree, RootConfig, APP_ROOT, STDLIB_ROOT, UNKNOWN_ROOT};
use crate::trace_model::{list_trace_files, read_trace, CallPath, InvocationTrace};

/// Frames shown in a call-path panel before the middle is elided.
const MAX_PANEL_FRAMES: usize = 4;
const ELIDED_FRAMES: &str = "<... parent path ...>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvocationLatency {
    pub invocation_id: String,
    pub init_us: u64,
    pub exec_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileBundle {
    pub app_id: String,
    pub manifest_hash: String,
    pub invocation_count: usize,
    pub dropped_samples: u64,
    pub roots: RootConfig,
    pub module_tree: ModuleTree,
    pub cct: CallingContextTree,
    pub stats: Vec<LibraryStats>,
    pub findings: Vec<Finding>,
    pub gate: GateResult,
    pub latencies: Vec<InvocationLatency>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOptions {
    pub lenient: bool,
    pub threshold: f64,
    pub z: f64,
    pub scope: SampleScope,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            lenient: false,
            threshold: DEFAULT_GATE_THRESHOLD,
            z: DEFAULT_Z,
            scope: SampleScope::ExecOnly,
        }
    }
}

#[derive(Debug)]
pub struct Ingested {
    pub bundle: ProfileBundle,
    /// Files skipped under `lenient`, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

fn load(path: &Path) -> Result<InvocationTrace> {
    let trace = read_trace(path)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    if stem != trace.meta.invocation_id {
        return Err(Error::TraceFile {
            path: path.to_path_buf(),
            source: Box::new(Error::InvalidArgument(format!(
                "file name does not match invocation id `{}`",
                trace.meta.invocation_id
            ))),
        });
    }
    Ok(trace)
}

/// Parses, validates and merges every trace in `dir`, then builds the
/// module tree, the annotated CCT, per-library statistics and the gate.
/// Findings are left empty; see [`analyze`].
pub fn ingest(dir: &Path, roots: &RootConfig, opts: &IngestOptions) -> Result<Ingested> {
    let files = list_trace_files(dir)?;
    if files.is_empty() {
        return Err(Error::EmptyTraceDir(dir.to_path_buf()));
    }
    let loaded: Vec<(PathBuf, Result<InvocationTrace>)> =
        files.into_par_iter().map(|p| (p.clone(), load(&p))).collect();

    let mut traces = Vec::with_capacity(loaded.len());
    let mut skipped = Vec::new();
    for (path, result) in loaded {
        match result {
            Ok(t) => traces.push(t),
            Err(e) if opts.lenient => skipped.push((path, e.to_string())),
            Err(e) => return Err(e),
        }
    }
    let Some(first) = traces.first() else {
        return Err(Error::EmptyTraceDir(dir.to_path_buf()));
    };
    let manifest = first.meta.code_manifest_hash.clone();
    let app_id = first.meta.app_id.clone();
    if let Some(stale) = traces.iter().find(|t| t.meta.code_manifest_hash != manifest) {
        return Err(Error::ManifestMismatch {
            expected: manifest,
            found: stale.meta.code_manifest_hash.clone(),
        });
    }

    let module_tree = build_module_tree(&traces, roots)?;
    let mut cct = traces
        .par_iter()
        .map(|t| Ok(CallingContextTree::for_trace(t)))
        .try_reduce(CallingContextTree::new, |a, b| a.merge(b))?;
    cct.annotate_libraries(roots);

    let metas: Vec<_> = traces.iter().map(|t| t.meta.clone()).collect();
    let gate = init_ratio(&metas, &module_tree, opts.threshold)?;
    let stats = if scope_total(&cct, opts.scope) > 0 {
        library_stats(&module_tree, &cct, opts.z, opts.scope)?
    } else {
        Vec::new()
    };

    Ok(Ingested {
        bundle: ProfileBundle {
            app_id,
            manifest_hash: manifest,
            invocation_count: traces.len(),
            dropped_samples: metas.iter().map(|m| m.dropped_samples).sum(),
            roots: roots.clone(),
            module_tree,
            cct,
            stats,
            findings: Vec::new(),
            gate,
            latencies: metas
                .iter()
                .map(|m| InvocationLatency {
                    invocation_id: m.invocation_id.clone(),
                    init_us: m.init_end_us,
                    exec_us: m.exec_duration_us(),
                })
                .collect(),
        },
        skipped,
    })
}

/// Runs the detector over an ingested bundle.
pub fn analyze(bundle: &mut ProfileBundle, cfg: &DetectorConfig) -> Result<()> {
    bundle.findings = detect(&bundle.stats, &bundle.module_tree, &bundle.cct, cfg)?;
    Ok(())
}

fn pct(share: f64) -> String {
    format!("{:.2}", share * 100.0)
}

/// Frames shown in a finding's call-path panel. For a library the chain
/// stops at the import site outside it; for a package inside a library it
/// includes the package frame that was entered.
pub fn panel_frames(finding: &Finding, path: &CallPath, roots: &RootConfig) -> Vec<String> {
    let frames = &path.frames;
    let shown = if finding.is_library() && frames.len() > 1 {
        &frames[..frames.len() - 1]
    } else {
        &frames[..]
    };
    let mut out: Vec<String> = shown
        .iter()
        .map(|f| format!("{}:{}", roots.display_path(&f.file_path), f.line))
        .collect();
    if out.len() > MAX_PANEL_FRAMES {
        let last = out.pop().expect("non-empty");
        out.truncate(MAX_PANEL_FRAMES - 2);
        out.push(ELIDED_FRAMES.to_string());
        out.push(last);
    }
    out
}

/// Rendered evidence chains of a finding, with paths that render the same
/// merged, most-sampled first.
pub fn panel_chains(finding: &Finding, roots: &RootConfig) -> Vec<(Vec<String>, u64)> {
    let mut chains: Vec<(Vec<String>, u64)> = Vec::new();
    for e in &finding.evidence_paths {
        let frames = panel_frames(finding, &e.path, roots);
        match chains.iter_mut().find(|(f, _)| *f == frames) {
            Some((_, count)) => *count += e.count,
            None => chains.push((frames, e.count)),
        }
    }
    chains.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    chains
}

/// Indented arrow chain, one frame per line.
pub fn render_chain(frames: &[String]) -> String {
    let mut out = String::new();
    for (depth, frame) in frames.iter().enumerate() {
        if depth == 0 {
            out.push_str(frame);
        } else {
            let _ = write!(out, "{}-> {frame}", "    ".repeat(depth));
        }
        out.push('\n');
    }
    out
}

struct Row {
    marker: char,
    name: String,
    util: String,
    overhead: String,
    category: String,
    file: String,
}

fn library_rows(bundle: &ProfileBundle) -> Vec<Row> {
    let tree = &bundle.module_tree;
    let roots = &bundle.roots;
    let file_of = |path: &str| {
        tree.node(path)
            .and_then(|n| n.file_path.as_deref())
            .map_or_else(|| "-".to_string(), |f| roots.display_path(f).to_string())
    };
    let has_children = |path: &str| tree.node(path).is_some_and(|n| !n.children.is_empty());
    let finding_for = |subject: &str| bundle.findings.iter().find(|f| f.subject == subject);

    let mut order: Vec<&LibraryStats> = Vec::new();
    for f in bundle.findings.iter().filter(|f| f.is_library()) {
        if let Some(s) = bundle.stats.iter().find(|s| s.library == f.subject) {
            order.push(s);
        }
    }
    for s in &bundle.stats {
        if !order.iter().any(|o| o.library == s.library) {
            order.push(s);
        }
    }

    let mut rows = Vec::new();
    for s in order {
        let children: Vec<&Finding> = bundle
            .findings
            .iter()
            .filter(|f| !f.is_library() && f.library == s.library)
            .collect();
        let marker = if !children.is_empty() {
            '-'
        } else if has_children(&s.library) {
            '+'
        } else {
            ' '
        };
        rows.push(Row {
            marker,
            name: s.library.clone(),
            util: pct(s.utilization),
            overhead: pct(s.init_overhead_share),
            category: finding_for(&s.library).map_or("-", |f| f.category.label()).to_string(),
            file: file_of(&s.library),
        });
        for f in children {
            rows.push(Row {
                marker: if has_children(&f.subject) { '+' } else { ' ' },
                name: f.subject.clone(),
                util: pct(f.utilization),
                overhead: pct(f.overhead_share),
                category: f.category.label().to_string(),
                file: file_of(&f.subject),
            });
        }
    }

    let total = scope_total(&bundle.cct, SampleScope::ExecOnly);
    for reserved in [APP_ROOT, STDLIB_ROOT, UNKNOWN_ROOT] {
        let samples = subject_samples(&bundle.cct, reserved, SampleScope::ExecOnly);
        if samples == 0 && tree.node(reserved).is_none() {
            continue;
        }
        rows.push(Row {
            marker: ' ',
            name: reserved.to_string(),
            util: if total == 0 { "-".into() } else { pct(samples as f64 / total as f64) },
            overhead: "-".into(),
            category: "-".into(),
            file: "-".into(),
        });
    }
    rows
}

/// Text report: header, summary table, then one call-path panel per finding.
pub fn render_text(bundle: &ProfileBundle, top_k: usize) -> String {
    let mut out = String::new();
    let gate = &bundle.gate;
    let _ = writeln!(out, "coldprof Summary");
    let _ = writeln!(out, "Application: {}", bundle.app_id);
    let _ = writeln!(out, "Manifest: {}", bundle.manifest_hash);
    let _ = writeln!(
        out,
        "Invocations: {}  Samples: {} exec, {} init  Dropped: {}",
        bundle.invocation_count, bundle.cct.exec_samples, bundle.cct.init_samples, bundle.dropped_samples
    );
    let _ = writeln!(
        out,
        "Library init: {:.2} ms of {:.2} ms exec  ratio {:.4} (threshold {:.2}, {})",
        gate.mean_init_us / 1000.0,
        gate.mean_exec_us / 1000.0,
        gate.ratio,
        gate.threshold,
        if gate.profile_worthy { "profile-worthy" } else { "below threshold" }
    );
    out.push('\n');

    let rows = library_rows(bundle);
    let name_w = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max("Package".len());
    let _ = writeln!(
        out,
        "   {:<name_w$}  {:>6}  {:>14}  {:<8}  File",
        "Package", "Util.", "Init. Overhead", "Category"
    );
    for r in &rows {
        let _ = writeln!(
            out,
            " {} {:<name_w$}  {:>6}  {:>14}  {:<8}  {}",
            r.marker, r.name, r.util, r.overhead, r.category, r.file
        );
    }
    out.push('\n');

    if bundle.findings.is_empty() {
        let _ = writeln!(out, "no inefficiencies above thresholds");
        return out;
    }
    let _ = writeln!(out, "Call Path");
    for f in &bundle.findings {
        let _ = writeln!(
            out,
            "\n[{}] {}  {}  util {}  overhead {}",
            f.rank,
            f.subject,
            f.category.label(),
            pct(f.utilization),
            pct(f.overhead_share)
        );
        if f.evidence_paths.is_empty() {
            let _ = writeln!(out, "(no sampled call path)");
        }
        for (frames, count) in panel_chains(f, &bundle.roots).into_iter().take(top_k) {
            let _ = writeln!(out, "({count} samples)");
            out.push_str(&render_chain(&frames));
        }
    }
    out
}

pub fn render_json(bundle: &ProfileBundle) -> Result<String> {
    serde_json::to_string_pretty(bundle).map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// Nearest-rank percentile: the k-th smallest value, k = ⌈q·n⌉ with q = `percent`/100.
pub fn percentile_nearest_rank(values: &[u64], percent: u32) -> Option<u64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as u64;
    let k = (u64::from(percent) * n).div_ceil(100).clamp(1, n);
    Some(sorted[(k - 1) as usize])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpeedup {
    pub metric: String,
    pub before_us: f64,
    pub after_us: f64,
    /// before / after
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffReport {
    pub before_invocations: usize,
    pub after_invocations: usize,
    pub rows: Vec<PhaseSpeedup>,
}

fn speedup(before: f64, after: f64) -> f64 {
    if after > 0.0 {
        before / after
    } else if before > 0.0 {
        f64::INFINITY
    } else {
        1.0
    }
}

/// Mean and 99th-percentile speedups of the init and exec phases.
pub fn diff(before: &ProfileBundle, after: &ProfileBundle) -> DiffReport {
    let series = |b: &ProfileBundle, init: bool| -> Vec<u64> {
        b.latencies
            .iter()
            .map(|l| if init { l.init_us } else { l.exec_us })
            .collect()
    };
    let mean = |v: &[u64]| v.iter().sum::<u64>() as f64 / v.len().max(1) as f64;
    let p99 = |v: &[u64]| percentile_nearest_rank(v, 99).unwrap_or(0) as f64;

    let mut rows = Vec::new();
    for (label, init) in [("Initialization", true), ("Execution", false)] {
        let (b, a) = (series(before, init), series(after, init));
        rows.push(PhaseSpeedup {
            metric: format!("{label} (mean)"),
            before_us: mean(&b),
            after_us: mean(&a),
            speedup: speedup(mean(&b), mean(&a)),
        });
        rows.push(PhaseSpeedup {
            metric: format!("{label} (p99)"),
            before_us: p99(&b),
            after_us: p99(&a),
            speedup: speedup(p99(&b), p99(&a)),
        });
    }
    DiffReport {
        before_invocations: before.invocation_count,
        after_invocations: after.invocation_count,
        rows,
    }
}

pub fn render_diff(report: &DiffReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Invocations: {} before, {} after",
        report.before_invocations, report.after_invocations
    );
    let _ = writeln!(out, "{:<24}  {:>12}  {:>12}  Speedup (times)", "Metric", "Before (ms)", "After (ms)");
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{:<24}  {:>12.2}  {:>12.2}  {:.2}×",
            r.metric,
            r.before_us / 1000.0,
            r.after_us / 1000.0,
            r.speedup
        );
    }
    out
}

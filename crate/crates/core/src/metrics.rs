//! Screening ratio, library utilization and confidence intervals.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::cct::{CallingContextTree, CctNode};
use crate::error::{Error, Result};
use crate::package_mapper::{ModuleKind, ModulePath, ModuleTree};
use crate::trace_model::InvocationMeta;

/// Normal critical value for a 95% interval.
pub const DEFAULT_Z: f64 = 1.96;
/// Initialization-to-execution ratio above which an application is worth profiling.
pub const DEFAULT_GATE_THRESHOLD: f64 = 0.10;

/// Which samples count toward utilization.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleScope {
    /// Only samples taken after handler entry.
    #[default]
    ExecOnly,
    /// Initialization-phase samples too.
    AllSamples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateResult {
    pub ratio: f64,
    pub threshold: f64,
    pub profile_worthy: bool,
    pub mean_init_us: f64,
    pub mean_exec_us: f64,
}

/// Mean library initialization time over mean handler execution time.
pub fn init_ratio(metas: &[InvocationMeta], tree: &ModuleTree, threshold: f64) -> Result<GateResult> {
    if metas.is_empty() {
        return Err(Error::InvalidArgument("no invocations to compute the ratio over".into()));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} must be in (0, 1]")));
    }
    let exec_sum: u64 = metas.iter().map(InvocationMeta::exec_duration_us).sum();
    let mean_exec_us = exec_sum as f64 / metas.len() as f64;
    if mean_exec_us == 0.0 {
        return Err(Error::ZeroExecution);
    }
    let mean_init_us = tree.mean_invocation_initialization_us();
    let ratio = mean_init_us / mean_exec_us;
    Ok(GateResult {
        ratio,
        threshold,
        profile_worthy: ratio >= threshold,
        mean_init_us,
        mean_exec_us,
    })
}

fn node_count(n: &CctNode, scope: SampleScope) -> u64 {
    match scope {
        SampleScope::ExecOnly => n.exec_samples,
        SampleScope::AllSamples => n.sample_count(),
    }
}

pub fn scope_total(cct: &CallingContextTree, scope: SampleScope) -> u64 {
    match scope {
        SampleScope::ExecOnly => cct.exec_samples,
        SampleScope::AllSamples => cct.total_samples(),
    }
}

/// Reserved labels (`(app)`, `(stdlib)`, `(unknown)`) match by label;
/// anything else matches library modules at or below the dotted path.
fn attributed_to(module: &ModulePath, subject: &str) -> bool {
    if subject.starts_with('(') {
        module.library == subject
    } else {
        module.is_within(subject)
    }
}

/// Samples whose innermost frame is attributed to `subject`.
pub fn subject_samples(cct: &CallingContextTree, subject: &str, scope: SampleScope) -> u64 {
    let mut total = 0;
    cct.visit(|_, n| {
        if attributed_to(&n.module, subject) {
            total += node_count(n, scope);
        }
    });
    total
}

/// Every label samples are attributed to: library names plus the reserved roots.
pub fn sample_labels(cct: &CallingContextTree) -> BTreeSet<String> {
    let mut labels = BTreeSet::new();
    cct.visit(|_, n| {
        labels.insert(n.module.library.clone());
    });
    labels
}

/// Share of EXEC samples landing in `library`; 0 when it never appears.
pub fn utilization(cct: &CallingContextTree, library: &str) -> Result<f64> {
    utilization_in(cct, library, SampleScope::ExecOnly)
}

pub fn utilization_in(cct: &CallingContextTree, subject: &str, scope: SampleScope) -> Result<f64> {
    let total = scope_total(cct, scope);
    if total == 0 {
        return Err(Error::NoSamples);
    }
    Ok(subject_samples(cct, subject, scope) as f64 / total as f64)
}

/// Normal-approximation interval `p ± z·sqrt(p(1-p)/n)`, clamped to [0, 1].
pub fn confidence_interval(p_hat: f64, n: u64, z: f64) -> (f64, f64) {
    let n = n.max(1) as f64;
    let half = z * (p_hat * (1.0 - p_hat) / n).max(0.0).sqrt();
    ((p_hat - half).max(0.0), (p_hat + half).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryStats {
    /// Library name, or dotted package path for drill-down rows.
    pub library: String,
    pub init_time_us: u64,
    pub init_overhead_share: f64,
    pub sample_count: u64,
    pub utilization: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub invocations_observed: u32,
}

/// Statistics for one library or package subtree.
pub fn subject_stats(
    tree: &ModuleTree,
    cct: &CallingContextTree,
    subject: &str,
    z: f64,
    scope: SampleScope,
) -> Result<LibraryStats> {
    let total = scope_total(cct, scope);
    if total == 0 {
        return Err(Error::NoSamples);
    }
    let init_time_us = tree.package_time(subject).unwrap_or(0);
    let total_init = tree.total_initialization();
    let init_overhead_share = if total_init == 0 {
        0.0
    } else {
        init_time_us as f64 / total_init as f64
    };
    let sample_count = subject_samples(cct, subject, scope);
    let utilization = sample_count as f64 / total as f64;
    let (ci_low, ci_high) = confidence_interval(utilization, total, z);
    Ok(LibraryStats {
        library: subject.to_string(),
        init_time_us,
        init_overhead_share,
        sample_count,
        utilization,
        ci_low,
        ci_high,
        invocations_observed: tree.node(subject).map_or(0, |n| n.seen_in),
    })
}

/// One row per library seen in either the module tree or the samples,
/// sorted by initialization share (descending), then name.
pub fn library_stats(
    tree: &ModuleTree,
    cct: &CallingContextTree,
    z: f64,
    scope: SampleScope,
) -> Result<Vec<LibraryStats>> {
    if let (Some(a), Some(b)) = (tree.manifest(), cct.manifest.as_deref()) {
        if a != b {
            return Err(Error::ManifestMismatch {
                expected: a.to_string(),
                found: b.to_string(),
            });
        }
    }
    let mut libraries: BTreeSet<String> = tree.libraries().map(str::to_string).collect();
    cct.visit(|_, n| {
        if n.module.kind == ModuleKind::LibraryModule {
            libraries.insert(n.module.library.clone());
        }
    });
    let mut stats = libraries
        .iter()
        .map(|lib| subject_stats(tree, cct, lib, z, scope))
        .collect::<Result<Vec<_>>>()?;
    sort_stats(&mut stats);
    Ok(stats)
}

pub fn sort_stats(stats: &mut [LibraryStats]) {
    stats.sort_by(|a, b| {
        b.init_overhead_share
            .total_cmp(&a.init_overhead_share)
            .then_with(|| a.library.cmp(&b.library))
    });
}

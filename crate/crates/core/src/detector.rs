//! Inefficiency detection over library statistics and the calling context tree.
//!
//! A library (or package) is only considered once its share of total
//! library initialization time reaches `overhead_floor`. Then:
//!
//! * no EXEC samples anywhere in its subtree: unused import (C1);
//! * upper confidence bound of its utilization below `rare_utilization`:
//!   rarely used, a lazy-loading candidate (C2);
//! * otherwise it is used, and whether the usage is a misuse or avoidable
//!   needs a human, so it is surfaced for review with its calling context.
//!
//! Libraries under review are drilled into: heavy packages that are
//! themselves unused or rarely used get their own findings, and the library
//! row stays as context.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::cct::CallingContextTree;
use crate::error::{Error, Result};
use crate::metrics::{subject_stats, LibraryStats, SampleScope, DEFAULT_Z};
use crate::package_mapper::ModuleTree;
use crate::trace_model::{CallPath, Frame};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub overhead_floor: f64,
    pub rare_utilization: f64,
    pub min_samples: u64,
    pub top_k_paths: usize,
    pub z: f64,
    pub scope: SampleScope,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            overhead_floor: 0.05,
            rare_utilization: 0.01,
            min_samples: 1000,
            top_k_paths: 3,
            z: DEFAULT_Z,
            scope: SampleScope::ExecOnly,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| v > 0.0 && v < 1.0;
        if !in_unit(self.overhead_floor) {
            return Err(Error::InvalidArgument(format!(
                "overhead floor {} must be in (0, 1)",
                self.overhead_floor
            )));
        }
        if !in_unit(self.rare_utilization) {
            return Err(Error::InvalidArgument(format!(
                "rare utilization {} must be in (0, 1)",
                self.rare_utilization
            )));
        }
        if self.top_k_paths == 0 {
            return Err(Error::InvalidArgument("top-k must be >= 1".into()));
        }
        if self.z.is_nan() || self.z <= 0.0 {
            return Err(Error::InvalidArgument(format!("z {} must be positive", self.z)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "C1_UNUSED")]
    Unused,
    #[serde(rename = "C2_RARELY_USED")]
    RarelyUsed,
    #[serde(rename = "C_REVIEW")]
    Review,
}

impl Category {
    fn severity(self) -> u8 {
        match self {
            Category::Unused => 3,
            Category::RarelyUsed => 2,
            Category::Review => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Category::Unused => "C1",
            Category::RarelyUsed => "C2",
            Category::Review => "REVIEW",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidencePath {
    pub path: CallPath,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportSite {
    pub file: String,
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub category: Category,
    /// Dotted path of the library or package.
    pub subject: String,
    /// Library the subject belongs to.
    pub library: String,
    pub file_path: Option<String>,
    pub overhead_share: f64,
    pub init_time_us: u64,
    pub sample_count: u64,
    pub utilization: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Call paths entering the subject, ending at its first frame.
    pub evidence_paths: Vec<EvidencePath>,
    /// Frame executing the import that entered the subject, per evidence path.
    pub import_sites: Vec<ImportSite>,
    pub rank: usize,
}

impl Finding {
    /// True when the subject is a whole library rather than one of its packages.
    pub fn is_library(&self) -> bool {
        self.subject == self.library
    }
}

fn classify(stats: &LibraryStats, cfg: &DetectorConfig) -> Category {
    if stats.sample_count == 0 {
        Category::Unused
    } else if stats.ci_high < cfg.rare_utilization {
        Category::RarelyUsed
    } else {
        Category::Review
    }
}

fn make_finding(
    stats: LibraryStats,
    category: Category,
    tree: &ModuleTree,
    cct: &CallingContextTree,
    cfg: &DetectorConfig,
) -> Finding {
    let library = stats
        .library
        .split('.')
        .next()
        .unwrap_or_default()
        .to_string();
    let evidence_paths: Vec<EvidencePath> = cct
        .paths_to(&stats.library, cfg.top_k_paths)
        .into_iter()
        .map(|(path, count)| EvidencePath { path, count })
        .collect();
    let import_sites = evidence_paths
        .iter()
        .filter_map(|e| {
            let frames = &e.path.frames;
            let site: &Frame = frames.len().checked_sub(2).map(|i| &frames[i])?;
            Some(ImportSite {
                file: site.file_path.clone(),
                line: site.line,
            })
        })
        .collect();
    Finding {
        category,
        file_path: tree.node(&stats.library).and_then(|n| n.file_path.clone()),
        subject: stats.library,
        library,
        overhead_share: stats.init_overhead_share,
        init_time_us: stats.init_time_us,
        sample_count: stats.sample_count,
        utilization: stats.utilization,
        ci_low: stats.ci_low,
        ci_high: stats.ci_high,
        evidence_paths,
        import_sites,
        rank: 0,
    }
}

fn check_samples(cct: &CallingContextTree, cfg: &DetectorConfig) -> Result<()> {
    if cct.exec_samples < cfg.min_samples {
        return Err(Error::InsufficientSamples {
            have: cct.exec_samples,
            need: cfg.min_samples,
        });
    }
    Ok(())
}

/// Findings for every library whose overhead share clears the floor, ranked.
pub fn detect(
    stats: &[LibraryStats],
    tree: &ModuleTree,
    cct: &CallingContextTree,
    cfg: &DetectorConfig,
) -> Result<Vec<Finding>> {
    cfg.validate()?;
    check_samples(cct, cfg)?;
    let mut findings = Vec::new();
    for s in stats {
        if s.init_overhead_share >= cfg.overhead_floor && tree.is_library(&s.library) {
            findings.extend(drill_down(tree, cct, &s.library, cfg)?);
        }
    }
    Ok(rank(findings))
}

/// Findings inside one library. An unused or rarely used library is
/// reported as a whole; a library under review is reported as context
/// together with its heavy packages that are unused or rarely used, at the
/// highest such package on each branch.
pub fn drill_down(
    tree: &ModuleTree,
    cct: &CallingContextTree,
    library: &str,
    cfg: &DetectorConfig,
) -> Result<Vec<Finding>> {
    if !tree.is_library(library) {
        return Err(Error::UnknownLibrary(library.to_string()));
    }
    let stats = subject_stats(tree, cct, library, cfg.z, cfg.scope)?;
    if stats.init_overhead_share < cfg.overhead_floor {
        return Ok(Vec::new());
    }
    let category = classify(&stats, cfg);
    let mut out = vec![make_finding(stats, category, tree, cct, cfg)];
    if category == Category::Review {
        descend(tree, cct, library, cfg, &mut out)?;
    }
    Ok(out)
}

fn descend(
    tree: &ModuleTree,
    cct: &CallingContextTree,
    path: &str,
    cfg: &DetectorConfig,
    out: &mut Vec<Finding>,
) -> Result<()> {
    for (child, _) in tree.ranked_children(path)? {
        let stats = subject_stats(tree, cct, &child, cfg.z, cfg.scope)?;
        if stats.init_overhead_share < cfg.overhead_floor {
            continue;
        }
        match classify(&stats, cfg) {
            Category::Review => descend(tree, cct, &child, cfg, out)?,
            category => out.push(make_finding(stats, category, tree, cct, cfg)),
        }
    }
    Ok(())
}

fn compare(a: &Finding, b: &Finding) -> Ordering {
    b.overhead_share
        .total_cmp(&a.overhead_share)
        .then_with(|| b.category.severity().cmp(&a.category.severity()))
        .then_with(|| a.subject.cmp(&b.subject))
}

/// Sorts by overhead share (descending), then severity, then subject, and
/// numbers the findings from 1.
pub fn rank(mut findings: Vec<Finding>) -> Vec<Finding> {
    findings.sort_by(compare);
    for (i, f) in findings.iter_mut().enumerate() {
        f.rank = i + 1;
    }
    findings
}

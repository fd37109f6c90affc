//! Library → package → module hierarchy and the initialization-time
//! decomposition over it.
//!
//! Import records carry exclusive (self) times, so summing them over a
//! subtree never double counts nested imports: a package's time is the sum
//! of its modules' self times, a library's time is the sum over its
//! packages, and the total is the sum over libraries.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace_model::{Frame, InvocationTrace};

pub const APP_ROOT: &str = "(app)";
pub const STDLIB_ROOT: &str = "(stdlib)";
pub const UNKNOWN_ROOT: &str = "(unknown)";

const PACKAGE_INITIALIZER: &str = "__init__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RootKind {
    App,
    Library,
    Stdlib,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Root {
    pub path: String,
    pub kind: RootKind,
}

/// Source roots used to classify file paths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RootConfig {
    pub roots: Vec<Root>,
}

impl Default for RootConfig {
    /// The usual serverless layout: handler code in `/var/task`, layers in
    /// `/opt/python`, and the runtime under `/var/lang/lib`.
    fn default() -> Self {
        Self::new([
            ("/var/task", RootKind::App),
            ("/opt/python", RootKind::Library),
            ("/var/lang/lib", RootKind::Stdlib),
        ])
    }
}

impl RootConfig {
    pub fn new<'a>(roots: impl IntoIterator<Item = (&'a str, RootKind)>) -> Self {
        Self {
            roots: roots
                .into_iter()
                .map(|(path, kind)| Root {
                    path: path.to_string(),
                    kind,
                })
                .collect(),
        }
    }

    /// Longest root that contains `file`, with the path relative to it.
    pub fn classify<'f>(&self, file: &'f str) -> Option<(RootKind, &'f str)> {
        self.roots
            .iter()
            .filter_map(|root| {
                let base = root.path.trim_end_matches('/');
                let rest = file.strip_prefix(base)?;
                let rel = if base.is_empty() {
                    rest
                } else {
                    rest.strip_prefix('/')?
                };
                Some((base.len(), root.kind, rel.trim_start_matches('/')))
            })
            .max_by_key(|(len, _, _)| *len)
            .map(|(_, kind, rel)| (kind, rel))
    }

    /// `file` relative to its root, or unchanged when no root matches.
    pub fn display_path<'f>(&self, file: &'f str) -> &'f str {
        match self.classify(file) {
            Some((_, rel)) if !rel.is_empty() => rel,
            _ => file,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ModuleKind {
    LibraryModule,
    Application,
    Stdlib,
    Unknown,
}

impl ModuleKind {
    fn from_root(kind: RootKind) -> Self {
        match kind {
            RootKind::App => ModuleKind::Application,
            RootKind::Library => ModuleKind::LibraryModule,
            RootKind::Stdlib => ModuleKind::Stdlib,
        }
    }

    fn reserved_root(self) -> Option<&'static str> {
        match self {
            ModuleKind::LibraryModule => None,
            ModuleKind::Application => Some(APP_ROOT),
            ModuleKind::Stdlib => Some(STDLIB_ROOT),
            ModuleKind::Unknown => Some(UNKNOWN_ROOT),
        }
    }
}

/// Position of a module in the hierarchy. For library modules `library` is
/// the first segment; other kinds use a reserved root name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModulePath {
    pub library: String,
    pub segments: Vec<String>,
    pub kind: ModuleKind,
}

impl ModulePath {
    pub fn unknown() -> Self {
        Self {
            library: UNKNOWN_ROOT.to_string(),
            segments: Vec::new(),
            kind: ModuleKind::Unknown,
        }
    }

    fn from_segments(kind: ModuleKind, segments: Vec<String>) -> Self {
        if segments.is_empty() {
            return Self::unknown();
        }
        let library = match kind.reserved_root() {
            Some(reserved) => reserved.to_string(),
            None => segments[0].clone(),
        };
        Self {
            library,
            segments,
            kind,
        }
    }

    pub fn dotted(&self) -> String {
        self.segments.join(".")
    }

    /// Key of this module in a [`ModuleTree`]: the dotted path for library
    /// modules, prefixed by the reserved root name otherwise.
    pub fn tree_key(&self) -> String {
        match self.kind.reserved_root() {
            None => self.dotted(),
            Some(root) if self.segments.is_empty() => root.to_string(),
            Some(root) => format!("{root}.{}", self.dotted()),
        }
    }

    /// True when this is a library module at or below the dotted `subject`.
    pub fn is_within(&self, subject: &str) -> bool {
        if self.kind != ModuleKind::LibraryModule {
            return false;
        }
        let dotted = self.dotted();
        dotted == subject
            || (dotted.len() > subject.len()
                && dotted.starts_with(subject)
                && dotted.as_bytes()[subject.len()] == b'.')
    }
}

/// Classifies a frame by longest-prefix match of its file against `roots`
/// and derives the dotted module path from the relative file path.
pub fn map_frame(frame: &Frame, roots: &RootConfig) -> ModulePath {
    map_file(&frame.file_path, roots)
}

pub fn map_file(file: &str, roots: &RootConfig) -> ModulePath {
    let Some((kind, rel)) = roots.classify(file) else {
        return ModulePath::unknown();
    };
    let mut segments: Vec<String> = rel
        .split('/')
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();
    if let Some(last) = segments.pop() {
        let stem = match last.rsplit_once('.') {
            Some((stem, _)) if !stem.is_empty() => stem.to_string(),
            _ => last,
        };
        if stem != PACKAGE_INITIALIZER {
            segments.push(stem);
        }
    }
    ModulePath::from_segments(ModuleKind::from_root(kind), segments)
}

/// Maps an imported module: the kind comes from its file, the hierarchy
/// from its dotted name.
pub fn map_import(module_name: &str, file: &str, roots: &RootConfig) -> ModulePath {
    let kind = match roots.classify(file) {
        Some((kind, _)) => ModuleKind::from_root(kind),
        None => ModuleKind::Unknown,
    };
    let segments = module_name
        .split('.')
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();
    match ModulePath::from_segments(kind, segments) {
        p if p.segments.is_empty() => ModulePath {
            library: UNKNOWN_ROOT.into(),
            segments: vec![module_name.to_string()],
            kind: ModuleKind::Unknown,
        },
        p => p,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleNode {
    pub kind: ModuleKind,
    /// Source file of the module; `None` for implicit (namespace) nodes.
    pub file_path: Option<String>,
    pub self_sum_us: u64,
    pub cum_sum_us: u64,
    /// Invocations in which this module itself was imported.
    pub import_count: u32,
    /// Invocations in which any module of this subtree was imported.
    pub seen_in: u32,
    pub children: BTreeSet<String>,
}

impl ModuleNode {
    fn implicit(kind: ModuleKind) -> Self {
        Self {
            kind,
            file_path: None,
            self_sum_us: 0,
            cum_sum_us: 0,
            import_count: 0,
            seen_in: 0,
            children: BTreeSet::new(),
        }
    }

    /// Mean self time over the invocations that imported the module,
    /// rounded to the nearest microsecond.
    pub fn t_self_us(&self) -> u64 {
        mean_rounded(self.self_sum_us, self.import_count)
    }

    pub fn t_cumulative_us(&self) -> u64 {
        mean_rounded(self.cum_sum_us, self.import_count)
    }
}

fn mean_rounded(sum: u64, count: u32) -> u64 {
    if count == 0 {
        return 0;
    }
    let count = u64::from(count);
    (sum + count / 2) / count
}

fn parent_key(key: &str) -> Option<&str> {
    key.rsplit_once('.').map(|(parent, _)| parent)
}

/// Aggregated module hierarchy of one application version.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleTree {
    nodes: BTreeMap<String, ModuleNode>,
    invocations: u32,
    /// Sum over invocations of that invocation's library initialization time.
    library_init_sum_us: u64,
    manifest: Option<String>,
}

impl ModuleTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_invocation(trace: &InvocationTrace, roots: &RootConfig) -> Result<Self> {
        let mut tree = Self {
            invocations: 1,
            manifest: Some(trace.meta.code_manifest_hash.clone()),
            ..Self::default()
        };
        let mut touched = BTreeSet::new();
        for imp in &trace.imports {
            let path = map_import(&imp.module_name, &imp.file_path, roots);
            let key = path.tree_key();
            tree.ensure_node(&key, path.kind);
            let node = tree.nodes.get_mut(&key).expect("node just ensured");
            match &node.file_path {
                Some(existing) if *existing != imp.file_path => {
                    return Err(Error::ConflictingFile {
                        module: key,
                        first: existing.clone(),
                        second: imp.file_path.clone(),
                    });
                }
                _ => node.file_path = Some(imp.file_path.clone()),
            }
            node.self_sum_us += imp.t_self_us;
            node.cum_sum_us += imp.t_cumulative_us;
            node.import_count += 1;
            if path.kind == ModuleKind::LibraryModule {
                tree.library_init_sum_us += imp.t_self_us;
            }
            let mut cursor = Some(key.as_str());
            while let Some(k) = cursor {
                touched.insert(k.to_string());
                cursor = parent_key(k);
            }
        }
        for key in touched {
            if let Some(node) = tree.nodes.get_mut(&key) {
                node.seen_in += 1;
            }
        }
        Ok(tree)
    }

    fn ensure_node(&mut self, key: &str, kind: ModuleKind) {
        if self.nodes.contains_key(key) {
            return;
        }
        self.nodes.insert(key.to_string(), ModuleNode::implicit(kind));
        if let Some(parent) = parent_key(key) {
            self.ensure_node(parent, kind);
            self.nodes
                .get_mut(parent)
                .expect("parent just ensured")
                .children
                .insert(key.to_string());
        }
    }

    /// Node-wise union; times and counts add, so means combine correctly.
    pub fn merge(&mut self, other: ModuleTree) -> Result<()> {
        match (&self.manifest, &other.manifest) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::ManifestMismatch {
                    expected: a.clone(),
                    found: b.clone(),
                })
            }
            (None, Some(_)) => self.manifest = other.manifest.clone(),
            _ => {}
        }
        for (key, theirs) in other.nodes {
            match self.nodes.get_mut(&key) {
                None => {
                    self.nodes.insert(key, theirs);
                }
                Some(ours) => {
                    match (&ours.file_path, &theirs.file_path) {
                        (Some(a), Some(b)) if a != b => {
                            return Err(Error::ConflictingFile {
                                module: key,
                                first: a.clone(),
                                second: b.clone(),
                            })
                        }
                        (None, Some(_)) => ours.file_path = theirs.file_path.clone(),
                        _ => {}
                    }
                    ours.self_sum_us += theirs.self_sum_us;
                    ours.cum_sum_us += theirs.cum_sum_us;
                    ours.import_count += theirs.import_count;
                    ours.seen_in += theirs.seen_in;
                    ours.children.extend(theirs.children);
                }
            }
        }
        self.invocations += other.invocations;
        self.library_init_sum_us += other.library_init_sum_us;
        Ok(())
    }

    pub fn node(&self, path: &str) -> Option<&ModuleNode> {
        self.nodes.get(path)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&str, &ModuleNode)> {
        self.nodes.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn invocations(&self) -> u32 {
        self.invocations
    }

    pub fn manifest(&self) -> Option<&str> {
        self.manifest.as_deref()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Library root names in lexicographic order.
    pub fn libraries(&self) -> impl Iterator<Item = &str> {
        self.nodes
            .iter()
            .filter(|(k, n)| n.kind == ModuleKind::LibraryModule && parent_key(k).is_none())
            .map(|(k, _)| k.as_str())
    }

    pub fn is_library(&self, name: &str) -> bool {
        parent_key(name).is_none()
            && self
                .nodes
                .get(name)
                .is_some_and(|n| n.kind == ModuleKind::LibraryModule)
    }

    fn subtree_time(&self, key: &str) -> u64 {
        let Some(node) = self.nodes.get(key) else {
            return 0;
        };
        node.t_self_us() + node.children.iter().map(|c| self.subtree_time(c)).sum::<u64>()
    }

    /// Sum of self times over the node at `path` and all its descendants.
    pub fn package_time(&self, path: &str) -> Result<u64> {
        if !self.nodes.contains_key(path) {
            return Err(Error::UnknownPath(path.to_string()));
        }
        Ok(self.subtree_time(path))
    }

    pub fn library_time(&self, library: &str) -> Result<u64> {
        if !self.is_library(library) {
            return Err(Error::UnknownLibrary(library.to_string()));
        }
        Ok(self.subtree_time(library))
    }

    /// Sum of library times. Application, stdlib, and unmapped modules are
    /// not part of it; see [`ModuleTree::reserved_time`].
    pub fn total_initialization(&self) -> u64 {
        self.libraries().map(|lib| self.subtree_time(lib)).sum()
    }

    /// Time under one of the reserved roots (`(app)`, `(stdlib)`, `(unknown)`).
    pub fn reserved_time(&self, root: &str) -> u64 {
        self.subtree_time(root)
    }

    /// Mean over invocations of the per-invocation library initialization time.
    pub fn mean_invocation_initialization_us(&self) -> f64 {
        if self.invocations == 0 {
            return 0.0;
        }
        self.library_init_sum_us as f64 / f64::from(self.invocations)
    }

    /// Children ranked by subtree time, descending, ties by path.
    pub fn ranked_children(&self, path: &str) -> Result<Vec<(String, u64)>> {
        let node = self
            .nodes
            .get(path)
            .ok_or_else(|| Error::UnknownPath(path.to_string()))?;
        let mut out: Vec<_> = node
            .children
            .iter()
            .map(|c| (c.clone(), self.subtree_time(c)))
            .collect();
        out.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(out)
    }
}

/// Builds one tree over every invocation; per-invocation trees are built in
/// parallel and merged.
pub fn build_module_tree(traces: &[InvocationTrace], roots: &RootConfig) -> Result<ModuleTree> {
    traces
        .par_iter()
        .map(|t| ModuleTree::from_invocation(t, roots))
        .try_reduce(ModuleTree::new, |mut a, b| {
            a.merge(b)?;
            Ok(a)
        })
}

//! Calling Context Tree built from sampled call paths.
//!
//! Every distinct root-to-node path is its own node, so a function reached
//! from two call sites keeps two separate counts. Node identity is the frame
//! (file, line, function); children are kept sorted by it, which makes the
//! tree's shape independent of insertion and merge order.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::package_mapper::{map_frame, ModulePath, RootConfig};
use crate::trace_model::{CallPath, Frame, InvocationTrace, Phase};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CctNode {
    pub frame: Frame,
    pub module: ModulePath,
    /// Samples whose innermost frame is this node, by phase.
    pub init_samples: u64,
    pub exec_samples: u64,
    pub children: Vec<CctNode>,
}

impl CctNode {
    fn new(frame: Frame) -> Self {
        Self {
            frame,
            module: ModulePath::unknown(),
            init_samples: 0,
            exec_samples: 0,
            children: Vec::new(),
        }
    }

    pub fn sample_count(&self) -> u64 {
        self.init_samples + self.exec_samples
    }

    pub fn subtree_count(&self) -> u64 {
        self.sample_count() + self.children.iter().map(CctNode::subtree_count).sum::<u64>()
    }

    pub fn subtree_exec(&self) -> u64 {
        self.exec_samples + self.children.iter().map(CctNode::subtree_exec).sum::<u64>()
    }

    fn add_count(&mut self, phase: Phase, n: u64) {
        match phase {
            Phase::Init => self.init_samples += n,
            Phase::Exec => self.exec_samples += n,
        }
    }

    fn merge_from(&mut self, other: CctNode) {
        self.init_samples += other.init_samples;
        self.exec_samples += other.exec_samples;
        merge_children(&mut self.children, other.children);
    }
}

fn child_mut<'a>(children: &'a mut Vec<CctNode>, frame: &Frame) -> &'a mut CctNode {
    let idx = match children.binary_search_by(|c| c.frame.cmp(frame)) {
        Ok(i) => i,
        Err(i) => {
            children.insert(i, CctNode::new(frame.clone()));
            i
        }
    };
    &mut children[idx]
}

fn merge_children(ours: &mut Vec<CctNode>, theirs: Vec<CctNode>) {
    for child in theirs {
        match ours.binary_search_by(|c| c.frame.cmp(&child.frame)) {
            Ok(i) => ours[i].merge_from(child),
            Err(i) => ours.insert(i, child),
        }
    }
}

/// Tree of sampled call paths. The synthetic entry node is the tree itself;
/// `children` are the outermost frames.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallingContextTree {
    pub app_id: Option<String>,
    pub manifest: Option<String>,
    pub children: Vec<CctNode>,
    pub init_samples: u64,
    pub exec_samples: u64,
}

impl CallingContextTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn for_trace(trace: &InvocationTrace) -> Self {
        let mut cct = Self {
            app_id: Some(trace.meta.app_id.clone()),
            manifest: Some(trace.meta.code_manifest_hash.clone()),
            ..Self::default()
        };
        for s in &trace.samples {
            cct.insert_path(&s.call_path, s.phase);
        }
        cct
    }

    pub fn total_samples(&self) -> u64 {
        self.init_samples + self.exec_samples
    }

    pub fn insert_path(&mut self, path: &CallPath, phase: Phase) {
        self.insert_weighted(path, phase, 1);
    }

    /// Inserts `count` identical samples at once.
    pub fn insert_weighted(&mut self, path: &CallPath, phase: Phase, count: u64) {
        let Some((first, rest)) = path.frames.split_first() else {
            return;
        };
        let mut node = child_mut(&mut self.children, first);
        for frame in rest {
            node = child_mut(&mut node.children, frame);
        }
        node.add_count(phase, count);
        match phase {
            Phase::Init => self.init_samples += count,
            Phase::Exec => self.exec_samples += count,
        }
    }

    /// Node-wise union; counts add. Trees from different code manifests are refused.
    pub fn merge(mut self, other: CallingContextTree) -> Result<CallingContextTree> {
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
        if self.app_id.is_none() {
            self.app_id = other.app_id;
        }
        self.init_samples += other.init_samples;
        self.exec_samples += other.exec_samples;
        merge_children(&mut self.children, other.children);
        Ok(self)
    }

    /// Labels every node with the module its frame belongs to.
    pub fn annotate_libraries(&mut self, roots: &RootConfig) {
        fn walk(nodes: &mut [CctNode], roots: &RootConfig) {
            for n in nodes {
                n.module = map_frame(&n.frame, roots);
                walk(&mut n.children, roots);
            }
        }
        walk(&mut self.children, roots);
    }

    /// Depth-first visit of every node with its depth (outermost = 0).
    pub fn visit(&self, mut f: impl FnMut(usize, &CctNode)) {
        fn walk(nodes: &[CctNode], depth: usize, f: &mut dyn FnMut(usize, &CctNode)) {
            for n in nodes {
                f(depth, n);
                walk(&n.children, depth + 1, f);
            }
        }
        walk(&self.children, 0, &mut f);
    }

    pub fn subtree_count(&self) -> u64 {
        self.children.iter().map(CctNode::subtree_count).sum()
    }

    /// Top `top_k` paths entering the dotted `subject`, with the number of
    /// samples beneath each entry node (all phases), highest first.
    ///
    /// An entry node belongs to the subject while its parent does not, so
    /// each returned path ends at the first frame inside the subject.
    pub fn paths_to(&self, subject: &str, top_k: usize) -> Vec<(CallPath, u64)> {
        fn walk(
            nodes: &[CctNode],
            subject: &str,
            parent_inside: bool,
            stack: &mut Vec<Frame>,
            out: &mut Vec<(CallPath, u64)>,
        ) {
            for n in nodes {
                stack.push(n.frame.clone());
                let inside = n.module.is_within(subject);
                if inside && !parent_inside {
                    out.push((CallPath::new(stack.clone()), n.subtree_count()));
                }
                walk(&n.children, subject, inside, stack, out);
                stack.pop();
            }
        }
        let mut out = Vec::new();
        walk(&self.children, subject, false, &mut Vec::new(), &mut out);
        out.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        out.truncate(top_k);
        out
    }

    /// One JSON line per node in pre-order, children in frame order.
    pub fn canonical_dump(&self) -> String {
        let mut out = String::new();
        self.visit(|depth, n| {
            let line = serde_json::json!({
                "depth": depth,
                "file": n.frame.file_path,
                "line": n.frame.line,
                "fn": n.frame.function_name,
                "mod": n.module.tree_key(),
                "init": n.init_samples,
                "exec": n.exec_samples,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        });
        out
    }

    /// Collapsed-stack export for flame-graph tools: one line per node that
    /// has samples of its own, frames joined by `;`, then the count.
    pub fn collapsed_stacks(&self, roots: &RootConfig) -> String {
        fn walk(nodes: &[CctNode], roots: &RootConfig, stack: &mut Vec<String>, out: &mut String) {
            for n in nodes {
                stack.push(format!(
                    "{} ({}:{})",
                    n.frame.function_name,
                    roots.display_path(&n.frame.file_path),
                    n.frame.line
                ));
                if n.sample_count() > 0 {
                    let _ = writeln!(out, "{} {}", stack.join(";"), n.sample_count());
                }
                walk(&n.children, roots, stack, out);
                stack.pop();
            }
        }
        let mut out = String::new();
        walk(&self.children, roots, &mut Vec::new(), &mut out);
        out
    }
}

//! Trace data model and the newline-delimited wire format.
//!
//! One trace file holds one invocation: a `meta` record, the first-import
//! timings of every module loaded during initialization, and the stack
//! samples taken while the invocation ran. Each record is a single JSON
//! object on its own line, discriminated by the `"t"` field:
//!
//! ```text
//! {"t":"meta","inv":"i-1","app":"demo","manifest":"abc","period_us":10000,"init_end_us":700000,"exec_end_us":1700000,"agent":"0.1.0"}
//! {"t":"import","mod":"numpy","file":"/opt/python/numpy/__init__.py","parent":"","cum_us":5,"self_us":5,"ord":1}
//! {"t":"sample","ts_us":1200,"phase":"INIT","stack":[{"file":"/var/task/handler.py","line":8,"fn":"<module>"}]}
//! ```

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::error::{Error, Result};

/// Deepest call path kept per sample; deeper stacks lose their outermost frames.
pub const MAX_DEPTH: usize = 128;
/// Marker used for the synthetic frame that replaces truncated outer frames.
pub const TRUNCATED_MARKER: &str = "(truncated)";
/// File extension of per-invocation trace files.
pub const TRACE_EXTENSION: &str = "trace";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Frame {
    #[serde(rename = "file")]
    pub file_path: String,
    pub line: u32,
    #[serde(rename = "fn")]
    pub function_name: String,
}

impl Frame {
    pub fn new(file_path: impl Into<String>, line: u32, function_name: impl Into<String>) -> Self {
        Self {
            file_path: file_path.into(),
            line,
            function_name: function_name.into(),
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.file_path.is_empty() {
            return Err("frame file_path is empty".into());
        }
        if self.line == 0 {
            return Err(format!("frame {}: line must be >= 1", self.file_path));
        }
        Ok(())
    }
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.file_path, self.line)
    }
}

/// Entry point first, sampled location last.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CallPath {
    pub frames: Vec<Frame>,
}

impl CallPath {
    pub fn new(frames: Vec<Frame>) -> Self {
        Self { frames }
    }

    /// Builds a path bounded by `max_depth`, dropping outermost frames and
    /// putting a synthetic `(truncated)` frame in their place.
    pub fn truncated(mut frames: Vec<Frame>, max_depth: usize) -> Self {
        let max_depth = max_depth.max(2);
        if frames.len() > max_depth {
            let cut = frames.len() - (max_depth - 1);
            frames.drain(..cut);
            frames.insert(0, Frame::new(TRUNCATED_MARKER, 1, TRUNCATED_MARKER));
        }
        Self { frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn innermost(&self) -> Option<&Frame> {
        self.frames.last()
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.frames.is_empty() {
            return Err("call path is empty".into());
        }
        if self.frames.len() > MAX_DEPTH {
            return Err(format!(
                "call path depth {} exceeds max depth {MAX_DEPTH}",
                self.frames.len()
            ));
        }
        self.frames.iter().try_for_each(Frame::check)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "INIT")]
    Init,
    #[serde(rename = "EXEC")]
    Exec,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Init => "INIT",
            Phase::Exec => "EXEC",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportRecord {
    pub module_name: String,
    pub file_path: String,
    /// Module whose execution triggered this import; empty for top-level imports.
    pub parent_module: String,
    pub t_cumulative_us: u64,
    pub t_self_us: u64,
    pub order: u64,
}

impl ImportRecord {
    fn check(&self) -> std::result::Result<(), String> {
        if self.module_name.is_empty() {
            return Err("import module name is empty".into());
        }
        if self.t_self_us > self.t_cumulative_us {
            return Err(format!(
                "import {}: self_us {} exceeds cum_us {}",
                self.module_name, self.t_self_us, self.t_cumulative_us
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub timestamp_us: u64,
    pub call_path: CallPath,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvocationMeta {
    pub invocation_id: String,
    pub app_id: String,
    pub code_manifest_hash: String,
    pub sample_period_us: u64,
    /// Handler-entry timestamp, microseconds since invocation start.
    pub init_end_us: u64,
    pub exec_end_us: u64,
    pub agent_version: String,
    /// Samples the collector had to drop because its buffer was full.
    #[serde(default)]
    pub dropped_samples: u64,
}

impl InvocationMeta {
    /// Wall-clock time spent in the handler.
    pub fn exec_duration_us(&self) -> u64 {
        self.exec_end_us.saturating_sub(self.init_end_us)
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.invocation_id.is_empty() {
            return Err("meta invocation id is empty".into());
        }
        if self.sample_period_us == 0 {
            return Err("meta period_us must be > 0".into());
        }
        if self.init_end_us == 0 {
            return Err("meta init_end_us must be > 0".into());
        }
        if self.init_end_us > self.exec_end_us {
            return Err(format!(
                "meta init_end_us {} exceeds exec_end_us {}",
                self.init_end_us, self.exec_end_us
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceRecord {
    Meta(InvocationMeta),
    Import(ImportRecord),
    Sample(SampleRecord),
}

impl TraceRecord {
    fn check(&self) -> std::result::Result<(), String> {
        match self {
            TraceRecord::Meta(m) => m.check(),
            TraceRecord::Import(i) => i.check(),
            TraceRecord::Sample(s) => s.call_path.check(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvocationTrace {
    pub meta: InvocationMeta,
    pub imports: Vec<ImportRecord>,
    pub samples: Vec<SampleRecord>,
}

impl InvocationTrace {
    /// Records in file order: meta, imports, samples.
    pub fn records(&self) -> impl Iterator<Item = TraceRecord> + '_ {
        std::iter::once(TraceRecord::Meta(self.meta.clone()))
            .chain(self.imports.iter().cloned().map(TraceRecord::Import))
            .chain(self.samples.iter().cloned().map(TraceRecord::Sample))
    }

    pub fn file_name(&self) -> String {
        format!("{}.{TRACE_EXTENSION}", self.meta.invocation_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("schema error: field `{field}` {problem}")]
    Schema { field: String, problem: String },
    #[error("cannot encode record: {0}")]
    Invariant(String),
}

impl WireError {
    fn missing(field: &str) -> Self {
        WireError::Schema {
            field: field.to_string(),
            problem: "is missing".into(),
        }
    }

    fn wrong_type(field: &str, expected: &str) -> Self {
        WireError::Schema {
            field: field.to_string(),
            problem: format!("must be {expected}"),
        }
    }
}

#[derive(Serialize)]
struct MetaLine<'a> {
    t: &'static str,
    inv: &'a str,
    app: &'a str,
    manifest: &'a str,
    period_us: u64,
    init_end_us: u64,
    exec_end_us: u64,
    agent: &'a str,
    #[serde(skip_serializing_if = "is_zero")]
    dropped: u64,
}

fn is_zero(v: &u64) -> bool {
    *v == 0
}

#[derive(Serialize)]
struct ImportLine<'a> {
    t: &'static str,
    #[serde(rename = "mod")]
    module: &'a str,
    file: &'a str,
    parent: &'a str,
    cum_us: u64,
    self_us: u64,
    ord: u64,
}

#[derive(Serialize)]
struct SampleLine<'a> {
    t: &'static str,
    ts_us: u64,
    phase: Phase,
    stack: &'a [Frame],
}

/// Encodes one record as a single newline-free line with a fixed field order.
pub fn encode_record(record: &TraceRecord) -> std::result::Result<String, WireError> {
    record.check().map_err(WireError::Invariant)?;
    let line = match record {
        TraceRecord::Meta(m) => serde_json::to_string(&MetaLine {
            t: "meta",
            inv: &m.invocation_id,
            app: &m.app_id,
            manifest: &m.code_manifest_hash,
            period_us: m.sample_period_us,
            init_end_us: m.init_end_us,
            exec_end_us: m.exec_end_us,
            agent: &m.agent_version,
            dropped: m.dropped_samples,
        }),
        TraceRecord::Import(i) => serde_json::to_string(&ImportLine {
            t: "import",
            module: &i.module_name,
            file: &i.file_path,
            parent: &i.parent_module,
            cum_us: i.t_cumulative_us,
            self_us: i.t_self_us,
            ord: i.order,
        }),
        TraceRecord::Sample(s) => serde_json::to_string(&SampleLine {
            t: "sample",
            ts_us: s.timestamp_us,
            phase: s.phase,
            stack: &s.call_path.frames,
        }),
    };
    line.map_err(|e| WireError::Invariant(e.to_string()))
}

/// Decodes one wire line. Unknown fields are ignored.
pub fn decode_record(line: &str) -> std::result::Result<TraceRecord, WireError> {
    let value: Value = serde_json::from_str(line).map_err(|e| WireError::Parse {
        offset: if e.is_eof() {
            line.len()
        } else {
            byte_offset(line, e.line(), e.column())
        },
        message: e.to_string(),
    })?;
    let Value::Object(obj) = value else {
        return Err(WireError::Parse {
            offset: 0,
            message: "expected a JSON object".into(),
        });
    };
    match str_field(&obj, "t")? {
        "meta" => Ok(TraceRecord::Meta(InvocationMeta {
            invocation_id: str_field(&obj, "inv")?.to_string(),
            app_id: str_field(&obj, "app")?.to_string(),
            code_manifest_hash: str_field(&obj, "manifest")?.to_string(),
            sample_period_us: u64_field(&obj, "period_us")?,
            init_end_us: u64_field(&obj, "init_end_us")?,
            exec_end_us: u64_field(&obj, "exec_end_us")?,
            agent_version: str_field(&obj, "agent")?.to_string(),
            dropped_samples: match obj.get("dropped") {
                Some(_) => u64_field(&obj, "dropped")?,
                None => 0,
            },
        })),
        "import" => Ok(TraceRecord::Import(ImportRecord {
            module_name: str_field(&obj, "mod")?.to_string(),
            file_path: str_field(&obj, "file")?.to_string(),
            parent_module: str_field(&obj, "parent")?.to_string(),
            t_cumulative_us: u64_field(&obj, "cum_us")?,
            t_self_us: u64_field(&obj, "self_us")?,
            order: u64_field(&obj, "ord")?,
        })),
        "sample" => {
            let phase = match str_field(&obj, "phase")? {
                "INIT" => Phase::Init,
                "EXEC" => Phase::Exec,
                _ => return Err(WireError::wrong_type("phase", "\"INIT\" or \"EXEC\"")),
            };
            let stack = obj
                .get("stack")
                .ok_or_else(|| WireError::missing("stack"))?
                .as_array()
                .ok_or_else(|| WireError::wrong_type("stack", "an array"))?;
            let frames = stack
                .iter()
                .map(|f| {
                    let f = f
                        .as_object()
                        .ok_or_else(|| WireError::wrong_type("stack", "an array of objects"))?;
                    let line = u64_field(f, "line")?;
                    Ok(Frame {
                        file_path: str_field(f, "file")?.to_string(),
                        line: u32::try_from(line)
                            .map_err(|_| WireError::wrong_type("line", "a 32-bit integer"))?,
                        function_name: str_field(f, "fn")?.to_string(),
                    })
                })
                .collect::<std::result::Result<Vec<_>, WireError>>()?;
            Ok(TraceRecord::Sample(SampleRecord {
                timestamp_us: u64_field(&obj, "ts_us")?,
                call_path: CallPath::new(frames),
                phase,
            }))
        }
        other => Err(WireError::Schema {
            field: "t".into(),
            problem: format!("has unknown record type `{other}`"),
        }),
    }
}

fn str_field<'a>(obj: &'a Map<String, Value>, field: &str) -> std::result::Result<&'a str, WireError> {
    obj.get(field)
        .ok_or_else(|| WireError::missing(field))?
        .as_str()
        .ok_or_else(|| WireError::wrong_type(field, "a string"))
}

fn u64_field(obj: &Map<String, Value>, field: &str) -> std::result::Result<u64, WireError> {
    obj.get(field)
        .ok_or_else(|| WireError::missing(field))?
        .as_u64()
        .ok_or_else(|| WireError::wrong_type(field, "a non-negative integer"))
}

// serde_json reports 1-based lines and the byte column within the line.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("record {position}: {kind}")]
pub struct ValidationError {
    /// 1-based record position in the input sequence (the line number for files).
    pub position: usize,
    pub kind: ValidationErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationErrorKind {
    #[error("trace has no meta record")]
    MissingMeta,
    #[error("trace has more than one meta record")]
    DuplicateMeta,
    #[error("{0}")]
    Invariant(String),
    #[error("module `{0}` imported more than once")]
    DuplicateModule(String),
    #[error("import order {0} used more than once")]
    DuplicateOrder(u64),
    #[error("module `{module}`: self_us {self_us} exceeds cum_us {cum_us}")]
    SelfExceedsCumulative {
        module: String,
        self_us: u64,
        cum_us: u64,
    },
    #[error("module `{module}`: parent `{parent}` was not imported before it")]
    UnknownParent { module: String, parent: String },
    #[error("module `{module}`: self_us {found} but cum_us minus nested imports is {expected}")]
    NestingIdentity {
        module: String,
        expected: i128,
        found: u64,
    },
    #[error("sample at {ts_us}us is after exec_end_us {exec_end_us}")]
    SampleAfterExecEnd { ts_us: u64, exec_end_us: u64 },
    #[error("sample at {ts_us}us marked {phase} but handler entry is at {init_end_us}us")]
    PhaseMismatch {
        ts_us: u64,
        phase: &'static str,
        init_end_us: u64,
    },
}

fn invalid(position: usize, kind: ValidationErrorKind) -> ValidationError {
    ValidationError { position, kind }
}

/// Assembles one invocation from its records and checks every invariant,
/// including the self/cumulative nesting identity across the import set.
pub fn validate_trace(
    records: impl IntoIterator<Item = TraceRecord>,
) -> std::result::Result<InvocationTrace, ValidationError> {
    let mut meta: Option<InvocationMeta> = None;
    let mut imports: Vec<(usize, ImportRecord)> = Vec::new();
    let mut samples: Vec<(usize, SampleRecord)> = Vec::new();

    for (idx, record) in records.into_iter().enumerate() {
        let pos = idx + 1;
        if let Err(msg) = record.check() {
            return Err(invalid(pos, ValidationErrorKind::Invariant(msg)));
        }
        match record {
            TraceRecord::Meta(m) => {
                if meta.is_some() {
                    return Err(invalid(pos, ValidationErrorKind::DuplicateMeta));
                }
                meta = Some(m);
            }
            TraceRecord::Import(i) => imports.push((pos, i)),
            TraceRecord::Sample(s) => samples.push((pos, s)),
        }
    }
    let meta = meta.ok_or(invalid(0, ValidationErrorKind::MissingMeta))?;

    imports.sort_by_key(|(_, i)| i.order);
    let mut seen_modules: HashMap<&str, u64> = HashMap::new();
    let mut seen_orders = HashSet::new();
    for (pos, imp) in &imports {
        if !seen_orders.insert(imp.order) {
            return Err(invalid(*pos, ValidationErrorKind::DuplicateOrder(imp.order)));
        }
        if seen_modules.contains_key(imp.module_name.as_str()) {
            return Err(invalid(
                *pos,
                ValidationErrorKind::DuplicateModule(imp.module_name.clone()),
            ));
        }
        if !imp.parent_module.is_empty() && !seen_modules.contains_key(imp.parent_module.as_str()) {
            return Err(invalid(
                *pos,
                ValidationErrorKind::UnknownParent {
                    module: imp.module_name.clone(),
                    parent: imp.parent_module.clone(),
                },
            ));
        }
        seen_modules.insert(&imp.module_name, imp.order);
    }

    let mut nested_cum: HashMap<&str, u64> = HashMap::new();
    for (_, imp) in &imports {
        if !imp.parent_module.is_empty() {
            *nested_cum.entry(imp.parent_module.as_str()).or_default() += imp.t_cumulative_us;
        }
    }
    for (pos, imp) in &imports {
        let children = nested_cum.get(imp.module_name.as_str()).copied().unwrap_or(0);
        let expected = i128::from(imp.t_cumulative_us) - i128::from(children);
        if expected != i128::from(imp.t_self_us) {
            return Err(invalid(
                *pos,
                ValidationErrorKind::NestingIdentity {
                    module: imp.module_name.clone(),
                    expected,
                    found: imp.t_self_us,
                },
            ));
        }
    }

    samples.sort_by_key(|(_, s)| s.timestamp_us);
    for (pos, s) in &samples {
        if s.timestamp_us > meta.exec_end_us {
            return Err(invalid(
                *pos,
                ValidationErrorKind::SampleAfterExecEnd {
                    ts_us: s.timestamp_us,
                    exec_end_us: meta.exec_end_us,
                },
            ));
        }
        let expected = if s.timestamp_us < meta.init_end_us {
            Phase::Init
        } else {
            Phase::Exec
        };
        if s.phase != expected {
            return Err(invalid(
                *pos,
                ValidationErrorKind::PhaseMismatch {
                    ts_us: s.timestamp_us,
                    phase: s.phase.as_str(),
                    init_end_us: meta.init_end_us,
                },
            ));
        }
    }

    Ok(InvocationTrace {
        meta,
        imports: imports.into_iter().map(|(_, i)| i).collect(),
        samples: samples.into_iter().map(|(_, s)| s).collect(),
    })
}

/// Serializes a whole invocation in file order, one record per line.
pub fn encode_trace(trace: &InvocationTrace) -> std::result::Result<String, WireError> {
    let mut out = String::new();
    for record in trace.records() {
        out.push_str(&encode_record(&record)?);
        out.push('\n');
    }
    Ok(out)
}

/// Parses and validates the text of one trace file. Blank lines are skipped.
pub fn parse_trace(text: &str) -> Result<InvocationTrace> {
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = decode_record(line).map_err(|e| match e {
            WireError::Parse { offset, message } => WireError::Parse {
                offset,
                message: format!("line {}: {message}", idx + 1),
            },
            WireError::Schema { field, problem } => WireError::Schema {
                field,
                problem: format!("{problem} (line {})", idx + 1),
            },
            other => other,
        })?;
        records.push(record);
    }
    Ok(validate_trace(records)?)
}

pub fn read_trace(path: &Path) -> Result<InvocationTrace> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_trace(&text).map_err(|e| Error::TraceFile {
        path: path.to_path_buf(),
        source: Box::new(e),
    })
}

/// Writes `<invocation_id>.trace` into `dir`. A partially written file is removed.
pub fn write_trace(dir: &Path, trace: &InvocationTrace) -> Result<PathBuf> {
    let text = encode_trace(trace)?;
    let path = dir.join(trace.file_name());
    let io_err = |source| Error::Io {
        path: path.clone(),
        source,
    };
    let mut file = fs::File::create(&path).map_err(io_err)?;
    if let Err(e) = file.write_all(text.as_bytes()).and_then(|_| file.sync_all()) {
        drop(file);
        let _ = fs::remove_file(&path);
        return Err(io_err(e));
    }
    Ok(path)
}

/// Trace files in `dir`, sorted by name.
pub fn list_trace_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = entry.path();
        if path.is_file() && path.extension().is_some_and(|ext| ext == TRACE_EXTENSION) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

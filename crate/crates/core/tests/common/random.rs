//! Seeded random inputs for property checks.

use std::collections::BTreeMap;

use coldprof::trace_model::{
    CallPath, Frame, ImportRecord, InvocationMeta, InvocationTrace, Phase, SampleRecord, TraceRecord, MAX_DEPTH,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{APP_DIR, LIB_DIR, STDLIB_DIR};

const ALPHABET: &[char] = &['a', 'b', 'z', '_', '.', '/', '-', '"', '\\', 'é', '雪', ' ', '\t', '0', '9', '\u{1F600}'];

pub fn text(rng: &mut ChaCha8Rng, min_len: usize) -> String {
    let len = rng.gen_range(min_len..min_len + 12);
    (0..len).map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())]).collect()
}

fn big(rng: &mut ChaCha8Rng) -> u64 {
    match rng.gen_range(0..4) {
        0 => rng.gen_range(0..10),
        1 => rng.gen(),
        _ => rng.gen_range(0..10_000_000),
    }
}

pub fn frame(rng: &mut ChaCha8Rng) -> Frame {
    Frame::new(text(rng, 1), rng.gen_range(1..=u32::MAX), text(rng, 0))
}

pub fn record(rng: &mut ChaCha8Rng) -> TraceRecord {
    match rng.gen_range(0..3) {
        0 => {
            let init_end = rng.gen_range(1..u64::MAX / 2);
            TraceRecord::Meta(InvocationMeta {
                invocation_id: text(rng, 1),
                app_id: text(rng, 0),
                code_manifest_hash: text(rng, 0),
                sample_period_us: rng.gen_range(1..u64::MAX),
                init_end_us: init_end,
                exec_end_us: init_end + big(rng) % (u64::MAX / 2),
                agent_version: text(rng, 0),
                dropped_samples: if rng.gen_bool(0.5) { 0 } else { big(rng) },
            })
        }
        1 => {
            let cum = big(rng);
            TraceRecord::Import(ImportRecord {
                module_name: text(rng, 1),
                file_path: text(rng, 0),
                parent_module: text(rng, 0),
                t_cumulative_us: cum,
                t_self_us: if cum == 0 { 0 } else { rng.gen_range(0..=cum) },
                order: big(rng),
            })
        }
        _ => {
            let depth = if rng.gen_bool(0.02) { MAX_DEPTH } else { rng.gen_range(1..8) };
            TraceRecord::Sample(SampleRecord {
                timestamp_us: big(rng),
                call_path: CallPath::new((0..depth).map(|_| frame(rng)).collect()),
                phase: if rng.gen_bool(0.5) { Phase::Init } else { Phase::Exec },
            })
        }
    }
}

#[derive(Debug, Clone)]
struct RandModule {
    name: String,
    file: String,
    importer: Option<usize>,
}

/// Random import forests over a fixed module set, with independent self
/// times per invocation. Includes app and stdlib modules.
pub fn import_traces(rng: &mut ChaCha8Rng, invocations: usize) -> Vec<InvocationTrace> {
    let mut modules = vec![RandModule {
        name: "handler".into(),
        file: format!("{APP_DIR}/handler.py"),
        importer: None,
    }];
    modules.push(RandModule {
        name: "helpers".into(),
        file: format!("{APP_DIR}/helpers.py"),
        importer: Some(0),
    });
    modules.push(RandModule {
        name: "json".into(),
        file: format!("{STDLIB_DIR}/json/__init__.py"),
        importer: Some(rng.gen_range(0..2)),
    });
    for lib in 0..rng.gen_range(1..7) {
        let root = modules.len();
        let importer = rng.gen_range(0..root);
        modules.push(RandModule {
            name: format!("lib{lib}"),
            file: format!("{LIB_DIR}/lib{lib}/__init__.py"),
            importer: Some(importer),
        });
        let mut packages = vec![root];
        for p in 0..rng.gen_range(0..6) {
            let parent = packages[rng.gen_range(0..packages.len())];
            let name = format!("{}.p{p}", modules[parent].name);
            let file = format!("{LIB_DIR}/{}/__init__.py", name.replace('.', "/"));
            // Usually imported by the enclosing package, sometimes by any earlier module.
            let importer = if rng.gen_bool(0.8) { parent } else { rng.gen_range(0..modules.len()) };
            packages.push(modules.len());
            modules.push(RandModule {
                name,
                file,
                importer: Some(importer),
            });
        }
    }

    (0..invocations)
        .map(|k| {
            let self_us: Vec<u64> = modules.iter().map(|_| rng.gen_range(1..500_000)).collect();
            let mut cum = self_us.clone();
            for i in (0..modules.len()).rev() {
                if let Some(p) = modules[i].importer {
                    cum[p] += cum[i];
                }
            }
            let imports = modules
                .iter()
                .enumerate()
                .map(|(i, m)| ImportRecord {
                    module_name: m.name.clone(),
                    file_path: m.file.clone(),
                    parent_module: m.importer.map(|p| modules[p].name.clone()).unwrap_or_default(),
                    t_cumulative_us: cum[i],
                    t_self_us: self_us[i],
                    order: i as u64 + 1,
                })
                .collect();
            InvocationTrace {
                meta: InvocationMeta {
                    invocation_id: format!("inv-{k}"),
                    app_id: "random".into(),
                    code_manifest_hash: "m".into(),
                    sample_period_us: 10_000,
                    init_end_us: cum[0] + 1,
                    exec_end_us: cum[0] + 1_000_000,
                    agent_version: "0".into(),
                    dropped_samples: 0,
                },
                imports,
                samples: Vec::new(),
            }
        })
        .collect()
}

/// Independent oracle for total library initialization: per library
/// module, the rounded mean of its self times; then a flat sum.
pub fn flat_library_sum(traces: &[InvocationTrace]) -> u64 {
    let mut per_module: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for t in traces {
        for i in &t.imports {
            if i.file_path.starts_with(LIB_DIR) {
                let e = per_module.entry(&i.module_name).or_default();
                e.0 += i.t_self_us;
                e.1 += 1;
            }
        }
    }
    per_module.values().map(|(sum, n)| (sum + n / 2) / n).sum()
}

/// Random multiset of call paths drawn from a small frame pool, so that
/// prefixes are shared.
pub fn path_multiset(rng: &mut ChaCha8Rng) -> Vec<(CallPath, Phase)> {
    let pool: Vec<Frame> = (0..rng.gen_range(2..10))
        .map(|i| Frame::new(format!("{LIB_DIR}/m{}/f{i}.py", i % 3), rng.gen_range(1..5), format!("fn{}", i % 4)))
        .collect();
    (0..rng.gen_range(0..200))
        .map(|_| {
            let depth = rng.gen_range(1..7);
            let frames = (0..depth).map(|_| pool[rng.gen_range(0..pool.len())].clone()).collect();
            let phase = if rng.gen_bool(0.3) { Phase::Init } else { Phase::Exec };
            (CallPath::new(frames), phase)
        })
        .collect()
}
